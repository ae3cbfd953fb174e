"""
Optional SQLite registry of runs
"""

from .database import RunRegistry
from .models import Artifact, EpochRecord, Run

__all__ = [
    'RunRegistry',
    'Run',
    'EpochRecord',
    'Artifact',
]
