"""
Command-line layer: option resolution and subcommand handlers
"""

from .commands import EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_TOLERANCE, run_command

__all__ = [
    'run_command',
    'EXIT_OK',
    'EXIT_CONFIG',
    'EXIT_TOLERANCE',
    'EXIT_IO',
    'EXIT_NUMERICAL',
]
