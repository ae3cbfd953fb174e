"""
Database configuration for the run registry
"""

from pathlib import Path

REGISTRY_FILENAME = "registry.sqlite"

# Database settings
DATABASE_CONFIG = {
    "echo": False,  # SQL queries logging
    "pool_pre_ping": True,
}


def database_url(out_dir: Path) -> str:
    return f"sqlite:///{Path(out_dir) / REGISTRY_FILENAME}"
