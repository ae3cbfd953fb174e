#!/usr/bin/env python3
"""
List Runs - print the run registry of an output directory

Usage: python scripts/list_runs.py OUT_DIR [COMMAND]
"""

import sys
from pathlib import Path

# Add src to path
sys.path.append(str(Path(__file__).parent.parent))

from rich.console import Console
from rich.table import Table

from src.database import RunRegistry
from src.database.config import REGISTRY_FILENAME


def main():
    """List registered runs"""
    if len(sys.argv) < 2:
        print(__doc__)
        return 2
    out_dir = Path(sys.argv[1])
    if not (out_dir / REGISTRY_FILENAME).exists():
        print(f"No registry in {out_dir}")
        return 1

    registry = RunRegistry(out_dir)
    try:
        runs = registry.list_runs(sys.argv[2] if len(sys.argv) > 2 else None)
    finally:
        registry.close()

    table = Table(title=f"Runs in {out_dir}")
    for column in ('id', 'command', 'seed', 'status', 'exit code', 'epochs', 'artifacts'):
        table.add_column(column)
    for run in runs:
        table.add_row(str(run['id']), run['command'], str(run['seed']), run['status'],
                      str(run['exit_code']), str(run['epochs']), str(len(run['artifacts'])))
    Console().print(table)
    return 0


if __name__ == "__main__":
    sys.exit(main())
