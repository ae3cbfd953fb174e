#!/usr/bin/env python3
"""
Run Acceptance - every experiment at full size with the bundled presets

Usage: python scripts/run_acceptance.py [OUT_DIR]
"""

import sys
from pathlib import Path

# Add src to path
sys.path.append(str(Path(__file__).parent.parent))

from rich.console import Console
from rich.table import Table

from main import main as sphevar

PRESETS = Path(__file__).parent.parent / 'config' / 'presets'

STAGES = [
    ('theory', ['theory', '--config', str(PRESETS / 'theory.yaml')]),
    ('sweep-obs-noise', ['student-teacher', '--config', str(PRESETS / 'student_teacher_obs_noise.yaml'),
                         '--workers', '4']),
    ('sweep-dim', ['student-teacher', '--config', str(PRESETS / 'student_teacher_dim.yaml'), '--workers', '4']),
    ('sweep-n-samples', ['student-teacher', '--config', str(PRESETS / 'student_teacher_n_samples.yaml'),
                         '--workers', '4']),
    ('calibration', ['train', '--config', str(PRESETS / 'train_compare.yaml')]),
]


def main():
    """Run all stages; landscape probes reuse the calibration checkpoint"""
    console = Console()
    out_root = Path(sys.argv[1] if len(sys.argv) > 1 else "runs/acceptance")

    stages = list(STAGES)
    checkpoint = out_root / 'calibration' / 'checkpoint.json'
    for mode in ('2d', '1d'):
        stages.append((f'landscape-{mode}', ['landscape', '--config', str(PRESETS / 'landscape.yaml'),
                                             '--checkpoint', str(checkpoint), '--mode', mode]))

    results = []
    for name, argv in stages:
        console.print(f"[bold]==> {name}[/bold]")
        code = sphevar(argv + ['--out', str(out_root / name), '--registry'])
        results.append((name, code))

    table = Table(title='Acceptance runs')
    table.add_column('Stage', style='cyan')
    table.add_column('Exit code')
    for name, code in results:
        table.add_row(name, f"[green]{code}[/green]" if code == 0 else f"[red]{code}[/red]")
    console.print(table)
    return max(code for _, code in results)


if __name__ == "__main__":
    sys.exit(main())
