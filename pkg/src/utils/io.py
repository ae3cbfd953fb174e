"""
Artifact writers

CSV files start with a schema comment line `# sphevar-schema v1 <command>`,
use "\n" line endings and repr() floats so reruns are byte-identical. Every
write goes to a temporary file in the target directory and is moved into
place with os.replace.
"""

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from src.utils.log_manager import log_manager

SCHEMA_VERSION = 1
SCHEMA_PREFIX = "# sphevar-schema"


def schema_line(command: str) -> str:
    return f"{SCHEMA_PREFIX} v{SCHEMA_VERSION} {command}"


def atomic_write_text(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    log_manager.log_audit("wrote artifact", path=str(path), sha256=sha256_file(path))
    return path


def _plain(value: Any) -> Any:
    """JSON-safe version of numpy scalars and arrays"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return _float_or_none(float(value))
    if isinstance(value, float):
        return _float_or_none(value)
    if isinstance(value, Path):
        return value.as_posix()
    if hasattr(value, "value") and hasattr(type(value), "__members__"):
        return value.value
    return value


def _float_or_none(value: float) -> Optional[float]:
    # JSON has no NaN; non-finite numbers are written as null
    return value if np.isfinite(value) else None


def to_json(data: Any) -> str:
    return json.dumps(_plain(data), indent=2, sort_keys=True) + "\n"


def write_json(path: Path, data: Any) -> Path:
    return atomic_write_text(path, to_json(data))


def read_json(path: Path) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if hasattr(value, "value") and hasattr(type(value), "__members__"):
        return str(value.value)
    return str(value)


def csv_text(command: str, rows: Sequence[Dict[str, Any]], fieldnames: Optional[List[str]] = None) -> str:
    if fieldnames is None:
        fieldnames = []
        for row in rows:
            fieldnames.extend(k for k in row if k not in fieldnames)
    buffer = io.StringIO()
    buffer.write(schema_line(command) + "\n")
    writer = csv.DictWriter(buffer, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: format_cell(row.get(k)) for k in fieldnames})
    return buffer.getvalue()


def write_csv(path: Path, command: str, rows: Iterable[Dict[str, Any]],
              fieldnames: Optional[List[str]] = None) -> Path:
    return atomic_write_text(path, csv_text(command, list(rows), fieldnames))


def read_csv(path: Path) -> List[Dict[str, str]]:
    """Rows of a schema-tagged CSV (the comment line is skipped)"""
    with open(path, "r", encoding="utf-8", newline="") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.DictReader(lines))


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
