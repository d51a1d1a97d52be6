"""Result serialization: CSV tables and run manifests.

Floats are written with ``repr``, the shortest decimal string that parses
back to the same double, so files are locale independent and re-runs with
the same inputs are byte identical.
"""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ._version import FORMAT_VERSION, __version__
from .exceptions import ParseError

__all__ = ["format_value", "write_csv", "read_csv", "read_numeric_csv", "file_digest", "RunManifest", "write_manifest", "load_manifest"]

MANIFEST_NAME = "manifest.json"


def format_value(v) -> str:
    """Locale-independent text for one CSV cell."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """Write ``rows`` under ``header`` with ``\\n`` line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row has {len(row)} cells, header has {len(header)}")
            w.writerow([format_value(v) for v in row])
    return path


def read_csv(path) -> list:
    """Rows of ``path`` as dicts of strings."""
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def read_numeric_csv(path):
    """Numeric table with an optional header row.

    Returns ``(header, X)`` where ``header`` is ``None`` when the first row
    is numeric.  Non-numeric cells and ragged rows raise :class:`ParseError`
    naming the 1-based row and column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        raise ParseError(f"{path}: no data rows")
    header = None
    first = rows[0]
    if not all(_is_number(c) for c in first):
        header, rows, start = [c.strip() for c in first], rows[1:], 2
    else:
        start = 1
    if not rows:
        raise ParseError(f"{path}: header but no data rows")
    width = len(header) if header is not None else len(rows[0])
    X = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"{path}: row {i + start} has {len(row)} columns, expected {width}")
        for j, cell in enumerate(row):
            try:
                X[i, j] = float(cell)
            except ValueError:
                raise ParseError(f"{path}: row {i + start}, column {j + 1}: {cell!r} is not a number") from None
    if not np.all(np.isfinite(X)):
        i, j = np.argwhere(~np.isfinite(X))[0]
        raise ParseError(f"{path}: row {i + start}, column {j + 1}: non-finite value")
    return header, X


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """Record of one command invocation and the files it produced.

    ``outputs`` maps paths relative to the output directory to sha256
    digests.  :meth:`digests` omits the timestamps so two runs can be
    compared directly.
    """

    command: str
    config: dict
    seed: Optional[int]
    version: str = __version__
    format_version: str = FORMAT_VERSION
    started: str = field(default_factory=_now)
    finished: Optional[str] = None
    outputs: dict = field(default_factory=dict)

    def record(self, out_dir, paths: Iterable) -> None:
        out_dir = Path(out_dir)
        for p in paths:
            p = Path(p)
            self.outputs[p.relative_to(out_dir).as_posix()] = file_digest(p)
        self.outputs = dict(sorted(self.outputs.items()))

    def digests(self) -> dict:
        return {"command": self.command, "config": self.config, "seed": self.seed, "outputs": dict(self.outputs)}

    def to_dict(self) -> dict:
        return asdict(self)


def write_manifest(out_dir, manifest: RunManifest) -> Path:
    manifest.finished = _now()
    path = Path(out_dir) / MANIFEST_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(manifest.to_dict(), indent=2, sort_keys=True, default=_json_default)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def load_manifest(path) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    data = json.loads(path.read_text(encoding="utf-8"))
    return RunManifest(**data)


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (Path, os.PathLike)):
        return os.fspath(obj)
    if isinstance(obj, (tuple, set)):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
