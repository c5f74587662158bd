"""Utility / helper functions used across the laboratory."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Tuple

import numpy as np


# ---------------------------------------------------------------------------
# Atomic file output
# ---------------------------------------------------------------------------

def atomic_write_bytes(path: Path, data: bytes) -> Path:
    """Write *data* to *path* via a temp file in the same directory + rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(data)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def atomic_write_text(path: Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write a CSV with LF line endings, atomically."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return atomic_write_text(path, buffer.getvalue())


def write_json(path: Path, payload: Any) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Formatting
# ---------------------------------------------------------------------------

def fmt_float(value: float, digits: int = 6) -> str:
    """Fixed-precision float formatting for stable CSV output."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "nan"
    return f"{value:.{digits}f}"


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and population standard deviation; (nan, nan) when empty."""
    if len(values) == 0:
        return float("nan"), float("nan")
    array = np.asarray(values, dtype=np.float64)
    return float(array.mean()), float(array.std())


# ---------------------------------------------------------------------------
# Stable hashing
# ---------------------------------------------------------------------------

def stable_hash64(*parts: Any) -> int:
    """64-bit hash of *parts* that does not depend on PYTHONHASHSEED."""
    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


# ---------------------------------------------------------------------------
# Option parsing
# ---------------------------------------------------------------------------

def parse_float_list(raw: str) -> List[float]:
    """Parse a comma-separated list such as ``"0.01,0.1"``."""
    return [float(part) for part in raw.split(",") if part.strip()]


def parse_int_list(raw: str) -> List[int]:
    return [int(part) for part in raw.split(",") if part.strip()]
