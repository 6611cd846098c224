"""Deterministic persistence: CSV tables, JSON reports, binary field snapshots.

Every writer here is byte-reproducible: floats are serialized with ``repr``
(shortest round-trip form), JSON keys are sorted, and newlines are fixed to
``\\n``.  The one intentionally volatile field, the report timestamp, is
isolated to a single JSON key so reports can be compared byte-for-byte after
dropping that key.
"""

from __future__ import annotations

import hashlib
import json
import struct
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "format_cell",
    "write_csv",
    "canonical_json",
    "config_hash",
    "write_report",
    "read_report",
    "write_snapshots",
    "read_snapshots",
    "SNAPSHOT_MAGIC",
]

SNAPSHOT_MAGIC = b"WFL1"
SNAPSHOT_VERSION = 1
TIMESTAMP_KEY = "written_at"


def format_cell(value: object) -> str:
    """Render one CSV cell deterministically.

    Floats use ``repr`` so that parsing the cell back recovers the exact
    binary value; everything else falls back to ``str``.
    """
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: str | Path, header: Sequence[str],
              rows: Iterable[Sequence[object]]) -> Path:
    """Write a CSV file with reproducible bytes and return its path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    for row in rows:
        cells = [format_cell(v) for v in row]
        if len(cells) != len(header):
            raise ValueError(
                f"row has {len(cells)} cells but header has {len(header)}")
        lines.append(",".join(cells))
    path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    return path


def _jsonable(value: object) -> object:
    """Recursively convert numpy scalars/arrays so json can serialize them."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if not np.isfinite(value):
            # JSON has no NaN/inf; keep reports parseable everywhere.
            return repr(value)
        return value
    if isinstance(value, np.integer):
        return int(value)
    return value


def canonical_json(payload: dict) -> str:
    """Serialize a payload with sorted keys and stable float formatting."""
    return json.dumps(_jsonable(payload), sort_keys=True, indent=2)


def config_hash(payload: dict) -> str:
    """SHA-256 hex digest of the canonical JSON form of a configuration."""
    compact = json.dumps(_jsonable(payload), sort_keys=True,
                         separators=(",", ":"))
    return hashlib.sha256(compact.encode("utf-8")).hexdigest()


def write_report(path: str | Path, payload: dict,
                 timestamp: bool = True) -> Path:
    """Write a JSON report; the timestamp is confined to one top-level key."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = dict(payload)
    if timestamp:
        body[TIMESTAMP_KEY] = datetime.now(timezone.utc).isoformat()
    path.write_text(canonical_json(body) + "\n", encoding="utf-8")
    return path


def read_report(path: str | Path, drop_timestamp: bool = True) -> dict:
    """Load a JSON report, optionally removing the volatile timestamp key."""
    body = json.loads(Path(path).read_text(encoding="utf-8"))
    if drop_timestamp:
        body.pop(TIMESTAMP_KEY, None)
    return body


def write_snapshots(path: str | Path, times: np.ndarray, frames: np.ndarray,
                    L: float) -> Path:
    """Write field snapshots in the WFL1 binary layout.

    Layout (little-endian): magic ``WFL1``, u32 version, u32 n_grid,
    u32 n_frames, f64 domain half-length, f64 final time, then the frame
    times as f64[n_frames], then the frames as row-major f64[n_frames, n_grid].
    """
    times = np.asarray(times, float)
    frames = np.asarray(frames, float)
    if frames.ndim != 2 or len(times) != frames.shape[0]:
        raise ValueError(
            f"frames must be (n_frames, n_grid) matching {len(times)} times, "
            f"got shape {frames.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_frames, n_grid = frames.shape
    header = SNAPSHOT_MAGIC + struct.pack(
        "<IIIdd", SNAPSHOT_VERSION, n_grid, n_frames, float(L),
        float(times[-1]) if n_frames else 0.0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(times.astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(frames, dtype="<f8").tobytes())
    return path


def read_snapshots(path: str | Path) -> tuple[np.ndarray, np.ndarray, float]:
    """Read a WFL1 snapshot file back as (times, frames, domain half-length)."""
    raw = Path(path).read_bytes()
    if raw[:4] != SNAPSHOT_MAGIC:
        raise ValueError(f"not a WFL1 snapshot file: magic {raw[:4]!r}")
    version, n_grid, n_frames, L, _T = struct.unpack("<IIIdd", raw[4:32])
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    body = np.frombuffer(raw[32:], dtype="<f8")
    expected = n_frames * (1 + n_grid)
    if len(body) != expected:
        raise ValueError(
            f"snapshot payload has {len(body)} doubles, expected {expected}")
    times = body[:n_frames].copy()
    frames = body[n_frames:].reshape(n_frames, n_grid).copy()
    return times, frames, L
