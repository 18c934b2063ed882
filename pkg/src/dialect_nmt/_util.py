"""Small shared helpers: seeded random sub-streams and atomic file writes."""

from __future__ import annotations

import os
import tempfile
import zlib
from pathlib import Path

import numpy as np


def substream(seed: int, name: str, *counters: int) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream name, counters...).

    The same key always yields the same stream, so a run can be resumed at
    any epoch without replaying earlier draws.
    """
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    key.extend(int(c) for c in counters)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path: str | os.PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))
