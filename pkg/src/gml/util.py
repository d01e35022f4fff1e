"""Small shared utilities: seeded RNG streams, atomic writes, canonical JSON."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np


def child_rng(*keys) -> np.random.Generator:
    """Independent PCG64 stream derived from a tuple of integers/strings.

    String keys are folded to integers so streams like ("shuffle", fold,
    epoch) stay decoupled from ("augment", fold, epoch) under one base seed.
    """
    ints = []
    for k in keys:
        if isinstance(k, str):
            ints.append(int.from_bytes(k.encode("utf-8"), "little") % (2**63))
        elif isinstance(k, (int, np.integer)):
            ints.append(int(k) % (2**63))
        else:
            raise TypeError(f"rng key must be int or str, got {type(k)!r}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(ints)))


def canonical_json(obj) -> str:
    """Stable JSON text: sorted keys, no whitespace, round-trip floats."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def atomic_write_bytes(path, data: bytes) -> None:
    """Write-temp-then-rename so readers never observe partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def fmt_float(x) -> str:
    """Shortest decimal string that round-trips the float64 exactly."""
    return repr(float(x))
