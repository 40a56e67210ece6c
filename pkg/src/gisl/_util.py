"""Small shared helpers: ordering, seeding, atomic file output."""

import hashlib
import json
import os
import re
import tempfile
import zlib

import numpy as np

_DIGITS = re.compile(r"(\d+)")


def natural_key(name):
    """Sort key that orders ``X2`` before ``X10``."""
    parts = _DIGITS.split(str(name))
    return tuple((0, int(p)) if p.isdigit() else (1, p) for p in parts if p != "")


def sorted_names(names):
    return sorted(names, key=natural_key)


def canonical_pair(a, b):
    """Unordered pair as a tuple in natural order."""
    if a == b:
        raise ValueError(f"pair endpoints must differ, got {a!r} twice")
    return (a, b) if natural_key(a) <= natural_key(b) else (b, a)


def stable_hash(*parts):
    """32-bit hash of ``repr(parts)`` that does not depend on PYTHONHASHSEED."""
    return zlib.crc32(repr(parts).encode("utf-8"))


def derive_rng(seed, *key):
    """Independent generator for ``(seed, key)``; scheduling-order free."""
    spawn_key = tuple(stable_hash(k) if not isinstance(k, int) else k for k in key)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key))


def atomic_write_text(path, text):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
