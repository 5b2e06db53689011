"""Optional binary cache for space bases, keyed by a version stamp.

Activated by the EXSEQ_CACHE_DIR environment variable; entries from other
package versions are ignored.
"""

import os

import numpy as np

from . import __version__

_memory = {}


def _disk_path(key):
    root = os.environ.get("EXSEQ_CACHE_DIR")
    if not root:
        return None
    safe = key.replace("/", "_").replace(" ", "")
    return os.path.join(root, f"exseq-{__version__}-{safe}.npz")


def get(key):
    if key in _memory:
        return _memory[key]
    path = _disk_path(key)
    if path and os.path.exists(path):
        with np.load(path) as data:
            arrs = {k: data[k] for k in data.files}
        _memory[key] = arrs
        return arrs
    return None


def put(key, arrays):
    _memory[key] = arrays
    path = _disk_path(key)
    if path:
        os.makedirs(os.path.dirname(path), exist_ok=True)
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)


def clear_memory():
    _memory.clear()
