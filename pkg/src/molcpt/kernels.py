"""Kernel dispatch.

The compiled ``_kernels`` extension is used when it imports; otherwise the
numpy fallback in ``_kernels_py`` is used. Setting ``MOLCPT_PURE_PYTHON=1``
forces the fallback.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled  # type: ignore[attr-defined]
except ImportError:
    _compiled = None

AVAILABLE = {"python": _kernels_py, **({"cython": _compiled} if _compiled is not None else {})}

if os.environ.get("MOLCPT_PURE_PYTHON", "") not in ("", "0") or _compiled is None:
    _impl, BACKEND = _kernels_py, "python"
else:
    _impl, BACKEND = _compiled, "cython"


def set_backend(name: str) -> None:
    """Switch the active implementation (``"cython"`` or ``"python"``)."""
    global _impl, BACKEND
    if name not in AVAILABLE:
        raise ValueError(f"kernel backend {name!r} is not available; have {sorted(AVAILABLE)}")
    _impl, BACKEND = AVAILABLE[name], name


@contextmanager
def use_backend(name: str):
    previous = BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def _as_rows(src: np.ndarray) -> np.ndarray:
    width = int(np.prod(src.shape[1:], dtype=np.int64))
    return np.ascontiguousarray(src.reshape(src.shape[0], width), dtype=np.float64)


def _as_index(index: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(index, dtype=np.int64)


def scatter_add_rows(src: np.ndarray, index: np.ndarray, n_out: int) -> np.ndarray:
    """out[index[i]] += src[i]; trailing dimensions of ``src`` are preserved."""
    out = _impl.scatter_add_rows(_as_rows(src), _as_index(index), int(n_out))
    return np.asarray(out).reshape((n_out,) + src.shape[1:])


def segment_max(src: np.ndarray, index: np.ndarray, n_out: int) -> np.ndarray:
    """Row-wise maximum per segment; empty segments hold ``-inf``."""
    out = _impl.segment_max(_as_rows(src), _as_index(index), int(n_out))
    return np.asarray(out).reshape((n_out,) + src.shape[1:])


def bridge_mask(n_atoms: int, a, b) -> np.ndarray:
    """Boolean mask over edges ``(a[i], b[i])``: True where the edge is a bridge."""
    return np.asarray(_impl.bridge_mask(int(n_atoms), _as_index(np.asarray(a)), _as_index(np.asarray(b))),
                      dtype=bool)
