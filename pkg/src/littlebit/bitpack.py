"""Bit-packed {-1,+1} factor storage and sign-select GEMV kernels.

A :class:`BinaryFactor` packs each row of a sign matrix into 64-bit words,
LSB-first, bit=1 encoding +1 and bit=0 encoding -1; pad bits beyond the
logical column count are zero.

Two kernel backends implement the same contract:

* ``compiled`` - the Cython extension ``littlebit._kernels`` streaming the
  packed words directly (the fast path).
* ``fallback`` - pure NumPy, multiplying against a lazily-unpacked dense
  +/-1 float64 matrix cached on the factor.

The backend is selected once at import: the extension when it is built,
otherwise the fallback. Set ``LITTLEBIT_FORCE_FALLBACK=1`` to force the
NumPy path (used by the backend-comparison benchmark and tests).
"""

from __future__ import annotations

import os

import numpy as np

try:
    from . import _kernels as _ext
except ImportError:
    _ext = None

if os.environ.get("LITTLEBIT_FORCE_FALLBACK") == "1":
    _ext = None

WORD_BITS = 64


def kernel_backend() -> str:
    """Name of the active GEMV backend: 'compiled' or 'fallback'."""
    return "compiled" if _ext is not None else "fallback"


def words_per_row(cols: int) -> int:
    return (cols + WORD_BITS - 1) // WORD_BITS


class BinaryFactor:
    """Immutable packed sign matrix of shape (rows, cols)."""

    __slots__ = ("rows", "cols", "words", "_dense")

    def __init__(self, rows: int, cols: int, words: np.ndarray):
        wpr = words_per_row(cols)
        if words.dtype != np.uint64 or words.shape != (rows, wpr):
            raise ValueError(
                f"words must be uint64 of shape ({rows}, {wpr}), "
                f"got {words.dtype} {words.shape}")
        if cols % WORD_BITS and rows:
            pad_mask = ~np.uint64((1 << (cols % WORD_BITS)) - 1)
            if np.any(words[:, -1] & pad_mask):
                raise ValueError("pad bits beyond cols must be zero")
        self.rows = rows
        self.cols = cols
        self.words = np.ascontiguousarray(words)
        self.words.setflags(write=False)
        self._dense = None

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def dense(self) -> np.ndarray:
        """Unpacked +/-1 float64 view, cached (backs the fallback kernels)."""
        if self._dense is None:
            self._dense = unpack(self)
            self._dense.setflags(write=False)
        return self._dense

    def transpose(self) -> "BinaryFactor":
        return pack(self.dense().T)


def pack(signs) -> BinaryFactor:
    """Pack a matrix whose entries are exactly +1 or -1."""
    signs = np.ascontiguousarray(signs, dtype=np.float64)
    if signs.ndim != 2:
        raise ValueError("sign matrix must be 2-D")
    if not np.all(np.abs(signs) == 1.0):
        raise ValueError("entries must be exactly +1 or -1")
    rows, cols = signs.shape
    wpr = words_per_row(cols)
    bits = np.zeros((rows, wpr * WORD_BITS), dtype=np.uint8)
    bits[:, :cols] = signs > 0
    packed = np.packbits(bits, axis=1, bitorder="little")
    words = packed.view("<u8").astype(np.uint64).reshape(rows, wpr)
    return BinaryFactor(rows, cols, words)


def unpack(f: BinaryFactor) -> np.ndarray:
    """Inverse of :func:`pack`: dense +/-1 float64 matrix."""
    raw = f.words.astype("<u8").reshape(f.rows, -1).view(np.uint8)
    bits = np.unpackbits(raw, axis=1, bitorder="little")[:, :f.cols]
    return 2.0 * bits.astype(np.float64) - 1.0


def _check_vec(v, length: int, name: str) -> np.ndarray:
    v = np.ascontiguousarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != length:
        raise ValueError(f"{name} must be a vector of length {length}, "
                         f"got shape {v.shape}")
    return v


def gemv_right(x, f: BinaryFactor) -> np.ndarray:
    """y_j = sum_i x_i * sign_ij; x has length f.rows, y has length f.cols."""
    x = _check_vec(x, f.rows, "x")
    if _ext is not None:
        return _ext.gemv_right(x, f.words, f.cols)
    return _gemv_right_py(x, f)


def gemv_left(z, f: BinaryFactor) -> np.ndarray:
    """y_i = sum_j z_j * sign_ij; z has length f.cols, y has length f.rows."""
    z = _check_vec(z, f.cols, "z")
    if _ext is not None:
        return _ext.gemv_left(z, f.words, f.cols)
    return _gemv_left_py(z, f)


def _gemv_right_py(x: np.ndarray, f: BinaryFactor) -> np.ndarray:
    return x @ f.dense()


def _gemv_left_py(z: np.ndarray, f: BinaryFactor) -> np.ndarray:
    return f.dense() @ z


def compiled_kernels():
    """(gemv_right, gemv_left) raw compiled entry points, or None if the
    extension is not built. Used by the backend-comparison benchmark."""
    if _ext is None:
        return None
    return (lambda x, f: _ext.gemv_right(np.ascontiguousarray(x, np.float64), f.words, f.cols),
            lambda z, f: _ext.gemv_left(np.ascontiguousarray(z, np.float64), f.words, f.cols))


def fallback_kernels():
    """(gemv_right, gemv_left) pure-NumPy entry points (always available)."""
    return _gemv_right_py, _gemv_left_py
