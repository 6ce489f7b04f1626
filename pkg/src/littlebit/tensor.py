"""Dense-matrix substrate: validation, RNG, truncated SVD, nonnegative
rank-1 approximation, and the LBM1 raw-matrix file format.

Matrices are plain 2-D float64 C-contiguous ``numpy.ndarray`` objects
throughout the package. All math runs in float64; the LBM1 format stores
float32 on disk and values are widened back to float64 on load.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

LBM1_MAGIC = b"LBM1"
_LBM1_HEADER = struct.Struct("<4sII")


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and convert *a* to a 2-D float64 C-contiguous array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={m.ndim}")
    return m


def require_finite(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


# ---------------------------------------------------------------------------
# Deterministic RNG
# ---------------------------------------------------------------------------

def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic generator; identical seeds yield identical streams."""
    return np.random.default_rng(seed)


def gaussian_matrix(rng: np.random.Generator, rows: int, cols: int,
                    std: float = 1.0) -> np.ndarray:
    """Draw a rows x cols matrix of N(0, std^2) samples from *rng*."""
    if std <= 0:
        raise ValueError("std must be positive")
    return rng.standard_normal((rows, cols)) * std


# ---------------------------------------------------------------------------
# Truncated SVD
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SvdResult:
    """Top-k singular triplets: u (m x k), sigma (k,), v (n x k).

    sigma is non-increasing and nonnegative; u and v have orthonormal
    columns; u @ diag(sigma) @ v.T is the best rank-k approximation.
    """

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    @property
    def rank(self) -> int:
        return self.sigma.shape[0]


def truncated_svd(a, k: int) -> SvdResult:
    """Top-k SVD of a dense matrix with a deterministic sign convention.

    Each (u_i, v_i) pair is flipped so that the entry of largest magnitude
    in u_i is positive, making outputs reproducible across runs.
    """
    a = as_matrix(a)
    require_finite(a)
    if not 1 <= k <= min(a.shape):
        raise ValueError(f"rank k={k} out of range for shape {a.shape}")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    u = u[:, :k].copy()
    s = s[:k].copy()
    v = vt[:k].T.copy()
    for i in range(k):
        j = int(np.argmax(np.abs(u[:, i])))
        if u[j, i] < 0:
            u[:, i] = -u[:, i]
            v[:, i] = -v[:, i]
    return SvdResult(u=u, sigma=s, v=v)


# ---------------------------------------------------------------------------
# Nonnegative rank-1 approximation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Rank1Result:
    """Best rank-1 fit left @ right.T with ||right||_2 = 1; the magnitude is
    carried entirely by *left*. Both factors are nonnegative for
    entrywise-nonnegative input (Perron-Frobenius)."""

    left: np.ndarray
    right: np.ndarray


def rank1_nonneg(a, max_iter: int = 200, tol: float = 1e-12) -> Rank1Result:
    """Dominant singular pair of an entrywise-nonnegative matrix by power
    iteration on the right side.

    Stops when the right iterate moves less than *tol* or after *max_iter*
    rounds. Raises ValueError on all-zero input.
    """
    a = as_matrix(a)
    require_finite(a)
    if np.any(a < 0):
        raise ValueError("rank1_nonneg requires entrywise-nonnegative input")
    if not np.any(a > 0):
        raise ValueError("rank1_nonneg requires at least one positive entry")
    n = a.shape[1]
    v = np.full(n, 1.0 / np.sqrt(n))
    for _ in range(max_iter):
        u = a @ v
        nu = np.linalg.norm(u)
        if nu == 0.0:
            break
        w = a.T @ (u / nu)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            break
        w /= nw
        delta = np.linalg.norm(w - v)
        v = w
        if delta < tol:
            break
    left = a @ v
    return Rank1Result(left=left, right=v)


# ---------------------------------------------------------------------------
# LBM1 file format
# ---------------------------------------------------------------------------
# Little-endian: magic "LBM1", u32 rows, u32 cols, then rows*cols float32
# values row-major. Values are widened to float64 in memory.

def atomic_write(path, data: bytes) -> None:
    """Write *data* to *path* via a temp file and atomic rename, so an
    interrupted writer never leaves a partial file at the target."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def save_matrix(m, path) -> None:
    """Serialize a matrix to an LBM1 file (float32 payload, atomic write)."""
    m = as_matrix(m)
    require_finite(m)
    header = _LBM1_HEADER.pack(LBM1_MAGIC, m.shape[0], m.shape[1])
    payload = m.astype("<f4").tobytes()
    atomic_write(path, header + payload)


def load_matrix(path) -> np.ndarray:
    """Load an LBM1 file, widening float32 values to float64."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _LBM1_HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, rows, cols = _LBM1_HEADER.unpack_from(raw)
    if magic != LBM1_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = _LBM1_HEADER.size + 4 * rows * cols
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload length {len(raw)} != expected {expected}")
    data = np.frombuffer(raw, dtype="<f4", offset=_LBM1_HEADER.size)
    m = data.astype(np.float64).reshape(rows, cols)
    if not np.all(np.isfinite(m)):
        raise FormatError(f"{path}: non-finite entries")
    return m
