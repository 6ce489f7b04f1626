"""Factorized linear layer: scaled-binary paths, the decomposed forward
pass, effective-weight reconstruction, bits-per-weight accounting, and the
LBQ serialization format.

A :class:`QuantPath` holds one factorization {u_sign, v_sign, h, g, ell}
whose implied dense weight is

    diag(h) @ U_sign @ diag(ell) @ V_sign.T @ diag(g)

A :class:`LittleBitLayer` combines a primary path with an optional
residual path of the same shape; their effective weights add.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import bitpack
from .bitpack import BinaryFactor
from .errors import FormatError
from .tensor import as_matrix, atomic_write

LBQ_MAGIC = b"LBQ1"
LBQ_VERSION = 1
_FLAG_RESIDUAL = 0x1
_FLAG_FP16_SCALES = 0x2
_LBQ_HEADER = struct.Struct("<4sHHIIII")


@dataclass
class QuantPath:
    """One scaled-binary factorization of a (d_out x d_in) weight."""

    u_sign: BinaryFactor      # d_out x r
    v_sign: BinaryFactor      # d_in x r
    h: np.ndarray             # (d_out,) row scales
    g: np.ndarray             # (d_in,)  column scales
    ell: np.ndarray           # (r,)     latent scales

    def __post_init__(self):
        self.h = np.ascontiguousarray(self.h, dtype=np.float64)
        self.g = np.ascontiguousarray(self.g, dtype=np.float64)
        self.ell = np.ascontiguousarray(self.ell, dtype=np.float64)
        r = self.u_sign.cols
        if self.v_sign.cols != r:
            raise ValueError("u_sign and v_sign must share the latent rank")
        if self.h.shape != (self.u_sign.rows,):
            raise ValueError("h length must equal d_out")
        if self.g.shape != (self.v_sign.rows,):
            raise ValueError("g length must equal d_in")
        if self.ell.shape != (r,):
            raise ValueError("ell length must equal the latent rank")
        for name, v in (("h", self.h), ("g", self.g), ("ell", self.ell)):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} contains non-finite entries")

    @property
    def d_out(self) -> int:
        return self.u_sign.rows

    @property
    def d_in(self) -> int:
        return self.v_sign.rows

    @property
    def rank(self) -> int:
        return self.u_sign.cols


@dataclass
class LittleBitLayer:
    """Primary path plus optional residual path; the compressed stand-in
    for a dense (d_out x d_in) weight matrix."""

    d_out: int
    d_in: int
    primary: QuantPath
    residual: Optional[QuantPath] = None

    def __post_init__(self):
        for p in self.paths():
            if (p.d_out, p.d_in) != (self.d_out, self.d_in):
                raise ValueError("all paths must share (d_out, d_in)")

    def paths(self) -> list[QuantPath]:
        return [self.primary] if self.residual is None else [self.primary, self.residual]


def path_effective_weight(p: QuantPath) -> np.ndarray:
    """Dense diag(h) U_sign diag(ell) V_sign.T diag(g), shape d_out x d_in."""
    left = (p.h[:, None] * p.u_sign.dense()) * p.ell
    right = p.v_sign.dense() * p.g[:, None]
    return left @ right.T


def effective_weight(layer: LittleBitLayer) -> np.ndarray:
    """Sum of the per-path effective weights. Reconstructed for analysis
    only; the forward pass never materializes it."""
    w = path_effective_weight(layer.primary)
    if layer.residual is not None:
        w = w + path_effective_weight(layer.residual)
    return w


def _forward_path_row(p: QuantPath, row: np.ndarray) -> np.ndarray:
    t = bitpack.gemv_right(row * p.g, p.v_sign)
    u = bitpack.gemv_left(t * p.ell, p.u_sign)
    return u * p.h


def forward(layer: LittleBitLayer, x) -> np.ndarray:
    """Batched forward pass y = x @ W_hat.T via the four-stage chain
    ((x * g) V_sign * ell) U_sign.T * h per path, paths summed."""
    x = as_matrix(x, "x")
    if x.shape[1] != layer.d_in:
        raise ValueError(f"x has {x.shape[1]} columns, layer d_in={layer.d_in}")
    out = np.empty((x.shape[0], layer.d_out), dtype=np.float64)
    for i in range(x.shape[0]):
        row = x[i]
        y = _forward_path_row(layer.primary, row)
        if layer.residual is not None:
            y = y + _forward_path_row(layer.residual, row)
        out[i] = y
    return out


# ---------------------------------------------------------------------------
# Bits-per-weight accounting
# ---------------------------------------------------------------------------

def measured_bpw(layer: LittleBitLayer, scale_bits: int = 16) -> float:
    """Average stored bits per original weight entry.

    Counts 1 bit per sign and *scale_bits* per scale entry over every
    present path, divided by d_out * d_in.
    """
    if scale_bits not in (16, 32):
        raise ValueError("scale_bits must be 16 or 32")
    bits = 0
    for p in layer.paths():
        bits += p.rank * (layer.d_out + layer.d_in)
        bits += scale_bits * (layer.d_out + layer.d_in + p.rank)
    return bits / (layer.d_out * layer.d_in)


def param_bytes(layer: LittleBitLayer, scale_bits: int = 16) -> float:
    """Logical parameter payload in bytes (sign bits + scale storage),
    excluding the file header and word-alignment pad bits."""
    return measured_bpw(layer, scale_bits) * layer.d_out * layer.d_in / 8.0


# ---------------------------------------------------------------------------
# LBQ file format
# ---------------------------------------------------------------------------
# Little-endian. Header: magic "LBQ1", u16 version=1, u16 flags
# (bit0 residual present, bit1 scales stored fp16 else float32), u32 d_out,
# u32 d_in, u32 r_primary, u32 r_residual (0 if absent). Then the primary
# payload: U_sign words, V_sign words (row-major, ceil(r/64) u64 words per
# row), h, g, ell in the declared scale precision; then the residual
# payload in the same order when present.

def _path_bytes(p: QuantPath, scale_dtype) -> bytes:
    chunks = [
        p.u_sign.words.astype("<u8").tobytes(),
        p.v_sign.words.astype("<u8").tobytes(),
        p.h.astype(scale_dtype).tobytes(),
        p.g.astype(scale_dtype).tobytes(),
        p.ell.astype(scale_dtype).tobytes(),
    ]
    return b"".join(chunks)


def save_lbq(layer: LittleBitLayer, path, fp16_scales: bool = False) -> None:
    """Serialize a layer to an LBQ file (atomic write)."""
    flags = 0
    if layer.residual is not None:
        flags |= _FLAG_RESIDUAL
    if fp16_scales:
        flags |= _FLAG_FP16_SCALES
    scale_dtype = "<f2" if fp16_scales else "<f4"
    r_res = layer.residual.rank if layer.residual is not None else 0
    header = _LBQ_HEADER.pack(LBQ_MAGIC, LBQ_VERSION, flags,
                              layer.d_out, layer.d_in,
                              layer.primary.rank, r_res)
    body = _path_bytes(layer.primary, scale_dtype)
    if layer.residual is not None:
        body += _path_bytes(layer.residual, scale_dtype)
    atomic_write(path, header + body)


class _Reader:
    def __init__(self, raw: bytes, offset: int, path):
        self.raw = raw
        self.off = offset
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated payload "
                              f"(need {n} bytes at offset {self.off})")
        b = self.raw[self.off:self.off + n]
        self.off += n
        return b


def _read_path(rd: _Reader, d_out: int, d_in: int, r: int,
               scale_dtype) -> QuantPath:
    wpr = bitpack.words_per_row(r)
    scale_width = np.dtype(scale_dtype).itemsize

    def read_factor(rows):
        raw = rd.take(rows * wpr * 8)
        words = np.frombuffer(raw, dtype="<u8").astype(np.uint64)
        try:
            return BinaryFactor(rows, r, words.reshape(rows, wpr))
        except ValueError as e:
            raise FormatError(f"{rd.path}: {e}") from e

    def read_scales(n):
        raw = rd.take(n * scale_width)
        v = np.frombuffer(raw, dtype=scale_dtype).astype(np.float64)
        if not np.all(np.isfinite(v)):
            raise FormatError(f"{rd.path}: non-finite scale values")
        return v

    u_sign = read_factor(d_out)
    v_sign = read_factor(d_in)
    h = read_scales(d_out)
    g = read_scales(d_in)
    ell = read_scales(r)
    return QuantPath(u_sign=u_sign, v_sign=v_sign, h=h, g=g, ell=ell)


def load_lbq(path) -> LittleBitLayer:
    """Load an LBQ file; scales are widened to float64 in memory."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _LBQ_HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, version, flags, d_out, d_in, r_pri, r_res = \
        _LBQ_HEADER.unpack_from(raw)
    if magic != LBQ_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != LBQ_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if flags & ~(_FLAG_RESIDUAL | _FLAG_FP16_SCALES):
        raise FormatError(f"{path}: unknown flag bits 0x{flags:x}")
    has_residual = bool(flags & _FLAG_RESIDUAL)
    if has_residual != (r_res > 0):
        raise FormatError(f"{path}: residual flag inconsistent with "
                          f"r_residual={r_res}")
    if min(d_out, d_in, r_pri) < 1:
        raise FormatError(f"{path}: bad dimensions "
                          f"({d_out}, {d_in}, r={r_pri})")
    scale_dtype = "<f2" if flags & _FLAG_FP16_SCALES else "<f4"
    rd = _Reader(raw, _LBQ_HEADER.size, path)
    primary = _read_path(rd, d_out, d_in, r_pri, scale_dtype)
    residual = None
    if has_residual:
        residual = _read_path(rd, d_out, d_in, r_res, scale_dtype)
    if rd.off != len(raw):
        raise FormatError(f"{path}: {len(raw) - rd.off} trailing bytes")
    return LittleBitLayer(d_out=d_out, d_in=d_in,
                          primary=primary, residual=residual)
