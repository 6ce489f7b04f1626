"""Desk-scale refinement of a quantized layer against a dense teacher.

Real-valued latent factors carry the binary factors: the forward pass
binarizes them with sign() and the backward pass substitutes a surrogate
derivative (SmoothSign: d/dx tanh(kx) with k=100 by default, or the
straight-through identity). Row/column/latent scales receive exact
chain-rule gradients. Optimization is Adam with linear warmup into a
cosine (or constant) schedule.

The training objective is the per-layer distillation term: mean squared
error between student and teacher outputs on a small seeded calibration
set that is cycled epoch-style, mirroring finite-data quantization-aware
training. (When this layerwise term joins a full distillation objective
with an output cross-entropy term it is weighted by KD_INTER_WEIGHT;
only the layerwise term is trained here.)

Internally the trainer evaluates the student through the materialized
effective weight of the current parameters. This makes a layer whose
teacher equals its own effective weight an exact fixed point (zero loss,
zero gradients, no optimizer drift). Inference-path evaluation
(:meth:`TrainableLayer.forward`) still routes through the packed kernels
via a snapshot and is bit-identical to the snapshot layer's forward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import bitpack
from .dualsvid import split_factors
from .errors import DivergenceError
from .layer import LittleBitLayer, QuantPath, forward as layer_forward, path_effective_weight
from .tensor import as_matrix, seeded_rng, truncated_svd

# Weight applied to the layerwise MSE term inside a full distillation
# objective; documentation only, the output-CE term is out of scope here.
KD_INTER_WEIGHT = 10.0

SURROGATE_KINDS = ("smoothsign", "ste")
SCHEDULES = ("constant", "cosine")


@dataclass(frozen=True)
class SurrogateSpec:
    """Backward rule used through the sign() nonlinearity."""

    kind: str = "smoothsign"
    k: float = 100.0

    def __post_init__(self):
        if self.kind not in SURROGATE_KINDS:
            raise ValueError(f"unknown surrogate kind {self.kind!r}")
        if not self.k > 0:
            raise ValueError("k must be positive")


def surrogate_backward(x, spec: SurrogateSpec):
    """Surrogate derivative of sign() at *x* (scalar or array).

    smoothsign: k * (1 - tanh(kx)^2), the derivative of tanh(kx).
    ste: 1 everywhere (plain identity pass-through).
    """
    x = np.asarray(x, dtype=np.float64)
    if spec.kind == "smoothsign":
        t = np.tanh(spec.k * x)
        out = spec.k * (1.0 - t * t)
    else:
        out = np.ones_like(x)
    return out if out.ndim else float(out)


@dataclass
class TrainConfig:
    steps: int = 500
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 32
    seed: int = 0
    warmup_frac: float = 0.02
    schedule: str = "cosine"
    # Distinct calibration batches drawn up front and cycled; the sampler
    # is finite by design so the loop trains in epochs over fixed data.
    calib_batches: int = 2

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in (0, 1)")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.steps < 1 or self.batch < 1 or self.calib_batches < 1:
            raise ValueError("steps, batch and calib_batches must be >= 1")
        if not 0 <= self.warmup_frac <= 1:
            raise ValueError("warmup_frac must lie in [0, 1]")

    def lr_at(self, step: int) -> float:
        """Learning rate at a 1-based step: linear warmup, then the
        configured decay."""
        warm = round(self.warmup_frac * self.steps)
        if warm > 0 and step <= warm:
            return self.lr * step / warm
        if self.schedule == "constant" or self.steps == warm:
            return self.lr
        t = (step - warm) / (self.steps - warm)
        return self.lr * 0.5 * (1.0 + np.cos(np.pi * t))


DEFAULT_EPS_INIT = 0.02


@dataclass
class TrainablePath:
    """Latent real factors plus scales; sign(latent) feeds the forward."""

    u_latent: np.ndarray
    v_latent: np.ndarray
    h: np.ndarray
    g: np.ndarray
    ell: np.ndarray

    @classmethod
    def from_quantpath(cls, p: QuantPath,
                       eps_init: float = DEFAULT_EPS_INIT) -> "TrainablePath":
        return cls(u_latent=p.u_sign.dense() * eps_init,
                   v_latent=p.v_sign.dense() * eps_init,
                   h=p.h.copy(), g=p.g.copy(), ell=p.ell.copy())

    def params(self) -> list[np.ndarray]:
        return [self.u_latent, self.v_latent, self.h, self.g, self.ell]

    def snapshot(self) -> QuantPath:
        """Lossy one-way conversion back to a packed path (sign(0) -> +1)."""
        return QuantPath(
            u_sign=bitpack.pack(np.where(self.u_latent >= 0, 1.0, -1.0)),
            v_sign=bitpack.pack(np.where(self.v_latent >= 0, 1.0, -1.0)),
            h=self.h.copy(), g=self.g.copy(), ell=self.ell.copy())


@dataclass
class TrainableLayer:
    d_out: int
    d_in: int
    paths: list[TrainablePath]

    @classmethod
    def from_layer(cls, layer: LittleBitLayer,
                   eps_init: float = DEFAULT_EPS_INIT) -> "TrainableLayer":
        return cls(d_out=layer.d_out, d_in=layer.d_in,
                   paths=[TrainablePath.from_quantpath(p, eps_init)
                          for p in layer.paths()])

    def snapshot(self) -> LittleBitLayer:
        residual = self.paths[1].snapshot() if len(self.paths) > 1 else None
        return LittleBitLayer(d_out=self.d_out, d_in=self.d_in,
                              primary=self.paths[0].snapshot(),
                              residual=residual)

    def forward(self, x) -> np.ndarray:
        """Inference-path forward: identical bit-for-bit to running the
        snapshot layer through the packed kernels."""
        return layer_forward(self.snapshot(), x)


def make_trainable(layer: LittleBitLayer, teacher_w=None,
                   eps_init: float = DEFAULT_EPS_INIT,
                   magnitude_init: bool = False) -> TrainableLayer:
    """Build the trainable state for a layer.

    By default latents are the layer's signs at magnitude *eps_init*
    (kept small so the SmoothSign derivative stays alive). With
    *magnitude_init* the latents are seeded with the split SVD factors of
    the teacher recomputed at each path's rank, carrying real magnitudes;
    this mode targets freshly quantized layers whose signs came from the
    same decomposition.
    """
    tl = TrainableLayer.from_layer(layer, eps_init)
    if magnitude_init:
        if teacher_w is None:
            raise ValueError("magnitude_init requires teacher_w")
        w = as_matrix(teacher_w, "teacher_w")
        target = w
        for tp, qp in zip(tl.paths, layer.paths()):
            uprime, vprime = split_factors(truncated_svd(target, qp.rank))
            tp.u_latent = uprime
            tp.v_latent = vprime
            target = target - path_effective_weight(qp)
    return tl


# ---------------------------------------------------------------------------
# Loss and gradients
# ---------------------------------------------------------------------------

@dataclass
class PathGrads:
    u_latent: np.ndarray
    v_latent: np.ndarray
    h: np.ndarray
    g: np.ndarray
    ell: np.ndarray

    def params(self) -> list[np.ndarray]:
        return [self.u_latent, self.v_latent, self.h, self.g, self.ell]


def _binarize(latent: np.ndarray, spec: SurrogateSpec, smooth: bool):
    """(factor, local derivative) for a latent matrix.

    Training mode: factor = sign(latent) with sign(0) -> +1, derivative
    per the surrogate spec. Smooth mode replaces sign by tanh(k*latent)
    itself, yielding the fully differentiable network used to validate
    the chain rule against finite differences.
    """
    if smooth:
        t = np.tanh(spec.k * latent)
        return t, spec.k * (1.0 - t * t)
    s = np.where(latent >= 0, 1.0, -1.0)
    return s, surrogate_backward(latent, spec)


def loss_and_grads(tl: TrainableLayer, x, y_teacher, spec: SurrogateSpec,
                   smooth: bool = False) -> tuple[float, list[PathGrads]]:
    """Layerwise MSE loss and gradients for every trainable field.

    Scales get exact chain-rule gradients; latent factors get the chain
    rule with sign() differentiated per *spec* (or exactly, in smooth
    mode).
    """
    x = as_matrix(x, "x")
    y_teacher = as_matrix(y_teacher, "y_teacher")
    if x.shape[1] != tl.d_in:
        raise ValueError(f"x has {x.shape[1]} columns, layer d_in={tl.d_in}")
    if y_teacher.shape != (x.shape[0], tl.d_out):
        raise ValueError("y_teacher shape does not match (seq, d_out)")

    factors = []
    w_total = np.zeros((tl.d_out, tl.d_in))
    for p in tl.paths:
        su, dsu = _binarize(p.u_latent, spec, smooth)
        sv, dsv = _binarize(p.v_latent, spec, smooth)
        w_path = ((p.h[:, None] * su) * p.ell) @ (sv * p.g[:, None]).T
        factors.append((su, dsu, sv, dsv))
        w_total = w_total + w_path

    # overflow here means divergence; the caller's finite check handles it
    with np.errstate(over="ignore"):
        diff = x @ w_total.T - y_teacher
        loss = float(np.mean(diff * diff))
        dw = (2.0 / diff.size) * (diff.T @ x)    # dL/dW_hat, (d_out, d_in)

    grads = []
    with np.errstate(over="ignore", invalid="ignore"):
        for p, (su, dsu, sv, dsv) in zip(tl.paths, factors):
            m = (su * p.ell) @ sv.T                  # W_hat without h, g
            dh = np.sum(dw * (m * p.g[None, :]), axis=1)
            dg = np.sum(dw * (p.h[:, None] * m), axis=0)
            a = (p.h[:, None] * dw) * p.g[None, :]   # diag(h) dW diag(g)
            d_su = (a @ sv) * p.ell
            d_sv = (a.T @ su) * p.ell
            dell = np.sum((su.T @ a) * sv.T, axis=1)
            grads.append(PathGrads(u_latent=d_su * dsu, v_latent=d_sv * dsv,
                                   h=dh, g=dg, ell=dell))
    return loss, grads


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class CurvePoint:
    step: int
    loss: float
    lr: float


def default_sampler(cfg: TrainConfig, d_in: int) -> list[np.ndarray]:
    """Seeded calibration set: cfg.calib_batches batches of standard
    Gaussian rows, cycled during training."""
    rng = seeded_rng(cfg.seed)
    return [rng.standard_normal((cfg.batch, d_in))
            for _ in range(cfg.calib_batches)]


def train(layer0: LittleBitLayer, teacher_w, cfg: TrainConfig,
          spec: SurrogateSpec = SurrogateSpec(),
          data: Optional[Sequence[np.ndarray]] = None,
          eps_init: float = DEFAULT_EPS_INIT,
          magnitude_init: bool = False,
          ) -> tuple[LittleBitLayer, list[CurvePoint]]:
    """Refine *layer0* toward the dense teacher; returns the snapshot
    layer and the per-step loss curve. Deterministic for a given seed.

    Raises DivergenceError as soon as the loss goes non-finite.
    """
    teacher_w = as_matrix(teacher_w, "teacher_w")
    if teacher_w.shape != (layer0.d_out, layer0.d_in):
        raise ValueError(
            f"teacher shape {teacher_w.shape} does not match layer "
            f"({layer0.d_out}, {layer0.d_in})")
    tl = make_trainable(layer0, teacher_w, eps_init, magnitude_init)
    batches = list(data) if data is not None else default_sampler(cfg, layer0.d_in)
    targets = [x @ teacher_w.T for x in batches]

    params = [p for path in tl.paths for p in path.params()]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    curve: list[CurvePoint] = []
    for t in range(1, cfg.steps + 1):
        lr_t = cfg.lr_at(t)
        i = (t - 1) % len(batches)
        loss, grads = loss_and_grads(tl, batches[i], targets[i], spec)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {t}")
        curve.append(CurvePoint(step=t, loss=loss, lr=lr_t))
        flat = [g for pg in grads for g in pg.params()]
        for j, (p, gr) in enumerate(zip(params, flat)):
            m[j] = cfg.beta1 * m[j] + (1 - cfg.beta1) * gr
            v[j] = cfg.beta2 * v[j] + (1 - cfg.beta2) * gr * gr
            mhat = m[j] / (1 - cfg.beta1 ** t)
            vhat = v[j] / (1 - cfg.beta2 ** t)
            p -= lr_t * mhat / (np.sqrt(vhat) + cfg.eps)
    return tl.snapshot(), curve


def curve_to_csv(curve: Sequence[CurvePoint]) -> str:
    lines = ["step,loss,lr"]
    for pt in curve:
        lines.append(f"{pt.step},{pt.loss!r},{pt.lr!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Baseline scale initializations (for the init-quality comparison)
# ---------------------------------------------------------------------------

BASELINE_MODES = ("he_like", "xavier_like")


def init_baseline_scales(layer: LittleBitLayer, mode: str,
                         seed: int = 0) -> LittleBitLayer:
    """Replace h, g, ell with random positive draws, keeping the signs.

    he_like draws |N(0, 2/d_in)|, xavier_like |N(0, 2/(d_in + d_out))|;
    the RMS of the draws matches the target scale. Used only for the
    initialization-quality comparison experiments.
    """
    if mode not in BASELINE_MODES:
        raise ValueError(f"unknown baseline mode {mode!r}")
    if mode == "he_like":
        std = np.sqrt(2.0 / layer.d_in)
    else:
        std = np.sqrt(2.0 / (layer.d_in + layer.d_out))
    rng = seeded_rng(seed)

    def redraw(p: QuantPath) -> QuantPath:
        return QuantPath(
            u_sign=p.u_sign, v_sign=p.v_sign,
            h=np.abs(rng.normal(0.0, std, layer.d_out)),
            g=np.abs(rng.normal(0.0, std, layer.d_in)),
            ell=np.abs(rng.normal(0.0, std, p.rank)))

    residual = redraw(layer.residual) if layer.residual is not None else None
    return LittleBitLayer(d_out=layer.d_out, d_in=layer.d_in,
                          primary=redraw(layer.primary), residual=residual)
