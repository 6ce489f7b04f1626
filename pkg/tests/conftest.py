"""Shared helpers: independent oracles and layer builders used across the
test modules. The oracles deliberately avoid the library's own kernels so
each check runs through a second, dumber route."""

import os

import numpy as np
import pytest

from littlebit import bitpack
from littlebit.layer import LittleBitLayer, QuantPath

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "fixtures", "v1")


def fixture_path(name):
    return os.path.join(FIXTURE_DIR, name)


def naive_gemv_right(x, signs):
    """Per-output elementwise product and sum; no BLAS, no packing."""
    return np.array([np.sum(x * signs[:, j]) for j in range(signs.shape[1])])


def naive_gemv_left(z, signs):
    return np.array([np.sum(z * signs[i, :]) for i in range(signs.shape[0])])


def scalar_effective_weight(path):
    """Triple-loop reconstruction of diag(h) U diag(ell) V^T diag(g)."""
    su = bitpack.unpack(path.u_sign)
    sv = bitpack.unpack(path.v_sign)
    d_out, r = su.shape
    d_in = sv.shape[0]
    w = np.zeros((d_out, d_in))
    for i in range(d_out):
        for j in range(d_in):
            acc = 0.0
            for k in range(r):
                acc += path.h[i] * su[i, k] * path.ell[k] * sv[j, k] * path.g[j]
            w[i, j] = acc
    return w


def random_signs(rng, rows, cols):
    return rng.integers(0, 2, size=(rows, cols)).astype(np.float64) * 2.0 - 1.0


def random_path(rng, d_out, d_in, r):
    return QuantPath(
        u_sign=bitpack.pack(random_signs(rng, d_out, r)),
        v_sign=bitpack.pack(random_signs(rng, d_in, r)),
        h=rng.standard_normal(d_out),
        g=rng.standard_normal(d_in),
        ell=rng.standard_normal(r))


def random_layer(rng, d_out, d_in, r, residual=False, r_residual=None):
    res = None
    if residual:
        res = random_path(rng, d_out, d_in, r_residual or r)
    return LittleBitLayer(d_out=d_out, d_in=d_in,
                          primary=random_path(rng, d_out, d_in, r),
                          residual=res)


def scaled_sign_rank1(rng, d_out, d_in):
    """A matrix exactly representable by one rank-1 scaled-binary path:
    ell * (h o s)(g o t)^T with positive h, g and sign vectors s, t."""
    h = rng.uniform(0.5, 2.0, d_out)
    g = rng.uniform(0.5, 2.0, d_in)
    s = random_signs(rng, d_out, 1)[:, 0]
    t = random_signs(rng, d_in, 1)[:, 0]
    ell = rng.uniform(0.5, 3.0)
    return ell * np.outer(h * s, g * t)


def flat_params(tl):
    return np.concatenate([p.ravel() for path in tl.paths for p in path.params()])


def set_params(tl, vec):
    i = 0
    for path in tl.paths:
        for p in path.params():
            p.flat[:] = vec[i:i + p.size]
            i += p.size


def fd_gradient_gap(tl, x, yt, spec, step=1e-5):
    """Max relative gap between analytic gradients and central finite
    differences on the fully smooth surrogate network."""
    from littlebit import qat

    v0 = flat_params(tl).copy()
    _, grads = qat.loss_and_grads(tl, x, yt, spec, smooth=True)
    analytic = np.concatenate([g.ravel() for pg in grads for g in pg.params()])
    fd = np.zeros_like(v0)
    for i in range(v0.size):
        vp = v0.copy()
        vp[i] += step
        set_params(tl, vp)
        lp, _ = qat.loss_and_grads(tl, x, yt, spec, smooth=True)
        vm = v0.copy()
        vm[i] -= step
        set_params(tl, vm)
        lm, _ = qat.loss_and_grads(tl, x, yt, spec, smooth=True)
        fd[i] = (lp - lm) / (2 * step)
    set_params(tl, v0)
    scale = np.maximum(np.abs(fd), np.max(np.abs(fd)) * 1e-6 + 1e-12)
    return np.max(np.abs(analytic - fd) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)
