"""Gamma-based sampling of the Dirichlet/Beta building blocks.

Gamma variates use the Marsaglia-Tsang squeeze method. For shape < 1 a draw
is boosted: ``Gamma(s) = Gamma(s + 1) * U**(1/s)``, where the extra uniform
``U`` is drawn after the whole rejection loop has finished. Within a batch,
each rejection round draws one normal and one uniform per still-pending
entry, in index order, so a given ``RngState`` always yields the same
sequence.

Gradients never flow through the accept/reject decisions. The sensitivity of
a draw ``z`` to its shape comes from the implicit identity
``P(shape, z) = level`` held at a fixed level.
"""
from dataclasses import dataclass

import numpy as np

from . import specfn
from .copula import ThetaParams
from .exceptions import DomainError

__all__ = [
    "RngState",
    "BaseDraw",
    "sample_gamma",
    "sample_dirichlet",
    "sample_beta",
    "implicit_dz_dshape",
    "sample_base_draw",
    "base_draw_from_gammas",
]

_TINY = np.finfo(float).tiny


class RngState:
    """Seeded random stream.

    ``(seed, stream)`` pairs map to independent PCG64 streams via
    ``SeedSequence(seed, spawn_key=(stream,))``.
    """

    def __init__(self, seed=0, stream=0):
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def spawn(self, stream):
        return RngState(self.seed, stream)

    def uniform(self, size=None):
        return self.generator.random(size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def __repr__(self):
        return f"RngState(seed={self.seed}, stream={self.stream})"


def _as_rng(rng):
    if isinstance(rng, RngState):
        return rng
    if rng is None:
        return RngState(0)
    if isinstance(rng, (int, np.integer)):
        return RngState(int(rng))
    raise TypeError(f"expected RngState or int seed, got {type(rng).__name__}")


def sample_gamma(shape, rng, size=None):
    """Gamma(shape, rate 1) draws, strictly positive.

    ``shape`` broadcasts against ``size``.
    """
    rng = _as_rng(rng)
    shape = np.asarray(shape, dtype=float)
    if np.any(~np.isfinite(shape)) or np.any(shape <= 0):
        raise DomainError("gamma shape must be finite and positive")
    out_shape = shape.shape if size is None else tuple(np.atleast_1d(size))
    alpha = np.broadcast_to(shape, out_shape).ravel()
    boost = alpha < 1.0
    s = np.where(boost, alpha + 1.0, alpha)
    dd = s - 1.0 / 3.0
    cc = 1.0 / np.sqrt(9.0 * dd)
    out = np.empty_like(s)
    pending = np.arange(s.size)
    while pending.size:
        x = rng.normal(pending.size)
        v = 1.0 + cc[pending] * x
        u = rng.uniform(pending.size)
        ok = v > 0
        v3 = np.where(ok, v * v * v, 1.0)
        dp = dd[pending]
        with np.errstate(divide="ignore", invalid="ignore"):
            accept = ok & (np.log(u) < 0.5 * x * x + dp - dp * v3 + dp * np.log(v3))
        out[pending[accept]] = dp[accept] * v3[accept]
        pending = pending[~accept]
    if boost.any():
        idx = np.flatnonzero(boost)
        u = rng.uniform(idx.size)
        out[idx] = np.exp(np.log(out[idx]) + np.log(u) / alpha[idx])
    out = np.maximum(out, _TINY).reshape(out_shape)
    return float(out) if out.ndim == 0 else out


def sample_dirichlet(alpha, rng, size=None):
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.size == 0:
        raise DomainError("alpha must be a non-empty vector")
    if np.any(~np.isfinite(alpha)) or np.any(alpha <= 0):
        raise DomainError("Dirichlet concentrations must be positive")
    n = () if size is None else tuple(np.atleast_1d(size))
    z = sample_gamma(np.broadcast_to(alpha, n + alpha.shape), rng)
    z = np.atleast_1d(z)
    return z / z.sum(axis=-1, keepdims=True)


def sample_beta(a, b, rng, size=None):
    """Beta(a, b) as ``Z1 / (Z1 + Z2)`` with independent Gamma draws."""
    a = float(a)
    b = float(b)
    if not (a > 0 and b > 0 and np.isfinite(a) and np.isfinite(b)):
        raise DomainError("Beta parameters must be positive")
    n = () if size is None else tuple(np.atleast_1d(size))
    z = sample_gamma(np.broadcast_to([a, b], n + (2,)), rng)
    g = z[..., 0] / (z[..., 0] + z[..., 1])
    return float(g) if np.ndim(g) == 0 else g


def implicit_dz_dshape(z, shape):
    """d z / d shape of a Gamma(shape, 1) draw at a fixed CDF level."""
    z = np.asarray(z, dtype=float)
    shape = np.asarray(shape, dtype=float)
    if np.any(~np.isfinite(z)) or np.any(z <= 0):
        raise DomainError("z must be positive")
    if np.any(~np.isfinite(shape)) or np.any(shape <= 0):
        raise DomainError("shape must be positive")
    return specfn.gamma_level_dshape_ratio(shape, z) * -1.0


@dataclass
class BaseDraw:
    """One draw (or a batch along the leading axis) of the base construction."""

    z: np.ndarray
    w: np.ndarray
    g: np.ndarray
    v: np.ndarray
    w_star: np.ndarray
    argmax: np.ndarray

    @property
    def d(self):
        return self.w.shape[-1]


def base_draw_from_gammas(z):
    """Assemble w, g, v from Gamma variates ``z`` (last axis length d + 2)."""
    z = np.asarray(z, dtype=float)
    d = z.shape[-1] - 2
    zd = z[..., :d]
    w = zd / zd.sum(axis=-1, keepdims=True)
    g = z[..., d] / (z[..., d] + z[..., d + 1])
    k = np.argmax(zd, axis=-1)
    zk = np.take_along_axis(zd, k[..., None], axis=-1)
    w_star = np.take_along_axis(w, k[..., None], axis=-1)[..., 0]
    # v_k = g * (z_k / z_k) = g exactly
    v = g[..., None] * (zd / zk)
    return BaseDraw(z=z, w=w, g=g, v=v, w_star=w_star, argmax=k)


def sample_base_draw(theta: ThetaParams, rng, size=None):
    """Draw from the copula-like density by the Dirichlet x Beta construction."""
    n = () if size is None else tuple(np.atleast_1d(size))
    shapes = np.broadcast_to(theta.shapes, n + (theta.d + 2,))
    z = np.atleast_1d(sample_gamma(shapes, rng))
    return base_draw_from_gammas(z)
