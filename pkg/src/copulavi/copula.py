"""Copula-like base density on the unit hypercube and the flip map.

The base density of ``v`` in ``(0, 1)^d`` is

    log c(v) = log G(alpha*) - log B(a, b)
               + sum_l [(alpha_l - 1) log v_l - log G(alpha_l)]
               - alpha* log(sum v) + a log(max v) + (b - 1) log(1 - max v)

and the flip map ``u = (1 - delta) + (2 delta - 1) v`` mixes each coordinate
with its reflection according to a frozen mask ``delta``.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .exceptions import ConfigurationError, DomainError

__all__ = [
    "UNSUPPORTED",
    "ThetaParams",
    "FlipMask",
    "log_density_ctheta",
    "log_density_ctheta_grad",
    "sample_flip_mask",
    "flip_forward",
    "flip_inverse",
    "flip_log_det",
    "DEFAULT_EPSILON",
    "DEFAULT_P",
]

#: Log-density returned at points outside the support. Absorbing under
#: log-sum-exp (exp(-inf) == 0) and never produced by finite arithmetic.
UNSUPPORTED = -np.inf

DEFAULT_EPSILON = 0.01
DEFAULT_P = 0.5


@dataclass(frozen=True)
class ThetaParams:
    a: float
    b: float
    alpha: np.ndarray

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "alpha", alpha)
        vals = np.concatenate([[self.a, self.b], alpha])
        if alpha.ndim != 1 or alpha.size < 1:
            raise ConfigurationError("alpha must be a non-empty vector")
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
            raise DomainError("theta entries must be finite and positive")

    @property
    def d(self):
        return self.alpha.size

    @property
    def alpha_star(self):
        return float(self.alpha.sum())

    @property
    def shapes(self):
        """Gamma shapes in draw order: alpha_1..alpha_d, a, b."""
        return np.concatenate([self.alpha, [self.a, self.b]])


@dataclass(frozen=True)
class FlipMask:
    delta: np.ndarray
    epsilon: float = DEFAULT_EPSILON
    p: float = DEFAULT_P
    seed: int = None

    def __post_init__(self):
        delta = np.atleast_1d(np.asarray(self.delta, dtype=float)).copy()
        delta.setflags(write=False)
        object.__setattr__(self, "delta", delta)
        if np.any(~np.isfinite(delta)) or np.any(delta < 0) or np.any(delta > 1):
            raise DomainError("delta entries must lie in [0, 1]")
        if np.any(np.abs(2.0 * delta - 1.0) == 0):
            raise DomainError("delta = 0.5 makes the flip map singular")

    @property
    def d(self):
        return self.delta.size

    @property
    def slope(self):
        return 2.0 * self.delta - 1.0

    @property
    def lower(self):
        return np.minimum(self.delta, 1.0 - self.delta)

    @property
    def upper(self):
        return np.maximum(self.delta, 1.0 - self.delta)


def _check_v(v):
    v = np.asarray(v, dtype=float)
    if np.any(np.isnan(v)):
        raise DomainError("NaN in density argument")
    return v


def _theta_consts(theta):
    alpha = theta.alpha
    return (special.gammaln(theta.alpha_star) - special.betaln(theta.a, theta.b)
            - special.gammaln(alpha).sum())


def log_density_ctheta(v, theta):
    """Log of the copula-like density at ``v`` (last axis has length d).

    Points with any coordinate outside the open unit interval map to
    :data:`UNSUPPORTED`.
    """
    v = _check_v(v)
    if v.shape[-1] != theta.d:
        raise ConfigurationError(f"expected dimension {theta.d}, got {v.shape[-1]}")
    inside = np.all((v > 0) & (v < 1), axis=-1)
    vs = np.where((v > 0) & (v < 1), v, 0.5)
    m = vs.max(axis=-1)
    out = (_theta_consts(theta)
           + ((theta.alpha - 1.0) * np.log(vs)).sum(axis=-1)
           - theta.alpha_star * np.log(vs.sum(axis=-1))
           + theta.a * np.log(m)
           + (theta.b - 1.0) * np.log1p(-m))
    out = np.where(inside, out, UNSUPPORTED)
    return float(out) if out.ndim == 0 else out


def log_density_ctheta_grad(v, theta):
    """Log-density together with its gradients.

    Returns ``(logc, grad_v, grad_a, grad_b, grad_alpha)``; only meaningful on
    supported points (callers mask unsupported rows). The max is resolved to
    the first index attaining it.
    """
    v = np.atleast_2d(_check_v(v))
    n, d = v.shape
    alpha, a, b = theta.alpha, theta.a, theta.b
    k = np.argmax(v, axis=-1)
    rows = np.arange(n)
    m = v[rows, k]
    s = v.sum(axis=-1)
    logv = np.log(v)
    log_s = np.log(s)
    log_m = np.log(m)
    log1m = np.log1p(-m)
    logc = (_theta_consts(theta) + ((alpha - 1.0) * logv).sum(-1)
            - theta.alpha_star * log_s + a * log_m + (b - 1.0) * log1m)
    grad_v = (alpha - 1.0) / v - (theta.alpha_star / s)[:, None]
    grad_v[rows, k] += a / m - (b - 1.0) / (1.0 - m)
    psi_ab = special.psi(a + b)
    grad_a = -(special.psi(a) - psi_ab) + log_m
    grad_b = -(special.psi(b) - psi_ab) + log1m
    grad_alpha = special.psi(theta.alpha_star) - special.psi(alpha) + logv - log_s[:, None]
    return logc, grad_v, grad_a, grad_b, grad_alpha


def sample_flip_mask(d, rng, epsilon=DEFAULT_EPSILON, p=DEFAULT_P):
    """Draw each delta_i independently: epsilon with probability p, else 1 - epsilon."""
    if not (0 < epsilon < 0.5):
        raise DomainError("epsilon must lie in (0, 0.5)")
    if not (0 <= p <= 1):
        raise DomainError("p must lie in [0, 1]")
    if int(d) < 1:
        raise ConfigurationError("dimension must be >= 1")
    hit = rng.uniform(size=int(d)) < p
    delta = np.where(hit, epsilon, 1.0 - epsilon)
    return FlipMask(delta=delta, epsilon=epsilon, p=p, seed=getattr(rng, "seed", None))


def flip_forward(v, mask):
    v = np.asarray(v, dtype=float)
    return (1.0 - mask.delta) + mask.slope * v


def flip_inverse(u, mask):
    """Inverse flip map. Returns ``(v, inside)`` where ``inside`` flags points
    whose ``u`` lies strictly within the image box."""
    u = np.asarray(u, dtype=float)
    inside = np.all((u > mask.lower) & (u < mask.upper), axis=-1)
    v = (u - (1.0 - mask.delta)) / mask.slope
    return v, inside


def flip_log_det(mask):
    return float(np.log(np.abs(mask.slope)).sum())
