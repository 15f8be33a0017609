"""Butterfly products of Givens rotations.

For ``d = 2**k`` the rotation is ``R = O_1 O_2 ... O_k``. Factor ``O_j``
rotates coordinate pairs ``(p, p + 2**(j-1))`` inside blocks of size ``2**j``
and every pair in block ``b`` shares the angle
``nu[b * 2**j + 2**(j-1) - 1]`` (0-based). For other ``d`` the factors of the
next power of two are truncated to ``d x d``. A pair whose partner falls
outside the matrix becomes the identity on the surviving coordinate. The
surviving angles are exactly ``nu[0] .. nu[d-2]``.
"""
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigurationError

__all__ = ["RotationParams", "Butterfly", "build_butterfly", "apply_rotation",
           "apply_rotation_transpose", "n_levels"]


def n_levels(d):
    return int(np.ceil(np.log2(d))) if d > 1 else 0


@dataclass(frozen=True)
class RotationParams:
    nu: np.ndarray

    def __post_init__(self):
        nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        if np.any(~np.isfinite(nu)):
            raise ConfigurationError("rotation angles must be finite")
        object.__setattr__(self, "nu", nu)

    @property
    def d(self):
        return self.nu.size + 1


@dataclass(frozen=True)
class _Layer:
    p: np.ndarray
    q: np.ndarray
    angle: np.ndarray


def _layers(d):
    k = n_levels(d)
    layers = []
    for j in range(1, k + 1):
        half = 2 ** (j - 1)
        size = 2 * half
        p, q, ang = [], [], []
        for start in range(0, 2 ** k, size):
            for i in range(half):
                pi, qi = start + i, start + i + half
                if qi < d:
                    p.append(pi)
                    q.append(qi)
                    ang.append(start + half - 1)
        layers.append(_Layer(np.array(p, dtype=int), np.array(q, dtype=int),
                             np.array(ang, dtype=int)))
    return layers


@dataclass
class Butterfly:
    """Sparse rotation operator ``O_1 ... O_k`` with cached cos/sin."""

    d: int
    nu: np.ndarray
    layers: list
    cos: np.ndarray = field(repr=False)
    sin: np.ndarray = field(repr=False)
    multiplies: int = 0

    @property
    def n_rotations(self):
        return sum(layer.p.size for layer in self.layers)

    def dense(self):
        """Materialize R as a d x d matrix (product of dense factors)."""
        r = np.eye(self.d)
        for layer in self.layers:
            o = np.eye(self.d)
            c, s = self.cos[layer.angle], self.sin[layer.angle]
            o[layer.p, layer.p] = c
            o[layer.p, layer.q] = -s
            o[layer.q, layer.p] = s
            o[layer.q, layer.q] = c
            r = r @ o
        return r

    def factors(self):
        mats = []
        for layer in self.layers:
            o = np.eye(self.d)
            c, s = self.cos[layer.angle], self.sin[layer.angle]
            o[layer.p, layer.p] = c
            o[layer.p, layer.q] = -s
            o[layer.q, layer.p] = s
            o[layer.q, layer.q] = c
            mats.append(o)
        return mats


def build_butterfly(d, rotation):
    d = int(d)
    if d < 1:
        raise ConfigurationError("dimension must be >= 1")
    nu = rotation.nu if isinstance(rotation, RotationParams) else np.asarray(rotation, float)
    nu = np.atleast_1d(nu) if d > 1 else np.zeros(0)
    if nu.size != d - 1:
        raise ConfigurationError(f"butterfly of dimension {d} needs {d - 1} angles, got {nu.size}")
    return Butterfly(d=d, nu=nu, layers=_layers(d), cos=np.cos(nu), sin=np.sin(nu))


def _check(x, op):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != op.d:
        raise ConfigurationError(f"dimension mismatch: operator {op.d}, vector {x.shape[-1]}")
    return x


def apply_rotation(x, op):
    """``R @ x`` along the last axis (batched), applying O_k first."""
    y = _check(x, op).copy()
    for layer in reversed(op.layers):
        c, s = op.cos[layer.angle], op.sin[layer.angle]
        xp, xq = y[..., layer.p], y[..., layer.q]
        y[..., layer.p] = c * xp - s * xq
        y[..., layer.q] = s * xp + c * xq
        op.multiplies += 4 * layer.p.size
    return y


def apply_rotation_transpose(x, op):
    """``R.T @ x``, the exact inverse of :func:`apply_rotation`."""
    y = _check(x, op).copy()
    for layer in op.layers:
        c, s = op.cos[layer.angle], op.sin[layer.angle]
        xp, xq = y[..., layer.p], y[..., layer.q]
        y[..., layer.p] = c * xp + s * xq
        y[..., layer.q] = -s * xp + c * xq
        op.multiplies += 4 * layer.p.size
    return y


def rotation_vjp(x_prime, op, grad_out):
    """Backward pass of ``x = R x_prime``.

    Returns ``(grad_x_prime, grad_nu)`` for a batch (leading axis = samples;
    ``grad_nu`` is summed over the batch).
    """
    y = np.atleast_2d(np.asarray(x_prime, dtype=float)).copy()
    g = np.atleast_2d(np.asarray(grad_out, dtype=float)).copy()
    # forward, storing layer inputs
    inputs = []
    for layer in reversed(op.layers):
        inputs.append(y.copy())
        c, s = op.cos[layer.angle], op.sin[layer.angle]
        xp, xq = y[:, layer.p], y[:, layer.q]
        y[:, layer.p] = c * xp - s * xq
        y[:, layer.q] = s * xp + c * xq
    grad_nu = np.zeros(op.nu.size)
    for layer, inp in zip(op.layers, reversed(inputs)):
        c, s = op.cos[layer.angle], op.sin[layer.angle]
        xp, xq = inp[:, layer.p], inp[:, layer.q]
        gp, gq = g[:, layer.p], g[:, layer.q]
        # d out_p / d nu = -s xp - c xq ; d out_q / d nu = c xp - s xq
        contrib = (gp * (-s * xp - c * xq) + gq * (c * xp - s * xq)).sum(axis=0)
        np.add.at(grad_nu, layer.angle, contrib)
        g[:, layer.p] = c * gp + s * gq
        g[:, layer.q] = -s * gp + c * gq
    return g, grad_nu
