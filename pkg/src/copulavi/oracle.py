"""Independent reference computations for 2-D checks.

Nothing here touches the reparameterized sampling path. Normalizers and KL
divergences use tensor-product trapezoid quadrature in log space. Gradient
references use central differences with the base noise frozen at its CDF
levels.
"""
from dataclasses import dataclass, asdict
import json

import numpy as np
from scipy import special

from . import specfn
from .exceptions import ConfigurationError, NumericalError
from .families import COPULA_KINDS, GAUSS_KINDS, ROT_KINDS, family_log_density
from .rotation import build_butterfly

__all__ = [
    "GridSpec",
    "QuadratureResult",
    "grid_log_z",
    "grid_kl",
    "histogram_tv",
    "finite_diff_grad",
    "support_box",
    "frozen_level_noise",
    "frozen_level_fd_grad",
    "OracleRecord",
    "write_records",
    "read_records",
]


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned box ``[lo0, hi0] x [lo1, hi1]`` with ``resolution`` nodes per axis."""

    lower: tuple
    upper: tuple
    resolution: int = 400

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != 2 or len(hi) != 2:
            raise ConfigurationError("grid oracle is two-dimensional")
        if not all(h > l for l, h in zip(lo, hi)):
            raise ConfigurationError("grid upper bounds must exceed lower bounds")
        if int(self.resolution) < 50:
            raise ConfigurationError("grid resolution must be at least 50")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "resolution", int(self.resolution))

    def axes(self):
        return [np.linspace(l, h, self.resolution) for l, h in zip(self.lower, self.upper)]

    def log_weights(self):
        """Log trapezoid weights per axis."""
        out = []
        for ax in self.axes():
            w = np.full(ax.size, ax[1] - ax[0])
            w[[0, -1]] *= 0.5
            out.append(np.log(w))
        return out

    def points(self):
        a0, a1 = self.axes()
        g0, g1 = np.meshgrid(a0, a1, indexing="ij")
        return np.stack([g0, g1], axis=-1)


@dataclass(frozen=True)
class QuadratureResult:
    value: float
    boundary_ratio: float
    flagged: bool

    def __float__(self):
        return float(self.value)


BOUNDARY_TOL = 1e-12


def _boundary_ratio(log_f):
    """Largest boundary density relative to the largest density on the grid."""
    edge = np.concatenate([log_f[0], log_f[-1], log_f[:, 0], log_f[:, -1]])
    top = log_f.max()
    return float(np.exp(edge.max() - top)) if np.isfinite(top) else np.inf


_CHUNK = 1 << 16


def _evaluate(fn, pts):
    """``fn`` over an (n, 2) array in fixed-size chunks, in order."""
    out = np.empty(pts.shape[0])
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        for i in range(0, pts.shape[0], _CHUNK):
            out[i:i + _CHUNK] = fn(pts[i:i + _CHUNK])
    return out


def _log_values(fn, grid):
    pts = grid.points()
    vals = _evaluate(fn, pts.reshape(-1, 2)).reshape(pts.shape[:2])
    return np.where(np.isnan(vals), -np.inf, vals)


def grid_log_z(target, grid: GridSpec):
    """``log integral exp(-U)`` over the box.

    The result is flagged when the density anywhere on the box boundary
    exceeds ``BOUNDARY_TOL`` times its maximum (the box truncates mass).
    """
    log_f = _log_values(lambda x: -target.u(x), grid)
    lw0, lw1 = grid.log_weights()
    log_z = float(special.logsumexp(log_f + lw0[:, None] + lw1[None, :]))
    ratio = _boundary_ratio(log_f)
    return QuadratureResult(value=log_z, boundary_ratio=ratio, flagged=ratio > BOUNDARY_TOL)


def grid_kl(spec, target, grid: GridSpec, q_grid: GridSpec = None):
    """``KL(q || pi)`` with ``pi`` normalized on ``grid``.

    ``q_grid`` (default ``grid``) is the box used to integrate against ``q``;
    a tight box around the support of ``q`` at high resolution keeps the
    trapezoid error small when ``q`` has sharp support edges.
    """
    log_z = grid_log_z(target, grid).value
    qg = grid if q_grid is None else q_grid
    pts = qg.points().reshape(-1, 2)
    log_q = _evaluate(lambda x: family_log_density(spec, x), pts)
    inside = np.isfinite(log_q)
    lw0, lw1 = qg.log_weights()
    lw = (lw0[:, None] + lw1[None, :]).ravel()
    lq = log_q[inside]
    q = np.exp(lq + lw[inside])
    integrand = lq + _evaluate(target.u, pts[inside])
    mass = q.sum()
    return float((q * integrand).sum() / mass + log_z)


def _gauss_legendre_cells(edges0, edges1, order):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    def per_axis(edges):
        lo, hi = edges[:-1, None], edges[1:, None]
        half = 0.5 * (hi - lo)
        return 0.5 * (hi + lo) + half * nodes, half * weights
    return per_axis(np.asarray(edges0, float)), per_axis(np.asarray(edges1, float))


def histogram_tv(samples, log_density, grid: GridSpec, order=8):
    """Total variation between an empirical histogram and a density.

    Cells are the ``resolution - 1`` intervals per axis of ``grid``. Each
    cell's probability is the Gauss-Legendre integral of the density over
    the cell. Mass falling outside the box on either side enters as one
    extra cell.
    """
    samples = np.asarray(samples, dtype=float)
    e0, e1 = grid.axes()
    counts, _, _ = np.histogram2d(samples[:, 0], samples[:, 1], bins=[e0, e1])
    p_hat = counts / samples.shape[0]
    (x0, w0), (x1, w1) = _gauss_legendre_cells(e0, e1, order)
    n0, n1 = x0.shape[0], x1.shape[0]
    p = np.empty((n0, n1))
    for i in range(n0):
        xa = np.broadcast_to(x0[i][:, None, None], (order, n1, order))
        xb = np.broadcast_to(x1[None, :, :], (order, n1, order))
        pts = np.stack([xa, xb], -1).reshape(-1, 2)
        with np.errstate(divide="ignore", over="ignore"):
            dens = np.exp(np.asarray(log_density(pts), dtype=float)).reshape(order, n1, order)
        p[i] = np.einsum("a,anb,nb->n", w0[i], dens, w1)
    outside_hat = 1.0 - p_hat.sum()
    outside = max(1.0 - p.sum(), 0.0)
    return float(0.5 * (np.abs(p_hat - p).sum() + abs(outside_hat - outside)))


def support_box(spec, resolution=1000, gauss_sd=9.0, pad=1e-9):
    """A box enclosing the (effective) support of a 2-D family.

    Copula-type kinds have compact support, the image of the flip box
    ``[eps, 1-eps]^2`` under the marginals and rotation. Gaussian kinds are
    cut at ``gauss_sd`` marginal standard deviations.
    """
    if spec.d != 2:
        raise ConfigurationError("support_box is two-dimensional")
    if spec.kind == "mixture":
        boxes = [support_box(c, resolution, gauss_sd, pad) for c in spec.components]
        lo = np.min([b.lower for b in boxes], axis=0)
        hi = np.max([b.upper for b in boxes], axis=0)
        return GridSpec(tuple(lo), tuple(hi), resolution)
    if spec.kind in GAUSS_KINDS:
        mu, L = spec.gauss
        sd = np.sqrt((L * L).sum(axis=1))
        return GridSpec(tuple(mu - gauss_sd * sd), tuple(mu + gauss_sd * sd), resolution)
    m, mask = spec.marginals, spec.mask
    e_lo = special.ndtri(mask.epsilon)
    lo_p = m.mu + m.sigma * e_lo
    hi_p = m.mu - m.sigma * e_lo
    corners = np.array([[lo_p[0], lo_p[1]], [lo_p[0], hi_p[1]],
                        [hi_p[0], lo_p[1]], [hi_p[0], hi_p[1]]])
    if spec.kind in ROT_KINDS:
        corners = corners @ build_butterfly(2, spec.rotation).dense().T
    span = corners.max(0) - corners.min(0)
    lo = corners.min(0) - pad * span
    hi = corners.max(0) + pad * span
    return GridSpec(tuple(lo), tuple(hi), resolution)


def finite_diff_grad(f, x, step=1e-5):
    """Central-difference gradient of a scalar function.

    A non-finite function value raises ``NumericalError`` whose ``index`` is
    the offending coordinate.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = step
        hi, lo = float(f(x + e)), float(f(x - e))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericalError(f"non-finite value when perturbing coordinate {i}", index=i)
        out.flat[i] = (hi - lo) / (2.0 * step)
    return out


def frozen_level_noise(spec, noise, new_spec):
    """Re-express base noise drawn under ``spec`` for ``new_spec``.

    Gamma variates are kept at their CDF level ``P(shape, z)`` and re-solved
    at the new shapes; other noise types are shape-free and returned as is.
    """
    if spec.kind == "mixture":
        return [frozen_level_noise(c, z, nc)
                for c, z, nc in zip(spec.components, noise, new_spec.components)]
    if spec.kind not in COPULA_KINDS:
        return noise
    old = spec.theta.shapes
    new = new_spec.theta.shapes
    out = np.array(noise, dtype=float, copy=True)
    for j in np.flatnonzero(old != new):
        col = noise[:, j]
        # solve in whichever tail keeps the level well conditioned
        lower = specfn.reg_inc_gamma(old[j], col)
        upper = special.gammaincc(old[j], col)
        lo_side = lower <= 0.5
        res = np.empty_like(col)
        if lo_side.any():
            res[lo_side] = specfn.inv_reg_inc_gamma(new[j], lower[lo_side])
        if (~lo_side).any():
            res[~lo_side] = special.gammainccinv(new[j], upper[~lo_side])
        out[:, j] = res
    return out


def frozen_level_fd_grad(spec, value_fn, noise, step=1e-5):
    """Finite-difference gradient of ``value_fn(spec', noise')`` in the raw parameters.

    ``noise'`` is ``noise`` re-solved at the perturbed parameters with the
    CDF levels held fixed.
    """
    p0 = spec.params

    def f(p):
        s = spec.with_params(p)
        return value_fn(s, frozen_level_noise(spec, noise, s))

    return finite_diff_grad(f, p0, step)


@dataclass
class OracleRecord:
    quantity: str
    target: str
    family: str
    value: float
    tolerance: float
    method: str
    grid: dict = None
    seed: int = None


def write_records(records, path, header=None):
    doc = {"header": header or {}, "records": [asdict(r) for r in records]}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_records(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return [OracleRecord(**r) for r in doc["records"]], doc.get("header", {})
