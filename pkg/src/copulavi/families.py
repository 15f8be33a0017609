"""Variational families: copula-like flows, independence-copula flows,
Gaussian baselines and stratified mixtures.

A :class:`FamilySpec` carries a flat vector of unconstrained parameters plus
frozen structure (kind, dimension, flip mask, mixture components). For every
non-mixture kind three operations are provided, all vectorized over a batch of
Monte Carlo draws:

* ``forward(spec, noise)`` pushes base noise to ``x`` and returns ``log q(x)``
  accumulated along the way;
* ``forward_vjp(spec, cache, gx, glq)`` back-propagates cotangents on ``x``
  and ``log q`` to the unconstrained parameters, with the base noise held at
  fixed standardized levels;
* ``inverse(spec, x, grads)`` evaluates ``log q`` at arbitrary points through
  the inverse flow, optionally with per-sample gradients in ``x`` and in the
  parameters.

Parameter ordering (the ``layout``) for each kind::

    copula_rot    a, b, alpha[d], mu[d], log_sigma[d], nu[d-1]
    copula_norot  a, b, alpha[d], mu[d], log_sigma[d]
    indep_rot     mu[d], log_sigma[d], nu[d-1]
    indep_norot   mu[d], log_sigma[d]
    gauss_meanfield  mu[d], log_sigma[d]
    gauss_fullcov    mu[d], diag[d], offdiag[d(d-1)/2]
    mixture       logits[K], component 1 ..., component K ...

``a``, ``b``, ``alpha`` and the full-covariance ``diag`` are stored through the
inverse softplus.
"""
from dataclasses import dataclass, field, replace
import json

import numpy as np
from scipy import linalg, special

from . import specfn
from .copula import (UNSUPPORTED, FlipMask, ThetaParams, flip_forward, flip_inverse,
                     flip_log_det, log_density_ctheta_grad, sample_flip_mask)
from .exceptions import ConfigurationError, DomainError
from .rotation import RotationParams, build_butterfly, apply_rotation, apply_rotation_transpose, rotation_vjp
from .sampling import RngState, base_draw_from_gammas, implicit_dz_dshape, sample_gamma

__all__ = [
    "KINDS",
    "MarginalParams",
    "FamilySpec",
    "FlowSample",
    "param_layout",
    "n_params",
    "quantile_forward",
    "quantile_inverse",
    "init_family",
    "family_sample",
    "family_log_density",
    "draw_noise",
    "forward",
    "forward_vjp",
    "inverse",
    "mixture_weights",
    "save_family",
    "load_family",
    "family_to_dict",
    "family_from_dict",
]

COPULA_KINDS = ("copula_rot", "copula_norot")
INDEP_KINDS = ("indep_rot", "indep_norot")
ROT_KINDS = ("copula_rot", "indep_rot")
GAUSS_KINDS = ("gauss_meanfield", "gauss_fullcov")
KINDS = COPULA_KINDS + INDEP_KINDS + GAUSS_KINDS + ("mixture",)

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class MarginalParams:
    mu: np.ndarray
    log_sigma: np.ndarray

    @property
    def sigma(self):
        return np.exp(self.log_sigma)


def quantile_forward(u, m):
    """Gaussian quantile map ``x' = mu + sigma * Phi^{-1}(u)``.

    Returns ``(x_prime, log_det)`` with ``log_det = sum(log sigma - log phi(e))``.
    """
    u = np.asarray(u, dtype=float)
    if np.any(u <= 0) or np.any(u >= 1):
        raise DomainError("quantile map needs u strictly inside (0, 1)")
    e = specfn.normal_quantile(u)
    x_prime = m.mu + m.sigma * e
    log_det = (m.log_sigma - specfn.normal_logpdf(e)).sum(axis=-1)
    return x_prime, log_det


def quantile_inverse(x_prime, m):
    """Inverse of :func:`quantile_forward`; ``log_det`` is that of the inverse map."""
    e = (np.asarray(x_prime, dtype=float) - m.mu) / m.sigma
    u = specfn.normal_cdf(e)
    log_det = (specfn.normal_logpdf(e) - m.log_sigma).sum(axis=-1)
    return u, log_det


# --------------------------------------------------------------------- layout

def _simple_layout(kind, d):
    sizes = []
    if kind in COPULA_KINDS:
        sizes += [("a", 1), ("b", 1), ("alpha", d)]
    if kind in COPULA_KINDS + INDEP_KINDS + ("gauss_meanfield",):
        sizes += [("mu", d), ("log_sigma", d)]
    if kind in ROT_KINDS:
        sizes += [("nu", d - 1)]
    if kind == "gauss_fullcov":
        sizes += [("mu", d), ("diag", d), ("offdiag", d * (d - 1) // 2)]
    out, start = {}, 0
    for name, size in sizes:
        out[name] = slice(start, start + size)
        start += size
    return out, start


def param_layout(spec):
    """Map from parameter name to slice of ``spec.params``.

    Mixture components appear as ``component{k}.{name}``.
    """
    if spec.kind != "mixture":
        return _simple_layout(spec.kind, spec.d)[0]
    K = len(spec.components)
    out = {"logits": slice(0, K)}
    start = K
    for k, comp in enumerate(spec.components):
        for name, sl in param_layout(comp).items():
            out[f"component{k}.{name}"] = slice(start + sl.start, start + sl.stop)
        start += n_params(comp)
    return out


def n_params(spec):
    if spec.kind == "mixture":
        return len(spec.components) + sum(n_params(c) for c in spec.components)
    return _simple_layout(spec.kind, spec.d)[1]


def _tril(d):
    return np.tril_indices(d, -1)


@dataclass(frozen=True)
class FamilySpec:
    kind: str
    d: int
    params: np.ndarray
    mask: FlipMask = None
    components: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown family kind {self.kind!r}")
        params = np.asarray(self.params, dtype=float).ravel().copy()
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "components", tuple(self.components))
        if self.kind == "mixture":
            if not self.components:
                raise ConfigurationError("mixture needs at least one component")
            if any(c.kind == "mixture" or c.d != self.d for c in self.components):
                raise ConfigurationError("mixture components must be non-mixture families of equal dimension")
        if params.size != n_params(self):
            raise ConfigurationError(f"{self.kind} with d={self.d} needs {n_params(self)} parameters, got {params.size}")
        needs_mask = self.kind in COPULA_KINDS + INDEP_KINDS
        if needs_mask and (self.mask is None or self.mask.d != self.d):
            raise ConfigurationError(f"{self.kind} needs a flip mask of dimension {self.d}")
        if not np.all(np.isfinite(params)):
            raise DomainError("family parameters must be finite")

    def __eq__(self, other):
        if not isinstance(other, FamilySpec):
            return NotImplemented
        return family_to_dict(self) == family_to_dict(other)

    def with_params(self, params):
        params = np.asarray(params, dtype=float)
        if self.kind != "mixture":
            return replace(self, params=params)
        comps, start = [], len(self.components)
        for c in self.components:
            n = n_params(c)
            comps.append(c.with_params(params[start:start + n]))
            start += n
        return replace(self, params=params, components=tuple(comps))

    def _get(self, name):
        return self.params[param_layout(self)[name]]

    @property
    def theta(self):
        if self.kind not in COPULA_KINDS:
            return None
        return ThetaParams(a=float(specfn.softplus(self._get("a")[0])),
                           b=float(specfn.softplus(self._get("b")[0])),
                           alpha=specfn.softplus(self._get("alpha")))

    @property
    def marginals(self):
        if self.kind not in COPULA_KINDS + INDEP_KINDS + ("gauss_meanfield",):
            return None
        return MarginalParams(mu=self._get("mu"), log_sigma=self._get("log_sigma"))

    @property
    def rotation(self):
        if self.kind not in ROT_KINDS:
            return None
        return RotationParams(nu=self._get("nu"))

    @property
    def gauss(self):
        """``(mean, lower-triangular scale)`` for Gaussian kinds."""
        if self.kind == "gauss_meanfield":
            return self._get("mu"), np.diag(np.exp(self._get("log_sigma")))
        if self.kind == "gauss_fullcov":
            L = np.diag(specfn.softplus(self._get("diag")))
            L[_tril(self.d)] = self._get("offdiag")
            return self._get("mu"), L
        return None

    @property
    def weights(self):
        return mixture_weights(self) if self.kind == "mixture" else None


def mixture_weights(spec):
    logits = spec.params[: len(spec.components)]
    return np.exp(logits - special.logsumexp(logits))


@dataclass
class FlowSample:
    """A batch of draws with intermediate states (rows are samples)."""

    x: np.ndarray
    log_q: np.ndarray
    v: np.ndarray = None
    u: np.ndarray = None
    x_prime: np.ndarray = None
    base: object = None
    component: np.ndarray = None


# --------------------------------------------------------------- noise draws

def draw_noise(spec, rng, n):
    """Base randomness for ``n`` draws.

    Copula kinds: Gamma variates (n, d + 2) at the current shapes.
    Independence kinds: uniforms (n, d). Gaussian kinds: normals (n, d).
    Mixtures: a list with one array of ``n`` draws per component.
    """
    n = int(n)
    if spec.kind == "mixture":
        return [draw_noise(c, rng, n) for c in spec.components]
    if spec.kind in COPULA_KINDS:
        shapes = np.broadcast_to(spec.theta.shapes, (n, spec.d + 2))
        return np.asarray(sample_gamma(shapes, rng)).reshape(n, spec.d + 2)
    if spec.kind in INDEP_KINDS:
        v = rng.uniform((n, spec.d))
        return np.where(v > 0, v, 0.5 / 2**53)
    return rng.normal((n, spec.d))


# ------------------------------------------------------------ forward paths

@dataclass
class _Cache:
    noise: np.ndarray
    x: np.ndarray
    log_q: np.ndarray
    extra: dict = field(default_factory=dict)


def _marginal_rotation_forward(spec, v, logc, cache_extra):
    mask = spec.mask
    m = spec.marginals
    u = flip_forward(v, mask)
    e = special.ndtri(u)
    sigma = m.sigma
    x_prime = m.mu + sigma * e
    log_q = (logc - flip_log_det(mask) - m.log_sigma.sum()
             + (-0.5 * e * e - 0.5 * _LOG_2PI).sum(axis=-1))
    if spec.kind in ROT_KINDS:
        op = build_butterfly(spec.d, spec.rotation)
        x = apply_rotation(x_prime, op)
        cache_extra["op"] = op
    else:
        x = x_prime
    cache_extra.update(v=v, u=u, e=e, x_prime=x_prime)
    return x, log_q


def forward(spec, noise):
    """Push base noise through the flow. Returns a cache with ``x``, ``log_q``."""
    if spec.kind == "mixture":
        raise ConfigurationError("use family_sample / elbo routines for mixtures")
    noise = np.atleast_2d(np.asarray(noise, dtype=float))
    extra = {}
    if spec.kind in COPULA_KINDS:
        theta = spec.theta
        base = base_draw_from_gammas(noise)
        logc, grad_v, grad_a, grad_b, grad_alpha = log_density_ctheta_grad(base.v, theta)
        extra.update(base=base, theta=theta, grad_v=grad_v, grad_a=grad_a,
                     grad_b=grad_b, grad_alpha=grad_alpha)
        x, log_q = _marginal_rotation_forward(spec, base.v, logc, extra)
    elif spec.kind in INDEP_KINDS:
        x, log_q = _marginal_rotation_forward(spec, noise, np.zeros(noise.shape[0]), extra)
    elif spec.kind == "gauss_meanfield":
        mu, log_sigma = spec.marginals.mu, spec.marginals.log_sigma
        x = mu + np.exp(log_sigma) * noise
        log_q = -log_sigma.sum() - 0.5 * (noise * noise).sum(-1) - 0.5 * spec.d * _LOG_2PI
    else:
        mu, L = spec.gauss
        x = mu + noise @ L.T
        log_q = (-np.log(np.diag(L)).sum() - 0.5 * (noise * noise).sum(-1)
                 - 0.5 * spec.d * _LOG_2PI)
        extra["L"] = L
    return _Cache(noise=noise, x=x, log_q=log_q, extra=extra)


def _softplus_grad(raw):
    return special.expit(raw)


def forward_vjp(spec, cache, gx, glq):
    """Gradient of ``sum_s gx[s] . x[s] + glq[s] * log_q[s]`` in the
    unconstrained parameters, base noise held at fixed levels."""
    gx = np.atleast_2d(np.asarray(gx, dtype=float))
    n, d = gx.shape
    glq = np.broadcast_to(np.asarray(glq, dtype=float), (n,))
    lay = param_layout(spec)
    grad = np.zeros(n_params(spec))
    ex = cache.extra

    if spec.kind in GAUSS_KINDS:
        eps = cache.noise
        if spec.kind == "gauss_meanfield":
            sigma = np.exp(spec.marginals.log_sigma)
            grad[lay["mu"]] = gx.sum(0)
            grad[lay["log_sigma"]] = (gx * eps).sum(0) * sigma - glq.sum()
        else:
            L = ex["L"]
            grad[lay["mu"]] = gx.sum(0)
            gL = gx.T @ eps
            raw = spec.params[lay["diag"]]
            grad[lay["diag"]] = (np.diag(gL) - glq.sum() / np.diag(L)) * _softplus_grad(raw)
            grad[lay["offdiag"]] = gL[_tril(d)]
        return grad

    m = spec.marginals
    sigma = m.sigma
    e = ex["e"]
    if spec.kind in ROT_KINDS:
        g_xp, g_nu = rotation_vjp(ex["x_prime"], ex["op"], gx)
        grad[lay["nu"]] = g_nu
    else:
        g_xp = gx
    grad[lay["mu"]] = g_xp.sum(0)
    grad[lay["log_sigma"]] = (g_xp * e).sum(0) * sigma - glq.sum()
    # d log phi(e) / de = -e
    g_e = g_xp * sigma - glq[:, None] * e
    phi = np.exp(-0.5 * e * e - 0.5 * _LOG_2PI)
    g_v = (g_e / phi) * spec.mask.slope
    if spec.kind in INDEP_KINDS:
        return grad

    theta = ex["theta"]
    base = ex["base"]
    g_v = g_v + glq[:, None] * ex["grad_v"]
    grad_shape = np.zeros(d + 2)
    grad_shape[:d] = (glq[:, None] * ex["grad_alpha"]).sum(0)
    grad_shape[d] = (glq * ex["grad_a"]).sum()
    grad_shape[d + 1] = (glq * ex["grad_b"]).sum()

    z = base.z
    rows = np.arange(n)
    k = base.argmax
    v = base.v
    g = base.g
    zk = z[rows, k]
    # v_i = g z_i / z_k
    g_z = np.zeros_like(z)
    g_z[:, :d] = g_v * (g / zk)[:, None]
    g_z[rows, k] = -((g_v * v).sum(1) - g_v[rows, k] * v[rows, k]) / zk
    g_g = (g_v * v).sum(1) / g
    s = z[:, d] + z[:, d + 1]
    g_z[:, d] = g_g * z[:, d + 1] / (s * s)
    g_z[:, d + 1] = -g_g * z[:, d] / (s * s)
    dz = implicit_dz_dshape(z, theta.shapes)
    grad_shape += (g_z * dz).sum(0)
    raw_shape = np.concatenate([spec.params[lay["alpha"]], spec.params[lay["a"]], spec.params[lay["b"]]])
    grad_raw = grad_shape * _softplus_grad(raw_shape)
    grad[lay["alpha"]] = grad_raw[:d]
    grad[lay["a"]] = grad_raw[d]
    grad[lay["b"]] = grad_raw[d + 1]
    return grad


# ------------------------------------------------------------- inverse path

def _rotation_transpose_vjp(x, op, grad_out):
    """Backward pass of ``x' = R.T x``; per-sample angle gradients."""
    y = np.atleast_2d(np.asarray(x, dtype=float)).copy()
    inputs = []
    for layer in op.layers:
        inputs.append(y.copy())
        c, s = op.cos[layer.angle], op.sin[layer.angle]
        xp, xq = y[:, layer.p], y[:, layer.q]
        y[:, layer.p] = c * xp + s * xq
        y[:, layer.q] = -s * xp + c * xq
    g = np.atleast_2d(np.asarray(grad_out, dtype=float)).copy()
    grad_nu = np.zeros((g.shape[0], op.nu.size))
    for layer, inp in zip(reversed(op.layers), reversed(inputs)):
        c, s = op.cos[layer.angle], op.sin[layer.angle]
        xp, xq = inp[:, layer.p], inp[:, layer.q]
        gp, gq = g[:, layer.p], g[:, layer.q]
        contrib = gp * (-s * xp + c * xq) + gq * (-c * xp - s * xq)
        for col, ang in enumerate(layer.angle):
            grad_nu[:, ang] += contrib[:, col]
        g[:, layer.p] = c * gp - s * gq
        g[:, layer.q] = s * gp + c * gq
    return g, grad_nu


def inverse(spec, x, grads=False):
    """``log q(x)`` through the inverse flow.

    With ``grads=True`` returns ``(log_q, grad_x, grad_params)`` where
    ``grad_params`` has one row per point. Unsupported points get
    :data:`UNSUPPORTED` and zero gradients.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if np.any(np.isnan(x)):
        raise DomainError("NaN in density argument")
    n, d = x.shape
    if d != spec.d:
        raise ConfigurationError(f"expected dimension {spec.d}, got {d}")
    if spec.kind == "mixture":
        return _mixture_inverse(spec, x, grads)
    P = n_params(spec)
    lay = param_layout(spec)

    if spec.kind in GAUSS_KINDS:
        mu, L = spec.gauss
        r = x - mu
        e = linalg.solve_triangular(L, r.T, lower=True).T
        log_q = -np.log(np.diag(L)).sum() - 0.5 * (e * e).sum(-1) - 0.5 * d * _LOG_2PI
        if not grads:
            return log_q
        w = linalg.solve_triangular(L, e.T, lower=True, trans="T").T  # L^{-T} e
        gp = np.zeros((n, P))
        gp[:, lay["mu"]] = w
        if spec.kind == "gauss_meanfield":
            gp[:, lay["log_sigma"]] = -1.0 + e * e
        else:
            raw = spec.params[lay["diag"]]
            diag = np.diag(L)
            # d/dL of -1/2 |L^{-1} r|^2 = (L^{-T} e) e^T
            gL = w[:, :, None] * e[:, None, :]
            gp[:, lay["diag"]] = (np.einsum("nii->ni", gL) - 1.0 / diag) * _softplus_grad(raw)
            ti = _tril(d)
            gp[:, lay["offdiag"]] = gL[:, ti[0], ti[1]]
        return log_q, -w, gp

    m = spec.marginals
    sigma = m.sigma
    op = build_butterfly(d, spec.rotation) if spec.kind in ROT_KINDS else None
    x_prime = apply_rotation_transpose(x, op) if op is not None else x
    e = (x_prime - m.mu) / sigma
    u = special.ndtr(e)
    v, inside = flip_inverse(u, spec.mask)
    supported = inside & np.all((v > 0) & (v < 1), axis=-1)
    vs = np.where(supported[:, None], v, 0.5)
    log_phi = -0.5 * e * e - 0.5 * _LOG_2PI
    base_terms = -flip_log_det(spec.mask) - m.log_sigma.sum() + log_phi.sum(-1)
    if spec.kind in COPULA_KINDS:
        theta = spec.theta
        logc, grad_v, grad_a, grad_b, grad_alpha = log_density_ctheta_grad(vs, theta)
    else:
        logc = np.zeros(n)
        grad_v = np.zeros((n, d))
    log_q = np.where(supported, logc + base_terms, UNSUPPORTED)
    if not grads:
        return log_q

    phi = np.exp(log_phi)
    # d log q / d e
    g_e = grad_v * phi / spec.mask.slope - e
    g_xp = g_e / sigma
    gp = np.zeros((n, P))
    gp[:, lay["mu"]] = -g_xp
    gp[:, lay["log_sigma"]] = -1.0 - g_e * e
    if op is not None:
        g_x, g_nu = _rotation_transpose_vjp(x, op, g_xp)
        gp[:, lay["nu"]] = g_nu
    else:
        g_x = g_xp
    if spec.kind in COPULA_KINDS:
        sp = _softplus_grad
        gp[:, lay["a"]] = (grad_a * sp(spec.params[lay["a"]]))[:, None]
        gp[:, lay["b"]] = (grad_b * sp(spec.params[lay["b"]]))[:, None]
        gp[:, lay["alpha"]] = grad_alpha * sp(spec.params[lay["alpha"]])
    g_x = np.where(supported[:, None], g_x, 0.0)
    gp = np.where(supported[:, None], gp, 0.0)
    return log_q, g_x, gp


def _mixture_inverse(spec, x, grads):
    w = mixture_weights(spec)
    K = len(spec.components)
    parts = [inverse(c, x, grads) for c in spec.components]
    lq = np.stack([p[0] if grads else p for p in parts], axis=1)
    with np.errstate(divide="ignore"):
        lw = np.log(w)
    joint = lq + lw
    log_q = special.logsumexp(joint, axis=1)
    if not grads:
        return log_q
    finite = np.isfinite(log_q)
    with np.errstate(invalid="ignore"):
        resp = np.where(finite[:, None], np.exp(joint - log_q[:, None]), 0.0)
    n = x.shape[0]
    gx = sum(resp[:, [k]] * parts[k][1] for k in range(K))
    gp = np.zeros((n, n_params(spec)))
    gp[:, :K] = np.where(finite[:, None], resp - w, 0.0)
    start = K
    for k, comp in enumerate(spec.components):
        npk = n_params(comp)
        gp[:, start:start + npk] = resp[:, [k]] * parts[k][2]
        start += npk
    return log_q, gx, gp


# ---------------------------------------------------------------- sampling

def family_sample(spec, rng, n=1):
    """Draw ``n`` samples with their log-density (forward pass).

    Mixture draws are stratified: ``n`` draws per component, with
    ``component`` recording the source and ``log_q`` the full mixture density.
    """
    rng = rng if isinstance(rng, RngState) else RngState(rng)
    if spec.kind == "mixture":
        parts = [family_sample(c, rng, n) for c in spec.components]
        x = np.concatenate([p.x for p in parts])
        comp = np.repeat(np.arange(len(parts)), n)
        log_q = _mixture_log_q_at_samples(spec, parts)
        return FlowSample(x=x, log_q=log_q, component=comp,
                          base=[p.base for p in parts])
    cache = forward(spec, draw_noise(spec, rng, n))
    ex = cache.extra
    return FlowSample(x=cache.x, log_q=cache.log_q, v=ex.get("v"), u=ex.get("u"),
                      x_prime=ex.get("x_prime", cache.x), base=ex.get("base", cache.noise))


def _mixture_log_q_at_samples(spec, parts):
    """Mixture density at stratified samples; own-component terms come from
    the forward pass, cross terms from the inverse flow."""
    w = mixture_weights(spec)
    with np.errstate(divide="ignore"):
        lw = np.log(w)
    out = []
    for k, pk in enumerate(parts):
        terms = []
        for j, comp in enumerate(spec.components):
            lq = pk.log_q if j == k else inverse(comp, pk.x)
            terms.append(lw[j] + lq)
        out.append(special.logsumexp(np.stack(terms, 1), axis=1))
    return np.concatenate(out)


def family_log_density(spec, x):
    x = np.asarray(x, dtype=float)
    out = inverse(spec, x)
    return float(out[0]) if x.ndim == 1 else out


# ---------------------------------------------------------- initialization

_INIT_DEFAULTS = {
    "target_mean": 0.0,
    "log_sigma": -3.0,
    "a_raw": 15.0,
    "b_raw": 2.0,
    "alpha_raw_mean": 2.0,
    "alpha_raw_var": 0.01,
    "nu_range": 0.2,
    "epsilon": 0.01,
    "p": 0.5,
    "init_samples": 1000,
    "n_components": 3,
    "component_kind": "copula_rot",
    "component_spread": 0.0,
    "logits": 0.0,
    "flips": None,
}


def init_family(kind, d, config=None, rng=None):
    """Initial spec in unconstrained parameters.

    Softplus-inverse values: ``a = 15``, ``b = 2``, ``alpha_i ~ N(2, 0.01)``;
    angles ``nu_i ~ U(-0.2, 0.2)``; ``log sigma_i = -3``. ``flips`` (one
    boolean per coordinate) fixes the flip-mask orientation instead of
    drawing it. ``mu`` is set so that the marginal quantile of a Monte Carlo estimate of
    the mean of ``u`` lands on ``target_mean``.
    """
    cfg = dict(_INIT_DEFAULTS)
    cfg.update(config or {})
    unknown = set(cfg) - set(_INIT_DEFAULTS)
    if unknown:
        raise ConfigurationError(f"unknown init options: {sorted(unknown)}")
    if kind not in KINDS:
        raise ConfigurationError(f"unknown family kind {kind!r}")
    d = int(d)
    if d < 1:
        raise ConfigurationError("dimension must be >= 1")
    rng = rng if isinstance(rng, RngState) else RngState(0 if rng is None else rng)
    target = np.broadcast_to(np.asarray(cfg["target_mean"], dtype=float), (d,)).copy()

    if kind == "mixture":
        K = int(cfg["n_components"])
        if K < 1:
            raise ConfigurationError("n_components must be >= 1")
        sub = {k: v for k, v in cfg.items()
               if k not in ("n_components", "component_kind", "logits", "component_spread", "flips")}
        comps = []
        for k in range(K):
            ck = dict(sub)
            spread = float(cfg["component_spread"])
            if spread:
                ck["target_mean"] = target + spread * rng.normal(d)
            comps.append(init_family(cfg["component_kind"], d, ck, rng))
        logits = np.full(K, float(cfg["logits"]))
        params = np.concatenate([logits] + [c.params for c in comps])
        return FamilySpec(kind="mixture", d=d, params=params, components=tuple(comps))

    layout, P = _simple_layout(kind, d)
    params = np.zeros(P)
    log_sigma = np.full(d, float(cfg["log_sigma"]))
    if kind in GAUSS_KINDS:
        params[layout["mu"]] = target
        if kind == "gauss_meanfield":
            params[layout["log_sigma"]] = log_sigma
        else:
            params[layout["diag"]] = specfn.softplus_inverse(np.exp(log_sigma))
        return FamilySpec(kind=kind, d=d, params=params)

    mask = sample_flip_mask(d, rng, epsilon=cfg["epsilon"], p=cfg["p"])
    if cfg["flips"] is not None:
        # explicit orientation; the random draw above still advances the stream
        flips = np.asarray(cfg["flips"], dtype=bool).reshape(-1)
        if flips.size != d:
            raise ConfigurationError(f"flips needs {d} entries")
        eps = float(cfg["epsilon"])
        mask = FlipMask(delta=np.where(flips, eps, 1.0 - eps), epsilon=eps, p=cfg["p"], seed=mask.seed)
    if kind in COPULA_KINDS:
        params[layout["a"]] = cfg["a_raw"]
        params[layout["b"]] = cfg["b_raw"]
        params[layout["alpha"]] = cfg["alpha_raw_mean"] + np.sqrt(cfg["alpha_raw_var"]) * rng.normal(d)
    if kind in ROT_KINDS:
        r = float(cfg["nu_range"])
        params[layout["nu"]] = rng.uniform(d - 1) * 2.0 * r - r
    params[layout["log_sigma"]] = log_sigma
    spec = FamilySpec(kind=kind, d=d, params=params, mask=mask)
    # mean of u under the base + flip, estimated by Monte Carlo
    n0 = int(cfg["init_samples"])
    noise = draw_noise(spec, rng, n0)
    if kind in COPULA_KINDS:
        v = base_draw_from_gammas(noise).v
    else:
        v = noise
    u_bar = flip_forward(v, mask).mean(axis=0)
    params[layout["mu"]] = target - np.exp(log_sigma) * special.ndtri(u_bar)
    return FamilySpec(kind=kind, d=d, params=params, mask=mask)


# --------------------------------------------------------------- checkpoint

def family_to_dict(spec):
    out = {"kind": spec.kind, "d": int(spec.d)}
    if spec.kind == "mixture":
        out["logits"] = [float(v) for v in spec.params[: len(spec.components)]]
        out["components"] = [family_to_dict(c) for c in spec.components]
        return out
    out["params"] = {name: [float(v) for v in spec.params[sl]]
                     for name, sl in param_layout(spec).items()}
    if spec.mask is not None:
        out["mask"] = {"delta": [float(v) for v in spec.mask.delta],
                       "epsilon": float(spec.mask.epsilon), "p": float(spec.mask.p),
                       "seed": spec.mask.seed}
    return out


def family_from_dict(doc):
    kind, d = doc["kind"], int(doc["d"])
    if kind == "mixture":
        comps = tuple(family_from_dict(c) for c in doc["components"])
        params = np.concatenate([np.asarray(doc["logits"], float)] + [c.params for c in comps])
        return FamilySpec(kind=kind, d=d, params=params, components=comps)
    layout, P = _simple_layout(kind, d)
    params = np.zeros(P)
    for name, sl in layout.items():
        params[sl] = np.asarray(doc["params"][name], dtype=float)
    mask = None
    if "mask" in doc:
        m = doc["mask"]
        mask = FlipMask(delta=np.asarray(m["delta"], float), epsilon=m["epsilon"], p=m["p"], seed=m.get("seed"))
    return FamilySpec(kind=kind, d=d, params=params, mask=mask)


def save_family(spec, path, extra=None):
    doc = {"family": family_to_dict(spec)}
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_family(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return family_from_dict(doc["family"])
