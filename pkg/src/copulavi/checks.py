"""Invariant suite run by ``copulavi check``.

Each check is small (seconds) and independent. Results are plain records so
the CLI can emit them as JSON.
"""
from contextlib import contextmanager
from dataclasses import dataclass, asdict
import time

import numpy as np
from scipy import integrate, special, stats

from . import copula, families, specfn
from .copula import ThetaParams, log_density_ctheta
from .elbo import TrainConfig, elbo_from_noise, estimate_elbo, fit
from .families import KINDS, draw_noise, family_log_density, family_sample, init_family
from .oracle import GridSpec, finite_diff_grad, frozen_level_fd_grad, grid_log_z, support_box
from .rotation import apply_rotation, apply_rotation_transpose, build_butterfly, n_levels
from .sampling import RngState, implicit_dz_dshape, sample_base_draw
from .targets import (gaussian_target, generate_synthetic_logistic, horseshoe_posterior,
                      logistic_posterior, tiny_bnn_regression)

__all__ = ["CheckResult", "CHECKS", "run_checks", "inject_mutation", "MUTATIONS"]


@dataclass
class CheckResult:
    module: str
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def as_dict(self):
        return asdict(self)


CHECKS = []


def _check(module):
    def wrap(fn):
        CHECKS.append((module, fn.__name__, fn))
        return fn
    return wrap


# ------------------------------------------------------------------- specfn

@_check("specfn")
def dshape_matches_finite_differences():
    rng = np.random.default_rng(0)
    a = rng.uniform(0.1, 50, 200)
    x = rng.uniform(0.01, 100, 200)
    h = 1e-6 * a
    # difference whichever of P, Q = 1 - P is small, to avoid cancellation
    upper = special.gammainc(a, x) > 0.5
    fd_p = (special.gammainc(a + h, x) - special.gammainc(a - h, x)) / (2 * h)
    fd_q = (special.gammaincc(a - h, x) - special.gammaincc(a + h, x)) / (2 * h)
    fd = np.where(upper, fd_q, fd_p)
    got = specfn.reg_inc_gamma_dshape(a, x)
    keep = np.abs(fd) > 1e-8
    err = np.max(np.abs(got[keep] - fd[keep]) / np.abs(fd[keep]))
    return err < 1e-5, f"max relative error {err:.2e}"


@_check("specfn")
def inverse_gamma_round_trip():
    rng = np.random.default_rng(1)
    a = rng.uniform(0.1, 30, 500)
    u = rng.uniform(1e-6, 1 - 1e-6, 500)
    err = np.max(np.abs(specfn.reg_inc_gamma(a, specfn.inv_reg_inc_gamma(a, u)) - u))
    return err < 1e-12, f"max level error {err:.2e}"


# ------------------------------------------------------------ base sampling

@_check("base_sampling")
def max_coordinate_equals_beta_factor():
    worst = 0
    for d in (1, 2, 5, 50):
        th = ThetaParams(a=2.0, b=3.0, alpha=np.full(d, 1.5))
        draw = sample_base_draw(th, RngState(d), 10000)
        worst = max(worst, int(np.count_nonzero(draw.v.max(axis=1) != draw.g)))
    return worst == 0, f"{worst} mismatching draws"


@_check("base_sampling")
def implicit_derivative_matches_quantile_differences():
    rng = np.random.default_rng(2)
    shape = rng.uniform(0.2, 30, 300)
    level = rng.uniform(0.01, 0.99, 300)
    z = specfn.inv_reg_inc_gamma(shape, level)
    h = 1e-6 * shape
    fd = (specfn.inv_reg_inc_gamma(shape + h, level) - specfn.inv_reg_inc_gamma(shape - h, level)) / (2 * h)
    err = np.max(np.abs(implicit_dz_dshape(z, shape) - fd) / np.abs(fd))
    return err < 1e-4, f"max relative error {err:.2e}"


@_check("base_sampling")
def one_dimensional_marginal_is_beta():
    th = ThetaParams(a=2.5, b=1.5, alpha=np.array([1.0]))
    v = sample_base_draw(th, RngState(9), 100000).v[:, 0]
    ks = stats.kstest(v, stats.beta(2.5, 1.5).cdf).statistic
    return ks < 0.006, f"KS statistic {ks:.4f}"


# -------------------------------------------------------------- copula core

def integrate_ctheta(theta, tol=1e-7):
    """``c_theta`` over the unit square by adaptive quadrature, split on the diagonal."""
    f = lambda y, x: np.exp(log_density_ctheta(np.array([x, y]), theta))
    lo = integrate.dblquad(f, 0, 1, 0, lambda x: x, epsabs=tol, epsrel=tol)[0]
    hi = integrate.dblquad(f, 0, 1, lambda x: x, 1, epsabs=tol, epsrel=tol)[0]
    return lo + hi


@_check("copula_core")
def copula_density_normalized():
    worst = 0.0
    for a, b, alpha in ((2.0, 3.0, (1.5, 2.5)), (4.0, 1.6, (3.0, 0.8))):
        worst = max(worst, abs(integrate_ctheta(ThetaParams(a, b, np.array(alpha))) - 1))
    return worst < 1e-3, f"max |integral - 1| = {worst:.2e}"


@_check("copula_core")
def flip_round_trip():
    rng = RngState(4)
    mask = copula.sample_flip_mask(5, rng)
    v = rng.uniform((100, 5))
    back, inside = copula.flip_inverse(copula.flip_forward(v, mask), mask)
    err = np.max(np.abs(back - v))
    return bool(inside.all()) and err < 1e-12, f"max error {err:.2e}"


# --------------------------------------------------------------- flow stack

def _q_mass(spec, resolution=800):
    g = support_box(spec, resolution)
    lq = family_log_density(spec, g.points().reshape(-1, 2))
    lw0, lw1 = g.log_weights()
    return float(np.exp(special.logsumexp(lq + (lw0[:, None] + lw1[None, :]).ravel())))


@_check("flow_stack")
def family_density_normalized():
    worst, which = 0.0, None
    for kind in KINDS:
        spec = init_family(kind, 2, {"log_sigma": 0.0}, RngState(1))
        err = abs(_q_mass(spec) - 1)
        if err > worst:
            worst, which = err, kind
    return worst < 1e-2, f"max |integral - 1| = {worst:.2e} ({which})"


@_check("flow_stack")
def forward_inverse_consistency():
    worst = 0.0
    for kind in KINDS:
        spec = init_family(kind, 2, {"log_sigma": -1.0}, RngState(2))
        s = family_sample(spec, RngState(3), 1000)
        worst = max(worst, np.max(np.abs(s.log_q - family_log_density(spec, s.x))))
    return worst < 1e-9, f"max |difference| = {worst:.2e}"


@_check("flow_stack")
def rotation_orthogonal_and_sparse():
    rng = np.random.default_rng(5)
    worst, over = 0.0, []
    for d in (2, 3, 4, 5, 8, 17, 64):
        op = build_butterfly(d, rng.uniform(-np.pi, np.pi, d - 1))
        r = op.dense()
        worst = max(worst, np.max(np.abs(r.T @ r - np.eye(d))))
        x = rng.normal(size=d)
        op.multiplies = 0
        y = apply_rotation(x, op)
        worst = max(worst, np.max(np.abs(y - r @ x)))
        worst = max(worst, np.max(np.abs(apply_rotation_transpose(y, op) - x)))
        if op.multiplies > 4 * d * n_levels(d):
            over.append(d)
    return worst < 1e-12 and not over, f"max error {worst:.2e}; over budget: {over}"


# -------------------------------------------------------------- elbo engine

@_check("elbo_engine")
def gradient_matches_frozen_level_differences():
    target = horseshoe_posterior()
    worst, which = 0.0, None
    for kind in KINDS:
        rng = RngState(6)
        spec = init_family(kind, 2, {"log_sigma": -0.5}, rng)
        spec = spec.with_params(spec.params + 0.1 * rng.normal(spec.params.size))
        noise = draw_noise(spec, rng, 8)
        exact = elbo_from_noise(spec, target, noise, grad=True).gradient
        fd = frozen_level_fd_grad(spec, lambda s, z: elbo_from_noise(s, target, z, grad=False).value, noise)
        err = np.max(np.abs(exact - fd) / np.maximum(np.abs(fd), 1e-3))
        if err > worst:
            worst, which = err, kind
    return worst < 1e-4, f"max relative error {worst:.2e} ({which})"


@_check("elbo_engine")
def deterministic_training():
    target = horseshoe_posterior()
    spec = init_family("copula_rot", 2, {}, RngState(0))
    cfg = TrainConfig(iterations=50, elbo_eval_samples=100)
    a = [r.elbo for r in fit(spec, target, cfg).trace]
    b = [r.elbo for r in fit(spec, target, cfg).trace]
    return a == b, "identical traces" if a == b else "traces differ"


@_check("elbo_engine")
def exact_family_has_zero_elbo():
    target = gaussian_target([0.5, -1.0], [[1.0, 0.0], [0.3, 0.8]])
    spec = init_family("gauss_fullcov", 2, {}, RngState(0))
    mu, L = [0.5, -1.0], np.array([[1.0, 0.0], [0.3, 0.8]])
    raw = spec.params.copy()
    raw[:2] = mu
    raw[2:4] = specfn.softplus_inverse(np.diag(L))
    raw[4] = L[1, 0]
    rep = estimate_elbo(spec.with_params(raw), target, 1000, RngState(1))
    return abs(rep.value) < 1e-12, f"ELBO {rep.value:.2e}"


# ------------------------------------------------------------------ targets

@_check("targets")
def target_gradients_match_finite_differences():
    rng = np.random.default_rng(7)
    cases = [
        ("logistic", logistic_posterior(generate_synthetic_logistic(RngState(0, 7))), rng.normal(size=(20, 2)) * 3),
        ("horseshoe", horseshoe_posterior(), rng.normal(size=(20, 2))),
        ("gaussian", gaussian_target([1.0, 2.0], [[1.0, 0.0], [0.5, 2.0]]), rng.normal(size=(20, 2))),
        ("tiny_bnn", tiny_bnn_regression(), rng.normal(size=(20, 17))),
    ]
    worst, which = 0.0, None
    for name, t, pts in cases:
        for x in pts:
            fd = finite_diff_grad(t.u, x, 1e-6)
            g = t.grad_u(x)
            err = np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3))
            if err > worst:
                worst, which = err, name
    return worst < 1e-4, f"max relative error {worst:.2e} ({which})"


# ------------------------------------------------------------------- oracle

@_check("oracle")
def quadrature_of_normalized_gaussian():
    t = gaussian_target([0.3, -0.2], [[1.0, 0.0], [0.4, 0.7]])
    r = grid_log_z(t, GridSpec((-9.0, -9.0), (9.0, 9.0), 400))
    return abs(r.value) < 1e-3 and not r.flagged, f"log Z = {r.value:.2e}"


@_check("oracle")
def quadrature_resolution_converged():
    t = horseshoe_posterior()
    lo, hi = (-60.0, -40.0), (5.0, 30.0)
    a = grid_log_z(t, GridSpec(lo, hi, 400)).value
    b = grid_log_z(t, GridSpec(lo, hi, 800)).value
    return abs(a - b) < 1e-4, f"|change| on doubling = {abs(a - b):.2e}"


# ---------------------------------------------------------------- cli runner

@_check("cli_runner")
def checkpoint_round_trip():
    import json
    spec = init_family("mixture", 2, {}, RngState(3))
    doc = json.loads(json.dumps(families.family_to_dict(spec)))
    back = families.family_from_dict(doc)
    same = back == spec and np.array_equal(back.params, spec.params)
    return bool(same), "bit-exact" if same else "round trip differs"


# --------------------------------------------------------------- mutations

def _negated_flip_log_det(mask):
    return -copula.flip_log_det(mask)


MUTATIONS = {"flip_log_det_sign": (families, "flip_log_det", _negated_flip_log_det)}


@contextmanager
def inject_mutation(name):
    """Temporarily replace a function used by the flow with a faulty version."""
    module, attr, replacement = MUTATIONS[name]
    original = getattr(module, attr)
    setattr(module, attr, replacement)
    try:
        yield
    finally:
        setattr(module, attr, original)


def run_checks(names=None, mutation=None):
    """Run the suite (optionally a subset, optionally under a mutation)."""
    out = []
    selected = [c for c in CHECKS if names is None or c[1] in names]

    def go():
        for module, name, fn in selected:
            t0 = time.perf_counter()
            try:
                ok, detail = fn()
            except Exception as exc:  # a crashing check is a failing check
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            out.append(CheckResult(module, name, bool(ok), detail, time.perf_counter() - t0))

    if mutation:
        with inject_mutation(mutation):
            go()
    else:
        go()
    return out
