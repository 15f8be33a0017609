"""Acceptance criteria 1-9. Slow: the table reproductions dominate the runtime.

Each test records one pass/fail line; a summary block lists all of them at
the end of the session.
"""
import numpy as np
import pytest
from scipy import special, stats

from copulavi.checks import integrate_ctheta
from copulavi.copula import ThetaParams, log_density_ctheta
from copulavi.elbo import TrainConfig, elbo_from_noise, fit, monotone_violations
from copulavi.experiments import default_grid, run_reproduce
from copulavi.families import (KINDS, draw_noise, family_log_density, family_sample, forward,
                               init_family)
from copulavi.oracle import (GridSpec, frozen_level_fd_grad, frozen_level_noise, grid_kl, grid_log_z, histogram_tv,
                             support_box)
from copulavi.rotation import apply_rotation, build_butterfly, n_levels
from copulavi.sampling import RngState, sample_base_draw
from copulavi.targets import (BNNTarget, gaussian_target, horseshoe_posterior, target_from_config,
                              tiny_bnn_regression)

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def table2():
    return run_reproduce("table2", seed=0)


@pytest.fixture(scope="module")
def table1():
    return run_reproduce("table1", seed=0)


def _table_detail(report):
    rows = ", ".join(f"{r['kind']} {r['obtained']:+.3f} (ref {r['reference']:+.2f})" for r in report["rows"])
    return f"{rows}; ordering {report['ordering_passes']}/{len(report['per_seed'])}"


def _fit(report, kind, seed=0):
    return next(f for f in report["_fits"] if f["kind"] == kind and f["seed"] == seed)


def test_criterion_1_table2(table2, record):
    record(1, "Table 2 reproduction", table2["passed"], _table_detail(table2))
    assert table2["passed"]


def test_criterion_2_table1(table1, record):
    per_seed = "; ".join(f"seed {p['seed']}: " + " ".join(f"{v:+.3f}" for v in p["values"])
                         + ("" if p["ordering_ok"] else " (order fails)") for p in table1["per_seed"])
    record(2, "Table 1 reproduction", table1["passed"], f"{_table_detail(table1)}; {per_seed}")
    assert table1["passed"]


def test_criterion_3_sampler_matches_density(record):
    th = ThetaParams(a=2.0, b=2.0, alpha=[1.5, 1.5])
    v = sample_base_draw(th, RngState(2024), 1000000).v
    tv = histogram_tv(v, lambda x: log_density_ctheta(x, th), GridSpec((0.0, 0.0), (1.0, 1.0), 51))
    th1 = ThetaParams(a=2.0, b=3.0, alpha=[1.7])
    v1 = sample_base_draw(th1, RngState(2025), 100000).v[:, 0]
    ks = stats.kstest(v1, stats.beta(2.0, 3.0).cdf).statistic
    ok = tv <= 0.02 and ks < 0.006
    record(3, "sampler vs density", ok, f"TV {tv:.4f} (<= 0.02), KS {ks:.4f} (< 0.006)")
    assert ok


def _q_mass(spec, resolution=800):
    g = support_box(spec, resolution)
    lq = family_log_density(spec, g.points().reshape(-1, 2))
    lw0, lw1 = g.log_weights()
    return float(np.exp(special.logsumexp(lq + (lw0[:, None] + lw1[None, :]).ravel())))


def test_criterion_4_normalization(record):
    rng = np.random.default_rng(44)
    c_err = []
    for _ in range(5):
        a, b = rng.uniform(1.2, 5.0, 2)
        c_err.append(abs(integrate_ctheta(ThetaParams(a, b, rng.uniform(0.8, 3.0, 2))) - 1))
    q_err = {k: abs(_q_mass(init_family(k, 2, {"log_sigma": -0.5}, RngState(40))) - 1) for k in KINDS}
    worst_q = max(q_err, key=q_err.get)
    ok = max(c_err) <= 1e-3 and q_err[worst_q] <= 1e-2
    record(4, "normalization", ok,
           f"max |int c - 1| {max(c_err):.1e}; max |int q - 1| {q_err[worst_q]:.1e} ({worst_q})")
    assert ok


GRADIENT_TARGETS = {
    "horseshoe": (horseshoe_posterior(), [-2.0, -1.0]),
    "logistic": (target_from_config({"label": "logistic", "data_seed": 0}), [2.0, 1.0]),
    "gaussian": (gaussian_target([1.0, -1.0], [[1.0, 0.0], [0.5, 0.8]]), [1.0, -1.0]),
    "tiny_bnn": (tiny_bnn_regression(), 0.0),
}


def _flow_points(spec, noise):
    if spec.kind == "mixture":
        return np.vstack([forward(c, z).x for c, z in zip(spec.components, noise)])
    return forward(spec, noise).x


def _relu_pattern(target, spec, noise):
    w1, b1, _, _, _ = target.unpack(_flow_points(spec, noise))
    return np.einsum("ni,mih->mnh", target.train_x, w1) + b1[:, None, :] > 0


def _kink_free(target, spec, noise, step=1e-5):
    """True when no ReLU switches anywhere on the finite-difference stencil."""
    base = _relu_pattern(target, spec, noise)
    for i in range(spec.params.size):
        for sign in (-1.0, 1.0):
            p = spec.params.copy()
            p[i] += sign * step
            moved = spec.with_params(p)
            if not np.array_equal(_relu_pattern(target, moved, frozen_level_noise(spec, noise, moved)), base):
                return False
    return True


def _gradient_error(kind, target, centre, point):
    rng = RngState(500 + point)
    spec = init_family(kind, target.d, {"log_sigma": rng.uniform() * 2 - 2.5, "target_mean": centre}, rng)
    spec = spec.with_params(spec.params + 0.1 * rng.normal(spec.params.size))
    noise = draw_noise(spec, rng, 8)
    if isinstance(target, BNNTarget):
        # nudge: redraw the noise until the stencil avoids every ReLU kink
        for _ in range(50):
            if _kink_free(target, spec, noise):
                break
            noise = draw_noise(spec, rng, 8)
        else:
            raise AssertionError("no kink-free stencil found")
    exact = elbo_from_noise(spec, target, noise, grad=True).gradient
    fd = frozen_level_fd_grad(spec, lambda s, z: elbo_from_noise(s, target, z, grad=False).value, noise)
    return float(np.max(np.abs(exact - fd) / np.maximum(np.abs(fd), 1e-3)))


def test_criterion_5_gradient_exactness(record):
    worst, where = 0.0, None
    for name, (target, centre) in GRADIENT_TARGETS.items():
        for kind in KINDS:
            for point in range(20):
                err = _gradient_error(kind, target, centre, point)
                if err > worst:
                    worst, where = err, f"{kind} on {name}"
    ok = worst < 1e-4
    record(5, "gradient exactness", ok,
           f"max relative error {worst:.1e} ({where}); 20 points x {len(KINDS)} kinds x {len(GRADIENT_TARGETS)} targets")
    assert ok


def test_criterion_6_rotations(record):
    rng = np.random.default_rng(6)
    orth, agree, over = 0.0, 0.0, []
    for d in (2, 3, 4, 5, 8, 17, 64):
        op = build_butterfly(d, rng.uniform(-np.pi, np.pi, d - 1))
        r = op.dense()
        orth = max(orth, np.max(np.abs(r.T @ r - np.eye(d))))
        x = rng.normal(size=d)
        op.multiplies = 0
        agree = max(agree, np.max(np.abs(apply_rotation(x, op) - r @ x)))
        if op.multiplies > 4 * d * n_levels(d):
            over.append(d)
    nu = rng.uniform(-np.pi, np.pi, 3)
    (c1, c2, c3), (s1, s2, s3) = np.cos(nu), np.sin(nu)
    r4 = np.array([[c1 * c2, -s1 * c2, -c1 * s2, s1 * s2],
                   [s1 * c2, c1 * c2, -s1 * s2, -c1 * s2],
                   [c3 * s2, -s3 * s2, c3 * c2, -s3 * c2],
                   [s3 * s2, c3 * s2, s3 * c2, c3 * c2]])
    sym4 = np.max(np.abs(build_butterfly(4, nu).dense() - r4))
    nu5 = rng.uniform(-np.pi, np.pi, 4)
    c, s = np.cos(nu5), np.sin(nu5)
    f1 = np.array([[c[0], -s[0], 0, 0, 0], [s[0], c[0], 0, 0, 0], [0, 0, c[2], -s[2], 0],
                   [0, 0, s[2], c[2], 0], [0, 0, 0, 0, 1]])
    f2 = np.array([[c[1], 0, -s[1], 0, 0], [0, c[1], 0, -s[1], 0], [s[1], 0, c[1], 0, 0],
                   [0, s[1], 0, c[1], 0], [0, 0, 0, 0, 1]])
    f3 = np.array([[c[3], 0, 0, 0, -s[3]], [0, 1, 0, 0, 0], [0, 0, 1, 0, 0], [0, 0, 0, 1, 0],
                   [s[3], 0, 0, 0, c[3]]])
    sym5 = np.max(np.abs(build_butterfly(5, nu5).dense() - f1 @ f2 @ f3))
    ok = orth <= 1e-12 and agree <= 1e-12 and not over and sym4 <= 1e-12 and sym5 <= 1e-12
    record(6, "rotation correctness", ok,
           f"orthogonality {orth:.1e}, sparse/dense {agree:.1e}, d=4 {sym4:.1e}, d=5 {sym5:.1e}, "
           f"over multiply budget: {over or 'none'}")
    assert ok


def test_criterion_7_kl_identity(table1, table2, record):
    details, ok = [], True
    for report, label in ((table2, "horseshoe"), (table1, "logistic")):
        for kind in ("copula_rot", "gauss_fullcov"):
            f = _fit(report, kind)
            target = f["target"]
            log_z = grid_log_z(target, default_grid(target))
            kl = grid_kl(f["spec"], target, default_grid(target), support_box(f["spec"], 1000))
            gap = abs(kl + f["final"].value - log_z.value)
            tol = 3 * f["final"].std_error + 1e-3
            below = f["final"].value <= log_z.value + 2 * f["final"].std_error
            ok &= gap <= tol and below and not log_z.flagged
            details.append(f"{kind}/{label} gap {gap:.1e} (tol {tol:.1e})")
    record(7, "KL + ELBO = log Z", ok, "; ".join(details))
    assert ok


def test_criterion_8_max_v_equals_g(record):
    bad = 0
    for d in (1, 2, 5, 50):
        th = ThetaParams(a=2.0, b=3.0, alpha=np.linspace(0.5, 3.0, d))
        rng = RngState(800 + d)
        for _ in range(10):
            draw = sample_base_draw(th, rng, 100000)
            bad += int(np.count_nonzero(draw.v.max(axis=1) != draw.g))
    record(8, "max V = G", bad == 0, f"{bad} mismatches in 10^6 draws per d in (1, 2, 5, 50)")
    assert bad == 0


def test_criterion_9_tiny_bnn(record):
    target = tiny_bnn_regression()
    spec = init_family("copula_rot", target.d, {}, RngState(9))
    res = fit(spec, target, TrainConfig(iterations=5000, learning_rate=0.005, seed=9))
    viol, drop = monotone_violations([r.elbo for r in res.trace])
    grad = max(_gradient_error("copula_rot", target, 0.0, p) for p in range(20))
    theta = family_sample(res.spec, RngState(11), 200).x
    rmse = target.predictive_rmse(theta)
    ok = viol <= 1 and grad < 1e-4 and np.isfinite(rmse)
    record(9, "tiny BNN substitute", ok,
           f"ELBO {res.final.value:.2f}, trend violations {viol} (max drop {drop:.1f} SE), "
           f"gradient error {grad:.1e}, held-out RMSE {rmse:.3f}")
    assert ok


def test_monotone_trend_on_table_runs(table1, table2, capsys):
    worst = []
    for report in (table2, table1):
        for f in report["_fits"]:
            viol, drop = monotone_violations([r.elbo for r in f["trace"]])
            worst.append((viol, drop, f"{report['table']} seed {f['seed']} {f['kind']}"))
    viol, drop, where = max(worst)
    with capsys.disabled():
        print(f"\nmonotone trend: worst run {where}: {viol} violation(s), max drop {drop:.1f} SE")
    assert viol <= 1


def test_table2_second_seed():
    report = run_reproduce("table2", seed=1)
    assert report["passed"], _table_detail(report)
