import numpy as np
import pytest
from scipy import special, stats

from copulavi.elbo import TrainConfig, fit
from copulavi.exceptions import ConfigurationError, DomainError
from copulavi.families import init_family
from copulavi.oracle import GridSpec, finite_diff_grad, grid_log_z
from copulavi.sampling import RngState
from copulavi.targets import (LogisticDataset, gaussian_target, generate_synthetic_logistic,
                              horseshoe_posterior, logistic_posterior, target_from_config,
                              tiny_bnn_regression)


def _grad_error(target, points, step=1e-6):
    worst = 0.0
    for x in points:
        fd = finite_diff_grad(target.u, x, step)
        worst = max(worst, np.max(np.abs(target.grad_u(x) - fd) / np.maximum(np.abs(fd), 1e-3)))
    return worst


def test_logistic_generator():
    data = generate_synthetic_logistic(RngState(0, 7))
    assert data.n == 60 and data.d == 2
    assert np.sum(data.labels == 1) == 30 and np.sum(data.labels == -1) == 30
    assert set(np.unique(data.labels)) == {-1.0, 1.0}
    again = generate_synthetic_logistic(RngState(0, 7))
    assert np.array_equal(data.covariates, again.covariates)


def test_logistic_class_means():
    firsts = [generate_synthetic_logistic(RngState(s, 7)).covariates[:30].mean(0) for s in range(200)]
    assert np.allclose(np.mean(firsts, axis=0), [1.0, 5.0], atol=0.2)


def test_logistic_u_at_origin():
    t = logistic_posterior(generate_synthetic_logistic(RngState(0, 7)))
    # log(2 pi / tau) + 60 log 2 = 48.03188
    assert t.u(np.zeros(2)) == pytest.approx(np.log(200 * np.pi) + 60 * np.log(2), abs=1e-10)


def test_logistic_gradient(nprng):
    t = logistic_posterior(generate_synthetic_logistic(RngState(1, 7)))
    assert _grad_error(t, nprng.normal(size=(100, 2)) * 3) < 1e-5


def test_logistic_batched_matches_rows(nprng):
    t = logistic_posterior(generate_synthetic_logistic(RngState(1, 7)))
    x = nprng.normal(size=(5, 2))
    assert np.allclose(t.u(x), [t.u(r) for r in x])
    assert np.allclose(t.grad_u(x), [t.grad_u(r) for r in x])


def test_logistic_stable_far_out():
    t = logistic_posterior(generate_synthetic_logistic(RngState(0, 7)))
    assert np.isfinite(t.u(np.array([500.0, -500.0])))


def test_empty_dataset_is_normalized_prior():
    t = logistic_posterior(LogisticDataset(np.zeros((0, 2)), np.zeros(0)))
    r = grid_log_z(t, GridSpec((-100.0, -100.0), (100.0, 100.0), 400))
    assert r.value == pytest.approx(0.0, abs=1e-3)
    spec = init_family("gauss_fullcov", 2, {}, RngState(0))
    res = fit(spec, t, TrainConfig(iterations=3000, learning_rate=0.05, seed=0))
    assert abs(res.final.value) <= 0.02


def test_dataset_csv_round_trip(tmp_path):
    data = generate_synthetic_logistic(RngState(2, 7))
    path = tmp_path / "data.csv"
    data.to_csv(path)
    assert path.read_text().splitlines()[0] == "a1,a2,y"
    back = LogisticDataset.from_csv(path)
    assert np.array_equal(back.covariates, data.covariates)
    assert np.array_equal(back.labels, data.labels)


def test_dataset_validation():
    with pytest.raises(DomainError):
        LogisticDataset(np.zeros((2, 2)), [1, 0])
    with pytest.raises(ConfigurationError):
        LogisticDataset(np.zeros((2, 2)), [1])


def test_horseshoe_u_at_origin():
    y = 0.01
    # the four log-density terms at eta = lambda = 1, from scipy distributions
    logp = (stats.gamma(0.5).logpdf(1.0) + stats.invgamma(0.5, scale=1.0).logpdf(1.0)
            + stats.norm(0.0, 1.0).logpdf(y) + 0.0 + 0.0)
    assert horseshoe_posterior(y).u(np.zeros(2)) == pytest.approx(-logp, abs=1e-12)


def test_horseshoe_u_general_point(nprng):
    y = 0.01
    t = horseshoe_posterior(y)
    for x1, x2 in nprng.normal(size=(10, 2)):
        eta, lam = np.exp(x1), np.exp(x2)
        logp = (stats.gamma(0.5).logpdf(eta) + stats.invgamma(0.5, scale=eta).logpdf(lam)
                + stats.norm(0.0, np.sqrt(lam)).logpdf(y) + x1 + x2)
        assert t.u(np.array([x1, x2])) == pytest.approx(-logp, rel=1e-12)


def test_horseshoe_gradient(nprng):
    assert _grad_error(horseshoe_posterior(), nprng.normal(size=(100, 2)) * 2) < 1e-5


def test_horseshoe_heavy_lambda_tail():
    t = horseshoe_posterior()
    g = GridSpec((-60.0, -40.0), (5.0, 30.0), 800)
    x1, x2 = g.axes()
    logp = -t.u(g.points().reshape(-1, 2)).reshape(x1.size, x2.size)
    lw0, lw1 = g.log_weights()
    marg = special.logsumexp(logp + lw0[:, None], axis=0)  # log density of x2
    w = np.exp(marg + lw1 - special.logsumexp(marg + lw1))
    tail = np.sum(w[x2 > np.log(100.0)])
    for kind in ("gauss_meanfield", "gauss_fullcov"):
        res = fit(init_family(kind, 2, {}, RngState(0)), t, TrainConfig(iterations=3000, learning_rate=0.01))
        mean, L = res.spec.gauss
        gauss_tail = stats.norm(mean[1], np.linalg.norm(L[1])).sf(np.log(100.0))
        assert tail >= 2 * gauss_tail


def test_gaussian_target():
    L = np.array([[2.0, 0.0], [0.5, 0.5]])
    t = gaussian_target([1.0, -1.0], L)
    assert t.u(np.array([1.0, -1.0])) == pytest.approx(np.log(2 * np.pi) + np.log(2.0) + np.log(0.5))
    r = grid_log_z(t, GridSpec((-30.0, -10.0), (30.0, 10.0), 400))
    assert r.value == pytest.approx(0.0, abs=1e-3)
    assert t.known_log_z == 0.0


@pytest.mark.parametrize("L", [[[1.0, 0.0], [0.0, 0.0]], [[1.0, 0.5], [0.0, 1.0]]])
def test_gaussian_target_rejects_bad_factor(L):
    with pytest.raises(ConfigurationError):
        gaussian_target([0.0, 0.0], L)


def test_bnn_shape_and_gradient(nprng):
    t = tiny_bnn_regression()
    assert t.d == 17
    assert t.train_x.shape == (40, 1) and t.test_x.shape == (40, 1)
    pts = nprng.normal(size=(20, 17))
    # random points sit away from the ReLU kinks with probability one
    assert _grad_error(t, pts, step=1e-5) < 1e-4


def test_bnn_prior_only_fit():
    t = tiny_bnn_regression({"n_train": 0})
    assert t.known_log_z == 0.0
    spec = init_family("gauss_meanfield", 17, {}, RngState(0))
    res = fit(spec, t, TrainConfig(iterations=3000, learning_rate=0.02, seed=0))
    assert abs(res.final.value) <= 0.05


def test_bnn_rmse_finite():
    t = tiny_bnn_regression()
    assert np.isfinite(t.predictive_rmse(np.zeros((3, 17))))


def test_target_from_config():
    assert target_from_config({"label": "horseshoe"}).d == 2
    assert target_from_config({"label": "tiny_bnn"}).d == 17
    assert target_from_config({"label": "gaussian", "mean": [0, 0, 0]}).d == 3
    a = target_from_config({"label": "logistic", "data_seed": 3})
    b = target_from_config({"label": "logistic"}, seed=3)
    assert a.u(np.ones(2)) == b.u(np.ones(2))
    with pytest.raises(ConfigurationError):
        target_from_config({"label": "nope"})
