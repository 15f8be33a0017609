import numpy as np
import pytest
from sklearn.base import clone

from copulavi import VariationalEstimator
from copulavi.exceptions import ConfigurationError, NotFittedError
from copulavi.targets import gaussian_target, horseshoe_posterior


def test_params_round_trip():
    est = VariationalEstimator(kind="gauss_fullcov", iterations=10)
    assert est.get_params()["kind"] == "gauss_fullcov"
    assert clone(est).get_params() == est.get_params()
    est.set_params(learning_rate=0.01)
    assert est.learning_rate == 0.01


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        VariationalEstimator().sample(3)


def test_unknown_kind():
    with pytest.raises(ConfigurationError):
        VariationalEstimator(kind="nope").fit(horseshoe_posterior())


def test_fit_and_score():
    target = gaussian_target([1.0, -1.0], [[1.0, 0.0], [0.5, 0.7]])
    est = VariationalEstimator(kind="gauss_fullcov", learning_rate=0.01, iterations=3000).fit(target)
    assert est.n_features_in_ == 2
    assert len(est.trace_) == 3000
    assert abs(est.elbo_) <= 0.02
    x = est.sample(2000)
    assert x.shape == (2000, 2)
    assert np.mean(np.abs(est.score_samples(x) - target.log_density(x))) < 0.05
    assert est.score(x) == pytest.approx(est.score_samples(x).sum())
    assert est.elbo(target).value == pytest.approx(0.0, abs=0.02)


def test_fit_is_reproducible():
    a = VariationalEstimator(iterations=20, elbo_eval_samples=100).fit(horseshoe_posterior())
    b = VariationalEstimator(iterations=20, elbo_eval_samples=100).fit(horseshoe_posterior())
    assert np.array_equal(a.spec_.params, b.spec_.params)
    assert np.array_equal(a.sample(5), b.sample(5))


def test_score_samples_shape_check():
    est = VariationalEstimator(iterations=5, elbo_eval_samples=10).fit(horseshoe_posterior())
    with pytest.raises(ConfigurationError):
        est.score_samples(np.zeros((3, 5)))
