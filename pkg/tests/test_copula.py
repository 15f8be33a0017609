import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from copulavi.checks import integrate_ctheta
from copulavi.copula import (UNSUPPORTED, FlipMask, ThetaParams, flip_forward, flip_inverse,
                             flip_log_det, log_density_ctheta, sample_flip_mask)
from copulavi.exceptions import DomainError
from copulavi.oracle import finite_diff_grad
from copulavi.sampling import RngState, sample_base_draw


def test_one_dimensional_density_is_beta():
    th = ThetaParams(a=2.3, b=0.7, alpha=[1.9])
    v = np.linspace(0.01, 0.99, 60)[:, None]
    assert np.allclose(log_density_ctheta(v, th), stats.beta(2.3, 0.7).logpdf(v[:, 0]), atol=1e-10)


@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_symmetry_for_equal_alpha(x, y):
    th = ThetaParams(a=2.0, b=3.0, alpha=[1.3, 1.3])
    assert log_density_ctheta([x, y], th) == pytest.approx(log_density_ctheta([y, x], th), abs=1e-12)


def test_boundary_is_unsupported():
    th = ThetaParams(a=2.0, b=2.0, alpha=[1.5, 1.5])
    assert log_density_ctheta([0.0, 0.5], th) == UNSUPPORTED
    assert log_density_ctheta([0.5, 1.0], th) == UNSUPPORTED
    with pytest.raises(DomainError):
        log_density_ctheta([np.nan, 0.5], th)


def test_grid_normalization_default_theta():
    th = ThetaParams(a=2.0, b=2.0, alpha=[1.5, 1.5])
    c = (np.arange(400) + 0.5) / 400
    v = np.stack(np.meshgrid(c, c, indexing="ij"), -1).reshape(-1, 2)
    assert np.exp(log_density_ctheta(v, th)).sum() / 400**2 == pytest.approx(1.0, abs=1e-3)


def test_adaptive_normalization_random_theta(nprng):
    a, b = nprng.uniform(1.2, 5.0, 2)
    alpha = nprng.uniform(1.0, 3.0, 2)
    assert integrate_ctheta(ThetaParams(a, b, alpha)) == pytest.approx(1.0, abs=1e-3)


def test_mask_extremes():
    assert np.all(sample_flip_mask(20, RngState(0), p=1.0).delta == 0.01)
    assert np.all(sample_flip_mask(20, RngState(0), p=0.0).delta == 0.99)


def test_mask_fraction():
    mask = sample_flip_mask(10000, RngState(1))
    assert np.mean(mask.delta == 0.01) == pytest.approx(0.5, abs=0.015)


@pytest.mark.parametrize("eps, p", [(0.0, 0.5), (0.5, 0.5), (0.1, 1.5)])
def test_mask_domain(eps, p):
    with pytest.raises(DomainError):
        sample_flip_mask(3, RngState(0), epsilon=eps, p=p)


def test_flip_examples():
    v = np.array([0.3, 0.7])
    assert np.array_equal(flip_forward(v, FlipMask([1.0, 1.0])), v)
    assert np.allclose(flip_forward(v, FlipMask([0.0, 0.0])), 1 - v)
    u = flip_forward([0.3, 0.3], FlipMask([0.01, 0.99]))
    assert np.allclose(u, [0.696, 0.304], atol=1e-15)


def test_flip_log_det_values():
    assert flip_log_det(FlipMask([0.01, 0.99])) == pytest.approx(2 * np.log(0.98), abs=1e-12)
    assert flip_log_det(FlipMask([1.0, 1.0, 1.0])) == 0.0


def test_flip_log_det_matches_numerical_jacobian(nprng):
    mask = sample_flip_mask(4, RngState(3))
    v = nprng.uniform(size=4)
    jac = np.stack([finite_diff_grad(lambda x, i=i: flip_forward(x, mask)[i], v) for i in range(4)])
    assert flip_log_det(mask) == pytest.approx(np.log(abs(np.linalg.det(jac))), abs=1e-6)


@given(st.integers(0, 2**32))
def test_flip_round_trip(seed):
    rng = RngState(seed)
    mask = sample_flip_mask(6, rng)
    v = rng.uniform((20, 6))
    back, inside = flip_inverse(flip_forward(v, mask), mask)
    assert inside.all()
    assert np.max(np.abs(back - v)) <= 1e-15


def test_flip_inverse_flags_outside():
    mask = FlipMask([0.01, 0.99])
    _, inside = flip_inverse(np.array([[0.005, 0.5], [0.5, 0.5]]), mask)
    assert list(inside) == [False, True]


def test_positive_dependence_setting():
    # large alpha: coordinates share the common factor g
    th = ThetaParams(a=2.0, b=2.0, alpha=[20.0, 20.0])
    v = sample_base_draw(th, RngState(4), 100000).v
    assert np.corrcoef(v.T)[0, 1] > 0.1


def test_small_alpha_gives_negative_dependence():
    th = ThetaParams(a=20.0, b=20.0, alpha=[0.3, 0.3])
    v = sample_base_draw(th, RngState(4), 100000).v
    assert np.corrcoef(v.T)[0, 1] < -0.1


def test_negative_dependence_after_mixed_flip():
    th = ThetaParams(a=2.0, b=2.0, alpha=[20.0, 20.0])
    v = sample_base_draw(th, RngState(5), 100000).v
    u = flip_forward(v, FlipMask([0.01, 0.99]))
    assert np.corrcoef(u.T)[0, 1] < -0.1
