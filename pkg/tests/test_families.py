import os
import tempfile

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from copulavi import specfn
from copulavi.copula import UNSUPPORTED
from copulavi.exceptions import ConfigurationError, DomainError
from copulavi.families import (KINDS, FamilySpec, MarginalParams, family_from_dict,
                               family_log_density, family_sample, family_to_dict, init_family,
                               load_family, quantile_forward, quantile_inverse, save_family)
from copulavi.oracle import support_box
from copulavi.rotation import apply_rotation, apply_rotation_transpose, build_butterfly
from copulavi.sampling import RngState


def _mass(spec, resolution=800):
    g = support_box(spec, resolution)
    lq = family_log_density(spec, g.points().reshape(-1, 2))
    lw0, lw1 = g.log_weights()
    return float(np.exp(special.logsumexp(lq + (lw0[:, None] + lw1[None, :]).ravel())))


def test_quantile_examples():
    m = MarginalParams(mu=np.array([1.0, -2.0]), log_sigma=np.array([0.3, -0.4]))
    x, _ = quantile_forward(np.array([0.5, 0.5]), m)
    assert np.allclose(x, m.mu)
    unit = MarginalParams(mu=np.zeros(1), log_sigma=np.zeros(1))
    x, _ = quantile_forward(np.array([specfn.normal_cdf(1.0)]), unit)
    assert x[0] == pytest.approx(1.0, abs=1e-12)
    u, _ = quantile_inverse(m.mu, m)
    assert np.allclose(u, 0.5)


def test_quantile_boundary_rejected():
    m = MarginalParams(mu=np.zeros(2), log_sigma=np.zeros(2))
    with pytest.raises(DomainError):
        quantile_forward(np.array([0.0, 0.5]), m)


def test_quantile_round_trip_and_reciprocity(nprng):
    m = MarginalParams(mu=nprng.normal(size=3), log_sigma=nprng.normal(size=3))
    u = nprng.uniform(0.01, 0.99, (100, 3))
    x, ld = quantile_forward(u, m)
    back, ld_inv = quantile_inverse(x, m)
    assert np.max(np.abs(back - u)) < 1e-9
    assert np.max(np.abs(ld + ld_inv)) < 1e-10


@pytest.mark.parametrize("kind", KINDS)
def test_forward_inverse_consistency(kind):
    spec = init_family(kind, 3, {"log_sigma": -1.0}, RngState(2))
    s = family_sample(spec, RngState(3), 1000)
    assert np.max(np.abs(s.log_q - family_log_density(spec, s.x))) <= 1e-9


@pytest.mark.parametrize("kind", KINDS)
def test_density_normalized_in_2d(kind):
    spec = init_family(kind, 2, {"log_sigma": 0.0}, RngState(1))
    assert _mass(spec) == pytest.approx(1.0, abs=1e-2)


def test_fullcov_moments():
    spec = init_family("gauss_fullcov", 2, {}, RngState(0))
    raw = spec.params.copy()
    raw[:] = [1.0, -1.0, 0.5, 0.2, 0.7]
    spec = spec.with_params(raw)
    mean, L = spec.gauss
    x = family_sample(spec, RngState(1), 100000).x
    assert np.allclose(x.mean(0), mean, atol=0.02)
    assert np.allclose(np.cov(x.T), L @ L.T, atol=0.03)


def test_far_point_unsupported():
    spec = init_family("copula_rot", 2, {}, RngState(0))
    assert family_log_density(spec, np.array([100.0, 100.0])) == UNSUPPORTED


def test_meanfield_mode_density():
    spec = init_family("gauss_meanfield", 3, {"log_sigma": -0.7}, RngState(0))
    mu, _ = spec.gauss
    assert family_log_density(spec, mu) == pytest.approx(-1.5 * np.log(2 * np.pi) + 3 * 0.7, abs=1e-12)


def test_identical_component_mixture(nprng):
    comp = init_family("copula_rot", 2, {"log_sigma": -0.5}, RngState(4))
    mix = FamilySpec("mixture", 2, np.concatenate([[0.0, 0.0], comp.params, comp.params]),
                     components=(comp, comp))
    x = family_sample(comp, RngState(5), 200).x
    assert np.max(np.abs(family_log_density(mix, x) - family_log_density(comp, x))) <= 1e-10


def test_init_conventions():
    spec = init_family("copula_rot", 4, {}, RngState(0))
    assert spec.theta.a == pytest.approx(15.0000003, abs=1e-7)
    assert np.all(np.abs(spec.rotation.nu) <= 0.2)
    assert np.all(spec.marginals.log_sigma == -3.0)
    mf = init_family("gauss_meanfield", 3, {}, RngState(0))
    assert np.array_equal(mf.gauss[0], np.zeros(3))
    assert np.allclose(mf.marginals.log_sigma, -3.0)


def test_init_target_mean():
    # the marginal quantile of the mean of u lands on the requested point
    spec = init_family("copula_norot", 2, {"target_mean": [2.0, -1.0]}, RngState(0))
    u_bar = family_sample(spec, RngState(1), 20000).u.mean(0)
    m = spec.marginals
    assert np.allclose(m.mu + m.sigma * special.ndtri(u_bar), [2.0, -1.0], atol=5e-3)


def test_init_deterministic():
    assert init_family("mixture", 2, {}, RngState(8)) == init_family("mixture", 2, {}, RngState(8))


def test_init_flips():
    spec = init_family("copula_norot", 3, {"flips": [True, False, True]}, RngState(0))
    assert np.allclose(spec.mask.delta, [0.01, 0.99, 0.01])


@pytest.mark.parametrize("kind, d, cfg", [("bogus", 2, {}), ("copula_rot", 0, {}),
                                          ("copula_rot", 2, {"nope": 1})])
def test_init_rejects_bad_config(kind, d, cfg):
    with pytest.raises(ConfigurationError):
        init_family(kind, d, cfg, RngState(0))


def test_wrong_param_count():
    with pytest.raises(ConfigurationError):
        FamilySpec("gauss_meanfield", 2, np.zeros(3))


@given(st.sampled_from(KINDS), st.integers(1, 5), st.integers(0, 1000))
@settings(max_examples=40, deadline=None)
def test_checkpoint_round_trip(kind, d, seed):
    spec = init_family(kind, d, {}, RngState(seed))
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "spec.json")
        save_family(spec, path)
        back = load_family(path)
    assert back == spec
    assert np.array_equal(back.params, spec.params)
    assert family_from_dict(family_to_dict(spec)) == spec


def test_extra_rotation_round_trip_leaves_density_unchanged(nprng):
    spec = init_family("copula_rot", 4, {"log_sigma": -1.0}, RngState(6))
    x = family_sample(spec, RngState(7), 500).x
    op = build_butterfly(4, nprng.uniform(-np.pi, np.pi, 3))
    x2 = apply_rotation_transpose(apply_rotation(x, op), op)
    assert np.max(np.abs(family_log_density(spec, x2) - family_log_density(spec, x))) <= 1e-9
