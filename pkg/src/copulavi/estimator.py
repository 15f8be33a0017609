"""Estimator-style wrapper around family initialization and training."""
import numpy as np
from sklearn.base import BaseEstimator

from .elbo import TrainConfig, estimate_elbo, fit
from .exceptions import ConfigurationError, NotFittedError
from .families import KINDS, family_log_density, family_sample, init_family
from .sampling import RngState

__all__ = ["VariationalEstimator"]


class VariationalEstimator(BaseEstimator):
    """Fit a variational family to an unnormalized target density.

    Unlike data-driven estimators, ``fit`` takes the target itself (any
    object with ``d``, ``u`` and ``grad_u``). After fitting, the estimator
    behaves like a density model: ``sample``, ``score_samples`` and
    ``score`` refer to the fitted ``q``.

    Parameters
    ----------
    kind : str
        Family kind, one of :data:`copulavi.families.KINDS`.
    learning_rate, iterations, mc_samples, elbo_eval_samples : training controls.
    init : dict or None
        Overrides for :func:`copulavi.families.init_family`.
    random_state : int
        Seed for initialization, training and evaluation streams.

    Attributes
    ----------
    spec_ : FamilySpec
    elbo_, elbo_stderr_ : float
    trace_ : list of TraceRow
    """

    def __init__(self, kind="copula_rot", learning_rate=0.002, iterations=3000, mc_samples=16,
                 elbo_eval_samples=20000, init=None, random_state=0):
        self.kind = kind
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.mc_samples = mc_samples
        self.elbo_eval_samples = elbo_eval_samples
        self.init = init
        self.random_state = random_state

    def fit(self, target, y=None):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown family kind {self.kind!r}")
        seed = int(self.random_state)
        spec = init_family(self.kind, target.d, self.init, RngState(seed, 3))
        cfg = TrainConfig(learning_rate=self.learning_rate, iterations=self.iterations,
                          mc_samples_per_step=self.mc_samples,
                          elbo_eval_samples=self.elbo_eval_samples, seed=seed)
        result = fit(spec, target, cfg)
        self.spec_ = result.spec
        self.trace_ = result.trace
        self.elbo_ = result.final.value
        self.elbo_stderr_ = result.final.std_error
        self.n_features_in_ = target.d
        return self

    def _check_fitted(self):
        if not hasattr(self, "spec_"):
            raise NotFittedError("call fit before using the estimator")

    def sample(self, n_samples=1, random_state=None):
        self._check_fitted()
        seed = self.random_state if random_state is None else random_state
        return family_sample(self.spec_, RngState(int(seed), 5), n_samples).x

    def score_samples(self, X):
        """Log-density of the fitted family at each row of ``X``."""
        self._check_fitted()
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ConfigurationError(f"expected an (n, {self.n_features_in_}) array")
        return np.atleast_1d(family_log_density(self.spec_, X))

    def score(self, X, y=None):
        """Total log-density of ``X`` under the fitted family."""
        return float(np.sum(self.score_samples(X)))

    def elbo(self, target, n_samples=20000, random_state=None):
        self._check_fitted()
        seed = self.random_state if random_state is None else random_state
        return estimate_elbo(self.spec_, target, n_samples, RngState(int(seed), 2))
