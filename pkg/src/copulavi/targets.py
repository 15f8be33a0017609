"""Target densities ``pi(x) = exp(-U(x)) / Z``.

All ``u``/``grad_u`` callables are vectorized over leading axes. Priors are
normalized, so ``log Z`` is the model evidence and is directly comparable
with ELBO values.
"""
import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .exceptions import ConfigurationError, DomainError
from .sampling import RngState

__all__ = [
    "TargetDensity",
    "LogisticDataset",
    "generate_synthetic_logistic",
    "logistic_posterior",
    "horseshoe_posterior",
    "gaussian_target",
    "GaussianTarget",
    "BNNTarget",
    "tiny_bnn_regression",
    "target_from_config",
]

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class TargetDensity:
    d: int
    u: object = field(repr=False)
    grad_u: object = field(repr=False)
    label: str = "target"
    known_log_z: float = None

    def log_density(self, x):
        return -self.u(x)


@dataclass(frozen=True)
class LogisticDataset:
    covariates: np.ndarray
    labels: np.ndarray
    tau: float = 0.01

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        y = np.asarray(self.labels, dtype=float).ravel()
        if a.shape[0] != y.size:
            raise ConfigurationError("covariates and labels disagree in length")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise DomainError("labels must be -1 or +1")
        if not self.tau > 0:
            raise DomainError("prior precision must be positive")
        object.__setattr__(self, "covariates", a)
        object.__setattr__(self, "labels", y)

    @property
    def n(self):
        return self.labels.size

    @property
    def d(self):
        return self.covariates.shape[1]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"a{i + 1}" for i in range(self.d)] + ["y"])
            for row, y in zip(self.covariates, self.labels):
                w.writerow([repr(float(v)) for v in row] + [int(y)])

    @classmethod
    def from_csv(cls, path, tau=0.01):
        with open(path, encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        body = np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        return cls(covariates=body[:, :-1], labels=body[:, -1], tau=tau)


def generate_synthetic_logistic(rng, n_per_class=30, tau=0.01):
    """Two Gaussian clouds in 2-D: N((1,5), I) labeled +1 and
    N((-5,1), 1.1^2 I) labeled -1."""
    rng = rng if isinstance(rng, RngState) else RngState(rng)
    first = np.array([1.0, 5.0]) + rng.normal((n_per_class, 2))
    second = np.array([-5.0, 1.0]) + 1.1 * rng.normal((n_per_class, 2))
    a = np.vstack([first, second])
    y = np.concatenate([np.ones(n_per_class), -np.ones(n_per_class)])
    return LogisticDataset(covariates=a, labels=y, tau=tau)


def logistic_posterior(data: LogisticDataset, label="logistic"):
    a, y, tau, d = data.covariates, data.labels, data.tau, data.d
    ya = a * y[:, None]
    const = 0.5 * d * np.log(2.0 * np.pi / tau)

    def u(x):
        x = np.asarray(x, dtype=float)
        z = x @ ya.T
        return const + 0.5 * tau * (x * x).sum(-1) + np.logaddexp(0.0, -z).sum(-1)

    def grad_u(x):
        x = np.asarray(x, dtype=float)
        z = x @ ya.T
        return tau * x - special.expit(-z) @ ya

    known = 0.0 if data.n == 0 else None
    return TargetDensity(d=d, u=u, grad_u=grad_u, label=label, known_log_z=known)


def horseshoe_posterior(y_obs=0.01, label="horseshoe"):
    """Posterior of ``(log eta, log lambda)`` in the centred horseshoe toy model.

    eta ~ Gamma(1/2, rate 1), lambda | eta ~ InvGamma(1/2, rate eta),
    y | lambda ~ N(0, variance lambda), including the log-Jacobian
    ``x1 + x2`` of the exponential change of variables.
    """
    y_obs = float(y_obs)
    if not np.isfinite(y_obs):
        raise DomainError("observation must be finite")
    y2 = y_obs * y_obs
    const = np.log(np.pi) + 0.5 * _LOG_2PI  # 2 log Gamma(1/2) + normal constant

    def u(x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        return (-x1 + x2 + np.exp(x1) + np.exp(x1 - x2) + 0.5 * y2 * np.exp(-x2) + const)

    def grad_u(x):
        x = np.asarray(x, dtype=float)
        x1, x2 = x[..., 0], x[..., 1]
        r = np.exp(x1 - x2)
        return np.stack([-1.0 + np.exp(x1) + r, 1.0 - r - 0.5 * y2 * np.exp(-x2)], axis=-1)

    return TargetDensity(d=2, u=u, grad_u=grad_u, label=label)


def gaussian_target(mean, cov_factor, label="gaussian"):
    """Normalized Gaussian ``N(mean, L L^T)`` (``known_log_z = 0``)."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = np.atleast_2d(np.asarray(cov_factor, dtype=float))
    d = mean.size
    if L.shape != (d, d) or not np.allclose(L, np.tril(L)):
        raise ConfigurationError("cov_factor must be a lower-triangular d x d matrix")
    diag = np.diag(L)
    if np.any(~np.isfinite(L)) or np.any(diag <= 0):
        raise ConfigurationError("cov_factor must have a positive diagonal")
    const = 0.5 * d * _LOG_2PI + np.log(diag).sum()
    precision = np.linalg.inv(L @ L.T)

    def u(x):
        r = np.asarray(x, dtype=float) - mean
        return const + 0.5 * np.einsum("...i,ij,...j->...", r, precision, r)

    def grad_u(x):
        return (np.asarray(x, dtype=float) - mean) @ precision

    return GaussianTarget(d=d, u=u, grad_u=grad_u, label=label, known_log_z=0.0,
                          mean=mean, cov_factor=L)


@dataclass(frozen=True)
class GaussianTarget(TargetDensity):
    mean: np.ndarray = None
    cov_factor: np.ndarray = None


@dataclass(frozen=True)
class BNNTarget(TargetDensity):
    """One-hidden-layer ReLU regression network posterior."""

    widths: tuple = (1, 5, 1)
    train_x: np.ndarray = None
    train_y: np.ndarray = None
    test_x: np.ndarray = None
    test_y: np.ndarray = None

    def unpack(self, theta):
        return _bnn_unpack(np.asarray(theta, dtype=float), self.widths)

    def predict(self, theta, inputs):
        """Network outputs for each parameter row; shape ``(n_params_rows, n_inputs)``."""
        w1, b1, w2, b2, _ = self.unpack(np.atleast_2d(theta))
        h = np.maximum(np.einsum("mi,nih->nmh", np.atleast_2d(inputs), w1) + b1[:, None, :], 0.0)
        return (np.einsum("nmh,nho->nmo", h, w2) + b2[:, None, :])[..., 0]

    def predictive_rmse(self, theta):
        pred = self.predict(theta, self.test_x).mean(axis=0)
        return float(np.sqrt(np.mean((pred - self.test_y) ** 2)))


def _bnn_sizes(widths):
    i, h, o = widths
    return [("w1", (i, h)), ("b1", (h,)), ("w2", (h, o)), ("b2", (o,)), ("s", (1,))]


def _bnn_unpack(theta, widths):
    lead = theta.shape[:-1]
    out, start = [], 0
    for _, shape in _bnn_sizes(widths):
        size = int(np.prod(shape))
        out.append(theta[..., start:start + size].reshape(lead + shape))
        start += size
    w1, b1, w2, b2, s = out
    return w1, b1, w2, b2, s[..., 0]


def tiny_bnn_regression(config=None, rng=None, label="tiny_bnn"):
    """Posterior over weights, biases and the noise log-variance ``s``.

    Priors: weights and biases N(0, prior_var); s ~ N(0, 16). Likelihood:
    y ~ N(net(x), variance exp(s)). Data: inputs uniform on [-1, 1],
    y = sin(3 x) + 0.1 noise; ``n_train = 0`` gives the prior-only target.
    """
    cfg = {"widths": (1, 5, 1), "n_train": 40, "n_test": 40, "prior_var": 1.0,
           "noise_sd": 0.1, "log_noise_prior_var": 16.0}
    cfg.update(config or {})
    widths = tuple(int(w) for w in cfg["widths"])
    if len(widths) != 3 or widths[0] != 1 or widths[2] != 1:
        raise ConfigurationError("tiny BNN supports widths (1, hidden, 1)")
    rng = rng if isinstance(rng, RngState) else RngState(0 if rng is None else rng)
    n_train, n_test = int(cfg["n_train"]), int(cfg["n_test"])
    xs = rng.uniform(n_train + n_test) * 2.0 - 1.0
    ys = np.sin(3.0 * xs) + cfg["noise_sd"] * rng.normal(n_train + n_test)
    tx, ty = xs[:n_train, None], ys[:n_train]
    vx, vy = xs[n_train:, None], ys[n_train:]
    d = sum(int(np.prod(s)) for _, s in _bnn_sizes(widths))
    pv, sv = float(cfg["prior_var"]), float(cfg["log_noise_prior_var"])
    prior_var = np.full(d, pv)
    prior_var[-1] = sv
    prior_const = 0.5 * (d * _LOG_2PI + np.log(prior_var).sum())

    def forward(theta):
        w1, b1, w2, b2, s = _bnn_unpack(theta, widths)
        pre = np.einsum("mi,nih->nmh", tx, w1) + b1[:, None, :]
        h = np.maximum(pre, 0.0)
        out = np.einsum("nmh,nho->nmo", h, w2)[..., 0] + b2
        return pre, h, out, s

    def u(x):
        theta = np.asarray(x, dtype=float)
        flat = np.atleast_2d(theta)
        val = prior_const + 0.5 * (flat * flat / prior_var).sum(-1)
        if n_train:
            _, _, out, s = forward(flat)
            r = ty - out
            val = val + 0.5 * n_train * (_LOG_2PI + s) + 0.5 * (r * r).sum(-1) * np.exp(-s)
        return val[0] if theta.ndim == 1 else val

    def grad_u(x):
        theta = np.asarray(x, dtype=float)
        flat = np.atleast_2d(theta)
        g = flat / prior_var
        if n_train:
            w1, b1, w2, b2, s = _bnn_unpack(flat, widths)
            pre, h, out, s = forward(flat)
            r = ty - out
            prec = np.exp(-s)
            g_out = -r * prec[:, None]  # dU/dout, (n, m)
            g_w2 = np.einsum("nmh,nm->nh", h, g_out)[..., None]
            g_b2 = g_out.sum(-1)[:, None]
            g_h = g_out[..., None] * w2[:, None, :, 0]
            g_pre = g_h * (pre > 0)
            g_w1 = np.einsum("mi,nmh->nih", tx, g_pre)
            g_b1 = g_pre.sum(1)
            g_s = 0.5 * n_train - 0.5 * (r * r).sum(-1) * prec
            g = g + np.concatenate([g_w1.reshape(len(flat), -1), g_b1, g_w2.reshape(len(flat), -1),
                                    g_b2, g_s[:, None]], axis=1)
        return g[0] if theta.ndim == 1 else g

    return BNNTarget(d=d, u=u, grad_u=grad_u, label=label,
                     known_log_z=0.0 if n_train == 0 else None, widths=widths,
                     train_x=tx, train_y=ty, test_x=vx, test_y=vy)


def target_from_config(settings, seed=0):
    """Build a target from a flat settings dict (``label`` plus options)."""
    label = settings.get("label")
    if label == "logistic":
        data_seed = int(settings.get("data_seed", seed))
        n = int(settings.get("n_per_class", 30))
        data = generate_synthetic_logistic(RngState(data_seed, 7), n_per_class=n,
                                           tau=float(settings.get("tau", 0.01)))
        return logistic_posterior(data)
    if label == "horseshoe":
        return horseshoe_posterior(float(settings.get("y_obs", 0.01)))
    if label == "gaussian":
        mean = np.atleast_1d(np.asarray(settings.get("mean", [0.0, 0.0]), dtype=float))
        factor = settings.get("cov_factor")
        L = np.eye(mean.size) if factor is None else np.asarray(factor, dtype=float).reshape(mean.size, mean.size)
        return gaussian_target(mean, L)
    if label == "tiny_bnn":
        cfg = {k: settings[k] for k in ("n_train", "n_test", "prior_var", "noise_sd") if k in settings}
        if "hidden" in settings:
            cfg["widths"] = (1, int(settings["hidden"]), 1)
        return tiny_bnn_regression(cfg, RngState(int(settings.get("data_seed", seed)), 11))
    raise ConfigurationError(f"unknown target label {label!r}")
