"""Monte Carlo ELBO, its exact reparameterization gradient, and Adam.

The estimator is ``mean_s [-U(x_s) - log q(x_s)]``. Its gradient is taken
with the base noise held at fixed standardized levels. Gamma variates move
with their shapes through the implicit identity ``P(shape, z) = level``;
Gaussian and uniform noise are shape-free. The entropy term is differentiated
in full (no score-term dropping).

Mixtures use stratified sampling: every component receives the same number
of draws and the component means are combined with the softmax weights.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
import time

import numpy as np
from scipy import special

from .exceptions import ConfigurationError, DomainError, NumericalError
from .families import (draw_noise, forward, forward_vjp, inverse, mixture_weights,
                       n_params, param_layout)
from .sampling import RngState

__all__ = [
    "ElboReport",
    "TrainConfig",
    "TraceRow",
    "Adam",
    "estimate_elbo",
    "elbo_gradient",
    "elbo_from_noise",
    "fit",
    "smoothed_trace",
    "monotone_violations",
]


@dataclass
class ElboReport:
    value: float
    std_error: float
    n_samples: int
    gradient: np.ndarray = None
    layout: dict = None
    flagged_index: int = None

    @property
    def flagged(self):
        return self.flagged_index is not None


@dataclass
class TrainConfig:
    learning_rate: float = 0.002
    iterations: int = 3000
    mc_samples_per_step: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    elbo_eval_samples: int = 20000
    threads: int = 1
    record_timing: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        for name in ("iterations", "mc_samples_per_step", "elbo_eval_samples", "threads"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be a positive count")
        if self.mc_samples_per_step < 2 or self.elbo_eval_samples < 2:
            raise ConfigurationError("need at least two Monte Carlo samples")


@dataclass
class TraceRow:
    iteration: int
    elbo: float
    elbo_stderr: float
    grad_norm: float
    wall_ms: float


def _stats(f):
    n = f.size
    return float(f.mean()), float(f.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0


def _first_bad(f):
    bad = np.flatnonzero(~np.isfinite(f))
    return int(bad[0]) if bad.size else None


def _simple_terms(spec, target, noise, grad):
    cache = forward(spec, noise)
    x = cache.x
    f = -target.u(x) - cache.log_q
    if not grad:
        return f, None
    n = f.size
    gx = -target.grad_u(x) / n
    g = forward_vjp(spec, cache, gx, np.full(n, -1.0 / n))
    return f, g


def _mixture_terms(spec, target, noise, grad):
    comps = spec.components
    K = len(comps)
    w = mixture_weights(spec)
    with np.errstate(divide="ignore"):
        lw = np.log(w)
    caches = [forward(c, z) for c, z in zip(comps, noise)]
    lay = param_layout(spec)
    offsets, start = [], K
    for c in comps:
        offsets.append(start)
        start += n_params(c)
    total = np.zeros(n_params(spec)) if grad else None
    fs, means, variances = [], np.zeros(K), np.zeros(K)
    per_comp = []
    for k, cache in enumerate(caches):
        x = cache.x
        n = x.shape[0]
        lq = np.empty((n, K))
        cross = {}
        for j, comp in enumerate(comps):
            if j == k:
                lq[:, j] = cache.log_q
            elif grad:
                cross[j] = inverse(comp, x, grads=True)
                lq[:, j] = cross[j][0]
            else:
                lq[:, j] = inverse(comp, x)
        joint = lq + lw
        log_q = special.logsumexp(joint, axis=1)
        f = -target.u(x) - log_q
        fs.append(f)
        means[k] = f.mean()
        variances[k] = f.var(ddof=1) if n > 1 else 0.0
        per_comp.append((x, joint, log_q, cross, n))
    value = float(w @ means)
    if not grad:
        return fs, value, variances
    for k, (x, joint, log_q, cross, n) in enumerate(per_comp):
        resp = np.exp(joint - log_q[:, None])
        coef = w[k] / n
        gx = -target.grad_u(x)
        for j, (_, gxj, gpj) in cross.items():
            gx = gx - resp[:, [j]] * gxj
            total[offsets[j]:offsets[j] + n_params(comps[j])] -= coef * (resp[:, [j]] * gpj).sum(0)
        gk = forward_vjp(comps[k], caches[k], coef * gx, -coef * resp[:, k])
        total[offsets[k]:offsets[k] + n_params(comps[k])] += gk
        # d log q / d logits = resp - w
        total[lay["logits"]] -= coef * (resp - w).sum(0)
    total[lay["logits"]] += w * (means - value)
    return fs, value, variances, total


def elbo_from_noise(spec, target, noise, grad=True):
    """ELBO estimate (and gradient) for a fixed batch of base noise."""
    if spec.d != target.d:
        raise ConfigurationError(f"family dimension {spec.d} != target dimension {target.d}")
    if spec.kind == "mixture":
        out = _mixture_terms(spec, target, noise, grad)
        fs, value, variances = out[:3]
        w = mixture_weights(spec)
        ns = np.array([f.size for f in fs])
        stderr = float(np.sqrt((w * w * variances / ns).sum()))
        f_all = np.concatenate(fs)
        rep = ElboReport(value=value, std_error=stderr, n_samples=int(ns.sum()),
                         flagged_index=_first_bad(f_all))
        if grad:
            rep.gradient = out[3]
            rep.layout = param_layout(spec)
        return rep
    f, g = _simple_terms(spec, target, noise, grad)
    value, stderr = _stats(f)
    return ElboReport(value=value, std_error=stderr, n_samples=f.size, gradient=g,
                      layout=param_layout(spec) if grad else None, flagged_index=_first_bad(f))


def estimate_elbo(spec, target, n, rng):
    """Monte Carlo ELBO with standard error (``n`` draws per mixture component)."""
    if int(n) < 2:
        raise ConfigurationError("need n >= 2 for a standard error")
    rng = rng if isinstance(rng, RngState) else RngState(rng)
    return elbo_from_noise(spec, target, draw_noise(spec, rng, n), grad=False)


def _split_noise(noise, chunks):
    if isinstance(noise, list):
        parts = [np.array_split(z, chunks) for z in noise]
        return [[p[i] for p in parts] for i in range(chunks)]
    return np.array_split(noise, chunks)


def elbo_gradient(spec, target, n, rng, threads=1):
    """ELBO estimate and its exact gradient in the unconstrained parameters.

    With ``threads > 1`` the batch is split across workers, each drawing from
    its own stream ``rng.spawn(1000 + worker)``. Results are combined in
    worker order, so the output does not depend on thread scheduling.
    """
    rng = rng if isinstance(rng, RngState) else RngState(rng)
    threads = int(threads)
    if threads <= 1:
        return elbo_from_noise(spec, target, draw_noise(spec, rng, n), grad=True)
    sizes = [len(c) for c in np.array_split(np.arange(int(n)), threads)]
    streams = [rng.spawn(1000 + i) for i in range(threads)]

    def work(i):
        return elbo_from_noise(spec, target, draw_noise(spec, streams[i], sizes[i]), grad=True)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        reports = list(pool.map(work, range(threads)))
    wts = np.array(sizes, dtype=float) / sum(sizes)
    value = float(sum(wi * r.value for wi, r in zip(wts, reports)))
    grad = sum(wi * r.gradient for wi, r in zip(wts, reports))
    stderr = float(np.sqrt(sum((wi * r.std_error) ** 2 for wi, r in zip(wts, reports))))
    flagged = next((r.flagged_index for r in reports if r.flagged), None)
    return ElboReport(value=value, std_error=stderr, n_samples=sum(r.n_samples for r in reports),
                      gradient=grad, layout=param_layout(spec), flagged_index=flagged)


class Adam:
    def __init__(self, lr=0.002, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params, grad):
        """Ascent step (the ELBO is maximized)."""
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        mhat = self.m / (1 - self.beta1 ** self.t)
        vhat = self.v / (1 - self.beta2 ** self.t)
        return params + self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class FitResult:
    spec: object
    trace: list
    final: ElboReport
    wall_ms: float = 0.0


def fit(spec, target, config=None, callback=None):
    """Maximize the ELBO with Adam.

    Returns a :class:`FitResult`. Raises :class:`NumericalError` carrying the
    last finite spec (``err.checkpoint``) if parameters or gradients diverge.
    """
    config = config or TrainConfig()
    base = RngState(config.seed)
    train_rng = base.spawn(1)
    eval_rng = base.spawn(2)
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_epsilon)
    trace = []
    t0 = time.perf_counter()
    current = previous = spec
    for it in range(int(config.iterations)):
        try:
            rep = elbo_gradient(current, target, config.mc_samples_per_step, train_rng, config.threads)
        except DomainError as exc:
            # parameters left the valid region (e.g. a shape underflowed to 0)
            err = NumericalError(f"iteration {it}: {exc}")
            err.checkpoint = previous
            err.trace = trace
            raise err from exc
        g = rep.gradient
        if rep.flagged or not np.all(np.isfinite(g)):
            err = NumericalError(f"non-finite ELBO or gradient at iteration {it}", index=rep.flagged_index)
            err.checkpoint = current
            err.trace = trace
            raise err
        new_params = opt.step(current.params, g)
        if not np.all(np.isfinite(new_params)):
            err = NumericalError(f"non-finite parameters at iteration {it}")
            err.checkpoint = current
            err.trace = trace
            raise err
        wall = (time.perf_counter() - t0) * 1e3 if config.record_timing else 0.0
        trace.append(TraceRow(it, rep.value, rep.std_error, float(np.linalg.norm(g)), wall))
        if callback is not None:
            callback(it, current, rep)
        previous, current = current, current.with_params(new_params)
    try:
        final = estimate_elbo(current, target, config.elbo_eval_samples, eval_rng)
    except DomainError as exc:
        err = NumericalError(f"final evaluation: {exc}")
        err.checkpoint = previous
        err.trace = trace
        raise err from exc
    wall = (time.perf_counter() - t0) * 1e3 if config.record_timing else 0.0
    return FitResult(spec=current, trace=trace, final=final, wall_ms=wall)


def smoothed_trace(values, window=100):
    """Trailing moving average; entry ``i`` averages ``values[i-window+1 .. i]``."""
    values = np.asarray(values, dtype=float)
    if values.size < window:
        window = max(values.size, 1)
    c = np.cumsum(np.insert(values, 0, 0.0))
    return (c[window:] - c[:-window]) / window


def monotone_violations(values, window=100, tail=0.8, checkpoints=10, z=2.0):
    """Count decreases of the smoothed trace over the last ``tail`` fraction.

    The window-``window`` moving average is read at ``checkpoints`` evenly
    spaced iterations spanning the tail. A decrease between consecutive
    readings counts as a violation if it exceeds ``z`` combined standard
    errors, each window's error being its sample std over ``sqrt(window)``.
    Returns ``(violations, max_drop_in_stderr_units)``.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    start = int(np.floor(n * (1 - tail)))
    first = max(start + window - 1, window - 1)
    idx = np.linspace(first, n - 1, checkpoints).round().astype(int)
    means, errs = [], []
    for i in idx:
        seg = values[i - window + 1: i + 1]
        means.append(seg.mean())
        errs.append(seg.std(ddof=1) / np.sqrt(seg.size))
    means, errs = np.array(means), np.array(errs)
    drops = means[:-1] - means[1:]
    scale = np.sqrt(errs[:-1] ** 2 + errs[1:] ** 2)
    units = np.where(scale > 0, drops / np.where(scale > 0, scale, 1.0), np.where(drops > 0, np.inf, 0.0))
    return int((units > z).sum()), float(units.max(initial=-np.inf))
