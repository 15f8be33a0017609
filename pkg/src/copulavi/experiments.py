"""Experiment orchestration: single fits, table reproductions and output files.

Every file written here starts with a header carrying the package version
and the hash of the resolved configuration (a ``#`` comment line for CSV, a
``header`` object for JSON).
"""
import csv
from dataclasses import asdict
import itertools
import json
import os

import numpy as np
from scipy import optimize

from . import __version__
from .config import ExperimentConfig, config_hash
from .elbo import TrainConfig, estimate_elbo, fit, monotone_violations
from .exceptions import ConfigurationError
from .families import (COPULA_KINDS, INDEP_KINDS, FlowSample, family_sample, init_family,
                       load_family, mixture_weights, save_family)
from .oracle import GridSpec, OracleRecord, grid_kl, grid_log_z, support_box, write_records
from .sampling import RngState
from .tables import TABLES
from .targets import GaussianTarget, target_from_config

MASKED_KINDS = COPULA_KINDS + INDEP_KINDS

__all__ = [
    "default_grid",
    "run_fit",
    "run_reproduce",
    "run_sample",
    "best_mask_fit",
    "write_trace_csv",
    "write_samples_csv",
    "map_point",
]

TRACE_COLUMNS = ("iteration", "elbo", "elbo_stderr", "grad_norm", "wall_ms")
SUMMARY_KEYS = ("family", "target", "elbo", "elbo_stderr", "kl", "log_z", "iterations", "wall_ms")

# quadrature boxes validated by the boundary-density check
_GRIDS = {
    "horseshoe": GridSpec((-60.0, -40.0), (5.0, 30.0), 400),
    "logistic": GridSpec((-80.0, -80.0), (80.0, 80.0), 1000),
}


def default_grid(target):
    """Quadrature box for a 2-D target, or None when no box is known."""
    if target.d != 2:
        return None
    if isinstance(target, GaussianTarget):
        sd = np.sqrt((target.cov_factor ** 2).sum(axis=1))
        return GridSpec(tuple(target.mean - 12 * sd), tuple(target.mean + 12 * sd), 400)
    return _GRIDS.get(target.label)


def map_point(target, start=None):
    """Mode of the target by BFGS (used to centre initial families)."""
    x0 = np.zeros(target.d) if start is None else np.asarray(start, float)
    res = optimize.minimize(target.u, x0, jac=target.grad_u, method="BFGS")
    return res.x


def _header(config, **extra):
    doc = {"version": __version__, "config_hash": config_hash(config)}
    doc.update(extra)
    return doc


def _header_line(header):
    return "# " + " ".join(f"{k}={v}" for k, v in header.items())


def write_trace_csv(trace, path, header):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_header_line(header) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow([row.iteration, repr(row.elbo), repr(row.elbo_stderr),
                        repr(row.grad_norm), repr(float(row.wall_ms))])


def _write_json(doc, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def oracle_values(spec, target):
    """(log_z, kl) by quadrature for 2-D targets with a known box, else (None, None)."""
    grid = default_grid(target)
    if grid is None:
        return None, None
    log_z = grid_log_z(target, grid).value
    kl = grid_kl(spec, target, grid, support_box(spec, 1000))
    return log_z, kl


def run_fit(config: ExperimentConfig, threads=None, out_dir=None, with_oracle=True):
    """Fit one family to one target and write the requested outputs.

    Returns the summary dict (also written as JSON when enabled).
    """
    out_dir = out_dir or config.output_dir
    target = target_from_config(config.target, seed=config.seed)
    train = config.train_config(threads)
    overrides = dict(config.init_overrides)
    setup = TABLES.get(config.experiment)
    if setup is not None and setup.init_at_map:
        overrides.setdefault("init_at_map", True)
    if overrides.pop("init_at_map", False):
        overrides["target_mean"] = map_point(target).tolist()
    spec = init_family(config.family["kind"], target.d, overrides, RngState(config.seed, 3))
    result = fit(spec, target, train)
    log_z = kl = None
    if with_oracle and target.d == 2:
        log_z, kl = oracle_values(result.spec, target)
    summary = {
        "family": config.family["kind"],
        "target": target.label,
        "elbo": result.final.value,
        "elbo_stderr": result.final.std_error,
        "kl": kl,
        "log_z": log_z,
        "iterations": train.iterations,
        "wall_ms": result.wall_ms,
    }
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        header = _header(config, family=config.family["kind"], seed=config.seed)
        if config.emit["trace_csv"]:
            write_trace_csv(result.trace, os.path.join(out_dir, "trace.csv"), header)
        save_family(result.spec, os.path.join(out_dir, "checkpoint.json"), {"header": header})
        if config.emit["summary_json"]:
            _write_json(dict(summary, header=header), os.path.join(out_dir, "summary.json"))
        if config.emit["oracle_json"] and log_z is not None:
            grid = default_grid(target)
            rec = [OracleRecord("log_z", target.label, config.family["kind"], log_z, 1e-4,
                                "trapezoid", asdict(grid), config.seed),
                   OracleRecord("kl", target.label, config.family["kind"], kl, 1e-3,
                                "trapezoid", asdict(grid), config.seed)]
            write_records(rec, os.path.join(out_dir, "oracle.json"), header)
        if config.emit["samples_csv"]:
            run_sample(os.path.join(out_dir, "checkpoint.json"), 1000,
                       os.path.join(out_dir, "samples.csv"), seed=config.seed, header=header)
    summary["trace"] = result.trace
    summary["spec"] = result.spec
    return summary


def _ordering_ok(values, ordering):
    ok = True
    for i, j, strict in ordering:
        ok &= values[i] > values[j] if strict else values[i] >= values[j]
    return bool(ok)


def best_mask_fit(kind, target, overrides, train, seed):
    """Fit every flip orientation and return the fit with the highest final ELBO.

    The mask is frozen during training, so its ``2**d`` orientations act as
    restarts. Returns ``(flips, FitResult)``.
    """
    best = None
    for flips in itertools.product([False, True], repeat=target.d):
        spec = init_family(kind, target.d, dict(overrides, flips=list(flips)), RngState(seed, 3))
        res = fit(spec, target, train)
        if best is None or res.final.value > best[1].final.value:
            best = (list(flips), res)
    return best


def run_reproduce(table, seed=0, threads=None, log=None):
    """Fit every row of a table and compare against the reference values.

    Multi-dataset tables use dataset seeds ``seed .. seed + n_datasets - 1``;
    reference values are compared with the across-dataset mean and the
    ordering must hold on at least ``min_order_passes`` datasets.
    Returns a report dict with ``passed``. The trained fits are kept under
    ``_fits`` (not serialized).
    """
    if table not in TABLES:
        raise ConfigurationError(f"unknown table {table!r}; choose from {sorted(TABLES)}")
    setup = TABLES[table]
    per_seed, fits = [], []
    for s in range(seed, seed + setup.n_datasets):
        target = target_from_config(dict(setup.target, data_seed=s), seed=s)
        overrides = dict(setup.family)
        if setup.init_at_map:
            overrides["target_mean"] = map_point(target).tolist()
        train = TrainConfig(**dict(setup.train, seed=s, threads=threads or 1))
        values, errors = [], []
        for row in setup.rows:
            if setup.mask_search and row.kind in MASKED_KINDS:
                _, res = best_mask_fit(row.kind, target, overrides, train, s)
            else:
                spec = init_family(row.kind, target.d, overrides, RngState(s, 3))
                res = fit(spec, target, train)
            fits.append({"seed": s, "kind": row.kind, "target": target, "spec": res.spec,
                         "trace": res.trace, "final": res.final})
            values.append(res.final.value)
            errors.append(res.final.std_error)
            if log:
                log(f"seed {s} {row.name:16s} {res.final.value:+.4f} +- {res.final.std_error:.4f}")
        per_seed.append({"seed": s, "values": values, "stderr": errors,
                         "ordering_ok": _ordering_ok(values, setup.ordering)})
    means = np.mean([p["values"] for p in per_seed], axis=0)
    rows = []
    for row, m in zip(setup.rows, means):
        rows.append({"name": row.name, "kind": row.kind, "reference": row.reference,
                     "obtained": float(m), "within_tolerance": bool(abs(m - row.reference) <= setup.tolerance)})
    order_passes = sum(p["ordering_ok"] for p in per_seed)
    passed = all(r["within_tolerance"] for r in rows) and order_passes >= setup.min_order_passes
    return {"table": table, "tolerance": setup.tolerance, "rows": rows, "per_seed": per_seed,
            "ordering_passes": order_passes, "ordering_required": setup.min_order_passes,
            "passed": bool(passed), "_fits": fits}


def format_report(report):
    lines = [f"{report['table']}  (tolerance +-{report['tolerance']})",
             f"{'family':18s}{'reference':>10s}{'obtained':>10s}  status"]
    for r in report["rows"]:
        lines.append(f"{r['name']:18s}{r['reference']:>10.2f}{r['obtained']:>10.3f}  "
                     f"{'pass' if r['within_tolerance'] else 'FAIL'}")
    lines.append(f"ordering held on {report['ordering_passes']}/{len(report['per_seed'])} "
                 f"dataset(s), required {report['ordering_required']}")
    lines.append("PASS" if report["passed"] else "FAIL")
    return "\n".join(lines)


def write_samples_csv(sample, path, header, extra_columns=False):
    x = sample.x
    d = x.shape[1]
    cols = [f"x{i + 1}" for i in range(d)]
    blocks = [x]
    if extra_columns and sample.v is not None:
        for name in ("v", "u", "x_prime"):
            arr = getattr(sample, name)
            cols += [f"{name}{i + 1}" for i in range(d)]
            blocks.append(arr)
    cols.append("log_q")
    blocks.append(sample.log_q[:, None])
    data = np.hstack(blocks) if x.shape[0] else np.zeros((0, len(cols)))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(_header_line(header) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in data:
            w.writerow([repr(float(v)) for v in r])


def run_sample(checkpoint, n, path, seed=0, header=None, extra_columns=False):
    """Draw ``n`` samples from a saved family into a CSV file."""
    if not os.path.exists(checkpoint):
        raise ConfigurationError(f"checkpoint not found: {checkpoint}")
    spec = load_family(checkpoint)
    with open(checkpoint, encoding="utf-8") as fh:
        saved = json.load(fh).get("header", {})
    head = dict(header or saved)
    head.setdefault("version", __version__)
    head["family"] = spec.kind
    head["seed"] = seed
    n = int(n)
    if n < 0:
        raise ConfigurationError("sample count must be nonnegative")
    rng = RngState(seed, 5)
    if n == 0:
        sample = FlowSample(x=np.zeros((0, spec.d)), log_q=np.zeros(0))
    elif spec.kind == "mixture":
        # row i takes the i-th draw of a component chosen by weight
        strat = family_sample(spec, rng, n)
        comp = rng.generator.choice(len(spec.components), size=n, p=mixture_weights(spec))
        rows = comp * n + np.arange(n)
        sample = FlowSample(x=strat.x[rows], log_q=strat.log_q[rows], component=comp)
    else:
        sample = family_sample(spec, rng, n)
    write_samples_csv(sample, path, head, extra_columns)
    return path
