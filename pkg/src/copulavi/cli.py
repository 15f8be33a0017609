"""Command-line entry point: ``copulavi {fit,reproduce,check,sample}``.

Exit codes: 0 success, 1 acceptance failure, 2 configuration error,
3 numerical abort.
"""
import argparse
import json
import logging
import os
import sys

from . import __version__
from .checks import run_checks
from .config import ExperimentConfig, config_hash, load_config
from .exceptions import ConfigurationError, DomainError, NumericalError
from .experiments import format_report, run_fit, run_reproduce, run_sample

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("copulavi")


def _add_common(p, config=True):
    if config:
        p.add_argument("--config", metavar="PATH", help="dotted-key config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", metavar="DIR", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=None, help="gradient worker threads (default 1)")


def build_parser():
    parser = argparse.ArgumentParser(prog="copulavi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit one family to one target")
    _add_common(p)

    p = sub.add_parser("reproduce", help="reproduce a results table")
    p.add_argument("table", choices=("table1", "table2"))
    _add_common(p, config=False)

    p = sub.add_parser("check", help="run the invariant suite")
    p.add_argument("--out", metavar="DIR", default=None)
    p.add_argument("--mutation", default=None, help="inject a named fault (suite should fail)")

    p = sub.add_parser("sample", help="draw samples from a saved checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", metavar="PATH", default=None,
                   help="checkpoint file (default: <output_dir>/checkpoint.json)")
    p.add_argument("-n", type=int, default=1000, help="number of samples")
    p.add_argument("--intermediates", action="store_true", help="also write v, u and x' columns")
    return parser


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg.seed = int(args.seed)
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def _cmd_fit(args):
    cfg = _config(args)
    summary = run_fit(cfg, threads=args.threads)
    print(f"{summary['family']} on {summary['target']}: ELBO {summary['elbo']:.4f} "
          f"+- {summary['elbo_stderr']:.4f}")
    if summary["log_z"] is not None:
        print(f"log Z {summary['log_z']:.4f}  KL {summary['kl']:.4f}")
    return EXIT_OK


def _cmd_reproduce(args):
    seed = 0 if args.seed is None else args.seed
    report = run_reproduce(args.table, seed=seed, threads=args.threads, log=log.info)
    print(format_report(report))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        header = {"version": __version__,
                  "config_hash": config_hash({"table": args.table, "seed": seed})}
        with open(os.path.join(args.out, f"{args.table}.json"), "w", encoding="utf-8") as fh:
            doc = {k: v for k, v in report.items() if not k.startswith("_")}
            json.dump(dict(doc, header=header), fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK if report["passed"] else EXIT_FAIL


def _cmd_check(args):
    results = run_checks(mutation=args.mutation)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.module:14s} {r.name:{width}s}  {r.detail}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        doc = {"header": {"version": __version__, "config_hash": config_hash({"mutation": args.mutation})},
               "results": [r.as_dict() for r in results]}
        with open(os.path.join(args.out, "check.json"), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def _cmd_sample(args):
    cfg = _config(args)
    ckpt = args.checkpoint or os.path.join(cfg.output_dir, "checkpoint.json")
    out_dir = args.out or cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "samples.csv")
    run_sample(ckpt, args.n, path, seed=cfg.seed, extra_columns=args.intermediates)
    print(path)
    return EXIT_OK


COMMANDS = {"fit": _cmd_fit, "reproduce": _cmd_reproduce, "check": _cmd_check, "sample": _cmd_sample}


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigurationError, DomainError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
