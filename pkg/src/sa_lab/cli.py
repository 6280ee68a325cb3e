"""Command-line entry point ``sa-lab``.

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 failed
acceptance checks under ``--assert``. Diagnostics go to stderr.
"""
import argparse
import json
import os
import sys
import time

import numpy as np

from . import io as sio
from .config import load_config
from .errors import ConfigError, SALabError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_ASSERT = 0, 1, 2, 3
HELP_WIDTH = 80
METRIC_OPS = ("wasserstein_1d", "wasserstein_exact", "wasserstein_sliced", "moment_profile")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=HELP_WIDTH, max_help_position=28)


def _threads(text):
    if text == "auto":
        return "auto"
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("threads must be a positive integer or 'auto'")
    if v < 1:
        raise argparse.ArgumentTypeError("threads must be a positive integer or 'auto'")
    return v


def _run_flags(p, with_assert=False):
    p.add_argument("config", help="experiment config (JSON)")
    p.add_argument("--overrides", nargs="+", default=[], metavar="KEY=VALUE",
                   help="dotted-key overrides applied after validation")
    p.add_argument("--seed", type=int, default=None, help="replace the config master seed")
    p.add_argument("--output-dir", default=None, help="directory for CSV/JSON outputs")
    p.add_argument("--threads", type=_threads, default=None,
                   help="worker count or 'auto' (default: $SA_LAB_THREADS or 1)")
    if with_assert:
        p.add_argument("--assert", dest="do_assert", action="store_true",
                       help="exit 3 if any acceptance check fails")


def build_parser():
    parser = _Parser(prog="sa-lab", formatter_class=_formatter,
                     description="Stochastic-approximation laboratory.")
    sub = parser.add_subparsers(dest="verb", metavar="VERB", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("validate", help="validate a config and print its hash",
                       formatter_class=_formatter, description="Validate a config and print its hash.")
    p.add_argument("config", help="experiment config (JSON)")
    p.add_argument("--overrides", nargs="+", default=[], metavar="KEY=VALUE",
                   help="dotted-key overrides applied after validation")

    p = sub.add_parser("simulate", help="run an SA ensemble and write checkpoint snapshots",
                       formatter_class=_formatter,
                       description="Run an SA ensemble and write checkpoint snapshots.")
    _run_flags(p)

    p = sub.add_parser("experiment", help="run a configured experiment",
                       formatter_class=_formatter, description="Run a configured experiment.")
    _run_flags(p, with_assert=True)

    p = sub.add_parser("metric", help="compute a standalone metric on sample CSV files",
                       formatter_class=_formatter,
                       description="Compute a standalone metric on sample CSV files.")
    p.add_argument("--op", required=True, choices=METRIC_OPS, help="metric to compute")
    p.add_argument("--a", required=True, help="first sample CSV (header x0,x1,...)")
    p.add_argument("--b", default=None, help="second sample CSV (distances only)")
    p.add_argument("--p", type=float, default=1.0, help="order p >= 1 (default 1)")
    p.add_argument("--directions", type=int, default=64, help="sliced directions (default 64)")
    p.add_argument("--seed", type=int, default=0, help="seed for sliced directions")

    p = sub.add_parser("report", help="summarise an experiment output directory",
                       formatter_class=_formatter,
                       description="Summarise an experiment output directory.")
    p.add_argument("output_dir", help="directory written by 'experiment'")
    return parser


def _resolve_threads(value):
    from .engine import resolve_threads
    if value is None:
        value = os.environ.get("SA_LAB_THREADS", 1)
    return resolve_threads(value)


def _default_dir(cfg):
    return cfg.get("output_dir") or os.path.join("runs", f"{cfg.experiment}-{cfg.config_hash()}")


def _cmd_validate(args):
    cfg = load_config(args.config, args.overrides)
    print(f"config hash: {cfg.config_hash()}")
    return EXIT_OK


def _cmd_simulate(args):
    from .experiments import exp_simulate
    cfg = load_config(args.config, args.overrides, args.seed, args.output_dir)
    out = _default_dir(cfg)
    threads = _resolve_threads(args.threads)
    t0 = time.perf_counter()
    res = exp_simulate(cfg, threads=threads)
    sio.write_snapshot_csv(os.path.join(out, "snapshots.csv"), res.ensemble)
    sio.write_json(os.path.join(out, "manifest.json"), sio.manifest(cfg))
    sio.write_json(os.path.join(out, "summary.json"),
                   dict(res.summary, wall_time_s=time.perf_counter() - t0))
    print(f"wrote {out}", file=sys.stderr)
    return EXIT_OK


def _cmd_experiment(args):
    from .experiments import run_experiment
    cfg = load_config(args.config, args.overrides, args.seed, args.output_dir)
    out = _default_dir(cfg)
    threads = _resolve_threads(args.threads)
    t0 = time.perf_counter()
    res = run_experiment(cfg, threads=threads)
    sio.write_metric_csv(os.path.join(out, "metrics.csv"), res.records)
    for name, (header, rows) in res.tables.items():
        sio.write_csv(os.path.join(out, f"{name}.csv"), header, rows)
    sio.write_json(os.path.join(out, "manifest.json"), sio.manifest(cfg))
    sio.write_json(os.path.join(out, "summary.json"),
                   {"experiment": res.name, "summary": res.summary, "checks": res.checks,
                    "wall_time_s": time.perf_counter() - t0})
    for name, ok in res.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}", file=sys.stderr)
    print(f"wrote {out}", file=sys.stderr)
    if args.do_assert and not all(res.checks.values()):
        return EXIT_ASSERT
    return EXIT_OK


def _cmd_metric(args):
    from . import transport
    A = sio.read_samples_csv(args.a)
    if args.op == "moment_profile":
        prof = transport.moment_profile(A, orders=(1, 2, 4))
        print(json.dumps({"orders": list(prof.orders), "values": prof.values.tolist(),
                          "kurtosis": prof.kurtosis.tolist()}))
        return EXIT_OK
    if args.b is None:
        raise ConfigError("distance metrics need --b", key="--b")
    B = sio.read_samples_csv(args.b)
    if args.op == "wasserstein_1d":
        est = transport.wasserstein_1d(A, B, args.p)
    elif args.op == "wasserstein_exact":
        est = transport.wasserstein_exact(A, B, args.p)
    else:
        est = transport.wasserstein_sliced(A, B, args.p, args.directions, args.seed)
    print(repr(float(est.value)))
    return EXIT_OK


def _cmd_report(args):
    path = os.path.join(args.output_dir, "summary.json")
    try:
        with open(path, encoding="utf-8") as fh:
            body = json.load(fh)
    except FileNotFoundError:
        raise ConfigError("no summary.json found", path=args.output_dir) from None
    print(f"experiment: {body.get('experiment')}")
    summary = body.get("summary", {})
    fits = summary.get("fits", {})
    for key, fit in fits.items():
        print(f"fit[{key}]: slope={fit.get('slope')!r} ci={fit.get('slope_ci')} "
              f"r2={fit.get('r2')!r} no_signal={fit.get('no_signal')}")
    for key in ("fit_vs_sqrt_h", "fit_vs_h", "fit"):
        if key in summary:
            f = summary[key]
            print(f"{key}: slope={f.get('slope')!r} ci={f.get('slope_ci')}")
    if "W_last" in fits and "W_pr" in fits:
        print("last-iterate vs PR: see metrics.csv rows W_last / W_pr (no crossover claim)")
    for name, ok in body.get("checks", {}).items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK


COMMANDS = {"validate": _cmd_validate, "simulate": _cmd_simulate, "experiment": _cmd_experiment,
            "metric": _cmd_metric, "report": _cmd_report}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return COMMANDS[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SALabError as exc:
        where = f"{getattr(args, 'config', '')}: " if getattr(args, "config", None) else ""
        print(f"runtime error: {where}{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError) as exc:
        where = f"{getattr(args, 'config', '')}: " if getattr(args, "config", None) else ""
        print(f"runtime error: {where}{exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
