"""Run shipped fixture configs end to end and print their checks.

    python scripts/run_fixtures.py                     # every experiment fixture
    python scripts/run_fixtures.py lsa_scalar coupling --threads 2
"""
import argparse
import os
import sys
import time

from sa_lab.cli import main

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIXTURES = os.path.join(ROOT, "fixtures")


def experiment_fixtures():
    skip = {"samples_expected.json"}
    return sorted(f[:-5] for f in os.listdir(FIXTURES) if f.endswith(".json") and f not in skip)


def run(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", help="fixture names without .json (default: all)")
    ap.add_argument("--out", default=os.path.join(ROOT, "runs"), help="parent output directory")
    ap.add_argument("--threads", default="1")
    args = ap.parse_args(argv)
    codes = {}
    for name in args.names or experiment_fixtures():
        cfg = os.path.join(FIXTURES, f"{name}.json")
        verb = "simulate" if name == "lsa_d3" else "experiment"
        t0 = time.perf_counter()
        print(f"== {name}", file=sys.stderr, flush=True)
        codes[name] = main([verb, cfg, "--output-dir", os.path.join(args.out, name),
                            "--threads", args.threads] + (["--assert"] if verb == "experiment" else []))
        print(f"   exit {codes[name]} after {time.perf_counter() - t0:.1f}s", file=sys.stderr)
    return 0 if all(c == 0 for c in codes.values()) else 3


if __name__ == "__main__":
    sys.exit(run())
