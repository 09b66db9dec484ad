"""Command line entry point: ``knary-sim <experiment> --config <path>``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

from .simulate import ConfigurationError

log = logging.getLogger("knary")

EPILOG = """\
exit status: 0 all checks passed, 2 a check failed, 1 configuration or usage error.
KNARY_SEED, when set, overrides the seed in the configuration file.

output: <out>/<experiment>.csv (one row per table entry, floats with 17
significant digits) and <out>/<experiment>.json (resolved configuration,
build id, summary, pass flag).

CSV columns:
  lln-sweep         h, error, stderr
  fluctuation       function, h, variance, limit, relative_error, mean
  entropy-limit     h, estimate, stderr, limit, relative_gap
  martingale-check  h, mean, stderr, z, ess
  covariance-check  h, disjoint_z, variance_ratio, replicas
  gelation          t, second_moment, majorant
  rate-compare      tilt, r_upper, r_lower, ordering_ok, [in_basis_rel_gap],
                    alternative_rhs_diff, r_lower_alternative
  validate-kernel   check, ok, max_balance, value
  ctmc-oracle       state, probability, observed
  rare-event        h, naive_hlogP, naive_hits, is_hlogP, is_ess, reference
"""


def _fmt(v):
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.17g}"
    return str(v)


def write_csv(rows, path) -> None:
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) if c in r else "" for c in cols])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "item"):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


class _Parser(argparse.ArgumentParser):
    # usage errors count as configuration errors; 2 is reserved for failed checks
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    from .experiments import EXPERIMENTS

    p = _Parser(prog="knary-sim", description="Run a k-nary particle system experiment.",
                                epilog=EPILOG, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="JSON configuration file")
    p.add_argument("--workers", type=int, default=1, help="parallel replica workers (default 1)")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def load_config(path, experiment: str) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigurationError("configuration must be a JSON object")
    if cfg.setdefault("experiment", experiment) != experiment:
        raise ConfigurationError(f"config is for {cfg['experiment']!r}, not {experiment!r}")
    env = os.environ.get("KNARY_SEED")
    if env is not None:
        try:
            cfg["seed"] = int(env)
        except ValueError as exc:
            raise ConfigurationError(f"KNARY_SEED must be an integer, got {env!r}") from exc
    return cfg


def main(argv=None) -> int:
    from .experiments import build_id, run_experiment

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.workers < 1:
            raise ConfigurationError("--workers must be >= 1")
        cfg = load_config(args.config, args.experiment)
        rep = run_experiment(cfg, args.workers)
    except (ConfigurationError, KeyError, TypeError, ValueError) as exc:
        print(f"knary-sim: configuration error: {exc}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(rep.rows, out / f"{rep.experiment}.csv")
    summary = {"experiment": rep.experiment, "build": build_id(), "config": rep.config,
               "summary": rep.summary, "passed": rep.passed}
    (out / f"{rep.experiment}.json").write_text(json.dumps(_jsonable(summary), indent=2))
    print(f"{rep.experiment}: {'PASS' if rep.passed else 'FAIL'}")
    for r in rep.rows:
        log.info(", ".join(f"{k}={_fmt(v)}" for k, v in r.items()))
    return 0 if rep.passed else 2


if __name__ == "__main__":
    sys.exit(main())
