"""Command-line interface: ``hdcqr fit | cv | simulate``.

Settings come from an optional ``key=value`` file (``--config``) and are
overridden by flags.  Result files depend only on the data, the settings and
the seed; progress goes to standard error.
"""

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .cqr import fit_sequential_cqr
from .data import build_grid, default_grid_size, read_csv
from .errors import DataError, IdentifiabilityError, NumericalError, UnboundedError
from .fuse import default_B, run_fused
from .parallel import map_jobs
from .select import SelectionConfig, cross_validate
from .simgen import (aggregate_metrics, check_example, generate, null_coefficients,
                     _replication_job)

log = logging.getLogger("hdcqr")

EXIT_OK, EXIT_INPUT, EXIT_IDENT, EXIT_NUMERIC = 0, 2, 3, 4


@dataclasses.dataclass
class RunConfig:
    nu: float = 0.1
    tau_u: float = 0.8
    grid_m: int = None
    B: int = None
    alpha: float = 0.05
    seed: int = 0
    lambda_grid: tuple = None
    K: int = 5
    a0: float = 1e-6
    max_support: int = None
    threads: int = 1
    report_taus: tuple = None
    output_dir: str = "."
    deviance: str = "standard"
    offset: str = "nu"
    start: str = "zero"
    ties: str = "dual"
    negative_var: str = "raw"
    # simulate only
    example: int = 1
    n: int = 300
    p: int = 300
    reps: int = 30
    null_coefs: int = 20

    def selection(self):
        return SelectionConfig(lambda_grid=self.lambda_grid, K=self.K, a0=self.a0,
                               max_support=self.max_support, deviance=self.deviance,
                               offset=self.offset, start=self.start, ties=self.ties,
                               negative_var=self.negative_var)

    def effective(self, n=None, p=None, simulate=False, **extra):
        """Settings with data-dependent defaults resolved, for run.json.

        ``threads`` and ``output_dir`` are left out: neither changes results.
        """
        out = dataclasses.asdict(self)
        out.pop("threads")
        out.pop("output_dir")
        if not simulate:
            for key in _SIMULATE_KEYS:
                out.pop(key)
        if n is not None:
            out["grid_m"] = self.grid_m if self.grid_m is not None else default_grid_size(n, p)
            out["B"] = self.B if self.B is not None else default_B(n)
        for key in ("lambda_grid", "report_taus"):
            if out[key] is not None:
                out[key] = [float(x) for x in out[key]]
        out.update(extra)
        return out


_SIMULATE_KEYS = ("example", "n", "p", "reps", "null_coefs")


def _floats(text):
    return tuple(float(x) for x in str(text).replace(";", ",").split(",") if x.strip())


_CASTS = {
    "nu": float, "tau_u": float, "grid_m": int, "B": int, "alpha": float, "seed": int,
    "lambda_grid": _floats, "K": int, "a0": float, "max_support": int, "threads": int,
    "report_taus": _floats, "output_dir": str, "deviance": str, "offset": str,
    "start": str, "ties": str, "negative_var": str,
    "example": int, "n": int, "p": int, "reps": int, "null_coefs": int,
}
_ALIASES = {"folds": "K", "out": "output_dir", "b": "B"}


def _key(name):
    name = name.strip().replace("-", "_")
    if name in _CASTS:
        return name
    if name.lower() in _ALIASES:
        return _ALIASES[name.lower()]
    raise DataError(f"unknown setting {name!r}")


def read_config(path):
    """Parse a ``key=value`` file; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            k = _key(k)
            try:
                values[k] = _CASTS[k](v.strip())
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad value for {k}") from None
    return values


def build_config(args):
    values = read_config(args.config) if args.config else {}
    for k in _CASTS:
        v = getattr(args, k, None)
        if v is not None:
            values[k] = v
    cfg = RunConfig(**values)
    if not 0.0 < cfg.nu < cfg.tau_u < 1.0:
        raise DataError("need 0 < nu < tau_u < 1")
    if not 0.0 < cfg.alpha < 1.0:
        raise DataError("alpha must lie in (0, 1)")
    if cfg.threads < 1:
        raise DataError("threads must be at least 1")
    return cfg


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "NA" if math.isnan(x) else repr(x)
    return str(x)


def write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _prepare(cfg, data_path):
    ds = read_csv(data_path)
    m = cfg.grid_m if cfg.grid_m is not None else default_grid_size(ds.n, ds.p)
    grid = build_grid(cfg.nu, cfg.tau_u, m)
    # an intercept-only path that cannot reach tau_u means the range is too wide
    fit_sequential_cqr(ds, grid, support=(0,), strict=True, start=cfg.start, ties=cfg.ties)
    return ds, grid


def _cv_rows(cv):
    rows = []
    for a, lam in enumerate(cv.lambdas):
        rows.append([float(lam), float(cv.errors[a])] + [float(e) for e in cv.fold_errors[a]]
                    + [int(cv.violations[a]), bool(cv.degenerate[a]), a == cv.star_index])
    header = (["lambda", "cv_error"] + [f"fold_{k + 1}" for k in range(cv.fold_errors.shape[1])]
              + ["violations", "degenerate", "selected"])
    return header, rows


def cmd_cv(cfg, data_path):
    ds, grid = _prepare(cfg, data_path)
    t0 = time.time()
    cv = cross_validate(ds, grid, cfg.selection(), cfg.seed, threads=cfg.threads)
    log.info("cross-validation: lambda*=%.6g in %.1fs", cv.lambda_star, time.time() - t0)
    os.makedirs(cfg.output_dir, exist_ok=True)
    header, rows = _cv_rows(cv)
    write_table(os.path.join(cfg.output_dir, "cv_errors.csv"), header, rows)
    return cv


def cmd_fit(cfg, data_path):
    ds, grid = _prepare(cfg, data_path)
    B = cfg.B if cfg.B is not None else default_B(ds.n)
    t0 = time.time()
    res = run_fused(ds, grid, cfg.selection(), B=B, seed=cfg.seed, alpha=cfg.alpha,
                    threads=cfg.threads)
    log.info("fused fit: B=%d, lambda*=%.6g, %d failed splits, %.1fs",
             B, res.lambda_star, res.failed_splits, time.time() - t0)
    os.makedirs(cfg.output_dir, exist_ok=True)
    if cfg.report_taus is None:
        cols = [(float(t), k) for k, t in enumerate(grid.levels)]
    else:
        cols = [(float(t), grid.index(t)) for t in cfg.report_taus]
    rows = []
    se = res.se
    for t, k in cols:
        for j, name in enumerate(ds.feature_names):
            rows.append([t, name, res.beta_hat[j, k], se[j, k], res.ci_lo[j, k], res.ci_hi[j, k],
                         res.pvalues[j, k], res.selection_freq[j], int(res.n_valid[j, k])])
    write_table(os.path.join(cfg.output_dir, "coefficients.csv"),
                ["tau", "feature", "estimate", "se", "ci_lo", "ci_hi", "pvalue",
                 "selection_freq", "n_valid_splits"], rows)
    write_table(os.path.join(cfg.output_dir, "selection_freq.csv"), ["feature", "selection_freq"],
                [[name, res.selection_freq[j]] for j, name in enumerate(ds.feature_names)])
    header, cvrows = _cv_rows(res.cv)
    write_table(os.path.join(cfg.output_dir, "cv_errors.csv"), header, cvrows)
    full = [] if res.full_selected is None else [ds.feature_names[j] for j in res.full_selected]
    write_json(os.path.join(cfg.output_dir, "run.json"), {
        "command": "fit",
        "version": __version__,
        "data": os.path.basename(data_path),
        "config": cfg.effective(ds.n, ds.p, lambda_grid=[float(x) for x in res.cv.lambdas]),
        "n": ds.n, "p": ds.p, "n1": res.n1, "censoring_rate": ds.censoring_rate,
        "grid": [float(x) for x in grid.levels],
        "lambda_star": res.lambda_star,
        "failed_splits": res.failed_splits,
        "floored_variances": int(res.floored.sum()),
        "degenerate_variances": int(np.sum(res.degenerate_var)),
        "non_estimable_cells": int(np.sum(np.isnan(res.beta_hat))),
        "full_data_selection": full,
    })
    return res


def cmd_simulate(cfg):
    ex = check_example(cfg.example)
    seed = cfg.seed
    _, truth = generate(ex, cfg.n, cfg.p, seed, 0)
    coefs = (0,) + tuple(truth.support) + null_coefficients(truth, cfg.null_coefs, seed)
    taus = cfg.report_taus if cfg.report_taus is not None else (0.25, 0.5, 0.75)
    B = cfg.B if cfg.B is not None else default_B(cfg.n)
    opts = dict(config=cfg.selection(), B=B, nu=cfg.nu, tau_u=cfg.tau_u, grid_m=cfg.grid_m,
                alpha=cfg.alpha)
    jobs = [(ex, cfg.n, cfg.p, seed, rep, coefs, taus, opts) for rep in range(cfg.reps)]
    t0 = time.time()
    results = map_jobs(_replication_job, jobs, cfg.threads)
    log.info("simulate: %d replications in %.1fs", cfg.reps, time.time() - t0)
    table = aggregate_metrics(results, truth, taus, cfg.alpha)
    names = ["intercept"] + [f"z{j}" for j in range(1, cfg.p)]
    os.makedirs(cfg.output_dir, exist_ok=True)
    write_table(os.path.join(cfg.output_dir, "metrics.csv"),
                ["example", "n", "p", "coefficient", "tau", "bias", "empsd", "se", "coverage",
                 "power", "freq"],
                [[ex, cfg.n, cfg.p, names[r["coefficient"]], r["tau"], r["bias"], r["empsd"],
                  r["se"], r["coverage"], r["power"], r["freq"]] for r in table.rows])
    write_table(os.path.join(cfg.output_dir, "selection.csv"), ["example", "n", "p", "tp", "fp"],
                [[ex, cfg.n, cfg.p, table.tp, table.fp]])
    write_json(os.path.join(cfg.output_dir, "run.json"), {
        "command": "simulate",
        "version": __version__,
        "config": cfg.effective(cfg.n, cfg.p, simulate=True, report_taus=[float(t) for t in taus]),
        "truth": truth.metadata(),
        "reported_coefficients": [names[j] for j in coefs],
        "censoring_rate_mean": float(np.mean([r.censoring_rate for r in results])),
        "floored_variances": int(sum(r.floored for r in results)),
    })
    return table


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hdcqr", description="Fused high-dimensional censored quantile regression.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value settings file; flags take precedence")
        p.add_argument("--nu", type=float, help="lowest quantile level (default 0.1)")
        p.add_argument("--tau-u", dest="tau_u", type=float, help="highest level (default 0.8)")
        p.add_argument("--grid-m", dest="grid_m", type=int,
                       help="grid intervals (default round(n / log p))")
        p.add_argument("--B", dest="B", type=int, help="splits (default max(100, n), at most 1000)")
        p.add_argument("--alpha", type=float, help="CI / test level (default 0.05)")
        p.add_argument("--seed", type=int, help="root random seed (default 0)")
        p.add_argument("--lambda-grid", dest="lambda_grid", type=_floats,
                       help="comma-separated penalty levels")
        p.add_argument("--folds", dest="K", type=int, help="cross-validation folds (default 5)")
        p.add_argument("--a0", type=float, help="selection threshold (default 1e-6)")
        p.add_argument("--threads", type=int, help="worker processes (default 1)")
        p.add_argument("--report-taus", dest="report_taus", type=_floats,
                       help="comma-separated levels to report (default: whole grid)")
        p.add_argument("--out", dest="output_dir", help="output directory (default .)")
        p.add_argument("-v", "--verbose", action="store_true")

    for name, text in (("fit", "cross-validate, then fused estimates and inference"),
                       ("cv", "cross-validation table only")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--data", required=True, help="CSV with columns time,status,covariates")
        common(p)
    p = sub.add_parser("simulate", help="Monte Carlo replications of a simulation design")
    p.add_argument("--example", type=int, help="design 1, 2 or 3")
    p.add_argument("--n", type=int, help="sample size (default 300)")
    p.add_argument("--p", type=int, help="columns including intercept (default 300)")
    p.add_argument("--reps", type=int, help="replications (default 30)")
    p.add_argument("--null-coefs", dest="null_coefs", type=int,
                   help="true-zero coefficients to report (default 20)")
    common(p)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="hdcqr: %(message)s", stream=sys.stderr)
    try:
        cfg = build_config(args)
        if args.command == "fit":
            cmd_fit(cfg, args.data)
        elif args.command == "cv":
            cmd_cv(cfg, args.data)
        else:
            cmd_simulate(cfg)
    except IdentifiabilityError as exc:
        last = "none" if exc.last_level is None else f"{exc.last_level:.4f}"
        print(f"hdcqr: {exc} (last identifiable level: {last})", file=sys.stderr)
        return EXIT_IDENT
    except (NumericalError, UnboundedError) as exc:
        print(f"hdcqr: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, ValueError) as exc:
        print(f"hdcqr: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
