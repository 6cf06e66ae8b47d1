"""Simulation designs, the oracle estimator and Monte Carlo summary tables.

Coefficient indices are 0-based with column 0 the intercept, so the
covariate ``Z~_20`` sits in column 20 and its coefficient is the 21st entry
of ``beta``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .cqr import fit_sequential_cqr
from .data import SurvivalDataset, build_grid, default_grid_size
from .errors import DataError
from .fuse import run_fused
from .rng import stream

CENSOR_VAR = 17.25
SIGNAL_COLUMNS = (20, 40, 60)


@dataclass(frozen=True)
class Hinge:
    """``slope * max(tau - knot, 0)`` (upper) or ``slope * min(tau - knot, 0)``."""

    slope: float
    knot: float
    upper: bool = True

    def __call__(self, tau):
        t = np.asarray(tau, dtype=np.float64) - self.knot
        return self.slope * (np.maximum(t, 0.0) if self.upper else np.minimum(t, 0.0))


DEFAULT_PHI1 = Hinge(10.0, 0.45, upper=True)
DEFAULT_PHI4 = Hinge(8.0, 0.40, upper=False)


def _check_monotone(phi, name):
    u = np.linspace(0.0, 1.0, 2001)
    vals = np.asarray(phi(u), dtype=np.float64)
    if vals.shape != u.shape or not np.all(np.isfinite(vals)) or np.any(np.diff(vals) < -1e-12):
        raise DataError(f"{name} must be finite and nondecreasing on [0, 1]")


@dataclass(frozen=True)
class TruthSpec:
    """Data-generating truth for one simulation design.

    ``beta(tau)`` returns the full length-p coefficient vector of the
    conditional quantile of ``log T`` at level ``tau``.
    """

    example_id: int
    n: int
    p: int
    support: tuple
    constant: np.ndarray = field(repr=False)
    censor_mean: float = 3.0
    censor_var: float = CENSOR_VAR
    phi1: object = None
    phi4: object = None

    @property
    def q(self):
        return len(self.support)

    def beta(self, tau):
        tau = float(tau)
        out = np.array(self.constant, dtype=np.float64)
        if self.example_id == 1:
            out[0] = norm.ppf(tau)
        elif self.example_id == 2:
            out[3] = 1.5 * norm.ppf(tau)
        else:
            out[1] = float(self.phi1(tau))
            out[4] = float(self.phi4(tau))
        return out

    def conditional_quantile(self, z, tau):
        return float(np.asarray(z) @ self.beta(tau))

    def metadata(self):
        meta = {"example": self.example_id, "n": self.n, "p": self.p,
                "support": list(self.support), "censor_mean": self.censor_mean,
                "censor_var": self.censor_var}
        if self.example_id == 3:
            meta["phi1"] = repr(self.phi1)
            meta["phi4"] = repr(self.phi4)
            meta["phi_note"] = "explicit monotone stand-ins; shapes only are specified"
        return meta


def _ar1_normal(rng, n, k, rho=0.3):
    e = rng.standard_normal((n, k))
    out = np.empty_like(e)
    out[:, 0] = e[:, 0]
    s = math.sqrt(1.0 - rho * rho)
    for j in range(1, k):
        out[:, j] = rho * out[:, j - 1] + s * e[:, j]
    return out


def _assemble(example_id, n, p, Zt, logT, censor_mean, rng, support, b, phi1=None, phi4=None):
    logC = rng.normal(censor_mean, math.sqrt(CENSOR_VAR), size=n)
    logX = np.minimum(logT, logC)
    delta = (logT <= logC).astype(np.float64)
    Z = np.column_stack([np.ones(n), Zt])
    constant = np.zeros(p)
    constant[1:] = b
    truth = TruthSpec(example_id, n, p, tuple(support), constant, censor_mean,
                      CENSOR_VAR, phi1, phi4)
    return SurvivalDataset(np.exp(logX), delta, Z), truth


def _check_p(p):
    if p < 61:
        raise DataError("p must be at least 61 so the signal columns exist")


def gen_example1(n, p, seed, rep=0):
    """Homoscedastic design: uniform covariates, N(0,1) errors."""
    _check_p(p)
    rng = stream(seed, "data", 1, rep)
    Zt = rng.uniform(-1.0, 1.0, size=(n, p - 1))
    b = np.zeros(p - 1)
    b[[19, 39, 59]] = (0.5, 1.0, 1.5)
    eps = rng.standard_normal(n)
    logT = Zt @ b + eps
    return _assemble(1, n, p, Zt, logT, 3.0, rng, SIGNAL_COLUMNS, b)


def gen_example2(n, p, seed, rep=0):
    """Heteroscedastic design: error scaled by a positive covariate."""
    _check_p(p)
    rng = stream(seed, "data", 2, rep)
    Zt = _ar1_normal(rng, n, p - 1)
    Zt[:, 2] = np.abs(Zt[:, 2]) + 0.5
    b = np.zeros(p - 1)
    b[[19, 39, 59]] = (1.0, 1.5, 2.0)
    eps = rng.standard_normal(n)
    logT = Zt @ b + 1.5 * Zt[:, 2] * eps
    return _assemble(2, n, p, Zt, logT, 4.0, rng, (3,) + SIGNAL_COLUMNS, b)


def gen_example3(n, p, seed, rep=0, phi1=DEFAULT_PHI1, phi4=DEFAULT_PHI4):
    """Quantile-varying effects ``phi1``, ``phi4`` on two positive covariates."""
    _check_p(p)
    _check_monotone(phi1, "phi1")
    _check_monotone(phi4, "phi4")
    rng = stream(seed, "data", 3, rep)
    Zt = _ar1_normal(rng, n, p - 1)
    Zt[:, 0] = np.abs(Zt[:, 0]) + 0.5
    Zt[:, 3] = np.abs(Zt[:, 3]) + 0.5
    b = np.zeros(p - 1)
    b[[19, 39, 59]] = (1.0, 1.5, 2.0)
    U = rng.uniform(size=n)
    logT = Zt @ b + phi1(U) * Zt[:, 0] + phi4(U) * Zt[:, 3]
    return _assemble(3, n, p, Zt, logT, 6.0, rng, (1, 4) + SIGNAL_COLUMNS, b, phi1, phi4)


GENERATORS = {1: gen_example1, 2: gen_example2, 3: gen_example3}


def check_example(example_id):
    if example_id not in GENERATORS:
        raise DataError(f"unknown example {example_id!r}; choose 1, 2 or 3")
    return example_id


def generate(example_id, n, p, seed, rep=0):
    try:
        gen = GENERATORS[int(example_id)]
    except (KeyError, ValueError):
        raise DataError(f"unknown example {example_id!r}; choose 1, 2 or 3") from None
    return gen(n, p, seed, rep)


def oracle_fit(ds, truth, grid, strict=False, **options):
    """Sequential fit restricted to the intercept and the true support."""
    return fit_sequential_cqr(ds, grid, support=(0,) + tuple(truth.support), strict=strict,
                              **options)


def null_coefficients(truth, count, seed):
    """``count`` seeded picks among the true-zero, non-intercept columns."""
    zeros = np.setdiff1d(np.arange(1, truth.p), truth.support)
    pick = stream(seed, "nulls", truth.example_id).choice(zeros, size=min(count, zeros.size),
                                                          replace=False)
    return tuple(int(j) for j in np.sort(pick))


@dataclass
class ReplicationResult:
    """Per-replication summary at the reported coefficients and levels.

    Arrays are ``(len(coefficients), len(taus))``; ``levels`` are the grid
    levels the taus map to.  ``floored`` and ``bc_above_raw`` count, over
    every cell of the run, negative corrected variances (replaced) and
    reported variances exceeding the raw ones.
    """

    rep: int
    coefficients: tuple
    taus: tuple
    levels: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    pvalue: np.ndarray
    freq: np.ndarray
    selected: tuple
    censoring_rate: float
    floored: int = 0
    bc_above_raw: int = 0
    var_raw: np.ndarray = None
    var_bc: np.ndarray = None


def run_replication(example_id, n, p, seed, rep, coefficients, report_taus, config=None,
                    B=100, nu=0.1, tau_u=0.8, grid_m=None, alpha=0.05, threads=1):
    """Generate one dataset and run the fused procedure on it."""
    ds, truth = generate(example_id, n, p, seed, rep)
    m = default_grid_size(n, p) if grid_m is None else int(grid_m)
    grid = build_grid(nu, tau_u, m)
    res = run_fused(ds, grid, config, B=B, seed=seed, alpha=alpha, threads=threads,
                    key=(rep,), keep_records=False)
    ks = [grid.index(t) for t in report_taus]
    rows = list(coefficients)
    sub = np.ix_(rows, ks)
    sel = () if res.full_selected is None else tuple(int(j) for j in res.full_selected)
    return ReplicationResult(
        rep=rep, coefficients=tuple(rows), taus=tuple(report_taus), levels=grid.levels[ks],
        estimate=res.beta_hat[sub], se=res.se[sub], ci_lo=res.ci_lo[sub], ci_hi=res.ci_hi[sub],
        pvalue=res.pvalues[sub], freq=res.selection_freq[rows], selected=sel,
        censoring_rate=ds.censoring_rate, floored=int(res.floored.sum()),
        bc_above_raw=int(np.sum(res.var_bc > res.var_raw)),
        var_raw=res.var_raw[sub], var_bc=res.var_bc[sub])


def _replication_job(args):
    return run_replication(*args[:-1], **args[-1])


@dataclass
class MetricsTable:
    """Monte Carlo summaries.

    ``rows`` holds one dict per (coefficient, tau) with keys coefficient, tau,
    bias, empsd, se, coverage, power, freq; NaN marks undefined values (e.g.
    ``empsd`` with one replication).  ``tp``/``fp`` average the full-data
    selections.
    """

    rows: list
    tp: float
    fp: float
    reps: int

    def cell(self, coefficient, tau):
        for r in self.rows:
            if r["coefficient"] == coefficient and r["tau"] == tau:
                return r
        raise KeyError((coefficient, tau))


def aggregate_metrics(results, truth, report_taus=None, alpha=0.05):
    """Bias, EmpSD, SE, coverage, power and selection frequency per cell.

    Truth is evaluated at the grid level each tau maps to.  Non-estimable
    (NaN) cells are dropped from that cell's averages.
    """
    results = list(results)
    if not results:
        raise DataError("no replications to aggregate")
    first = results[0]
    taus = first.taus if report_taus is None else tuple(report_taus)
    tcol = [first.taus.index(t) for t in taus]
    est = np.array([r.estimate for r in results])
    se = np.array([r.se for r in results])
    lo = np.array([r.ci_lo for r in results])
    hi = np.array([r.ci_hi for r in results])
    pv = np.array([r.pvalue for r in results])
    freq = np.array([r.freq for r in results])
    rows = []
    for a, j in enumerate(first.coefficients):
        for t, c in zip(taus, tcol):
            target = truth.beta(first.levels[c])[j]
            x = est[:, a, c]
            ok = ~np.isnan(x)
            xs = x[ok]
            row = {"coefficient": j, "tau": t}
            if xs.size == 0:
                row.update(bias=np.nan, empsd=np.nan, se=np.nan, coverage=np.nan, power=np.nan)
            else:
                row["bias"] = float(np.mean(xs - target))
                row["empsd"] = float(np.std(xs, ddof=1)) if xs.size > 1 else np.nan
                row["se"] = float(np.mean(se[ok, a, c]))
                row["coverage"] = float(np.mean((lo[ok, a, c] <= target) & (target <= hi[ok, a, c])))
                row["power"] = float(np.mean(pv[ok, a, c] < alpha))
            row["freq"] = float(np.mean(freq[:, a]))
            rows.append(row)
    star = set(truth.support)
    tp = [len(star & (set(r.selected) - {0})) for r in results]
    fp = [len((set(r.selected) - {0}) - star) for r in results]
    return MetricsTable(rows, float(np.mean(tp)), float(np.mean(fp)), len(results))
