"""L1-penalized sequential CQR, support extraction and cross-validated tuning."""

import math
from dataclasses import dataclass, field

import numpy as np

from .cqr import START, TIES, deviance_matrix, martingale_path, run_sequential
from .errors import DataError, HDCQRError, IdentifiabilityError
from .parallel import map_jobs
from .rng import stream

VIOLATION_PENALTY = 1e6


def default_lambda_grid(n, p, num=8):
    """``num`` log-spaced values spanning ``[0.01, 1] * sqrt(log p / n)``, decreasing."""
    scale = math.sqrt(math.log(p) / n)
    return np.geomspace(scale, 0.01 * scale, num)


def default_max_support(n):
    return max(1, int(n / (2.0 * math.log(n))))


@dataclass
class SelectionConfig:
    """Tuning for the L-HDCQR selector.

    ``max_support`` caps the number of selected non-intercept columns; when
    None it is ``n / (2 log n)`` for the sample the selector runs on.
    ``standardize`` scales each column's penalty by its standard deviation.
    ``deviance`` and ``offset`` pick the residual forms used by
    cross-validation (see :func:`hdcqr.cqr.deviance_residual` and
    :func:`hdcqr.cqr.martingale_path`).  ``start`` and ``ties`` are the
    recursion options of :mod:`hdcqr.cqr`, used by every fit of a run.
    ``negative_var`` says what replaces a negative bias-corrected variance:
    ``"raw"`` the uncorrected variance, ``"zero"`` zero.
    """

    lambda_grid: np.ndarray = None
    K: int = 5
    a0: float = 1e-6
    max_support: int = None
    standardize: bool = True
    deviance: str = "standard"
    offset: str = "nu"
    start: str = START
    ties: str = TIES
    negative_var: str = "raw"

    def lambdas(self, n, p):
        if self.lambda_grid is None:
            return default_lambda_grid(n, p)
        lam = np.asarray(self.lambda_grid, dtype=np.float64).ravel()
        if lam.size == 0 or np.any(lam <= 0) or np.unique(lam).size != lam.size:
            raise DataError("lambda values must be positive and distinct")
        return lam

    def cap(self, n):
        return default_max_support(n) if self.max_support is None else int(self.max_support)


def column_scales(Z):
    """Standard deviations of the columns of Z (ddof 0); constant columns get 1."""
    sd = Z.std(axis=0)
    sd[sd <= 1e-12 * np.maximum(1.0, np.abs(Z).max(axis=0))] = 1.0
    return sd


def fit_lhdcqr(ds, grid, lam, strict=False, start=START, ties=TIES, standardize=True):
    """Penalized sequential fit over all columns.

    Every non-intercept column carries the penalty ``lam * n``, so ``lam`` is
    on the per-observation scale.  With ``standardize`` the penalty of column
    j is ``lam * n * sd_j``, which is the plain penalty on the standardized
    column (the free intercept absorbs centering), so selection does not
    depend on covariate units.  ``lam = 0`` reproduces the unpenalized fit.
    """
    if lam < 0:
        raise DataError("lambda must be nonnegative")
    scale = column_scales(ds.covariates) if standardize else np.ones(ds.p)
    pen = lam * ds.n * scale
    pen[0] = 0.0
    proc = run_sequential(ds.covariates, ds.log_times, ds.events, grid, pen,
                          np.arange(ds.p), strict=strict, start=start, ties=ties)
    proc.diagnostics["column_scale"] = scale
    return proc


def select_support(proc, a0=1e-6, max_support=None):
    """Columns whose penalized path exceeds ``a0`` somewhere on the grid.

    The intercept is always included.  When more than ``max_support``
    columns pass, the ones with the largest ``max_k |gamma_j(tau_k)|`` are
    kept, measured per standard deviation of the column when the fit was
    standardized.
    """
    coefs = proc.coefs[: proc.n_valid]
    peak = np.zeros(proc.support.size)
    if coefs.shape[0]:
        peak = np.max(np.abs(coefs), axis=0)
    rank = peak * proc.diagnostics.get("column_scale", np.ones(peak.size))
    cols = proc.support
    keep = [(rank[a], int(cols[a])) for a in range(cols.size) if cols[a] != 0 and peak[a] > a0]
    if max_support is not None and len(keep) > max_support:
        # stable: ties resolved by lower column index
        keep = sorted(keep, key=lambda t: (-t[0], t[1]))[:max_support]
    return np.array(sorted([0] + [j for _, j in keep]), dtype=np.intp)


@dataclass
class CVResult:
    lambdas: np.ndarray
    errors: np.ndarray
    fold_errors: np.ndarray
    violations: np.ndarray
    degenerate: np.ndarray
    lambda_star: float
    folds: list = field(repr=False, default_factory=list)

    @property
    def star_index(self):
        return int(np.flatnonzero(self.lambdas == self.lambda_star)[0])


def make_folds(n, K, seed, key=()):
    """Contiguous blocks of a seeded permutation."""
    if not 2 <= K <= n:
        raise DataError(f"need 2 <= K <= n, got K={K}")
    perm = stream(seed, "folds", *key).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, K)]


def holdout_error(train_proc, test, grid, deviance="standard", offset="nu"):
    """Integrated absolute deviance residual of held-out subjects.

    Returns ``(error, n_violations)``.  The integral over ``[nu, tau_u]`` is
    the left Riemann sum on the grid, exact for the step-function path.
    """
    mpath = martingale_path(test, train_proc, offset)
    D, bad = deviance_matrix(mpath, test.events, deviance)
    eps = grid.spacing
    K = grid.m if grid.m else 1
    per_subject = np.nansum(np.abs(D[:, :K]), axis=1) * (eps if grid.m else 1.0)
    per_subject[bad] = VIOLATION_PENALTY
    return float(per_subject.sum()), int(bad.sum())


def _cv_job(args):
    ds, grid, lam, train, test, config = args
    try:
        proc = fit_lhdcqr(ds.subset(train), grid, lam, start=config.start, ties=config.ties,
                          standardize=config.standardize)
    except HDCQRError:
        return np.inf, 0, True, 0
    if not proc.complete:
        return np.inf, 0, True, proc.n_valid
    err, nbad = holdout_error(proc, ds.subset(test), grid, config.deviance, config.offset)
    return err, nbad, False, proc.n_valid


def cross_validate(ds, grid, config=None, seed=0, key=(), threads=1):
    """K-fold choice of lambda by integrated absolute deviance residuals.

    Fits that cannot be carried across the whole grid count as degenerate
    (infinite error).  Raises :class:`IdentifiabilityError` if every lambda
    is degenerate.
    """
    config = config or SelectionConfig()
    lams = config.lambdas(ds.n, ds.p)
    folds = make_folds(ds.n, config.K, seed, key)
    everyone = np.arange(ds.n)
    jobs = []
    for lam in lams:
        for f in folds:
            jobs.append((ds, grid, float(lam), np.setdiff1d(everyone, f), f, config))
    out = map_jobs(_cv_job, jobs, threads)
    L, K = lams.size, len(folds)
    fold_errors = np.array([o[0] for o in out]).reshape(L, K)
    violations = np.array([o[1] for o in out]).reshape(L, K).sum(axis=1)
    degenerate = np.array([o[2] for o in out]).reshape(L, K).any(axis=1)
    errors = fold_errors.sum(axis=1)
    if np.all(~np.isfinite(errors)):
        reach = max(o[3] for o in out)
        last = float(grid.levels[reach - 1]) if reach else None
        tau = float(grid.levels[min(reach, grid.m)])
        raise IdentifiabilityError(f"every lambda produced a degenerate fit (tau={tau:.4f})",
                                   tau=tau, last_level=last)
    star = float(lams[int(np.argmin(errors))])
    return CVResult(lams, errors, fold_errors, violations, degenerate, star, folds)
