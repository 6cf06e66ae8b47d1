"""Multi-split selection, append-and-estimate, fusing and resampling inference."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from . import _kernels
from .cqr import START, TIES, _dual_flag, kernel_tolerances, recursion_levels
from .errors import DataError, HDCQRError
from .parallel import map_jobs
from .rng import stream
from .select import SelectionConfig, cross_validate, fit_lhdcqr, select_support


def default_B(n):
    return int(min(max(100, n), 1000))


def split_halves(n, seed, b, key=()):
    """Membership vector of split ``b``: 1 for the estimation half.

    The estimation half has ``ceil(n / 2)`` subjects.
    """
    n1 = (n + 1) // 2
    perm = stream(seed, "split", *key, b).permutation(n)
    J = np.zeros(n, dtype=np.int8)
    J[perm[:n1]] = 1
    return J


@dataclass
class SplitRecord:
    """One split: membership ``J_b``, selected set and the p x (m+1) estimates.

    Rows of ``estimates`` are NaN where the fit on ``selected + {j}`` could not
    reach that grid level; ``selected`` is None if selection itself failed.
    """

    b: int
    membership: np.ndarray
    selected: np.ndarray
    estimates: np.ndarray = field(repr=False)

    @property
    def n1(self):
        return int(self.membership.sum())


def append_and_estimate(ds, grid, selected, start=START, ties=TIES):
    """Estimates of every coordinate from fits on ``selected + {j}``.

    Returns a ``(p, m+1)`` array, NaN beyond the last solvable level of each fit.
    """
    sel = np.unique(np.concatenate([[0], np.asarray(selected, dtype=np.int64)])).astype(np.int64)
    logx = np.ascontiguousarray(ds.log_times)
    tol_r, tol_opt = kernel_tolerances(logx, np.zeros(1))
    levels, skip = recursion_levels(grid, start)
    init_mass = -math.log1p(-levels[0])
    max_iter = 50 * (ds.n + sel.size + 1)
    est, _ = _kernels.append_and_estimate(
        np.ascontiguousarray(ds.covariates), logx, np.ascontiguousarray(ds.events),
        levels, sel, init_mass, tol_r, tol_opt, max_iter, _dual_flag(ties), skip)
    return est


def run_split(ds, grid, lam, config, seed, b, key=()):
    """Steps 1-2 of the fused procedure for one split."""
    J = split_halves(ds.n, seed, b, key)
    sel_half = ds.subset(np.flatnonzero(J == 0))
    est_half = ds.subset(np.flatnonzero(J == 1))
    try:
        proc = fit_lhdcqr(sel_half, grid, lam, start=config.start, ties=config.ties,
                          standardize=config.standardize)
    except HDCQRError:
        return SplitRecord(b, J, None, np.full((ds.p, grid.m + 1), np.nan))
    selected = select_support(proc, config.a0, config.cap(sel_half.n))
    est = append_and_estimate(est_half, grid, selected, config.start, config.ties)
    return SplitRecord(b, J, selected, est)


def _split_job(args):
    return run_split(*args)


@dataclass
class InferenceResult:
    """Fused estimates and pointwise inference on the grid.

    Arrays indexed ``[j, k]`` for feature j and grid level k.  Cells whose
    valid split count is below ``B / 2`` are NaN.  ``floored`` marks cells
    whose bias-corrected variance was negative and was replaced (see
    :func:`fuse`);
    ``degenerate_var`` marks zero variance with a nonzero estimate.
    """

    beta_hat: np.ndarray
    var_raw: np.ndarray
    var_bc: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    pvalues: np.ndarray
    selection_freq: np.ndarray
    n_valid: np.ndarray
    floored: np.ndarray
    degenerate_var: np.ndarray
    B: int
    n: int
    n1: int
    alpha: float
    grid: object
    lambda_star: float
    full_selected: np.ndarray = None
    cv: object = field(default=None, repr=False)
    records: list = field(default=None, repr=False)

    @property
    def se(self):
        return np.sqrt(self.var_bc)

    @property
    def failed_splits(self):
        return int(sum(r.selected is None for r in self.records)) if self.records else 0


def _stack(records):
    J = np.array([r.membership for r in records], dtype=np.float64)
    est = np.array([r.estimates for r in records])
    return J, est


def fuse_moments(J, est, n):
    """Fused mean and both variance estimates from stacked splits.

    ``J`` is ``(B, n)``; ``est`` is ``(B, ...)`` with NaN for missing cells.
    Each cell uses only its valid splits, with ``B`` replaced by their count.
    Returns ``(beta_hat, v_raw, v_bc, n_valid)``.
    """
    B = J.shape[0]
    shape = est.shape[1:]
    E = est.reshape(B, -1)
    V = ~np.isnan(E)
    nv = V.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        beta = np.where(V, E, 0.0).sum(axis=0) / nv
        # constant cells: take the common value so deviations are exactly 0
        lo_, hi_ = np.where(V, E, np.inf).min(axis=0), np.where(V, E, -np.inf).max(axis=0)
        beta = np.where(lo_ == hi_, lo_, beta)
        dev = np.where(V, E - beta, 0.0)
        n1 = J.sum(axis=1)
        if np.any(n1 != n1[0]):
            raise DataError("splits have unequal estimation halves")
        n1 = float(n1[0])
        # sum_b (J_bi - Jbar_i) dev_b = sum_b J_bi dev_b, since dev sums to 0
        # over the valid splits; this holds per cell with missing splits too
        s = (J.T @ dev) / nv
        if np.all(V):
            s -= np.outer(J.mean(axis=0), dev.sum(axis=0) / nv)
        else:
            s -= (J.T @ V.astype(np.float64)) / nv * (dev.sum(axis=0) / nv)
        v_raw = n * (n - 1.0) / (n - n1) ** 2 * np.einsum("ic,ic->c", s, s)
        corr = n * n1 / (nv * (n - n1)) * (dev * dev).sum(axis=0) / nv
        v_bc = v_raw - corr
    return (beta.reshape(shape), v_raw.reshape(shape), v_bc.reshape(shape), nv.reshape(shape))


def _record_column(records, j, k):
    J = np.array([r.membership for r in records], dtype=np.float64)
    x = np.array([r.estimates[j, k] for r in records], dtype=np.float64)
    return J, x


def _center(x):
    return np.zeros_like(x) if np.all(x == x[0]) else x - x.mean()


def _s_vector(J, x):
    B = J.shape[0]
    Jbar = J.mean(axis=0)
    return ((J - Jbar) * _center(x)[:, None]).sum(axis=0) / B


def resampling_covariance(records, j, k, l):
    """Resampling covariance of the fused estimate of feature ``j`` between
    grid indices ``k`` and ``l``.

    Direct evaluation of
    ``n (n-1) / (n - n1)^2 * sum_i s_ij(tau_k) s_ij(tau_l)`` with
    ``s_ij = (1/B) sum_b (J_bi - Jbar_i)(beta~_j^b - beta^_j)``.
    """
    B = len(records)
    if B < 2:
        raise DataError("resampling covariance needs B >= 2")
    Jk, xk = _record_column(records, j, k)
    _, xl = _record_column(records, j, l)
    if np.any(np.isnan(xk)) or np.any(np.isnan(xl)):
        raise DataError("records must be valid at both levels")
    n = Jk.shape[1]
    n1 = float(Jk[0].sum())
    return n * (n - 1.0) / (n - n1) ** 2 * float(np.dot(_s_vector(Jk, xk), _s_vector(Jk, xl)))


def variance_bc(records, j, k):
    """``(v_raw, v_bc)`` for feature ``j`` at grid index ``k``, before flooring."""
    B = len(records)
    if B < 2:
        raise DataError("variance needs B >= 2")
    v_raw = resampling_covariance(records, j, k, k)
    J, x = _record_column(records, j, k)
    n = J.shape[1]
    n1 = float(J[0].sum())
    corr = n * n1 / (B * (n - n1)) * float(np.mean(_center(x) ** 2))
    return v_raw, v_raw - corr


def ci_and_pvalue(beta_hat, v_bc, alpha=0.05):
    """Wald interval and two-sided p-value.

    Returns ``(lo, hi, p, degenerate)``; ``degenerate`` flags zero variance
    with a nonzero estimate (p set to 0).  Zero variance with a zero estimate
    gives p = 1.  NaN inputs propagate.
    """
    if not 0.0 < alpha < 1.0:
        raise DataError("alpha must lie in (0, 1)")
    b = np.asarray(beta_hat, dtype=np.float64)
    v = np.asarray(v_bc, dtype=np.float64)
    if np.any(v < 0):
        raise DataError("variance must be nonnegative")
    z = norm.ppf(1.0 - alpha / 2.0)
    se = np.sqrt(v)
    lo, hi = b - z * se, b + z * se
    with np.errstate(divide="ignore", invalid="ignore"):
        p = 2.0 * norm.sf(np.abs(b) / se)
    zero_v = v == 0
    p = np.where(zero_v & (b == 0), 1.0, p)
    degenerate = zero_v & (b != 0)
    p = np.where(degenerate, 0.0, p)
    p = np.where(np.isnan(b) | np.isnan(v), np.nan, p)
    if p.ndim == 0:
        return float(lo), float(hi), float(p), bool(degenerate)
    return lo, hi, p, degenerate


def fuse(records, n, alpha=0.05, negative_var="raw"):
    """Combine split records into fused estimates and inference arrays.

    A negative bias-corrected variance is replaced by the uncorrected one
    (``negative_var="raw"``) or by zero (``"zero"``).  With zero, such a cell
    gets p = 0 whenever its estimate is nonzero.
    """
    if negative_var not in ("raw", "zero"):
        raise DataError(f"negative_var must be 'raw' or 'zero', got {negative_var!r}")
    B = len(records)
    J, est = _stack(records)
    beta, v_raw, v_bc, nv = fuse_moments(J, est, n)
    ok = nv >= B / 2.0
    if B < 2:
        v_raw = np.full_like(beta, np.nan)
        v_bc = np.full_like(beta, np.nan)
    beta = np.where(ok, beta, np.nan)
    v_raw = np.where(ok, v_raw, np.nan)
    v_bc = np.where(ok, v_bc, np.nan)
    floored = v_bc < 0
    v_bc = np.where(floored, v_raw if negative_var == "raw" else 0.0, v_bc)
    lo, hi, p, degen = ci_and_pvalue(beta, v_bc, alpha)
    p = np.clip(p, 0.0, 1.0)
    return beta, v_raw, v_bc, lo, hi, p, nv, floored, degen


def selection_frequency(records, p):
    freq = np.zeros(p)
    for r in records:
        if r.selected is not None:
            freq[r.selected] += 1.0
    return freq / len(records)


def run_fused(ds, grid, selector_config=None, B=None, seed=0, alpha=0.05, lambda_star=None,
              threads=1, key=(), keep_records=True):
    """Fused-HDCQR estimates with resampling standard errors.

    Parameters
    ----------
    ds : SurvivalDataset
    grid : TauGrid
    selector_config : SelectionConfig, optional
    B : int, optional
        Number of splits; defaults to ``max(100, n)`` capped at 1000.
    seed : int
        Root seed; folds and splits draw from keyed streams of it.
    lambda_star : float, optional
        Skip cross-validation and use this penalty level.
    threads : int
        Worker processes.  Results do not depend on it.
    key : tuple of int
        Extra stream key, e.g. the replication index in simulations.

    Returns
    -------
    InferenceResult
    """
    config = selector_config or SelectionConfig()
    B = default_B(ds.n) if B is None else int(B)
    if B < 1:
        raise DataError("B must be positive")
    if ds.n < 20:
        raise DataError("run_fused needs n >= 20")
    cv = None
    if lambda_star is None:
        cv = cross_validate(ds, grid, config, seed, key, threads)
        lambda_star = cv.lambda_star
    jobs = [(ds, grid, lambda_star, config, seed, b, key) for b in range(B)]
    records = map_jobs(_split_job, jobs, threads)
    fused = fuse(records, ds.n, alpha, config.negative_var)
    beta, v_raw, v_bc, lo, hi, p, nv, floored, degen = fused
    try:
        full_fit = fit_lhdcqr(ds, grid, lambda_star, start=config.start, ties=config.ties,
                              standardize=config.standardize)
        full = select_support(full_fit, config.a0, config.cap(ds.n))
    except HDCQRError:
        full = None
    return InferenceResult(
        beta_hat=beta, var_raw=v_raw, var_bc=v_bc, ci_lo=lo, ci_hi=hi, pvalues=p,
        selection_freq=selection_frequency(records, ds.p), n_valid=nv, floored=floored,
        degenerate_var=degen, B=B, n=ds.n, n1=(ds.n + 1) // 2, alpha=alpha, grid=grid,
        lambda_star=float(lambda_star), full_selected=full, cv=cv,
        records=records if keep_records else None)
