"""Sequential censored quantile regression and its residuals.

The estimator walks up the quantile grid.  At level ``tau_k`` subject i
carries the hazard mass ``c_i(k) = H(tau_0) + sum_{r<k} 1{log X_i >= Z_i b(tau_r)}
(H(tau_{r+1}) - H(tau_r))`` with ``H(u) = -log(1 - u)``, and ``b(tau_k)`` solves
the L1 problem on uncensored rows with linear term
``sum_i Z_i (delta_i - 2 c_i(k))``.  Its subgradient equals ``2n`` times the
estimating function, so solver optimality is a root of the estimating equation
up to the usual discreteness.

Two options control the recursion:

``start``
    ``"zero"`` (default) extends the grid downward with the same spacing to
    its first positive level, so subjects censored below ``nu`` leave the risk
    set before ``nu`` is reached; only levels from ``nu`` on are returned.
    ``"nu"`` starts at ``nu`` with every subject carrying ``H(nu)``.
``ties``
    ``"dual"`` (default) gives the uncensored rows that sit exactly on the
    fitted quantile (the d rows of the optimal basis) the at-risk fraction
    implied by the solver's optimality condition, complementary to the event
    fraction the solver assigned them.  ``"indicator"`` counts them as fully
    at risk, which adds about ``d / n`` spurious mass per grid step.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import CoefProcess
from .errors import DataError, IdentifiabilityError, NumericalError

FEAS_TOL = 1e-10
OPT_TOL = 1e-9


def hazard_increment(a, b):
    """``H(b) - H(a) = log((1 - a) / (1 - b))``."""
    if not (0 <= a <= b < 1):
        raise DataError(f"need 0 <= a <= b < 1, got a={a}, b={b}")
    return math.log((1.0 - a) / (1.0 - b))


def cumulative_hazard(u):
    return -np.log1p(-np.asarray(u, dtype=np.float64))


@dataclass(frozen=True)
class SeqFitState:
    """Accumulated hazard mass per subject after ``step`` grid levels."""

    cum_weights: np.ndarray
    step: int


START = "zero"
TIES = "dual"


def recursion_levels(grid, start=START):
    """Levels the recursion runs over, and how many lead-in levels to drop."""
    if start not in ("zero", "nu"):
        raise ValueError("start must be 'zero' or 'nu'")
    if start == "nu" or grid.m == 0:
        return grid.levels, 0
    L = int(math.floor(grid.nu / grid.spacing - 1e-9))
    pre = grid.nu - grid.spacing * np.arange(L, 0, -1)
    return np.concatenate([pre, grid.levels]), L


def _dual_flag(ties):
    if ties not in ("dual", "indicator"):
        raise ValueError("ties must be 'dual' or 'indicator'")
    return ties == "dual"


def kernel_tolerances(logx, pen):
    tol_r = FEAS_TOL * (1.0 + float(np.max(np.abs(logx))))
    tol_opt = OPT_TOL * (1.0 + float(np.max(pen, initial=0.0)))
    return tol_r, tol_opt


def run_sequential(Z, logx, delta, grid, pen, support, strict=False, start=START, ties=TIES):
    """Shared driver for penalized and unpenalized sequential fits."""
    Z = np.ascontiguousarray(Z, dtype=np.float64)
    pen = np.ascontiguousarray(pen, dtype=np.float64)
    tol_r, tol_opt = kernel_tolerances(logx, pen)
    n, d = Z.shape
    max_iter = 50 * (n + d + int(np.count_nonzero(pen)))
    levels, skip = recursion_levels(grid, start)
    init_mass = -math.log1p(-levels[0])
    coefs, n_ok, status, iters, n_deg, crossings, c = _kernels.seq_cqr(
        Z, np.ascontiguousarray(logx), np.ascontiguousarray(delta), levels, pen,
        init_mass, tol_r, tol_opt, max_iter, _dual_flag(ties), skip)
    n_ok = int(n_ok)
    if status in (_kernels.SINGULAR, _kernels.ITERATION_LIMIT):
        raise NumericalError(f"simplex failure (status {status}) at tau={grid.levels[n_ok]:.4f}")
    if n_ok == 0:
        raise IdentifiabilityError(
            f"quantile not identifiable at tau={grid.nu:.4f}", tau=grid.nu, last_level=None)
    if n_ok < grid.m + 1:
        last = float(grid.levels[n_ok - 1])
        tau = float(grid.levels[n_ok])
        if strict:
            raise IdentifiabilityError(
                f"quantile not identifiable at tau={tau:.4f}; last identifiable level {last:.4f}",
                tau=tau, last_level=last)
    diagnostics = {
        "iterations": int(iters),
        "degenerate_steps": int(n_deg),
        "crossings": int(crossings),
        "state": SeqFitState(np.array(c), n_ok),
    }
    return CoefProcess(grid, np.array(coefs), support, n_valid=n_ok, diagnostics=diagnostics)


def fit_sequential_cqr(ds, grid, support=None, strict=False, start=START, ties=TIES):
    """Unpenalized sequential fit on the columns in ``support``.

    Parameters
    ----------
    ds : SurvivalDataset
    grid : TauGrid
    support : sequence of int, optional
        Covariate columns to use; the intercept (0) is added if missing.
        Defaults to all columns.
    strict : bool
        Raise :class:`IdentifiabilityError` when the path cannot be carried to
        ``grid.tau_u``.  Otherwise the returned process is truncated and its
        trailing rows are NaN.
    start, ties : str
        Recursion options; see the module docstring.
    """
    if support is None:
        support = np.arange(ds.p)
    support = np.unique(np.concatenate([[0], np.asarray(support, dtype=np.intp)]))
    if support.size >= ds.n / math.log(ds.n):
        warnings.warn(f"|support|={support.size} is large relative to n={ds.n}", stacklevel=2)
    Z = ds.covariates[:, support]
    return run_sequential(Z, ds.log_times, ds.events, grid, np.zeros(support.size), support,
                          strict=strict, start=start, ties=ties)


def _indicator_tol(logx):
    return FEAS_TOL * (1.0 + float(np.max(np.abs(logx))))


def martingale_path(ds, proc, offset="nu"):
    """Martingale residuals at every grid level, shape ``(n, n_valid)``.

    ``offset`` chooses the mass charged below ``nu``: ``"nu"`` subtracts
    ``nu`` itself, ``"hazard"`` subtracts ``H(nu)``.
    """
    if offset not in ("nu", "hazard"):
        raise ValueError("offset must be 'nu' or 'hazard'")
    grid = proc.grid
    K = proc.n_valid
    logx = ds.log_times
    tol = _indicator_tol(logx)
    theta = ds.covariates[:, proc.support] @ proc.coefs[:K].T
    at_risk = (logx[:, None] - theta) >= -tol
    dH = np.diff(cumulative_hazard(grid.levels))[: max(K - 1, 0)]
    comp = np.zeros_like(theta)
    if K > 1:
        comp[:, 1:] = np.cumsum(at_risk[:, :-1] * dH, axis=1)
    counted = ds.events[:, None] * ((logx[:, None] - theta) <= tol)
    base = grid.nu if offset == "nu" else float(cumulative_hazard(grid.nu))
    return counted - comp - base


def martingale_residual(ds, proc, tau, offset="nu"):
    """Martingale residuals ``M_i`` at the grid level ``tau``."""
    k = proc.grid.exact_index(tau)
    if k >= proc.n_valid:
        raise DataError(f"process undefined at tau={tau}")
    return martingale_path(ds, proc, offset)[:, k]


def _deviance_arg(m, delta, form):
    m = np.asarray(m, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        logterm = np.where(delta > 0, delta * np.log(np.where(delta > 0, delta - m, 1.0)), 0.0)
    bad = (delta > 0) & ~(delta - m > 0)
    if form == "single_log":
        arg = -2.0 * m + logterm
    elif form == "standard":
        arg = -2.0 * (m + logterm)
    else:
        raise ValueError("form must be 'standard' or 'single_log'")
    bad |= ~(arg >= -1e-12)
    return m, arg, bad


def deviance_residual(m, delta, form="single_log"):
    """Signed deviance transform of martingale residuals.

    ``form="single_log"`` is ``sign(M) sqrt(-2 M + delta log(delta - M))``, which
    has no real value for an uncensored subject with ``M > 0``;
    ``form="standard"`` is the usual Cox deviance
    ``sign(M) sqrt(-2 (M + delta log(delta - M)))``.  The log term is zero
    when ``delta == 0``.  Raises :class:`DataError` naming the
    first subject whose argument is outside the domain.
    """
    m, arg, bad = _deviance_arg(m, delta, form)
    if np.any(bad):
        idx = int(np.flatnonzero(np.atleast_1d(bad))[0])
        raise DataError(f"deviance residual undefined for subject {idx}")
    out = np.sign(m) * np.sqrt(np.maximum(arg, 0.0))
    return float(out) if out.ndim == 0 else out


def deviance_matrix(mpath, delta, form="single_log"):
    """Deviance residuals for a ``(n, K)`` martingale matrix.

    Returns ``(D, bad)`` where ``bad`` flags subjects with any domain
    violation; their entries are NaN.
    """
    m, arg, bad = _deviance_arg(mpath, np.asarray(delta)[:, None], form)
    D = np.sign(m) * np.sqrt(np.where(bad, np.nan, np.maximum(arg, 0.0)))
    return D, bad.any(axis=1)
