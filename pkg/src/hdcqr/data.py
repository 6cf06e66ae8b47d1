"""Survival datasets, quantile grids and piecewise-constant coefficient paths.

Covariate columns are indexed from 0, and column 0 is always the intercept.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class SurvivalDataset:
    """Right-censored survival data with an intercept-leading design.

    Parameters
    ----------
    times : ndarray, shape (n,)
        Observed follow-up ``min(T, C)`` on the original (positive) scale.
    events : ndarray, shape (n,)
        Event indicators, 1 if the failure was observed.
    covariates : ndarray, shape (n, p)
        Design matrix whose first column is identically one.
    feature_names : tuple of str
        One label per covariate column.
    """

    times: np.ndarray
    events: np.ndarray
    covariates: np.ndarray
    feature_names: tuple = ()

    def __post_init__(self):
        # private copies: the arrays are frozen below
        times = np.array(self.times, dtype=np.float64, order="C")
        events = np.array(self.events, dtype=np.float64, order="C")
        Z = np.array(self.covariates, dtype=np.float64, order="C")
        if Z.ndim != 2:
            raise DataError("covariates must be a 2-d array")
        n, p = Z.shape
        if times.shape != (n,) or events.shape != (n,):
            raise DataError("times, events and covariates disagree on n")
        if n < 2:
            raise DataError("need at least two observations")
        bad = np.flatnonzero(~(times > 0) | ~np.isfinite(times))
        if bad.size:
            raise DataError(f"nonpositive time at row {int(bad[0])}")
        bad = np.flatnonzero((events != 0) & (events != 1))
        if bad.size:
            raise DataError(f"status outside {{0,1}} at row {int(bad[0])}")
        if not np.all(np.isfinite(Z)):
            row = int(np.flatnonzero(~np.all(np.isfinite(Z), axis=1))[0])
            raise DataError(f"non-finite covariate at row {row}")
        if not np.all(Z[:, 0] == 1.0):
            raise DataError("first covariate column must be the intercept (all ones)")
        names = tuple(self.feature_names) or default_feature_names(p)
        if len(names) != p:
            raise DataError("feature_names length does not match covariates")
        for arr in (times, events, Z):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "events", events)
        object.__setattr__(self, "covariates", Z)
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self):
        return self.covariates.shape[0]

    @property
    def p(self):
        return self.covariates.shape[1]

    @property
    def log_times(self):
        return np.log(self.times)

    @property
    def censoring_rate(self):
        return float(1.0 - self.events.mean())

    def subset(self, rows):
        """Dataset restricted to the given observation indices."""
        rows = np.asarray(rows)
        return SurvivalDataset(self.times[rows], self.events[rows],
                               self.covariates[rows], self.feature_names)


def default_feature_names(p):
    return ("intercept",) + tuple(f"z{j}" for j in range(1, p))


def validate_dataset(raw_table, feature_names=None):
    """Build a :class:`SurvivalDataset` from rows of ``(time, status, z...)``.

    An intercept column is prepended.  ``feature_names`` optionally labels the
    non-intercept covariates.
    """
    rows = [list(r) for r in raw_table]
    if not rows:
        raise DataError("empty table")
    width = len(rows[0])
    if width < 2:
        raise DataError("each row needs at least time and status")
    for i, r in enumerate(rows):
        if len(r) != width:
            raise DataError(f"row {i} has {len(r)} fields, expected {width}")
    try:
        arr = np.array(rows, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DataError(f"non-numeric entry: {exc}") from None
    for i in range(arr.shape[0]):
        if not arr[i, 0] > 0:
            raise DataError(f"nonpositive time at row {i}")
        if arr[i, 1] not in (0.0, 1.0):
            raise DataError(f"status outside {{0,1}} at row {i}")
        if np.isnan(arr[i, 2:]).any():
            raise DataError(f"NaN covariate at row {i}")
    Z = np.column_stack([np.ones(arr.shape[0]), arr[:, 2:]])
    names = None
    if feature_names is not None:
        names = ("intercept",) + tuple(feature_names)
    return SurvivalDataset(arr[:, 0], arr[:, 1], Z, names or ())


def read_csv(path):
    """Read the ``time,status,covariates...`` CSV format."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2 or header[0].strip() != "time" or header[1].strip() != "status":
            raise DataError(f"{path}: header must start with 'time,status'")
        rows = [r for r in reader if r]
    return validate_dataset(rows, [h.strip() for h in header[2:]])


def write_csv(ds, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "status", *ds.feature_names[1:]])
        for i in range(ds.n):
            w.writerow([repr(float(ds.times[i])), int(ds.events[i]),
                        *(repr(float(z)) for z in ds.covariates[i, 1:])])


@dataclass(frozen=True)
class TauGrid:
    """Equally spaced quantile levels ``nu = tau_0 < ... < tau_m = tau_u``."""

    levels: np.ndarray

    def __post_init__(self):
        lv = np.ascontiguousarray(self.levels, dtype=np.float64).ravel()
        if lv.size == 0:
            raise DataError("grid needs at least one level")
        if not (0 < lv[0] and lv[-1] < 1):
            raise DataError("grid levels must lie in (0, 1)")
        if lv.size > 1:
            d = np.diff(lv)
            eps = (lv[-1] - lv[0]) / (lv.size - 1)
            if np.any(d <= 0) or np.max(np.abs(d - eps)) > 1e-12:
                raise DataError("grid levels must be strictly increasing and equally spaced")
        lv.setflags(write=False)
        object.__setattr__(self, "levels", lv)

    @property
    def nu(self):
        return float(self.levels[0])

    @property
    def tau_u(self):
        return float(self.levels[-1])

    @property
    def m(self):
        return self.levels.size - 1

    @property
    def spacing(self):
        return (self.tau_u - self.nu) / self.m if self.m else 0.0

    def index(self, tau):
        """Largest k with ``levels[k] <= tau`` (to 1e-12)."""
        if tau < self.nu - 1e-12 or tau > self.tau_u + 1e-12:
            raise DataError(f"tau={tau} outside [{self.nu}, {self.tau_u}]")
        k = int(np.searchsorted(self.levels, tau + 1e-12, side="right")) - 1
        return max(k, 0)

    def exact_index(self, tau):
        k = self.index(tau)
        if abs(self.levels[k] - tau) > 1e-9:
            raise DataError(f"tau={tau} is not a grid point")
        return k


def build_grid(nu=0.1, tau_u=0.8, m=10):
    if not (0 < nu < tau_u < 1):
        raise DataError(f"need 0 < nu < tau_u < 1, got nu={nu}, tau_u={tau_u}")
    if int(m) != m or m < 1:
        raise DataError("m must be a positive integer")
    return TauGrid(np.linspace(nu, tau_u, int(m) + 1))


def default_grid_size(n, p):
    """``round(n / ln p)`` clamped to ``[10, n]``."""
    m = round(n / math.log(max(p, 2)))
    return int(min(max(m, 10), n))


@dataclass
class CoefProcess:
    """Right-continuous step function ``beta(tau)`` on a :class:`TauGrid`.

    Rows of ``coefs`` past ``n_valid`` are NaN: the fit stopped there because
    the quantile was not identifiable.
    """

    grid: TauGrid
    coefs: np.ndarray
    support: np.ndarray
    n_valid: int = -1
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coefs = np.asarray(self.coefs, dtype=np.float64)
        self.support = np.asarray(self.support, dtype=np.intp)
        if self.coefs.shape != (self.grid.m + 1, self.support.size):
            raise DataError("coefs must be (m+1) x |support|")
        if 0 not in self.support:
            raise DataError("support must contain the intercept (index 0)")
        if self.n_valid < 0:
            self.n_valid = self.grid.m + 1

    @property
    def complete(self):
        return self.n_valid == self.grid.m + 1

    def __call__(self, tau):
        return self.coefs[self.grid.index(tau)]

    def full(self, p):
        """Coefficients scattered into a ``(m+1, p)`` matrix, zero off-support."""
        out = np.zeros((self.grid.m + 1, p))
        out[:, self.support] = self.coefs
        return out

    def fitted(self, Z):
        """Fitted quantiles ``Z[:, support] @ beta(tau_k)``, shape ``(n, m+1)``."""
        return Z[:, self.support] @ self.coefs.T


def check_censoring_floor(ds, proc, nu=None):
    """Count censored observations lying below the fitted ``nu``-quantile.

    Returns ``(count, rate)`` and warns when the rate exceeds ``n**-0.5``.
    """
    k = 0 if nu is None else proc.grid.exact_index(nu)
    theta = ds.covariates[:, proc.support] @ proc.coefs[k]
    below = (ds.events == 0) & (ds.log_times <= theta)
    count = int(below.sum())
    rate = count / ds.n
    if rate > ds.n ** -0.5:
        warnings.warn(f"{rate:.3f} of observations censored below the nu-quantile "
                      f"(threshold {ds.n ** -0.5:.3f})", stacklevel=2)
    return count, rate
