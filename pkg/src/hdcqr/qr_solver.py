"""Weighted L1 regression with a linear term and an optional lasso penalty.

The objective is

    F(h) = sum_i w_i |y_i - z_i h| + v.h + lam * sum_{j not exempt} |h_j|

and is minimized exactly by a simplex method over interpolating bases.  The
penalty enters as one pseudo-observation per penalized column (response 0,
unit design row, weight ``lam``), so penalized and unpenalized problems share
one code path.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from . import _kernels
from .errors import NumericalError, UnboundedError

FEAS_TOL = 1e-10
OPT_TOL = 1e-9


@dataclass
class L1Problem:
    responses: np.ndarray
    design: np.ndarray
    weights: np.ndarray = None
    linear_term: np.ndarray = None
    penalty: float = 0.0
    penalty_exempt: tuple = (0,)

    def __post_init__(self):
        self.responses = np.ascontiguousarray(self.responses, dtype=np.float64).ravel()
        design = np.asarray(self.design, dtype=np.float64)
        if design.ndim == 1:
            design = design[:, None]
        self.design = np.ascontiguousarray(design)
        r, d = self.design.shape
        if r != self.responses.size:
            raise ValueError("design rows must match responses")
        if self.weights is None:
            self.weights = np.ones(r)
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64).ravel()
        if self.linear_term is None:
            self.linear_term = np.zeros(d)
        self.linear_term = np.ascontiguousarray(self.linear_term, dtype=np.float64).ravel()
        if self.weights.size != r:
            raise ValueError("weights length must match responses")
        if self.linear_term.size != d:
            raise ValueError("linear_term length must match design columns")
        if np.any(self.weights < 0) or np.isnan(self.design).any():
            raise ValueError("weights must be nonnegative and design finite")
        if self.penalty < 0:
            raise ValueError("penalty must be nonnegative")
        self.penalty_exempt = tuple(sorted(set(int(j) for j in self.penalty_exempt)))

    @property
    def dim(self):
        return self.design.shape[1]

    def penalized_columns(self):
        if self.penalty <= 0:
            return np.zeros(0, dtype=np.intp)
        return np.array([j for j in range(self.dim) if j not in self.penalty_exempt],
                        dtype=np.intp)

    def objective(self, h):
        """Evaluate F directly from the problem data."""
        h = np.asarray(h, dtype=np.float64)
        res = self.responses - self.design @ h
        val = float(np.sum(self.weights * np.abs(res)) + self.linear_term @ h)
        cols = self.penalized_columns()
        if cols.size:
            val += self.penalty * float(np.sum(np.abs(h[cols])))
        return val

    def augmented(self):
        """Rows, responses and weights with the penalty pseudo-observations."""
        cols = self.penalized_columns()
        d = self.dim
        unit = np.zeros((cols.size, d))
        unit[np.arange(cols.size), cols] = 1.0
        rows = np.vstack([self.design, unit])
        y = np.concatenate([self.responses, np.zeros(cols.size)])
        w = np.concatenate([self.weights, np.full(cols.size, float(self.penalty))])
        return np.ascontiguousarray(rows), y, w


@dataclass
class L1Solution:
    coefs: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    degenerate: bool
    basis: np.ndarray = field(default=None, repr=False)


def _tolerances(y, w):
    scale_y = 1.0 + (float(np.max(np.abs(y))) if y.size else 0.0)
    scale_w = 1.0 + (float(np.max(w)) if w.size else 0.0)
    return FEAS_TOL * scale_y, OPT_TOL * scale_w


def solve_l1(problem, max_iter=None):
    """Vertex minimizer of the L1 objective.

    Raises
    ------
    UnboundedError
        When the objective decreases without bound.
    NumericalError
        On a rank-deficient design or iteration limit.
    """
    rows, y, w = problem.augmented()
    R, d = rows.shape
    tol_r, tol_opt = _tolerances(y, w)
    n_data = problem.responses.size
    order = np.concatenate([np.arange(n_data, R), np.arange(n_data)]).astype(np.int64)
    basis, ok = _kernels.crash_basis(rows, order, 1e-9)
    if not ok:
        raise NumericalError("design is rank deficient")
    Ainv = np.linalg.inv(rows[basis])
    side = np.ones(R)
    if max_iter is None:
        max_iter = 50 * (R + d)
    status, h, it, nz = _kernels.simplex_l1(rows, y, w, problem.linear_term, basis, Ainv,
                                            side, max_iter, tol_r, tol_opt)
    if status == _kernels.UNBOUNDED:
        raise UnboundedError("unbounded")
    if status != _kernels.OPTIMAL:
        raise NumericalError(f"simplex failed with status {status}")
    h = np.array(h)
    return L1Solution(coefs=h, objective=problem.objective(h),
                      kkt_residual=kkt_check(problem, h, tol_r),
                      iterations=int(it), degenerate=bool(nz > 0), basis=np.array(basis))


def kkt_check(problem, coefs, tol=None):
    """Max-norm distance from 0 to the subdifferential of F at ``coefs``.

    Residuals and penalized coefficients within ``tol`` of zero are treated as
    kinks.  The distance is found with a small auxiliary LP.
    """
    h = np.asarray(coefs, dtype=np.float64)
    Z, y, w = problem.design, problem.responses, problem.weights
    if tol is None:
        tol = _tolerances(y, w)[0]
    res = y - Z @ h
    active = np.abs(res) <= tol
    sgn = np.sign(res) * ~active
    g0 = problem.linear_term - (w * sgn) @ Z
    cols = problem.penalized_columns()
    kink_cols = np.zeros(0, dtype=np.intp)
    if cols.size:
        hc = h[cols]
        on = np.abs(hc) > tol
        g0[cols[on]] += problem.penalty * np.sign(hc[on])
        kink_cols = cols[~on]
    # free multipliers: a_i in [-w_i, w_i] on active rows, b_j in [-lam, lam] on kinked columns
    gens = np.vstack([-Z[active], np.eye(problem.dim)[kink_cols]])
    bounds_ = np.concatenate([w[active], np.full(kink_cols.size, float(problem.penalty))])
    if gens.shape[0] == 0:
        return float(np.max(np.abs(g0)))
    d = problem.dim
    k = gens.shape[0]
    # variables (x_1..x_k, t): minimize t s.t. -t <= g0 + gens.T x <= t
    c = np.zeros(k + 1)
    c[-1] = 1.0
    A = np.vstack([np.hstack([gens.T, -np.ones((d, 1))]),
                   np.hstack([-gens.T, -np.ones((d, 1))])])
    b = np.concatenate([-g0, g0])
    bnds = [(-bk, bk) for bk in bounds_] + [(0, None)]
    out = linprog(c, A_ub=A, b_ub=b, bounds=bnds, method="highs")
    if out.status != 0:
        return float(np.max(np.abs(g0)))
    return float(max(out.fun, 0.0))
