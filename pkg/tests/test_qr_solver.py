import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from hdcqr.errors import UnboundedError
from hdcqr.qr_solver import L1Problem, kkt_check, solve_l1

from conftest import enumerate_basic


def lp_reference(prob):
    """Optimal value via the split-residual LP solved by HiGHS."""
    Z, y, w, v = prob.design, prob.responses, prob.weights, prob.linear_term
    r, d = Z.shape
    cols = prob.penalized_columns()
    k = cols.size
    # variables: h (free), u, s >= 0 with y - Zh = u - s, g >= |h_cols|
    c = np.concatenate([v, w, w, np.full(k, prob.penalty)])
    A_eq = np.hstack([Z, np.eye(r), -np.eye(r), np.zeros((r, k))])
    A_ub = np.zeros((2 * k, d + 2 * r + k))
    for a, j in enumerate(cols):
        A_ub[2 * a, j], A_ub[2 * a, d + 2 * r + a] = 1.0, -1.0
        A_ub[2 * a + 1, j], A_ub[2 * a + 1, d + 2 * r + a] = -1.0, -1.0
    bounds = [(None, None)] * d + [(0, None)] * (2 * r + k)
    out = linprog(c, A_ub=A_ub if k else None, b_ub=np.zeros(2 * k) if k else None,
                  A_eq=A_eq, b_eq=y, bounds=bounds, method="highs")
    assert out.status == 0
    return out.fun


def test_median():
    prob = L1Problem([1.0, 2.0, 3.0], np.ones(3))
    sol = solve_l1(prob)
    assert sol.coefs[0] == pytest.approx(2.0)
    assert sol.objective == pytest.approx(2.0)
    assert sol.kkt_residual == pytest.approx(0.0, abs=1e-12)


def test_quarter_quantile_vertex():
    prob = L1Problem([1.0, 2.0, 3.0, 4.0], np.ones(4), weights=np.full(4, 0.5), linear_term=[1.0])
    sol = solve_l1(prob)
    assert sol.objective == pytest.approx(4.0)
    assert sol.coefs[0] in (pytest.approx(1.0), pytest.approx(2.0))
    assert prob.objective([3.0]) == pytest.approx(5.0)


def test_kkt_hand_values():
    prob = L1Problem([1.0, 2.0, 3.0], np.ones(3))
    assert kkt_check(prob, [2.0]) == pytest.approx(0.0, abs=1e-12)
    assert kkt_check(prob, [2.5]) == pytest.approx(1.0)


def test_random_6x2_matches_enumeration(rng):
    for _ in range(20):
        Z = np.column_stack([np.ones(6), rng.standard_normal(6)])
        y = rng.standard_normal(6)
        sol = solve_l1(L1Problem(y, Z))
        best, _ = enumerate_basic(Z, y, np.ones(6), np.zeros(2))
        assert sol.objective == pytest.approx(best, rel=1e-9, abs=1e-12)


@given(st.integers(0, 10 ** 6), st.integers(1, 3), st.integers(3, 12), st.booleans(),
       st.booleans())
def test_enumeration_oracle(seed, d, r, ties, penalize):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((r, d))
    Z[:, 0] = 1.0
    y = rng.standard_normal(r)
    if ties:
        y = np.round(y)
        Z[:, 1:] = np.round(Z[:, 1:])
    w = rng.uniform(0.2, 2.0, r)
    # keep v inside the range that leaves the problem bounded
    v = 0.5 * (w[:, None] * Z * rng.uniform(-1, 1, (r, 1))).sum(axis=0)
    lam = float(rng.uniform(0.1, 2.0)) if penalize else 0.0
    if np.linalg.matrix_rank(Z) < d:
        return
    prob = L1Problem(y, Z, w, v, lam)
    sol = solve_l1(prob)
    best, _ = enumerate_basic(Z, y, w, v, lam)
    assert sol.objective == pytest.approx(best, rel=1e-9, abs=1e-9)
    assert sol.kkt_residual <= d * np.max(w[:, None] * np.abs(Z)) + 1e-9
    assert sol.kkt_residual <= 1e-7


def test_matches_lp_reference_larger(rng):
    for trial in range(10):
        r, d = 60, 6
        Z = np.column_stack([np.ones(r), rng.standard_normal((r, d - 1))])
        y = Z @ rng.standard_normal(d) + rng.standard_t(3, r)
        w = rng.uniform(0.5, 1.5, r)
        v = 0.3 * (w[:, None] * Z * rng.uniform(-1, 1, (r, 1))).sum(axis=0)
        prob = L1Problem(y, Z, w, v, penalty=2.0 * (trial % 2))
        sol = solve_l1(prob)
        assert sol.objective == pytest.approx(lp_reference(prob), rel=1e-8)
        assert sol.kkt_residual <= 1e-7


def test_objective_recomputed(rng):
    Z = np.column_stack([np.ones(30), rng.standard_normal((30, 2))])
    prob = L1Problem(rng.standard_normal(30), Z, penalty=0.7)
    sol = solve_l1(prob)
    assert sol.objective == pytest.approx(prob.objective(sol.coefs), rel=1e-8)


def test_unbounded():
    prob = L1Problem([1.0, 2.0], np.ones(2), linear_term=[5.0])
    with pytest.raises(UnboundedError, match="unbounded"):
        solve_l1(prob)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        L1Problem([1.0, 2.0], np.ones((3, 1)))
    with pytest.raises(ValueError):
        L1Problem([1.0, 2.0], np.ones((2, 1)), linear_term=[1.0, 2.0])


def test_scaling_equivariance(rng):
    Z = np.column_stack([np.ones(25), rng.standard_normal((25, 2))])
    y = rng.standard_normal(25)
    w = rng.uniform(0.5, 1.5, 25)
    v = np.array([0.3, -0.2, 0.1])
    a = solve_l1(L1Problem(y, Z, w, v, 0.4))
    b = solve_l1(L1Problem(y, Z, 3.0 * w, 3.0 * v, 1.2))
    assert b.objective == pytest.approx(3.0 * a.objective, rel=1e-9)
    prob = L1Problem(y, Z, w, v, 0.4)
    assert prob.objective(b.coefs) == pytest.approx(a.objective, rel=1e-9)


def test_response_shift_moves_intercept(rng):
    Z = np.column_stack([np.ones(25), rng.standard_normal((25, 2))])
    y = rng.standard_normal(25)
    a = solve_l1(L1Problem(y, Z, penalty=0.5))
    b = solve_l1(L1Problem(y + 2.5, Z, penalty=0.5))
    assert b.coefs[0] - a.coefs[0] == pytest.approx(2.5, abs=1e-9)
    assert np.allclose(a.coefs[1:], b.coefs[1:], atol=1e-9)


def test_large_penalty_zeroes(rng):
    Z = np.column_stack([np.ones(20), rng.standard_normal((20, 3))])
    y = Z @ np.array([0.0, 2.0, -1.0, 3.0]) + rng.standard_normal(20)
    w = np.ones(20)
    v = np.array([0.0, 0.4, -0.2, 0.1])
    lam = float(np.max(np.sum(w[:, None] * np.abs(Z), axis=0) + np.abs(v))) + 1.0
    sol = solve_l1(L1Problem(y, Z, w, v, lam))
    assert np.all(sol.coefs[1:] == 0.0)


def test_deterministic(rng):
    Z = np.column_stack([np.ones(40), np.round(rng.standard_normal((40, 2)))])
    y = np.round(rng.standard_normal(40))
    a = solve_l1(L1Problem(y, Z, penalty=0.3))
    b = solve_l1(L1Problem(y.copy(), Z.copy(), penalty=0.3))
    assert a.coefs.tobytes() == b.coefs.tobytes()


def test_degenerate_flag():
    sol = solve_l1(L1Problem([1.0, 1.0, 1.0, 2.0], np.ones(4)))
    assert sol.degenerate
    assert sol.coefs[0] == pytest.approx(1.0)
