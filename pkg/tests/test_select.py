import numpy as np
import pytest

from hdcqr.data import CoefProcess, SurvivalDataset, build_grid
from hdcqr.errors import DataError
from hdcqr.select import (SelectionConfig, column_scales, cross_validate, default_lambda_grid, default_max_support,
                          fit_lhdcqr, holdout_error, make_folds, select_support)
from hdcqr.simgen import gen_example1


def _proc(coefs, support=None):
    coefs = np.asarray(coefs, dtype=float)
    grid = build_grid(0.1, 0.8, coefs.shape[0] - 1)
    return CoefProcess(grid, coefs, np.arange(coefs.shape[1]) if support is None else support)


def test_select_all_zero_is_intercept():
    assert list(select_support(_proc(np.zeros((5, 6))), 1e-6)) == [0]


def test_select_max_over_grid():
    c = np.zeros((5, 7))
    c[:, 0] = 3.0
    c[2, 5] = 0.2
    c[1, 3] = 0.05
    assert list(select_support(_proc(c), 0.1)) == [0, 5]


def test_select_cap_keeps_largest():
    c = np.zeros((3, 6))
    c[0, 1:] = [0.5, -2.0, 0.3, 1.0, 0.7]
    assert list(select_support(_proc(c), 1e-6, max_support=2)) == [0, 2, 4]


def test_select_on_truncated_path():
    c = np.zeros((4, 3))
    c[3, 2] = np.nan
    c[1, 1] = 1.0
    proc = CoefProcess(build_grid(0.1, 0.4, 3), c, np.arange(3), n_valid=3)
    assert list(select_support(proc)) == [0, 1]


def test_lambda_grid_default():
    lam = default_lambda_grid(300, 300)
    s = np.sqrt(np.log(300) / 300)
    assert lam.size == 8 and lam[0] == pytest.approx(s) and lam[-1] == pytest.approx(0.01 * s)
    assert np.all(np.diff(lam) < 0)
    assert default_max_support(300) == int(300 / (2 * np.log(300)))


def test_config_validation():
    with pytest.raises(DataError):
        SelectionConfig(lambda_grid=[0.1, -1.0]).lambdas(10, 5)
    with pytest.raises(DataError):
        SelectionConfig(lambda_grid=[0.1, 0.1]).lambdas(10, 5)
    with pytest.raises(DataError):
        make_folds(10, 1, 0)


def test_folds_partition():
    folds = make_folds(53, 5, 9)
    allidx = np.sort(np.concatenate(folds))
    assert np.array_equal(allidx, np.arange(53))
    assert sorted(len(f) for f in folds) == [10, 10, 11, 11, 11]
    again = make_folds(53, 5, 9)
    assert all(np.array_equal(a, b) for a, b in zip(folds, again))


def _small(seed, n=80, p=12):
    ds, _ = gen_example1(n, 61, seed)
    return SurvivalDataset(ds.times, ds.events, ds.covariates[:, [0, 20, 40, 60] + list(range(1, p - 3))])


def test_single_lambda():
    ds = _small(1)
    cv = cross_validate(ds, build_grid(0.1, 0.7, 10), SelectionConfig(lambda_grid=[0.05]), seed=1)
    assert cv.lambda_star == 0.05 and cv.errors.size == 1


def test_duplicate_halves_equal_fold_errors():
    base = _small(2, n=40)
    folds = make_folds(80, 2, 4)
    rows = np.empty(80, dtype=int)
    rows[folds[0]] = np.arange(40)
    rows[folds[1]] = np.arange(40)
    ds = base.subset(rows)
    cv = cross_validate(ds, build_grid(0.1, 0.7, 8),
                        SelectionConfig(lambda_grid=[0.2, 0.05], K=2), seed=4)
    assert np.allclose(cv.fold_errors[:, 0], cv.fold_errors[:, 1], rtol=0, atol=1e-9)


def test_cv_error_is_fold_sum_and_order_free():
    ds = _small(3)
    grid = build_grid(0.1, 0.7, 10)
    cfg = SelectionConfig(lambda_grid=[0.1, 0.03])
    cv = cross_validate(ds, grid, cfg, seed=3)
    assert np.allclose(cv.errors, cv.fold_errors.sum(axis=1))
    everyone = np.arange(ds.n)
    total = 0.0
    for f in reversed(cv.folds):
        proc = fit_lhdcqr(ds.subset(np.setdiff1d(everyone, f)), grid, cv.lambda_star)
        total += holdout_error(proc, ds.subset(f), grid, "standard")[0]
    assert total == pytest.approx(cv.errors[cv.star_index], rel=1e-12)


def test_cv_reproducible():
    ds = _small(5)
    grid = build_grid(0.1, 0.7, 10)
    a = cross_validate(ds, grid, SelectionConfig(), seed=11)
    b = cross_validate(ds, grid, SelectionConfig(), seed=11)
    assert a.errors.tobytes() == b.errors.tobytes() and a.lambda_star == b.lambda_star


def test_near_monotone_shrinkage():
    hits = 0
    trials = 20
    for s in range(trials):
        ds = _small(100 + s, n=70, p=15)
        grid = build_grid(0.1, 0.7, 8)
        lam = default_lambda_grid(ds.n, ds.p)
        big = fit_lhdcqr(ds, grid, lam[0])
        tiny = fit_lhdcqr(ds, grid, lam[-1])
        k = min(big.n_valid, tiny.n_valid)
        nb = (np.abs(big.coefs[:k, 1:]) > 1e-9).sum(axis=1)
        nt = (np.abs(tiny.coefs[:k, 1:]) > 1e-9).sum(axis=1)
        hits += bool(np.all(nb <= nt))
    assert hits >= 0.95 * trials


def test_support_invariants():
    ds = _small(7, n=100, p=30)
    grid = build_grid(0.1, 0.7, 8)
    for lam in (0.3, 0.05, 0.01):
        sel = select_support(fit_lhdcqr(ds, grid, lam), 1e-6, max_support=5)
        assert sel[0] == 0 and sel.size - 1 <= 5


def test_cv_recovers_support_example1():
    """Full-data refit at the CV choice of lambda finds all three signals."""
    hits = 0
    cfg = SelectionConfig()
    for rep in range(20):
        ds, truth = gen_example1(300, 300, 77, rep)
        grid = build_grid(0.1, 0.8, 20)
        cv = cross_validate(ds, grid, cfg, seed=77, key=(rep,))
        sel = select_support(fit_lhdcqr(ds, grid, cv.lambda_star), cfg.a0, cfg.cap(ds.n))
        hits += set(truth.support) <= set(sel.tolist())
    assert hits >= 16


def test_column_scales():
    Z = np.column_stack([np.ones(4), [1.0, 2.0, 3.0, 4.0], [5.0, 5.0, 5.0, 5.0]])
    assert np.allclose(column_scales(Z), [1.0, np.sqrt(1.25), 1.0])


def test_standardized_selection_is_unit_free():
    ds, _ = gen_example1(120, 80, 5)
    Z = ds.covariates.copy()
    Z[:, 20] *= 10.0
    Z[:, 7] *= 0.1
    scaled = SurvivalDataset(ds.times, ds.events, Z)
    grid = build_grid(0.1, 0.7, 10)
    a = fit_lhdcqr(ds, grid, 0.05)
    b = fit_lhdcqr(scaled, grid, 0.05)
    assert np.array_equal(select_support(a, 1e-6, 10), select_support(b, 1e-6, 10))
    assert np.allclose(b.coefs[:, 20] * 10.0, a.coefs[:, 20], atol=1e-9)
    assert np.allclose(b.coefs[:, 7] * 0.1, a.coefs[:, 7], atol=1e-9)
    assert np.allclose(b.coefs[:, 0], a.coefs[:, 0], atol=1e-9)


def test_unstandardized_penalty_is_flat():
    ds, _ = gen_example1(120, 80, 5)
    grid = build_grid(0.1, 0.7, 10)
    flat = fit_lhdcqr(ds, grid, 0.05, standardize=False)
    assert np.all(flat.diagnostics["column_scale"] == 1.0)
