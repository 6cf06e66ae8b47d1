"""Numeric kernels: L1 simplex and the sequential censored-quantile recursion.

Everything here is written in the numpy subset numba understands; see
``_accel.kernel``.  Arrays are float64 / int64 and C-contiguous.

The L1 problem is

    minimize  sum_i w_i |y_i - z_i h| + v.h

over h in R^d.  A basis is a set of d rows whose design block is
nonsingular; h interpolates those rows.  Each basic row can be released in
either direction, and an exact line search along the edge (the weighted
median step of Barrodale and Roberts) picks the row that enters.
"""

import numpy as np

from ._accel import kernel

OPTIMAL = 0
UNBOUNDED = 1
ITERATION_LIMIT = 2
SINGULAR = 3

_REFACTOR_EVERY = 50
_BLAND_AFTER = 10


@kernel
def crash_basis(Z, order, tol):
    """Greedily pick d linearly independent rows of Z, scanning ``order``.

    Returns ``(basis, ok)``; ``ok`` is False when Z has rank < d.
    """
    R, d = Z.shape
    Q = np.zeros((d, d))
    basis = np.zeros(d, dtype=np.int64)
    k = 0
    for idx in range(order.size):
        i = order[idx]
        q = Z[i].copy()
        nrm0 = np.sqrt(np.dot(q, q))
        if nrm0 == 0.0:
            continue
        for rep in range(2):
            for l in range(k):
                q -= np.dot(Q[l], q) * Q[l]
        nrm = np.sqrt(np.dot(q, q))
        if nrm > tol * nrm0:
            Q[k] = q / nrm
            basis[k] = i
            k += 1
            if k == d:
                return basis, True
    return basis, False


@kernel
def l1_objective(Z, y, w, v, h):
    return np.sum(w * np.abs(y - np.dot(Z, h))) + np.dot(v, h)


@kernel
def _gradient(Z, w, v, side, is_basic):
    R, d = Z.shape
    g = v.copy()
    for i in range(R):
        if is_basic[i]:
            continue
        c = w[i] * side[i]
        if c != 0.0:
            for j in range(d):
                g[j] -= c * Z[i, j]
    return g


@kernel
def _sync_sides(r, side, is_basic, tol_r):
    nz = 0
    for i in range(r.size):
        if is_basic[i]:
            continue
        if r[i] > tol_r:
            side[i] = 1.0
        elif r[i] < -tol_r:
            side[i] = -1.0
        else:
            nz += 1
            if side[i] == 0.0:
                side[i] = 1.0
    return nz


@kernel
def simplex_l1(Z, y, w, v, basis, Ainv, side, max_iter, tol_r, tol_opt):
    """Minimize the L1 objective starting from ``basis``.

    ``basis``, ``Ainv`` (inverse of ``Z[basis]``) and ``side`` (the sign
    assigned to zero-residual nonbasic rows) are updated in place so a later
    call can warm start.  Returns ``(status, h, iterations, n_degenerate)``.
    """
    R, d = Z.shape
    is_basic = np.zeros(R, dtype=np.bool_)
    for k in range(d):
        is_basic[basis[k]] = True
    cand_t = np.empty(R)
    cand_i = np.empty(R, dtype=np.int64)
    degenerate_run = 0
    since_refactor = 0
    it = 0
    h = np.dot(Ainv, y[basis])
    r = y - np.dot(Z, h)
    _sync_sides(r, side, is_basic, tol_r)
    g = _gradient(Z, w, v, side, is_basic)
    while True:
        u = np.dot(g, Ainv)

        # releasing basic row k in direction s changes F at rate s*u_k + w_k
        best = -tol_opt
        enter_k = -1
        enter_s = 0.0
        bland = degenerate_run >= _BLAND_AFTER
        best_row = R
        for k in range(d):
            wk = w[basis[k]]
            for s in (1.0, -1.0):
                rc = s * u[k] + wk
                if rc < -tol_opt:
                    if bland:
                        if basis[k] < best_row:
                            best_row = basis[k]
                            enter_k = k
                            enter_s = s
                    elif rc < best:
                        best = rc
                        enter_k = k
                        enter_s = s
        if enter_k < 0:
            r = y - np.dot(Z, h)
            nz = _sync_sides(r, side, is_basic, tol_r)
            return OPTIMAL, h, it, nz
        if it >= max_iter:
            return ITERATION_LIMIT, h, it, 0
        it += 1

        slope = enter_s * u[enter_k] + w[basis[enter_k]]
        direction = enter_s * Ainv[:, enter_k]
        zd = np.dot(Z, direction)

        # breakpoints where a nonbasic residual crosses zero
        nc = 0
        for i in range(R):
            if is_basic[i]:
                continue
            a = zd[i]
            if abs(a) <= 1e-13:
                continue
            if r[i] > tol_r or r[i] < -tol_r:
                if r[i] * a > 0.0:
                    cand_t[nc] = r[i] / a
                    cand_i[nc] = i
                    nc += 1
            elif side[i] * a > 0.0:
                cand_t[nc] = 0.0
                cand_i[nc] = i
                nc += 1

        # walk breakpoints in (t, row) order until the slope turns nonnegative
        leave = -1
        t_star = 0.0
        q = 0
        while q < nc:
            best_q = q
            for qq in range(q + 1, nc):
                if cand_t[qq] < cand_t[best_q] or (
                        cand_t[qq] == cand_t[best_q] and cand_i[qq] < cand_i[best_q]):
                    best_q = qq
            tt = cand_t[q]
            ti = cand_i[q]
            cand_t[q] = cand_t[best_q]
            cand_i[q] = cand_i[best_q]
            cand_t[best_q] = tt
            cand_i[best_q] = ti
            i = cand_i[q]
            slope += 2.0 * w[i] * abs(zd[i])
            if slope >= -tol_opt * 1e-3:
                leave = i
                t_star = cand_t[q]
                break
            q += 1
        if leave < 0:
            return UNBOUNDED, h, it, 0

        if t_star == 0.0:
            degenerate_run += 1
        else:
            degenerate_run = 0

        # pivot: row `leave` replaces basic position enter_k
        out_row = basis[enter_k]
        rho = np.dot(Z[leave], Ainv)
        alpha = rho[enter_k]
        if abs(alpha) < 1e-14:
            return SINGULAR, h, it, 0
        col = Ainv[:, enter_k].copy()
        rho[enter_k] -= 1.0
        rho /= alpha
        for a in range(d):
            ca = col[a]
            if ca != 0.0:
                for b in range(d):
                    Ainv[a, b] -= ca * rho[b]

        # crossed rows flip side; the entering row drops out of the gradient
        for qq in range(q):
            i = cand_i[qq]
            c = 2.0 * w[i] * side[i]
            for j in range(d):
                g[j] += c * Z[i, j]
            side[i] = -side[i]
        c = w[leave] * side[leave]
        for j in range(d):
            g[j] += c * Z[leave, j]
        c = w[out_row] * enter_s
        for j in range(d):
            g[j] += c * Z[out_row, j]
        side[out_row] = -enter_s
        basis[enter_k] = leave
        is_basic[leave] = True
        is_basic[out_row] = False

        since_refactor += 1
        if since_refactor >= _REFACTOR_EVERY:
            Ainv[:, :] = np.linalg.inv(Z[basis])
            since_refactor = 0
            h = np.dot(Ainv, y[basis])
            r = y - np.dot(Z, h)
            _sync_sides(r, side, is_basic, tol_r)
            g = _gradient(Z, w, v, side, is_basic)
        else:
            h = np.dot(Ainv, y[basis])
            for i in range(R):
                r[i] -= t_star * zd[i]
            for k in range(d):
                r[basis[k]] = 0.0


@kernel
def _design_rows(Z, logx, delta, pen):
    n, d = Z.shape
    nunc = 0
    for i in range(n):
        if delta[i] == 1.0:
            nunc += 1
    npen = 0
    for j in range(d):
        if pen[j] > 0.0:
            npen += 1
    R = nunc + npen
    rows = np.zeros((R, d))
    y = np.zeros(R)
    w = np.ones(R)
    a = 0
    for i in range(n):
        if delta[i] == 1.0:
            rows[a] = Z[i]
            y[a] = logx[i]
            a += 1
    for j in range(d):
        if pen[j] > 0.0:
            rows[a, j] = 1.0
            w[a] = pen[j]
            a += 1
    order = np.empty(R, dtype=np.int64)
    for q in range(npen):
        order[q] = nunc + q
    for q in range(nunc):
        order[npen + q] = q
    return rows, y, w, order


@kernel
def _risk_fraction(rows, w, v, basis, Ainv, side, n_data):
    """At-risk fraction of each data row at an optimal basis.

    A nonbasic row counts by the sign of its residual (``side`` for exact
    zeros).  A basic row has residual 0; the optimality condition assigns it
    the effective sign ``t = (g Ainv)_k / w_k`` in [-1, 1], i.e. an event
    fraction ``(1 - t) / 2``, and the complementary ``(1 + t) / 2`` is returned
    as its at-risk fraction.
    """
    R, d = rows.shape
    is_basic = np.zeros(R, dtype=np.bool_)
    for k in range(d):
        is_basic[basis[k]] = True
    g = _gradient(rows, w, v, side, is_basic)
    u = np.dot(g, Ainv)
    frac = np.empty(n_data)
    for i in range(n_data):
        frac[i] = 0.5 * (1.0 + side[i])
    for k in range(d):
        i = basis[k]
        if i < n_data:
            t = u[k] / w[i]
            t = min(1.0, max(-1.0, t))
            frac[i] = 0.5 * (1.0 + t)
    return frac


@kernel
def seq_cqr(Z, logx, delta, levels, pen, init_mass, tol_r, tol_opt, max_iter, dual_ties, skip):
    """Sequential censored quantile regression over ``levels``.

    Each grid step solves an L1 problem whose rows are the uncensored
    observations (plus one unit row per penalized column, weight ``pen[j]``)
    and whose linear term is ``sum_i Z_i (delta_i - 2 c_i)``, with ``c_i`` the
    accumulated hazard mass of subject i.

    Censored subjects are at risk while ``log x >= fitted``.  Uncensored
    subjects use the same rule when ``dual_ties`` is False; otherwise those
    sitting exactly on the fit (the basis rows) count by their dual at-risk
    fraction, see ``_risk_fraction``.  The first ``skip`` levels only feed
    the recursion and are not returned.

    Returns ``(coefs, n_ok, status, iterations, n_degenerate, crossings, c)``
    over ``levels[skip:]``.  Rows of ``coefs`` at and after ``n_ok`` are NaN.
    """
    n, d = Z.shape
    m1 = levels.size - skip
    coefs = np.full((m1, d), np.nan)
    c = np.full(n, init_mass)
    rows, y, w, order = _design_rows(Z, logx, delta, pen)
    R = rows.shape[0]
    n_data = 0
    for i in range(n):
        if delta[i] == 1.0:
            n_data += 1
    row_of = np.full(n, -1, dtype=np.int64)
    a = 0
    for i in range(n):
        if delta[i] == 1.0:
            row_of[i] = a
            a += 1
    iters = 0
    n_deg = 0
    crossings = 0
    if R < d:
        return coefs, 0, SINGULAR, iters, n_deg, crossings, c
    basis, ok = crash_basis(rows, order, 1e-9)
    if not ok:
        return coefs, 0, SINGULAR, iters, n_deg, crossings, c
    Ainv = np.linalg.inv(rows[basis])
    side = np.ones(R)
    theta = np.zeros(n)
    frac = np.ones(n_data)
    for k in range(levels.size):
        if k > 0:
            dH = np.log((1.0 - levels[k - 1]) / (1.0 - levels[k]))
            for i in range(n):
                if dual_ties and row_of[i] >= 0:
                    c[i] += dH * frac[row_of[i]]
                elif logx[i] - theta[i] >= -tol_r:
                    c[i] += dH
        v = np.dot(delta - 2.0 * c, Z)
        status, h, it, nz = simplex_l1(rows, y, w, v, basis, Ainv, side,
                                       max_iter, tol_r, tol_opt)
        iters += it
        if status != OPTIMAL:
            return coefs, max(k - skip, 0), status, iters, n_deg, crossings, c
        if nz > 0:
            n_deg += 1
        if dual_ties:
            frac = _risk_fraction(rows, w, v, basis, Ainv, side, n_data)
        theta_new = np.dot(Z, h)
        if k >= skip:
            coefs[k - skip] = h
            if k > skip:
                for i in range(n):
                    if theta_new[i] < theta[i] - tol_r:
                        crossings += 1
        theta = theta_new
    return coefs, m1, OPTIMAL, iters, n_deg, crossings, c


@kernel
def append_and_estimate(Z, logx, delta, levels, selected, init_mass, tol_r, tol_opt, max_iter,
                        dual_ties, skip):
    """Coordinate-j paths from fits on ``selected + {j}`` for every column j.

    ``selected`` must contain 0 (the intercept).  Columns already selected
    share one fit.  Returns ``(est, n_ok)`` with ``est`` of shape ``(p, m+1)``
    and ``n_ok[j]`` the number of solved grid points for column j.
    """
    n, p = Z.shape
    m1 = levels.size - skip
    est = np.full((p, m1), np.nan)
    n_ok = np.zeros(p, dtype=np.int64)
    q = selected.size
    in_sel = np.zeros(p, dtype=np.bool_)
    for a in range(q):
        in_sel[selected[a]] = True
    pen0 = np.zeros(q)
    Zs = np.ascontiguousarray(Z[:, selected])
    coefs, nok, status, it, nd, cr, c = seq_cqr(Zs, logx, delta, levels, pen0, init_mass,
                                                tol_r, tol_opt, max_iter, dual_ties, skip)
    for a in range(q):
        j = selected[a]
        est[j] = coefs[:, a]
        n_ok[j] = nok
    pen1 = np.zeros(q + 1)
    Zj = np.empty((n, q + 1))
    Zj[:, :q] = Zs
    for j in range(p):
        if in_sel[j]:
            continue
        Zj[:, q] = Z[:, j]
        coefs, nok, status, it, nd, cr, c = seq_cqr(Zj, logx, delta, levels, pen1, init_mass,
                                                    tol_r, tol_opt, max_iter, dual_ties, skip)
        est[j] = coefs[:, q]
        n_ok[j] = nok
    return est, n_ok
