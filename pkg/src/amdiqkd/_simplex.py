"""Dense revised dual simplex for small box-constrained linear programs.

Solves ``min c.x`` subject to ``lo <= A x <= hi`` and ``lx <= x <= ux``
with every bound finite.  Row activities are carried as extra boxed
variables, so the all-slack basis is dual feasible once each column sits at
the bound its cost prefers, and no phase one is needed.

The basis inverse is recomputed from the original matrix at every
iteration instead of being updated in product form.  The LPs met in decoy
analysis have at most a few dozen rows, so the inversion is cheap, and this
keeps round-off from accumulating on the badly scaled Poisson coefficients.
Columns are equilibrated before solving.

The leaving row is the most infeasible one and the entering column comes
from a bound-flipping ratio test, which matters here: most columns carry no
cost, so plain ratio tests stall on long runs of degenerate pivots.  After
``4 * (m + n)`` iterations both choices fall back to Bland's smallest-index
rule, which cannot cycle.
"""
from __future__ import annotations

import numpy as np
from numba import njit

OPTIMAL = 0
INFEASIBLE = 2
ITERATION_LIMIT = 1


@njit(cache=True, nogil=True)
def _solve(A, lo, hi, lx, ux, c, feas_tol, max_iter, basis0):
    m, n = A.shape
    nt = n + m
    # column equilibration: x = colscale * x'
    colscale = np.ones(n)
    for j in range(n):
        s = 0.0
        for i in range(m):
            s = max(s, abs(A[i, j]))
        if s > 0.0:
            colscale[j] = 1.0 / s
    M = np.zeros((m, nt))
    lower = np.empty(nt)
    upper = np.empty(nt)
    cost = np.zeros(nt)
    for j in range(n):
        for i in range(m):
            M[i, j] = A[i, j] * colscale[j]
        lower[j] = lx[j] / colscale[j]
        upper[j] = ux[j] / colscale[j]
        cost[j] = c[j] * colscale[j]
    for i in range(m):
        M[i, n + i] = -1.0
        lower[n + i] = lo[i]
        upper[n + i] = hi[i]

    x = np.zeros(nt)
    is_basic = np.zeros(nt, dtype=np.bool_)
    basis = np.empty(m, dtype=np.int64)
    B = np.empty((m, m))
    warm = basis0.shape[0] == m
    if warm:
        for i in range(m):
            basis[i] = basis0[i]
            for k in range(m):
                B[k, i] = M[k, basis0[i]]
        # reject a singular or badly conditioned warm basis
        Binv = np.eye(m)
        try:
            Binv = np.linalg.inv(B)
            err = np.abs(B @ Binv - np.eye(m)).max()
            warm = np.isfinite(err) and err < 1e-8
        except Exception:
            warm = False
    if warm:
        for i in range(m):
            is_basic[basis[i]] = True
        # any basis is dual feasible once each nonbasic column sits at the
        # bound its reduced cost prefers
        y = np.zeros(m)
        for i in range(m):
            cb = cost[basis[i]]
            if cb != 0.0:
                for kk in range(m):
                    y[kk] += cb * Binv[i, kk]
        for j in range(nt):
            if is_basic[j]:
                continue
            d = cost[j]
            for i in range(m):
                d -= y[i] * M[i, j]
            x[j] = lower[j] if d >= 0.0 else upper[j]
    else:
        for j in range(n):
            x[j] = lower[j] if cost[j] >= 0.0 else upper[j]
        for i in range(m):
            basis[i] = n + i
            is_basic[n + i] = True

    status = ITERATION_LIMIT
    bland_after = 4 * nt
    rhs = np.empty(m)
    alpha = np.empty(nt)
    ratio_buf = np.empty(nt)
    flip = np.empty(nt, dtype=np.int64)
    for it in range(max_iter):
        for i in range(m):
            for k in range(m):
                B[i, k] = M[i, basis[k]]
        Binv = np.linalg.inv(B)
        # basic values from B x_B = -N x_N
        for i in range(m):
            s = 0.0
            for j in range(nt):
                if not is_basic[j] and x[j] != 0.0:
                    s -= M[i, j] * x[j]
            rhs[i] = s
        xb = Binv @ rhs
        for i in range(m):
            x[basis[i]] = xb[i]
        # leaving row
        r = -1
        worst = 0.0
        best_idx = nt + 1
        for i in range(m):
            k = basis[i]
            tol = feas_tol * max(1.0, abs(lower[k]), abs(upper[k]))
            viol = 0.0
            if x[k] < lower[k] - tol:
                viol = (lower[k] - x[k]) / max(1.0, abs(lower[k]))
            elif x[k] > upper[k] + tol:
                viol = (x[k] - upper[k]) / max(1.0, abs(upper[k]))
            if viol > 0.0:
                if it < bland_after:
                    if viol > worst:
                        worst = viol
                        r = i
                elif k < best_idx:
                    best_idx = k
                    r = i
        if r < 0:
            status = OPTIMAL
            break
        k = basis[r]
        going_up = x[k] < lower[k]
        # pivot row and reduced costs
        rho = Binv[r]
        y = np.zeros(m)
        for i in range(m):
            cb = cost[basis[i]]
            if cb != 0.0:
                for kk in range(m):
                    y[kk] += cb * Binv[i, kk]
        row_max = 0.0
        for j in range(nt):
            if is_basic[j]:
                alpha[j] = 0.0
                continue
            a = 0.0
            for i in range(m):
                a += rho[i] * M[i, j]
            alpha[j] = a
            row_max = max(row_max, abs(a))
        piv_tol = 1e-9 * row_max
        # eligible columns and their dual ratios
        n_cand = 0
        for j in range(nt):
            ratio_buf[j] = np.inf
            if is_basic[j] or upper[j] <= lower[j]:
                continue
            a = alpha[j]
            if abs(a) <= piv_tol:
                continue
            at_lower = x[j] <= lower[j]
            # moving x_j inside its box must push x_k towards feasibility
            if going_up:
                ok = (at_lower and a < 0.0) or ((not at_lower) and a > 0.0)
            else:
                ok = (at_lower and a > 0.0) or ((not at_lower) and a < 0.0)
            if not ok:
                continue
            d = cost[j]
            for i in range(m):
                d -= y[i] * M[i, j]
            ratio_buf[j] = abs(d) / abs(a)
            n_cand += 1
        # bound-flipping ratio test: walk the breakpoints in ratio order,
        # flipping boxed columns while the leaving row stays infeasible
        q = -1
        if n_cand > 0:
            slope = (lower[k] - x[k]) if going_up else (x[k] - upper[k])
            order = np.argsort(ratio_buf, kind="mergesort")[:n_cand]
            n_flip = 0
            if it >= bland_after:
                # plain Bland step: smallest index among the minimum ratios
                best_ratio = ratio_buf[order[0]]
                cut = best_ratio + 1e-12 * max(1.0, best_ratio)
                for j in range(nt):
                    if ratio_buf[j] <= cut:
                        q = j
                        break
            else:
                for t in range(n_cand):
                    j = order[t]
                    slope -= abs(alpha[j]) * (upper[j] - lower[j])
                    if slope <= 0.0 or t == n_cand - 1:
                        q = j
                        break
                    flip[n_flip] = j
                    n_flip += 1
                if slope > 0.0:
                    # even with every column moved the row stays infeasible
                    q = -1
                    n_flip = 0
            for t in range(n_flip):
                j = flip[t]
                x[j] = upper[j] if x[j] <= lower[j] else lower[j]
        if q < 0:
            status = INFEASIBLE
            break
        x[k] = lower[k] if going_up else upper[k]
        is_basic[k] = False
        is_basic[q] = True
        basis[r] = q
    out = np.empty(n)
    obj = 0.0
    for j in range(n):
        out[j] = x[j] * colscale[j]
        obj += c[j] * out[j]
    return status, obj, out, basis


@njit(cache=True, nogil=True)
def _solve_batch(A, lo, hi, lx, ux, c, feas_tol, max_iter, warm):
    # neighbouring LPs in a batch usually differ little, so each one starts
    # from the optimal basis of the previous one
    b, m, _ = A.shape
    status = np.empty(b, dtype=np.int64)
    obj = np.empty(b)
    basis = np.empty(0, dtype=np.int64)
    for i in range(b):
        s, o, _, bas = _solve(A[i], lo[i], hi[i], lx, ux, c, feas_tol, max_iter, basis)
        if s != OPTIMAL:
            # a failed warm start is retried cold before being reported
            if basis.shape[0] == m:
                s, o, _, bas = _solve(A[i], lo[i], hi[i], lx, ux, c, feas_tol, max_iter,
                                      np.empty(0, dtype=np.int64))
        status[i] = s
        obj[i] = o
        basis = bas.copy() if (warm and s == OPTIMAL) else np.empty(0, dtype=np.int64)
    return status, obj


def linprog_box(c, A, lo, hi, lx, ux, feas_tol=1e-9, max_iter=None):
    """Solve a single boxed LP; returns ``(status, objective, x)``.

    ``status`` is 0 for optimal, 2 for infeasible and 1 when the iteration
    limit was hit.
    """
    A = np.ascontiguousarray(A, dtype=float)
    m, n = A.shape
    max_iter = 50 * (m + n) if max_iter is None else max_iter
    status, obj, x, _ = _solve(A, _f(lo), _f(hi), _f(lx), _f(ux), _f(c), feas_tol, max_iter,
                               np.empty(0, dtype=np.int64))
    return status, obj, x


def linprog_box_batch(c, A, lo, hi, lx, ux, feas_tol=1e-9, max_iter=None, warm=True):
    """Solve a stack of LPs sharing ``c`` and the column bounds.

    With ``warm`` each LP starts from the previous one's optimal basis.
    """
    A = np.ascontiguousarray(A, dtype=float)
    _, m, n = A.shape
    max_iter = 50 * (m + n) if max_iter is None else max_iter
    return _solve_batch(A, np.ascontiguousarray(lo, dtype=float), np.ascontiguousarray(hi, dtype=float),
                        _f(lx), _f(ux), _f(c), feas_tol, max_iter, warm)


def _f(v):
    return np.ascontiguousarray(v, dtype=float)
