"""Dense bounded-variable two-phase primal simplex (numba).

Solves ``min c.x  s.t.  G x + s = h,  lo <= x <= hi`` where each slack ``s_r``
lives in ``[0, inf)`` for an inequality row and ``[0, 0]`` for an equality row.
Every ``lo`` must be finite; ``hi`` may be ``inf``.  Phase I adds one artificial
per row that the all-at-lower-bound start violates.  Pricing is Dantzig until
``2 * rows`` pivots, then Bland's rule; after Bland engages the kernel allows
``10 * (rows + cols)`` further pivots before giving up.
"""
from __future__ import annotations

import numpy as np
from numba import njit

OPTIMAL, INFEASIBLE, UNBOUNDED, ITERATION_LIMIT, SINGULAR = 0, 1, 2, 3, 4

FEAS_TOL = 1e-9
OPT_TOL = 1e-10
PIVOT_TOL = 1e-11


@njit(cache=True)
def _column(G, sig, n, m, j, out):
    out[:] = 0.0
    if j < n:
        for i in range(m):
            out[i] = G[i, j]
    elif j < n + m:
        out[j - n] = 1.0
    else:
        out[j - n - m] = sig[j - n - m]


@njit(cache=True)
def _reinvert(G, sig, n, m, basis, Binv):
    Bm = np.zeros((m, m))
    col = np.empty(m)
    for i in range(m):
        _column(G, sig, n, m, basis[i], col)
        Bm[:, i] = col
    if m == 0:
        return True
    if abs(np.linalg.det(Bm)) < 1e-300:
        return False
    Binv[:, :] = np.linalg.inv(Bm)
    return True


@njit(cache=True)
def _basic_values(G, sig, h, n, m, basis, Binv, xv):
    """x_B = B^{-1} (h - N x_N)."""
    rhs = h.copy()
    col = np.empty(m)
    isb = np.zeros(n + 2 * m, np.bool_)
    for i in range(m):
        isb[basis[i]] = True
    for j in range(n + 2 * m):
        if isb[j] or xv[j] == 0.0:
            continue
        _column(G, sig, n, m, j, col)
        for i in range(m):
            rhs[i] -= col[i] * xv[j]
    xb = Binv @ rhs
    for i in range(m):
        xv[basis[i]] = xb[i]


@njit(cache=True)
def _iterate(G, sig, h, cost, lob, hib, xv, basis, isb, at_hi, Binv, n, m, max_dantzig, cap):
    """Primal simplex iterations from a feasible basis. Returns (status, pivots)."""
    N = n + 2 * m
    col = np.empty(m)
    alpha = np.empty(m)
    cb = np.empty(m)
    pi = np.empty(m)
    piG = np.empty(n)
    pivots = 0
    bland_pivots = 0
    since_inv = 0
    while True:
        bland = pivots >= max_dantzig
        if bland and bland_pivots > cap:
            return ITERATION_LIMIT, pivots
        for i in range(m):
            cb[i] = cost[basis[i]]
        for k in range(m):
            acc = 0.0
            for i in range(m):
                acc += cb[i] * Binv[i, k]
            pi[k] = acc
        for j in range(n):
            acc = 0.0
            for i in range(m):
                acc += pi[i] * G[i, j]
            piG[j] = acc
        enter = -1
        best = 0.0
        direction = 0
        for j in range(N):
            if isb[j] or hib[j] - lob[j] <= 0.0:
                continue
            if j < n:
                dj = cost[j] - piG[j]
            elif j < n + m:
                dj = cost[j] - pi[j - n]
            else:
                dj = cost[j] - pi[j - n - m] * sig[j - n - m]
            if not at_hi[j] and dj < -OPT_TOL:
                score = -dj
                dirj = 1
            elif at_hi[j] and dj > OPT_TOL:
                score = dj
                dirj = -1
            else:
                continue
            if bland:
                enter = j
                direction = dirj
                break
            if score > best:
                best = score
                enter = j
                direction = dirj
        if enter < 0:
            return OPTIMAL, pivots

        if enter < n:
            for i in range(m):
                acc = 0.0
                for k in range(m):
                    acc += Binv[i, k] * G[k, enter]
                alpha[i] = acc
        else:
            r0 = enter - n if enter < n + m else enter - n - m
            sc = 1.0 if enter < n + m else sig[r0]
            for i in range(m):
                alpha[i] = Binv[i, r0] * sc
        tmax = hib[enter] - lob[enter]
        leave = -1
        leave_hi = False
        best_piv = 0.0
        for i in range(m):
            di = -direction * alpha[i]
            bi = basis[i]
            if di < -PIVOT_TOL:
                t = (xv[bi] - lob[bi]) / (-di)
                to_hi = False
            elif di > PIVOT_TOL:
                if not np.isfinite(hib[bi]):
                    continue
                t = (hib[bi] - xv[bi]) / di
                to_hi = True
            else:
                continue
            if t < 0.0:
                t = 0.0
            take = False
            if t < tmax - 1e-12:
                take = True
            elif t <= tmax + 1e-12 and leave >= 0:
                if bland:
                    take = bi < basis[leave]
                else:
                    take = abs(di) > best_piv
            if take:
                tmax = t
                leave = i
                leave_hi = to_hi
                best_piv = abs(di)
        if not np.isfinite(tmax):
            return UNBOUNDED, pivots

        xv[enter] += direction * tmax
        for i in range(m):
            xv[basis[i]] -= direction * alpha[i] * tmax
        if leave < 0:
            at_hi[enter] = not at_hi[enter]
            xv[enter] = hib[enter] if at_hi[enter] else lob[enter]
        else:
            lv = basis[leave]
            at_hi[lv] = leave_hi
            xv[lv] = hib[lv] if leave_hi else lob[lv]
            isb[lv] = False
            isb[enter] = True
            basis[leave] = enter
            at_hi[enter] = False
            piv = alpha[leave]
            for k in range(m):
                col[k] = Binv[leave, k] / piv
            for i in range(m):
                a = alpha[i]
                if i != leave and a != 0.0:
                    for k in range(m):
                        Binv[i, k] -= a * col[k]
            for k in range(m):
                Binv[leave, k] = col[k]
            since_inv += 1
            if since_inv >= 64:
                if not _reinvert(G, sig, n, m, basis, Binv):
                    return SINGULAR, pivots
                _basic_values(G, sig, h, n, m, basis, Binv, xv)
                since_inv = 0
        pivots += 1
        if bland:
            bland_pivots += 1


@njit(cache=True)
def _phase1(G, h, eq, lo, hi):
    """Feasible starting basis. Returns (status, state tuple)."""
    m, n = G.shape
    N = n + 2 * m
    lob = np.zeros(N)
    hib = np.zeros(N)
    xv = np.zeros(N)
    sig = np.ones(m)
    for j in range(n):
        lob[j] = lo[j]
        hib[j] = hi[j]
        xv[j] = lo[j]
    for r in range(m):
        hib[n + r] = 0.0 if eq[r] else np.inf
    resid = h - G @ lo
    basis = np.empty(m, np.int64)
    isb = np.zeros(N, np.bool_)
    at_hi = np.zeros(N, np.bool_)
    cost1 = np.zeros(N)
    need = False
    for r in range(m):
        s = resid[r]
        ok = s >= -FEAS_TOL and (not eq[r] or s <= FEAS_TOL)
        if ok:
            basis[r] = n + r
            xv[n + r] = s
        else:
            sig[r] = 1.0 if s > 0 else -1.0
            basis[r] = n + m + r
            xv[n + m + r] = abs(s)
            hib[n + m + r] = np.inf
            cost1[n + m + r] = 1.0
            need = True
        isb[basis[r]] = True
    Binv = np.zeros((m, m))
    for r in range(m):
        Binv[r, r] = 1.0 / sig[r] if basis[r] >= n + m else 1.0
    status = OPTIMAL
    if need:
        status, _ = _iterate(G, sig, h, cost1, lob, hib, xv, basis, isb, at_hi, Binv, n, m,
                             2 * m, 10 * (m + n))
        if status == OPTIMAL:
            infeas = 0.0
            for r in range(m):
                infeas += xv[n + m + r]
            if infeas > 1e-7 * (1.0 + np.abs(h).max()):
                status = INFEASIBLE
    for r in range(m):
        hib[n + m + r] = 0.0
    return status, lob, hib, xv, sig, basis, isb, at_hi, Binv


@njit(cache=True)
def _phase2(G, h, c, lob, hib, xv, sig, basis, isb, at_hi, Binv, out_x, out_pi, out_d):
    """Minimize c.x from a feasible basis (state arrays updated in place)."""
    m, n = G.shape
    N = n + 2 * m
    cost = np.zeros(N)
    cost[:n] = c
    status, pivots = _iterate(G, sig, h, cost, lob, hib, xv, basis, isb, at_hi, Binv, n, m,
                              2 * m, 10 * (m + n))
    if status != OPTIMAL:
        return status, 0.0, pivots, False
    if m > 0 and pivots > 0:
        _basic_values(G, sig, h, n, m, basis, Binv, xv)
    cb = np.empty(m)
    for i in range(m):
        cb[i] = cost[basis[i]]
    pi = cb @ Binv
    out_pi[:] = pi
    out_x[:] = xv[:n]
    d = c - pi @ G
    degenerate = False
    for j in range(n):
        if isb[j]:
            out_d[j] = 0.0
        else:
            out_d[j] = d[j]
    for i in range(m):
        bi = basis[i]
        if xv[bi] - lob[bi] < 1e-9 or hib[bi] - xv[bi] < 1e-9:
            degenerate = True
    value = 0.0
    for j in range(n):
        value += c[j] * out_x[j]
    return OPTIMAL, value, pivots, degenerate


@njit(cache=True)
def solve_min(G, h, eq, lo, hi, c):
    """Single LP. Returns (status, value, x, pi, reduced costs, at_hi mask, basis, pivots, degenerate)."""
    m, n = G.shape
    x = np.zeros(n)
    pi = np.zeros(m)
    d = np.zeros(n)
    st, lob, hib, xv, sig, basis, isb, at_hi, Binv = _phase1(G, h, eq, lo, hi)
    if st != OPTIMAL:
        return st, 0.0, x, pi, d, at_hi[:n].copy(), basis, 0, False
    st, val, piv, deg = _phase2(G, h, c, lob, hib, xv, sig, basis, isb, at_hi, Binv, x, pi, d)
    return st, val, x, pi, d, at_hi[:n].copy(), basis, piv, deg


@njit(cache=True)
def solve_batch(G, h, eq, lo, hi, C, want):
    """Many objectives per constraint set, warm-started from one phase I.

    G (B, m, n), h (B, m), eq (B, m) bool, lo/hi (B, n), C (B, K, n), want (B, K).
    Rows with ``eq == 2`` are dropped; variables with ``lo == hi`` are substituted.
    Returns values, x, dv/dh, dv/dlo, dv/dhi (all for *minimization* of C[k]) and flags
    (0 ok, 1 degenerate, >=2 failure status + 2).
    """
    B, m, n = G.shape
    K = C.shape[1]
    vals = np.zeros((B, K))
    X = np.zeros((B, K, n))
    PH = np.zeros((B, K, m))
    PLO = np.zeros((B, K, n))
    PHI = np.zeros((B, K, n))
    flags = np.zeros((B, K), np.int64)
    for b in range(B):
        anyk = False
        for k in range(K):
            if want[b, k]:
                anyk = True
        if not anyk:
            continue
        rows = np.empty(m, np.int64)
        mr = 0
        for r in range(m):
            if eq[b, r] != 2:
                rows[mr] = r
                mr += 1
        cols = np.empty(n, np.int64)
        fixed = np.zeros(n, np.bool_)
        nc = 0
        for j in range(n):
            if hi[b, j] - lo[b, j] <= 0.0:
                fixed[j] = True
            else:
                cols[nc] = j
                nc += 1
        Gs = np.empty((mr, nc))
        hs = np.empty(mr)
        es = np.empty(mr, np.bool_)
        for i in range(mr):
            r = rows[i]
            acc = h[b, r]
            for j in range(n):
                if fixed[j]:
                    acc -= G[b, r, j] * lo[b, j]
            hs[i] = acc
            es[i] = eq[b, r] == 1
            for q in range(nc):
                Gs[i, q] = G[b, r, cols[q]]
        los = np.empty(nc)
        his = np.empty(nc)
        for q in range(nc):
            los[q] = lo[b, cols[q]]
            his[q] = hi[b, cols[q]]
        boxed = True
        for q in range(nc):
            if not np.isfinite(his[q]):
                boxed = False
        xs = np.zeros(nc)
        pis = np.zeros(mr)
        ds = np.zeros(nc)
        cs = np.empty(nc)
        if boxed:
            dbasis = np.empty(mr, np.int64)
            dBinv = np.zeros((mr, mr))
            warm = False
        else:
            st, lob, hib, xv, sig, basis, isb, at_hi, Binv = _phase1(Gs, hs, es, los, his)
        for k in range(K):
            if not want[b, k]:
                continue
            for q in range(nc):
                cs[q] = C[b, k, cols[q]]
            if boxed:
                # dual simplex, warm-started from the previous objective's basis
                st2, val, xs, pis, ds, at_hi, isb, piv, deg = dual_min(
                    Gs, hs, es, los, his, cs, dbasis, dBinv, warm, 50 * (mr + 1) + nc)
                if st2 != OPTIMAL and warm:
                    st2, val, xs, pis, ds, at_hi, isb, piv, deg = dual_min(
                        Gs, hs, es, los, his, cs, dbasis, dBinv, False, 50 * (mr + 1) + nc)
                if st2 != OPTIMAL and st2 != INFEASIBLE:
                    # fall back to the primal method for this objective
                    st2, val, xs, pis, ds, at_hi, basis, piv, deg = solve_min(Gs, hs, es, los, his, cs)
                    isb = np.zeros(nc, np.bool_)
                    for i in range(mr):
                        if basis[i] < nc:
                            isb[basis[i]] = True
                    warm = False
                else:
                    warm = st2 == OPTIMAL
                if st2 != OPTIMAL:
                    flags[b, k] = st2 + 2
                    continue
            else:
                if st != OPTIMAL:
                    flags[b, k] = st + 2
                    continue
                st2, val, piv, deg = _phase2(Gs, hs, cs, lob, hib, xv, sig, basis, isb, at_hi,
                                             Binv, xs, pis, ds)
                if st2 != OPTIMAL:
                    flags[b, k] = st2 + 2
                    # restart from a fresh phase I for the next objective
                    st, lob, hib, xv, sig, basis, isb, at_hi, Binv = _phase1(Gs, hs, es, los, his)
                    continue
            flags[b, k] = 1 if deg else 0
            const = 0.0
            for j in range(n):
                if fixed[j]:
                    X[b, k, j] = lo[b, j]
                    const += C[b, k, j] * lo[b, j]
            for q in range(nc):
                X[b, k, cols[q]] = xs[q]
                if not isb[q]:
                    if at_hi[q]:
                        PHI[b, k, cols[q]] = ds[q]
                    else:
                        PLO[b, k, cols[q]] = ds[q]
            for i in range(mr):
                PH[b, k, rows[i]] = pis[i]
            # fixed variables: reduced cost c_j - pi.G_j, attributed to the lower bound
            for j in range(n):
                if fixed[j]:
                    dj = C[b, k, j]
                    for i in range(mr):
                        dj -= pis[i] * G[b, rows[i], j]
                    PLO[b, k, j] = dj
            vals[b, k] = val + const
    return vals, X, PH, PLO, PHI, flags


@njit(cache=True)
def _dual_duals(G, cost, basis, Binv, n, m, d):
    cb = np.empty(m)
    for i in range(m):
        cb[i] = cost[basis[i]]
    pi = cb @ Binv
    for j in range(n):
        acc = cost[j]
        for i in range(m):
            acc -= pi[i] * G[i, j]
        d[j] = acc
    for r in range(m):
        d[n + r] = cost[n + r] - pi[r]
    return pi


@njit(cache=True)
def _dual_values(G, h, lob, hib, basis, isb, at_hi, Binv, n, m, xv):
    for j in range(n + m):
        if not isb[j]:
            xv[j] = hib[j] if at_hi[j] else lob[j]
    rhs = h.copy()
    for j in range(n):
        if not isb[j] and xv[j] != 0.0:
            for i in range(m):
                rhs[i] -= G[i, j] * xv[j]
    for r in range(m):
        if not isb[n + r] and xv[n + r] != 0.0:
            rhs[r] -= xv[n + r]
    xb = Binv @ rhs
    for i in range(m):
        xv[basis[i]] = xb[i]


@njit(cache=True)
def dual_min(G, h, eq, lo, hi, c, basis, Binv, warm, max_iter):
    """Dual simplex for ``min c.x, G x + s = h, lo <= x <= hi`` with finite ``lo``/``hi``.

    Starts from the given basis when ``warm`` (else the slack basis) with every
    nonbasic boxed variable at the bound its reduced cost prefers, which is dual
    feasible whenever no nonbasic slack prices out.  ``basis``/``Binv`` are updated in
    place.  Returns (status, value, x, pi, d[:n], at_hi[:n], isb[:n], pivots, degenerate);
    status SINGULAR also signals "warm start not dual feasible".
    """
    m, n = G.shape
    N = n + m
    lob = np.zeros(N)
    hib = np.zeros(N)
    cost = np.zeros(N)
    for j in range(n):
        lob[j] = lo[j]
        hib[j] = hi[j]
        cost[j] = c[j]
    for r in range(m):
        hib[n + r] = 0.0 if eq[r] else np.inf
    x = np.zeros(n)
    d = np.zeros(N)
    isb = np.zeros(N, np.bool_)
    at_hi = np.zeros(N, np.bool_)
    xv = np.zeros(N)
    if not warm:
        for r in range(m):
            basis[r] = n + r
        Binv[:, :] = 0.0
        for r in range(m):
            Binv[r, r] = 1.0
    for i in range(m):
        isb[basis[i]] = True
    pi = _dual_duals(G, cost, basis, Binv, n, m, d)
    for j in range(N):
        if isb[j]:
            d[j] = 0.0
            continue
        if hib[j] - lob[j] <= 0.0:
            continue
        if d[j] < 0.0:
            if not np.isfinite(hib[j]):
                if d[j] < -OPT_TOL:
                    return SINGULAR, 0.0, x, pi, d[:n].copy(), at_hi[:n].copy(), isb[:n].copy(), 0, False
            else:
                at_hi[j] = True
    _dual_values(G, h, lob, hib, basis, isb, at_hi, Binv, n, m, xv)
    alpha_r = np.zeros(N)
    col = np.empty(m)
    alpha_q = np.empty(m)
    cand = np.empty(N, np.int64)
    ratio = np.empty(N)
    flips = np.empty(N, np.int64)
    pivots = 0
    since_inv = 0
    status = OPTIMAL
    while True:
        r = -1
        worst = FEAS_TOL
        below = False
        for i in range(m):
            bi = basis[i]
            v = xv[bi]
            if v < lob[bi] - worst:
                worst = lob[bi] - v
                r = i
                below = True
            elif v > hib[bi] + worst:
                worst = v - hib[bi]
                r = i
                below = False
        if r < 0:
            break
        if pivots >= max_iter:
            status = ITERATION_LIMIT
            break
        # pivot row alpha_r = e_r B^-1 [G I] over nonbasic columns
        for j in range(n):
            if isb[j] or hib[j] - lob[j] <= 0.0:
                alpha_r[j] = 0.0
                continue
            acc = 0.0
            for i in range(m):
                acc += Binv[r, i] * G[i, j]
            alpha_r[j] = acc
        for k in range(m):
            j = n + k
            alpha_r[j] = 0.0 if (isb[j] or hib[j] - lob[j] <= 0.0) else Binv[r, k]
        # bound-flipping ratio test: pass breakpoints of boxed candidates while the
        # dual objective keeps improving, flipping them to their other bound
        nc = 0
        for j in range(N):
            a = alpha_r[j]
            if a == 0.0:
                continue
            if below:
                ok = (not at_hi[j] and a < -PIVOT_TOL) or (at_hi[j] and a > PIVOT_TOL)
            else:
                ok = (not at_hi[j] and a > PIVOT_TOL) or (at_hi[j] and a < -PIVOT_TOL)
            if ok:
                cand[nc] = j
                ratio[nc] = max(abs(d[j]) if ((d[j] >= 0.0) != at_hi[j]) else 0.0, 0.0) / abs(a)
                nc += 1
        if nc == 0:
            status = INFEASIBLE
            break
        order = np.argsort(ratio[:nc])
        slope = worst
        q = -1
        nflip = 0
        k = 0
        while k < nc:
            j = cand[order[k]]
            width = hib[j] - lob[j]
            drop = abs(alpha_r[j]) * width
            if np.isfinite(width) and slope - drop > 0.0 and k < nc - 1:
                flips[nflip] = j
                nflip += 1
                slope -= drop
                k += 1
                continue
            # Harris-style choice among near-ties: the largest pivot magnitude
            q = j
            rq = ratio[order[k]]
            best = abs(alpha_r[j])
            kk = k + 1
            while kk < nc and ratio[order[kk]] <= rq + 1e-12:
                jj = cand[order[kk]]
                if abs(alpha_r[jj]) > best:
                    best = abs(alpha_r[jj])
                    q = jj
                kk += 1
            break
        if nflip > 0:
            delta = np.zeros(m)
            for f in range(nflip):
                j = flips[f]
                step = (lob[j] - hib[j]) if at_hi[j] else (hib[j] - lob[j])
                at_hi[j] = not at_hi[j]
                xv[j] = hib[j] if at_hi[j] else lob[j]
                if j < n:
                    for i in range(m):
                        delta[i] += G[i, j] * step
                else:
                    delta[j - n] += step
            dx = Binv @ delta
            for i in range(m):
                xv[basis[i]] -= dx[i]
        # entering column
        if q < n:
            for i in range(m):
                acc = 0.0
                for k in range(m):
                    acc += Binv[i, k] * G[k, q]
                alpha_q[i] = acc
        else:
            for i in range(m):
                alpha_q[i] = Binv[i, q - n]
        arq = alpha_q[r]
        bi = basis[r]
        target = lob[bi] if below else hib[bi]
        t = (xv[bi] - target) / arq
        xv[q] += t
        for i in range(m):
            xv[basis[i]] -= t * alpha_q[i]
        xv[bi] = target
        theta_d = d[q] / alpha_r[q]
        for j in range(N):
            if not isb[j] and alpha_r[j] != 0.0:
                d[j] -= theta_d * alpha_r[j]
        d[q] = 0.0
        d[bi] = -theta_d
        isb[bi] = False
        at_hi[bi] = not below
        isb[q] = True
        at_hi[q] = False
        basis[r] = q
        for k in range(m):
            col[k] = Binv[r, k] / arq
        for i in range(m):
            a = alpha_q[i]
            if i != r and a != 0.0:
                for k in range(m):
                    Binv[i, k] -= a * col[k]
        for k in range(m):
            Binv[r, k] = col[k]
        pivots += 1
        since_inv += 1
        if since_inv >= 64:
            if not _reinvert(G, np.ones(m), n, m, basis, Binv):
                status = SINGULAR
                break
            pi = _dual_duals(G, cost, basis, Binv, n, m, d)
            for j in range(N):
                if isb[j]:
                    d[j] = 0.0
            _dual_values(G, h, lob, hib, basis, isb, at_hi, Binv, n, m, xv)
            since_inv = 0
    if status != OPTIMAL:
        return status, 0.0, x, pi, d[:n].copy(), at_hi[:n].copy(), isb[:n].copy(), pivots, False
    if pivots > 0:
        _dual_values(G, h, lob, hib, basis, isb, at_hi, Binv, n, m, xv)
    pi = _dual_duals(G, cost, basis, Binv, n, m, d)
    degenerate = False
    for i in range(m):
        bi = basis[i]
        d[bi] = 0.0
        if xv[bi] - lob[bi] < 1e-9 or hib[bi] - xv[bi] < 1e-9:
            degenerate = True
    value = 0.0
    for j in range(n):
        x[j] = xv[j]
        value += c[j] * xv[j]
    return OPTIMAL, value, x, pi, d[:n].copy(), at_hi[:n].copy(), isb[:n].copy(), pivots, degenerate
