"""Compiled inner loops.

Everything here works on plain arrays. ``X`` is an ``(n, p)`` float64 matrix
with NaN marking missing entries; a row with NaN at a split follows that
split's missing direction, otherwise ``x <= threshold`` goes left.
"""

import numpy as np
from numba import njit

LEAF = -1
ABSENT = -2


@njit(cache=True)
def _goes_left(x, thr, mleft):
    if np.isnan(x):
        return mleft
    return x <= thr


@njit(cache=True)
def route(feature, threshold, missing_left, left, right, X):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        t = 0
        while feature[t] >= 0:
            if _goes_left(X[i, feature[t]], threshold[t], missing_left[t]):
                t = left[t]
            else:
                t = right[t]
        out[i] = t
    return out


@njit(cache=True)
def node_visits(feature, threshold, missing_left, left, right, X):
    """Boolean ``(n_nodes, n_rows)`` matrix of which rows pass through which node."""
    n = X.shape[0]
    visits = np.zeros((feature.size, n), dtype=np.bool_)
    for i in range(n):
        t = 0
        visits[t, i] = True
        while feature[t] >= 0:
            if _goes_left(X[i, feature[t]], threshold[t], missing_left[t]):
                t = left[t]
            else:
                t = right[t]
            visits[t, i] = True
    return visits


# ---------------------------------------------------------------------------
# exhaustive split search
# ---------------------------------------------------------------------------

@njit(cache=True)
def _precedes(f, thr, ml, bf, bthr, bml):
    # candidate order: lower feature, then lower threshold, then missing-left first
    if f != bf:
        return f < bf
    if thr != bthr:
        return thr < bthr
    return ml and not bml


@njit(cache=True)
def best_split(X, rows, S, W, lam, min_leaf, min_weight, min_gain, gorder, scratch):
    """Best axis-aligned split of ``rows`` by the score ``sum_k S_k^2 / (W + lam)``.

    ``S`` holds per-row channel sums ``(n, K)`` and ``W`` per-row weights.
    Returns ``(feature, threshold, missing_left, delta)`` where ``delta`` is the
    score gain over the parent; ``feature == -1`` when no split beats
    ``min_gain``. ``gorder``/``scratch`` are as in ``sort_node_rows_presorted``.
    """
    m = rows.size
    K = S.shape[1]
    p = X.shape[1]
    tot = np.zeros(K)
    wt = 0.0
    for a in range(m):
        i = rows[a]
        for k in range(K):
            tot[k] += S[i, k]
        wt += W[i]
    c = np.zeros(K)
    if lam == 0.0 and wt > 0.0:
        # gains are invariant to shifting S by c*W when lam == 0; centering
        # keeps the score differences free of cancellation
        for k in range(K):
            c[k] = tot[k] / wt
    s = np.empty((m, K))
    w = np.empty(m)
    ss = 0.0
    for a in range(m):
        i = rows[a]
        w[a] = W[i]
        for k in range(K):
            s[a, k] = S[i, k] - c[k] * W[i]
            ss += s[a, k] * s[a, k]
    T = np.zeros(K)
    for a in range(m):
        for k in range(K):
            T[k] += s[a, k]
    parent = 0.0
    if wt + lam > 0.0:
        for k in range(K):
            parent += T[k] * T[k] / (wt + lam)
    mean_w = wt / m if m > 0 else 1.0
    if mean_w <= 0.0:
        mean_w = 1.0
    tol = 1e-11 * ss / mean_w + 1e-300

    best_f = -1
    best_thr = 0.0
    best_ml = True
    best_delta = 0.0
    L = np.zeros(K)
    Mv = np.zeros(K)
    orders, n_obs = sort_node_rows_presorted(X, rows, gorder, scratch)
    for f in range(p):
        nob = n_obs[f]
        if nob < 2:
            continue
        for k in range(K):
            Mv[k] = 0.0
        mw = 0.0
        mc = m - nob
        if mc > 0:
            for a in range(m):
                if np.isnan(X[rows[a], f]):
                    for k in range(K):
                        Mv[k] += s[a, k]
                    mw += w[a]
        n_dirs = 2 if mc > 0 else 1
        for di in range(n_dirs):
            ml = di == 0
            if ml:
                for k in range(K):
                    L[k] = Mv[k]
                lw = mw
                lc = mc
            else:
                for k in range(K):
                    L[k] = 0.0
                lw = 0.0
                lc = 0
            for j in range(nob - 1):
                a = orders[f, j]
                for k in range(K):
                    L[k] += s[a, k]
                lw += w[a]
                lc += 1
                x0 = X[rows[a], f]
                x1 = X[rows[orders[f, j + 1]], f]
                if x0 == x1:
                    continue
                rc = m - lc
                rw = wt - lw
                if lc < min_leaf or rc < min_leaf:
                    continue
                if lw < min_weight or rw < min_weight:
                    continue
                score = 0.0
                for k in range(K):
                    r = T[k] - L[k]
                    score += L[k] * L[k] / (lw + lam) + r * r / (rw + lam)
                delta = score - parent
                if delta <= min_gain + tol:
                    continue
                thr = 0.5 * (x0 + x1)
                if thr >= x1:
                    thr = x0
                if best_f < 0 or delta > best_delta + tol:
                    take = True
                elif delta >= best_delta - tol:
                    take = _precedes(f, thr, ml, best_f, best_thr, best_ml)
                else:
                    take = False
                if take:
                    best_f = f
                    best_thr = thr
                    best_ml = ml
                    best_delta = delta
    return best_f, best_thr, best_ml, best_delta


@njit(cache=True)
def _partition(perm, start, end, X, f, thr, ml, buf):
    nl = 0
    nr = 0
    for a in range(start, end):
        i = perm[a]
        if _goes_left(X[i, f], thr, ml):
            perm[start + nl] = i
            nl += 1
        else:
            buf[nr] = i
            nr += 1
    for b in range(nr):
        perm[start + nl + b] = buf[b]
    return start + nl


@njit(cache=True)
def grow(X, S, W, lam, min_leaf, min_weight, max_depth, min_gain, gorder):
    """Depth-first greedy growth. Node 0 is the root; children follow parents.

    Returns node arrays plus the row permutation and each node's
    ``[start, end)`` segment of it, so callers can compute node statistics.
    """
    n = X.shape[0]
    cap = 2 * n + 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    threshold = np.zeros(cap)
    mleft = np.ones(cap, dtype=np.bool_)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    start = np.zeros(cap, dtype=np.int64)
    end = np.zeros(cap, dtype=np.int64)
    depth = np.zeros(cap, dtype=np.int64)
    delta = np.zeros(cap)
    perm = np.arange(n)
    buf = np.empty(n, dtype=np.int64)
    scratch = np.full(n, -1, dtype=np.int64)
    start[0] = 0
    end[0] = n
    n_nodes = 1
    stack = np.empty(cap, dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        t = stack[sp]
        m = end[t] - start[t]
        if depth[t] >= max_depth or m < 2 * min_leaf:
            continue
        rows = perm[start[t]:end[t]].copy()
        f, thr, ml, d = best_split(X, rows, S, W, lam, min_leaf, min_weight, min_gain, gorder, scratch)
        if f < 0:
            continue
        mid = _partition(perm, start[t], end[t], X, f, thr, ml, buf)
        feature[t] = f
        threshold[t] = thr
        mleft[t] = ml
        delta[t] = d
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[t] = lc
        right[t] = rc
        start[lc] = start[t]
        end[lc] = mid
        start[rc] = mid
        end[rc] = end[t]
        depth[lc] = depth[t] + 1
        depth[rc] = depth[t] + 1
        # push right first so the left subtree is numbered first
        stack[sp] = rc
        sp += 1
        stack[sp] = lc
        sp += 1
    k = n_nodes
    return (feature[:k].copy(), threshold[:k].copy(), mleft[:k].copy(), left[:k].copy(),
            right[:k].copy(), start[:k].copy(), end[:k].copy(), delta[:k].copy(), perm)


@njit(cache=True)
def segment_moments(perm, start, end, v):
    """Mean and mean squared deviation of ``v`` over each node segment."""
    k = start.size
    mean = np.zeros(k)
    msd = np.zeros(k)
    for t in range(k):
        m = end[t] - start[t]
        if m == 0:
            continue
        acc = 0.0
        for a in range(start[t], end[t]):
            acc += v[perm[a]]
        mu = acc / m
        acc2 = 0.0
        for a in range(start[t], end[t]):
            d = v[perm[a]] - mu
            acc2 += d * d
        mean[t] = mu
        msd[t] = acc2 / m
    return mean, msd


@njit(cache=True)
def segment_sums(perm, start, end, v):
    k = start.size
    out = np.zeros(k)
    for t in range(k):
        acc = 0.0
        for a in range(start[t], end[t]):
            acc += v[perm[a]]
        out[t] = acc
    return out


# ---------------------------------------------------------------------------
# local search over heap-indexed trees (children of t are 2t+1, 2t+2)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _heap_depth(t):
    d = 0
    t += 1
    while t > 1:
        t >>= 1
        d += 1
    return d


@njit(cache=True)
def _leaf_err(is_clf, cnt, s1, s2):
    # classification: s1 = class-1 count; regression: s1 = sum, s2 = sum of squares
    if cnt <= 0:
        return 0.0
    if is_clf:
        c0 = cnt - s1
        return c0 if c0 < s1 else s1
    e = s2 - s1 * s1 / cnt
    return e if e > 0.0 else 0.0


@njit(cache=True)
def _route_down(hf, ht, hm, X, r, t, d, path, leaf_of):
    while hf[t] >= 0:
        if _goes_left(X[r, hf[t]], ht[t], hm[t]):
            t = 2 * t + 1
        else:
            t = 2 * t + 2
        d += 1
        path[r, d] = t
    leaf_of[r] = t
    return t


@njit(cache=True)
def _leaf_below(hf, ht, hm, X, r, t):
    while hf[t] >= 0:
        if _goes_left(X[r, hf[t]], ht[t], hm[t]):
            t = 2 * t + 1
        else:
            t = 2 * t + 2
    return t


@njit(cache=True)
def _collect_subtree(hf, t, out):
    """Fill ``out`` with the nodes of the subtree at ``t``; returns count."""
    k = 0
    out[k] = t
    k += 1
    a = 0
    while a < k:
        u = out[a]
        a += 1
        if hf[u] >= 0:
            out[k] = 2 * u + 1
            out[k + 1] = 2 * u + 2
            k += 2
    return k


@njit(cache=True)
def sort_node_rows(X, rows):
    """Per feature, the local indices of the non-missing rows sorted by value."""
    m = rows.size
    p = X.shape[1]
    orders = np.empty((p, m), dtype=np.int64)
    n_obs = np.zeros(p, dtype=np.int64)
    xv = np.empty(m)
    for f in range(p):
        k = 0
        for a in range(m):
            x = X[rows[a], f]
            if not np.isnan(x):
                xv[k] = x
                orders[f, k] = a
                k += 1
        n_obs[f] = k
        if k > 1:
            srt = np.argsort(xv[:k], kind="mergesort")
            orders[f, :k] = orders[f, :k][srt]
    return orders, n_obs


@njit(cache=True)
def sort_node_rows_presorted(X, rows, gorder, local_idx):
    """Like ``sort_node_rows`` but filters a global per-feature order.

    ``gorder[f]`` sorts all rows by feature ``f`` with missing values last;
    ``local_idx`` is scratch of length n filled with -1, restored on exit.
    Filtering costs O(n) per feature, so it only pays off for large nodes.
    """
    m = rows.size
    n = X.shape[0]
    if m * 8 < n:
        return sort_node_rows(X, rows)
    p = X.shape[1]
    orders = np.empty((p, m), dtype=np.int64)
    n_obs = np.zeros(p, dtype=np.int64)
    for a in range(m):
        local_idx[rows[a]] = a
    for f in range(p):
        k = 0
        for b in range(n):
            r = gorder[f, b]
            if np.isnan(X[r, f]):
                break
            a = local_idx[r]
            if a >= 0:
                orders[f, k] = a
                k += 1
        n_obs[f] = k
    for a in range(m):
        local_idx[rows[a]] = -1
    return orders, n_obs


@njit(cache=True)
def scan_sorted(X, y, is_clf, rows, orders, n_obs, lid_l, lid_r, n_l, n_r, min_leaf):
    """Best split at a node whose left/right subtrees stay fixed.

    ``lid_l[a]`` / ``lid_r[a]`` give the local leaf that row ``rows[a]`` reaches
    if sent into the left / right subtree. Minimizes total leaf error subject
    to every leaf holding at least ``min_leaf`` rows. Besides the midpoints
    between observed values, a split may send all observed rows one way and
    the missing rows the other. Returns
    ``(error, feature, threshold, missing_left)``; feature -1 if infeasible.
    """
    m = rows.size
    p = X.shape[1]
    nleaf = n_l + n_r
    cnt = np.zeros(nleaf)
    s1 = np.zeros(nleaf)
    s2 = np.zeros(nleaf)
    yv = np.empty(m)
    for a in range(m):
        yv[a] = y[rows[a]]
    best_f = -1
    best_thr = 0.0
    best_ml = True
    best_err = np.inf
    scale = 0.0
    if not is_clf:
        for a in range(m):
            scale += yv[a] * yv[a]
    tol = 1e-12 * (scale + 1.0)
    for f in range(p):
        nob = n_obs[f]
        if nob < 1:
            continue
        mc = m - nob
        n_dirs = 2 if mc > 0 else 1
        for di in range(n_dirs):
            ml = di == 0
            for q in range(nleaf):
                cnt[q] = 0.0
                s1[q] = 0.0
                s2[q] = 0.0
            for a in range(m):
                if ml and np.isnan(X[rows[a], f]):
                    q = lid_l[a]
                else:
                    q = n_l + lid_r[a]
                cnt[q] += 1.0
                s1[q] += yv[a]
                s2[q] += yv[a] * yv[a]
            err = 0.0
            deficient = 0
            for q in range(nleaf):
                err += _leaf_err(is_clf, cnt[q], s1[q], s2[q])
                if cnt[q] < min_leaf:
                    deficient += 1
            # position j: the first j + 1 observed rows sit on the left; the two
            # end positions separate observed from missing rows
            for j in range(-1, nob):
                if j >= 0:
                    a = orders[f, j]
                    yy = yv[a]
                    q = n_l + lid_r[a]
                    err -= _leaf_err(is_clf, cnt[q], s1[q], s2[q])
                    if cnt[q] >= min_leaf and cnt[q] - 1.0 < min_leaf:
                        deficient += 1
                    cnt[q] -= 1.0
                    s1[q] -= yy
                    s2[q] -= yy * yy
                    err += _leaf_err(is_clf, cnt[q], s1[q], s2[q])
                    q = lid_l[a]
                    err -= _leaf_err(is_clf, cnt[q], s1[q], s2[q])
                    if cnt[q] < min_leaf and cnt[q] + 1.0 >= min_leaf:
                        deficient -= 1
                    cnt[q] += 1.0
                    s1[q] += yy
                    s2[q] += yy * yy
                    err += _leaf_err(is_clf, cnt[q], s1[q], s2[q])
                if deficient > 0:
                    continue
                if j == -1:
                    if not (ml and mc > 0):
                        continue
                    thr = np.nextafter(X[rows[orders[f, 0]], f], -np.inf)
                elif j == nob - 1:
                    if ml or mc == 0:
                        continue
                    thr = X[rows[orders[f, j]], f]
                else:
                    x0 = X[rows[orders[f, j]], f]
                    x1 = X[rows[orders[f, j + 1]], f]
                    if x0 == x1:
                        continue
                    thr = 0.5 * (x0 + x1)
                    if thr >= x1:
                        thr = x0
                if best_f < 0 or err < best_err - tol:
                    take = True
                elif err <= best_err + tol:
                    take = _precedes(f, thr, ml, best_f, best_thr, best_ml)
                else:
                    take = False
                if take:
                    best_f = f
                    best_thr = thr
                    best_ml = ml
                    best_err = err
    if best_f >= 0 and not is_clf:
        # recompute exactly; the running sums drift slightly
        for q in range(nleaf):
            cnt[q] = 0.0
            s1[q] = 0.0
        for a in range(m):
            if _goes_left(X[rows[a], best_f], best_thr, best_ml):
                q = lid_l[a]
            else:
                q = n_l + lid_r[a]
            cnt[q] += 1.0
            s1[q] += yv[a]
        best_err = 0.0
        for a in range(m):
            if _goes_left(X[rows[a], best_f], best_thr, best_ml):
                q = lid_l[a]
            else:
                q = n_l + lid_r[a]
            dv = yv[a] - s1[q] / cnt[q]
            best_err += dv * dv
    return best_err, best_f, best_thr, best_ml


@njit(cache=True)
def scan_reoptimize(X, y, is_clf, rows, lid_l, lid_r, n_l, n_r, min_leaf):
    orders, n_obs = sort_node_rows(X, rows)
    return scan_sorted(X, y, is_clf, rows, orders, n_obs, lid_l, lid_r, n_l, n_r, min_leaf)


@njit(cache=True)
def _rows_error(y, is_clf, rows, m):
    if is_clf:
        c1 = 0.0
        for a in range(m):
            c1 += y[rows[a]]
        return min(c1, m - c1)
    s = 0.0
    for a in range(m):
        s += y[rows[a]]
    mu = s / m
    e = 0.0
    for a in range(m):
        d = y[rows[a]] - mu
        e += d * d
    return e


@njit(cache=True)
def _two_side_stumps(X, y, is_clf, rows, orders, n_obs, miss, miss_ptr, side, c_t, s1_t, s2_t,
                     min_leaf, tol, out_e, out_f, out_t, out_m):
    """Best stump on each side (``side == 0`` / ``1``) of a root split in one pass.

    Same candidate set as ``scan_sorted``. ``miss[miss_ptr[g]:miss_ptr[g + 1]]``
    lists the local rows missing feature ``g``; ``c_t``/``s1_t``/``s2_t`` hold
    per-side totals. Results go to ``out_*[side]``; feature -1 if infeasible.
    """
    p = X.shape[1]
    cm = np.zeros(2)
    s1m = np.zeros(2)
    s2m = np.zeros(2)
    cl = np.zeros(2)
    sl1 = np.zeros(2)
    sl2 = np.zeros(2)
    prev = np.zeros(2)
    first = np.ones(2, dtype=np.bool_)
    for sd in range(2):
        out_e[sd] = np.inf
        out_f[sd] = -1
        out_t[sd] = 0.0
        out_m[sd] = True
    for g in range(p):
        for sd in range(2):
            cm[sd] = 0.0
            s1m[sd] = 0.0
            s2m[sd] = 0.0
        for k in range(miss_ptr[g], miss_ptr[g + 1]):
            a = miss[k]
            sd = side[a]
            yy = y[rows[a]]
            cm[sd] += 1.0
            s1m[sd] += yy
            s2m[sd] += yy * yy
        for di in range(2):
            ml = di == 0
            if not ml and cm[0] == 0.0 and cm[1] == 0.0:
                break
            for sd in range(2):
                if ml:
                    cl[sd] = cm[sd]
                    sl1[sd] = s1m[sd]
                    sl2[sd] = s2m[sd]
                else:
                    cl[sd] = 0.0
                    sl1[sd] = 0.0
                    sl2[sd] = 0.0
                first[sd] = True
            for j in range(n_obs[g]):
                a = orders[g, j]
                sd = side[a]
                xv = X[rows[a], g]
                thr = 0.0
                ok = False
                if first[sd]:
                    if ml and cm[sd] > 0.0:
                        thr = np.nextafter(xv, -np.inf)
                        ok = True
                elif xv != prev[sd]:
                    thr = 0.5 * (prev[sd] + xv)
                    if thr >= xv:
                        thr = prev[sd]
                    ok = True
                # ml=False duplicates ml=True on a side without missing rows
                if ok and (ml or cm[sd] > 0.0) and cl[sd] >= min_leaf and c_t[sd] - cl[sd] >= min_leaf:
                    e = _leaf_err(is_clf, cl[sd], sl1[sd], sl2[sd]) + _leaf_err(
                        is_clf, c_t[sd] - cl[sd], s1_t[sd] - sl1[sd], s2_t[sd] - sl2[sd])
                    if e < out_e[sd] - tol or (e <= out_e[sd] + tol and _precedes(
                            g, thr, ml, out_f[sd], out_t[sd], out_m[sd])):
                        out_e[sd] = e
                        out_f[sd] = g
                        out_t[sd] = thr
                        out_m[sd] = ml
                yy = y[rows[a]]
                cl[sd] += 1.0
                sl1[sd] += yy
                sl2[sd] += yy * yy
                prev[sd] = xv
                first[sd] = False
            if not ml:
                # all observed rows left, the missing ones right
                for sd in range(2):
                    if cm[sd] > 0.0 and not first[sd] and cl[sd] >= min_leaf \
                            and c_t[sd] - cl[sd] >= min_leaf:
                        e = _leaf_err(is_clf, cl[sd], sl1[sd], sl2[sd]) + _leaf_err(
                            is_clf, c_t[sd] - cl[sd], s1_t[sd] - sl1[sd], s2_t[sd] - sl2[sd])
                        if e < out_e[sd] - tol or (e <= out_e[sd] + tol and _precedes(
                                g, prev[sd], ml, out_f[sd], out_t[sd], out_m[sd])):
                            out_e[sd] = e
                            out_f[sd] = g
                            out_t[sd] = prev[sd]
                            out_m[sd] = ml


@njit(cache=True)
def _side_error(y, is_clf, rows, side, s):
    c = 0.0
    s1 = 0.0
    for a in range(rows.size):
        if side[a] == s:
            c += 1.0
            s1 += y[rows[a]]
    if c == 0.0:
        return 0.0
    if is_clf:
        return min(s1, c - s1)
    mu = s1 / c
    e = 0.0
    for a in range(rows.size):
        if side[a] == s:
            d = y[rows[a]] - mu
            e += d * d
    return e


@njit(cache=True)
def best_depth2(X, y, is_clf, rows, orders, n_obs, min_leaf, base_err, cp):
    """Exhaustive best subtree of depth <= 2 on ``rows``.

    The objective ``error / base_err + cp * splits`` is additive over the two
    root subtrees, so every root split pairs with the best leaf-or-stump on
    each side. Returns ``(objective, root, left, right)`` where each part is
    ``(feature, threshold, missing_left)`` and a child feature of -1 is a leaf;
    a root feature of -1 means the single leaf wins.
    """
    m = rows.size
    p = X.shape[1]
    best = _rows_error(y, is_clf, rows, m) / base_err
    bf = -1
    bt = 0.0
    bm = True
    lf = -1
    lt = 0.0
    lm = True
    rf = -1
    rt = 0.0
    rm = True
    tol = 1e-12 * (1.0 + best)
    side = np.zeros(m, dtype=np.int64)
    miss_ptr = np.zeros(p + 1, dtype=np.int64)
    for g in range(p):
        miss_ptr[g + 1] = miss_ptr[g] + (m - n_obs[g])
    miss = np.empty(miss_ptr[p], dtype=np.int64)
    for g in range(p):
        k = miss_ptr[g]
        for a in range(m):
            if np.isnan(X[rows[a], g]):
                miss[k] = a
                k += 1
    c_t = np.zeros(2)
    s1_t = np.zeros(2)
    s2_t = np.zeros(2)
    out_e = np.zeros(2)
    out_f = np.zeros(2, dtype=np.int64)
    out_t = np.zeros(2)
    out_m = np.zeros(2, dtype=np.bool_)
    ya = 0.0
    yb = 0.0
    for a in range(m):
        ya += y[rows[a]]
        yb += y[rows[a]] * y[rows[a]]
    for f in range(p):
        nob = n_obs[f]
        if nob < 1:
            continue
        mc = m - nob
        n_dirs = 2 if mc > 0 else 1
        for di in range(n_dirs):
            ml = di == 0
            for a in range(m):
                side[a] = 1
            c_t[0] = 0.0
            s1_t[0] = 0.0
            s2_t[0] = 0.0
            if ml:
                for k in range(miss_ptr[f], miss_ptr[f + 1]):
                    a = miss[k]
                    side[a] = 0
                    yy = y[rows[a]]
                    c_t[0] += 1.0
                    s1_t[0] += yy
                    s2_t[0] += yy * yy
            for j in range(-1, nob):
                if j >= 0:
                    a = orders[f, j]
                    side[a] = 0
                    yy = y[rows[a]]
                    c_t[0] += 1.0
                    s1_t[0] += yy
                    s2_t[0] += yy * yy
                if j == -1:
                    if not (ml and mc > 0):
                        continue
                    thr = np.nextafter(X[rows[orders[f, 0]], f], -np.inf)
                elif j == nob - 1:
                    if ml or mc == 0:
                        continue
                    thr = X[rows[orders[f, j]], f]
                else:
                    x0 = X[rows[orders[f, j]], f]
                    x1 = X[rows[orders[f, j + 1]], f]
                    if x0 == x1:
                        continue
                    thr = 0.5 * (x0 + x1)
                    if thr >= x1:
                        thr = x0
                c_t[1] = m - c_t[0]
                s1_t[1] = ya - s1_t[0]
                s2_t[1] = yb - s2_t[0]
                if c_t[0] < min_leaf or c_t[1] < min_leaf:
                    continue
                leaf0 = _leaf_err(is_clf, c_t[0], s1_t[0], s2_t[0]) / base_err
                leaf1 = _leaf_err(is_clf, c_t[1], s1_t[1], s2_t[1]) / base_err
                # a stump costs cp, so each side is at least min(leaf, cp)
                if cp + min(leaf0, cp) + min(leaf1, cp) >= best - tol:
                    continue
                _two_side_stumps(X, y, is_clf, rows, orders, n_obs, miss, miss_ptr, side,
                                 c_t, s1_t, s2_t, min_leaf, tol * base_err,
                                 out_e, out_f, out_t, out_m)
                total = cp
                o0 = leaf0
                g0 = -1
                if out_f[0] >= 0 and out_e[0] / base_err + cp < leaf0 - tol:
                    o0 = out_e[0] / base_err + cp
                    g0 = out_f[0]
                o1 = leaf1
                g1 = -1
                if out_f[1] >= 0 and out_e[1] / base_err + cp < leaf1 - tol:
                    o1 = out_e[1] / base_err + cp
                    g1 = out_f[1]
                total = cp + o0 + o1
                if total < best - tol:
                    best = total
                    bf = f
                    bt = thr
                    bm = ml
                    lf = g0
                    lt = out_t[0]
                    lm = out_m[0]
                    rf = g1
                    rt = out_t[1]
                    rm = out_m[1]
    if bf >= 0:
        # exact objective of the winner; running sums drift slightly
        for a in range(m):
            r = rows[a]
            if _goes_left(X[r, bf], bt, bm):
                side[a] = 0 if lf < 0 else (1 if _goes_left(X[r, lf], lt, lm) else 2)
            else:
                side[a] = 3 if rf < 0 else (4 if _goes_left(X[r, rf], rt, rm) else 5)
        e = 0.0
        for q in range(6):
            e += _side_error(y, is_clf, rows, side, q)
        best = e / base_err + cp * (1 + (lf >= 0) + (rf >= 0))
    return best, bf, bt, bm, lf, lt, lm, rf, rt, rm


@njit(cache=True)
def _subtree_error(hf, y, is_clf, rows, m, leaf_of, cnt, s1, s2):
    for a in range(m):
        q = leaf_of[rows[a]]
        cnt[q] = 0.0
        s1[q] = 0.0
    for a in range(m):
        r = rows[a]
        q = leaf_of[r]
        cnt[q] += 1.0
        s1[q] += y[r]
    e = 0.0
    for a in range(m):
        r = rows[a]
        q = leaf_of[r]
        if is_clf:
            continue
        d = y[r] - s1[q] / cnt[q]
        e += d * d
    if is_clf:
        for a in range(m):
            q = leaf_of[rows[a]]
            if cnt[q] > 0.0:
                e += _leaf_err(True, cnt[q], s1[q], 0.0)
                cnt[q] = 0.0
    return e


@njit(cache=True)
def _promote_error(hf, ht, hm, X, y, is_clf, rows, m, c, leaf, cnt, s1, sub, min_leaf):
    """Error of the subtree at ``c`` applied to ``rows``; ``inf`` if one of its
    leaves would hold fewer than ``min_leaf`` rows."""
    k = _collect_subtree(hf, c, sub)
    for a in range(k):
        cnt[sub[a]] = 0.0
        s1[sub[a]] = 0.0
    for a in range(m):
        r = rows[a]
        q = _leaf_below(hf, ht, hm, X, r, c)
        leaf[a] = q
        cnt[q] += 1.0
        s1[q] += y[r]
    e = 0.0
    for a in range(k):
        u = sub[a]
        if hf[u] == LEAF:
            if cnt[u] < min_leaf:
                return np.inf
            if is_clf:
                e += _leaf_err(True, cnt[u], s1[u], 0.0)
    if not is_clf:
        for a in range(m):
            q = leaf[a]
            d = y[rows[a]] - s1[q] / cnt[q]
            e += d * d
    return e


@njit(cache=True)
def _promote(hf, ht, hm, t, c, sub):
    """Replace the subtree at ``t`` by a copy of the subtree at its child ``c``."""
    f0 = hf.copy()
    t0 = ht.copy()
    m0 = hm.copy()
    k = _collect_subtree(hf, t, sub)
    for a in range(k):
        hf[sub[a]] = ABSENT
    src = np.empty(hf.size, dtype=np.int64)
    dst = np.empty(hf.size, dtype=np.int64)
    src[0] = c
    dst[0] = t
    top = 1
    while top > 0:
        top -= 1
        u = src[top]
        v = dst[top]
        hf[v] = f0[u]
        ht[v] = t0[u]
        hm[v] = m0[u]
        if f0[u] >= 0:
            src[top] = 2 * u + 1
            dst[top] = 2 * v + 1
            src[top + 1] = 2 * u + 2
            dst[top + 1] = 2 * v + 2
            top += 2


@njit(cache=True)
def tree_objective(hf, ht, hm, X, y, is_clf, cp, base_err):
    nn = hf.size
    n = X.shape[0]
    cnt = np.zeros(nn)
    s1 = np.zeros(nn)
    splits = 0
    for t in range(nn):
        if hf[t] >= 0:
            splits += 1
    leaf = np.empty(n, dtype=np.int64)
    for r in range(n):
        q = _leaf_below(hf, ht, hm, X, r, 0)
        leaf[r] = q
        cnt[q] += 1.0
        s1[q] += y[r]
    e = 0.0
    if is_clf:
        for q in range(nn):
            e += _leaf_err(True, cnt[q], s1[q], 0.0)
    else:
        for r in range(n):
            q = leaf[r]
            d = y[r] - s1[q] / cnt[q]
            e += d * d
    return e / base_err + cp * splits


@njit(cache=True)
def _rows_signature(rows):
    h = np.uint64(rows.size)
    for a in range(rows.size):
        z = np.uint64(rows[a] + 1) * np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(31))) * np.uint64(0xBF58476D1CE4E5B9)
        h += z ^ (z >> np.uint64(29))
    return np.int64(h >> np.uint64(1))


@njit(cache=True)
def _preferred(o, ns, best_obj, best_ns, tol):
    # strictly better, or exactly tied with fewer splits; the pair
    # (objective, splits) falls with every accepted move, so the search ends
    return o < best_obj - tol or (o <= best_obj and ns < best_ns)


@njit(cache=True)
def local_search_kernel(X, y, is_clf, max_depth, cp, min_leaf, base_err,
                        hf, ht, hm, seed, max_passes, trace, gorder, exact2_work,
                        x2_sig, x2_res):
    """Coordinate descent over node moves; mutates the heap tree in place.

    Per visited node the candidate moves are: collapse to a leaf, replace with
    the best stump (if depth allows), re-optimize the node's split with its
    subtrees kept, and replace the node by its left or right subtree. Nodes
    two levels above the depth limit may also be re-solved exactly as the
    best depth-2 subtree when ``(rows * features) ** 2 <= exact2_work``;
    those results are cached per node in ``x2_sig``/``x2_res`` keyed by a
    signature of the node's rows, so the caller can share them between
    restarts with the same depth and cp. Nodes are visited in random order each pass until a
    pass accepts nothing. A node whose rows and subtree are unchanged since a
    visit that found no improving move is skipped, as its options are
    identical. Returns ``(objective, n_accepted_moves)``; the objective after
    each accepted move is written into ``trace`` while it has room.
    """
    np.random.seed(seed)
    n = X.shape[0]
    nn = hf.size
    path = np.full((n, max_depth + 1), -1, dtype=np.int64)
    leaf_of = np.empty(n, dtype=np.int64)
    for r in range(n):
        path[r, 0] = 0
        _route_down(hf, ht, hm, X, r, 0, 0, path, leaf_of)
    J = tree_objective(hf, ht, hm, X, y, is_clf, cp, base_err)
    tol = 1e-12 * (1.0 + abs(J))
    cnt = np.zeros(nn)
    s1 = np.zeros(nn)
    s2 = np.zeros(nn)
    rows = np.empty(n, dtype=np.int64)
    sub = np.empty(nn, dtype=np.int64)
    local_id = np.full(nn, -1, dtype=np.int64)
    zeros_m = np.zeros(n, dtype=np.int64)
    dirty = np.ones(nn, dtype=np.bool_)
    scratch = np.full(n, -1, dtype=np.int64)
    sub2 = np.empty(nn, dtype=np.int64)
    leaf_tmp = np.empty(n, dtype=np.int64)
    f0, f1, f2 = -1, -1, -1
    t0, t1, t2 = 0.0, 0.0, 0.0
    m0, m1, m2 = True, True, True
    n_moves = 0
    for _ in range(max_passes):
        nodes = np.empty(nn, dtype=np.int64)
        k = 0
        for t in range(nn):
            if hf[t] != ABSENT:
                nodes[k] = t
                k += 1
        nodes = nodes[:k]
        np.random.shuffle(nodes)
        improved = False
        for t in nodes:
            if hf[t] == ABSENT or not dirty[t]:
                continue
            d = _heap_depth(t)
            m = 0
            for r in range(n):
                if path[r, d] == t:
                    rows[m] = r
                    m += 1
            if m == 0:
                dirty[t] = False
                continue
            rws = rows[:m]
            ks = _collect_subtree(hf, t, sub)
            n_splits = 0
            for a in range(ks):
                if hf[sub[a]] >= 0:
                    n_splits += 1
            e_cur = _subtree_error(hf, y, is_clf, rws, m, leaf_of, cnt, s1, s2)
            obj_cur = e_cur / base_err + cp * n_splits
            best_obj = obj_cur
            best_ns = n_splits
            move = 0
            mf = -1
            mthr = 0.0
            mml = True
            if n_splits > 0:
                o = _rows_error(y, is_clf, rws, m) / base_err
                if _preferred(o, 0, best_obj, best_ns, tol):
                    best_obj = o
                    best_ns = 0
                    move = 1
            can_stump = d < max_depth and m >= 2 * min_leaf
            if can_stump or hf[t] >= 0:
                orders, n_obs = sort_node_rows_presorted(X, rws, gorder, scratch)
            else:
                orders = np.empty((0, 0), dtype=np.int64)
                n_obs = np.empty(0, dtype=np.int64)
            if can_stump:
                e, f, thr, ml = scan_sorted(X, y, is_clf, rws, orders, n_obs,
                                            zeros_m[:m], zeros_m[:m], 1, 1, min_leaf)
                if f >= 0:
                    o = e / base_err + cp
                    if _preferred(o, 1, best_obj, best_ns, tol):
                        best_obj = o
                        best_ns = 1
                        move = 2
                        mf = f
                        mthr = thr
                        mml = ml
            p = X.shape[1]
            if can_stump and max_depth - d == 2 and float(m * p) ** 2 <= exact2_work:
                sig = _rows_signature(rws)
                if x2_sig[t] == sig:
                    o2 = x2_res[t, 0]
                    f0, t0, m0 = int(x2_res[t, 1]), x2_res[t, 2], x2_res[t, 3] > 0.5
                    f1, t1, m1 = int(x2_res[t, 4]), x2_res[t, 5], x2_res[t, 6] > 0.5
                    f2, t2, m2 = int(x2_res[t, 7]), x2_res[t, 8], x2_res[t, 9] > 0.5
                else:
                    o2, f0, t0, m0, f1, t1, m1, f2, t2, m2 = best_depth2(
                        X, y, is_clf, rws, orders, n_obs, min_leaf, base_err, cp)
                    x2_sig[t] = sig
                    x2_res[t, 0] = o2
                    x2_res[t, 1], x2_res[t, 2], x2_res[t, 3] = f0, t0, 1.0 if m0 else 0.0
                    x2_res[t, 4], x2_res[t, 5], x2_res[t, 6] = f1, t1, 1.0 if m1 else 0.0
                    x2_res[t, 7], x2_res[t, 8], x2_res[t, 9] = f2, t2, 1.0 if m2 else 0.0
                ns2 = (f0 >= 0) + (f1 >= 0) + (f2 >= 0)
                if _preferred(o2, ns2, best_obj, best_ns, tol):
                    best_obj = o2
                    best_ns = ns2
                    move = 6
            if hf[t] >= 0:
                # local leaf ids inside each child subtree
                n_l = 0
                kl = _collect_subtree(hf, 2 * t + 1, sub)
                for a in range(kl):
                    if hf[sub[a]] == LEAF:
                        local_id[sub[a]] = n_l
                        n_l += 1
                n_r = 0
                kr = _collect_subtree(hf, 2 * t + 2, sub)
                for a in range(kr):
                    if hf[sub[a]] == LEAF:
                        local_id[sub[a]] = n_r
                        n_r += 1
                lid_l = np.empty(m, dtype=np.int64)
                lid_r = np.empty(m, dtype=np.int64)
                for a in range(m):
                    lid_l[a] = local_id[_leaf_below(hf, ht, hm, X, rws[a], 2 * t + 1)]
                    lid_r[a] = local_id[_leaf_below(hf, ht, hm, X, rws[a], 2 * t + 2)]
                e, f, thr, ml = scan_sorted(X, y, is_clf, rws, orders, n_obs,
                                            lid_l, lid_r, n_l, n_r, min_leaf)
                if f >= 0 and not (f == hf[t] and thr == ht[t] and ml == hm[t]):
                    o = e / base_err + cp * n_splits
                    if _preferred(o, n_splits, best_obj, best_ns, tol):
                        best_obj = o
                        best_ns = n_splits
                        move = 3
                        mf = f
                        mthr = thr
                        mml = ml
            if hf[t] >= 0:
                # replace the node by one of its child subtrees
                for side in range(2):
                    c = 2 * t + 1 + side
                    e = _promote_error(hf, ht, hm, X, y, is_clf, rws, m, c, leaf_tmp,
                                       cnt, s1, sub2, min_leaf)
                    if e == np.inf:
                        continue
                    kc = _collect_subtree(hf, c, sub2)
                    sc = 0
                    for a in range(kc):
                        if hf[sub2[a]] >= 0:
                            sc += 1
                    o = e / base_err + cp * sc
                    if _preferred(o, sc, best_obj, best_ns, tol):
                        best_obj = o
                        best_ns = sc
                        move = 4 + side
            if move == 0:
                dirty[t] = False
                continue
            if move == 1 or move == 2:
                ks = _collect_subtree(hf, t, sub)
                for a in range(1, ks):
                    hf[sub[a]] = ABSENT
                if move == 1:
                    hf[t] = LEAF
                else:
                    hf[t] = mf
                    ht[t] = mthr
                    hm[t] = mml
                    hf[2 * t + 1] = LEAF
                    hf[2 * t + 2] = LEAF
            elif move == 3:
                hf[t] = mf
                ht[t] = mthr
                hm[t] = mml
            elif move == 4 or move == 5:
                _promote(hf, ht, hm, t, 2 * t + 1 + (move - 4), sub)
            else:
                ks = _collect_subtree(hf, t, sub)
                for a in range(ks):
                    hf[sub[a]] = ABSENT
                hf[t] = LEAF
                if f0 >= 0:
                    hf[t] = f0
                    ht[t] = t0
                    hm[t] = m0
                    for c, fc, tc, mc in ((2 * t + 1, f1, t1, m1), (2 * t + 2, f2, t2, m2)):
                        hf[c] = LEAF
                        if fc >= 0:
                            hf[c] = fc
                            ht[c] = tc
                            hm[c] = mc
                            hf[2 * c + 1] = LEAF
                            hf[2 * c + 2] = LEAF
            for a in range(m):
                r = rws[a]
                for dd in range(d + 1, max_depth + 1):
                    path[r, dd] = -1
                _route_down(hf, ht, hm, X, r, t, d, path, leaf_of)
            # the subtree's rows changed and every ancestor's subtree changed
            ks = _collect_subtree(hf, t, sub)
            for a in range(ks):
                dirty[sub[a]] = True
            u = t
            while u > 0:
                u = (u - 1) // 2
                dirty[u] = True
            J += best_obj - obj_cur
            if n_moves < trace.size:
                trace[n_moves] = J
            n_moves += 1
            improved = True
        if not improved:
            break
    return J, n_moves


@njit(cache=True)
def random_heap_tree(X, max_depth, min_leaf, split_prob, seed):
    """Random valid tree: each node splits with ``split_prob`` (root always) on a
    random feature at a uniform threshold within its rows' range; splits that
    leave a side with fewer than ``min_leaf`` rows become leaves."""
    np.random.seed(seed)
    n, p = X.shape
    nn = 2 ** (max_depth + 1) - 1
    hf = np.full(nn, ABSENT, dtype=np.int64)
    ht = np.zeros(nn)
    hm = np.ones(nn, dtype=np.bool_)
    node_of = np.zeros(n, dtype=np.int64)
    hf[0] = LEAF
    for d in range(max_depth):
        first = 2 ** d - 1
        for t in range(first, 2 * first + 1):
            if hf[t] != LEAF:
                continue
            if t > 0 and np.random.random() >= split_prob:
                continue
            f = np.random.randint(p)
            lo = np.inf
            hi = -np.inf
            for r in range(n):
                if node_of[r] == t:
                    x = X[r, f]
                    if not np.isnan(x):
                        lo = min(lo, x)
                        hi = max(hi, x)
            if not hi > lo:
                continue
            thr = lo + (hi - lo) * np.random.random()
            ml = np.random.random() < 0.5
            nl = 0
            nr = 0
            for r in range(n):
                if node_of[r] == t:
                    if _goes_left(X[r, f], thr, ml):
                        nl += 1
                    else:
                        nr += 1
            if nl < min_leaf or nr < min_leaf:
                continue
            hf[t] = f
            ht[t] = thr
            hm[t] = ml
            hf[2 * t + 1] = LEAF
            hf[2 * t + 2] = LEAF
            for r in range(n):
                if node_of[r] == t:
                    if _goes_left(X[r, f], thr, ml):
                        node_of[r] = 2 * t + 1
                    else:
                        node_of[r] = 2 * t + 2
    return hf, ht, hm


# ---------------------------------------------------------------------------
# path-dependent tree Shapley values
# ---------------------------------------------------------------------------

@njit(cache=True)
def _shapley_weights(dmax):
    # w[d, k] = k! (d-k-1)! / d!
    w = np.zeros((dmax + 1, dmax + 1))
    for d in range(1, dmax + 1):
        for k in range(d):
            v = 1.0 / d
            # k!(d-1-k)!/(d-1)! = 1 / C(d-1, k)
            c = 1.0
            for i in range(k):
                c = c * (d - 1 - i) / (i + 1)
            w[d, k] = v / c
    return w


@njit(cache=True)
def tree_shap_rows(X, leaf_value, path_ptr, path_feature, path_thr, path_ml,
                   path_goes_left, path_frac, scale, phi, base):
    """Accumulate ``scale`` times the Shapley values of one tree into ``phi``.

    Each leaf contributes ``value * prod_j (z_j if j known else q_j)`` to the
    value function, where for every distinct feature ``j`` on the leaf's path
    ``z_j`` says whether the row satisfies all of that feature's conditions
    and ``q_j`` is the product of the matching cover fractions. The Shapley
    value of such a product game follows from the coefficients of
    ``prod_j (q_j + z_j t)``.
    """
    n = X.shape[0]
    n_leaves = leaf_value.size
    dmax = 0
    for l in range(n_leaves):
        dmax = max(dmax, path_ptr[l + 1] - path_ptr[l])
    W = _shapley_weights(dmax + 1)
    feats = np.empty(dmax + 1, dtype=np.int64)
    q = np.empty(dmax + 1)
    z = np.empty(dmax + 1)
    a = np.empty(dmax + 2)
    bq = np.empty(dmax + 2)
    # base value does not depend on the row
    b0 = 0.0
    for l in range(n_leaves):
        prod = 1.0
        for e in range(path_ptr[l], path_ptr[l + 1]):
            prod *= path_frac[e]
        b0 += leaf_value[l] * prod
    base[0] += scale * b0
    for i in range(n):
        for l in range(n_leaves):
            v = leaf_value[l]
            if v == 0.0:
                continue
            d = 0
            for e in range(path_ptr[l], path_ptr[l + 1]):
                f = path_feature[e]
                x = X[i, f]
                follows = _goes_left(x, path_thr[e], path_ml[e]) == path_goes_left[e]
                slot = -1
                for u in range(d):
                    if feats[u] == f:
                        slot = u
                        break
                if slot < 0:
                    slot = d
                    feats[d] = f
                    q[d] = 1.0
                    z[d] = 1.0
                    d += 1
                q[slot] *= path_frac[e]
                if not follows:
                    z[slot] = 0.0
            if d == 0:
                continue
            # coefficients of prod (q_j + z_j t)
            a[0] = 1.0
            for k in range(1, d + 1):
                a[k] = 0.0
            for u in range(d):
                for k in range(u + 1, 0, -1):
                    a[k] = a[k] * q[u] + a[k - 1] * z[u]
                a[0] = a[0] * q[u]
            for u in range(d):
                if z[u] == q[u]:
                    continue
                # quotient by (q_u + z_u t), degree d-1
                if z[u] == 0.0:
                    for k in range(d):
                        bq[k] = a[k] / q[u]
                else:
                    bq[d - 1] = a[d]
                    for k in range(d - 1, 0, -1):
                        bq[k - 1] = a[k] - q[u] * bq[k]
                s = 0.0
                for k in range(d):
                    s += bq[k] * W[d, k]
                phi[i, feats[u]] += scale * v * (z[u] - q[u]) * s


@njit(cache=True)
def node_path_errors(feature, threshold, missing_left, left, right, value, is_clf, X, y):
    """Per node, the summed error of the rows passing through it if that node
    predicted its own ``value`` (squared error, or 0/1 loss on the label)."""
    out = np.zeros(feature.size)
    for i in range(X.shape[0]):
        t = 0
        while True:
            v = value[t]
            if is_clf:
                lab = 1.0 if v > 0.5 else 0.0
                if lab != y[i]:
                    out[t] += 1.0
            else:
                d = y[i] - v
                out[t] += d * d
            if feature[t] < 0:
                break
            if _goes_left(X[i, feature[t]], threshold[t], missing_left[t]):
                t = left[t]
            else:
                t = right[t]
    return out


def presort(X):
    """Per-feature row order with missing values last, shape ``(p, n)``."""
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
