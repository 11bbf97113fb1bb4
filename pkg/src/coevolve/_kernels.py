"""Compiled inner loops for the solver scaffolds."""
from __future__ import annotations

import numpy as np
from numba import njit

IMPROVE_EPS = 1e-10


@njit(cache=True)
def closed_length(D, tour):
    n = tour.shape[0]
    s = 0.0
    for i in range(n):
        s += D[tour[i], tour[(i + 1) % n]]
    return s


@njit(cache=True)
def nearest_neighbor_tour(D, start):
    n = D.shape[0]
    tour = np.empty(n, dtype=np.int64)
    visited = np.zeros(n, dtype=np.bool_)
    cur = start
    tour[0] = cur
    visited[cur] = True
    for k in range(1, n):
        best = -1
        bd = np.inf
        for j in range(n):
            if not visited[j] and D[cur, j] < bd:
                bd = D[cur, j]
                best = j
        tour[k] = best
        visited[best] = True
        cur = best
    return tour


@njit(cache=True)
def held_karp_dp(D):
    n = D.shape[0]
    m = n - 1
    full = 1 << m
    INF = np.inf
    dp = np.full((full, m), INF)
    parent = np.full((full, m), -1, dtype=np.int64)
    for j in range(m):
        dp[1 << j, j] = D[0, j + 1]
    for mask in range(1, full):
        for j in range(m):
            if not (mask >> j) & 1:
                continue
            cur = dp[mask, j]
            if cur == INF:
                continue
            for k in range(m):
                if (mask >> k) & 1:
                    continue
                nm = mask | (1 << k)
                v = cur + D[j + 1, k + 1]
                if v < dp[nm, k]:
                    dp[nm, k] = v
                    parent[nm, k] = j
    last = full - 1
    best = INF
    bj = 0
    for j in range(m):
        v = dp[last, j] + D[j + 1, 0]
        if v < best:
            best = v
            bj = j
    tour = np.empty(n, dtype=np.int64)
    tour[0] = 0
    mask = last
    j = bj
    for idx in range(n - 1, 0, -1):
        tour[idx] = j + 1
        pj = parent[mask, j]
        mask ^= 1 << j
        j = pj
    return tour


# --------------------------------------------------------------------------- local search


@njit(cache=True, inline="always")
def _nx(i, n):
    i += 1
    return 0 if i == n else i


@njit(cache=True, inline="always")
def _pv(i, n):
    return n - 1 if i == 0 else i - 1


@njit(cache=True, inline="always")
def _off(p, base, n):
    d = p - base
    return d + n if d < 0 else d


@njit(cache=True)
def _reverse(tour, pos, i, j):
    """Reverse tour positions i..j (cyclic, inclusive); flips the shorter side."""
    n = tour.shape[0]
    length = _off(j, i, n) + 1
    if 2 * length > n:
        i, j = _nx(j, n), _pv(i, n)
        length = n - length
    for _ in range(length // 2):
        a = tour[i]
        b = tour[j]
        tour[i] = b
        pos[b] = i
        tour[j] = a
        pos[a] = j
        i = _nx(i, n)
        j = _pv(j, n)


@njit(cache=True)
def _push(queue, inq, head_tail, v):
    if not inq[v]:
        n = queue.shape[0]
        queue[head_tail[1]] = v
        head_tail[1] = _nx(head_tail[1], n)
        head_tail[2] += 1
        inq[v] = True


@njit(cache=True)
def _try_two_opt(D, A, pruned, nbrs, tour, pos, a, out):
    n = tour.shape[0]
    pa = pos[a]
    # successor direction: edges (a, b) and (c, d) -> (a, c) and (b, d)
    b = tour[_nx(pa, n)]
    dab = A[a, b]
    for t in range(nbrs.shape[1]):
        c = nbrs[a, t]
        gac = dab - A[a, c]
        if gac <= IMPROVE_EPS:
            # neighbours are sorted by distance but penalties can reorder them
            if pruned:
                break
            continue
        pc = pos[c]
        d = tour[_nx(pc, n)]
        if c == b or d == a:
            continue
        gain = gac + A[c, d] - A[b, d]
        if gain > IMPROVE_EPS:
            out[0] = D[a, b] + D[c, d] - D[a, c] - D[b, d]
            out[1] = b
            out[2] = c
            out[3] = d
            _reverse(tour, pos, _nx(pa, n), pc)
            return True
    # predecessor direction: edges (b, a) and (d, c) -> (c, a) and (d, b)
    b = tour[_pv(pa, n)]
    dab = A[b, a]
    for t in range(nbrs.shape[1]):
        c = nbrs[a, t]
        gac = dab - A[a, c]
        if gac <= IMPROVE_EPS:
            if pruned:
                break
            continue
        pc = pos[c]
        d = tour[_pv(pc, n)]
        if c == b or d == a:
            continue
        gain = gac + A[d, c] - A[b, d]
        if gain > IMPROVE_EPS:
            out[0] = D[b, a] + D[d, c] - D[a, c] - D[b, d]
            out[1] = b
            out[2] = c
            out[3] = d
            _reverse(tour, pos, pc, _pv(pa, n))
            return True
    return False


@njit(cache=True)
def _move_segment(tour, pos, s_pos, seg_len, u, reverse_seg, buf):
    """Move the segment starting at position s_pos between u and succ(u)."""
    n = tour.shape[0]
    x_pos = (s_pos + seg_len) % n
    k = 0
    # x .. u
    p = x_pos
    while True:
        buf[k] = tour[p]
        k += 1
        if tour[p] == u:
            break
        p = _nx(p, n)
    # segment
    for t in range(seg_len):
        if reverse_seg:
            buf[k] = tour[(s_pos + seg_len - 1 - t) % n]
        else:
            buf[k] = tour[(s_pos + t) % n]
        k += 1
    # succ(u) .. pred(s)
    p = _nx(p, n)
    while k < n:
        buf[k] = tour[p]
        k += 1
        p = _nx(p, n)
    for t in range(n):
        tour[t] = buf[t]
        pos[buf[t]] = t


@njit(cache=True)
def _try_or_opt(D, A, nbrs, tour, pos, a, out, buf):
    n = tour.shape[0]
    ps = pos[a]
    for seg_len in range(1, 4):
        if n < seg_len + 3:
            break
        s = a
        e = tour[(ps + seg_len - 1) % n]
        p = tour[_pv(ps, n)]
        x = tour[(ps + seg_len) % n]
        remove = A[p, s] + A[e, x] - A[p, x]
        for end in range(2):
            anchor = s if end == 0 else e
            for t in range(nbrs.shape[1]):
                c = nbrs[anchor, t]
                # segment membership test via positions
                pc = pos[c]
                if _off(pc, ps, n) < seg_len:
                    continue
                for side in range(2):
                    if side == 0:
                        u = c
                        v = tour[_nx(pc, n)]
                    else:
                        v = c
                        u = tour[_pv(pc, n)]
                    if _off(pos[v], ps, n) < seg_len or _off(pos[u], ps, n) < seg_len:
                        continue
                    base = A[u, v]
                    fwd = A[u, s] + A[e, v] - base
                    rev = A[u, e] + A[s, v] - base
                    use_rev = rev < fwd
                    add = rev if use_rev else fwd
                    if remove - add > IMPROVE_EPS:
                        raw_remove = D[p, s] + D[e, x] - D[p, x]
                        if use_rev:
                            raw_add = D[u, e] + D[s, v] - D[u, v]
                        else:
                            raw_add = D[u, s] + D[e, v] - D[u, v]
                        out[0] = raw_remove - raw_add
                        out[1] = p
                        out[2] = x
                        out[3] = u
                        out[4] = v
                        out[5] = e
                        _move_segment(tour, pos, ps, seg_len, u, use_rev, buf)
                        return True
    return False


@njit(cache=True)
def _local_search(D, A, pruned, nbrs, tour, pos, queue, inq, head_tail, budget, steps, cur_raw, buf):
    out = np.zeros(6)
    n = tour.shape[0]
    while head_tail[2] > 0 and steps < budget:
        a = queue[head_tail[0]]
        head_tail[0] = _nx(head_tail[0], n)
        head_tail[2] -= 1
        inq[a] = False
        if _try_two_opt(D, A, pruned, nbrs, tour, pos, a, out):
            cur_raw -= out[0]
            steps += 1
            _push(queue, inq, head_tail, a)
            for k in range(1, 4):
                _push(queue, inq, head_tail, int(out[k]))
        elif _try_or_opt(D, A, nbrs, tour, pos, a, out, buf):
            cur_raw -= out[0]
            steps += 1
            _push(queue, inq, head_tail, a)
            for k in range(1, 6):
                _push(queue, inq, head_tail, int(out[k]))
    return steps, cur_raw


@njit(cache=True)
def two_opt_polish(D, tour):
    """Full first-improvement 2-opt under raw distances until no move helps."""
    n = tour.shape[0]
    improved = True
    while improved:
        improved = False
        for i in range(n - 1):
            a = tour[i]
            b = tour[i + 1]
            for j in range(i + 2, n):
                c = tour[j]
                d = tour[(j + 1) % n]
                if d == a:
                    continue
                if D[a, b] + D[c, d] - D[a, c] - D[b, d] > IMPROVE_EPS:
                    lo = i + 1
                    hi = j
                    while lo < hi:
                        t = tour[lo]
                        tour[lo] = tour[hi]
                        tour[hi] = t
                        lo += 1
                        hi -= 1
                    improved = True
                    b = tour[i + 1]
    return tour


@njit(cache=True)
def gls_run(D, guide, nbrs, start_tour, budget, lam_alpha):
    """Guided local search; returns (best tour, trace of best raw cost, steps)."""
    n = D.shape[0]
    tour = start_tour.copy()
    pos = np.empty(n, dtype=np.int64)
    for i in range(n):
        pos[tour[i]] = i
    P = np.zeros((n, n))
    queue = np.empty(n, dtype=np.int64)
    inq = np.zeros(n, dtype=np.bool_)
    head_tail = np.zeros(3, dtype=np.int64)
    buf = np.empty(n, dtype=np.int64)
    for i in range(n):
        _push(queue, inq, head_tail, tour[i])
    trace = np.empty(budget + 2)
    nt = 0
    cur_raw = closed_length(D, tour)
    A = D.copy()  # augmented distances D + lam * P
    steps, cur_raw = _local_search(D, A, True, nbrs, tour, pos, queue, inq, head_tail,
                                   budget, 0, cur_raw, buf)
    best = tour.copy()
    best_raw = closed_length(D, best)
    cur_raw = best_raw
    trace[nt] = best_raw
    nt += 1
    lam = lam_alpha * best_raw / n
    util = guide.copy()  # guide / (1 + P), upper triangle is the one read
    while steps < budget:
        # penalize the tour edge with maximal utility; ties -> smallest (min, max) pair
        bu = -np.inf
        ea = -1
        eb = -1
        for i in range(n):
            a = tour[i]
            b = tour[(i + 1) % n]
            lo = a if a < b else b
            hi = b if a < b else a
            u = util[lo, hi]
            if u > bu or (u == bu and (lo < ea or (lo == ea and hi < eb))):
                bu = u
                ea = lo
                eb = hi
        P[ea, eb] += 1.0
        P[eb, ea] += 1.0
        A[ea, eb] += lam
        A[eb, ea] += lam
        util[ea, eb] = guide[ea, eb] / (1.0 + P[ea, eb])
        steps += 1
        _push(queue, inq, head_tail, ea)
        _push(queue, inq, head_tail, eb)
        steps, cur_raw = _local_search(D, A, False, nbrs, tour, pos, queue, inq, head_tail,
                                       budget, steps, cur_raw, buf)
        if cur_raw < best_raw - 1e-9:
            exact = closed_length(D, tour)
            cur_raw = exact
            if exact < best_raw:
                best_raw = exact
                best[:] = tour
                trace[nt] = best_raw
                nt += 1
    return best, trace[:nt], steps


# --------------------------------------------------------------------------- ant colony


@njit(cache=True)
def _pick(weights, cand, ncand, u, q, q0):
    if q < q0:
        bi = cand[0]
        bw = weights[cand[0]]
        for t in range(1, ncand):
            w = weights[cand[t]]
            if w > bw:
                bw = w
                bi = cand[t]
        return bi
    total = 0.0
    for t in range(ncand):
        total += weights[cand[t]]
    if not (total > 0.0) or not np.isfinite(total):
        return cand[0]
    r = u * total
    acc = 0.0
    for t in range(ncand):
        acc += weights[cand[t]]
        if acc > r:
            return cand[t]
    return cand[ncand - 1]


@njit(cache=True)
def aco_tsp_construct(W, starts, U, Q, q0):
    ants = starts.shape[0]
    n = W.shape[0]
    tours = np.empty((ants, n), dtype=np.int64)
    cand = np.empty(n, dtype=np.int64)
    for k in range(ants):
        visited = np.zeros(n, dtype=np.bool_)
        cur = starts[k]
        tours[k, 0] = cur
        visited[cur] = True
        for step in range(1, n):
            nc = 0
            for j in range(n):
                if not visited[j]:
                    cand[nc] = j
                    nc += 1
            nxt = _pick(W[cur], cand, nc, U[k, step], Q[k, step], q0)
            tours[k, step] = nxt
            visited[nxt] = True
            cur = nxt
    return tours


@njit(cache=True)
def aco_op_construct(W, D, max_len, U, Q, q0):
    """Build depot-first routes; returns (routes padded with -1, lengths)."""
    ants = U.shape[0]
    n = W.shape[0]
    routes = np.full((ants, n), -1, dtype=np.int64)
    lengths = np.zeros(ants)
    cand = np.empty(n, dtype=np.int64)
    for k in range(ants):
        visited = np.zeros(n, dtype=np.bool_)
        visited[0] = True
        routes[k, 0] = 0
        cur = 0
        length = 0.0
        step = 1
        while True:
            nc = 0
            for j in range(1, n):
                if not visited[j] and length + D[cur, j] + D[j, 0] <= max_len:
                    cand[nc] = j
                    nc += 1
            if nc == 0:
                break
            nxt = _pick(W[cur], cand, nc, U[k, step], Q[k, step], q0)
            length += D[cur, nxt]
            routes[k, step] = nxt
            visited[nxt] = True
            cur = nxt
            step += 1
        lengths[k] = length + D[cur, 0]
    return routes, lengths


@njit(cache=True)
def greedy_op_route(D, max_len):
    n = D.shape[0]
    route = np.full(n, -1, dtype=np.int64)
    route[0] = 0
    visited = np.zeros(n, dtype=np.bool_)
    visited[0] = True
    cur = 0
    length = 0.0
    step = 1
    while True:
        best = -1
        bd = np.inf
        for j in range(1, n):
            if not visited[j] and length + D[cur, j] + D[j, 0] <= max_len and D[cur, j] < bd:
                bd = D[cur, j]
                best = j
        if best < 0:
            break
        length += D[cur, best]
        route[step] = best
        visited[best] = True
        cur = best
        step += 1
    return route[:step]


@njit(cache=True)
def deposit(tau, tours, amounts):
    """Symmetric pheromone deposit of amounts[k] on every edge of closed tour k."""
    n = tours.shape[1]
    for k in range(tours.shape[0]):
        amt = amounts[k]
        for i in range(n):
            a = tours[k, i]
            b = tours[k, (i + 1) % n]
            tau[a, b] += amt
            tau[b, a] += amt
