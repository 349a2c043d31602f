"""Numba kernels for the transportation simplex and its sparse/shortlist variants.

All kernels work on a pruned bipartite node set: sources 0..m-1, targets
m..m+n-1 (node t corresponds to target index t-m).  Costs are squared
Euclidean distances between integer pixel coordinates, computed on the fly
from coordinate arrays; everything is exact int64 arithmetic.

Tree representation (one entry per node):
  parent[x]   parent node (-1 at the root, node 0)
  pflow[x]    flow on the basic arc between x and parent[x]
  pcost[x]    cost of that arc
  depth[x]    distance from the root
  pot[x]      node potential; for a source i, u_i = pot[i]; for a target
              node t, v_{t-m} = -pot[t]; reduced cost of arc (i, t) is
              c(i,t) - pot[i] + pot[t]
  first_child/next_sib/prev_sib   doubly linked children lists

The entering-arc rule is the row-minimum rule: scan source rows round-robin
from a persistent resume row; on the first row containing a negative reduced
cost, return that row's minimum.  A Bland fallback (first negative arc in
index order, leaving ties by node index) is available for degenerate runs.
"""

from __future__ import annotations

import numpy as np
from numba import njit

NO_ARC = -1

# solve-loop status codes
OPTIMAL = 0
PIVOT_LIMIT = 1


# ---------------------------------------------------------------------------
# tree construction


@njit(cache=True)
def _build_tree_from_arcs(
    m, n, arc_src, arc_tgt, arc_flow, arc_cost,
    parent, pflow, pcost, depth, pot, first_child, next_sib, prev_sib,
):
    """Populate tree arrays from m+n-1 spanning arcs via BFS from node 0."""
    N = m + n
    n_arcs = arc_src.shape[0]
    deg = np.zeros(N, dtype=np.int64)
    for a in range(n_arcs):
        deg[arc_src[a]] += 1
        deg[arc_tgt[a]] += 1
    off = np.zeros(N + 1, dtype=np.int64)
    for x in range(N):
        off[x + 1] = off[x] + deg[x]
    nbr = np.empty(2 * n_arcs, dtype=np.int64)
    nbr_arc = np.empty(2 * n_arcs, dtype=np.int64)
    fill = off[:N].copy()
    for a in range(n_arcs):
        s = arc_src[a]
        t = arc_tgt[a]
        nbr[fill[s]] = t
        nbr_arc[fill[s]] = a
        fill[s] += 1
        nbr[fill[t]] = s
        nbr_arc[fill[t]] = a
        fill[t] += 1

    for x in range(N):
        parent[x] = -2  # unvisited marker
    queue = np.empty(N, dtype=np.int64)
    queue[0] = 0
    parent[0] = -1
    pflow[0] = 0
    pcost[0] = 0
    depth[0] = 0
    pot[0] = 0
    head = 0
    tail = 1
    while head < tail:
        x = queue[head]
        head += 1
        for e in range(off[x], off[x + 1]):
            y = nbr[e]
            if parent[y] != -2:
                continue
            a = nbr_arc[e]
            parent[y] = x
            pflow[y] = arc_flow[a]
            pcost[y] = arc_cost[a]
            depth[y] = depth[x] + 1
            if y >= m:  # target child of a source: v = c - u, pot = -v
                pot[y] = pot[x] - arc_cost[a]
            else:  # source child of a target: u = c + pot(target)
                pot[y] = pot[x] + arc_cost[a]
            queue[tail] = y
            tail += 1
    if head != N:
        return False  # arcs do not span all nodes

    _rebuild_children(parent, first_child, next_sib, prev_sib)
    return True


@njit(cache=True)
def _rebuild_children(parent, first_child, next_sib, prev_sib):
    N = parent.shape[0]
    for x in range(N):
        first_child[x] = NO_ARC
        next_sib[x] = NO_ARC
        prev_sib[x] = NO_ARC
    # reverse order so children lists end up in ascending node order
    for x in range(N - 1, -1, -1):
        p = parent[x]
        if p < 0:
            continue
        head = first_child[p]
        next_sib[x] = head
        if head != NO_ARC:
            prev_sib[head] = x
        first_child[p] = x
        prev_sib[x] = NO_ARC


@njit(cache=True)
def _recompute_potentials(m, parent, pcost, depth, pot, first_child, next_sib, stack):
    """Recompute depth and potentials from scratch (root potential 0)."""
    pot[0] = 0
    depth[0] = 0
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        x = stack[top]
        child = first_child[x]
        while child != NO_ARC:
            depth[child] = depth[x] + 1
            if child >= m:
                pot[child] = pot[x] - pcost[child]
            else:
                pot[child] = pot[x] + pcost[child]
            stack[top] = child
            top += 1
            child = next_sib[child]


# ---------------------------------------------------------------------------
# entering-arc searches


@njit(cache=True)
def _find_entering_dense(src_r, src_c, tgt_r, tgt_c, pot, start_row, bland):
    """Row-minimum entering search over the complete bipartite arc set.

    Returns (src, tgt_node, reduced_cost, next_start_row); src is NO_ARC when
    every reduced cost is non-negative.
    """
    m = src_r.shape[0]
    n = tgt_r.shape[0]
    if bland:
        for i in range(m):
            sr = src_r[i]
            sc = src_c[i]
            pi = pot[i]
            for j in range(n):
                dr = sr - tgt_r[j]
                dc = sc - tgt_c[j]
                r = dr * dr + dc * dc + pot[m + j] - pi
                if r < 0:
                    return i, m + j, r, (i + 1) % m
        return NO_ARC, NO_ARC, 0, start_row
    for step in range(m):
        i = start_row + step
        if i >= m:
            i -= m
        sr = src_r[i]
        sc = src_c[i]
        best = np.int64(0)
        best_j = NO_ARC
        for j in range(n):
            dr = sr - tgt_r[j]
            dc = sc - tgt_c[j]
            val = dr * dr + dc * dc + pot[m + j]
            if best_j == NO_ARC or val < best:
                best = val
                best_j = j
        r = best - pot[i]
        if r < 0:
            return i, m + best_j, r, (i + 1) % m
    return NO_ARC, NO_ARC, 0, start_row


@njit(cache=True)
def _find_entering_sparse(m, row_ptr, arc_tgt, arc_cost, pot, start_row, bland):
    """Row-minimum entering search over a CSR-restricted arc set."""
    if bland:
        for i in range(m):
            pi = pot[i]
            for e in range(row_ptr[i], row_ptr[i + 1]):
                r = arc_cost[e] + pot[arc_tgt[e]] - pi
                if r < 0:
                    return i, arc_tgt[e], r, (i + 1) % m
        return NO_ARC, NO_ARC, 0, start_row
    for step in range(m):
        i = start_row + step
        if i >= m:
            i -= m
        pi = pot[i]
        best = np.int64(0)
        best_t = NO_ARC
        for e in range(row_ptr[i], row_ptr[i + 1]):
            val = arc_cost[e] + pot[arc_tgt[e]]
            if best_t == NO_ARC or val < best:
                best = val
                best_t = arc_tgt[e]
        if best_t != NO_ARC:
            r = best - pi
            if r < 0:
                return i, best_t, r, (i + 1) % m
    return NO_ARC, NO_ARC, 0, start_row


@njit(cache=True)
def _find_entering_shortlist(m, row_ptr, sl_tgt, sl_cost, pot, start_row, quota, budget):
    """Scan shortlists round-robin until `quota` negative candidates are seen
    or `budget` lists have been searched (extended to a full sweep while
    nothing has been found).  Returns the best candidate or NO_ARC after a
    full empty sweep.
    """
    best_r = np.int64(0)
    best_i = NO_ARC
    best_t = NO_ARC
    found = 0
    scanned = 0
    i = start_row
    while scanned < m:
        pi = pot[i]
        for e in range(row_ptr[i], row_ptr[i + 1]):
            r = sl_cost[e] + pot[sl_tgt[e]] - pi
            if r < 0:
                found += 1
                if best_i == NO_ARC or r < best_r:
                    best_r = r
                    best_i = i
                    best_t = sl_tgt[e]
        scanned += 1
        i += 1
        if i >= m:
            i = 0
        if found >= quota:
            break
        if found > 0 and scanned >= budget:
            break
    if best_i == NO_ARC:
        return NO_ARC, NO_ARC, np.int64(0), start_row, scanned
    return best_i, best_t, best_r, (best_i + 1) % m, scanned


# ---------------------------------------------------------------------------
# pivot


@njit(cache=True)
def _pivot(
    m, enter_src, enter_tgt, enter_cost, enter_r,
    parent, pflow, pcost, depth, pot, first_child, next_sib, prev_sib,
    path_buf, stack, bland,
):
    """Perform one simplex pivot for the entering arc (enter_src, enter_tgt).

    Returns the amount of mass shifted around the cycle (0 for a degenerate
    pivot).  Walks the tree path between the endpoints; arcs at odd positions
    from either endpoint lose flow.  The leaving arc is the minimum-flow
    losing arc, ties broken by (depth, node index), or by node index alone
    under Bland's rule.
    """
    a = enter_src
    b = enter_tgt

    # --- pass 1: find theta and the leaving arc
    theta = np.int64(-1)
    leave = NO_ARC
    leave_depth = np.int64(0)
    wa = a
    wb = b
    pa = 0
    pb = 0
    while depth[wa] > depth[wb]:
        pa += 1
        if pa & 1:
            f = pflow[wa]
            if theta < 0 or f < theta or (
                f == theta and (
                    (not bland and (depth[wa] < leave_depth or (depth[wa] == leave_depth and wa < leave)))
                    or (bland and wa < leave)
                )
            ):
                theta = f
                leave = wa
                leave_depth = depth[wa]
        wa = parent[wa]
    while depth[wb] > depth[wa]:
        pb += 1
        if pb & 1:
            f = pflow[wb]
            if theta < 0 or f < theta or (
                f == theta and (
                    (not bland and (depth[wb] < leave_depth or (depth[wb] == leave_depth and wb < leave)))
                    or (bland and wb < leave)
                )
            ):
                theta = f
                leave = wb
                leave_depth = depth[wb]
        wb = parent[wb]
    while wa != wb:
        pa += 1
        if pa & 1:
            f = pflow[wa]
            if theta < 0 or f < theta or (
                f == theta and (
                    (not bland and (depth[wa] < leave_depth or (depth[wa] == leave_depth and wa < leave)))
                    or (bland and wa < leave)
                )
            ):
                theta = f
                leave = wa
                leave_depth = depth[wa]
        wa = parent[wa]
        pb += 1
        if pb & 1:
            f = pflow[wb]
            if theta < 0 or f < theta or (
                f == theta and (
                    (not bland and (depth[wb] < leave_depth or (depth[wb] == leave_depth and wb < leave)))
                    or (bland and wb < leave)
                )
            ):
                theta = f
                leave = wb
                leave_depth = depth[wb]
        wb = parent[wb]
    if leave == NO_ARC:
        return np.int64(-1)  # signals a broken cycle; caller treats as fatal

    # --- pass 2: apply flow changes along both walks
    wa = a
    wb = b
    pa = 0
    pb = 0
    lca = wa  # recomputed below
    da = depth[a]
    db = depth[b]
    while depth[wa] > depth[wb]:
        pa += 1
        pflow[wa] += theta if (pa & 1) == 0 else -theta
        wa = parent[wa]
    while depth[wb] > depth[wa]:
        pb += 1
        pflow[wb] += theta if (pb & 1) == 0 else -theta
        wb = parent[wb]
    while wa != wb:
        pa += 1
        pflow[wa] += theta if (pa & 1) == 0 else -theta
        wa = parent[wa]
        pb += 1
        pflow[wb] += theta if (pb & 1) == 0 else -theta
        wb = parent[wb]
    lca = wa

    # --- pass 3: re-root the cut subtree at the entering endpoint on the
    # leaving arc's side and splice in the entering arc
    on_a_side = False
    w = a
    while depth[w] >= depth[lca] and w != lca:
        if w == leave:
            on_a_side = True
            break
        w = parent[w]
    if on_a_side:
        e = a
        o = b
        delta = enter_r  # subtree contains the source endpoint
    else:
        e = b
        o = a
        delta = -enter_r

    # collect the path e .. leave (inclusive)
    plen = 0
    w = e
    while True:
        path_buf[plen] = w
        plen += 1
        if w == leave:
            break
        w = parent[w]

    # detach every path node from its old parent's child list
    for idx in range(plen):
        x = path_buf[idx]
        p = parent[x]
        ps = prev_sib[x]
        ns = next_sib[x]
        if ps == NO_ARC:
            first_child[p] = ns
        else:
            next_sib[ps] = ns
        if ns != NO_ARC:
            prev_sib[ns] = ps

    # shift parent-arc payloads one step towards leave, reversing orientation
    prev_flow = theta
    prev_cost = enter_cost
    new_parent = o
    for idx in range(plen):
        x = path_buf[idx]
        old_flow = pflow[x]
        old_cost = pcost[x]
        parent[x] = new_parent
        pflow[x] = prev_flow
        pcost[x] = prev_cost
        head = first_child[new_parent]
        next_sib[x] = head
        if head != NO_ARC:
            prev_sib[head] = x
        prev_sib[x] = NO_ARC
        first_child[new_parent] = x
        prev_flow = old_flow
        prev_cost = old_cost
        new_parent = x

    # --- pass 4: refresh depth and potentials on the re-hung subtree
    top = 0
    stack[top] = e
    top += 1
    depth[e] = depth[o] + 1
    pot[e] += delta
    while top > 0:
        top -= 1
        x = stack[top]
        child = first_child[x]
        while child != NO_ARC:
            depth[child] = depth[x] + 1
            pot[child] += delta
            stack[top] = child
            top += 1
            child = next_sib[child]
    return theta


# ---------------------------------------------------------------------------
# initial basic solution (modified row-minimum rule)


@njit(cache=True)
def _row_minimum_arcs(
    src_r, src_c, tgt_r, tgt_c, supplies, demands,
    sl_tgt, sl_cost, sl_ptr, use_shortlists,
    arc_src, arc_tgt, arc_flow, arc_cost,
):
    """Greedy modified row-minimum initial solution.

    Iterates over sources that still have mass, assigning each its cheapest
    available target at maximal amount, until all sources are depleted.  With
    use_shortlists, a source's shortlist is searched first and the full row
    scan is the fallback once the shortlist is exhausted.  Returns the number
    of (positive-flow) arcs written.
    """
    m = src_r.shape[0]
    n = tgt_r.shape[0]
    rs = supplies.copy()
    rt = demands.copy()
    act = np.empty(n, dtype=np.int64)
    for j in range(n):
        act[j] = j
    n_act = n
    n_arcs = 0
    live_sources = m
    while live_sources > 0:
        for i in range(m):
            if rs[i] == 0:
                continue
            sr = src_r[i]
            sc = src_c[i]
            best_j = NO_ARC
            best = np.int64(0)
            if use_shortlists:
                for e in range(sl_ptr[i], sl_ptr[i + 1]):
                    j = sl_tgt[e] - m
                    if rt[j] > 0:
                        best_j = j
                        best = sl_cost[e]
                        break
            if best_j == NO_ARC:
                for idx in range(n_act):
                    j = act[idx]
                    if rt[j] == 0:
                        continue
                    dr = sr - tgt_r[j]
                    dc = sc - tgt_c[j]
                    c = dr * dr + dc * dc
                    if best_j == NO_ARC or c < best:
                        best = c
                        best_j = j
            amt = rs[i] if rs[i] < rt[best_j] else rt[best_j]
            arc_src[n_arcs] = i
            arc_tgt[n_arcs] = m + best_j
            arc_flow[n_arcs] = amt
            arc_cost[n_arcs] = best
            n_arcs += 1
            rs[i] -= amt
            rt[best_j] -= amt
            if rs[i] == 0:
                live_sources -= 1
        # drop depleted targets, preserving ascending order
        keep = 0
        for idx in range(n_act):
            j = act[idx]
            if rt[j] > 0:
                act[keep] = j
                keep += 1
        n_act = keep
    return n_arcs


@njit(cache=True)
def _uf_find(uf, x):
    root = x
    while uf[root] != root:
        root = uf[root]
    while uf[x] != root:
        nxt = uf[x]
        uf[x] = root
        x = nxt
    return root


@njit(cache=True)
def _complete_spanning_tree(
    m, n, src_r, src_c, tgt_r, tgt_c, arc_src, arc_tgt, arc_flow, arc_cost, n_arcs
):
    """Add zero-flow arcs joining the greedy forest into one spanning tree.

    Every component is linked to node 0's component through the arc between
    the component's smallest source and the smallest target already connected
    to node 0.  Returns the new arc count (= m + n - 1).
    """
    N = m + n
    uf = np.empty(N, dtype=np.int64)
    for x in range(N):
        uf[x] = x
    for a in range(n_arcs):
        ra = _uf_find(uf, arc_src[a])
        rb = _uf_find(uf, arc_tgt[a])
        if ra != rb:
            uf[rb] = ra

    root_comp = _uf_find(uf, 0)
    t_root = NO_ARC
    for j in range(n):
        if _uf_find(uf, m + j) == root_comp:
            t_root = j
            break
    # min source per component
    min_src = np.full(N, NO_ARC, dtype=np.int64)
    for i in range(m):
        r = _uf_find(uf, i)
        if min_src[r] == NO_ARC:
            min_src[r] = i
    for x in range(N):
        r = _uf_find(uf, x)
        if r == root_comp:
            continue
        s = min_src[r]
        dr = src_r[s] - tgt_r[t_root]
        dc = src_c[s] - tgt_c[t_root]
        arc_src[n_arcs] = s
        arc_tgt[n_arcs] = m + t_root
        arc_flow[n_arcs] = 0
        arc_cost[n_arcs] = dr * dr + dc * dc
        n_arcs += 1
        uf[r] = root_comp
    return n_arcs


# ---------------------------------------------------------------------------
# solve loops


@njit(cache=True)
def _solve_loop_dense(
    src_r, src_c, tgt_r, tgt_c,
    parent, pflow, pcost, depth, pot, first_child, next_sib, prev_sib,
    path_buf, stack, state,
):
    """Pivot to optimality with the dense row-minimum rule.

    state: [scan_row, pivot_count, degenerate_run, bland_flag, max_pivots,
    degenerate_limit].  Returns a status code.
    """
    m = src_r.shape[0]
    while True:
        bland = state[3] != 0
        i, t, r, nxt = _find_entering_dense(src_r, src_c, tgt_r, tgt_c, pot, state[0], bland)
        if i == NO_ARC:
            if bland:
                # Bland's rule proved optimality; confirm under the normal rule
                state[3] = 0
                continue
            return OPTIMAL
        state[0] = nxt
        dr = src_r[i] - tgt_r[t - m]
        dc = src_c[i] - tgt_c[t - m]
        cost = dr * dr + dc * dc
        theta = _pivot(
            m, i, t, cost, r,
            parent, pflow, pcost, depth, pot, first_child, next_sib, prev_sib,
            path_buf, stack, bland,
        )
        state[1] += 1
        if theta == 0:
            state[2] += 1
            if state[2] > state[5]:
                state[3] = 1
        else:
            state[2] = 0
            state[3] = 0
        if state[1] >= state[4]:
            return PIVOT_LIMIT


@njit(cache=True)
def _solve_loop_sparse(
    row_ptr, arc_tgt, arc_cost,
    src_r, src_c, tgt_r, tgt_c,
    parent, pflow, pcost, depth, pot, first_child, next_sib, prev_sib,
    path_buf, stack, state,
):
    """Pivot to optimality over a CSR-restricted arc set (same state layout)."""
    m = src_r.shape[0]
    while True:
        bland = state[3] != 0
        i, t, r, nxt = _find_entering_sparse(m, row_ptr, arc_tgt, arc_cost, pot, state[0], bland)
        if i == NO_ARC:
            if bland:
                state[3] = 0
                continue
            return OPTIMAL
        state[0] = nxt
        dr = src_r[i] - tgt_r[t - m]
        dc = src_c[i] - tgt_c[t - m]
        cost = dr * dr + dc * dc
        theta = _pivot(
            m, i, t, cost, r,
            parent, pflow, pcost, depth, pot, first_child, next_sib, prev_sib,
            path_buf, stack, bland,
        )
        state[1] += 1
        if theta == 0:
            state[2] += 1
            if state[2] > state[5]:
                state[3] = 1
        else:
            state[2] = 0
            state[3] = 0
        if state[1] >= state[4]:
            return PIVOT_LIMIT


@njit(cache=True)
def _solve_loop_shortlist(
    sl_ptr, sl_tgt, sl_cost, quota, budget,
    src_r, src_c, tgt_r, tgt_c,
    parent, pflow, pcost, depth, pot, first_child, next_sib, prev_sib,
    path_buf, stack, state,
):
    """Shortlist phase: pivot on shortlist candidates until a full sweep of
    the lists finds none.  Returns (status, shortlist_pivots); the caller runs
    the dense cleanup phase afterwards.
    """
    m = src_r.shape[0]
    start_pivots = state[1]
    while True:
        if state[3] != 0:
            # degenerate stall: hand over to the dense loop's Bland safeguard
            return OPTIMAL, state[1] - start_pivots
        i, t, r, nxt, _ = _find_entering_shortlist(
            m, sl_ptr, sl_tgt, sl_cost, pot, state[0], quota, budget
        )
        if i == NO_ARC:
            return OPTIMAL, state[1] - start_pivots
        state[0] = nxt
        dr = src_r[i] - tgt_r[t - m]
        dc = src_c[i] - tgt_c[t - m]
        cost = dr * dr + dc * dc
        theta = _pivot(
            m, i, t, cost, r,
            parent, pflow, pcost, depth, pot, first_child, next_sib, prev_sib,
            path_buf, stack, False,
        )
        state[1] += 1
        if theta == 0:
            state[2] += 1
            if state[2] > state[5]:
                state[3] = 1
        else:
            state[2] = 0
        if state[1] >= state[4]:
            return PIVOT_LIMIT, state[1] - start_pivots


# ---------------------------------------------------------------------------
# certificates and objective


@njit(cache=True)
def _min_reduced_cost_dense(src_r, src_c, tgt_r, tgt_c, pot):
    """Minimum reduced cost over the complete arc set (>= 0 iff optimal)."""
    m = src_r.shape[0]
    n = tgt_r.shape[0]
    best = np.int64(np.iinfo(np.int64).max)
    for i in range(m):
        sr = src_r[i]
        sc = src_c[i]
        pi = pot[i]
        for j in range(n):
            dr = sr - tgt_r[j]
            dc = sc - tgt_c[j]
            r = dr * dr + dc * dc + pot[m + j] - pi
            if r < best:
                best = r
    return best


@njit(cache=True)
def _min_reduced_cost_sparse(m, row_ptr, arc_tgt, arc_cost, pot):
    best = np.int64(np.iinfo(np.int64).max)
    for i in range(m):
        pi = pot[i]
        for e in range(row_ptr[i], row_ptr[i + 1]):
            r = arc_cost[e] + pot[arc_tgt[e]] - pi
            if r < best:
                best = r
    return best


@njit(cache=True)
def _tree_objective(m, parent, pflow, pcost):
    """Exact objective of the basic solution (sum of flow * cost over arcs)."""
    total = np.int64(0)
    for x in range(parent.shape[0]):
        if parent[x] >= 0:
            total += pflow[x] * pcost[x]
    return total
