"""Shielding-neighborhood (shortcut) method for squared Euclidean grid transport.

The method alternates between (a) building, from the current basic solution,
a sparse arc set N such that every excluded arc has a two-leg shortcut through
N that is no more expensive, and (b) re-optimizing the restricted instance
with the transportation simplex warm-started from the previous basis.  When
the incumbent solution stays dual-feasible over the neighborhood rebuilt from
it, it is globally optimal.

Construction rule, for squared Euclidean costs on the grid: a pair (x, y) is
excluded only if some 4-neighbor x_s of x has a plan arc (x_s, y_s) with
<x_s - x, y - y_s> > 0.  Because the witness directions are the four axis
unit vectors, the allowed set per source is a coordinate rectangle: row
bounds from the up/down neighbors' assigned target rows, column bounds from
the left/right neighbors' target columns.  All arcs of the current basic
solution and all pairs (x, y_s) with y_s assigned to a 4-neighbor of x are
forced in.

Soundness: for squared Euclidean costs, c(x,y_s) + c(x_s,y) - c(x_s,y_s)
- c(x,y) = -2<x_s - x, y - y_s> < 0 for every excluded pair, and basic arcs
have zero reduced cost, so r(x,y) > r(x,y_s) + r(x_s,y).  The first term is
in N; iterating the argument on the second moves the source one grid step per
application and can never revisit a source (each application adds a strictly
positive amount), so dual feasibility over N extends to all excluded pairs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _core
from .measures import Instance, TransportPlan
from .simplex import (
    BasisTree,
    IterationLimitError,
    SolveStats,
    _default_limits,
    _require_integer_costs,
    init_row_minimum,
)

__all__ = [
    "Neighborhood",
    "ShieldingStats",
    "construct_shielding",
    "solve_restricted",
    "solve_shielded",
]


@dataclass
class Neighborhood:
    """Sparse restricted arc set; per-source sorted lists of allowed targets."""

    src_px: np.ndarray
    tgt_px: np.ndarray
    row_ptr: np.ndarray  # int64[m+1]
    tgt_node: np.ndarray  # int64[total_pairs], ascending per source
    cost: np.ndarray  # int64[total_pairs]

    @property
    def total_pairs(self) -> int:
        return int(self.tgt_node.shape[0])

    def targets_of(self, source: int) -> np.ndarray:
        """Allowed target indices (into the pruned target set) of one source."""
        lo, hi = self.row_ptr[source], self.row_ptr[source + 1]
        return self.tgt_node[lo:hi] - self.src_px.shape[0]

    def contains(self, source: int, target: int) -> bool:
        lo, hi = self.row_ptr[source], self.row_ptr[source + 1]
        m = self.src_px.shape[0]
        k = np.searchsorted(self.tgt_node[lo:hi], m + target)
        return k < hi - lo and self.tgt_node[lo + k] == m + target


@dataclass
class ShieldingStats:
    iterations: int
    neighborhood_sizes: list[int]
    iteration_pivots: list[int]
    pivots: int
    runtime_seconds: float
    objective: int
    optimal: bool


@njit(cache=True)
def _insertion_sort(buf, n):
    for i in range(1, n):
        key = buf[i]
        j = i - 1
        while j >= 0 and buf[j] > key:
            buf[j + 1] = buf[j]
            j -= 1
        buf[j + 1] = key


@njit(cache=True)
def _construct_kernel(
    R, m, src_r, src_c, tgt_r, tgt_c, src_at, tgt_row_ptr,
    plan_ptr, plan_tgt, extra_ptr, extra_tgt,
):
    """Build the neighborhood CSR.

    plan_* : positive-flow arcs per source (bounds + neighbor inclusion)
    extra_*: additional per-source arcs forced in (zero-flow basis arcs)
    Returns (row_ptr, tgt_node, cost).
    """
    n = tgt_r.shape[0]
    lo_r = np.zeros(m, dtype=np.int64)
    hi_r = np.full(m, R - 1, dtype=np.int64)
    lo_c = np.zeros(m, dtype=np.int64)
    hi_c = np.full(m, R - 1, dtype=np.int64)
    for s in range(m):
        r = src_r[s]
        c = src_c[s]
        if r + 1 < R:
            nb = src_at[(r + 1) * R + c]
            if nb >= 0:
                for e in range(plan_ptr[nb], plan_ptr[nb + 1]):
                    yr = tgt_r[plan_tgt[e] - m]
                    if yr < hi_r[s]:
                        hi_r[s] = yr
        if r - 1 >= 0:
            nb = src_at[(r - 1) * R + c]
            if nb >= 0:
                for e in range(plan_ptr[nb], plan_ptr[nb + 1]):
                    yr = tgt_r[plan_tgt[e] - m]
                    if yr > lo_r[s]:
                        lo_r[s] = yr
        if c + 1 < R:
            nb = src_at[r * R + c + 1]
            if nb >= 0:
                for e in range(plan_ptr[nb], plan_ptr[nb + 1]):
                    yc = tgt_c[plan_tgt[e] - m]
                    if yc < hi_c[s]:
                        hi_c[s] = yc
        if c - 1 >= 0:
            nb = src_at[r * R + c - 1]
            if nb >= 0:
                for e in range(plan_ptr[nb], plan_ptr[nb + 1]):
                    yc = tgt_c[plan_tgt[e] - m]
                    if yc > lo_c[s]:
                        lo_c[s] = yc

    # per-source forced arcs: own plan + own extras + 4-neighbors' plan arcs
    scratch = np.empty(6 * n + 16, dtype=np.int64)
    row_ptr = np.zeros(m + 1, dtype=np.int64)
    # phase 0 counts into row_ptr[s+1]; phase 1 fills after a prefix sum
    tgt_node = np.empty(0, dtype=np.int64)
    cost = np.empty(0, dtype=np.int64)
    for phase in range(2):
        if phase == 1:
            for s in range(m):
                row_ptr[s + 1] += row_ptr[s]
            tgt_node = np.empty(row_ptr[m], dtype=np.int64)
            cost = np.empty(row_ptr[m], dtype=np.int64)
        for s in range(m):
            nfonly = 0
            for e in range(plan_ptr[s], plan_ptr[s + 1]):
                scratch[nfonly] = plan_tgt[e]
                nfonly += 1
            for e in range(extra_ptr[s], extra_ptr[s + 1]):
                scratch[nfonly] = extra_tgt[e]
                nfonly += 1
            r = src_r[s]
            c = src_c[s]
            for d in range(4):
                if d == 0 and r + 1 < R:
                    nb = src_at[(r + 1) * R + c]
                elif d == 1 and r - 1 >= 0:
                    nb = src_at[(r - 1) * R + c]
                elif d == 2 and c + 1 < R:
                    nb = src_at[r * R + c + 1]
                elif d == 3 and c - 1 >= 0:
                    nb = src_at[r * R + c - 1]
                else:
                    nb = -1
                if nb >= 0:
                    for e in range(plan_ptr[nb], plan_ptr[nb + 1]):
                        scratch[nfonly] = plan_tgt[e]
                        nfonly += 1
            _insertion_sort(scratch, nfonly)
            # dedupe in place
            uniq = 0
            for idx in range(nfonly):
                if uniq == 0 or scratch[idx] != scratch[uniq - 1]:
                    scratch[uniq] = scratch[idx]
                    uniq += 1

            # merge the rectangle stream with the forced stream
            sr = src_r[s]
            sc = src_c[s]
            out = row_ptr[s] if phase == 1 else 0
            fi = 0
            for rr in range(lo_r[s], hi_r[s] + 1):
                t0 = tgt_row_ptr[rr]
                t1 = tgt_row_ptr[rr + 1]
                # binary search column range within the grid row
                a = t0
                b = t1
                while a < b:
                    mid = (a + b) // 2
                    if tgt_c[mid] < lo_c[s]:
                        a = mid + 1
                    else:
                        b = mid
                lo_t = a
                a = t0
                b = t1
                while a < b:
                    mid = (a + b) // 2
                    if tgt_c[mid] <= hi_c[s]:
                        a = mid + 1
                    else:
                        b = mid
                hi_t = a
                for t in range(lo_t, hi_t):
                    tn = m + t
                    while fi < uniq and scratch[fi] < tn:
                        if phase == 0:
                            out += 1
                        else:
                            tt = scratch[fi] - m
                            dr = sr - tgt_r[tt]
                            dc = sc - tgt_c[tt]
                            tgt_node[out] = scratch[fi]
                            cost[out] = dr * dr + dc * dc
                            out += 1
                        fi += 1
                    if fi < uniq and scratch[fi] == tn:
                        fi += 1
                    if phase == 0:
                        out += 1
                    else:
                        dr = sr - tgt_r[t]
                        dc = sc - tgt_c[t]
                        tgt_node[out] = tn
                        cost[out] = dr * dr + dc * dc
                        out += 1
            while fi < uniq:
                if phase == 0:
                    out += 1
                else:
                    tt = scratch[fi] - m
                    dr = sr - tgt_r[tt]
                    dc = sc - tgt_c[tt]
                    tgt_node[out] = scratch[fi]
                    cost[out] = dr * dr + dc * dc
                    out += 1
                fi += 1
            if phase == 0:
                row_ptr[s + 1] = out
    return row_ptr, tgt_node, cost


def _arc_csr(m: int, arc_src: np.ndarray, arc_tgt: np.ndarray):
    """CSR (by source) of an arc list."""
    order = np.argsort(arc_src, kind="stable")
    srcs = arc_src[order]
    tgts = arc_tgt[order]
    counts = np.bincount(srcs, minlength=m)
    ptr = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr, tgts.astype(np.int64)


def _tree_arc_arrays(tree: BasisTree):
    """(src, tgt_node, flow) arrays over all basic arcs of the tree."""
    m = tree.m
    nodes = np.arange(m + tree.n)
    mask = tree.parent >= 0
    xs = nodes[mask]
    ps = tree.parent[mask]
    srcs = np.where(xs < m, xs, ps)
    tgts = np.where(xs < m, ps, xs)
    flows = tree.pflow[mask]
    return srcs.astype(np.int64), tgts.astype(np.int64), flows.astype(np.int64)


def _grid_context(R: int, src_px: np.ndarray, tgt_r: np.ndarray):
    src_at = np.full(R * R, -1, dtype=np.int64)
    src_at[src_px] = np.arange(src_px.shape[0], dtype=np.int64)
    # active-target ranges per grid row: tgt_px is ascending row-major
    tgt_row_ptr = np.searchsorted(tgt_r, np.arange(R + 1), side="left").astype(np.int64)
    return src_at, tgt_row_ptr


def _construct(tree: BasisTree, include_zero_arcs: bool) -> Neighborhood:
    m = tree.m
    srcs, tgts, flows = _tree_arc_arrays(tree)
    pos = flows > 0
    plan_ptr, plan_tgt = _arc_csr(m, srcs[pos], tgts[pos])
    if include_zero_arcs and (~pos).any():
        extra_ptr, extra_tgt = _arc_csr(m, srcs[~pos], tgts[~pos])
    else:
        extra_ptr = np.zeros(m + 1, dtype=np.int64)
        extra_tgt = np.empty(0, dtype=np.int64)
    R = tree.instance.resolution
    src_at, tgt_row_ptr = _grid_context(R, tree.src_px, tree.tgt_r)
    row_ptr, tgt_node, cost = _construct_kernel(
        R, m, tree.src_r, tree.src_c, tree.tgt_r, tree.tgt_c, src_at, tgt_row_ptr,
        plan_ptr, plan_tgt, extra_ptr, extra_tgt,
    )
    return Neighborhood(
        src_px=tree.src_px, tgt_px=tree.tgt_px,
        row_ptr=row_ptr, tgt_node=tgt_node, cost=cost,
    )


def construct_shielding(instance: Instance, current_plan: TransportPlan) -> Neighborhood:
    """Shielding neighborhood of a feasible plan (squared Euclidean costs only)."""
    if instance.cost.exponent != 2.0:
        raise ValueError("shielding construction is valid only for squared Euclidean costs")
    _require_integer_costs(instance)
    from .measures import check_feasible
    from .simplex import _pruned_nodes

    report = check_feasible(current_plan, instance)
    if not report:
        raise ValueError("current_plan is not feasible for the instance")

    src_px, tgt_px, src_r, src_c, tgt_r, tgt_c = _pruned_nodes(instance)
    m = src_px.shape[0]
    entries = np.array([(i, j) for i, j, _ in current_plan.entries], dtype=np.int64)
    srcs = np.searchsorted(src_px, entries[:, 0]).astype(np.int64)
    tgts = (np.searchsorted(tgt_px, entries[:, 1]) + m).astype(np.int64)
    plan_ptr, plan_tgt = _arc_csr(m, srcs, tgts)
    extra_ptr = np.zeros(m + 1, dtype=np.int64)
    extra_tgt = np.empty(0, dtype=np.int64)
    R = instance.resolution
    src_at, tgt_row_ptr = _grid_context(R, src_px, tgt_r)
    row_ptr, tgt_node, cost = _construct_kernel(
        R, m, src_r, src_c, tgt_r, tgt_c, src_at, tgt_row_ptr,
        plan_ptr, plan_tgt, extra_ptr, extra_tgt,
    )
    return Neighborhood(
        src_px=src_px, tgt_px=tgt_px,
        row_ptr=row_ptr, tgt_node=tgt_node, cost=cost,
    )


def _check_basis_in_neighborhood(tree: BasisTree, nb: Neighborhood) -> None:
    srcs, tgts, _ = _tree_arc_arrays(tree)
    for s, t in zip(srcs, tgts):
        lo, hi = nb.row_ptr[s], nb.row_ptr[s + 1]
        k = np.searchsorted(nb.tgt_node[lo:hi], t)
        if k >= hi - lo or nb.tgt_node[lo + k] != t:
            raise RuntimeError(
                f"warm-start basis arc ({s},{t - tree.m}) missing from the neighborhood "
                "(construction bug)"
            )


def _copy_tree(tree: BasisTree) -> BasisTree:
    return BasisTree(
        instance=tree.instance,
        src_px=tree.src_px, tgt_px=tree.tgt_px,
        src_r=tree.src_r, src_c=tree.src_c, tgt_r=tree.tgt_r, tgt_c=tree.tgt_c,
        parent=tree.parent.copy(), pflow=tree.pflow.copy(), pcost=tree.pcost.copy(),
        depth=tree.depth.copy(), pot=tree.pot.copy(),
        first_child=tree.first_child.copy(), next_sib=tree.next_sib.copy(),
        prev_sib=tree.prev_sib.copy(),
        scan_row=tree.scan_row,
    )


def _solve_restricted_inplace(tree: BasisTree, nb: Neighborhood, max_pivots, degenerate_limit):
    state = np.array([tree.scan_row, 0, 0, 0, max_pivots, degenerate_limit], dtype=np.int64)
    status = _core._solve_loop_sparse(
        nb.row_ptr, nb.tgt_node, nb.cost,
        tree.src_r, tree.src_c, tree.tgt_r, tree.tgt_c,
        tree.parent, tree.pflow, tree.pcost, tree.depth, tree.pot,
        tree.first_child, tree.next_sib, tree.prev_sib,
        tree._path_buf, tree._stack, state,
    )
    tree.scan_row = int(state[0])
    if status == _core.PIVOT_LIMIT:
        raise IterationLimitError(f"pivot limit {max_pivots} exceeded in restricted solve")
    return int(state[1])


def solve_restricted(instance: Instance, neighborhood: Neighborhood, warm_basis: BasisTree,
                     *, max_pivots=None, degenerate_limit=None):
    """Optimize over the restricted arc set from a warm-start basis.

    Returns (BasisTree, SolveStats); the warm basis is left untouched.  The
    result is optimal for the restricted instance (reduced costs >= 0 over the
    neighborhood only).
    """
    _require_integer_costs(instance)
    t0 = time.perf_counter()
    _check_basis_in_neighborhood(warm_basis, neighborhood)
    tree = _copy_tree(warm_basis)
    m, n = tree.m, tree.n
    max_pivots, degenerate_limit = _default_limits(m, n, max_pivots, degenerate_limit)
    pivots = _solve_restricted_inplace(tree, neighborhood, max_pivots, degenerate_limit)
    stats = SolveStats(
        pivots=pivots,
        runtime_seconds=time.perf_counter() - t0,
        objective=tree.objective(),
        optimal=True,
    )
    return tree, stats


def _min_reduced_cost_over(nb: Neighborhood, tree: BasisTree) -> int:
    return int(
        _core._min_reduced_cost_sparse(tree.m, nb.row_ptr, nb.tgt_node, nb.cost, tree.pot)
    )


def solve_shielded(instance: Instance, *, max_iterations: int = 1000,
                   max_pivots=None, degenerate_limit=None, validate: bool = False):
    """Iterate restricted solves against fresh shielding neighborhoods.

    Stops once the incumbent solution is dual-feasible over the neighborhood
    rebuilt from it; the returned plan is then globally optimal.  With
    validate=True a full dense reduced-cost check certifies this at the end.
    Returns (TransportPlan, ShieldingStats); the final BasisTree is available
    via solve_shielded_with_tree.
    """
    plan, stats, _ = solve_shielded_with_tree(
        instance, max_iterations=max_iterations, max_pivots=max_pivots,
        degenerate_limit=degenerate_limit, validate=validate,
    )
    return plan, stats


def solve_shielded_with_tree(instance: Instance, *, max_iterations: int = 1000,
                             max_pivots=None, degenerate_limit=None, validate: bool = False):
    if instance.cost.exponent != 2.0:
        raise ValueError("shielding requires squared Euclidean costs")
    _require_integer_costs(instance)
    t0 = time.perf_counter()
    tree = init_row_minimum(instance)
    m, n = tree.m, tree.n
    max_pivots, degenerate_limit = _default_limits(m, n, max_pivots, degenerate_limit)

    sizes: list[int] = []
    iteration_pivots: list[int] = []
    total_pivots = 0
    nb = _construct(tree, include_zero_arcs=True)
    iterations = 0
    while True:
        if iterations >= max_iterations:
            raise IterationLimitError(
                f"shielding iteration cap {max_iterations} exceeded (construction bug?)"
            )
        pivots = _solve_restricted_inplace(tree, nb, max_pivots, degenerate_limit)
        iterations += 1
        sizes.append(nb.total_pairs)
        iteration_pivots.append(pivots)
        total_pivots += pivots
        nb = _construct(tree, include_zero_arcs=True)
        if _min_reduced_cost_over(nb, tree) >= 0:
            break

    runtime = time.perf_counter() - t0
    if validate:
        from .simplex import dual_feasible_dense

        assert dual_feasible_dense(tree), "shielding result failed the dense certificate"
    stats = ShieldingStats(
        iterations=iterations,
        neighborhood_sizes=sizes,
        iteration_pivots=iteration_pivots,
        pivots=total_pivots,
        runtime_seconds=runtime,
        objective=tree.objective(),
        optimal=True,
    )
    return tree.to_plan(), stats, tree
