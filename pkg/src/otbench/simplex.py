"""Exact transportation simplex with a spanning-tree basis.

Two phases: a modified row-minimum rule builds the initial basic feasible
solution, then row-minimum pivoting (with a persistent resume row) improves
it to optimality.  All arithmetic is exact int64; optimality is certified by
non-negative reduced costs.

Zero-mass pixels are pruned from the node set before solving (exact, and
reduces the effective problem size); plans are reported in full-grid pixel
indices.  Solvers require the integer-valued cost spec (p=2, pixel-integer
coordinates); unit-square objectives are a pure rescaling handled by the
reporting layer.

Anti-cycling: zero-flow basic arcs are kept; the leaving arc is tie-broken by
(node depth, node index); after `degenerate_limit` consecutive degenerate
pivots (default 10*(m+n)) the pivot rule switches to Bland's rule until a
strict objective decrease occurs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .measures import Instance, TransportPlan

__all__ = [
    "BasisTree",
    "EnteringArc",
    "SolveStats",
    "IterationLimitError",
    "init_row_minimum",
    "compute_duals",
    "find_entering",
    "pivot",
    "solve_dense",
    "dual_feasible_dense",
]


class IterationLimitError(RuntimeError):
    """Pivot limit exceeded; signals suspected cycling or a too-small cap."""


@dataclass
class SolveStats:
    pivots: int
    runtime_seconds: float
    objective: int
    optimal: bool


@dataclass(frozen=True)
class EnteringArc:
    src_node: int
    tgt_node: int
    reduced_cost: int
    source_pixel: int
    target_pixel: int


@dataclass
class BasisTree:
    """Spanning-tree basic solution over the pruned bipartite node set."""

    instance: Instance
    src_px: np.ndarray  # full-grid pixel index per source node
    tgt_px: np.ndarray
    src_r: np.ndarray
    src_c: np.ndarray
    tgt_r: np.ndarray
    tgt_c: np.ndarray
    parent: np.ndarray
    pflow: np.ndarray
    pcost: np.ndarray
    depth: np.ndarray
    pot: np.ndarray
    first_child: np.ndarray
    next_sib: np.ndarray
    prev_sib: np.ndarray
    scan_row: int = 0
    bland: bool = False
    degenerate_run: int = 0
    _path_buf: np.ndarray = field(default=None, repr=False)
    _stack: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        N = self.parent.shape[0]
        if self._path_buf is None:
            self._path_buf = np.empty(N, dtype=np.int64)
        if self._stack is None:
            self._stack = np.empty(N, dtype=np.int64)

    @property
    def m(self) -> int:
        return self.src_px.shape[0]

    @property
    def n(self) -> int:
        return self.tgt_px.shape[0]

    @property
    def u(self) -> np.ndarray:
        """Source duals (u_i = potential of source node i)."""
        return self.pot[: self.m].copy()

    @property
    def v(self) -> np.ndarray:
        """Target duals (v_j = -potential of target node m+j)."""
        return -self.pot[self.m :]

    def basic_arcs(self):
        """(source_pixel, target_pixel, flow) for every basic arc, zero flows included."""
        m = self.m
        out = []
        for x in range(m + self.n):
            p = self.parent[x]
            if p < 0:
                continue
            if x < m:
                out.append((int(self.src_px[x]), int(self.tgt_px[p - m]), int(self.pflow[x])))
            else:
                out.append((int(self.src_px[p]), int(self.tgt_px[x - m]), int(self.pflow[x])))
        out.sort()
        return out

    def to_plan(self) -> TransportPlan:
        entries = tuple((i, j, f) for i, j, f in self.basic_arcs() if f > 0)
        n = self.instance.resolution
        return TransportPlan(source_resolution=n, target_resolution=n, entries=entries)

    def objective(self) -> int:
        return int(_core._tree_objective(self.m, self.parent, self.pflow, self.pcost))

    def reduced_cost(self, source_pixel: int, target_pixel: int) -> int:
        """Exact reduced cost c - u - v of an arbitrary (pixel, pixel) arc."""
        n = self.instance.resolution
        ri, ci = divmod(source_pixel, n)
        rj, cj = divmod(target_pixel, n)
        i = int(np.searchsorted(self.src_px, source_pixel))
        j = int(np.searchsorted(self.tgt_px, target_pixel))
        c = (ri - rj) ** 2 + (ci - cj) ** 2
        return c - int(self.pot[i]) + int(self.pot[self.m + j])

    def validate(self) -> None:
        """Assert the spanning-tree/basis invariants; raises AssertionError."""
        m, n = self.m, self.n
        N = m + n
        assert int((self.parent >= 0).sum()) == N - 1, "tree must have m+n-1 arcs"
        order = _tree_order(self.parent, self.first_child, self.next_sib)
        assert order.shape[0] == N, "tree must be connected and acyclic"
        mu = self.instance.source.masses
        nu = self.instance.target.masses
        row = np.zeros(m, dtype=np.int64)
        col = np.zeros(n, dtype=np.int64)
        for x in range(N):
            p = self.parent[x]
            if p < 0:
                continue
            flow = int(self.pflow[x])
            assert flow >= 0, "negative flow on a basic arc"
            s, t = (x, p - m) if x < m else (p, x - m)
            row[s] += flow
            col[t] += flow
            # dual equality on basic arcs, recomputed independently
            dr = int(self.src_r[s] - self.tgt_r[t])
            dc = int(self.src_c[s] - self.tgt_c[t])
            c = dr * dr + dc * dc
            assert c == int(self.pot[s]) - int(self.pot[m + t]), (
                f"u+v != c on basic arc ({s},{t})"
            )
            assert c == int(self.pcost[x]), "stale arc cost"
        assert (row == mu[self.src_px]).all(), "source marginals violated"
        assert (col == nu[self.tgt_px]).all(), "target marginals violated"


def _tree_order(parent, first_child, next_sib):
    """Preorder node sequence; shorter than N when the tree is not connected."""
    N = parent.shape[0]
    out = np.empty(N, dtype=np.int64)
    stack = [0]
    k = 0
    while stack:
        x = stack.pop()
        if k >= N:  # cycle guard
            break
        out[k] = x
        k += 1
        child = first_child[x]
        while child != _core.NO_ARC:
            stack.append(int(child))
            child = next_sib[child]
    return out[:k]


def _require_integer_costs(instance: Instance) -> None:
    if not instance.cost.integer_valued:
        raise ValueError(
            "solver requires the integer-valued cost spec "
            "(exponent 2, pixel-integer coordinates)"
        )


def _pruned_nodes(instance: Instance):
    n = instance.resolution
    src_px = np.flatnonzero(instance.source.masses > 0).astype(np.int64)
    tgt_px = np.flatnonzero(instance.target.masses > 0).astype(np.int64)
    return (
        src_px,
        tgt_px,
        src_px // n,
        src_px % n,
        tgt_px // n,
        tgt_px % n,
    )


_EMPTY = np.empty(0, dtype=np.int64)
_EMPTY_PTR = np.zeros(1, dtype=np.int64)


def init_row_minimum(instance: Instance, shortlists=None) -> BasisTree:
    """Initial basic feasible solution by the modified row-minimum rule.

    With `shortlists` (see `otbench.shortlist`), each source searches its
    shortlist first and falls back to a full row scan once the list's targets
    are depleted.
    """
    _require_integer_costs(instance)
    src_px, tgt_px, src_r, src_c, tgt_r, tgt_c = _pruned_nodes(instance)
    m = src_px.shape[0]
    n = tgt_px.shape[0]
    N = m + n
    supplies = instance.source.masses[src_px]
    demands = instance.target.masses[tgt_px]

    if shortlists is not None:
        sl_ptr, sl_tgt, sl_cost = shortlists.row_ptr, shortlists.tgt_node, shortlists.cost
        use_sl = True
    else:
        sl_ptr, sl_tgt, sl_cost = _EMPTY_PTR, _EMPTY, _EMPTY
        use_sl = False

    arc_src = np.empty(N - 1, dtype=np.int64)
    arc_tgt = np.empty(N - 1, dtype=np.int64)
    arc_flow = np.empty(N - 1, dtype=np.int64)
    arc_cost = np.empty(N - 1, dtype=np.int64)
    n_arcs = _core._row_minimum_arcs(
        src_r, src_c, tgt_r, tgt_c, supplies, demands,
        sl_tgt, sl_cost, sl_ptr, use_sl,
        arc_src, arc_tgt, arc_flow, arc_cost,
    )
    n_arcs = _core._complete_spanning_tree(
        m, n, src_r, src_c, tgt_r, tgt_c, arc_src, arc_tgt, arc_flow, arc_cost, n_arcs
    )
    assert n_arcs == N - 1

    parent = np.empty(N, dtype=np.int64)
    pflow = np.empty(N, dtype=np.int64)
    pcost = np.empty(N, dtype=np.int64)
    depth = np.empty(N, dtype=np.int64)
    pot = np.empty(N, dtype=np.int64)
    first_child = np.empty(N, dtype=np.int64)
    next_sib = np.empty(N, dtype=np.int64)
    prev_sib = np.empty(N, dtype=np.int64)
    ok = _core._build_tree_from_arcs(
        m, n, arc_src[:n_arcs], arc_tgt[:n_arcs], arc_flow[:n_arcs], arc_cost[:n_arcs],
        parent, pflow, pcost, depth, pot, first_child, next_sib, prev_sib,
    )
    if not ok:
        raise RuntimeError("initial arcs do not span the node set (internal bug)")
    return BasisTree(
        instance=instance,
        src_px=src_px, tgt_px=tgt_px,
        src_r=src_r, src_c=src_c, tgt_r=tgt_r, tgt_c=tgt_c,
        parent=parent, pflow=pflow, pcost=pcost, depth=depth, pot=pot,
        first_child=first_child, next_sib=next_sib, prev_sib=prev_sib,
    )


def compute_duals(tree: BasisTree):
    """Recompute potentials from the tree (root dual fixed to 0); returns (u, v)."""
    order = _tree_order(tree.parent, tree.first_child, tree.next_sib)
    if order.shape[0] != tree.m + tree.n:
        raise RuntimeError("basis tree is disconnected (internal invariant breach)")
    _core._recompute_potentials(
        tree.m, tree.parent, tree.pcost, tree.depth, tree.pot,
        tree.first_child, tree.next_sib, tree._stack,
    )
    return tree.u, tree.v


def find_entering(tree: BasisTree):
    """Next entering arc under the row-minimum rule, or None at optimality.

    Advances the persistent resume row; under an active Bland fallback the
    first negative-reduced-cost arc in index order is returned instead.
    """
    i, t, r, nxt = _core._find_entering_dense(
        tree.src_r, tree.src_c, tree.tgt_r, tree.tgt_c, tree.pot,
        tree.scan_row, tree.bland,
    )
    if i == _core.NO_ARC:
        return None
    tree.scan_row = int(nxt)
    return EnteringArc(
        src_node=int(i), tgt_node=int(t), reduced_cost=int(r),
        source_pixel=int(tree.src_px[i]), target_pixel=int(tree.tgt_px[t - tree.m]),
    )


def pivot(tree: BasisTree, arc: EnteringArc) -> int:
    """Pivot the entering arc into the basis; returns the shifted amount."""
    i, t = arc.src_node, arc.tgt_node
    dr = int(tree.src_r[i] - tree.tgt_r[t - tree.m])
    dc = int(tree.src_c[i] - tree.tgt_c[t - tree.m])
    cost = dr * dr + dc * dc
    theta = _core._pivot(
        tree.m, i, t, cost, arc.reduced_cost,
        tree.parent, tree.pflow, tree.pcost, tree.depth, tree.pot,
        tree.first_child, tree.next_sib, tree.prev_sib,
        tree._path_buf, tree._stack, tree.bland,
    )
    if theta < 0:
        raise RuntimeError("pivot cycle not found (internal invariant breach)")
    return int(theta)


def dual_feasible_dense(tree: BasisTree) -> bool:
    """Exhaustive reduced-cost check over all source-target pairs."""
    return int(
        _core._min_reduced_cost_dense(tree.src_r, tree.src_c, tree.tgt_r, tree.tgt_c, tree.pot)
    ) >= 0


def _default_limits(m: int, n: int, max_pivots, degenerate_limit):
    if max_pivots is None:
        max_pivots = 1000 * (m + n)
    if degenerate_limit is None:
        degenerate_limit = 10 * (m + n)
    return int(max_pivots), int(degenerate_limit)


def solve_dense(instance: Instance, *, max_pivots=None, degenerate_limit=None,
                validate: bool = False):
    """Solve to optimality; returns (TransportPlan, SolveStats).

    With validate=True the solve runs through the step-level API and asserts
    the basis invariants after every pivot (slow; meant for tests).
    """
    _require_integer_costs(instance)
    t0 = time.perf_counter()
    tree = init_row_minimum(instance)
    m, n = tree.m, tree.n
    max_pivots, degenerate_limit = _default_limits(m, n, max_pivots, degenerate_limit)

    if validate:
        tree.validate()
        pivots = 0
        prev_obj = tree.objective()
        while True:
            arc = find_entering(tree)
            if arc is None:
                if tree.bland:
                    tree.bland = False
                    continue
                break
            theta = pivot(tree, arc)
            pivots += 1
            tree.validate()
            obj = tree.objective()
            assert obj == prev_obj + arc.reduced_cost * theta, "objective update mismatch"
            assert obj <= prev_obj, "objective increased"
            prev_obj = obj
            if theta == 0:
                tree.degenerate_run += 1
                if tree.degenerate_run > degenerate_limit:
                    tree.bland = True
            else:
                tree.degenerate_run = 0
                tree.bland = False
            if pivots >= max_pivots:
                raise IterationLimitError(f"pivot limit {max_pivots} exceeded")
        assert dual_feasible_dense(tree)
    else:
        state = np.array(
            [tree.scan_row, 0, tree.degenerate_run, int(tree.bland), max_pivots, degenerate_limit],
            dtype=np.int64,
        )
        status = _core._solve_loop_dense(
            tree.src_r, tree.src_c, tree.tgt_r, tree.tgt_c,
            tree.parent, tree.pflow, tree.pcost, tree.depth, tree.pot,
            tree.first_child, tree.next_sib, tree.prev_sib,
            tree._path_buf, tree._stack, state,
        )
        tree.scan_row = int(state[0])
        pivots = int(state[1])
        if status == _core.PIVOT_LIMIT:
            raise IterationLimitError(f"pivot limit {max_pivots} exceeded")

    runtime = time.perf_counter() - t0
    plan = tree.to_plan()
    stats = SolveStats(
        pivots=pivots, runtime_seconds=runtime, objective=tree.objective(), optimal=True
    )
    return plan, stats


def solve_dense_with_tree(instance: Instance, *, max_pivots=None, degenerate_limit=None):
    """solve_dense variant that also returns the final BasisTree (for certificates)."""
    _require_integer_costs(instance)
    t0 = time.perf_counter()
    tree = init_row_minimum(instance)
    m, n = tree.m, tree.n
    max_pivots, degenerate_limit = _default_limits(m, n, max_pivots, degenerate_limit)
    state = np.array([0, 0, 0, 0, max_pivots, degenerate_limit], dtype=np.int64)
    status = _core._solve_loop_dense(
        tree.src_r, tree.src_c, tree.tgt_r, tree.tgt_c,
        tree.parent, tree.pflow, tree.pcost, tree.depth, tree.pot,
        tree.first_child, tree.next_sib, tree.prev_sib,
        tree._path_buf, tree._stack, state,
    )
    tree.scan_row = int(state[0])
    if status == _core.PIVOT_LIMIT:
        raise IterationLimitError(f"pivot limit {max_pivots} exceeded")
    runtime = time.perf_counter() - t0
    stats = SolveStats(
        pivots=int(state[1]), runtime_seconds=runtime, objective=tree.objective(), optimal=True
    )
    return tree.to_plan(), stats, tree
