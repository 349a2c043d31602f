"""Shortlist variant of the transportation simplex.

Each source gets a shortlist of its `s` cheapest targets (ties broken by
smaller target index).  The initial solution is the modified row-minimum rule
with shortlists searched first; the improvement phase scans only shortlists
(round-robin, until `candidate_quota` negative candidates are found or
`scan_percent` percent of the lists have been searched, extended to a full
sweep while nothing has been found).  Once a full sweep of the shortlists
yields no candidate, a dense cleanup phase runs the plain transportation
simplex to global optimality, so the final objective is always exact.

Default parameters are tuned on the generated corpus and are configurable;
they are not claimed to be canonical.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import _core
from .measures import Instance, TransportPlan
from .simplex import (
    IterationLimitError,
    SolveStats,
    _default_limits,
    _pruned_nodes,
    _require_integer_costs,
    init_row_minimum,
)

__all__ = ["ShortlistParams", "Shortlists", "ShortlistStats", "build_shortlists", "solve_shortlist"]

_KEY_SHIFT = 21  # composite sort key: (cost << shift) | target index


@dataclass(frozen=True)
class ShortlistParams:
    """Tuning knobs: list length s, scan percentage, and candidate quota."""

    list_length: int | None = None  # default: min(n, max(25, ceil(0.02 n)))
    scan_percent: float = 5.0
    candidate_quota: int = 5

    def __post_init__(self):
        if self.list_length is not None and self.list_length < 1:
            raise ValueError("list_length must be positive")
        if not 0.0 < self.scan_percent <= 100.0:
            raise ValueError("scan_percent must be in (0, 100]")
        if self.candidate_quota < 1:
            raise ValueError("candidate_quota must be positive")

    def resolved_length(self, n_targets: int) -> int:
        if self.list_length is not None:
            return min(self.list_length, n_targets)
        return min(n_targets, max(25, math.ceil(0.02 * n_targets)))


@dataclass
class Shortlists:
    """Per-source lists of the cheapest targets, each sorted ascending by cost."""

    src_px: np.ndarray
    tgt_px: np.ndarray
    row_ptr: np.ndarray  # int64[m+1], uniform stride s
    tgt_node: np.ndarray  # int64[m*s], node ids (m + target index)
    cost: np.ndarray  # int64[m*s]

    @property
    def length(self) -> int:
        return int(self.row_ptr[1] - self.row_ptr[0])

    def targets_of(self, source: int) -> np.ndarray:
        """Target indices (into the pruned target set) of one source's list."""
        lo, hi = self.row_ptr[source], self.row_ptr[source + 1]
        return self.tgt_node[lo:hi] - self.src_px.shape[0]


def build_shortlists(instance: Instance, params: ShortlistParams = ShortlistParams()) -> Shortlists:
    """Shortlists over the pruned node set of the instance."""
    _require_integer_costs(instance)
    src_px, tgt_px, src_r, src_c, tgt_r, tgt_c = _pruned_nodes(instance)
    m = src_px.shape[0]
    n = tgt_px.shape[0]
    s = params.resolved_length(n)
    assert n < (1 << _KEY_SHIFT), "target count exceeds the composite-key capacity"

    tgt_nodes = np.empty((m, s), dtype=np.int64)
    costs = np.empty((m, s), dtype=np.int64)
    jidx = np.arange(n, dtype=np.int64)
    chunk = max(1, min(m, 8 * 1024 * 1024 // max(n, 1)))
    for lo in range(0, m, chunk):
        hi = min(m, lo + chunk)
        dr = src_r[lo:hi, None] - tgt_r[None, :]
        dc = src_c[lo:hi, None] - tgt_c[None, :]
        cost = dr * dr + dc * dc
        key = (cost << _KEY_SHIFT) | jidx
        if s < n:
            part = np.argpartition(key, s - 1, axis=1)[:, :s]
            sel = np.take_along_axis(key, part, axis=1)
            order = np.argsort(sel, axis=1)
            sel = np.take_along_axis(sel, order, axis=1)
        else:
            sel = np.sort(key, axis=1)
        tgt_nodes[lo:hi] = (sel & ((1 << _KEY_SHIFT) - 1)) + m
        costs[lo:hi] = sel >> _KEY_SHIFT

    row_ptr = np.arange(m + 1, dtype=np.int64) * s
    return Shortlists(
        src_px=src_px, tgt_px=tgt_px,
        row_ptr=row_ptr, tgt_node=tgt_nodes.ravel(), cost=costs.ravel(),
    )


@dataclass
class ShortlistStats(SolveStats):
    shortlist_pivots: int = 0
    cleanup_pivots: int = 0


def solve_shortlist(instance: Instance, params: ShortlistParams = ShortlistParams(), *,
                    max_pivots=None, degenerate_limit=None):
    """Exact solve via the shortlist pivot order; returns (plan, ShortlistStats)."""
    _require_integer_costs(instance)
    t0 = time.perf_counter()
    shortlists = build_shortlists(instance, params)
    tree = init_row_minimum(instance, shortlists=shortlists)
    m, n = tree.m, tree.n
    max_pivots, degenerate_limit = _default_limits(m, n, max_pivots, degenerate_limit)
    budget = max(1, math.ceil(params.scan_percent / 100.0 * m))

    state = np.array([0, 0, 0, 0, max_pivots, degenerate_limit], dtype=np.int64)
    status, sl_pivots = _core._solve_loop_shortlist(
        shortlists.row_ptr, shortlists.tgt_node, shortlists.cost,
        params.candidate_quota, budget,
        tree.src_r, tree.src_c, tree.tgt_r, tree.tgt_c,
        tree.parent, tree.pflow, tree.pcost, tree.depth, tree.pot,
        tree.first_child, tree.next_sib, tree.prev_sib,
        tree._path_buf, tree._stack, state,
    )
    if status == _core.PIVOT_LIMIT:
        raise IterationLimitError(f"pivot limit {max_pivots} exceeded in shortlist phase")

    state[0] = 0  # cleanup scans restart at row 0
    status = _core._solve_loop_dense(
        tree.src_r, tree.src_c, tree.tgt_r, tree.tgt_c,
        tree.parent, tree.pflow, tree.pcost, tree.depth, tree.pot,
        tree.first_child, tree.next_sib, tree.prev_sib,
        tree._path_buf, tree._stack, state,
    )
    if status == _core.PIVOT_LIMIT:
        raise IterationLimitError(f"pivot limit {max_pivots} exceeded in cleanup phase")

    runtime = time.perf_counter() - t0
    total_pivots = int(state[1])
    stats = ShortlistStats(
        pivots=total_pivots,
        runtime_seconds=runtime,
        objective=tree.objective(),
        optimal=True,
        shortlist_pivots=int(sl_pivots),
        cleanup_pivots=total_pivots - int(sl_pivots),
    )
    return tree.to_plan(), stats
