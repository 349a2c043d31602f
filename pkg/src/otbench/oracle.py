"""Independent exact verification oracle for small transport instances.

Successive-shortest-path min-cost flow with Johnson potentials and Dijkstra.
Deliberately shares no code with the simplex-based solvers: plain Python
dicts/heaps over the bipartite graph, exact integer arithmetic throughout.

Guarded to small instances (resolution <= 8 or at most 128 positive pixels
per side) because the dense Dijkstra sweep is quadratic per augmentation.
"""

from __future__ import annotations

import heapq

from .measures import Instance

__all__ = ["oracle_solve", "OracleSizeError"]

_MAX_RESOLUTION = 8
_MAX_POSITIVE = 128
_INF = float("inf")


class OracleSizeError(ValueError):
    """Instance exceeds the oracle's size guard."""


def oracle_solve(instance: Instance) -> int:
    """Exact optimal objective (Python int) for a small balanced instance."""
    if not instance.cost.integer_valued:
        raise ValueError("oracle requires integer costs (p=2, pixel-integer convention)")
    res = instance.resolution
    mu = instance.source.masses
    nu = instance.target.masses
    src_px = [int(i) for i in range(res * res) if mu[i] > 0]
    tgt_px = [int(j) for j in range(res * res) if nu[j] > 0]
    m, n = len(src_px), len(tgt_px)
    if res > _MAX_RESOLUTION and (m > _MAX_POSITIVE or n > _MAX_POSITIVE):
        raise OracleSizeError(
            f"instance too large for oracle: resolution {res}, {m} sources, {n} targets"
        )

    # node ids: sources 0..m-1, targets m..m+n-1
    cost_row = []
    for p in src_px:
        ri, ci = divmod(p, res)
        row = []
        for q in tgt_px:
            rj, cj = divmod(q, res)
            row.append((ri - rj) ** 2 + (ci - cj) ** 2)
        cost_row.append(row)

    supply = [int(mu[p]) for p in src_px]
    demand = [int(nu[q]) for q in tgt_px]
    flow = [dict() for _ in range(m)]  # flow[s][t] > 0
    back = [dict() for _ in range(n)]  # back[t][s] = flow for residual arcs
    pot = [0] * (m + n)  # Johnson potentials; reduced cost c + pot[a] - pot[b] >= 0

    remaining = sum(supply)
    while remaining > 0:
        dist = [_INF] * (m + n)
        prev = [-1] * (m + n)
        heap = []
        for s in range(m):
            if supply[s] > 0:
                dist[s] = 0
                heapq.heappush(heap, (0, s))
        done = [False] * (m + n)
        while heap:
            d, node = heapq.heappop(heap)
            if done[node] or d > dist[node]:
                continue
            done[node] = True
            if node < m:
                crow, ps = cost_row[node], pot[node]
                for t in range(n):
                    nd = d + crow[t] + ps - pot[m + t]
                    if nd < dist[m + t]:
                        dist[m + t] = nd
                        prev[m + t] = node
                        heapq.heappush(heap, (nd, m + t))
            else:
                t = node - m
                for s in back[t]:
                    nd = d - cost_row[s][t] + pot[node] - pot[s]
                    if nd < dist[s]:
                        dist[s] = nd
                        prev[s] = node
                        heapq.heappush(heap, (nd, s))

        best_t = -1
        for t in range(n):
            if demand[t] > 0 and dist[m + t] < _INF:
                if best_t < 0 or dist[m + t] < dist[m + best_t]:
                    best_t = t
        if best_t < 0:
            raise RuntimeError("oracle: no augmenting path on a balanced instance")

        # trace path back to an originating source, collecting the bottleneck
        path = []  # (s, t, forward?) triples in reverse order
        node = m + best_t
        bottleneck = demand[best_t]
        while True:
            p = prev[node]
            if node >= m:  # arrived at a target via forward arc p -> node
                path.append((p, node - m, True))
                node = p
                if prev[node] == -1:
                    break
            else:  # arrived at a source via residual arc p -> node
                t = p - m
                bottleneck = min(bottleneck, back[t][node])
                path.append((node, t, False))
                node = p
        first_s = node
        bottleneck = min(bottleneck, supply[first_s])
        assert bottleneck > 0

        for s, t, forward in path:
            if forward:
                f = flow[s].get(t, 0) + bottleneck
                flow[s][t] = f
                back[t][s] = f
            else:
                f = flow[s][t] - bottleneck
                if f == 0:
                    del flow[s][t]
                    del back[t][s]
                else:
                    flow[s][t] = f
                    back[t][s] = f
        supply[first_s] -= bottleneck
        demand[best_t] -= bottleneck
        remaining -= bottleneck

        cap = dist[m + best_t]
        for v in range(m + n):
            pot[v] += min(dist[v], cap) if dist[v] < _INF else cap

    total = 0
    for s in range(m):
        for t, f in flow[s].items():
            total += cost_row[s][t] * f
    return total
