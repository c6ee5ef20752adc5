"""Min-cost transshipment by successive shortest paths with node potentials.

Supplies and arc costs are integers, so the optimal cost is exact (the final
sum uses Python ints). Each round runs one multi-source Dijkstra on reduced
costs, then augments along the shortest-path tree to every reachable sink;
those paths stay shortest because reversed tree arcs have zero reduced cost.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra


def scale_to_integers(mu: np.ndarray, total: int) -> np.ndarray:
    """Round ``mu * total`` to integers summing exactly to ``total`` (largest remainder)."""
    scaled = np.asarray(mu, dtype=float) * total
    base = np.floor(scaled).astype(np.int64)
    short = int(total - base.sum())
    if short > 0:
        order = np.argsort(-(scaled - base), kind="stable")
        base[order[:short]] += 1
    elif short < 0:
        order = np.argsort(scaled - base, kind="stable")
        base[order[: -short]] -= 1
    return base


def edges_from_dense(costs: np.ndarray) -> tuple:
    """Undirected edge list ``(tails, heads, costs)`` from a symmetric dense matrix."""
    costs = np.asarray(costs, dtype=float)
    tails, heads = np.nonzero(np.triu(np.isfinite(costs), k=1))
    return tails, heads, costs[tails, heads]


def min_cost_transshipment(costs: np.ndarray, supply: np.ndarray) -> tuple:
    """Solve ``min sum cost * |flow|`` moving ``supply`` (positive = source) to the deficits.

    ``costs`` is a dense symmetric ``(n, n)`` integer matrix with ``inf`` for
    missing edges; edges are uncapacitated in both directions. Returns
    ``(total_cost, edge_flows)`` with edge flows signed along ``tail -> head``
    of :func:`edges_from_dense`.
    """
    n = len(supply)
    tails, heads, cost = edges_from_dense(costs)
    n_edges = len(tails)
    excess = np.asarray(supply, dtype=np.int64).copy()
    if excess.sum() != 0:
        raise ValueError("supplies must balance")
    flow = np.zeros(n_edges, dtype=np.int64)
    potential = np.zeros(n)
    arc_from = np.concatenate([tails, heads])
    arc_to = np.concatenate([heads, tails])
    edge_of = {}
    for e, (u, v) in enumerate(zip(tails.tolist(), heads.tolist())):
        edge_of[(u, v)] = (e, 1)
        edge_of[(v, u)] = (e, -1)
    while np.any(excess > 0):
        # moving against the current net flow cancels it at cost -c
        forward = np.where(flow < 0, -cost, cost)
        backward = np.where(flow > 0, -cost, cost)
        arc_cost = np.concatenate([forward, backward])
        reduced = np.maximum(arc_cost + potential[arc_from] - potential[arc_to], 0.0)
        # a tiny offset keeps zero-cost arcs stored; subtracted again below
        graph = csr_matrix((reduced + 1.0, (arc_from, arc_to)), shape=(n, n))
        graph.data -= 1.0
        sources = np.flatnonzero(excess > 0)
        dist, pred = dijkstra(graph, indices=sources, min_only=True, return_predecessors=True)[:2]
        sinks = np.flatnonzero(excess < 0)
        sinks = sinks[np.isfinite(dist[sinks])]
        if len(sinks) == 0:
            raise ValueError("demand unreachable from supply")
        cancel_dir = np.sign(flow)  # snapshot: which arcs were cancellation arcs in this tree
        for target in sinks[np.argsort(dist[sinks], kind="stable")].tolist():
            path = [target]
            while pred[path[-1]] >= 0:
                path.append(int(pred[path[-1]]))
            path.reverse()
            start = path[0]
            amount = min(int(excess[start]), int(-excess[target]))
            steps = [edge_of[(u, v)] for u, v in zip(path[:-1], path[1:])]
            for e, direction in steps:
                if cancel_dir[e] == -direction:
                    amount = min(amount, int(abs(flow[e])) if np.sign(flow[e]) == -direction else 0)
            if amount <= 0:
                continue
            for e, direction in steps:
                flow[e] += direction * amount
            excess[start] -= amount
            excess[target] += amount
        finite = np.isfinite(dist)
        potential += np.where(finite, dist, dist[finite].max())
    total = sum(int(c) * abs(int(f)) for c, f in zip(cost.astype(np.int64), flow) if f != 0)
    return total, flow
