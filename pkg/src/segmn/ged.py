"""Exact graph edit distance for small graphs.

``exact_ged_astar`` is the label generator; ``brute_force_ged`` enumerates
every partial injective node mapping and exists to check it.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass
from math import exp

import numpy as np
from scipy.optimize import linear_sum_assignment

from .graphs import NodeGraph


class GEDTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class EditCostModel:
    node_insert: float = 1
    node_delete: float = 1
    node_relabel: float = 1
    edge_insert: float = 1
    edge_delete: float = 1

    def __post_init__(self):
        if min(self.node_insert, self.node_delete, self.node_relabel, self.edge_insert, self.edge_delete) < 0:
            raise ValueError("edit costs must be non-negative")


UNIT_COSTS = EditCostModel()


def _masks(g: NodeGraph) -> list[int]:
    adj = [0] * g.num_nodes
    for i, j in g.edges:
        adj[i] |= 1 << j
        adj[j] |= 1 << i
    return adj


def _popcount(x: int) -> int:
    return bin(x).count("1")


def exact_ged_astar(g1: NodeGraph, g2: NodeGraph, cost: EditCostModel = UNIT_COSTS, node_budget: int = 10) -> float:
    """A* over partial mappings of g1's nodes (in descending-degree order)
    onto g2's nodes or deletion.

    Lower bound for a partial state: an optimal assignment of the remaining
    g1 nodes to the free g2 nodes (or to deletion / insertion), where each
    entry prices the node edit plus the edges towards already processed
    nodes, plus the difference in edge counts among the remaining nodes on
    each side. The two parts cover disjoint edge sets, so the sum is admissible.
    """
    n1, n2 = g1.num_nodes, g2.num_nodes
    if max(n1, n2) > node_budget:
        raise GEDTooLargeError(f"graphs with {n1} and {n2} nodes are too large for exact GED (node budget {node_budget})")
    lab1, lab2 = g1.labels_or_zero(), g2.labels_or_zero()
    adj1, adj2 = _masks(g1), _masks(g2)
    deg1 = [_popcount(a) for a in adj1]
    order = sorted(range(n1), key=lambda u: (-deg1[u], u))
    full2 = (1 << n2) - 1
    c = cost

    # edges among the unprocessed g1 nodes once the first k of `order` are done
    rest_mask = [0] * (n1 + 1)
    for k in range(n1 - 1, -1, -1):
        rest_mask[k] = rest_mask[k + 1] | (1 << order[k])
    inner1 = [sum(_popcount(adj1[u] & rest_mask[k]) for u in order[k:]) // 2 for k in range(n1 + 1)]

    def edge_diff(e1: int, e2: int) -> float:
        return (e1 - e2) * c.edge_delete if e1 > e2 else (e2 - e1) * c.edge_insert

    def h(k: int, used: int, images: tuple) -> float:
        free = [t for t in range(n2) if not (used >> t) & 1]
        rest = order[k:]
        r, f = len(rest), len(free)
        freemask = full2 & ~used
        inner2 = sum(_popcount(adj2[t] & freemask) for t in free) // 2
        bound = edge_diff(inner1[k], inner2)
        if r == 0 and f == 0:
            return bound
        # processed neighbours of each remaining u: images in g2 (mask) and deleted count
        ins_t = [_popcount(adj2[t] & used) * c.edge_insert + c.node_insert for t in free]
        m = np.zeros((r + f, r + f))
        for a, u in enumerate(rest):
            mapped, dele = 0, 0
            for w, tw in zip(order[:k], images):
                if (adj1[u] >> w) & 1:
                    if tw >= 0:
                        mapped |= 1 << tw
                    else:
                        dele += 1
            row = m[a]
            for b, t in enumerate(free):
                nb = adj2[t] & used
                row[b] = (
                    (0 if lab1[u] == lab2[t] else c.node_relabel)
                    + (dele + _popcount(mapped & ~nb)) * c.edge_delete
                    + _popcount(nb & ~mapped) * c.edge_insert
                )
            row[f:] = np.inf
            row[f + a] = c.node_delete + (dele + _popcount(mapped)) * c.edge_delete
        for b in range(f):
            m[r:, b] = np.inf
            m[r + b, b] = ins_t[b]
        # dummy-to-dummy entries stay 0
        ri, ci = linear_sum_assignment(m)
        return bound + float(m[ri, ci].sum())

    tie = itertools.count()
    # (f, -depth, tiebreak, g, depth, used-mask, images, goal)
    heap = [(h(0, 0, ()), 0, next(tie), 0.0, 0, 0, (), False)]
    while heap:
        _, _, _, gcost, k, used, images, goal = heapq.heappop(heap)
        if goal:
            return gcost
        if k == n1:
            free = full2 & ~used
            extra = _popcount(free) * c.node_insert
            extra += sum(1 for a, b in g2.edges if (free >> a) & 1 or (free >> b) & 1) * c.edge_insert
            heapq.heappush(heap, (gcost + extra, -k - 1, next(tie), gcost + extra, k, used, images, True))
            continue
        u = order[k]
        for t in itertools.chain(range(n2), (-1,)):
            if t >= 0 and (used >> t) & 1:
                continue
            if t < 0:
                step = c.node_delete
            else:
                step = 0.0 if lab1[u] == lab2[t] else c.node_relabel
            for w, tw in zip(order[:k], images):
                e1 = (adj1[u] >> w) & 1
                e2 = t >= 0 and tw >= 0 and (adj2[t] >> tw) & 1
                if e1 and not e2:
                    step += c.edge_delete
                elif e2 and not e1:
                    step += c.edge_insert
            nused = used | (1 << t) if t >= 0 else used
            nimg = images + (t,)
            ng = gcost + step
            heapq.heappush(heap, (ng + h(k + 1, nused, nimg), -(k + 1), next(tie), ng, k + 1, nused, nimg, False))
    raise AssertionError("search space exhausted without a goal")  # unreachable: a complete mapping always exists


def edit_cost(g1: NodeGraph, g2: NodeGraph, mapping: dict[int, int], cost: EditCostModel = UNIT_COSTS) -> float:
    """Cost of the edit path induced by a partial injective mapping g1 -> g2.

    Unmapped g1 nodes are deleted, unmapped g2 nodes inserted.
    """
    lab1, lab2 = g1.labels_or_zero(), g2.labels_or_zero()
    total = 0.0
    for u in range(g1.num_nodes):
        if u in mapping:
            total += 0 if lab1[u] == lab2[mapping[u]] else cost.node_relabel
        else:
            total += cost.node_delete
    total += (g2.num_nodes - len(mapping)) * cost.node_insert
    e1 = set(g1.edges)
    e2 = set(g2.edges)
    mapped_e1 = set()
    for i, j in e1:
        if i in mapping and j in mapping:
            a, b = mapping[i], mapping[j]
            img = (min(a, b), max(a, b))
            if img in e2:
                mapped_e1.add(img)
                continue
        total += cost.edge_delete
    total += (len(e2) - len(mapped_e1)) * cost.edge_insert
    return total


def brute_force_ged(g1: NodeGraph, g2: NodeGraph, cost: EditCostModel = UNIT_COSTS, max_nodes: int = 6) -> float:
    n1, n2 = g1.num_nodes, g2.num_nodes
    if max(n1, n2) > max_nodes:
        raise GEDTooLargeError(f"brute force GED limited to {max_nodes} nodes, got {n1} and {n2}")
    best = float("inf")
    for k in range(min(n1, n2) + 1):
        for src in itertools.combinations(range(n1), k):
            for dst in itertools.permutations(range(n2), k):
                best = min(best, edit_cost(g1, g2, dict(zip(src, dst)), cost))
    return best


def normalized_target(ged: float, n1: int, n2: int) -> float:
    """exp(-ged / mean node count): 1 for identical graphs, decreasing in ged."""
    if ged < 0:
        raise ValueError("ged must be non-negative")
    return exp(-ged / ((n1 + n2) / 2.0))
