"""Evidence-network graph for one (endpoint, estimand) slice.

Treatments are nodes; every contrast contributes one edge (parallel edges
are kept, since each carries independent evidence).  Connectivity is
decided twice -- by breadth-first traversal and by the rank of the
inverse-variance-weighted Laplacian -- and the two answers must agree.
"""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .estimands import canonical
from .ingest import ContrastEstimate

_RANK_EPS = 1e-12


class NetworkError(ValueError):
    pass


class ConnectivityCheckError(RuntimeError):
    """Traversal and Laplacian-rank connectivity disagree (degenerate weights)."""


@dataclass(frozen=True)
class Edge:
    trial_id: str
    treatment: str
    comparator: str
    contrast_index: int
    weight: float  # 1 / se^2


@dataclass(frozen=True)
class EvidenceNetwork:
    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    trial_designs: Mapping[str, frozenset[str]]
    contrasts: tuple[ContrastEstimate, ...] = ()

    def node_index(self, treatment: str) -> int:
        key = canonical(treatment)
        for i, node in enumerate(self.nodes):
            if canonical(node) == key:
                return i
        raise NetworkError(f"unknown treatment {treatment!r}")

    def adjacency(self) -> dict[int, list[tuple[int, int]]]:
        """node index -> [(neighbour index, edge index)] in deterministic order."""
        adj: dict[int, list[tuple[int, int]]] = {i: [] for i in range(len(self.nodes))}
        for e_idx, edge in enumerate(self.edges):
            u, v = self.node_index(edge.treatment), self.node_index(edge.comparator)
            adj[u].append((v, e_idx))
            adj[v].append((u, e_idx))
        for entries in adj.values():
            entries.sort()
        return adj


def build_network(contrasts: Sequence[ContrastEstimate]) -> EvidenceNetwork:
    """Build the slice graph; deterministic regardless of input order."""
    if not contrasts:
        raise NetworkError("cannot build a network from an empty contrast list")
    endpoints = {c.endpoint for c in contrasts}
    if len(endpoints) > 1:
        raise NetworkError(f"contrasts mix endpoints: {sorted(endpoints)}")

    ordered = sorted(
        range(len(contrasts)),
        key=lambda i: (contrasts[i].trial_id, canonical(contrasts[i].treatment), canonical(contrasts[i].comparator)),
    )
    nodes: dict[str, str] = {}  # canonical -> display, insertion ordered
    edges: list[Edge] = []
    designs: dict[str, set[str]] = {}
    for i in ordered:
        c = contrasts[i]
        for t in (c.treatment, c.comparator):
            nodes.setdefault(canonical(t), t)
        edges.append(
            Edge(
                trial_id=c.trial_id,
                treatment=c.treatment,
                comparator=c.comparator,
                contrast_index=i,
                weight=1.0 / c.se**2,
            )
        )
        designs.setdefault(c.trial_id, set()).update({c.treatment, c.comparator})
    return EvidenceNetwork(
        nodes=tuple(nodes.values()),
        edges=tuple(edges),
        trial_designs={tid: frozenset(arms) for tid, arms in sorted(designs.items())},
        contrasts=tuple(contrasts[i] for i in ordered),
    )


def laplacian(net: EvidenceNetwork) -> np.ndarray:
    """Weighted graph Laplacian, edge weights 1/se^2."""
    n = len(net.nodes)
    lap = np.zeros((n, n))
    for edge in net.edges:
        u, v = net.node_index(edge.treatment), net.node_index(edge.comparator)
        lap[u, u] += edge.weight
        lap[v, v] += edge.weight
        lap[u, v] -= edge.weight
        lap[v, u] -= edge.weight
    return lap


def laplacian_connected(net: EvidenceNetwork) -> bool:
    n = len(net.nodes)
    if n <= 1:
        return True
    eigenvalues = np.linalg.eigvalsh(laplacian(net))
    threshold = max(abs(eigenvalues[0]), abs(eigenvalues[-1])) * n * _RANK_EPS
    rank = int(np.sum(eigenvalues > threshold))
    return rank == n - 1


def connected_components(net: EvidenceNetwork) -> tuple[tuple[str, ...], ...]:
    """Partition of nodes into components, both deterministically ordered."""
    adj = net.adjacency()
    unvisited = dict.fromkeys(range(len(net.nodes)))
    components: list[tuple[str, ...]] = []
    while unvisited:
        start = next(iter(unvisited))
        queue: deque[int] = deque([start])
        del unvisited[start]
        members = [start]
        while queue:
            node = queue.popleft()
            for neighbour, _ in adj[node]:
                if neighbour in unvisited:
                    del unvisited[neighbour]
                    members.append(neighbour)
                    queue.append(neighbour)
        components.append(tuple(net.nodes[i] for i in sorted(members)))
    return tuple(components)


def is_connected(net: EvidenceNetwork) -> bool:
    """True iff one undirected component spans all nodes.

    Computed by traversal and cross-checked against the Laplacian rank
    criterion; a disagreement indicates a numerical problem and raises.
    """
    if not net.nodes:
        raise NetworkError("network has no nodes")
    by_traversal = len(connected_components(net)) == 1
    by_rank = laplacian_connected(net)
    if by_traversal != by_rank:
        raise ConnectivityCheckError(
            f"connectivity checks disagree (traversal={by_traversal}, laplacian={by_rank}); "
            "edge weights span too many orders of magnitude"
        )
    return by_traversal


def anchoring_path(net: EvidenceNetwork, a: str, b: str) -> Optional[tuple[Edge, ...]]:
    """Shortest path (by edge count) between two treatments, or None.

    Ties are broken by deterministic node order; between parallel edges the
    lowest-index edge is used.
    """
    start, goal = net.node_index(a), net.node_index(b)
    if start == goal:
        return ()
    adj = net.adjacency()
    previous: dict[int, tuple[int, int]] = {}  # node -> (parent node, edge index)
    queue: deque[int] = deque([start])
    seen = {start}
    while queue:
        node = queue.popleft()
        for neighbour, e_idx in adj[node]:
            if neighbour in seen:
                continue
            seen.add(neighbour)
            previous[neighbour] = (node, e_idx)
            if neighbour == goal:
                queue.clear()
                break
            queue.append(neighbour)
    if goal not in previous:
        return None
    path: list[Edge] = []
    node = goal
    while node != start:
        parent, e_idx = previous[node]
        path.append(net.edges[e_idx])
        node = parent
    return tuple(reversed(path))


def export_edge_list(net: EvidenceNetwork) -> str:
    """One edge per line: trial_id, treatment, comparator, weight."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    for edge in net.edges:
        writer.writerow([edge.trial_id, edge.treatment, edge.comparator, repr(edge.weight)])
    return out.getvalue()
