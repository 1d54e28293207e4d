"""Undirected communication topology among estimator nodes.

Nodes are indexed 1..N.  Edges are unordered pairs; the neighbor
enumeration is fixed to ascending node index so that every block-matrix
layout built on top of the graph is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field


def _normalize_edges(node_count: int, edges) -> frozenset:
    norm = set()
    for e in edges:
        k, j = e
        k, j = int(k), int(j)
        if k == j:
            raise ValueError(f"self-loop ({k},{j}) is not allowed")
        if not (1 <= k <= node_count and 1 <= j <= node_count):
            raise ValueError(f"edge ({k},{j}) out of range 1..{node_count}")
        norm.add((min(k, j), max(k, j)))
    return frozenset(norm)


@dataclass(frozen=True)
class CommGraph:
    """Undirected, unweighted communication graph.

    Immutable after construction; safe for concurrent reads.
    """

    node_count: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if int(self.node_count) < 1:
            raise ValueError("node_count must be a positive integer")
        object.__setattr__(self, "node_count", int(self.node_count))
        object.__setattr__(self, "edges", _normalize_edges(self.node_count, self.edges))

    def _check_node(self, k: int) -> int:
        k = int(k)
        if not 1 <= k <= self.node_count:
            raise ValueError(f"node index {k} out of range 1..{self.node_count}")
        return k

    def neighbors(self, k: int) -> list[int]:
        """Neighbors of node ``k``, sorted ascending."""
        k = self._check_node(k)
        out = []
        for a, b in self.edges:
            if a == k:
                out.append(b)
            elif b == k:
                out.append(a)
        return sorted(out)

    def degree(self, k: int) -> int:
        """Number of neighbors of node ``k``."""
        return len(self.neighbors(k))

    def has_edge(self, k: int, j: int) -> bool:
        k = self._check_node(k)
        j = self._check_node(j)
        return (min(k, j), max(k, j)) in self.edges

    def edge_list(self) -> list[tuple[int, int]]:
        """Edges as sorted (low, high) pairs, deterministic order."""
        return sorted(self.edges)


def ring(n: int) -> CommGraph:
    """Ring topology 1-2-...-n-1 (n >= 3; n <= 2 degenerates to a path/pair)."""
    n = int(n)
    if n < 1:
        raise ValueError("ring needs at least one node")
    if n == 1:
        return CommGraph(1, frozenset())
    edges = {(k, k + 1) for k in range(1, n)}
    if n > 2:
        edges.add((1, n))
    return CommGraph(n, frozenset(edges))


def complete(n: int) -> CommGraph:
    """Complete graph on n nodes."""
    n = int(n)
    edges = {(k, j) for k in range(1, n + 1) for j in range(k + 1, n + 1)}
    return CommGraph(n, frozenset(edges))


def from_edges(node_count: int, pairs) -> CommGraph:
    """Graph from an explicit edge list of (k, j) pairs (1-based)."""
    return CommGraph(node_count, frozenset((int(k), int(j)) for k, j in pairs))
