"""Labeled DAGs, canonical topological ordering and the upper-triangular projection."""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

NO_EDGE = 0


class CycleDetected(ValueError):
    pass


class InvalidDim(ValueError):
    pass


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.int64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Dag:
    """Node- and edge-labeled directed graph.

    ``edges[i, j]`` holds the category of the edge ``i -> j``; 0 means no edge.
    Acyclicity is not enforced at construction so that raw generator output and
    hand-built cycles can be represented; use :func:`is_acyclic` to check.
    """

    node_labels: np.ndarray
    edges: np.ndarray

    def __post_init__(self):
        labels = _frozen(self.node_labels).reshape(-1)
        edges = _frozen(self.edges)
        n = labels.shape[0]
        if n < 1:
            raise ValueError("a Dag needs at least one node")
        if edges.shape != (n, n):
            raise ValueError(f"edge matrix must be {n}x{n}, got {edges.shape}")
        if np.any(np.diag(edges) != NO_EDGE):
            raise ValueError("self-loops are not allowed")
        if labels.min() < 0 or edges.min() < 0:
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "node_labels", labels)
        object.__setattr__(self, "edges", edges)

    @property
    def n(self) -> int:
        return int(self.node_labels.shape[0])

    @property
    def num_edges(self) -> int:
        return int(np.count_nonzero(self.edges))

    def edge_list(self) -> list[tuple[int, int, int]]:
        src, dst = np.nonzero(self.edges)
        return [(int(i), int(j), int(self.edges[i, j])) for i, j in zip(src, dst)]

    def labeled_triples(self) -> list[tuple[int, int, int]]:
        """Sorted (source label, edge label, target label) multiset."""
        return sorted(
            (int(self.node_labels[i]), c, int(self.node_labels[j]))
            for i, j, c in self.edge_list()
        )

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "node_labels": self.node_labels.tolist(),
            "edges": self.edges.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, obj: dict) -> "Dag":
        labels = obj["node_labels"]
        if "n" in obj and int(obj["n"]) != len(labels):
            raise ValueError(f"n={obj['n']} does not match {len(labels)} node labels")
        return cls(labels, obj["edges"])

    @classmethod
    def from_json(cls, text: str) -> "Dag":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, Dag):
            return NotImplemented
        return np.array_equal(self.node_labels, other.node_labels) and np.array_equal(
            self.edges, other.edges
        )

    def __hash__(self):
        return hash((self.node_labels.tobytes(), self.edges.tobytes()))

    def __repr__(self):
        return f"{type(self).__name__}(node_labels={self.node_labels.tolist()}, edges={self.edge_list()})"


@dataclass(frozen=True, eq=False, repr=False)
class OrderedDag(Dag):
    """A Dag whose edge matrix is strictly upper-triangular.

    ``order[k]`` is the index, in the source graph, of the node now at position k.
    """

    order: np.ndarray = field(default=None)

    def __post_init__(self):
        super().__post_init__()
        order = np.arange(self.n) if self.order is None else self.order
        order = _frozen(order).reshape(-1)
        if sorted(order.tolist()) != list(range(self.n)):
            raise ValueError(f"order {order.tolist()} is not a permutation of 0..{self.n - 1}")
        if np.any(np.tril(self.edges) != NO_EDGE):
            raise ValueError("OrderedDag edges must be strictly upper-triangular")
        object.__setattr__(self, "order", order)

    def as_dag(self) -> Dag:
        return Dag(self.node_labels, self.edges)


def kahn_order(edges: np.ndarray) -> list[int]:
    """Kahn's algorithm, always releasing the lowest-index ready node.

    Raises CycleDetected when some nodes never become ready.
    """
    edges = np.asarray(edges)
    n = edges.shape[0]
    adj = edges != NO_EDGE
    indeg = adj.sum(axis=0).astype(int)
    ready = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        i = heapq.heappop(ready)
        order.append(i)
        for j in np.flatnonzero(adj[i]):
            indeg[j] -= 1
            if indeg[j] == 0:
                heapq.heappush(ready, int(j))
    if len(order) != n:
        stuck = sorted(set(range(n)) - set(order))
        raise CycleDetected(f"directed cycle among nodes {stuck}")
    return order


def relabel(g: Dag, order: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Labels and edges of ``g`` with node ``order[k]`` moved to position k."""
    perm = np.asarray(order, dtype=np.int64)
    return g.node_labels[perm], g.edges[np.ix_(perm, perm)]


def topological_order(g: Dag) -> OrderedDag:
    order = kahn_order(g.edges)
    labels, edges = relabel(g, order)
    return OrderedDag(labels, edges, order=order)


def is_acyclic(g: Dag) -> bool:
    try:
        kahn_order(g.edges)
    except CycleDetected:
        return False
    return True


def recover_dag(raw_edges, node_labels) -> OrderedDag:
    """Project a generated edge matrix onto its strict upper triangle.

    Entries above the diagonal are kept verbatim, everything else becomes "no
    edge", so the result is acyclic under the identity ordering.
    """
    raw = np.asarray(raw_edges, dtype=np.int64)
    return OrderedDag(node_labels, np.triu(raw, k=1))


def positional_encoding(index: int, dim: int) -> np.ndarray:
    if dim <= 0 or dim % 2:
        raise InvalidDim(f"encoding width must be a positive even number, got {dim}")
    if index < 0:
        raise ValueError("index must be non-negative")
    freqs = 10000.0 ** (-np.arange(0, dim, 2) / dim)
    out = np.empty(dim)
    out[0::2] = np.sin(index * freqs)
    out[1::2] = np.cos(index * freqs)
    return out


def positional_table(max_nodes: int, dim: int) -> np.ndarray:
    """``max_nodes x dim`` matrix whose row i is ``positional_encoding(i, dim)``."""
    return np.stack([positional_encoding(i, dim) for i in range(max_nodes)])


def random_dag(rng: np.random.Generator, n: int, node_categories: int,
               edge_categories: int, edge_prob: float = 0.5) -> Dag:
    """Random acyclic graph with shuffled node indices (not upper-triangular)."""
    labels = rng.integers(0, node_categories, size=n)
    mask = np.triu(rng.random((n, n)) < edge_prob, k=1)
    cats = rng.integers(1, max(edge_categories, 2), size=(n, n))
    edges = np.where(mask, cats, NO_EDGE)
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    return Dag(labels[inv], edges[np.ix_(inv, inv)])
