"""Search-space definitions: validity rules, fixed-size tensor encoding, keys, enumeration.

Three spaces are supported:

* ``nb101`` -- node-labeled cells with up to 7 nodes (input, output, conv3x3,
  conv1x1, maxpool3x3) and unlabeled edges.  Smaller cells are padded with an
  extra "absent" node category so every tensor has 7 nodes.
* ``nb201`` -- 4-node complete upper-triangular cells whose 6 edges carry one of
  5 operations (category 0 is the ``none`` operation, i.e. no edge).
* ``synthetic`` -- any DAG with a fixed node count and configurable label sets.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .dag import NO_EDGE, Dag, OrderedDag, is_acyclic, recover_dag, topological_order

NB101_OPS = ("input", "output", "conv3x3-bn-relu", "conv1x1-bn-relu", "maxpool3x3")
NB101_ABSENT = len(NB101_OPS)
NB101_MAX_EDGES = 9
NB201_OPS = ("none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3")

DEFAULT_ENUM_CAP = 10**6


class SpaceTooLarge(RuntimeError):
    pass


class InvalidArchitecture(ValueError):
    pass


@dataclass(frozen=True)
class SpaceSpec:
    name: str
    max_nodes: int
    node_categories: int
    edge_categories: int
    validity: str

    def __post_init__(self):
        if self.validity not in ("nb101", "nb201", "synthetic"):
            raise ValueError(f"unknown validity rule set {self.validity!r}")
        if self.max_nodes < 1 or self.node_categories < 1 or self.edge_categories < 2:
            raise ValueError("space needs >=1 node, >=1 node category and >=2 edge categories")

    @property
    def num_edge_cells(self) -> int:
        return self.max_nodes * (self.max_nodes - 1) // 2

    @property
    def absent_label(self) -> int | None:
        return NB101_ABSENT if self.validity == "nb101" else None

    def upper_indices(self) -> tuple[np.ndarray, np.ndarray]:
        return np.triu_indices(self.max_nodes, k=1)


def nb101() -> SpaceSpec:
    return SpaceSpec("nb101", 7, len(NB101_OPS) + 1, 2, "nb101")


def nb201() -> SpaceSpec:
    return SpaceSpec("nb201", 4, 1, len(NB201_OPS), "nb201")


def synthetic(nodes: int = 5, node_categories: int = 2, edge_categories: int = 3) -> SpaceSpec:
    return SpaceSpec("synthetic", nodes, node_categories, edge_categories, "synthetic")


def space_by_name(name: str, **synthetic_kw) -> SpaceSpec:
    if name == "nb101":
        return nb101()
    if name == "nb201":
        return nb201()
    if name == "synthetic":
        return synthetic(**synthetic_kw)
    raise ValueError(f"unknown space {name!r}")


@dataclass
class ValidityReport:
    violations: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.valid


def _reachable(adj: np.ndarray, start: int) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        i = stack.pop()
        for j in np.flatnonzero(adj[i]):
            if int(j) not in seen:
                seen.add(int(j))
                stack.append(int(j))
    return seen


def validate(g: Dag, spec: SpaceSpec) -> ValidityReport:
    report = ValidityReport()
    bad = report.violations
    if g.n > spec.max_nodes:
        bad.append(f"too many nodes ({g.n} > {spec.max_nodes})")
    if g.node_labels.max() >= spec.node_categories:
        bad.append("node label out of range")
    if g.edges.max() >= spec.edge_categories:
        bad.append("edge label out of range")
    acyclic = is_acyclic(g)
    if not acyclic:
        bad.append("acyclic")

    if spec.validity == "nb201":
        if g.n != 4:
            bad.append("nb201 skeleton: exactly 4 nodes")
        elif np.any(np.tril(g.edges) != NO_EDGE):
            bad.append("nb201 skeleton: edges must run from lower to higher node index")
        if np.any(g.node_labels != 0):
            bad.append("nb201 skeleton: nodes carry no operation")

    elif spec.validity == "nb101":
        labels = g.node_labels
        adj = g.edges != NO_EDGE
        indeg, outdeg = adj.sum(axis=0), adj.sum(axis=1)
        if np.any(labels == NB101_ABSENT):
            bad.append("absent node")
        inputs = np.flatnonzero(labels == 0)
        outputs = np.flatnonzero(labels == 1)
        if len(inputs) != 1:
            bad.append("single input")
        elif indeg[inputs[0]] != 0:
            bad.append("input in-degree 0")
        if len(outputs) != 1:
            bad.append("single output")
        elif outdeg[outputs[0]] != 0:
            bad.append("output out-degree 0")
        if g.num_edges > NB101_MAX_EDGES:
            bad.append(f"max {NB101_MAX_EDGES} edges")
        if len(inputs) == 1 and len(outputs) == 1:
            from_in = _reachable(adj, int(inputs[0]))
            to_out = _reachable(adj.T, int(outputs[0]))
            if len(from_in & to_out) != g.n:
                bad.append("all nodes on an input-output path")
    return report


def arch_key(g: Dag, spec: SpaceSpec) -> str:
    report = validate(g, spec)
    if not report:
        raise InvalidArchitecture(f"{spec.name}: {', '.join(report.violations)}")
    return f"{spec.name}:{topological_order(g).to_json()}"


def decode_key(key: str) -> tuple[str, Dag]:
    """Inverse of :func:`arch_key`: returns the space name and the canonical graph."""
    name, sep, body = key.partition(":")
    if not sep or not name:
        raise KeyError(f"malformed architecture key {key!r}")
    try:
        return name, Dag.from_dict(json.loads(body))
    except (ValueError, TypeError, KeyError) as exc:
        raise KeyError(f"cannot decode architecture key {key!r}: {exc}") from None


def encode(g: Dag, spec: SpaceSpec) -> tuple[np.ndarray, np.ndarray]:
    """Canonically ordered, padded label tensors: node labels ``(max_nodes,)`` and
    upper-triangle edge cells ``(max_nodes*(max_nodes-1)/2,)`` in row-major order."""
    og = topological_order(g)
    n = og.n
    if n > spec.max_nodes:
        raise InvalidArchitecture(f"{n} nodes exceed max {spec.max_nodes}")
    if n < spec.max_nodes and spec.absent_label is None:
        raise InvalidArchitecture(f"{spec.name} graphs must have exactly {spec.max_nodes} nodes")
    nodes = np.full(spec.max_nodes, spec.absent_label if n < spec.max_nodes else 0, dtype=np.int64)
    nodes[:n] = og.node_labels
    full = np.zeros((spec.max_nodes, spec.max_nodes), dtype=np.int64)
    full[:n, :n] = og.edges
    return nodes, full[spec.upper_indices()]


def decode(nodes: np.ndarray, edge_cells: np.ndarray, spec: SpaceSpec) -> OrderedDag:
    """Generated label tensors -> acyclic graph (absent nodes and their edges dropped)."""
    full = np.zeros((spec.max_nodes, spec.max_nodes), dtype=np.int64)
    full[spec.upper_indices()] = edge_cells
    g = recover_dag(full, nodes)
    absent = spec.absent_label
    if absent is None:
        return g
    keep = np.flatnonzero(g.node_labels != absent)
    if len(keep) == 0:
        keep = np.array([0])
    return OrderedDag(g.node_labels[keep], g.edges[np.ix_(keep, keep)])


def estimated_size(spec: SpaceSpec) -> int:
    if spec.validity == "nb101":
        # loose upper bound over labelings and upper-triangular adjacency
        return (len(NB101_OPS) ** spec.max_nodes) * (2 ** spec.num_edge_cells)
    if spec.validity == "nb201":
        return spec.edge_categories ** spec.num_edge_cells
    return spec.node_categories ** spec.max_nodes * spec.edge_categories ** spec.num_edge_cells


def enumerate_space(spec: SpaceSpec, cap: int = DEFAULT_ENUM_CAP) -> Iterator[OrderedDag]:
    size = estimated_size(spec)
    if spec.validity == "nb101" or size > cap:
        raise SpaceTooLarge(f"{spec.name}: ~{size} architectures exceeds cap {cap}")
    return _enumerate(spec)


def _enumerate(spec: SpaceSpec) -> Iterator[OrderedDag]:
    n, m = spec.max_nodes, spec.num_edge_cells
    rows, cols = spec.upper_indices()
    node_choices = [0] if spec.validity == "nb201" else range(spec.node_categories)
    for labels in itertools.product(node_choices, repeat=n):
        for cells in itertools.product(range(spec.edge_categories), repeat=m):
            edges = np.zeros((n, n), dtype=np.int64)
            edges[rows, cols] = cells
            yield OrderedDag(labels, edges)


def uniform_sample(spec: SpaceSpec, rng: np.random.Generator, size: int) -> list[OrderedDag]:
    """Uniform random architectures of a fixed-size space (nb201 / synthetic)."""
    if spec.validity == "nb101":
        raise ValueError("uniform sampling of nb101 requires the benchmark table")
    n, m = spec.max_nodes, spec.num_edge_cells
    a = 1 if spec.validity == "nb201" else spec.node_categories
    labels = rng.integers(0, a, size=(size, n))
    cells = rng.integers(0, spec.edge_categories, size=(size, m))
    return [decode(labels[i], cells[i], spec) for i in range(size)]


def nb201_from_string(arch: str) -> Dag:
    """Parse the benchmark's ``|op~0|+|op~0|op~1|+|op~0|op~1|op~2|`` cell string."""
    edges = np.zeros((4, 4), dtype=np.int64)
    stages = arch.strip().split("+")
    if len(stages) != 3:
        raise ValueError(f"expected 3 stages in {arch!r}")
    for j, stage in enumerate(stages, start=1):
        ops = [tok for tok in stage.split("|") if tok]
        if len(ops) != j:
            raise ValueError(f"stage {j} of {arch!r} should list {j} inputs")
        for tok in ops:
            op, _, src = tok.partition("~")
            edges[int(src), j] = NB201_OPS.index(op)
    return Dag([0, 0, 0, 0], edges)


def nb101_from_spec(matrix, ops: list[str]) -> Dag:
    """Build an nb101 Dag from the benchmark's (adjacency matrix, op list) pair."""
    labels = [NB101_OPS.index(op) for op in ops]
    return Dag(labels, np.asarray(matrix, dtype=np.int64))
