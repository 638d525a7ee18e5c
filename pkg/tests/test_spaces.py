import itertools

import numpy as np
import pytest

from dagpo import spaces
from dagpo.dag import Dag, is_acyclic, random_dag, topological_order
from dagpo.spaces import (InvalidArchitecture, SpaceTooLarge, arch_key, decode, decode_key, encode,
                          enumerate_space, nb101, nb201, nb201_from_string, synthetic, validate)


def nb101_cell(labels, edge_list):
    e = np.zeros((len(labels), len(labels)), dtype=int)
    for i, j in edge_list:
        e[i, j] = 1
    return Dag(labels, e)


def test_space_shapes():
    s201 = nb201()
    assert s201.max_nodes == 4 and s201.num_edge_cells == 6 and s201.edge_categories == 5
    s101 = nb101()
    assert s101.max_nodes == 7 and s101.num_edge_cells == 21


def test_nb201_enumeration():
    keys = set()
    count = 0
    spec = nb201()
    for g in enumerate_space(spec):
        assert validate(g, spec)
        keys.add(arch_key(g, spec))
        count += 1
    assert count == 15625
    assert len(keys) == 15625


def test_nb201_random_assignments_valid():
    rng = np.random.default_rng(0)
    spec = nb201()
    for _ in range(50):
        cells = rng.integers(0, 5, size=6)
        assert validate(decode(np.zeros(4, dtype=int), cells, spec), spec)


def test_nb101_too_many_edges():
    # 7 nodes: input 0 -> everything, chain through the middle: 10 edges
    edges = [(0, k) for k in range(1, 7)] + [(1, 2), (2, 3), (3, 4), (4, 5)]
    g = nb101_cell([0, 2, 3, 4, 2, 3, 1], edges)
    assert g.num_edges == 10
    report = validate(g, nb101())
    assert not report
    assert "max 9 edges" in report.violations


def test_nb101_minimal_cell():
    assert validate(nb101_cell([0, 1], [(0, 1)]), nb101())


@pytest.mark.parametrize("labels, edges, rule", [
    ([0, 2, 1], [(0, 2)], "all nodes on an input-output path"),
    ([0, 0, 1], [(0, 2), (1, 2)], "single input"),
    ([0, 1, 1], [(0, 1), (0, 2)], "single output"),
    ([0, 5, 1], [(0, 1), (1, 2)], "absent node"),
])
def test_nb101_rule_violations(labels, edges, rule):
    report = validate(nb101_cell(labels, edges), nb101())
    assert rule in report.violations


def test_synthetic_rules_only_acyclicity():
    spec = synthetic(3, 2, 2)
    assert validate(Dag([1, 1, 1], np.zeros((3, 3), dtype=int)), spec)
    assert "acyclic" in validate(Dag([0, 0, 0], [[0, 1, 0], [0, 0, 1], [1, 0, 0]]), spec).violations


def test_arch_key_canonical():
    spec = synthetic(5, 3, 3)
    rng = np.random.default_rng(3)
    for _ in range(50):
        g = random_dag(rng, 5, 3, 3)
        assert arch_key(g, spec) == arch_key(g, spec)
        assert arch_key(g, spec) == arch_key(topological_order(g), spec)
        perm = rng.permutation(5)
        shuffled = Dag(g.node_labels[perm], g.edges[np.ix_(perm, perm)])
        # a topologically sorted relabeling canonicalizes identically
        og = topological_order(shuffled)
        assert arch_key(og, spec) == arch_key(topological_order(og), spec)


def test_arch_key_decodes():
    spec = nb201()
    g = nb201_from_string("|nor_conv_3x3~0|+|nor_conv_3x3~0|nor_conv_3x3~1|+|skip_connect~0|nor_conv_3x3~1|nor_conv_3x3~2|")
    name, back = decode_key(arch_key(g, spec))
    assert name == "nb201" and back == topological_order(g)


def test_arch_key_rejects_invalid():
    with pytest.raises(InvalidArchitecture):
        arch_key(nb101_cell([0, 2, 1], [(0, 2)]), nb101())


def brute_force_count(n, node_cats, edge_cats, spec):
    """All labeled n x n matrices (lower triangle included), canonicalized."""
    keys = set()
    off = [(i, j) for i in range(n) for j in range(n) if i != j]
    for labels in itertools.product(range(node_cats), repeat=n):
        for cats in itertools.product(range(edge_cats), repeat=len(off)):
            e = np.zeros((n, n), dtype=int)
            for (i, j), c in zip(off, cats):
                e[i, j] = c
            g = Dag(labels, e)
            if is_acyclic(g):
                keys.add(arch_key(g, spec))
    return len(keys)


def test_synthetic_enumeration_matches_brute_force():
    spec = synthetic(3, 2, 2)
    items = list(enumerate_space(spec))
    keys = {arch_key(g, spec) for g in items}
    assert len(keys) == len(items)
    assert len(items) == brute_force_count(3, 2, 2, spec)
    assert all(validate(g, spec) for g in items)


def test_enumeration_cap():
    with pytest.raises(SpaceTooLarge):
        enumerate_space(nb101())
    with pytest.raises(SpaceTooLarge):
        enumerate_space(synthetic(7, 3, 3))


def test_encode_decode_round_trip_nb101():
    spec = nb101()
    g = nb101_cell([1, 0, 3], [(1, 2), (2, 0), (1, 0)])
    nodes, cells = encode(g, spec)
    assert nodes.tolist() == [0, 3, 1, 5, 5, 5, 5]
    back = decode(nodes, cells, spec)
    assert back == topological_order(g)
    assert validate(back, spec)


def test_decode_drops_absent_incident_edges():
    spec = nb101()
    nodes = np.array([0, 5, 1, 5, 5, 5, 5])
    full = np.zeros((7, 7), dtype=int)
    full[0, 1] = full[1, 2] = full[0, 2] = 1
    g = decode(nodes, full[np.triu_indices(7, 1)], spec)
    assert g.node_labels.tolist() == [0, 1]
    assert g.edges.tolist() == [[0, 1], [0, 0]]


def test_nb201_string_parse():
    g = nb201_from_string("|none~0|+|skip_connect~0|nor_conv_1x1~1|+|nor_conv_3x3~0|avg_pool_3x3~1|none~2|")
    assert g.edges[0, 1] == 0 and g.edges[0, 2] == 1 and g.edges[1, 2] == 2
    assert g.edges[0, 3] == 3 and g.edges[1, 3] == 4 and g.edges[2, 3] == 0
    assert validate(g, nb201())


def test_uniform_sample_valid():
    spec = synthetic()
    for g in spaces.uniform_sample(spec, np.random.default_rng(0), 100):
        assert validate(g, spec)
