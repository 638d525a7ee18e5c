import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dagpo.dag import Dag, random_dag, topological_order
from dagpo.reward import (ArchKeyError, BenchmarkTable, ParseError, RangeError, RewardOracle, RewardSpec,
                          RewardStats, TableMetrics, advantage, load_benchmark, longest_path,
                          synthetic_metrics, synthetic_reward, tabular_reward, write_benchmark)
from dagpo.spaces import arch_key, nb201, nb201_from_string

BEST_C10 = "|nor_conv_3x3~0|+|nor_conv_3x3~0|nor_conv_3x3~1|+|skip_connect~0|nor_conv_3x3~1|nor_conv_3x3~2|"


@pytest.fixture
def nb201_table(tmp_path):
    spec = nb201()
    best = nb201_from_string(BEST_C10)
    other = nb201_from_string("|none~0|+|none~0|none~1|+|none~0|none~1|none~2|")
    third = nb201_from_string("|skip_connect~0|+|none~0|none~1|+|none~0|none~1|skip_connect~2|")
    path = tmp_path / "nb201.jsonl"
    rows = [
        {"key": arch_key(best, spec), "metrics": {"c10": 0.9161, "c100": 0.7349, "in16": 0.4677}},
        {"key": arch_key(other, spec), "metrics": {"c10": 0.10, "c100": 0.01, "in16": 0.008}},
        {"key": arch_key(third, spec), "metrics": {"c10": 0.60, "c100": 0.30}},
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return path, best


def test_load_and_lookup(nb201_table):
    path, best = nb201_table
    table = load_benchmark(path)
    assert len(table) == 3 and table.space == "nb201"
    assert tabular_reward(table, best, RewardSpec(), nb201()) == pytest.approx(0.9161)
    assert tabular_reward(table, best, RewardSpec("inverse"), nb201()) == pytest.approx(-0.9161)


def test_missing_key_zero(nb201_table):
    table = load_benchmark(nb201_table[0])
    g = nb201_from_string("|avg_pool_3x3~0|+|none~0|none~1|+|none~0|none~1|none~2|")
    assert tabular_reward(table, g, RewardSpec(), nb201()) == 0.0
    assert tabular_reward(table, Dag([0, 0], [[0, 1], [0, 0]]), RewardSpec(), nb201()) == 0.0


def test_multi_objective_weights(nb201_table):
    table = load_benchmark(nb201_table[0])
    spec = RewardSpec("multi_objective", {"c10": 1.0, "c100": 1.0, "in16": 1.0})
    best = nb201_table[1]
    assert tabular_reward(table, best, spec, nb201()) == pytest.approx(0.9161 + 0.7349 + 0.4677)
    with pytest.raises(ValueError):
        RewardSpec("multi_objective", {"c10": 1.0})


def test_normalization_bounds():
    spec = RewardSpec("forward", {"c10": 1.0}, {"c10": (0.5, 0.9)})
    assert spec.combine({"c10": 0.7}) == pytest.approx(0.5)
    assert spec.combine({"c10": 0.95}) == 1.0
    assert spec.combine({"c10": 0.1}) == 0.0


def test_range_error(tmp_path, nb201_table):
    _, best = nb201_table
    path = tmp_path / "bad.jsonl"
    key = arch_key(best, nb201())
    path.write_text(json.dumps({"key": key, "metrics": {"c10": 0.5}}) + "\n"
                    + json.dumps({"key": key, "metrics": {"c10": 1.5}}) + "\n")
    with pytest.raises(RangeError) as err:
        load_benchmark(path)
    assert err.value.line_no == 2
    assert ":2:" in str(err.value)


def test_parse_error(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text("{not json\n")
    with pytest.raises(ParseError) as err:
        load_benchmark(path)
    assert err.value.line_no == 1


def test_key_error(tmp_path):
    path = tmp_path / "bad.jsonl"
    cyclic = "nb201:" + json.dumps({"n": 2, "node_labels": [0, 0], "edges": [[0, 1], [1, 0]]})
    path.write_text(json.dumps({"key": "garbage", "metrics": {"c10": 0.5}}) + "\n")
    with pytest.raises(ArchKeyError):
        load_benchmark(path)
    path.write_text(json.dumps({"key": cyclic, "metrics": {"c10": 0.5}}) + "\n")
    with pytest.raises(ArchKeyError) as err:
        load_benchmark(path)
    assert err.value.line_no == 1


def test_write_round_trip(tmp_path, nb201_table):
    table = load_benchmark(nb201_table[0])
    out = tmp_path / "copy.jsonl"
    write_benchmark(out, table)
    assert load_benchmark(out).entries == table.entries


def test_synthetic_reward_examples():
    assert synthetic_reward(Dag([0] * 4, np.zeros((4, 4), dtype=int))) == 0.0
    full = np.triu(np.ones((4, 4), dtype=int), 1)
    assert synthetic_reward(Dag([0] * 4, full)) == pytest.approx(1.0)
    e = np.zeros((4, 4), dtype=int)
    e[0, 1] = 1
    assert synthetic_reward(Dag([0] * 4, e)) == pytest.approx(0.25)
    assert synthetic_reward(Dag([0], [[0]])) == 0.0


def test_longest_path_non_ordered():
    e = np.zeros((4, 4), dtype=int)
    e[3, 1] = e[1, 2] = e[2, 0] = 2
    assert longest_path(Dag([0] * 4, e)) == 3
    assert synthetic_metrics(Dag([0] * 4, e))["edge1"] == 0.0


def test_synthetic_reward_isomorphism_invariant():
    rng = np.random.default_rng(0)
    for _ in range(200):
        g = random_dag(rng, 6, 2, 3)
        assert synthetic_reward(g) == synthetic_reward(topological_order(g))


@pytest.mark.parametrize("r, mean, var, expected", [
    (0.3, 0.3, 0.04, 0.0),
    (100.0, 0.0, 1.0, 5.0),
    (-100.0, 0.0, 1.0, -5.0),
])
def test_advantage_examples(r, mean, var, expected):
    assert advantage(r, RewardStats(mean=mean, var=var, count=10)) == expected


def test_advantage_batch_seeding():
    stats = RewardStats().update([1.0, 2.0, 3.0])
    assert stats.mean == 2.0 and stats.std == pytest.approx(np.sqrt(2 / 3))
    np.testing.assert_allclose(advantage([1.0, 2.0, 3.0], stats), [-1.224744871391589, 0, 1.224744871391589])


def test_stats_identical_batches_keep_zero_advantage():
    stats = RewardStats()
    for _ in range(50):
        stats.update([0.37] * 15)
        assert np.all(advantage([0.37] * 15, stats) == 0.0)
    assert stats.std == 1e-6


def test_stats_ema_mixture():
    stats = RewardStats().update([0.0, 2.0])
    stats.update([4.0, 4.0])
    # mixture of N(1, 1) weight .99 and point mass at 4 weight .01
    assert stats.mean == pytest.approx(1.03)
    assert stats.var == pytest.approx(0.99 * (1 + 0.01 * 9) + 0.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(-1e3, 1e3), st.floats(0, 1e4))
def test_advantage_always_clipped(r, mean, var):
    a = advantage(r, RewardStats(mean=mean, var=var, count=1))
    assert -5.0 <= a <= 5.0


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.sampled_from(["c10", "c100", "in16"]), st.floats(0, 1), min_size=1),
       st.dictionaries(st.sampled_from(["c10", "c100", "in16"]), st.floats(0, 3), min_size=1))
def test_forward_bounds_and_inverse(metrics, weights):
    fwd = RewardSpec("forward", weights).combine(metrics)
    inv = RewardSpec("inverse", weights).combine(metrics)
    assert -1e-12 <= fwd <= sum(weights.values()) + 1e-12
    assert inv == -fwd


def test_oracle_with_table_metrics(nb201_table):
    table = load_benchmark(nb201_table[0])
    oracle = RewardOracle(TableMetrics(table, nb201()), RewardSpec())
    r, m = oracle.score(nb201_table[1])
    assert r == pytest.approx(0.9161) and m["c100"] == pytest.approx(0.7349)
    assert isinstance(table, BenchmarkTable) and set(table.datasets()) == {"c10", "c100", "in16"}
