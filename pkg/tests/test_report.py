import csv
import json

import numpy as np
import pytest

from dagpo.dag import Dag
from dagpo.metrics import Sample, SampleSet
from dagpo.report import export_report, mean_std

G = Dag([0], [[0]])


def history(seed, accs):
    return [{"epoch": e, "mean_reward": a, "eval": {"mean_acc": a, "max_acc": a + 0.1, "crossing_rate": a / 2}}
            for e, a in enumerate(accs)]


def sset(seed, epoch, rows):
    return SampleSet([Sample(G, {"a": x, "b": y}, x + y) for x, y in rows], epoch=epoch, seed=seed)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_empty_history_writes_headers_only(tmp_path):
    export_report({}, [], tmp_path, "c10")
    assert read_csv(tmp_path / "dynamics.csv") == [["seed", "epoch", "mean_acc", "max_acc", "mean_reward"]]
    assert read_csv(tmp_path / "crossing.csv") == [["seed", "epoch", "crossing_rate"]]
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["epochs"] == [] and summary["seeds"] == []


def test_three_seed_population_std(tmp_path):
    hs = {42: history(42, [0.1, 0.4]), 123: history(123, [0.2, 0.5]), 456: history(456, [0.3, 0.9])}
    export_report(hs, [], tmp_path, "c10")
    summary = json.loads((tmp_path / "summary.json").read_text())
    last = summary["epochs"][1]
    assert last["mean_acc"]["mean"] == pytest.approx(0.6)
    # population std of (0.4, 0.5, 0.9)
    assert last["mean_acc"]["std"] == pytest.approx(np.sqrt(((0.2) ** 2 + 0.1 ** 2 + 0.3 ** 2) / 3))
    assert last["mean_acc"]["n"] == 3
    rows = read_csv(tmp_path / "dynamics.csv")[1:]
    assert [r[0] for r in rows] == ["42", "42", "123", "123", "456", "456"]


def test_mean_std_skips_missing():
    assert mean_std([None, 1.0, 3.0]) == {"mean": 2.0, "std": 1.0, "n": 2}
    assert mean_std([]) == {"mean": None, "std": None, "n": 0}


def test_pareto_and_distribution_files(tmp_path):
    sets = [sset(1, 0, [(0.1, 0.1)]), sset(1, 5, [(1.0, 0.5), (0.5, 1.0), (0.2, 0.2)])]
    export_report({1: history(1, [0.1])}, sets, tmp_path, "a", pareto_ids=["a", "b"])
    pareto = read_csv(tmp_path / "pareto.csv")
    assert pareto[0] == ["seed", "epoch", "a", "b"] and len(pareto) == 3
    assert {r[1] for r in pareto[1:]} == {"5"}
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["hypervolume"]["mean"] == pytest.approx(0.75)
    dist = read_csv(tmp_path / "distribution_ep5.csv")
    assert len(dist) == 4 and dist[1][3] == "1.0"


def test_repeat_export_is_byte_identical(tmp_path):
    hs = {42: history(42, [0.1, 0.4]), 7: history(7, [0.2, 0.3])}
    sets = [sset(42, 1, [(0.3, 0.7), (0.6, 0.2)]), sset(7, 1, [(0.9, 0.1)])]
    a, b = tmp_path / "a", tmp_path / "b"
    pa = export_report(hs, sets, a, "a", pareto_ids=["a", "b"])
    pb = export_report(hs, sets, b, "a", pareto_ids=["a", "b"])
    assert [p.name for p in pa] == [p.name for p in pb]
    for x, y in zip(pa, pb):
        assert x.read_bytes() == y.read_bytes()
