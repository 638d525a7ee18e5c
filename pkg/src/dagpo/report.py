"""Deterministic CSV/JSON exports of fine-tuning histories and evaluation samples.

Files written by :func:`export_report`:

``dynamics.csv``         seed, epoch, mean_acc, max_acc, mean_reward
``crossing.csv``         seed, epoch, crossing_rate
``distribution_ep{N}.csv``  seed, epoch, index, accuracy, reward (one file per evaluated epoch)
``pareto.csv``           seed, epoch, one column per objective (final-epoch fronts)
``summary.json``         per-epoch mean and population std across seeds
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .metrics import SampleSet, hypervolume, pareto_extract

SUMMARY_SCHEMA_VERSION = 1


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    return repr(float(x))


def _write_csv(path: Path, header: Sequence[str], rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def mean_std(values) -> dict:
    v = np.asarray([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(v.mean()), "std": float(v.std()), "n": int(v.size)}


def export_report(histories: Mapping[int, Sequence[dict]], sample_sets: Sequence[SampleSet], out_dir,
                  dataset_id: str, pareto_ids: Sequence[str] | None = None,
                  extra: Mapping | None = None) -> list[Path]:
    """Write the report files for ``histories`` (seed -> records) and evaluation samples."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IOError(f"cannot create report directory {out}: {exc}") from None
    written = []
    seeds = sorted(histories)

    dyn, cross = [], []
    per_epoch: dict[int, dict[str, list]] = defaultdict(lambda: defaultdict(list))
    for seed in seeds:
        for rec in histories[seed]:
            ev = rec.get("eval") or {}
            e = int(rec["epoch"])
            dyn.append([seed, e, _fmt(ev.get("mean_acc")), _fmt(ev.get("max_acc")), _fmt(rec.get("mean_reward"))])
            if "crossing_rate" in ev:
                cross.append([seed, e, _fmt(ev["crossing_rate"])])
            bucket = per_epoch[e]
            bucket["mean_reward"].append(rec.get("mean_reward"))
            for k in ("mean_acc", "max_acc", "crossing_rate"):
                if k in ev:
                    bucket[k].append(ev[k])
    written.append(_write_csv(out / "dynamics.csv", ["seed", "epoch", "mean_acc", "max_acc", "mean_reward"], dyn))
    written.append(_write_csv(out / "crossing.csv", ["seed", "epoch", "crossing_rate"], cross))

    by_epoch: dict[int, list[SampleSet]] = defaultdict(list)
    for s in sample_sets:
        by_epoch[s.epoch].append(s)
    for e in sorted(by_epoch):
        rows = []
        for s in sorted(by_epoch[e], key=lambda s: s.seed):
            acc, rew = s.accuracies(dataset_id), s.rewards()
            rows.extend([s.seed, e, i, _fmt(a), _fmt(r)] for i, (a, r) in enumerate(zip(acc, rew)))
        written.append(_write_csv(out / f"distribution_ep{e}.csv", ["seed", "epoch", "index", "accuracy", "reward"], rows))

    ids = list(pareto_ids or [])
    pareto_rows, hv = [], {}
    if len(ids) >= 2 and sample_sets:
        last = max(by_epoch)
        for s in sorted(by_epoch[last], key=lambda s: s.seed):
            try:
                front = pareto_extract(s, ids)
            except ValueError:
                continue
            if len(ids) <= 3:
                hv[s.seed] = hypervolume(front)
            pareto_rows.extend([s.seed, last] + [_fmt(x) for x in p] for p in front.points)
    written.append(_write_csv(out / "pareto.csv", ["seed", "epoch"] + ids, pareto_rows))

    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "dataset_id": dataset_id,
        "seeds": seeds,
        "epochs": [
            {"epoch": e, **{k: mean_std(v) for k, v in sorted(per_epoch[e].items())}}
            for e in sorted(per_epoch)
        ],
    }
    if hv:
        summary["hypervolume"] = {"per_seed": {str(k): v for k, v in hv.items()}, **mean_std(hv.values())}
    if extra:
        summary.update(extra)
    path = out / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(path)
    return written
