"""``dagpo`` command-line entry point.

Exit codes: 0 success, 2 config error, 3 data error, 4 checkpoint error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, load_config
from .dag import Dag
from .diffusion import cosine_schedule
from .metrics import (EmptyPool, ParetoFront, Sample, SampleSet, bootstrap_extreme, crossing_rate,
                      hypervolume, ood_lift, pareto_extract)
from .report import export_report, mean_std
from .reward import (ArchKeyError, ParseError, RewardOracle, TableMetrics, load_benchmark,
                     synthetic_metrics)
from .seeding import stream
from .spaces import SpaceSpec, decode_key, enumerate_space, space_by_name, uniform_sample, validate
from .training import EmptyDataset, MissingEntry, TrainState, filter_dataset, finetune, pretrain, rollouts

log = logging.getLogger("dagpo")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT = 0, 2, 3, 4
BOOTSTRAP_N = 15


class DataError(RuntimeError):
    pass


def _space_dict(spec: SpaceSpec) -> dict:
    return {"name": spec.name, "max_nodes": spec.max_nodes, "node_categories": spec.node_categories,
            "edge_categories": spec.edge_categories}


def _space_from_dict(d: dict) -> SpaceSpec:
    return space_by_name(d["name"], nodes=d["max_nodes"], node_categories=d["node_categories"],
                         edge_categories=d["edge_categories"])


def _write_jsonl(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _read_jsonl(path: Path):
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield line_no, json.loads(line)
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: malformed JSON ({exc})") from None


def read_dataset(path, spec: SpaceSpec) -> list[Dag]:
    """Lines are either Dag dicts or benchmark records with a ``key`` field."""
    out = []
    for line_no, rec in _read_jsonl(Path(path)):
        try:
            g = decode_key(rec["key"])[1] if "key" in rec else Dag.from_dict(rec)
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"{path}:{line_no}: bad graph ({exc})") from None
        report = validate(g, spec)
        if not report:
            raise DataError(f"{path}:{line_no}: invalid {spec.name} graph: {', '.join(report.violations)}")
        out.append(g)
    return out


def metric_source(cfg: RunConfig, spec: SpaceSpec):
    if cfg.benchmark:
        try:
            return TableMetrics(load_benchmark(cfg.benchmark, spec), spec)
        except OSError as exc:
            raise DataError(f"cannot read benchmark {cfg.benchmark}: {exc}") from None
    if spec.name == "synthetic":
        return synthetic_metrics
    raise ConfigError(f"benchmark: space {spec.name} needs a benchmark table")


def pretraining_data(cfg: RunConfig, spec: SpaceSpec) -> list[Dag]:
    if cfg.dataset:
        return read_dataset(cfg.dataset, spec)
    if cfg.benchmark:
        table = load_benchmark(cfg.benchmark, spec)
        return [decode_key(k)[1] for k in table.entries]
    if spec.name == "synthetic":
        return uniform_sample(spec, stream(cfg.seed, "data"), cfg.dataset_size)
    if spec.name == "nb201":
        return list(enumerate_space(spec))
    raise ConfigError(f"dataset: space {spec.name} needs a dataset or benchmark table")


def _checkpoint_space(header: dict, fallback: SpaceSpec) -> SpaceSpec:
    d = header.get("meta", {}).get("space")
    return _space_from_dict(d) if d else fallback


def sample_record(s: Sample) -> dict:
    return {**s.dag.to_dict(), "reward": s.reward, "metrics": s.metrics}


def cmd_pretrain(args, cfg: RunConfig) -> int:
    spec = cfg.space_spec()
    out = Path(cfg.checkpoint_dir)
    dataset = pretraining_data(cfg, spec)
    if cfg.filter_threshold is not None:
        dataset, frac = filter_dataset(dataset, metric_source(cfg, spec), cfg.filter_threshold,
                                       cfg.primary_dataset())
        log.info("filter kept %.4f of the pretraining data", frac)
    tc = cfg.pretrain_config()
    history = []
    state, losses = pretrain(dataset, tc, spec,
                             on_epoch=lambda e, l: history.append({"epoch": e, "loss": l, "seed": cfg.seed}))
    ckpt = out / "pretrained.npz"
    state.save(ckpt, meta={"space": _space_dict(spec), "schedule_offset": cfg.schedule_offset,
                           "phase": "pretrain", "dataset_size": len(dataset)})
    _write_jsonl(out / "pretrain_history.jsonl", history)
    cfg.save(out / "config.txt")
    print(json.dumps({"checkpoint": str(ckpt), "epochs": len(losses), "dataset_size": len(dataset),
                      "final_loss": losses[-1] if losses else None}))
    return EXIT_OK


def cmd_finetune(args, cfg: RunConfig) -> int:
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(cfg.checkpoint_dir) / "pretrained.npz"
    state, header = TrainState.load_with_header(ckpt)
    spec = _checkpoint_space(header, cfg.space_spec())
    reward_spec = cfg.reward_spec()
    oracle = RewardOracle(metric_source(cfg, spec), reward_spec)
    state.seed = cfg.seed
    tc = cfg.finetune_config()
    out, report_dir = Path(cfg.checkpoint_dir), Path(cfg.report_dir)
    state, history, sets = finetune(state, tc, oracle, spec)
    for rec in history:
        rec["seed"] = cfg.seed
    state.save(out / "finetuned.npz", meta={"space": _space_dict(spec), "schedule_offset": cfg.schedule_offset,
                                            "phase": "finetune", "reward_mode": reward_spec.mode,
                                            "weights": dict(reward_spec.weights)})
    _write_jsonl(report_dir / "history.jsonl", history)
    for s in sets:
        _write_jsonl(report_dir / "samples" / f"ep{s.epoch}.jsonl", [sample_record(x) for x in s.samples])
    cfg.save(report_dir / "config.txt")
    pareto_ids = list(reward_spec.weights) if reward_spec.mode == "multi_objective" else None
    export_report({cfg.seed: history}, sets, report_dir, tc.eval_dataset, pareto_ids)
    last = history[-1] if history else {}
    print(json.dumps({"checkpoint": str(out / "finetuned.npz"), "epochs": len(history) - 1 if history else 0,
                      "final": last}, sort_keys=True))
    return EXIT_OK


def cmd_sample(args, cfg: RunConfig) -> int:
    if args.n is None or args.n < 0:
        raise ConfigError("--n must be a non-negative integer")
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(cfg.checkpoint_dir) / "finetuned.npz"
    state, header = TrainState.load_with_header(ckpt)
    spec = _checkpoint_space(header, cfg.space_spec())
    offset = header.get("meta", {}).get("schedule_offset", cfg.schedule_offset)
    schedule = cosine_schedule(state.params.dims.T, offset)
    oracle = None
    if cfg.benchmark or spec.name == "synthetic":
        oracle = RewardOracle(metric_source(cfg, spec), cfg.reward_spec())
    trajs = rollouts(state.params, schedule, spec, args.n, cfg.seed, "sample", 0, keep_intermediates=False)
    records = []
    for tr in trajs:
        rec = tr.final.as_dag().to_dict()
        if oracle is not None:
            r, m = oracle.score(tr.final)
            rec.update(reward=r, metrics=m)
        records.append(rec)
    if args.out:
        _write_jsonl(Path(args.out), records)
    else:
        for rec in records:
            sys.stdout.write(json.dumps(rec, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_filter(args, cfg: RunConfig) -> int:
    if cfg.threshold is None and cfg.filter_threshold is None:
        raise ConfigError("threshold: --threshold is required")
    pi = cfg.threshold if cfg.threshold is not None else cfg.filter_threshold
    if not args.out:
        raise ConfigError("--out is required")
    dataset_id = cfg.primary_dataset()
    spec = cfg.space_spec()
    if cfg.benchmark:
        try:
            table = load_benchmark(cfg.benchmark)
        except OSError as exc:
            raise DataError(f"cannot read benchmark {cfg.benchmark}: {exc}") from None
        kept = [(k, m) for k, m in table.entries.items() if _metric(m, dataset_id, k) < pi]
        _write_jsonl(Path(args.out), [{"key": k, "metrics": m} for k, m in kept])
        frac = len(kept) / len(table) if len(table) else 0.0
    elif cfg.dataset and spec.name == "synthetic":
        dataset = read_dataset(cfg.dataset, spec)
        kept, frac = filter_dataset(dataset, synthetic_metrics, pi, dataset_id)
        _write_jsonl(Path(args.out), [g.to_dict() for g in kept])
    else:
        raise ConfigError("filter needs --table, or --dataset with the synthetic space")
    print(f"{frac:.4f}")
    return EXIT_OK


def _metric(m: dict, dataset_id: str, key: str) -> float:
    if dataset_id not in m:
        raise DataError(f"no {dataset_id} entry for {key}")
    return m[dataset_id]


def read_samples(path: Path) -> SampleSet:
    samples = []
    for line_no, rec in _read_jsonl(path):
        try:
            g = Dag.from_dict(rec)
            metrics = {str(k): float(v) for k, v in rec.get("metrics", {}).items()}
            samples.append(Sample(g, metrics, float(rec.get("reward", 0.0))))
        except (KeyError, ValueError, TypeError, AttributeError) as exc:
            raise DataError(f"{path}:{line_no}: bad sample ({exc})") from None
    return SampleSet(samples)


def evaluate_samples(s: SampleSet, dataset_id: str, threshold, ids, seed: int) -> dict:
    acc = s.accuracies(dataset_id)
    out = {"n": len(s), "dataset_id": dataset_id}
    if len(s) == 0:
        return out
    out.update(mean_acc=float(acc.mean()), max_acc=float(acc.max()), mean_reward=float(s.rewards().mean()))
    try:
        rng = stream(seed, "bootstrap")
        out["bootstrap_max"] = bootstrap_extreme(acc, BOOTSTRAP_N, rng=rng)
        out["bootstrap_min"] = bootstrap_extreme(acc, BOOTSTRAP_N, mode="min", rng=rng)
    except EmptyPool:
        pass
    if threshold is not None:
        out["crossing_rate"] = crossing_rate(s, threshold, dataset_id)
        out["ood_lift"] = ood_lift(s, threshold, dataset_id)
    if ids and 2 <= len(ids) <= 3:
        front: ParetoFront = pareto_extract(s, ids)
        out["pareto_size"] = len(front.points)
        out["hypervolume"] = hypervolume(front)
    return out


def read_history_dir(root: Path) -> dict[int, list[dict]]:
    files = sorted(root.rglob("history.jsonl"))
    if not files:
        raise DataError(f"no history.jsonl under {root}")
    histories: dict[int, list[dict]] = {}
    for i, f in enumerate(files):
        recs = [rec for _, rec in _read_jsonl(f)]
        for line_no, rec in enumerate(recs, start=1):
            if not isinstance(rec, dict) or "epoch" not in rec:
                raise DataError(f"{f}:{line_no}: history record without epoch")
        seed = int(recs[0].get("seed", i)) if recs else i
        histories[seed] = recs
    return histories


def cmd_evaluate(args, cfg: RunConfig) -> int:
    if not args.input:
        raise ConfigError("evaluate needs an input path")
    path = Path(args.input)
    dataset_id = cfg.primary_dataset()
    ids = cfg.dataset_ids() if cfg.datasets or cfg.weights else None
    if path.is_dir():
        histories = read_history_dir(path)
        epochs: dict[int, dict[str, list]] = {}
        for recs in histories.values():
            for rec in recs:
                bucket = epochs.setdefault(int(rec["epoch"]), {})
                ev = rec.get("eval") or {}
                for k, v in [("mean_reward", rec.get("mean_reward"))] + list(ev.items()):
                    bucket.setdefault(k, []).append(v)
        summary = {"seeds": sorted(histories), "dataset_id": dataset_id,
                   "epochs": [{"epoch": e, **{k: mean_std(v) for k, v in sorted(b.items())}}
                              for e, b in sorted(epochs.items())]}
        if args.out:
            export_report(histories, [], args.out, dataset_id)
    elif path.exists():
        summary = evaluate_samples(read_samples(path), dataset_id, cfg.threshold, ids, cfg.seed)
    else:
        raise DataError(f"input not found: {path}")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {"pretrain": cmd_pretrain, "finetune": cmd_finetune, "sample": cmd_sample,
            "filter": cmd_filter, "evaluate": cmd_evaluate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dagpo", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("input", nargs="?", help="evaluate: sample file or history directory")
    p.add_argument("--config", help="flat key = value run config")
    p.add_argument("--seed", type=int)
    p.add_argument("--space", choices=["nb101", "nb201", "synthetic"])
    p.add_argument("--inverse", action="store_true", help="steer toward low reward")
    p.add_argument("--weights", help="comma-separated multi-objective weights")
    p.add_argument("--datasets", help="comma-separated dataset ids the weights refer to")
    p.add_argument("--threshold", type=float, help="quality threshold pi")
    p.add_argument("--n", type=int, help="number of samples")
    p.add_argument("--out", help="output directory (pretrain/finetune) or file (sample/filter)")
    p.add_argument("--checkpoint")
    p.add_argument("--table", help="benchmark table (JSON lines)")
    p.add_argument("--dataset", help="pretraining dataset (JSON lines)")
    p.add_argument("--dataset-id", help="metric used for accuracy and filtering")
    p.add_argument("--epochs", type=int, help="overrides pretrain_epochs or finetune_epochs")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def effective_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = dict(seed=args.seed, space=args.space, weights=args.weights, datasets=args.datasets,
                     threshold=args.threshold, benchmark=args.table, dataset=args.dataset,
                     reward_dataset=args.dataset_id)
    if args.inverse:
        overrides["reward_mode"] = "inverse"
    if args.epochs is not None:
        overrides["pretrain_epochs" if args.command == "pretrain" else "finetune_epochs"] = args.epochs
    if args.out and args.command in ("pretrain", "finetune"):
        overrides["checkpoint_dir"] = overrides["report_dir"] = args.out
    return cfg.replace(**overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (DataError, ParseError, ArchKeyError, EmptyDataset, MissingEntry, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"data error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
