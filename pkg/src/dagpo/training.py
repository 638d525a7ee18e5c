"""Phase-1 pretraining and phase-2 reward-weighted policy-gradient fine-tuning."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .dag import Dag
from .denoiser import (AdamW, DenoiserDims, DenoiserParams, as_denoise_fn, average_grads,
                       freeze_fraction, init_params, loss_and_grad_batch)
from .diffusion import NoiseSchedule, Trajectory, corrupt, cosine_schedule, generate
from .metrics import Sample, SampleSet, crossing_rate
from .reward import RewardOracle, RewardStats, advantage
from .seeding import stream, thread_cap
from .spaces import SpaceSpec, encode

log = logging.getLogger(__name__)

ROLLOUT_CHUNK = 32


class EmptyDataset(ValueError):
    pass


class MissingEntry(KeyError):
    pass


@dataclass
class TrainConfig:
    phase: str = "finetune"
    epochs: int = 60
    batch_size: int = 15
    lr: float = 7e-7
    timestep_subset: int = 40
    freeze: float = 0.75
    lam: float = 5.0
    seed: int = 42
    accumulation: int = 1
    weight_decay: float = 0.01
    T: int = 800
    schedule_offset: float = 0.008
    hidden: int = 256
    layers: int = 4
    pe_dim: int = 8
    eval_every: int = 5
    eval_samples: int = 300
    threshold: Optional[float] = None
    eval_dataset: Optional[str] = None

    @classmethod
    def pretrain_defaults(cls, **kw) -> "TrainConfig":
        base = dict(phase="pretrain", epochs=200, batch_size=64, lr=3e-4, freeze=0.0)
        base.update(kw)
        return cls(**base)

    @classmethod
    def finetune_defaults(cls, **kw) -> "TrainConfig":
        return cls(**kw)

    def schedule(self) -> NoiseSchedule:
        return cosine_schedule(self.T, self.schedule_offset)

    def dims(self, space: SpaceSpec) -> DenoiserDims:
        return DenoiserDims.for_space(space, self.T, hidden=self.hidden,
                                      layers=self.layers, pe_dim=self.pe_dim)


@dataclass
class TrainState:
    params: DenoiserParams
    optimizer: AdamW
    epoch: int = 0
    stats: RewardStats = field(default_factory=RewardStats)
    seed: int = 42

    @classmethod
    def fresh(cls, config: TrainConfig, space: SpaceSpec) -> "TrainState":
        params = init_params(config.dims(space), stream(config.seed, "init"))
        return cls(params, AdamW(lr=config.lr, weight_decay=config.weight_decay), seed=config.seed)

    def copy(self) -> "TrainState":
        opt = replace(self.optimizer, m=[[a.copy() for a in p] for p in self.optimizer.m],
                      v=[[a.copy() for a in p] for p in self.optimizer.v])
        return TrainState(self.params.copy(), opt, self.epoch, replace(self.stats), self.seed)

    def save(self, path, meta: dict | None = None):
        return save_checkpoint(path, self.params, self.optimizer, self.epoch,
                               rng_state={"seed": self.seed, "epoch": self.epoch},
                               meta={"reward_stats": self.stats.to_dict(), **(meta or {})})

    @classmethod
    def load(cls, path) -> "TrainState":
        return cls.load_with_header(path)[0]

    @classmethod
    def load_with_header(cls, path) -> tuple["TrainState", dict]:
        params, optimizer, header = load_checkpoint(path)
        stats = RewardStats(**header["meta"].get("reward_stats", {}))
        state = cls(params, optimizer or AdamW(), header["epoch"], stats,
                    header["rng_state"].get("seed", 42))
        return state, header


def encode_dataset(dataset: Sequence[Dag], space: SpaceSpec) -> tuple[np.ndarray, np.ndarray]:
    pairs = [encode(g, space) for g in dataset]
    return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])


def pretrain(dataset: Sequence[Dag], config: TrainConfig, space: SpaceSpec,
             state: TrainState | None = None,
             on_epoch: Callable[[int, float], None] | None = None) -> tuple[TrainState, list[float]]:
    """Plain denoising cross-entropy training; returns the state and per-epoch mean loss."""
    if len(dataset) == 0:
        raise EmptyDataset("pretraining dataset is empty")
    state = state or TrainState.fresh(config, space)
    schedule = config.schedule()
    nodes, edges = encode_dataset(dataset, space)
    N = nodes.shape[0]
    B = min(config.batch_size, N)
    steps = math.ceil(N / B)
    losses = []
    for _ in range(config.epochs):
        e = state.epoch
        perm = stream(state.seed, "shuffle", e).permutation(N)
        noise = stream(state.seed, "forward-noise", e)
        total = 0.0
        for s in range(steps):
            idx = perm[s * B:(s + 1) * B]
            micro = np.array_split(idx, min(config.accumulation, len(idx)))
            grads = []
            for mb in micro:
                t = noise.integers(1, config.T + 1, size=len(mb))
                ab = schedule.alpha_bar[t]
                xt_n = corrupt(nodes[mb], ab, space.node_categories, noise)
                xt_e = corrupt(edges[mb], ab, space.edge_categories, noise)
                loss, g = loss_and_grad_batch(state.params, xt_n, xt_e, t, nodes[mb], edges[mb],
                                              config.lam, 1.0 / len(mb))
                total += loss * len(mb)
                grads.append(g)
            state.optimizer.step(state.params, average_grads(grads), config.lr)
        state.epoch += 1
        losses.append(total / N)
        if on_epoch is not None:
            on_epoch(state.epoch, losses[-1])
    return state, losses


def rollouts(params: DenoiserParams, schedule: NoiseSchedule, space: SpaceSpec, count: int,
             seed: int, tag: str, epoch: int, keep_intermediates: bool,
             threads: int | None = None) -> list[Trajectory]:
    """``count`` reverse chains in fixed-size chunks, each chunk on its own sub-stream.

    Output is independent of the thread count.
    """
    if count <= 0:
        return []
    denoise = as_denoise_fn(params)
    sizes = [min(ROLLOUT_CHUNK, count - i) for i in range(0, count, ROLLOUT_CHUNK)]

    def run(ci: int) -> list[Trajectory]:
        return generate(denoise, schedule, space, stream(seed, tag, epoch, ci), sizes[ci],
                        keep_intermediates)

    threads = thread_cap() if threads is None else threads
    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(ci) for ci in range(len(sizes))]
    return [tr for part in parts for tr in part]


def sample_subsets(rng: np.random.Generator, K: int, T: int, size: int) -> list[np.ndarray]:
    """Uniform without-replacement timestep subsets of {1..T}, one per trajectory."""
    size = min(size, T)
    return [np.sort(rng.choice(T, size=size, replace=False) + 1) for _ in range(K)]


def dgpo_loss_and_grad(params: DenoiserParams, trajectories: Sequence[Trajectory],
                       subsets: Sequence[np.ndarray], advantages, T: int, lam: float):
    """``(1/K) sum_k (T/|S_k|) sum_{t in S_k} A_k * CE(denoiser(G_t^k), G_0^k)``.

    Every sampled timestep of trajectory k targets that trajectory's own G_0.
    """
    K = len(trajectories)
    nodes, edges, ts, tn, te, scale = [], [], [], [], [], []
    for tr, sub, a in zip(trajectories, subsets, np.atleast_1d(advantages)):
        xn, xe = tr.at(sub)
        nodes.append(xn)
        edges.append(xe)
        ts.append(sub)
        tn.append(np.broadcast_to(tr.x0_nodes, xn.shape))
        te.append(np.broadcast_to(tr.x0_edges, xe.shape))
        scale.append(np.full(len(sub), a * T / (len(sub) * K)))
    return loss_and_grad_batch(params, np.concatenate(nodes), np.concatenate(edges),
                               np.concatenate(ts), np.concatenate(tn), np.concatenate(te),
                               lam, np.concatenate(scale))


def dgpo_epoch(state: TrainState, schedule: NoiseSchedule, oracle: RewardOracle,
               config: TrainConfig, space: SpaceSpec) -> dict:
    """Sample K rollouts, score them, and take one optimizer step on the eager objective."""
    e = state.epoch
    trajs = rollouts(state.params, schedule, space, config.batch_size, state.seed, "rollout", e,
                     keep_intermediates=True)
    rewards = np.array([oracle(tr.final) for tr in trajs])
    state.stats.update(rewards)
    adv = np.atleast_1d(advantage(rewards, state.stats))
    for tr, r, a in zip(trajs, rewards, adv):
        tr.reward, tr.advantage = float(r), float(a)
    subsets = sample_subsets(stream(state.seed, "timesteps", e), len(trajs), schedule.T,
                             config.timestep_subset)

    groups = np.array_split(np.arange(len(trajs)), min(config.accumulation, len(trajs)))
    grads, loss = [], 0.0
    for grp in groups:
        l, g = dgpo_loss_and_grad(state.params, [trajs[i] for i in grp], [subsets[i] for i in grp],
                                  adv[grp], schedule.T, config.lam)
        loss += l / len(groups)
        grads.append(g)
    state.optimizer.step(state.params, average_grads(grads), config.lr)
    state.epoch += 1
    return {
        "epoch": state.epoch,
        "mean_reward": float(rewards.mean()),
        "max_reward": float(rewards.max()),
        "mean_advantage": float(adv.mean()),
        "loss": float(loss),
    }


def sample_set(state: TrainState, schedule: NoiseSchedule, oracle: RewardOracle, space: SpaceSpec,
               n: int, tag: str = "eval", epoch: int | None = None) -> SampleSet:
    epoch = state.epoch if epoch is None else epoch
    trajs = rollouts(state.params, schedule, space, n, state.seed, tag, epoch, keep_intermediates=False)
    samples = []
    for tr in trajs:
        r, m = oracle.score(tr.final)
        samples.append(Sample(tr.final, m, r))
    return SampleSet(samples, epoch=epoch, seed=state.seed)


def summarize_eval(s: SampleSet, dataset_id: str, threshold: float | None) -> dict:
    acc = s.accuracies(dataset_id)
    out = {"mean_acc": float(acc.mean()) if acc.size else 0.0,
           "max_acc": float(acc.max()) if acc.size else 0.0}
    if threshold is not None:
        out["crossing_rate"] = crossing_rate(s, threshold, dataset_id)
    return out


def finetune(state: TrainState, config: TrainConfig, oracle: RewardOracle, space: SpaceSpec,
             on_record: Callable[[dict], None] | None = None):
    """Freeze, then run ``config.epochs`` policy-gradient epochs with periodic evaluation.

    Returns ``(state, history, sample_sets)``.  ``history[0]`` describes the
    starting model (epoch 0: evaluation only, no update).
    """
    history: list[dict] = []
    sets: list[SampleSet] = []
    if config.epochs <= 0:
        return state, history, sets
    schedule = config.schedule()
    if schedule.T != state.params.dims.T:
        raise ValueError(f"config T={schedule.T} does not match checkpoint T={state.params.dims.T}")
    achieved = freeze_fraction(state.params, config.freeze)
    log.info("froze %.1f%% of parameters", 100 * achieved)
    if all(state.params.frozen):
        log.warning("freeze=%.2f froze every layer; fine-tuning will only apply weight decay", config.freeze)
    dataset_id = config.eval_dataset or oracle.spec.primary
    start = state.epoch
    last = start + config.epochs

    def evaluate(rec: dict) -> None:
        s = sample_set(state, schedule, oracle, space, config.eval_samples)
        s.epoch = state.epoch - start
        sets.append(s)
        rec["eval"] = summarize_eval(s, dataset_id, config.threshold)

    rec0 = {"epoch": 0, "mean_reward": 0.0, "max_reward": 0.0, "mean_advantage": 0.0, "loss": 0.0}
    if config.eval_samples > 0:
        evaluate(rec0)
        rewards = sets[-1].rewards()
        rec0["mean_reward"], rec0["max_reward"] = float(rewards.mean()), float(rewards.max())
    history.append(rec0)
    if on_record:
        on_record(rec0)

    while state.epoch < last:
        rec = dgpo_epoch(state, schedule, oracle, config, space)
        rec["epoch"] = state.epoch - start
        due = config.eval_every > 0 and rec["epoch"] % config.eval_every == 0
        if config.eval_samples > 0 and (due or state.epoch == last):
            evaluate(rec)
        history.append(rec)
        if on_record:
            on_record(rec)
        log.info("epoch %d mean reward %.4f", rec["epoch"], rec["mean_reward"])
    return state, history, sets


def filter_dataset(dataset: Sequence[Dag], metrics: Callable[[Dag], dict], threshold: float,
                   dataset_id: str) -> tuple[list[Dag], float]:
    """Keep graphs whose ``dataset_id`` metric is strictly below ``threshold``."""
    kept = []
    for g in dataset:
        m = metrics(g)
        if dataset_id not in m:
            raise MissingEntry(f"no {dataset_id} entry for {g!r}")
        if m[dataset_id] < threshold:
            kept.append(g)
    return kept, (len(kept) / len(dataset) if len(dataset) else 0.0)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
