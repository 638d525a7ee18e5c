"""Discrete diffusion over fixed-size graph tensors with uniform categorical kernels.

Graphs are handled as integer label tensors: node labels ``(..., n)`` and
upper-triangle edge cells ``(..., m)``.  Diagonal and lower-triangle cells are
never stored, so they stay "no edge" through both the forward and reverse chain.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dag import OrderedDag
from .spaces import SpaceSpec, decode, encode

PROB_FLOOR = 1e-12


class DegenerateDistribution(FloatingPointError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    alpha_bar: np.ndarray
    s: float = 0.008

    def alpha(self, t):
        """Per-step retention ``alpha_bar[t] / alpha_bar[t-1]``."""
        t = np.asarray(t)
        return self.alpha_bar[t] / self.alpha_bar[t - 1]

    def keep_prob(self, t, K: int):
        ab = self.alpha_bar[np.asarray(t)]
        return ab + (1.0 - ab) / K


def cosine_schedule(T: int = 800, s: float = 0.008) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    steps = np.arange(T + 1, dtype=np.float64) / T
    f = np.cos((steps + s) / (1 + s) * np.pi / 2) ** 2
    alpha_bar = f / f[0]
    alpha_bar[0] = 1.0
    alpha_bar = np.clip(alpha_bar, 0.0, 1.0)
    alpha_bar.setflags(write=False)
    return NoiseSchedule(T, alpha_bar, s)


@dataclass(frozen=True)
class TransitionKernel:
    K: int
    alpha: float

    def matrix(self) -> np.ndarray:
        return self.alpha * np.eye(self.K) + (1.0 - self.alpha) / self.K * np.ones((self.K, self.K))


def one_hot(labels, K: int) -> np.ndarray:
    labels = np.asarray(labels)
    return (labels[..., None] == np.arange(K)).astype(np.float64)


@dataclass(frozen=True)
class NoisyGraph:
    """A corrupted graph at timestep ``t``: label tensors plus one-hot views."""

    nodes: np.ndarray
    edge_cells: np.ndarray
    t: int
    node_categories: int
    edge_categories: int

    @property
    def n(self) -> int:
        return self.nodes.shape[-1]

    @property
    def node_onehot(self) -> np.ndarray:
        return one_hot(self.nodes, self.node_categories)

    @property
    def edge_onehot(self) -> np.ndarray:
        """Full ``n x n x (b+1)`` tensor; cells off the strict upper triangle are "no edge"."""
        n = self.n
        full = np.zeros((n, n), dtype=np.int64)
        full[np.triu_indices(n, k=1)] = self.edge_cells
        return one_hot(full, self.edge_categories)


def corrupt(labels: np.ndarray, alpha_bar, K: int, rng: np.random.Generator) -> np.ndarray:
    """Sample ``q(x_t | x_0)`` for every entry of ``labels``.

    ``alpha_bar`` broadcasts against ``labels`` (scalar or one value per row).
    With probability alpha_bar a cell keeps its label, otherwise it is redrawn
    uniformly over all K categories.
    """
    labels = np.asarray(labels)
    ab = np.asarray(alpha_bar, dtype=np.float64)
    if ab.ndim == 1 and labels.ndim == 2:
        ab = ab[:, None]
    keep = rng.random(labels.shape) < ab
    fresh = rng.integers(0, K, size=labels.shape)
    return np.where(keep, labels, fresh)


def forward_sample(g0: OrderedDag, t: int, schedule: NoiseSchedule, spec: SpaceSpec,
                   rng: np.random.Generator) -> NoisyGraph:
    if not 1 <= t <= schedule.T:
        raise ValueError(f"t={t} outside 1..{schedule.T}")
    nodes, cells = encode(g0, spec)
    ab = schedule.alpha_bar[t]
    return NoisyGraph(
        corrupt(nodes, ab, spec.node_categories, rng),
        corrupt(cells, ab, spec.edge_categories, rng),
        t, spec.node_categories, spec.edge_categories,
    )


def posterior_from_index(xt: np.ndarray, x0_probs: np.ndarray, alpha_t, alpha_bar_prev,
                         alpha_bar_t) -> np.ndarray:
    """``sum_x0 p(x0) q(x_{t-1} | x_t, x0)`` for uniform kernels, vectorized.

    ``xt`` holds category indices with shape ``S``; ``x0_probs`` has shape ``S + (K,)``.
    The per-x0 Bayes posterior is ``Q_t[x_{t-1}, x_t] * Qbar_{t-1}[x0, x_{t-1}] /
    Qbar_t[x0, x_t]``; x0 values that cannot have produced x_t get zero weight.
    """
    x0_probs = np.asarray(x0_probs, dtype=np.float64)
    K = x0_probs.shape[-1]
    xt_oh = one_hot(xt, K)
    # q(x_t | x_{t-1} = j) as a function of j
    v = alpha_t * xt_oh + (1.0 - alpha_t) / K
    # q(x_t | x0 = l)
    w = alpha_bar_t * xt_oh + (1.0 - alpha_bar_t) / K
    ratio = np.divide(x0_probs, w, out=np.zeros_like(x0_probs), where=w > 0)
    # (ratio @ Qbar_{t-1})_j = abar_prev * ratio_j + (1 - abar_prev)/K * sum(ratio)
    mixed = alpha_bar_prev * ratio + (1.0 - alpha_bar_prev) / K * ratio.sum(-1, keepdims=True)
    unnorm = v * mixed
    z = unnorm.sum(-1, keepdims=True)
    if np.any(~(z > 1e-300)):
        raise DegenerateDistribution("posterior normalizer underflowed; check the schedule")
    return unnorm / z


def posterior_step_distribution(x_t: np.ndarray, x0_probs: np.ndarray, t: int,
                                schedule: NoiseSchedule) -> np.ndarray:
    """Reverse-step categorical ``p(x_{t-1} | x_t)`` given predicted clean probabilities.

    ``x_t`` is a one-hot array ``(..., K)``.
    """
    if not 1 <= t <= schedule.T:
        raise ValueError(f"t={t} outside 1..{schedule.T}")
    xt = np.argmax(np.asarray(x_t), axis=-1)
    return posterior_from_index(xt, x0_probs, schedule.alpha(t),
                                schedule.alpha_bar[t - 1], schedule.alpha_bar[t])


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    p = np.maximum(probs, PROB_FLOOR)
    cdf = np.cumsum(p, axis=-1)
    u = rng.random(p.shape[:-1] + (1,)) * cdf[..., -1:]
    return np.minimum((cdf < u).sum(-1), p.shape[-1] - 1)


# (nodes (B, n), edge_cells (B, m), t) -> (node x0 probs (B, n, a), edge x0 probs (B, m, c))
DenoiseFn = Callable[[np.ndarray, np.ndarray, int], tuple[np.ndarray, np.ndarray]]


@dataclass
class Trajectory:
    """One reverse rollout.

    ``nodes[i]`` / ``edges[i]`` are the labels of G_t at ``t = T - i`` (so row 0 is
    the prior sample G_T and row T-1 is G_1).  ``x0_nodes`` / ``x0_edges`` are the
    sampled G_0 tensors, ``final`` their decoded DAG.
    """

    nodes: Optional[np.ndarray]
    edges: Optional[np.ndarray]
    x0_nodes: np.ndarray
    x0_edges: np.ndarray
    final: OrderedDag
    reward: float = float("nan")
    advantage: float = 0.0
    T: int = field(default=0)

    def at(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Label tensors of G_t (t may be an array of timesteps)."""
        if self.nodes is None:
            raise ValueError("trajectory was generated without intermediates")
        idx = self.T - np.asarray(t)
        return self.nodes[idx], self.edges[idx]

    def state(self, t: int, spec: SpaceSpec) -> NoisyGraph:
        nodes, edges = self.at(t)
        return NoisyGraph(nodes, edges, int(t), spec.node_categories, spec.edge_categories)


def prior_sample(spec: SpaceSpec, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    nodes = rng.integers(0, spec.node_categories, size=(size, spec.max_nodes))
    edges = rng.integers(0, spec.edge_categories, size=(size, spec.num_edge_cells))
    return nodes, edges


def generate(denoise: DenoiseFn, schedule: NoiseSchedule, spec: SpaceSpec,
             rng: np.random.Generator, size: int = 1,
             keep_intermediates: bool = True) -> list[Trajectory]:
    """Run ``size`` reverse chains in lockstep from the uniform prior down to G_0."""
    T = schedule.T
    nodes, edges = prior_sample(spec, rng, size)
    if keep_intermediates:
        node_hist = np.empty((size, T, spec.max_nodes), dtype=np.int64)
        edge_hist = np.empty((size, T, spec.num_edge_cells), dtype=np.int64)
    for t in range(T, 0, -1):
        if keep_intermediates:
            node_hist[:, T - t] = nodes
            edge_hist[:, T - t] = edges
        node_x0, edge_x0 = denoise(nodes, edges, t)
        alpha_t = schedule.alpha(t)
        ab_prev, ab_t = schedule.alpha_bar[t - 1], schedule.alpha_bar[t]
        nodes = sample_categorical(posterior_from_index(nodes, node_x0, alpha_t, ab_prev, ab_t), rng)
        edges = sample_categorical(posterior_from_index(edges, edge_x0, alpha_t, ab_prev, ab_t), rng)
    out = []
    for b in range(size):
        out.append(Trajectory(
            node_hist[b] if keep_intermediates else None,
            edge_hist[b] if keep_intermediates else None,
            nodes[b].copy(), edges[b].copy(), decode(nodes[b], edges[b], spec), T=T,
        ))
    return out


def reverse_generate(denoise: DenoiseFn, schedule: NoiseSchedule, spec: SpaceSpec,
                     rng: np.random.Generator) -> Trajectory:
    return generate(denoise, schedule, spec, rng, size=1)[0]
