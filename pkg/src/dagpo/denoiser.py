"""Dense denoising network over flattened graph tensors, with exact gradients.

The input row for one graph is::

    [node one-hots (n*a) | positional encodings (n*pe_dim) | edge one-hots (m*c) | t/T]

followed by ``layers`` ReLU hidden layers and one linear output layer whose
units are split into per-node (a) and per-edge-cell (c) softmax groups.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dag import positional_table
from .diffusion import NoisyGraph, one_hot
from .spaces import SpaceSpec


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class DenoiserDims:
    n: int
    node_categories: int
    edge_categories: int
    T: int
    hidden: int = 256
    layers: int = 4
    pe_dim: int = 8

    @property
    def m(self) -> int:
        return self.n * (self.n - 1) // 2

    @property
    def in_dim(self) -> int:
        return self.n * (self.node_categories + self.pe_dim) + self.m * self.edge_categories + 1

    @property
    def out_dim(self) -> int:
        return self.n * self.node_categories + self.m * self.edge_categories

    @classmethod
    def for_space(cls, spec: SpaceSpec, T: int, **kw) -> "DenoiserDims":
        return cls(spec.max_nodes, spec.node_categories, spec.edge_categories, T, **kw)


@dataclass
class DenoiserParams:
    dims: DenoiserDims
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    frozen: list[bool] = field(default_factory=list)

    def __post_init__(self):
        if not self.frozen:
            self.frozen = [False] * len(self.weights)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def layer_sizes(self) -> list[int]:
        return [w.size + b.size for w, b in zip(self.weights, self.biases)]

    def num_params(self) -> int:
        return sum(self.layer_sizes())

    def frozen_fraction(self) -> float:
        sizes = self.layer_sizes()
        return sum(s for s, f in zip(sizes, self.frozen) if f) / sum(sizes)

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.dims, [w.copy() for w in self.weights],
                              [b.copy() for b in self.biases], list(self.frozen))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def allfinite(self) -> bool:
        return all(np.isfinite(w).all() and np.isfinite(b).all()
                   for w, b in zip(self.weights, self.biases))


def init_params(dims: DenoiserDims, rng: np.random.Generator) -> DenoiserParams:
    """Kaiming-uniform hidden layers, zero output layer (uniform initial predictions)."""
    weights, biases = [], []
    fan_in = dims.in_dim
    for _ in range(dims.layers):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, dims.hidden)))
        biases.append(np.zeros(dims.hidden))
        fan_in = dims.hidden
    weights.append(np.zeros((fan_in, dims.out_dim)))
    biases.append(np.zeros(dims.out_dim))
    return DenoiserParams(dims, weights, biases)


@dataclass
class DenoiserOutput:
    node_probs: np.ndarray
    edge_probs: np.ndarray


_PE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _pe_row(n: int, dim: int) -> np.ndarray:
    key = (n, dim)
    if key not in _PE_CACHE:
        _PE_CACHE[key] = positional_table(n, dim).ravel() if dim else np.zeros(0)
    return _PE_CACHE[key]


def build_input(dims: DenoiserDims, nodes: np.ndarray, edges: np.ndarray, t) -> np.ndarray:
    nodes = np.asarray(nodes)
    edges = np.asarray(edges)
    if nodes.ndim != 2 or nodes.shape[1] != dims.n or edges.ndim != 2 or edges.shape[1] != dims.m:
        raise DimensionMismatch(
            f"expected nodes (B, {dims.n}) and edges (B, {dims.m}), got {nodes.shape} and {edges.shape}")
    if nodes.shape[0] != edges.shape[0]:
        raise DimensionMismatch("node and edge batch sizes differ")
    B = nodes.shape[0]
    tcol = np.broadcast_to(np.asarray(t, dtype=np.float64) / dims.T, (B,))
    return np.concatenate([
        one_hot(nodes, dims.node_categories).reshape(B, -1),
        np.broadcast_to(_pe_row(dims.n, dims.pe_dim), (B, dims.n * dims.pe_dim)),
        one_hot(edges, dims.edge_categories).reshape(B, -1),
        tcol[:, None],
    ], axis=1)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _run(params: DenoiserParams, x: np.ndarray):
    acts = [x]
    h = x
    last = params.num_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def _split_logits(dims: DenoiserDims, logits: np.ndarray):
    B = logits.shape[0]
    k = dims.n * dims.node_categories
    return (logits[:, :k].reshape(B, dims.n, dims.node_categories),
            logits[:, k:].reshape(B, dims.m, dims.edge_categories))


def forward_batch(params: DenoiserParams, nodes, edges, t) -> DenoiserOutput:
    x = build_input(params.dims, nodes, edges, t)
    node_logits, edge_logits = _split_logits(params.dims, _run(params, x)[-1])
    return DenoiserOutput(np.exp(_log_softmax(node_logits)), np.exp(_log_softmax(edge_logits)))


def forward(params: DenoiserParams, g_t: NoisyGraph) -> DenoiserOutput:
    out = forward_batch(params, g_t.nodes[None], g_t.edge_cells[None], g_t.t)
    return DenoiserOutput(out.node_probs[0], out.edge_probs[0])


def as_denoise_fn(params: DenoiserParams):
    def denoise(nodes, edges, t):
        out = forward_batch(params, nodes, edges, t)
        return out.node_probs, out.edge_probs
    return denoise


def loss_and_grad_batch(params: DenoiserParams, nodes, edges, t, target_nodes, target_edges,
                        lam: float, scale) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """``sum_b scale_b * (sum_i CE_node + lam * sum_cells CE_edge)`` and its gradient.

    Gradients are returned per layer as ``(dW, db)``; frozen layers get exact zeros.
    """
    dims = params.dims
    x = build_input(dims, nodes, edges, t)
    B = x.shape[0]
    target_nodes = np.asarray(target_nodes)
    target_edges = np.asarray(target_edges)
    if target_nodes.shape != (B, dims.n) or target_edges.shape != (B, dims.m):
        raise DimensionMismatch("target tensors do not match the batch")
    scale = np.broadcast_to(np.asarray(scale, dtype=np.float64), (B,))

    acts = _run(params, x)
    node_logits, edge_logits = _split_logits(dims, acts[-1])
    node_lp = _log_softmax(node_logits)
    edge_lp = _log_softmax(edge_logits)
    tn = one_hot(target_nodes, dims.node_categories)
    te = one_hot(target_edges, dims.edge_categories)
    per_graph = -(node_lp * tn).sum(axis=(1, 2)) - lam * (edge_lp * te).sum(axis=(1, 2))
    loss = float((scale * per_graph).sum())

    d_node = (np.exp(node_lp) - tn) * scale[:, None, None]
    d_edge = (np.exp(edge_lp) - te) * (lam * scale)[:, None, None]
    delta = np.concatenate([d_node.reshape(B, -1), d_edge.reshape(B, -1)], axis=1)

    grads: list = [None] * params.num_layers
    first_trainable = next((i for i, f in enumerate(params.frozen) if not f), params.num_layers)
    for i in range(params.num_layers - 1, -1, -1):
        w = params.weights[i]
        if params.frozen[i]:
            grads[i] = (np.zeros_like(w), np.zeros_like(params.biases[i]))
        else:
            grads[i] = (acts[i].T @ delta, delta.sum(axis=0))
        if i > first_trainable:
            delta = (delta @ w.T) * (acts[i] > 0)
        elif i > 0:
            # nothing trainable below this layer
            for j in range(i):
                grads[j] = (np.zeros_like(params.weights[j]), np.zeros_like(params.biases[j]))
            break
    return loss, grads


def loss_and_grad(params: DenoiserParams, g_t: NoisyGraph, target_nodes, target_edges,
                  lam: float = 5.0, scale: float = 1.0):
    return loss_and_grad_batch(params, g_t.nodes[None], g_t.edge_cells[None], g_t.t,
                               np.asarray(target_nodes)[None], np.asarray(target_edges)[None],
                               lam, scale)


def freeze_fraction(params: DenoiserParams, fraction: float) -> float:
    """Freeze the shortest input-side prefix of layers holding >= ``fraction`` of all
    parameters.  Returns the achieved frozen fraction."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    sizes = params.layer_sizes()
    total = sum(sizes)
    cum = np.concatenate([[0], np.cumsum(sizes)])
    k = int(np.argmax(cum >= fraction * total - 1e-12))
    params.frozen = [i < k for i in range(params.num_layers)]
    return cum[k] / total


@dataclass
class AdamW:
    """Decoupled-weight-decay Adam with gradient accumulation over micro-batches."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def _ensure(self, params: DenoiserParams):
        if not self.m:
            for w, b in zip(params.weights, params.biases):
                self.m.append([np.zeros_like(w), np.zeros_like(b)])
                self.v.append([np.zeros_like(w), np.zeros_like(b)])

    def step(self, params: DenoiserParams, grads, lr: float | None = None) -> DenoiserParams:
        lr = self.lr if lr is None else lr
        self._ensure(params)
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for i, (gw, gb) in enumerate(grads):
            if params.frozen[i]:
                continue
            for k, (p, g) in enumerate(((params.weights[i], gw), (params.biases[i], gb))):
                m, v = self.m[i][k], self.v[i][k]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                p *= 1.0 - lr * self.weight_decay
                p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        return params


def average_grads(micro: list) -> list:
    """Mean of per-micro-batch gradient lists (each micro-batch loss is itself a mean)."""
    if not micro:
        raise ValueError("no gradients to accumulate")
    k = len(micro)
    return [(sum(g[i][0] for g in micro) / k, sum(g[i][1] for g in micro) / k)
            for i in range(len(micro[0]))]


def apply_update(params: DenoiserParams, gradient, optimizer: AdamW, lr: float | None = None,
                 accumulation: int = 1) -> DenoiserParams:
    """One optimizer step.  With ``accumulation > 1``, ``gradient`` is a list of
    that many micro-batch gradients which are averaged first."""
    if accumulation > 1:
        if len(gradient) != accumulation:
            raise ValueError(f"expected {accumulation} micro-batch gradients, got {len(gradient)}")
        gradient = average_grads(gradient)
    return optimizer.step(params, gradient, lr)
