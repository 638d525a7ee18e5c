"""Reward oracles (tabular benchmark lookup, synthetic structure score) and the
running statistics used to turn rewards into clipped advantages."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol

import numpy as np

from .dag import Dag, kahn_order
from .spaces import InvalidArchitecture, SpaceSpec, arch_key, decode_key, space_by_name, validate

ADVANTAGE_CLIP = 5.0
SYNTHETIC_METRICS = ("synthetic", "depth", "edge1")


class ParseError(ValueError):
    def __init__(self, path, line_no: int, msg: str):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.line_no = line_no


class RangeError(ParseError):
    pass


class ArchKeyError(KeyError):
    def __init__(self, path, line_no: int, msg: str):
        super().__init__(f"{path}:{line_no}: {msg}")
        self.line_no = line_no

    def __str__(self):
        return self.args[0]


@dataclass
class BenchmarkTable:
    space: str
    entries: dict[str, dict[str, float]]

    def __len__(self):
        return len(self.entries)

    def lookup(self, g: Dag, spec: SpaceSpec) -> dict[str, float]:
        try:
            return self.entries.get(arch_key(g, spec), {})
        except InvalidArchitecture:
            return {}

    def datasets(self) -> list[str]:
        seen: dict[str, None] = {}
        for metrics in self.entries.values():
            seen.update(dict.fromkeys(metrics))
        return list(seen)


def load_benchmark(path, space: SpaceSpec | None = None) -> BenchmarkTable:
    """Read a line-delimited ``{"key": ..., "metrics": {...}}`` table.

    Every key must decode to a valid architecture of its space and every metric
    must lie in [0, 1]; the first offending line is reported by number.
    """
    path = Path(path)
    entries: dict[str, dict[str, float]] = {}
    space_name = space.name if space is not None else None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                key = rec["key"]
                metrics = {str(k): float(v) for k, v in rec["metrics"].items()}
            except (ValueError, KeyError, TypeError, AttributeError) as exc:
                raise ParseError(path, line_no, f"malformed record ({exc})") from None
            for name, acc in metrics.items():
                if not (0.0 <= acc <= 1.0):
                    raise RangeError(path, line_no, f"metric {name}={acc} outside [0, 1]")
            try:
                name, g = decode_key(key)
            except KeyError as exc:
                raise ArchKeyError(path, line_no, str(exc.args[0])) from None
            if space_name is None:
                space_name = name
            if name != space_name:
                raise ArchKeyError(path, line_no, f"key space {name!r} differs from {space_name!r}")
            spec = space if space is not None else space_by_name(name)
            report = validate(g, spec)
            if not report:
                raise ArchKeyError(path, line_no, f"invalid {name} architecture: {', '.join(report.violations)}")
            entries[key] = metrics
    return BenchmarkTable(space_name or "", entries)


def write_benchmark(path, table: BenchmarkTable) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, metrics in table.entries.items():
            fh.write(json.dumps({"key": key, "metrics": metrics}) + "\n")


@dataclass(frozen=True)
class RewardSpec:
    """How per-dataset metrics combine into one scalar reward."""

    mode: str = "forward"
    weights: Mapping[str, float] = field(default_factory=lambda: {"c10": 1.0})
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("forward", "inverse", "multi_objective"):
            raise ValueError(f"unknown reward mode {self.mode!r}")
        if self.mode == "multi_objective" and sum(1 for w in self.weights.values() if w != 0) < 2:
            raise ValueError("multi_objective rewards need at least two nonzero weights")

    @property
    def primary(self) -> str:
        return next(iter(self.weights))

    def normalized(self, name: str, value: float) -> float:
        lo, hi = self.bounds.get(name, (0.0, 1.0))
        return min(max((value - lo) / (hi - lo), 0.0), 1.0)

    def combine(self, metrics: Mapping[str, float]) -> float:
        if not metrics:
            return 0.0
        r = sum(w * self.normalized(k, metrics[k]) for k, w in self.weights.items() if k in metrics)
        return -r if self.mode == "inverse" else r


def tabular_reward(table: BenchmarkTable, g: Dag, spec: RewardSpec, space: SpaceSpec) -> float:
    return spec.combine(table.lookup(g, space))


def longest_path(g: Dag) -> int:
    """Number of edges on the longest directed path."""
    depth = np.zeros(g.n, dtype=np.int64)
    for i in kahn_order(g.edges):
        for j in np.flatnonzero(g.edges[i]):
            depth[j] = max(depth[j], depth[i] + 1)
    return int(depth.max())


def synthetic_metrics(g: Dag) -> dict[str, float]:
    n = g.n
    if n <= 1:
        return {"synthetic": 0.0, "depth": 0.0, "edge1": 0.0}
    depth = longest_path(g) / (n - 1)
    edge1 = int(np.count_nonzero(g.edges == 1)) / (n * (n - 1) // 2)
    return {"synthetic": 0.5 * depth + 0.5 * edge1, "depth": depth, "edge1": edge1}


def synthetic_reward(g: Dag) -> float:
    """Half normalized longest-path depth, half fraction of category-1 edges."""
    return synthetic_metrics(g)["synthetic"]


class MetricSource(Protocol):
    def __call__(self, g: Dag) -> dict[str, float]: ...


@dataclass
class TableMetrics:
    table: BenchmarkTable
    space: SpaceSpec

    def __call__(self, g: Dag) -> dict[str, float]:
        return self.table.lookup(g, self.space)


@dataclass
class RewardOracle:
    """Final graph -> (scalar reward, raw per-dataset metrics)."""

    metrics: Callable[[Dag], Mapping[str, float]]
    spec: RewardSpec

    def score(self, g: Dag) -> tuple[float, dict[str, float]]:
        m = dict(self.metrics(g))
        return self.spec.combine(m), m

    def __call__(self, g: Dag) -> float:
        return self.score(g)[0]


@dataclass
class RewardStats:
    """Exponential moving mean/variance of rewards.

    The first batch seeds the statistics with its own mean and population
    variance.  Later batches are blended in with weight ``1 - decay`` using the
    two-component mixture formula, so a batch equal to the running mean leaves
    the mean bitwise unchanged.
    """

    mean: float = 0.0
    var: float = 0.0
    count: int = 0
    decay: float = 0.99
    std_floor: float = 1e-6

    @property
    def std(self) -> float:
        return max(math.sqrt(max(self.var, 0.0)), self.std_floor)

    def update(self, rewards) -> "RewardStats":
        r = np.asarray(rewards, dtype=np.float64)
        if r.size == 0:
            return self
        # shifted by the first reward so identical batches give an exact mean and zero variance
        shifted = r - r.flat[0]
        bmean = float(r.flat[0] + shifted.mean())
        bvar = float(shifted.var())
        if self.count == 0:
            self.mean, self.var = bmean, bvar
        else:
            w = 1.0 - self.decay
            diff = bmean - self.mean
            self.mean = self.mean + w * diff
            self.var = self.decay * (self.var + w * diff * diff) + w * bvar
        self.count += int(r.size)
        return self

    def to_dict(self) -> dict:
        return {"mean": self.mean, "var": self.var, "count": self.count,
                "decay": self.decay, "std_floor": self.std_floor}


def advantage(r, stats: RewardStats):
    """``clip((r - mean) / std, -5, 5)``; works elementwise on arrays."""
    a = np.clip((np.asarray(r, dtype=np.float64) - stats.mean) / stats.std, -ADVANTAGE_CLIP, ADVANTAGE_CLIP)
    return float(a) if a.ndim == 0 else a
