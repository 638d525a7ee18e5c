"""Sample-set statistics: crossing rate, bootstrap extremes, OOD lift, Pareto fronts
and hypervolume."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dag import Dag


class EmptyPool(ValueError):
    pass


class DimensionUnsupported(ValueError):
    pass


@dataclass
class Sample:
    dag: Dag
    metrics: dict[str, float]
    reward: float


@dataclass
class SampleSet:
    samples: list[Sample] = field(default_factory=list)
    epoch: int = 0
    seed: int = 0

    def __len__(self):
        return len(self.samples)

    def accuracies(self, dataset_id: str) -> np.ndarray:
        """Metric per sample; samples without an entry (not in the table) count as 0."""
        return np.array([s.metrics.get(dataset_id, 0.0) for s in self.samples], dtype=np.float64)

    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.samples], dtype=np.float64)

    def objective_matrix(self, dataset_ids: Sequence[str]) -> np.ndarray:
        rows = [[s.metrics[d] for d in dataset_ids] for s in self.samples
                if all(d in s.metrics for d in dataset_ids)]
        return np.array(rows, dtype=np.float64).reshape(-1, len(dataset_ids))


def crossing_rate(s: SampleSet, threshold: float, dataset_id: str) -> float:
    acc = s.accuracies(dataset_id)
    if acc.size == 0:
        return 0.0
    return float(np.mean(acc >= threshold))


def bootstrap_extreme(pool, N: int, K: int = 10_000, mode: str = "max",
                      rng: np.random.Generator | None = None) -> float:
    """Expected best (or worst) of a random batch of N, by resampling the pool."""
    pool = np.asarray(pool, dtype=np.float64).ravel()
    if pool.size == 0:
        raise EmptyPool("bootstrap pool is empty")
    if N < 1 or K < 1:
        raise ValueError("N and K must be positive")
    if mode not in ("max", "min"):
        raise ValueError(f"mode must be 'max' or 'min', got {mode!r}")
    rng = np.random.default_rng() if rng is None else rng
    draws = pool[rng.integers(0, pool.size, size=(K, N))]
    ext = draws.max(axis=1) if mode == "max" else draws.min(axis=1)
    return float(ext.mean())


def ood_lift(s: SampleSet, threshold: float, dataset_id: str, top_fraction: float = 0.1) -> float:
    """Relative over-representation of above-threshold samples in the top group.

    ``P(acc >= threshold | top fraction by accuracy) / P(acc >= threshold) - 1``;
    zero when no sample crosses the threshold.
    """
    if not 0.0 < top_fraction <= 1.0:
        raise ValueError("top_fraction must lie in (0, 1]")
    acc = s.accuracies(dataset_id)
    if acc.size == 0:
        return 0.0
    overall = float(np.mean(acc >= threshold))
    if overall == 0.0:
        return 0.0
    k = max(1, math.ceil(top_fraction * acc.size))
    top = np.sort(acc)[::-1][:k]
    return float(np.mean(top >= threshold)) / overall - 1.0


@dataclass
class ParetoFront:
    points: np.ndarray
    reference: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(len(self.points), -1)
        self.reference = np.asarray(self.reference, dtype=np.float64)


def dominates(p: np.ndarray, q: np.ndarray) -> bool:
    return bool(np.all(p >= q) and np.any(p > q))


def nondominated(points) -> np.ndarray:
    """Maximal points under componentwise >=, duplicates collapsed, in input order."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        return pts.reshape(0, pts.shape[-1] if pts.ndim == 2 else 0)
    # lexicographic descending sweep: a point can only be dominated by one seen earlier
    order = np.lexsort(tuple(-pts[:, k] for k in range(pts.shape[1] - 1, -1, -1)))
    kept: list[int] = []
    for i in order:
        p = pts[i]
        if any(np.all(pts[j] >= p) for j in kept):
            continue
        kept.append(int(i))
    return pts[sorted(kept)]


def pareto_extract(s: SampleSet, dataset_ids: Sequence[str], reference=None) -> ParetoFront:
    objs = s.objective_matrix(dataset_ids)
    if objs.shape[0] == 0:
        raise ValueError("no sample carries all requested metrics")
    ref = np.zeros(len(dataset_ids)) if reference is None else reference
    return ParetoFront(nondominated(objs), ref)


def _hv(points: np.ndarray, ref: np.ndarray) -> float:
    if points.shape[0] == 0:
        return 0.0
    if points.shape[1] == 1:
        return float(points[:, 0].max() - ref[0])
    # slice along the last objective, from the top down
    last = points[:, -1]
    levels = np.unique(last)[::-1]
    vol = 0.0
    for i, z in enumerate(levels):
        below = levels[i + 1] if i + 1 < len(levels) else ref[-1]
        active = points[last >= z][:, :-1]
        vol += (z - below) * _hv(nondominated(active), ref[:-1])
    return vol


def hypervolume(front: ParetoFront) -> float:
    """Lebesgue measure of the union of boxes ``[reference, p]`` (maximization)."""
    pts, ref = front.points, front.reference
    if pts.ndim != 2 or pts.shape[0] == 0:
        return 0.0
    if pts.shape[1] > 3:
        raise DimensionUnsupported(f"hypervolume supports up to 3 objectives, got {pts.shape[1]}")
    pts = np.maximum(pts, ref)
    return _hv(nondominated(pts), ref)
