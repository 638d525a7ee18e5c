"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored.  Unknown keys and unparsable values
raise :class:`ConfigError` naming the key and line.  The effective config of
every run is written back in the same format so it can be re-run verbatim.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .reward import RewardSpec
from .spaces import SpaceSpec, space_by_name
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # search space
    space: str = "synthetic"
    nodes: int = 5
    node_categories: int = 2
    edge_categories: int = 3
    # diffusion / network
    T: int = 800
    schedule_offset: float = 0.008
    hidden: int = 256
    layers: int = 4
    pe_dim: int = 8
    lam: float = 5.0
    seed: int = 42
    # phase 1
    pretrain_epochs: int = 200
    pretrain_batch: int = 64
    pretrain_lr: float = 3e-4
    dataset: Optional[str] = None
    dataset_size: int = 2048
    filter_threshold: Optional[float] = None
    # phase 2
    finetune_epochs: int = 60
    batch_size: int = 15
    lr: float = 7e-7
    timestep_subset: int = 40
    freeze: float = 0.75
    accumulation: int = 1
    weight_decay: float = 0.01
    # reward
    reward_mode: str = "forward"
    reward_dataset: Optional[str] = None
    datasets: Optional[str] = None
    weights: Optional[str] = None
    # evaluation
    threshold: Optional[float] = None
    eval_every: int = 5
    eval_samples: int = 300
    # paths
    benchmark: Optional[str] = None
    checkpoint_dir: str = "runs/checkpoints"
    report_dir: str = "runs/report"

    def space_spec(self) -> SpaceSpec:
        try:
            return space_by_name(self.space, nodes=self.nodes, node_categories=self.node_categories,
                                 edge_categories=self.edge_categories)
        except ValueError as exc:
            raise ConfigError(f"space: {exc}") from None

    def primary_dataset(self) -> str:
        if self.reward_dataset:
            return self.reward_dataset
        return "synthetic" if self.space == "synthetic" else "c10"

    def dataset_ids(self) -> list[str]:
        if self.datasets:
            return [d.strip() for d in self.datasets.split(",") if d.strip()]
        if self.space == "synthetic":
            return ["depth", "edge1"]
        if self.space == "nb201":
            return ["c10", "c100", "in16"]
        return ["c10"]

    def reward_spec(self) -> RewardSpec:
        try:
            if self.weights:
                ws = [float(w) for w in self.weights.split(",")]
                ids = self.dataset_ids()
                if len(ws) != len(ids):
                    raise ConfigError(f"weights: {len(ws)} weights for datasets {ids}")
                mode = "multi_objective" if self.reward_mode != "inverse" else "inverse"
                return RewardSpec(mode, dict(zip(ids, ws)))
            return RewardSpec(self.reward_mode, {self.primary_dataset(): 1.0})
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"reward: {exc}") from None

    def _common(self) -> dict:
        return dict(T=self.T, schedule_offset=self.schedule_offset, hidden=self.hidden, layers=self.layers,
                    pe_dim=self.pe_dim, lam=self.lam, seed=self.seed, accumulation=self.accumulation,
                    weight_decay=self.weight_decay)

    def pretrain_config(self) -> TrainConfig:
        return TrainConfig.pretrain_defaults(epochs=self.pretrain_epochs, batch_size=self.pretrain_batch,
                                             lr=self.pretrain_lr, **self._common())

    def finetune_config(self) -> TrainConfig:
        return TrainConfig.finetune_defaults(
            epochs=self.finetune_epochs, batch_size=self.batch_size, lr=self.lr,
            timestep_subset=self.timestep_subset, freeze=self.freeze, eval_every=self.eval_every,
            eval_samples=self.eval_samples, threshold=self.threshold,
            eval_dataset=self.primary_dataset(), **self._common())

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **{k: v for k, v in kw.items() if v is not None})

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is not None:
                lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")
        return path


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    if raw.lower() in ("", "none", "null") and kind.startswith("Optional"):
        return None
    base = kind.removeprefix("Optional[").rstrip("]")
    try:
        if base == "int":
            return int(raw)
        if base == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {base}, got {raw!r}") from None
    return raw


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value'")
        if key not in _TYPES:
            raise ConfigError(f"{source}:{line_no}: unknown key {key!r}")
        values[key] = _coerce(key, raw.strip().strip('"').strip("'"))
    cfg = RunConfig(**values)
    if cfg.reward_mode not in ("forward", "inverse", "multi_objective"):
        raise ConfigError(f"reward_mode: unknown mode {cfg.reward_mode!r}")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
