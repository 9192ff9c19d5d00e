"""Pipeline configuration: one JSON file, flag overrides win.

Sections mirror the module configs they feed. Unknown keys are rejected so
typos fail fast at run start.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path

from .baselines import AttnConfig, MlpConfig
from .errors import ConfigError
from .labeling import OracleConfig
from .prm.model import ModelArch
from .prm.training import TrainConfig
from .synthetic import SyntheticSpec


@dataclass(frozen=True)
class Seeds:
    global_seed: int = 0
    balance: int = 1
    train: int = 2
    bootstrap: int = 3

    def to_dict(self) -> dict:
        return {
            "global": self.global_seed,
            "balance": self.balance,
            "train": self.train,
            "bootstrap": self.bootstrap,
        }


DEFAULT_KEYWORDS = (
    "pleural effusion",
    "pneumothorax",
    "consolidation",
    "pneumonia",
    "edema",
    "atelectasis",
    "tube",
)


@dataclass(frozen=True)
class PipelineConfig:
    seeds: Seeds = Seeds()
    oracle: OracleConfig = OracleConfig()
    synthetic: SyntheticSpec = SyntheticSpec()
    arch: ModelArch = ModelArch()
    prm_train: TrainConfig = TrainConfig()
    mlp: MlpConfig = MlpConfig()
    attn: AttnConfig = AttnConfig()
    threshold: float = 0.5
    balance_ratio: float = 1.0
    pct_grid: tuple[float, ...] = (0, 5, 10, 15, 20)
    n_grid: tuple[int, ...] = (1, 2, 4, 8)
    bootstrap_n: int = 1000
    level: float = 0.95
    keywords: tuple[str, ...] = DEFAULT_KEYWORDS

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError(f"threshold {self.threshold} outside [0,1]")
        if self.balance_ratio <= 0:
            raise ConfigError("balance_ratio must be positive")
        if self.bootstrap_n < 1:
            raise ConfigError("bootstrap_n must be >= 1")

    def options_dict(self) -> dict:
        """Everything that affects outputs; used for the artifact hash."""
        return {
            "seeds": self.seeds.to_dict(),
            "oracle": {"backend": self.oracle.backend, "retries": self.oracle.retries},
            "synthetic": self.synthetic.to_dict(),
            "arch": self.arch.to_dict(),
            "prm_train": self.prm_train.to_dict(),
            "mlp": self.mlp.__dict__,
            "attn": self.attn.__dict__,
            "threshold": self.threshold,
            "balance_ratio": self.balance_ratio,
            "pct_grid": list(self.pct_grid),
            "n_grid": list(self.n_grid),
            "bootstrap_n": self.bootstrap_n,
            "level": self.level,
            "keywords": list(self.keywords),
        }


_SECTION_TYPES = {
    "oracle": OracleConfig,
    "synthetic": SyntheticSpec,
    "arch": ModelArch,
    "prm_train": TrainConfig,
    "mlp": MlpConfig,
    "attn": AttnConfig,
}


def _build_section(cls, data: dict, section: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}") from exc


def config_from_dict(data: dict) -> PipelineConfig:
    data = dict(data)
    kwargs = {}
    if "seeds" in data:
        seeds = data.pop("seeds")
        unknown = set(seeds) - {"global", "balance", "train", "bootstrap"}
        if unknown:
            raise ConfigError(f"unknown seed names: {sorted(unknown)}")
        kwargs["seeds"] = Seeds(
            global_seed=seeds.get("global", 0),
            balance=seeds.get("balance", 1),
            train=seeds.get("train", 2),
            bootstrap=seeds.get("bootstrap", 3),
        )
    for section, cls in _SECTION_TYPES.items():
        if section in data:
            kwargs[section] = _build_section(cls, data.pop(section), section)
    for scalar in ("threshold", "balance_ratio", "bootstrap_n", "level"):
        if scalar in data:
            kwargs[scalar] = data.pop(scalar)
    for listy in ("pct_grid", "n_grid", "keywords"):
        if listy in data:
            kwargs[listy] = tuple(data.pop(listy))
    if data:
        raise ConfigError(f"unknown config keys: {sorted(data)}")
    return PipelineConfig(**kwargs)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(data)
