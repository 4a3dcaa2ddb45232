"""Experiment configuration: one nested dataclass tree, JSON round trip, hashing.

Every report file embeds `config_hash(cfg)` in its header so two runs can be
compared by eye before being compared byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

from .errors import ConfigurationError

SERVICES = {
    "shopping": ("ctr", "cvr"),
    "talent": ("ctr", "evtr", "lvtr", "cmtr", "gtr"),
}

VARIANTS = ("base", "+stat", "+prod", "+both")


@dataclass
class SimConfig:
    streams: int = 60
    users: int = 200
    buckets: int = 96
    n_c1: int = 5
    n_c2: int = 20
    n_c3: int = 100
    n_products: int = 2000
    n_samples: int = 6000
    service: str = "shopping"
    # phase chain: rows steady / highlight / grab over [steady, highlight, grab]
    phase_matrix: tuple = (
        (0.85, 0.10, 0.05),
        (0.35, 0.60, 0.05),
        (0.55, 0.05, 0.40),
    )
    # category kernel per product switch
    stay_level2: float = 0.6
    move_level1: float = 0.3
    jump: float = 0.1
    repeat_within_stay: float = 0.2
    event_gap_min: int = 4
    event_gap_max: int = 8
    dirichlet_alpha: float = 0.3
    click_affinity_coeff: float = 2.0
    click_highlight_coeff: float = 1.5
    click_bias: float = -2.5
    future_affinity_coeff: float = 2.5
    future_grab_coeff: float = 2.5
    future_bias: float = -3.2

    def __post_init__(self):
        if self.buckets < 48:
            raise ConfigurationError(f"buckets must be >= 48, got {self.buckets}")
        if self.users < 50:
            raise ConfigurationError(f"users must be >= 50, got {self.users}")
        if self.service not in SERVICES:
            raise ConfigurationError(f"unknown service {self.service!r}")
        total = self.stay_level2 + self.move_level1 + self.jump
        if abs(total - 1.0) > 1e-9:
            raise ConfigurationError(f"category kernel probabilities sum to {total}, not 1")
        for row in self.phase_matrix:
            if abs(sum(row) - 1.0) > 1e-9:
                raise ConfigurationError(f"phase matrix row {row} does not sum to 1")


@dataclass
class StatConfig:
    context: int = 32
    horizon_train: int = 5
    horizon_infer: int = 3
    d_model: int = 32
    n_blocks: int = 2
    heads: int = 4
    d_ff: int = 64
    epochs: int = 6
    batch: int = 64
    lr: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.horizon_infer > self.horizon_train:
            raise ConfigurationError(
                f"inference horizon {self.horizon_infer} exceeds trained horizon "
                f"{self.horizon_train}"
            )
        if self.context < 2:
            raise ConfigurationError(f"context must be >= 2, got {self.context}")


@dataclass
class ProdConfig:
    d_model: int = 32
    n_blocks: int = 2
    heads: int = 4
    d_ff: int = 64
    max_context: int = 64
    epochs: int = 40
    batch: int = 128
    lr: float = 6e-3
    seed: int = 0


@dataclass
class RankConfig:
    emb_width: int = 16
    hidden: int = 64
    k_enc: int = 8
    epochs: int = 24
    batch: int = 128
    lr: float = 1e-3
    eval_fraction: float = 0.2
    seed: int = 0


@dataclass
class ExperimentConfig:
    seed: int = 7
    out_dir: str = "runs/default"
    variant: str = "+both"
    sim: SimConfig = field(default_factory=SimConfig)
    stat: StatConfig = field(default_factory=StatConfig)
    prod: ProdConfig = field(default_factory=ProdConfig)
    rank: RankConfig = field(default_factory=RankConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")

    @property
    def tasks(self):
        return SERVICES[self.sim.service]


def to_dict(cfg):
    return dataclasses.asdict(cfg)


def _build(cls, data):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - fields
    if unknown:
        raise ConfigurationError(f"unknown {cls.__name__} keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        if name == "phase_matrix":
            value = tuple(tuple(row) for row in value)
        kwargs[name] = value
    return cls(**kwargs)


def from_dict(data):
    data = dict(data)
    out = {}
    for sub, cls in (("sim", SimConfig), ("stat", StatConfig), ("prod", ProdConfig), ("rank", RankConfig)):
        if sub in data:
            out[sub] = _build(cls, data.pop(sub))
    fields = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - fields
    if unknown:
        raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
    out.update(data)
    return ExperimentConfig(**out)


def load_config(path):
    with open(path) as fh:
        return from_dict(json.load(fh))


def save_config(path, cfg):
    with open(path, "w") as fh:
        json.dump(to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_hash(cfg):
    if dataclasses.is_dataclass(cfg):
        cfg = to_dict(cfg)
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]
