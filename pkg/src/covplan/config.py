"""Run configuration: named profiles, JSON config files, flag overrides.

Precedence is flags > config file > profile defaults; every resolved field
remembers where its value came from so the run log can show it.  The
``desk`` profile is CPU-trainable in minutes and is the default
everywhere; ``paper`` is the full-scale configuration.

Note on the paper-scale encoder: with the pinned pooling schedule (three
stride-2 max-pools) a 100x100 map flattens to 12*12*16 = 2304 features.
The flattened length is a free parameter downstream, so nothing else
depends on this number.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .d2coplan import D2CoPlanConfig, TrainConfig
from .dmp import DmpConfig
from .world import DensityGenConfig, WorldParams

PROFILES = ("desk", "paper")

_DESK = {
    "grid_size": 32,
    "sensing_range": 3,
    "step_distance": 8,
    "comm_range": 12.0,
    "fill_fraction": 0.15,
    "n_robots": 6,
    "target_speed": 2.0,
    "density_stddevs": (6.0, 10.0, 13.0, 16.0),
    "encoder_channels": (4, 8, 16),
    "gnn_widths": (64, 32),
    "hops": 1,
    "dropout": 0.2,
    "epochs": 200,
    "batch_size": 32,
    "learning_rate": 1e-3,
    "dataset_count": 400,
    "dmp_channels": (8, 16, 4, 2),
    "dmp_epochs": 2000,
    "dmp_samples": 100,
    "trials": 200,
}

_PAPER = {
    "grid_size": 100,
    "sensing_range": 6,
    "step_distance": 20,
    "comm_range": 20.0,
    "fill_fraction": 0.15,
    "n_robots": 20,
    "target_speed": 2.0,
    "density_stddevs": (20.0, 30.0, 40.0, 50.0),
    "encoder_channels": (4, 8, 16),
    "gnn_widths": (512, 128),
    "hops": 1,
    "dropout": 0.2,
    "epochs": 1500,
    "batch_size": 32,
    "learning_rate": 1e-3,
    "dataset_count": 40000,
    "dmp_channels": (8, 16, 4, 2),
    "dmp_epochs": 2000,
    "dmp_samples": 100,
    "trials": 1000,
}

_COMMON = {
    "seed": 0,
    "split_fractions": (0.6, 0.2, 0.2),
    "density_components": (10, 30),
    "density_invert_prob": 0.3,
    "jobs": 1,
}

_TUPLE_FIELDS = {
    "density_stddevs", "encoder_channels", "gnn_widths", "split_fractions",
    "density_components", "dmp_channels",
}


@dataclass
class RunConfig:
    profile: str = "desk"
    grid_size: int = 32
    sensing_range: int = 3
    step_distance: int = 8
    comm_range: float = 12.0
    fill_fraction: float = 0.15
    n_robots: int = 6
    target_speed: float = 2.0
    density_components: tuple = (10, 30)
    density_stddevs: tuple = (6.0, 10.0, 13.0, 16.0)
    density_invert_prob: float = 0.3
    encoder_channels: tuple = (4, 8, 16)
    gnn_widths: tuple = (64, 32)
    hops: int = 1
    dropout: float = 0.2
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    dataset_count: int = 400
    split_fractions: tuple = (0.6, 0.2, 0.2)
    dmp_channels: tuple = (8, 16, 4, 2)
    dmp_epochs: int = 2000
    dmp_samples: int = 100
    trials: int = 200
    jobs: int = 1
    provenance: dict = field(default_factory=dict)

    # -- derived objects -----------------------------------------------------

    def world_params(self) -> WorldParams:
        return WorldParams(
            grid_size=self.grid_size,
            sensing_range=self.sensing_range,
            step_distance=self.step_distance,
            comm_range=self.comm_range,
            fill_fraction=self.fill_fraction,
        )

    def density_config(self) -> DensityGenConfig:
        return DensityGenConfig(
            components_range=tuple(self.density_components),
            stddev_choices=tuple(self.density_stddevs),
            invert_prob=self.density_invert_prob,
        )

    def speed_range(self) -> tuple[float, float]:
        return (-self.target_speed, self.target_speed)

    def planner_config(self) -> D2CoPlanConfig:
        return D2CoPlanConfig(
            grid_size=self.grid_size,
            encoder_channels=tuple(self.encoder_channels),
            gnn_widths=tuple(self.gnn_widths),
            hops=self.hops,
            dropout=self.dropout,
        )

    def dmp_config(self) -> DmpConfig:
        return DmpConfig(grid_size=self.grid_size, channels=tuple(self.dmp_channels))

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
        )

    def dmp_train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.dmp_epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
        )

    def to_log_dict(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name == "provenance":
                continue
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = list(value)
            out[f.name] = {"value": value, "source": self.provenance.get(f.name, "default")}
        return out


def resolve_config(
    profile: str = "desk",
    config_file=None,
    flag_overrides: dict | None = None,
) -> RunConfig:
    """Merge profile defaults, a JSON config file, and flag overrides.

    Unknown keys in the file or flags are rejected; the provenance of each
    field (default | file | flag) is recorded on the result.
    """
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")
    base = dict(_COMMON)
    base.update(_DESK if profile == "desk" else _PAPER)
    values = {"profile": profile}
    provenance = {"profile": "flag" if profile != "desk" else "default"}
    for key, val in base.items():
        values[key] = val
        provenance[key] = "default"
    known = {f.name for f in fields(RunConfig)} - {"provenance", "profile"}
    if config_file is not None:
        doc = json.loads(Path(config_file).read_text())
        for key, val in doc.items():
            if key not in known:
                raise ValueError(f"unknown config key {key!r} in {config_file}")
            values[key] = val
            provenance[key] = "file"
    for key, val in (flag_overrides or {}).items():
        if val is None:
            continue
        if key not in known:
            raise ValueError(f"unknown config override {key!r}")
        values[key] = val
        provenance[key] = "flag"
    for key in _TUPLE_FIELDS:
        values[key] = tuple(values[key])
    return RunConfig(**values, provenance=provenance)
