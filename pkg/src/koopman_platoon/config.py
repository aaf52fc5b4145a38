"""Flat run configuration shared by all CLI subcommands."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from .idm import IdmParams


class ConfigError(ValueError):
    """Invalid or unreadable run configuration."""


@dataclass
class RunConfig:
    # I/O
    out_dir: str = "out"
    data_dir: str = "out/data"
    model_path: str = "out/model.json"

    # corpus
    dt: float = 0.1
    steps: int = 350
    n_trajectories: int = 50
    n_followers: int = 5
    seed: int = 0

    # leader profile; stop-and-go default exercises the oscillatory regime
    leader_kind: str = "stop_and_go"  # constant | sinusoid | stop_and_go
    leader_amplitude: float = 1.0
    leader_frequency_hz: float = 0.05
    leader_period_s: float = 30.0
    leader_speed: float = 12.0
    profile_jitter: float = 0.2  # relative spread of amplitude/frequency across trajectories

    # follower population
    idm_v0: float = 30.0
    idm_T: float = 1.5
    idm_s0: float = 2.0
    idm_a_max: float = 1.0
    idm_b: float = 1.5
    idm_delta: float = 4.0
    idm_spread: float = 0.2
    accel_noise_sigma: float = 0.05

    # split + training
    ratio_train: float = 0.8
    lam: float = 0.98
    k_train: int = 50
    learning_rate: float = 1e-3
    lr_decay: float = 1.0
    epochs: int = 2000
    batch_size: int = 32
    hidden_sizes: list[int] = field(default_factory=lambda: [64, 64])
    d: int = 40

    # evaluation + stability
    pred_horizon: int = 10
    freq_min_hz: float = 1e-3
    freq_max_hz: float = 5.0
    freq_points: int = 400
    freq_angular: bool = False

    def validate(self) -> None:
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.steps < 2:
            raise ConfigError("steps must be >= 2")
        if self.n_trajectories < 1:
            raise ConfigError("n_trajectories must be >= 1")
        if self.n_followers < 1:
            raise ConfigError("n_followers must be >= 1")
        if not 0 < self.ratio_train < 1:
            raise ConfigError("ratio_train must be in (0, 1)")
        if self.leader_kind not in ("constant", "sinusoid", "stop_and_go"):
            raise ConfigError(f"unknown leader_kind {self.leader_kind!r}")
        if self.freq_min_hz <= 0 or self.freq_max_hz <= self.freq_min_hz:
            raise ConfigError("frequency grid bounds must satisfy 0 < min < max")

    def nominal_idm(self) -> IdmParams:
        return IdmParams(
            v0=self.idm_v0,
            T=self.idm_T,
            s0=self.idm_s0,
            a_max=self.idm_a_max,
            b=self.idm_b,
            delta=self.idm_delta,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional flat JSON file plus CLI overrides."""
    values: dict = {}
    if path is not None:
        try:
            with open(path) as fh:
                values = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if overrides:
        values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg
