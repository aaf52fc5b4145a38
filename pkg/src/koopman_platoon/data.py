"""Platoon trajectory data: ingestion, synthesis, state derivation, splits, scaling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .idm import IdmParams, idm_accel

MIN_SPACING = 0.1  # collision threshold during simulation [m]

CSV_COLUMNS = ["traj_id", "step", "vehicle", "position_m", "velocity_mps", "accel_mps2"]


class DataError(ValueError):
    """Malformed or inconsistent trajectory data."""


class CollisionError(RuntimeError):
    """Spacing collapsed during simulation."""

    def __init__(self, step: int, follower: int):
        self.step = step
        self.follower = follower
        super().__init__(f"collision: follower {follower} at step {step}")


@dataclass(frozen=True)
class VehicleTrace:
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray

    def __post_init__(self):
        n = len(self.position)
        if len(self.velocity) != n or len(self.acceleration) != n:
            raise DataError("position/velocity/acceleration lengths differ")


@dataclass(frozen=True)
class PlatoonTrajectory:
    """One leader (index 0) plus n followers, sampled at a fixed dt."""

    id: str
    dt: float
    vehicles: list[VehicleTrace]

    def __post_init__(self):
        if self.dt <= 0:
            raise DataError(f"trajectory {self.id}: dt must be positive")
        if len(self.vehicles) < 2:
            raise DataError(f"trajectory {self.id}: need a leader and at least one follower")
        steps = len(self.vehicles[0].position)
        if steps < 2:
            raise DataError(f"trajectory {self.id}: need at least 2 steps")
        for i, veh in enumerate(self.vehicles):
            if len(veh.position) != steps:
                raise DataError(f"trajectory {self.id}: vehicle {i} has a different step count")
        for i in range(1, len(self.vehicles)):
            gap = self.vehicles[i - 1].position - self.vehicles[i].position
            if np.any(gap <= 0):
                k = int(np.argmax(gap <= 0))
                raise DataError(
                    f"trajectory {self.id}: non-positive spacing for vehicle {i} at step {k}"
                )

    @property
    def steps(self) -> int:
        return len(self.vehicles[0].position)

    @property
    def n_followers(self) -> int:
        return len(self.vehicles) - 1


@dataclass(frozen=True)
class StateSequence:
    """Car-following states per step, columns ordered [s_1..s_n, v_1..v_n, dv_1..dv_n].

    dv_i = v_i - v_{i-1} (approach rate, positive when closing). The control u
    is the leader acceleration.
    """

    n_followers: int
    states: np.ndarray  # (steps, 3 * n_followers)
    controls: np.ndarray  # (steps,)
    leader_position: np.ndarray  # (steps,)

    def __post_init__(self):
        n = self.n_followers
        if self.states.ndim != 2 or self.states.shape[1] != 3 * n:
            raise DataError("states must be (steps, 3 * n_followers)")
        if len(self.controls) != self.states.shape[0]:
            raise DataError("controls length must match states")
        if np.any(self.states[:, :n] <= 0):
            raise DataError("non-positive spacing in state sequence")

    @property
    def steps(self) -> int:
        return self.states.shape[0]

    def spacings(self) -> np.ndarray:
        return self.states[:, : self.n_followers]

    def velocities(self) -> np.ndarray:
        n = self.n_followers
        return self.states[:, n : 2 * n]

    def speed_diffs(self) -> np.ndarray:
        return self.states[:, 2 * self.n_followers :]

    def leader_velocity(self) -> np.ndarray:
        # v_0 = v_1 - dv_1 by the approach-rate convention
        return self.states[:, self.n_followers] - self.states[:, 2 * self.n_followers]


@dataclass(frozen=True)
class NormScales:
    """Scale-only normalization (no mean shift): apply divides, invert multiplies."""

    state_scale: np.ndarray  # (3 * n_followers,)
    control_scale: float

    def __post_init__(self):
        if np.any(self.state_scale <= 0) or self.control_scale <= 0:
            raise DataError("normalization scales must be strictly positive")

    def apply_states(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) / self.state_scale

    def invert_states(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x) * self.state_scale

    def apply_controls(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u) / self.control_scale

    def invert_controls(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u) * self.control_scale


@dataclass(frozen=True)
class Dataset:
    sequences: list[StateSequence]
    dt: float
    norm: NormScales | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise DataError("dt must be positive")
        if self.sequences:
            n = self.sequences[0].n_followers
            if any(s.n_followers != n for s in self.sequences):
                raise DataError("all sequences must share n_followers")

    @property
    def n_followers(self) -> int:
        if not self.sequences:
            raise DataError("empty dataset")
        return self.sequences[0].n_followers


def derive_states(traj: PlatoonTrajectory) -> StateSequence:
    """Convert a platoon trajectory to [s; v; dv] states plus leader-accel controls."""
    n = traj.n_followers
    pos = np.stack([v.position for v in traj.vehicles])  # (n+1, steps)
    vel = np.stack([v.velocity for v in traj.vehicles])
    spacing = pos[:-1] - pos[1:]  # (n, steps)
    if np.any(spacing <= 0):
        raise DataError(f"trajectory {traj.id}: non-positive spacing")
    dv = vel[1:] - vel[:-1]
    states = np.concatenate([spacing.T, vel[1:].T, dv.T], axis=1)
    return StateSequence(
        n_followers=n,
        states=states,
        controls=traj.vehicles[0].acceleration.copy(),
        leader_position=traj.vehicles[0].position.copy(),
    )


def load_trajectories(path, dt: float = 0.1) -> Dataset:
    """Load the long-format trajectory CSV and derive state sequences.

    Columns: traj_id,step,vehicle,position_m,velocity_mps,accel_mps2.
    Trajectories are ordered by traj_id.
    """
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise DataError(f"{path}: no trajectories") from None
    missing = [c for c in CSV_COLUMNS if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    if df.empty:
        raise DataError(f"{path}: no trajectories")
    trajectories = [derive_states(t) for t in _frames_to_trajectories(df, dt)]
    return Dataset(sequences=trajectories, dt=dt)


def _frames_to_trajectories(df: pd.DataFrame, dt: float) -> list[PlatoonTrajectory]:
    out = []
    for traj_id in sorted(df["traj_id"].astype(str).unique()):
        sub = df[df["traj_id"].astype(str) == traj_id]
        vehicles = sorted(sub["vehicle"].unique())
        if vehicles != list(range(len(vehicles))):
            raise DataError(f"trajectory {traj_id}: vehicle ids must be 0..n contiguous")
        steps = sorted(sub["step"].unique())
        traces = []
        for veh in vehicles:
            rows = sub[sub["vehicle"] == veh].sort_values("step")
            if list(rows["step"]) != steps:
                raise DataError(f"trajectory {traj_id}: non-uniform step counts (vehicle {veh})")
            traces.append(
                VehicleTrace(
                    position=rows["position_m"].to_numpy(dtype=float),
                    velocity=rows["velocity_mps"].to_numpy(dtype=float),
                    acceleration=rows["accel_mps2"].to_numpy(dtype=float),
                )
            )
        out.append(PlatoonTrajectory(id=str(traj_id), dt=dt, vehicles=traces))
    return out


def export_trajectory(traj: PlatoonTrajectory) -> pd.DataFrame:
    """Long-format frame for one trajectory, matching the CSV schema."""
    rows = {c: [] for c in CSV_COLUMNS}
    for veh, trace in enumerate(traj.vehicles):
        for k in range(traj.steps):
            rows["traj_id"].append(traj.id)
            rows["step"].append(k)
            rows["vehicle"].append(veh)
            rows["position_m"].append(trace.position[k])
            rows["velocity_mps"].append(trace.velocity[k])
            rows["accel_mps2"].append(trace.acceleration[k])
    return pd.DataFrame(rows)


def generate_leader_profile(kind: str, params: dict, steps: int, dt: float) -> np.ndarray:
    """Leader acceleration profile: constant, sinusoid, or stop-and-go square wave."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    t = np.arange(steps) * dt
    if kind == "constant":
        return np.full(steps, float(params.get("bias", 0.0)))
    amp = float(params.get("amplitude", 0.5))
    if amp < 0:
        raise ValueError("amplitude must be nonnegative")
    if kind == "sinusoid":
        freq = float(params.get("frequency_hz", 0.05))
        if freq < 0:
            raise ValueError("frequency must be nonnegative")
        return amp * np.sin(2.0 * math.pi * freq * t)
    if kind == "stop_and_go":
        period = float(params.get("period_s", 20.0))
        if period <= 0:
            raise ValueError("period must be positive")
        phase = np.mod(t, period)
        return np.where(phase < period / 2.0, -amp, amp)
    raise ValueError(f"unknown leader profile kind: {kind!r}")


@dataclass(frozen=True)
class FollowerInit:
    spacing: float
    velocity: float


def simulate_platoon(
    leader_init: tuple[float, float],
    leader_accel: np.ndarray,
    followers: list[IdmParams],
    follower_init: list[FollowerInit],
    dt: float,
    accel_noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
    traj_id: str = "sim",
) -> PlatoonTrajectory:
    """Integrate an IDM platoon behind a leader driven by a given acceleration profile.

    leader_init holds (position, velocity); follower_init gives each follower's
    initial spacing to its predecessor and initial velocity. Semi-implicit Euler:
    v_{k+1} = v_k + a_k dt (clamped at 0), y_{k+1} = y_k + v_{k+1} dt.
    """
    if len(followers) != len(follower_init):
        raise ValueError("followers and follower_init lengths differ")
    if dt <= 0:
        raise ValueError("dt must be positive")
    for i, init in enumerate(follower_init):
        if init.spacing <= 0:
            raise ValueError(f"follower {i}: initial spacing must be positive")

    steps = len(leader_accel)
    n = len(followers)
    lead_pos, lead_vel = float(leader_init[0]), float(leader_init[1])

    pos = np.zeros((n + 1, steps))
    vel = np.zeros((n + 1, steps))
    acc = np.zeros((n + 1, steps))
    acc[0] = np.asarray(leader_accel, dtype=float)

    pos[0, 0] = lead_pos
    vel[0, 0] = lead_vel
    for i in range(1, n + 1):
        pos[i, 0] = pos[i - 1, 0] - follower_init[i - 1].spacing
        vel[i, 0] = follower_init[i - 1].velocity

    noise = (
        rng.normal(0.0, accel_noise_sigma, size=(n, steps))
        if (accel_noise_sigma > 0 and rng is not None)
        else np.zeros((n, steps))
    )

    for k in range(steps):
        for i in range(1, n + 1):
            s = pos[i - 1, k] - pos[i, k]
            if s <= MIN_SPACING:
                raise CollisionError(step=k, follower=i)
            dv = vel[i, k] - vel[i - 1, k]
            acc[i, k] = idm_accel(s, vel[i, k], dv, followers[i - 1]) + noise[i - 1, k]
        if k + 1 < steps:
            for i in range(n + 1):
                vel[i, k + 1] = max(vel[i, k] + acc[i, k] * dt, 0.0)
                pos[i, k + 1] = pos[i, k] + vel[i, k + 1] * dt
    # store realized accelerations so u is consistent with the motion even
    # when the v >= 0 clamp is active
    acc[:, :-1] = np.diff(vel, axis=1) / dt
    acc[:, -1] = acc[:, -2]

    vehicles = [VehicleTrace(pos[i].copy(), vel[i].copy(), acc[i].copy()) for i in range(n + 1)]
    return PlatoonTrajectory(id=traj_id, dt=dt, vehicles=vehicles)


def split_dataset(ds: Dataset, ratio_train: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seed-deterministic shuffle then floor(N * ratio) / remainder partition."""
    if not 0 < ratio_train < 1:
        raise ValueError("ratio_train must be in (0, 1)")
    n = len(ds.sequences)
    if n == 0:
        raise DataError("empty dataset")
    order = np.random.default_rng(seed).permutation(n)
    n_train = math.floor(n * ratio_train)
    if n_train == 0 or n_train == n:
        raise DataError("empty train or test split")
    train = [ds.sequences[i] for i in order[:n_train]]
    test = [ds.sequences[i] for i in order[n_train:]]
    return (
        Dataset(sequences=train, dt=ds.dt, norm=ds.norm),
        Dataset(sequences=test, dt=ds.dt, norm=ds.norm),
    )


def fit_normalization(train: Dataset) -> NormScales:
    """Per-column population std over all train steps; near-constant columns get scale 1."""
    if not train.sequences:
        raise DataError("empty dataset")
    all_states = np.concatenate([s.states for s in train.sequences], axis=0)
    all_controls = np.concatenate([s.controls for s in train.sequences])
    state_scale = np.std(all_states, axis=0)
    state_scale = np.where(state_scale < 1e-8, 1.0, state_scale)
    control_scale = float(np.std(all_controls))
    if control_scale < 1e-8:
        control_scale = 1.0
    return NormScales(state_scale=state_scale, control_scale=control_scale)
