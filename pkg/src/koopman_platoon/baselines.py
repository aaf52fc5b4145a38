"""Baseline predictors: DMD with control and the IDM car-following model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import CollisionError, StateSequence
from .idm import IdmParams, idm_accel
from .model import (
    MODEL_FORMAT,
    MODEL_VERSION,
    DivergedError,
    ModelFormatError,
    read_document,
    write_document,
)

SVD_RELATIVE_CUTOFF = 1e-10


@dataclass
class DmdcModel:
    """Linear state-space model x' = A x + B u identified by least squares."""

    A: np.ndarray  # (n_x, n_x)
    B: np.ndarray  # (n_x,)
    rank_used: int

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float).reshape(-1)
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.B))):
            raise ValueError("DMDc matrices must be finite")


def dmdc_fit(X: np.ndarray, U: np.ndarray, rank: int | None = None) -> DmdcModel:
    """Solve [A B] = X' pinv([X; U]) for one contiguous snapshot sequence.

    X is (steps, n_x) and U is (steps,); snapshot pairs are consecutive rows.
    """
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float).reshape(-1)
    return dmdc_fit_pairs(X[:-1], X[1:], U[: len(X) - 1], rank=rank)


def dmdc_fit_pairs(
    X0: np.ndarray, X1: np.ndarray, U: np.ndarray, rank: int | None = None
) -> DmdcModel:
    """Least-squares [A B] from snapshot pairs X0 -> X1 under controls U.

    Solved via SVD of the stacked data matrix; singular values below rank (if
    given) or below 1e-10 * sigma_max are truncated, which maps unexcited
    directions (e.g. u == 0) to zero.
    """
    X0 = np.asarray(X0, dtype=float)
    X1 = np.asarray(X1, dtype=float)
    U = np.asarray(U, dtype=float).reshape(-1)
    pairs, n_x = X0.shape
    if X1.shape != X0.shape or len(U) != pairs:
        raise ValueError("snapshot pair shapes do not match")
    if pairs < n_x + 1:
        raise ValueError(f"need at least {n_x + 1} snapshot pairs, got {pairs}")
    omega = np.vstack([X0.T, U[None, :]])  # (n_x + 1, pairs)
    target = X1.T
    u_svd, sing, vt = np.linalg.svd(omega, full_matrices=False)
    keep = sing > SVD_RELATIVE_CUTOFF * sing[0]
    if rank is not None:
        keep &= np.arange(len(sing)) < rank
    r = int(np.count_nonzero(keep))
    pinv = vt[keep].T @ np.diag(1.0 / sing[keep]) @ u_svd[:, keep].T
    g = target @ pinv
    return DmdcModel(A=g[:, :n_x], B=g[:, n_x], rank_used=r)


def dmdc_rollout(model: DmdcModel, x0: np.ndarray, u_seq: np.ndarray) -> np.ndarray:
    """Iterate x_{k+1} = A x_k + B u_k; returns predictions for steps 1..K."""
    x = np.asarray(x0, dtype=float)
    out = np.empty((len(u_seq), len(x)))
    for k, u in enumerate(np.asarray(u_seq, dtype=float)):
        x = model.A @ x + model.B * u
        if not np.all(np.isfinite(x)):
            raise DivergedError(f"diverged at step {k + 1}")
        out[k] = x
    return out


def idm_rollout(
    initial_state: np.ndarray,
    leader_position: np.ndarray,
    leader_velocity: np.ndarray,
    params: list[IdmParams],
    dt: float,
) -> StateSequence:
    """Integrate followers with IDM behind a prescribed leader trajectory.

    Uses the same semi-implicit Euler scheme as the synthetic data generator;
    initial_state is one [s; v; dv] row. Leader acceleration in the returned
    controls is the finite difference of the given leader velocity.
    """
    n = len(params)
    initial_state = np.asarray(initial_state, dtype=float)
    if initial_state.shape != (3 * n,):
        raise ValueError(f"initial_state must have length {3 * n}")
    steps = len(leader_position)
    pos = np.zeros((n + 1, steps))
    vel = np.zeros((n + 1, steps))
    pos[0] = leader_position
    vel[0] = leader_velocity
    for i in range(1, n + 1):
        pos[i, 0] = pos[i - 1, 0] - initial_state[i - 1]
        vel[i, 0] = initial_state[n + i - 1]

    for k in range(steps - 1):
        for i in range(1, n + 1):
            s = pos[i - 1, k] - pos[i, k]
            if s <= 0.1:
                raise CollisionError(step=k, follower=i)
            dv = vel[i, k] - vel[i - 1, k]
            a = idm_accel(s, vel[i, k], dv, params[i - 1])
            vel[i, k + 1] = max(vel[i, k] + a * dt, 0.0)
            pos[i, k + 1] = pos[i, k] + vel[i, k + 1] * dt

    spacing = pos[:-1] - pos[1:]
    dv_all = vel[1:] - vel[:-1]
    states = np.concatenate([spacing.T, vel[1:].T, dv_all.T], axis=1)
    controls = np.zeros(steps)
    controls[:-1] = np.diff(leader_velocity) / dt
    return StateSequence(
        n_followers=n, states=states, controls=controls, leader_position=pos[0].copy()
    )


def save_dmdc(model: DmdcModel, dt: float, path) -> None:
    write_document(
        {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "kind": "dmdc",
            "dt": dt,
            "rank_used": model.rank_used,
            "A": model.A.tolist(),
            "B": model.B.tolist(),
        },
        path,
    )


def load_dmdc(path) -> tuple[DmdcModel, float]:
    doc = read_document(path)
    if doc.get("kind") != "dmdc":
        raise ModelFormatError(f"{path}: expected kind 'dmdc', got {doc.get('kind')!r}")
    model = DmdcModel(
        A=np.asarray(doc["A"], dtype=float),
        B=np.asarray(doc["B"], dtype=float),
        rank_used=int(doc["rank_used"]),
    )
    return model, float(doc["dt"])
