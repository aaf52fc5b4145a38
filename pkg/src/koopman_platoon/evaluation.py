"""Position reconstruction, error metrics, phase-plane tables, model comparison."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .baselines import DmdcModel, dmdc_rollout, idm_rollout
from .data import CollisionError, Dataset, StateSequence
from .idm import IdmParams
from .model import DivergedError, KoopmanModel, encode, project, rollout_physical

PAIR_KINDS = ("spacing_speed", "spacing_dv", "speed_dv")


@dataclass
class MetricReport:
    rmse: float
    mae: float
    per_vehicle_rmse: np.ndarray
    per_vehicle_mae: np.ndarray
    horizon: int


def reconstruct_positions(spacings: np.ndarray, leader_position: np.ndarray) -> np.ndarray:
    """Chain positions downstream from the leader: y_i = y_{i-1} - s_i."""
    spacings = np.asarray(spacings, dtype=float)
    leader_position = np.asarray(leader_position, dtype=float)
    if spacings.shape[0] != len(leader_position):
        raise ValueError("spacings and leader_position step counts differ")
    if np.any(spacings <= 0):
        warnings.warn("non-positive spacing in reconstruction", RuntimeWarning, stacklevel=2)
    positions = np.empty_like(spacings)
    prev = leader_position
    for i in range(spacings.shape[1]):
        prev = prev - spacings[:, i]
        positions[:, i] = prev
    return positions


def position_metrics(pred: np.ndarray, truth: np.ndarray) -> MetricReport:
    """RMSE/MAE pooled over all vehicles and steps, plus per-vehicle breakdowns."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    err = pred - truth
    return MetricReport(
        rmse=float(np.sqrt(np.mean(err**2))),
        mae=float(np.mean(np.abs(err))),
        per_vehicle_rmse=np.sqrt(np.mean(err**2, axis=0)),
        per_vehicle_mae=np.mean(np.abs(err), axis=0),
        horizon=pred.shape[0],
    )


def _truth_positions(seq: StateSequence) -> np.ndarray:
    return reconstruct_positions(seq.spacings(), seq.leader_position)


def koopman_predict_states(model: KoopmanModel, seq: StateSequence) -> np.ndarray:
    """Full-horizon generation from the initial state; raw units, steps 1..K."""
    return rollout_physical(model, seq.states[0], seq.controls[:-1])


def phase_plane_export(
    model: KoopmanModel, seq: StateSequence, pred_horizon: int = 10
) -> pd.DataFrame:
    """Truth / one-step-reconstructed / h-step-predicted state pairs per follower.

    For each target step t: the reconstructed point comes from one linear update
    of the encoded ground truth at t-1; the predicted point from an h-step
    linear rollout of the encoded ground truth at t-h.
    """
    if seq.steps <= pred_horizon:
        raise ValueError("sequence shorter than prediction horizon")
    n = seq.n_followers
    xn = model.norm.apply_states(seq.states)
    un = model.norm.apply_controls(seq.controls)
    A, B = model.operator.A, model.operator.B

    z_all = encode(xn, model.encoder)  # (steps, m)
    recon = model.norm.invert_states(
        project(z_all[:-1] @ A.T + np.outer(un[:-1], B), model.n_x)
    )  # state at t reconstructed from t-1, rows index t-1

    starts = np.arange(seq.steps - pred_horizon)
    zb = z_all[starts]
    for j in range(pred_horizon):
        zb = zb @ A.T + np.outer(un[starts + j], B)
    pred = model.norm.invert_states(project(zb, model.n_x))  # state at start + h

    def pair(states_row, i, kind):
        s, v, dv = states_row[i - 1], states_row[n + i - 1], states_row[2 * n + i - 1]
        return {"spacing_speed": (s, v), "spacing_dv": (s, dv), "speed_dv": (v, dv)}[kind]

    rows = []
    for t in range(pred_horizon, seq.steps):
        truth_row = seq.states[t]
        recon_row = recon[t - 1]
        pred_row = pred[t - pred_horizon]
        for i in range(1, n + 1):
            for kind in PAIR_KINDS:
                tx, ty = pair(truth_row, i, kind)
                rx, ry = pair(recon_row, i, kind)
                px, py = pair(pred_row, i, kind)
                rows.append(
                    {
                        "vehicle": i,
                        "step": t,
                        "pair_kind": kind,
                        "truth_x": tx,
                        "truth_y": ty,
                        "recon_x": rx,
                        "recon_y": ry,
                        "pred_x": px,
                        "pred_y": py,
                    }
                )
    return pd.DataFrame(rows)


def _rollout_positions(kind, seq, dt, koopman=None, dmdc=None, idm_params=None):
    """Predicted follower positions for steps 1..K under one model."""
    n = seq.n_followers
    if kind == "koopman":
        states = koopman_predict_states(koopman, seq)
        spacings = states[:, :n]
    elif kind == "dmdc":
        states = dmdc_rollout(dmdc, seq.states[0], seq.controls[:-1])
        spacings = states[:, :n]
    elif kind == "idm":
        out = idm_rollout(seq.states[0], seq.leader_position, seq.leader_velocity(), idm_params, dt)
        spacings = out.spacings()[1:]
    else:
        raise ValueError(kind)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return reconstruct_positions(spacings, seq.leader_position[1:])


def compare_models(
    test: Dataset,
    koopman: KoopmanModel,
    dmdc: DmdcModel,
    idm_params: list[IdmParams],
) -> pd.DataFrame:
    """Full-horizon generation error per model per test sequence, plus aggregates.

    Returns rows `model,sequence,rmse_m,mae_m,diverged`; the aggregate row per
    model pools all vehicles, steps, and sequences before the square root.
    Divergence is recorded as a flagged row rather than raised.
    """
    if not test.sequences:
        raise ValueError("empty test set")
    if koopman.n_x != 3 * test.n_followers:
        raise ValueError(
            f"model expects n_x={koopman.n_x}, data has n_x={3 * test.n_followers}"
        )
    rows = []
    pooled: dict[str, list[np.ndarray]] = {"koopman": [], "dmdc": [], "idm": []}
    for j, seq in enumerate(test.sequences):
        truth = _truth_positions(seq)[1:]
        for kind in ("koopman", "dmdc", "idm"):
            try:
                pred = _rollout_positions(
                    kind, seq, test.dt, koopman=koopman, dmdc=dmdc, idm_params=idm_params
                )
                rep = position_metrics(pred, truth)
                pooled[kind].append((pred - truth).ravel())
                rows.append(
                    {"model": kind, "sequence": j, "rmse_m": rep.rmse, "mae_m": rep.mae, "diverged": False}
                )
            except (DivergedError, CollisionError):
                rows.append(
                    {"model": kind, "sequence": j, "rmse_m": np.nan, "mae_m": np.nan, "diverged": True}
                )
    for kind in ("koopman", "dmdc", "idm"):
        if pooled[kind]:
            allerr = np.concatenate(pooled[kind])
            rmse = float(np.sqrt(np.mean(allerr**2)))
            mae = float(np.mean(np.abs(allerr)))
        else:
            rmse = mae = np.nan
        rows.append(
            {
                "model": kind,
                "sequence": "aggregate",
                "rmse_m": rmse,
                "mae_m": mae,
                "diverged": len(pooled[kind]) < len(test.sequences),
            }
        )
    return pd.DataFrame(rows)
