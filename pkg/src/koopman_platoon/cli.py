"""Command-line pipeline: simulate, train, eval, rollout, stability, phase-plane."""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np
import pandas as pd

from . import data as data_mod
from .baselines import dmdc_fit_pairs, save_dmdc
from .config import ConfigError, RunConfig, load_config
from .data import (
    CollisionError,
    DataError,
    Dataset,
    FollowerInit,
    StateSequence,
    export_trajectory,
    fit_normalization,
    generate_leader_profile,
    simulate_platoon,
    split_dataset,
)
from .evaluation import compare_models, phase_plane_export, reconstruct_positions
from .idm import equilibrium_spacing, sample_heterogeneous_params
from .model import (
    DivergedError,
    KoopmanModel,
    ModelFormatError,
    TrainConfig,
    load_model,
    rollout_physical,
    save_model,
    train,
)
from .stability import (
    StabilityError,
    d2c_zoh,
    local_stability,
    string_stability_sweep,
    velocity_output_index,
)


def _leader_profile(cfg: RunConfig, rng: np.random.Generator) -> np.ndarray:
    j = cfg.profile_jitter
    amp = cfg.leader_amplitude * rng.uniform(1.0 - j, 1.0 + j)
    freq = cfg.leader_frequency_hz * rng.uniform(1.0 - j, 1.0 + j)
    period = cfg.leader_period_s * rng.uniform(1.0 - j, 1.0 + j)
    params = {
        "bias": 0.0,
        "amplitude": amp,
        "frequency_hz": freq,
        "period_s": period,
    }
    return generate_leader_profile(cfg.leader_kind, params, cfg.steps, cfg.dt)


def simulate_corpus(cfg: RunConfig) -> tuple[list, list[str]]:
    """Generate the synthetic heterogeneous-IDM corpus; returns (trajectories, failures)."""
    rng = np.random.default_rng(cfg.seed)
    trajectories, failures = [], []
    for t in range(cfg.n_trajectories):
        accel = _leader_profile(cfg, rng)
        params = sample_heterogeneous_params(
            cfg.n_followers, rng, nominal=cfg.nominal_idm(), spread=cfg.idm_spread
        )
        v = cfg.leader_speed
        inits = [FollowerInit(spacing=equilibrium_spacing(v, p), velocity=v) for p in params]
        try:
            traj = simulate_platoon(
                (0.0, v),
                accel,
                params,
                inits,
                cfg.dt,
                accel_noise_sigma=cfg.accel_noise_sigma,
                rng=rng,
                traj_id=f"traj_{t:03d}",
            )
            trajectories.append(traj)
        except CollisionError as exc:
            failures.append(f"traj_{t:03d}: {exc}")
    return trajectories, failures


def cmd_simulate(cfg: RunConfig) -> int:
    data_dir = Path(cfg.data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    trajectories, failures = simulate_corpus(cfg)
    for traj in trajectories:
        export_trajectory(traj).to_csv(data_dir / f"{traj.id}.csv", index=False)
    manifest = {
        "config": cfg.to_dict(),
        "trajectories": [t.id for t in trajectories],
        "failures": failures,
    }
    with open(data_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    for line in failures:
        print(f"collision: {line}", file=sys.stderr)
    print(f"wrote {len(trajectories)} trajectories to {data_dir}")
    return 0


def _load_dataset(cfg: RunConfig) -> Dataset:
    data_dir = Path(cfg.data_dir)
    files = sorted(data_dir.glob("traj_*.csv"))
    if not files:
        raise DataError(f"data not found: no traj_*.csv in {data_dir}")
    sequences = []
    for f in files:
        sequences.extend(data_mod.load_trajectories(f, dt=cfg.dt).sequences)
    return Dataset(sequences=sequences, dt=cfg.dt)


def _train_test(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    ds = _load_dataset(cfg)
    return split_dataset(ds, cfg.ratio_train, cfg.seed)


def _koopman_rmse(model: KoopmanModel, test: Dataset) -> float:
    errs = []
    for seq in test.sequences:
        states = rollout_physical(model, seq.states[0], seq.controls[:-1])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            pred = reconstruct_positions(states[:, : seq.n_followers], seq.leader_position[1:])
        truth = reconstruct_positions(seq.spacings(), seq.leader_position)[1:]
        errs.append((pred - truth).ravel())
    return float(np.sqrt(np.mean(np.concatenate(errs) ** 2)))


def cmd_train(cfg: RunConfig) -> int:
    train_ds, test_ds = _train_test(cfg)
    norm = fit_normalization(train_ds)
    train_ds = Dataset(sequences=train_ds.sequences, dt=train_ds.dt, norm=norm)
    tc = TrainConfig(
        lam=cfg.lam,
        k_train=cfg.k_train,
        learning_rate=cfg.learning_rate,
        lr_decay=cfg.lr_decay,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        hidden_sizes=tuple(cfg.hidden_sizes),
        d=cfg.d,
    )
    model = train(train_ds, tc)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_model(model, cfg.model_path)
    curve = pd.DataFrame(
        {"epoch": range(len(model.loss_curve)), "loss": model.loss_curve}
    )
    curve.to_csv(out_dir / "loss_curve.csv", index=False)
    rmse = _koopman_rmse(model, test_ds)
    print(f"final train loss: {model.loss_curve[-1]:.6e}")
    print(f"held-out rollout position RMSE: {rmse:.4f} m")
    return 0


def _export_generated(model: KoopmanModel, seq: StateSequence, dt: float, traj_id: str) -> pd.DataFrame:
    """Generated trajectory in the data CSV schema (vehicle 0 = ground-truth leader)."""
    n = seq.n_followers
    states = rollout_physical(model, seq.states[0], seq.controls[:-1])
    full = np.vstack([seq.states[0][None, :], states])
    with warnings.catch_warnings():
        # generated spacings may dip below zero; export them as-is
        warnings.simplefilter("ignore", RuntimeWarning)
        positions = reconstruct_positions(full[:, :n], seq.leader_position)
    velocities = full[:, n : 2 * n]
    rows = {c: [] for c in data_mod.CSV_COLUMNS}
    lead_vel = seq.leader_velocity()
    for veh in range(n + 1):
        pos = seq.leader_position if veh == 0 else positions[:, veh - 1]
        vel = lead_vel if veh == 0 else velocities[:, veh - 1]
        acc = np.zeros(len(pos))
        acc[:-1] = np.diff(vel) / dt
        if veh == 0:
            acc = seq.controls
        for k in range(len(pos)):
            rows["traj_id"].append(traj_id)
            rows["step"].append(k)
            rows["vehicle"].append(veh)
            rows["position_m"].append(pos[k])
            rows["velocity_mps"].append(vel[k])
            rows["accel_mps2"].append(acc[k])
    return pd.DataFrame(rows)


def cmd_eval(cfg: RunConfig) -> int:
    model = load_model(cfg.model_path)
    train_ds, test_ds = _train_test(cfg)
    if model.n_x != 3 * test_ds.n_followers:
        raise DataError(
            f"model n_x={model.n_x} does not match data n_x={3 * test_ds.n_followers}"
        )
    x0 = np.concatenate([s.states[:-1] for s in train_ds.sequences])
    x1 = np.concatenate([s.states[1:] for s in train_ds.sequences])
    u = np.concatenate([s.controls[:-1] for s in train_ds.sequences])
    dmdc = dmdc_fit_pairs(x0, x1, u)
    idm_params = [cfg.nominal_idm()] * test_ds.n_followers

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_dmdc(dmdc, cfg.dt, out_dir / "dmdc_model.json")
    table = compare_models(test_ds, model, dmdc, idm_params)
    table.to_csv(out_dir / "comparison.csv", index=False)
    first = test_ds.sequences[0]
    phase_plane_export(model, first, pred_horizon=cfg.pred_horizon).to_csv(
        out_dir / "phase_plane.csv", index=False
    )
    _export_generated(model, first, cfg.dt, "generated_000").to_csv(
        out_dir / "generated_trajectory.csv", index=False
    )
    agg = table[table["sequence"] == "aggregate"]
    print(agg.to_string(index=False))
    return 0


def cmd_rollout(cfg: RunConfig, input_csv: str, output_csv: str) -> int:
    model = load_model(cfg.model_path)
    ds = data_mod.load_trajectories(input_csv, dt=cfg.dt)
    frames = [
        _export_generated(model, seq, cfg.dt, f"generated_{j:03d}")
        for j, seq in enumerate(ds.sequences)
    ]
    pd.concat(frames, ignore_index=True).to_csv(output_csv, index=False)
    print(f"wrote {len(frames)} generated trajectories to {output_csv}")
    return 0


def cmd_stability(cfg: RunConfig) -> int:
    model = load_model(cfg.model_path)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    report = local_stability(model.operator.A)
    pd.DataFrame(
        {
            "index": range(len(report.eigenvalues)),
            "re": report.eigenvalues.real,
            "im": report.eigenvalues.imag,
            "magnitude": report.magnitudes,
        }
    ).to_csv(out_dir / "eigenvalues.csv", index=False)

    sys_c = d2c_zoh(model.operator.A, model.operator.B, model.dt)
    grid = np.logspace(
        np.log10(cfg.freq_min_hz), np.log10(cfg.freq_max_hz), cfg.freq_points
    )
    sweep = string_stability_sweep(
        sys_c,
        velocity_output_index(model.n_followers, model.n_followers),
        f_grid=grid,
        angular=cfg.freq_angular,
    )
    pd.DataFrame({"freq_hz": sweep.frequencies, "gain": sweep.gains}).to_csv(
        out_dir / "freq_response.csv", index=False
    )

    summary = {
        "local_verdict": report.verdict,
        "max_eigenvalue_magnitude": report.max_magnitude,
        "distinct_eigenvalues": report.distinct_count,
        "repeated_unit_eigenvalue": report.repeated_unit_eigenvalue,
        "string_stable": sweep.string_stable,
        "peak_gain": sweep.peak_gain,
        "peak_frequency_hz": sweep.peak_frequency,
        "skipped_frequencies": sweep.skipped_frequencies,
    }
    print(json.dumps(summary, sort_keys=True, indent=1))
    return 0


def cmd_phase_plane(cfg: RunConfig, sequence_index: int) -> int:
    model = load_model(cfg.model_path)
    _, test_ds = _train_test(cfg)
    if not 0 <= sequence_index < len(test_ds.sequences):
        raise ConfigError(
            f"sequence index {sequence_index} out of range (test set has {len(test_ds.sequences)})"
        )
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = phase_plane_export(model, test_ds.sequences[sequence_index], pred_horizon=cfg.pred_horizon)
    table.to_csv(out_dir / "phase_plane.csv", index=False)
    print(f"wrote {len(table)} phase-plane rows")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="koopman-platoon",
        description="Learn a lifted linear platoon model and analyze its stability.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--data", help="override the trajectory data directory")
        p.add_argument("--model", help="override the model file path")

    for name, desc in [
        ("simulate", "generate the synthetic trajectory corpus"),
        ("train", "train the lifted linear model on the train split"),
        ("eval", "compare the trained model against DMDc and IDM baselines"),
        ("stability", "local and string stability analysis of a trained model"),
    ]:
        common(sub.add_parser(name, help=desc))

    p = sub.add_parser("rollout", help="generate trajectories from a model and an input CSV")
    common(p)
    p.add_argument("--input", required=True, help="trajectory CSV to take initial states from")
    p.add_argument("--output", required=True, help="generated trajectory CSV path")

    p = sub.add_parser("phase-plane", help="export phase-plane tables for one test sequence")
    common(p)
    p.add_argument("--sequence", type=int, default=0, help="test sequence index")
    return parser


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "out_dir": args.out,
        "data_dir": args.data,
        "model_path": args.model,
    }
    cfg = load_config(args.config, overrides)
    if args.command == "simulate":
        return cmd_simulate(cfg)
    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "eval":
        return cmd_eval(cfg)
    if args.command == "stability":
        return cmd_stability(cfg)
    if args.command == "rollout":
        return cmd_rollout(cfg, args.input, args.output)
    if args.command == "phase-plane":
        return cmd_phase_plane(cfg, args.sequence)
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    try:
        return run(argv)
    except (ConfigError, DataError, ModelFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergedError, CollisionError, StabilityError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
