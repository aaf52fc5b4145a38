"""Acceptance gate: ten pass/fail checks covering the full pipeline.

Each test prints one line `[criterion NN] PASS/FAIL <name>` (visible with
`pytest -s`) and asserts the same condition, so the suite doubles as a
machine-checkable gate and a human-readable report.
"""

import hashlib
import json
import time

import numpy as np
from scipy.linalg import expm

from koopman_platoon.baselines import dmdc_fit, dmdc_rollout
from koopman_platoon.cli import main
from koopman_platoon.data import FollowerInit, derive_states, simulate_platoon
from koopman_platoon.idm import IdmParams, equilibrium_spacing, idm_accel
from koopman_platoon.model import (
    KoopmanOperator,
    TrainConfig,
    encode,
    init_encoder,
    loss_gradients,
    project,
    rollout,
    step,
    train_on_windows,
)
from koopman_platoon.stability import (
    ContinuousSystem,
    d2c_zoh,
    default_frequency_grid,
    local_stability,
    string_stability_sweep,
    transfer_gain,
)


def _report(num, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {num:02d}] {status} {name}" + (f" ({detail})" if detail else ""))
    assert ok, f"criterion {num}: {name} {detail}"


def _random_linear_system(seed, n_x=4, steps=300):
    rng = np.random.default_rng(seed)
    A = rng.normal(0, 0.5, (n_x, n_x))
    A *= 0.9 / max(abs(np.linalg.eigvals(A)))
    B = rng.normal(0, 1.0, n_x)
    x = np.zeros((steps, n_x))
    u = rng.normal(0, 1, steps)
    for k in range(steps - 1):
        x[k + 1] = A @ x[k] + B * u[k]
    return A, B, x, u


def test_criterion_01_projection_identity():
    rng = np.random.default_rng(0)
    enc = init_encoder(3, (16,), 8, rng)
    t0 = time.perf_counter()
    x = rng.normal(0, 10, (1000, 3))
    exact = np.array_equal(project(encode(x, enc), 3), x)
    elapsed = time.perf_counter() - t0
    _report(1, "projection recovers the state block exactly", exact and elapsed < 1.0,
            f"1000 states, {elapsed:.3f} s")


def test_criterion_02_gradient_check():
    n_x, d, k, h = 3, 4, 5, 1e-5
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        enc = init_encoder(n_x, (6,), d, rng)
        m = n_x + d
        op = KoopmanOperator(
            A=np.eye(m) * 0.4 + rng.normal(0, 0.2, (m, m)), B=rng.normal(0, 0.3, m)
        )
        xw = rng.normal(0, 1, (2, k + 1, n_x))
        uw = rng.normal(0, 1, (2, k))
        _, dws, dbs, dA, dB = loss_gradients(xw, uw, enc, op, 0.8)
        for p, g in zip([*enc.weights, *enc.biases, op.A, op.B], [*dws, *dbs, dA, dB]):
            fp, fg = p.reshape(-1), g.reshape(-1)
            for idx in rng.choice(fp.size, size=min(6, fp.size), replace=False):
                old = fp[idx]
                fp[idx] = old + h
                lp = loss_gradients(xw, uw, enc, op, 0.8)[0]
                fp[idx] = old - h
                lm = loss_gradients(xw, uw, enc, op, 0.8)[0]
                fp[idx] = old
                fd = (lp - lm) / (2 * h)
                rel = abs(fd - fg[idx]) / max(abs(fd), abs(fg[idx]), 1e-8)
                worst = max(worst, rel)
    elapsed = time.perf_counter() - t0
    _report(2, "analytic gradients match finite differences", worst < 1e-4 and elapsed < 10.0,
            f"worst rel {worst:.2e}, {elapsed:.1f} s")


def test_criterion_03_linear_recovery():
    t0 = time.perf_counter()
    A, B, x, u = _random_linear_system(seed=42)
    steps = len(u)
    dm = dmdc_fit(x, u)
    dmdc_err = max(np.max(np.abs(dm.A - A)), np.max(np.abs(dm.B - B)))

    xw = np.stack([x[i : i + 2] for i in range(steps - 1)])
    uw = u[: steps - 1, None]
    cfg = TrainConfig(
        lam=1.0, k_train=1, d=0, hidden_sizes=(), learning_rate=1e-2,
        lr_decay=0.9985, epochs=8000, batch_size=32, seed=0,
    )
    km = train_on_windows(xw, uw, cfg, dt=0.1)
    train_err = max(
        np.max(np.abs(km.operator.A - A)), np.max(np.abs(km.operator.B - B))
    )

    truth = x[1:]
    rmse_dmdc = np.sqrt(np.mean((dmdc_rollout(dm, x[0], u[:-1]) - truth) ** 2))
    _, xk = rollout(km.norm.apply_states(x[0]), km.norm.apply_controls(u[:-1]), km)
    rmse_train = np.sqrt(np.mean((km.norm.invert_states(xk) - truth) ** 2))
    elapsed = time.perf_counter() - t0
    ok = (
        dmdc_err < 1e-4 and train_err < 1e-4
        and rmse_dmdc < 1e-6 and rmse_train < 1e-6 and elapsed < 60.0
    )
    _report(3, "both estimators recover a random stable linear system", ok,
            f"elem err dmdc {dmdc_err:.1e} / train {train_err:.1e}, "
            f"rollout rmse {rmse_dmdc:.1e} / {rmse_train:.1e}, {elapsed:.1f} s")


def test_criterion_04_step_superposition():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(200):
        m = rng.integers(1, 8)
        op = KoopmanOperator(A=rng.normal(0, 1, (m, m)), B=rng.normal(0, 1, m))
        z1, z2 = rng.normal(0, 5, m), rng.normal(0, 5, m)
        u1, u2 = rng.normal(0, 5), rng.normal(0, 5)
        a, b = rng.normal(0, 2, 2)
        lhs = step(a * z1 + b * z2, a * u1 + b * u2, op)
        rhs = a * step(z1, u1, op) + b * step(z2, u2, op)
        worst = max(worst, np.max(np.abs(lhs - rhs)))
    _report(4, "one-step map is linear in state and input", worst < 1e-12,
            f"worst residual {worst:.1e}")


def test_criterion_05_d2c_zoh_roundtrip():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        A_c = rng.normal(0, 1, (6, 6))
        A_c -= (max(np.linalg.eigvals(A_c).real) + rng.uniform(0.3, 1.5)) * np.eye(6)
        B_c = rng.normal(0, 1, 6)
        # independent zero-order-hold oracle via the block matrix exponential
        M = np.zeros((7, 7))
        M[:6, :6] = A_c * 0.1
        M[:6, 6] = B_c * 0.1
        E = expm(M)
        rec = d2c_zoh(E[:6, :6], E[:6, 6], 0.1)
        worst = max(
            worst,
            np.linalg.norm(rec.A_c - A_c) / np.linalg.norm(A_c),
            np.linalg.norm(rec.B_c - B_c) / np.linalg.norm(B_c),
        )
    elapsed = time.perf_counter() - t0
    _report(5, "discretize-then-recover roundtrip", worst < 1e-8 and elapsed < 30.0,
            f"50 systems, worst rel {worst:.1e}, {elapsed:.1f} s")


def test_criterion_06_scalar_transfer_function():
    sys_c = ContinuousSystem(A_c=np.array([[-1.0]]), B_c=np.array([1.0]), dt_source=0.1)
    grid = default_frequency_grid()
    w = 2 * np.pi * grid
    gains = np.array([transfer_gain(sys_c, 0, f) for f in grid])
    worst = np.max(np.abs(gains - w / np.sqrt(w**2 + 1)))
    sweep = string_stability_sweep(sys_c, 0)
    _report(6, "scalar frequency response matches the closed form",
            worst < 1e-10 and sweep.string_stable,
            f"worst dev {worst:.1e}, verdict string-stable={sweep.string_stable}")


def test_criterion_07_eigen_verdicts():
    th = 0.7
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    cases = [
        (np.diag([0.5, 0.9]), "asymptotically_stable"),
        (np.diag([1.0, 0.3]), "marginally_stable"),
        (np.diag([1.2, 0.3]), "unstable"),
        (rot, "marginally_stable"),
        (0.95 * rot, "asymptotically_stable"),
        (1.05 * rot, "unstable"),
        (np.diag([1.0 + 1e-12]), "marginally_stable"),
        (np.diag([1.0 - 1e-12]), "marginally_stable"),
    ]
    bad = [exp for A, exp in cases if local_stability(A).verdict != exp]
    _report(7, "eigenvalue verdicts on known spectra", not bad,
            f"{len(cases)} cases incl. |lam|=1±1e-12 boundaries")


def _pipeline_config(tmp_path, run, **extra):
    cfg = {
        "out_dir": str(tmp_path / run / "out"),
        "data_dir": str(tmp_path / run / "out" / "data"),
        "model_path": str(tmp_path / run / "out" / "model.json"),
    }
    cfg.update(extra)
    path = tmp_path / f"{run}.json"
    path.write_text(json.dumps(cfg))
    return path


def test_criterion_08_koopman_beats_dmdc(tmp_path):
    t0 = time.perf_counter()
    # default corpus (50 trajectories x 350 steps, 5 heterogeneous followers,
    # stop-and-go leader); 1000 epochs keeps the run a few minutes long
    cfg = _pipeline_config(tmp_path, "bench", epochs=1000)
    for cmd in ("simulate", "train", "eval"):
        assert main([cmd, "--config", str(cfg)]) == 0
    import pandas as pd

    table = pd.read_csv(tmp_path / "bench" / "out" / "comparison.csv")
    agg = table[table["sequence"] == "aggregate"].set_index("model")["rmse_m"]
    n_test = table[(table["model"] == "koopman") & (table["sequence"] != "aggregate")].shape[0]
    elapsed = time.perf_counter() - t0
    ok = agg["koopman"] <= agg["dmdc"] and n_test == 10 and elapsed < 1800
    _report(8, "trained model outperforms the linear DMDc baseline", ok,
            f"koopman {agg['koopman']:.2f} m <= dmdc {agg['dmdc']:.2f} m "
            f"on {n_test} held-out sequences, {elapsed / 60:.1f} min")


def test_criterion_09_pipeline_determinism(tmp_path):
    # reduced corpus: the check targets reproducibility, not model quality
    small = dict(steps=120, n_trajectories=8, n_followers=2, epochs=40,
                 d=8, hidden_sizes=[16], k_train=20, batch_size=8, pred_horizon=5)
    cfg = _pipeline_config(tmp_path, "run", **small)
    root = tmp_path / "run" / "out"
    digests = []
    for _ in range(2):
        for cmd in ("simulate", "train", "eval", "stability"):
            assert main([cmd, "--config", str(cfg)]) == 0
        tree = {}
        for p in sorted(root.rglob("*")):
            if p.is_file():
                tree[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
        digests.append(tree)
    same = digests[0] == digests[1]
    _report(9, "repeated pipeline runs produce byte-identical artifacts", same,
            f"{len(digests[0])} files compared")


def test_criterion_10_idm_fixed_points():
    p = IdmParams()
    exact_zero = idm_accel(p.s0, 0.0, 0.0, p) == 0.0

    params = [IdmParams(), IdmParams(T=1.2), IdmParams(b=2.0)]
    v = 15.0
    inits = [FollowerInit(equilibrium_spacing(v, q), v) for q in params]
    traj = simulate_platoon((0.0, v), np.zeros(350), params, inits, dt=0.1)
    seq = derive_states(traj)
    drift = np.max(np.abs(np.diff(seq.states, axis=0)))
    _report(10, "car-following fixed points hold", exact_zero and drift < 1e-9,
            f"jam accel exactly 0, equilibrium drift {drift:.1e}/step over 350 steps")
