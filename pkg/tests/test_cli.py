import hashlib
import json
from pathlib import Path

import pytest

from koopman_platoon.cli import main

SMALL_CFG = {
    "dt": 0.1,
    "steps": 80,
    "n_trajectories": 6,
    "n_followers": 2,
    "seed": 3,
    "epochs": 5,
    "d": 4,
    "hidden_sizes": [8],
    "k_train": 10,
    "batch_size": 8,
    "pred_horizon": 5,
}


def write_cfg(tmp_path, **extra):
    cfg = dict(SMALL_CFG)
    cfg["out_dir"] = str(tmp_path / "out")
    cfg["data_dir"] = str(tmp_path / "out" / "data")
    cfg["model_path"] = str(tmp_path / "out" / "model.json")
    cfg.update(extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def digest_tree(root):
    out = {}
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One small end-to-end run shared by the smoke tests."""
    tmp_path = tmp_path_factory.mktemp("run")
    cfg = write_cfg(tmp_path)
    for cmd in ("simulate", "train", "eval", "stability"):
        assert main([cmd, "--config", str(cfg)]) == 0
    return tmp_path, cfg


class TestPipelineSmoke:
    def test_simulate_outputs(self, pipeline):
        tmp_path, _ = pipeline
        data = tmp_path / "out" / "data"
        assert len(list(data.glob("traj_*.csv"))) == SMALL_CFG["n_trajectories"]
        manifest = json.loads((data / "manifest.json").read_text())
        assert manifest["failures"] == []
        assert len(manifest["trajectories"]) == SMALL_CFG["n_trajectories"]

    def test_train_outputs(self, pipeline):
        tmp_path, _ = pipeline
        out = tmp_path / "out"
        model = json.loads((out / "model.json").read_text())
        assert model["kind"] == "koopman"
        curve = (out / "loss_curve.csv").read_text().strip().splitlines()
        assert curve[0] == "epoch,loss"
        assert len(curve) == SMALL_CFG["epochs"] + 1

    def test_eval_outputs(self, pipeline):
        tmp_path, _ = pipeline
        out = tmp_path / "out"
        for name in ("comparison.csv", "phase_plane.csv", "generated_trajectory.csv", "dmdc_model.json"):
            assert (out / name).is_file()
        comparison = (out / "comparison.csv").read_text()
        for model in ("koopman", "dmdc", "idm"):
            assert f"{model},aggregate" in comparison

    def test_stability_outputs(self, pipeline, capsys):
        tmp_path, cfg = pipeline
        out = tmp_path / "out"
        assert (out / "eigenvalues.csv").is_file()
        assert (out / "freq_response.csv").is_file()
        assert main(["stability", "--config", str(cfg)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["local_verdict"] in ("asymptotically_stable", "marginally_stable", "unstable")
        assert summary["peak_gain"] > 0

    def test_rollout_subcommand(self, pipeline):
        tmp_path, cfg = pipeline
        src = sorted((tmp_path / "out" / "data").glob("traj_*.csv"))[0]
        dest = tmp_path / "generated.csv"
        assert main(["rollout", "--config", str(cfg), "--input", str(src), "--output", str(dest)]) == 0
        header = dest.read_text().splitlines()[0]
        assert header == "traj_id,step,vehicle,position_m,velocity_mps,accel_mps2"

    def test_phase_plane_subcommand(self, pipeline):
        tmp_path, cfg = pipeline
        assert main(["phase-plane", "--config", str(cfg), "--sequence", "0"]) == 0

    def test_phase_plane_index_out_of_range(self, pipeline):
        _, cfg = pipeline
        assert main(["phase-plane", "--config", str(cfg), "--sequence", "99"]) == 2


class TestErrorPaths:
    def test_missing_data_is_config_error(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        assert main(["train", "--config", str(cfg)]) == 2
        assert "data not found" in capsys.readouterr().err

    def test_missing_model_is_config_error(self, tmp_path):
        cfg = write_cfg(tmp_path)
        assert main(["simulate", "--config", str(cfg)]) == 0
        assert main(["stability", "--config", str(cfg)]) == 2

    def test_invalid_steps_rejected(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, steps=0)
        assert main(["simulate", "--config", str(cfg)]) == 2
        assert "steps" in capsys.readouterr().err

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, bogus_key=1)
        assert main(["simulate", "--config", str(cfg)]) == 2
        assert "bogus_key" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope.json")]) == 2


class TestDeterminism:
    def test_simulate_rerun_byte_identical(self, tmp_path):
        cfg = write_cfg(tmp_path)
        assert main(["simulate", "--config", str(cfg)]) == 0
        first = digest_tree(tmp_path / "out")
        assert main(["simulate", "--config", str(cfg)]) == 0
        assert digest_tree(tmp_path / "out") == first

    def test_seed_changes_data_not_schema(self, tmp_path):
        cfg = write_cfg(tmp_path)
        assert main(["simulate", "--config", str(cfg)]) == 0
        a = (tmp_path / "out" / "data" / "traj_000.csv").read_text()
        assert main(["simulate", "--config", str(cfg), "--seed", "99"]) == 0
        b = (tmp_path / "out" / "data" / "traj_000.csv").read_text()
        assert a != b
        assert a.splitlines()[0] == b.splitlines()[0]
