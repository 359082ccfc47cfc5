"""Command-line interface: exit codes, artifacts, and reproducibility."""

import json
from pathlib import Path

import numpy as np
import pytest

from floral.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    main,
)
from floral.config import RunConfig, TrainConfig, save_run_config
from floral.dataio import load_checkpoint, read_dataset
from floral.problems import ProblemConfig


def tiny_run_config(path: Path, **train_overrides) -> Path:
    problem = ProblemConfig(problem="benchmark1", nx_hf=16, nx_lf=16)
    defaults = dict(epochs=2, batch_size=2, train_size=4, validation_size=2,
                    modes_per_axis=4, hidden_channels=4, n_layers=1)
    defaults.update(train_overrides)
    save_run_config(RunConfig(problem=problem, train=TrainConfig(**defaults)),
                    path)
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Data and a trained checkpoint shared across CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg = tiny_run_config(root / "run.json")
    assert main(["gen-data", "--config", str(cfg), "--out", str(root / "data"),
                 "--count", "6", "--seed", "0"]) == EXIT_OK
    assert main(["train", "--data", str(root / "data"), "--mode", "floral",
                 "--config", str(cfg), "--out", str(root / "model"),
                 "--seed", "0"]) == EXIT_OK
    return root


class TestGenData:
    def test_problem_flag(self, tmp_path):
        # default benchmark1 config at full resolution, but only 1 sample
        code = main(["gen-data", "--problem", "benchmark1",
                     "--out", str(tmp_path / "d"), "--count", "1"])
        assert code == EXIT_OK
        ds = read_dataset(tmp_path / "d")
        assert ds.count == 1 and "hf_solution" in ds.fields

    def test_requires_problem_or_config(self, tmp_path):
        assert main(["gen-data", "--out", str(tmp_path / "d"),
                     "--count", "1"]) == EXIT_CONFIG

    def test_conflicting_problem_and_config(self, tmp_path):
        cfg = tiny_run_config(tmp_path / "run.json")
        assert main(["gen-data", "--problem", "advection", "--config", str(cfg),
                     "--out", str(tmp_path / "d"), "--count", "1"]) == EXIT_CONFIG

    def test_deterministic_output(self, tmp_path):
        cfg = tiny_run_config(tmp_path / "run.json")
        for sub in ("a", "b"):
            assert main(["gen-data", "--config", str(cfg),
                         "--out", str(tmp_path / sub), "--count", "2",
                         "--seed", "3"]) == EXIT_OK
        for name in ("manifest.json", "hf_solution.bin"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()


class TestTrain:
    def test_artifacts(self, workspace):
        out = workspace / "model"
        for name in ("final.ckpt", "best.ckpt", "loss.csv"):
            assert (out / name).exists()
        config, params = load_checkpoint(out / "final.ckpt")
        assert config["mode"] == "floral"
        assert params

    def test_bad_config_path(self, workspace, tmp_path):
        assert main(["train", "--data", str(workspace / "data"),
                     "--mode", "floral", "--config", "no-such-preset",
                     "--out", str(tmp_path / "m")]) == EXIT_CONFIG

    def test_dataset_too_small(self, workspace, tmp_path):
        cfg = tiny_run_config(tmp_path / "run.json", train_size=100)
        assert main(["train", "--data", str(workspace / "data"),
                     "--mode", "floral", "--config", str(cfg),
                     "--out", str(tmp_path / "m")]) == EXIT_CONFIG

    def test_residual_mode_needs_lf_field(self, workspace, tmp_path):
        # advection datasets restricted to input+hf only would be artificial;
        # instead strip the LF blob from a copy of the manifest.
        import shutil

        data = tmp_path / "data"
        shutil.copytree(workspace / "data", data)
        manifest = json.loads((data / "manifest.json").read_text())
        manifest["fields"] = [f for f in manifest["fields"]
                              if f["role"] != "lf_solution"]
        (data / "manifest.json").write_text(json.dumps(manifest))
        cfg = tiny_run_config(tmp_path / "run.json")
        assert main(["train", "--data", str(data), "--mode", "floral",
                     "--config", str(cfg),
                     "--out", str(tmp_path / "m")]) == EXIT_CONFIG

    def test_deterministic_checkpoints(self, workspace, tmp_path):
        cfg = tiny_run_config(tmp_path / "run.json")
        for sub in ("a", "b"):
            assert main(["train", "--data", str(workspace / "data"),
                         "--mode", "flora", "--config", str(cfg),
                         "--out", str(tmp_path / sub), "--seed", "7"]) == EXIT_OK
        assert (tmp_path / "a" / "final.ckpt").read_bytes() == \
            (tmp_path / "b" / "final.ckpt").read_bytes()


class TestSample:
    def test_writes_ensembles(self, workspace, tmp_path):
        out = tmp_path / "samples"
        assert main(["sample", "--ckpt", str(workspace / "model" / "final.ckpt"),
                     "--data", str(workspace / "data"), "--indices", "0,2",
                     "--ensembles", "3", "--out", str(out)]) == EXIT_OK
        ds = read_dataset(out)
        assert set(ds.fields) == {"sample0", "sample2"}
        assert ds.fields["sample0"].values.shape[0] == 3

    def test_index_out_of_range(self, workspace, tmp_path):
        assert main(["sample", "--ckpt", str(workspace / "model" / "final.ckpt"),
                     "--data", str(workspace / "data"), "--indices", "99",
                     "--out", str(tmp_path / "s")]) == EXIT_CONFIG

    def test_resolution_override(self, workspace, tmp_path):
        out = tmp_path / "s"
        assert main(["sample", "--ckpt", str(workspace / "model" / "final.ckpt"),
                     "--data", str(workspace / "data"), "--indices", "0",
                     "--ensembles", "2", "--resolution", "32",
                     "--out", str(out)]) == EXIT_OK
        ds = read_dataset(out)
        assert ds.fields["sample0"].shape == (32,)

    def test_identical_invocations_identical_bytes(self, workspace, tmp_path):
        for sub in ("a", "b"):
            assert main(["sample", "--ckpt",
                         str(workspace / "model" / "final.ckpt"),
                         "--data", str(workspace / "data"), "--indices", "1",
                         "--ensembles", "2", "--seed", "11",
                         "--out", str(tmp_path / sub)]) == EXIT_OK
        assert (tmp_path / "a" / "sample1.bin").read_bytes() == \
            (tmp_path / "b" / "sample1.bin").read_bytes()


class TestEval:
    def test_reports(self, workspace, tmp_path):
        out = tmp_path / "eval"
        assert main(["eval", "--ckpt", str(workspace / "model" / "best.ckpt"),
                     "--data", str(workspace / "data"), "--ensembles", "2",
                     "--out", str(out)]) == EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        for key in ("rmse", "nrmse", "crmse", "mean_l2_error",
                    "mean_predictive_std"):
            assert np.isfinite(summary[key])
        lines = (out / "metrics.csv").read_text().strip().splitlines()
        assert lines[0] == "sample_index,rmse,nrmse,crmse,l2_error,pred_std"
        assert lines[-1].startswith("aggregate,")

    def test_pareto_append(self, workspace, tmp_path):
        pareto = tmp_path / "pareto.csv"
        for _ in range(2):
            assert main(["eval", "--ckpt",
                         str(workspace / "model" / "best.ckpt"),
                         "--data", str(workspace / "data"), "--ensembles", "2",
                         "--out", str(tmp_path / "e"),
                         "--pareto", str(pareto)]) == EXIT_OK
        lines = pareto.read_text().strip().splitlines()
        assert lines[0] == "train_size,mean_l2_error,mean_predictive_std"
        assert len(lines) == 3

    def test_missing_checkpoint(self, workspace, tmp_path):
        assert main(["eval", "--ckpt", str(tmp_path / "nope.ckpt"),
                     "--data", str(workspace / "data"),
                     "--out", str(tmp_path / "e")]) == EXIT_CONFIG


def test_console_entry_point():
    import subprocess

    proc = subprocess.run(["floral", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "gen-data" in proc.stdout
