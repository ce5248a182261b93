import json
import shutil

import numpy as np
import pytest

from wsbc import cli


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """One tiny pipeline run shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("pipeline")
    ds = root / "data.wsbc"
    assert run(
        "generate", "--policy", "mediocre", "--epsilon", "0.2", "--n", 600,
        "--episode-length", 60, "--seed", 3, "--h-p", 3, "--out", ds,
    ) == 0
    assert run(
        "train-models", "--dataset", ds, "--k", 2, "--seed", 0, "--hidden", 6,
        "--h-p", 3, "--h-f", 4, "--max-epochs", 2, "--patience", 2, "--out", root / "models",
    ) == 0
    assert run(
        "train-bc", "--dataset", ds, "--seed", 0, "--hidden", 6, "--h-p", 3,
        "--max-epochs", 3, "--patience", 2, "--out", root / "bc",
    ) == 0
    assert run(
        "search", "--dataset", ds, "--ensemble", root / "models", "--bc", root / "bc",
        "--d", 0.05, "--seed", 1, "--particles", 6, "--neighborhood", 3,
        "--iterations", 3, "--starts", 2, "--h-f", 5, "--verify", "--out", root / "search",
    ) == 0
    return root


class TestGenerate:
    def test_writes_dataset_and_sidecar(self, tmp_path):
        out = tmp_path / "d.wsbc"
        assert run("generate", "--policy", "bad", "--epsilon", "0.4", "--n", 200,
                   "--episode-length", 50, "--seed", 1, "--h-p", 3, "--out", out) == 0
        assert out.exists()
        sidecar = json.loads((tmp_path / "d.wsbc.json").read_text())
        assert sidecar["kind"] == "bad" and sidecar["epsilon"] == 0.4

    def test_repeat_run_is_byte_identical(self, tmp_path):
        args = ["generate", "--policy", "mediocre", "--epsilon", "0.2", "--n", 200,
                "--episode-length", 50, "--seed", 9, "--h-p", 3]
        out1, out2 = tmp_path / "a.wsbc", tmp_path / "b.wsbc"
        assert run(*args, "--out", out1) == 0
        assert run(*args, "--out", out2) == 0
        assert out1.read_bytes() == out2.read_bytes()
        assert (tmp_path / "a.wsbc.json").read_text() == (tmp_path / "b.wsbc.json").read_text()

    def test_invalid_epsilon_exits_validation(self, tmp_path):
        assert run("generate", "--policy", "mediocre", "--epsilon", "1.5", "--n", 200,
                   "--episode-length", 50, "--out", tmp_path / "d.wsbc") == cli.EXIT_VALIDATION

    def test_unknown_policy_exits_usage(self, tmp_path):
        assert run("generate", "--policy", "awesome", "--out", tmp_path / "d.wsbc") == cli.EXIT_USAGE

    def test_missing_out_exits_usage(self):
        assert run("generate", "--policy", "bad") == cli.EXIT_USAGE

    def test_config_file_with_flag_override(self, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"policy": "bad", "epsilon": 0.4, "n": 200,
                                      "episode_length": 50, "h_p": 3, "seed": 5}))
        out = tmp_path / "d.wsbc"
        assert run("generate", "--config", config, "--epsilon", "0.6", "--out", out) == 0
        sidecar = json.loads((tmp_path / "d.wsbc.json").read_text())
        assert sidecar["kind"] == "bad"
        assert sidecar["epsilon"] == 0.6  # flag beats config

    def test_unknown_config_key_rejected(self, tmp_path):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"policyy": "bad"}))
        assert run("generate", "--config", config, "--out", tmp_path / "d.wsbc") == cli.EXIT_VALIDATION


class TestPipeline:
    def test_artifacts_exist(self, pipeline_dir):
        assert (pipeline_dir / "models" / "ensemble.json").exists()
        assert (pipeline_dir / "models" / "member_00.wsbw").exists()
        assert (pipeline_dir / "models" / "manifest.json").exists()
        assert (pipeline_dir / "bc" / "psi.wsbw").exists()
        assert (pipeline_dir / "search" / "best_weights.wsbw").exists()
        assert (pipeline_dir / "search" / "fitness_history.csv").exists()
        assert (pipeline_dir / "search" / "config.json").exists()

    def test_search_manifest_records_input_hashes(self, pipeline_dir):
        manifest = json.loads((pipeline_dir / "search" / "manifest.json").read_text())
        assert set(manifest["inputs"]) == {"dataset", "ensemble", "psi"}
        for record in manifest["inputs"].values():
            assert len(record["sha256"]) == 64

    def test_evaluate_runs_and_reports(self, pipeline_dir, tmp_path, capsys):
        assert run("evaluate", "--search-dir", pipeline_dir / "search", "--episodes", 3,
                   "--horizon", 10, "--seed", 0, "--out", tmp_path / "eval") == 0
        report = json.loads((tmp_path / "eval" / "report.json").read_text())
        assert report["episodes"] == 3
        assert "tenth_percentile" in report
        assert (tmp_path / "eval" / "report.csv").exists()

    def test_evaluate_refuses_tampered_psi(self, pipeline_dir, tmp_path, capsys):
        stale = tmp_path / "stale"
        shutil.copytree(pipeline_dir, stale)
        psi_file = stale / "bc" / "psi.wsbw"
        blob = bytearray(psi_file.read_bytes())
        blob[-1] ^= 0xFF
        psi_file.write_bytes(bytes(blob))
        # the copied search manifest references the original (untampered)
        # inputs, so repoint it at the copy first
        manifest_path = stale / "search" / "manifest.json"
        manifest = json.loads(manifest_path.read_text())
        manifest["inputs"]["psi"]["path"] = str(psi_file)
        manifest_path.write_text(json.dumps(manifest))
        code = run("evaluate", "--search-dir", stale / "search", "--out", tmp_path / "eval2")
        assert code == cli.EXIT_VALIDATION
        err = capsys.readouterr().err
        assert "psi" in err and "sha256" in err

    def test_evaluate_refuses_tampered_weights(self, pipeline_dir, tmp_path):
        stale = tmp_path / "stale2"
        shutil.copytree(pipeline_dir / "search", stale)
        weights = stale / "best_weights.wsbw"
        manifest_path = stale / "manifest.json"
        manifest = json.loads(manifest_path.read_text())
        manifest["outputs"]["best_weights"]["path"] = str(weights)
        manifest_path.write_text(json.dumps(manifest))
        blob = bytearray(weights.read_bytes())
        blob[-1] ^= 0xFF
        weights.write_bytes(bytes(blob))
        assert run("evaluate", "--search-dir", stale, "--out", tmp_path / "eval3") == cli.EXIT_VALIDATION

    def test_search_weights_respect_box(self, pipeline_dir):
        from wsbc import behavior, nn

        theta = nn.load_policy(pipeline_dir / "search" / "best_weights.wsbw")
        clone = behavior.load_clone(pipeline_dir / "bc" / "psi.wsbw")
        assert float(np.max(np.abs(theta.flat - clone.psi.flat))) <= 0.05

    def test_sweep_writes_csv_and_scripts(self, pipeline_dir, tmp_path):
        ds = pipeline_dir / "data.wsbc"
        assert run(
            "sweep", "--dataset", ds, "--ensemble", pipeline_dir / "models",
            "--bc", pipeline_dir / "bc", "--d", "0.01,0.05", "--seeds", "0,1",
            "--particles", 5, "--neighborhood", 3, "--iterations", 1, "--starts", 2,
            "--h-f", 4, "--episodes", 2, "--horizon", 8, "--out", tmp_path / "sweep",
        ) == 0
        lines = (tmp_path / "sweep" / "sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 3  # header + one row per d
        assert (tmp_path / "sweep" / "plot_rank_vs_d.py").exists()
        assert (tmp_path / "sweep" / "report_d0.01_seed1.json").exists()

    def test_search_rerun_is_byte_identical(self, pipeline_dir, tmp_path):
        ds = pipeline_dir / "data.wsbc"
        args = [
            "search", "--dataset", ds, "--ensemble", pipeline_dir / "models",
            "--bc", pipeline_dir / "bc", "--d", 0.05, "--seed", 1, "--particles", 6,
            "--neighborhood", 3, "--iterations", 3, "--starts", 2, "--h-f", 5,
        ]
        assert run(*args, "--out", tmp_path / "s1") == 0
        assert run(*args, "--out", tmp_path / "s2") == 0
        w1 = (tmp_path / "s1" / "best_weights.wsbw").read_bytes()
        w2 = (tmp_path / "s2" / "best_weights.wsbw").read_bytes()
        assert w1 == w2
        assert w1 == (pipeline_dir / "search" / "best_weights.wsbw").read_bytes()


class TestUsage:
    def test_no_command_exits_usage(self):
        assert run() == cli.EXIT_USAGE

    def test_unknown_flag_exits_usage(self, tmp_path):
        assert run("generate", "--policy", "bad", "--frobnicate", "--out", tmp_path / "x") == cli.EXIT_USAGE

    def test_missing_upstream_artifact_is_validation_error(self, tmp_path):
        assert run("train-models", "--dataset", tmp_path / "nope.wsbc",
                   "--out", tmp_path / "m") == cli.EXIT_VALIDATION
