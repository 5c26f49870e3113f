"""CLI surface tests: flags, exit codes, determinism, file formats."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

ENV = {**os.environ, "OPENBLAS_NUM_THREADS": "1", "OMP_NUM_THREADS": "1"}


def run_cli(*args, env=None):
    return subprocess.run(
        [sys.executable, "-m", "physnet.cli", *args],
        capture_output=True,
        text=True,
        env=env or ENV,
    )


class TestGenerate:
    def test_writes_expected_header(self, tmp_path):
        out = tmp_path / "d.csv"
        r = run_cli("generate", "--system", "spring", "--n", "50",
                    "--t-span", "0:5", "--sigma", "0.01", "--seed", "7",
                    "--out", str(out))
        assert r.returncode == 0
        assert out.read_text().splitlines()[0] == "t,q,p,dq,dp,source,sigma,seed"
        assert len(out.read_text().splitlines()) == 51

    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (a, b):
            r = run_cli("generate", "--n", "60", "--t-span", "0:3",
                        "--sigma", "0.02", "--seed", "9", "--out", str(out))
            assert r.returncode == 0
        assert a.read_bytes() == b.read_bytes()

    def test_sigma_zero_derivatives_analytic(self, tmp_path):
        out = tmp_path / "c.csv"
        r = run_cli("generate", "--n", "200", "--t-span", "0:5",
                    "--sigma", "0", "--out", str(out))
        assert r.returncode == 0
        rows = np.loadtxt(out, delimiter=",", skiprows=1, usecols=(0, 1, 2, 3, 4))
        np.testing.assert_allclose(rows[:, 3], 2 * rows[:, 2], atol=1e-9)
        np.testing.assert_allclose(rows[:, 4], -2 * rows[:, 1], atol=1e-9)

    def test_bad_flag_exits_2(self, tmp_path):
        r = run_cli("generate", "--bogus-flag", "--out", str(tmp_path / "x.csv"))
        assert r.returncode == 2

    def test_bad_value_exits_2(self, tmp_path):
        r = run_cli("generate", "--n", "1", "--out", str(tmp_path / "x.csv"))
        assert r.returncode == 2
        assert "error" in r.stderr

    def test_env_seed_default(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        env = {**ENV, "PHYSNET_SEED": "123"}
        run_cli("generate", "--n", "40", "--sigma", "0.05", "--out", str(a), env=env)
        run_cli("generate", "--n", "40", "--sigma", "0.05", "--seed", "123", "--out", str(b))
        assert a.read_bytes() == b.read_bytes()


class TestTrain:
    def test_epochs_zero_rejected(self, tmp_path):
        r = run_cli("train", "plain", "--target", "cos", "--epochs", "0",
                    "--out", str(tmp_path / "m.json"))
        assert r.returncode == 2

    def test_plain_and_hub_output_loss_json(self, tmp_path):
        out = tmp_path / "m.json"
        r = run_cli("train", "even-hub", "--target", "cos", "--epochs", "40",
                    "--n", "50", "--seed", "3", "--out", str(out))
        assert r.returncode == 0, r.stderr
        payload = json.loads(r.stdout)
        assert "train_loss" in payload
        doc = json.loads(out.read_text())
        assert doc["output_mode"] == "even_hub"

    def test_decomp_writes_table(self, tmp_path):
        out = tmp_path / "d.json"
        table = tmp_path / "d.csv"
        r = run_cli("train", "decomp", "--target", "exp", "--epochs", "60",
                    "--n", "64", "--seed", "1", "--out", str(out),
                    "--table-out", str(table))
        assert r.returncode == 0, r.stderr
        assert table.read_text().splitlines()[0] == "x,y_even,y_odd,y_hat,target"

    def test_hnn_requires_data(self, tmp_path):
        r = run_cli("train", "hnn", "--target", "cos", "--out", str(tmp_path / "m.json"))
        assert r.returncode == 2


class TestRollout:
    @pytest.fixture(scope="class")
    def sindy_model(self, tmp_path_factory):
        d = tmp_path_factory.mktemp("roll")
        data = d / "t.csv"
        run_cli("generate", "--n", "2000", "--t-span", "0:10", "--out", str(data))
        model = d / "m.json"
        r = run_cli("sindy", "fit", "--data", str(data), "--threshold", "0.5",
                    "--ridge-alpha", "0.05", "--out", str(model))
        assert r.returncode == 0, r.stderr
        return model

    def test_two_point_rollout(self, tmp_path, sindy_model):
        out = tmp_path / "r.csv"
        r = run_cli("rollout", "--model", str(sindy_model), "--y0", "1,0",
                    "--t-span", "0:1", "--n", "2", "--out", str(out))
        assert r.returncode == 0, r.stderr
        lines = out.read_text().splitlines()
        assert len(lines) == 3
        assert lines[1].startswith("0,")
        assert lines[2].startswith("1,")

    def test_missing_model_exits_1(self, tmp_path):
        r = run_cli("rollout", "--model", str(tmp_path / "nope.json"),
                    "--out", str(tmp_path / "r.csv"))
        assert r.returncode == 1


class TestSindyFit:
    def test_noiseless_spring_equations_printed(self, tmp_path):
        data = tmp_path / "t.csv"
        run_cli("generate", "--n", "3000", "--t-span", "0:10", "--out", str(data))
        out = tmp_path / "m.json"
        r = run_cli("sindy", "fit", "--data", str(data), "--threshold", "auto",
                    "--ridge-alpha", "0.05", "--seed", "2", "--out", str(out))
        assert r.returncode == 0, r.stderr
        lines = r.stdout.splitlines()
        assert lines[0].startswith("q̇ = 2.000 p")
        assert lines[1].startswith("ṗ = -2.000 q")
        assert "chosen threshold" in r.stderr

    def test_huge_threshold_exits_1(self, tmp_path):
        data = tmp_path / "t.csv"
        run_cli("generate", "--n", "500", "--t-span", "0:5", "--out", str(data))
        r = run_cli("sindy", "fit", "--data", str(data), "--threshold", "10",
                    "--out", str(tmp_path / "m.json"))
        assert r.returncode == 1
        assert "10" in r.stderr


class TestConfigOverlay:
    def test_file_fills_gaps_flags_win(self, tmp_path):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("sigma = 0.05\nn = 40\n")
        a = tmp_path / "a.csv"
        r = run_cli("generate", "--config", str(cfg), "--seed", "1",
                    "--n", "30", "--out", str(a))
        assert r.returncode == 0, r.stderr
        lines = a.read_text().splitlines()
        assert len(lines) == 31          # explicit --n 30 beats file n=40
        assert lines[1].split(",")[6] == "0.05"   # file sigma applied

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("verbosity = 3\n")
        r = run_cli("generate", "--config", str(cfg), "--out", str(tmp_path / "x.csv"))
        assert r.returncode == 2


def test_help_lists_subcommands():
    r = run_cli("--help")
    assert r.returncode == 0
    for cmd in ("generate", "train", "rollout", "sindy", "experiment"):
        assert cmd in r.stdout
