import csv
import hashlib
import json

import numpy as np
import pytest
import yaml

from revgen.cli import main
from revgen.config import (
    bundled_config_path,
    build_generator,
    build_kernel_spec,
    build_target,
    build_transition,
    load_config,
    prepare_run_dir,
    save_config,
    validate_config,
)
from revgen.errors import ConfigInvalidError

BUNDLED = ["gmm", "gmm_desk", "ising_b02", "ising_b02_desk", "ising_b05",
           "ising_b05_desk", "hybrid", "hybrid_desk", "smoke"]


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = load_config("smoke")
        path = save_config(cfg, tmp_path / "c.yaml")
        again = load_config(path)
        assert again.to_dict() == cfg.to_dict()

    @pytest.mark.parametrize("name", BUNDLED)
    def test_bundled_configs_valid(self, name):
        assert bundled_config_path(name) is not None
        cfg = load_config(name)
        build_target(cfg)
        build_kernel_spec(cfg)
        build_generator(cfg)
        build_transition(cfg)

    def test_unknown_benchmark(self):
        with pytest.raises(ConfigInvalidError, match="benchmark"):
            validate_config({"benchmark": "spins9000"})

    def test_error_paths_collected(self):
        raw = {
            "benchmark": "ising",
            "batch_size": -5,
            "target": {"side": 3, "beta": -1.0},
            "optimizer": {"variant": "sgd", "lr": -2.0},
        }
        with pytest.raises(ConfigInvalidError) as err:
            validate_config(raw)
        text = str(err.value)
        assert "batch_size" in text
        assert "target.beta" in text
        assert "optimizer.variant" in text
        assert "optimizer.lr" in text

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigInvalidError, match="unknown key"):
            validate_config({"benchmark": "gmm", "bananas": 3})

    def test_boundary_only_for_gmm(self):
        with pytest.raises(ConfigInvalidError, match="boundary"):
            validate_config({"benchmark": "ising",
                             "boundary": {"radius": 5.0}})

    def test_defaults_filled(self):
        cfg = validate_config({"benchmark": "gmm"})
        assert cfg.batch_size == 2048
        assert cfg.kernel["imq"]["c"] == 1.4
        assert cfg.transition["steps"] == 3
        assert cfg.boundary["radius"] == 5.0

    def test_ising_lattice_bound(self):
        with pytest.raises(ConfigInvalidError, match="side"):
            validate_config({"benchmark": "ising",
                             "target": {"side": 5, "beta": 0.2}})

    def test_run_dir_naming(self, tmp_path):
        cfg = load_config("smoke")
        cfg.out_dir = str(tmp_path)
        run = prepare_run_dir(cfg)
        assert run.name.endswith(cfg.config_hash())
        assert (run / "config.yaml").exists()

    def test_config_hash_stable(self):
        a = load_config("smoke")
        b = load_config("smoke")
        assert a.config_hash() == b.config_hash()
        b.seed = 99
        assert a.config_hash() != b.config_hash()


def _write_tiny_config(tmp_path, **over):
    raw = {
        "benchmark": "gmm",
        "seed": 5,
        "out_dir": str(tmp_path / "runs"),
        "batch_size": 32,
        "iterations": 12,
        "eval_every": 0,
        "checkpoint_every": 0,
        "optimizer": {"variant": "adamw", "lr": 1e-4, "weight_decay": 0.0},
    }
    raw.update(over)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


class TestCli:
    def test_train_sample_eval_cycle(self, tmp_path, capsys):
        cfg_path = _write_tiny_config(tmp_path)
        assert main(["train", "--config", str(cfg_path), "--quiet"]) == 0
        out = capsys.readouterr().out
        run_dir = [ln for ln in out.splitlines() if "run directory" in ln][0]
        run_dir = run_dir.split(": ", 1)[1]
        ckpt = f"{run_dir}/final.npz"

        sample_path = tmp_path / "samples.csv"
        assert main(["sample", "--checkpoint", ckpt, "--n", "100",
                     "--out", str(sample_path)]) == 0
        rows = sample_path.read_text().strip().splitlines()
        assert rows[0] == "x0,x1"
        assert len(rows) == 101

        report_path = tmp_path / "report.json"
        assert main(["eval", "--checkpoint", ckpt, "--n", "2000",
                     "--out", str(report_path)]) == 0
        report = json.loads(report_path.read_text())
        assert report["benchmark"] == "gmm"
        assert "l2_density_error" in report["metrics"]
        assert "kl_divergence" in report["metrics"]

    def test_sample_deterministic_bytes(self, tmp_path, capsys):
        cfg_path = _write_tiny_config(tmp_path)
        main(["train", "--config", str(cfg_path), "--quiet"])
        out = capsys.readouterr().out
        run_dir = [ln for ln in out.splitlines() if "run directory" in ln][0]
        ckpt = run_dir.split(": ", 1)[1] + "/final.npz"
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        main(["sample", "--checkpoint", ckpt, "--n", "64", "--seed", "3",
              "--out", str(a)])
        main(["sample", "--checkpoint", ckpt, "--n", "64", "--seed", "3",
              "--out", str(b)])
        ha = hashlib.sha256(a.read_bytes()).hexdigest()
        hb = hashlib.sha256(b.read_bytes()).hexdigest()
        assert ha == hb

    def test_eval_benchmark_mismatch(self, tmp_path, capsys):
        cfg_path = _write_tiny_config(tmp_path)
        main(["train", "--config", str(cfg_path), "--quiet"])
        out = capsys.readouterr().out
        run_dir = [ln for ln in out.splitlines() if "run directory" in ln][0]
        ckpt = run_dir.split(": ", 1)[1] + "/final.npz"
        assert main(["eval", "--checkpoint", ckpt, "--benchmark", "ising",
                     "--n", "100"]) == 2

    def test_enumerate_command(self, tmp_path, capsys):
        out_path = tmp_path / "table.csv"
        assert main(["enumerate", "--L", "3", "--beta", "0.2",
                     "--out", str(out_path)]) == 0
        printed = capsys.readouterr().out
        assert "mean_energy" in printed
        with out_path.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["L", "J", "h", "beta", "convention"]
        assert len(rows) == 3 + 512

    def test_enumerate_infinite_temperature(self, tmp_path):
        out_path = tmp_path / "t.csv"
        assert main(["enumerate", "--L", "3", "--beta", "0.0",
                     "--out", str(out_path)]) == 0
        from revgen.targets import EnumerationTable

        table = EnumerationTable.load_csv(out_path)
        np.testing.assert_allclose(table.probs, 1 / 512, atol=1e-15)

    def test_verify_kernel_ising(self, tmp_path, capsys):
        raw = {
            "benchmark": "ising",
            "seed": 1,
            "target": {"side": 3, "beta": 0.5},
            "transition": {"variant": "ising_mixture", "steps": 1,
                           "p_global": 0.1},
        }
        cfg_path = tmp_path / "cfg.yaml"
        cfg_path.write_text(yaml.safe_dump(raw))
        out_path = tmp_path / "verify.json"
        assert main(["verify-kernel", "--config", str(cfg_path),
                     "--out", str(out_path)]) == 0
        report = json.loads(out_path.read_text())
        assert report["passed"] is True
        assert report["max_flux_violation"] < 1e-13

    def test_verify_kernel_gmm_with_log(self, tmp_path):
        cfg_path = _write_tiny_config(tmp_path)
        log_path = tmp_path / "transitions.csv"
        assert main(["verify-kernel", "--config", str(cfg_path),
                     "--log-transitions", str(log_path)]) == 0
        lines = log_path.read_text().strip().splitlines()
        assert lines[0] == "step,accepted,log_acceptance"
        assert len(lines) == 201

    def test_invalid_config_exit_code(self, tmp_path):
        bad = tmp_path / "bad.yaml"
        bad.write_text(yaml.safe_dump({"benchmark": "gmm", "batch_size": -1}))
        assert main(["train", "--config", str(bad)]) == 2

    def test_missing_config_exit_code(self):
        assert main(["train", "--config", "/nonexistent/nope.yaml"]) == 2

    def test_corrupt_checkpoint(self, tmp_path):
        fake = tmp_path / "fake.npz"
        fake.write_bytes(b"not a checkpoint")
        assert main(["sample", "--checkpoint", str(fake), "--n", "10"]) == 2
