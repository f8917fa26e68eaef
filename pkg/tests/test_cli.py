"""Command-line harness: config validation, outputs, idempotency."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from wrongexit.cli import ConfigError, build_model, build_rule, main

TINY_SIEGMUND = {
    "name": "tiny",
    "model": {
        "family": "independent",
        "components": [{"type": "normal", "mu": -0.5, "sigma2": 1.0,
                        "count": 2}],
    },
    "problem": {"kind": "siegmund", "ell": 1.0, "u": 1.0},
    "proposal": {"variant": "theta1"},
    "run": {"b_grid": [3.0, 4.0], "n_paths": 2000, "seed": 17},
    "outputs": {"dir": "out"},
}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


class TestConfigParsing:
    def test_missing_field_path_in_error(self):
        with pytest.raises(ConfigError, match="model.family"):
            build_model({})
        with pytest.raises(ConfigError, match="problem.kind"):
            build_rule({})
        with pytest.raises(ConfigError, match=r"components\[0\].mu"):
            build_model({"family": "independent",
                         "components": [{"type": "normal"}]})

    def test_mean_shorthands(self):
        m = build_model({"family": "mvnormal", "dim": 4, "mean": -0.5,
                         "rho": 0.2})
        np.testing.assert_array_equal(m.mean, np.full(4, -0.5))
        m = build_model({"family": "mvnormal", "dim": 4,
                         "mean": {"head": 0.5, "tail": -0.5, "split": 2},
                         "rho": 0.0})
        np.testing.assert_array_equal(m.mean, [0.5, 0.5, -0.5, -0.5])

    def test_component_counts(self):
        m = build_model({"family": "independent", "components": [
            {"type": "normal", "mu": -0.5, "sigma2": 1.0, "count": 3},
            {"type": "shifted_exponential", "rate": 2.0, "shift": -0.7},
        ]})
        assert m.dim == 4

    def test_unknown_family(self):
        with pytest.raises(ConfigError, match="unknown family"):
            build_model({"family": "cauchy"})

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        path = write_cfg(tmp_path, {"name": "x", "model": {"family": "bad"}})
        assert main(["solve", "--config", path]) == 2


class TestCommands:
    def test_solve_writes_manifest(self, tmp_path):
        cfg = write_cfg(tmp_path, TINY_SIEGMUND)
        out = tmp_path / "o"
        assert main(["solve", "--config", cfg, "--out", str(out)]) == 0
        man = json.loads((out / "tiny_proposal.json").read_text())
        assert man["schema"] == "wrongexit-proposal-1"
        assert man["size"] == len(man["thetas"])
        assert man["report"]["condition"] == "H1"
        assert all(rec["residual"] <= 1e-8 for rec in man["solutions"])

    def test_run_consumes_manifest_verbatim(self, tmp_path):
        cfg_path = write_cfg(tmp_path, TINY_SIEGMUND)
        out = tmp_path / "o"
        assert main(["solve", "--config", cfg_path, "--out", str(out)]) == 0
        cfg2 = dict(TINY_SIEGMUND)
        cfg2["name"] = "tiny2"
        cfg2["proposal"] = {"manifest": str(out / "tiny_proposal.json")}
        cfg2_path = write_cfg(tmp_path, cfg2, "cfg2.json")
        assert main(["run", "--config", cfg2_path, "--out", str(out)]) == 0
        run = json.loads((out / "tiny2_run.json").read_text())
        assert len(run["rows"]) == 2

    def test_run_idempotent_byte_identical(self, tmp_path):
        cfg = write_cfg(tmp_path, TINY_SIEGMUND)
        out = tmp_path / "o"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 0
        first_json = (out / "tiny_run.json").read_bytes()
        first_csv = (out / "tiny_scan.csv").read_bytes()
        assert main(["run", "--config", cfg, "--out", str(out)]) == 0
        assert (out / "tiny_run.json").read_bytes() == first_json
        assert (out / "tiny_scan.csv").read_bytes() == first_csv

    def test_csv_schema(self, tmp_path):
        cfg = write_cfg(tmp_path, TINY_SIEGMUND)
        out = tmp_path / "o"
        main(["run", "--config", cfg, "--out", str(out)])
        lines = (out / "tiny_scan.csv").read_text().strip().splitlines()
        assert lines[0] == "b,p_hat,neg_log10_p,rel_err"
        assert len(lines) == 3

    def test_check_exit_reflects_condition(self, tmp_path):
        good = dict(TINY_SIEGMUND)
        good["model"] = {"family": "mvnormal", "dim": 10, "mean": -0.5,
                        "rho": 0.2}
        path = write_cfg(tmp_path, good, "good.json")
        out = tmp_path / "o"
        assert main(["check", "--config", path, "--out", str(out)]) == 0
        bad = dict(good)
        bad["name"] = "bad"
        bad["model"] = {"family": "mvnormal", "dim": 10, "mean": -0.5,
                        "rho": 0.8}
        path = write_cfg(tmp_path, bad, "bad.json")
        assert main(["check", "--config", path, "--out", str(out)]) == 1
        rep = json.loads((out / "bad_check.json").read_text())
        assert rep["holds"] is False and rep["warning"]

    def test_oracle_reports_z_score(self, tmp_path):
        cfg = dict(TINY_SIEGMUND)
        cfg["oracle"] = {"b": 3.0, "n_mixture": 4000, "n_plain": 40000,
                         "seed": 2}
        path = write_cfg(tmp_path, cfg)
        out = tmp_path / "o"
        assert main(["oracle", "--config", path, "--out", str(out)]) == 0
        rep = json.loads((out / "tiny_oracle.json").read_text())
        assert abs(rep["z_score"]) <= 4.0
        assert rep["mixture"]["p_hat"] > 0

    def test_strict_mode_flags_truncation(self, tmp_path):
        cfg = dict(TINY_SIEGMUND)
        cfg["run"] = {"b_grid": [4.0], "n_paths": 500, "seed": 3,
                      "max_steps": 3}
        path = write_cfg(tmp_path, cfg)
        out = tmp_path / "o"
        assert main(["run", "--config", path, "--out", str(out),
                     "--strict"]) == 1
        assert main(["run", "--config", path, "--out", str(out)]) == 0

    def test_paper_scale_overrides(self, tmp_path):
        cfg = dict(TINY_SIEGMUND)
        cfg["paper_scale"] = {"run": {"n_paths": 123}}
        path = write_cfg(tmp_path, cfg)
        from wrongexit.cli import load_config
        merged = load_config(path, paper_scale=True)
        assert merged["run"]["n_paths"] == 123
        assert merged["run"]["b_grid"] == [3.0, 4.0]

    def test_seed_override_changes_output(self, tmp_path):
        cfg = write_cfg(tmp_path, TINY_SIEGMUND)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        main(["run", "--config", cfg, "--out", str(out1)])
        main(["run", "--config", cfg, "--out", str(out2), "--seed", "99"])
        r1 = json.loads((out1 / "tiny_run.json").read_text())
        r2 = json.loads((out2 / "tiny_run.json").read_text())
        assert r1["rows"][0]["p_hat"] != r2["rows"][0]["p_hat"]


class TestSweeps:
    def test_gap_v_sweep_csv(self, tmp_path):
        cfg = {
            "name": "sw",
            "model": {"family": "mvnormal", "dim": 4, "mean": -0.5},
            "sweep": {"kind": "gap_v", "d": 8, "m": 4,
                      "v_grid": [0.5, 1.0, 2.0]},
        }
        path = write_cfg(tmp_path, cfg)
        out = tmp_path / "o"
        assert main(["sweep", "--config", path, "--out", str(out)]) == 0
        lines = (out / "sw_sweep.csv").read_text().strip().splitlines()
        assert lines[0].startswith("v,min_r_A")
        assert len(lines) == 4
        # v = 1 is the symmetric case: r = z~ = 1, both conditions hold
        row = dict(zip(lines[0].split(","), lines[2].split(",")))
        assert float(row["min_r_A"]) == pytest.approx(1.0, abs=1e-8)
        assert row["h1p_holds"] == "1"

    def test_siegmund_rho_sweep(self, tmp_path):
        cfg = {
            "name": "sw2",
            "model": {"family": "mvnormal", "dim": 4, "mean": -0.5},
            "sweep": {"kind": "siegmund_rho", "d": 10, "ell": 1.0, "u": 1.0,
                      "rho_grid": [0.1, 0.45, 0.6]},
        }
        path = write_cfg(tmp_path, cfg)
        out = tmp_path / "o"
        assert main(["sweep", "--config", path, "--out", str(out)]) == 0
        lines = (out / "sw2_sweep.csv").read_text().strip().splitlines()
        assert len(lines) == 4

    def test_table_small(self, tmp_path):
        cfg = {
            "name": "tb",
            "model": {"family": "mvnormal", "dim": 4, "mean": -0.5},
            "table": {"d": 8, "ell": 1.0, "u_values": [1.0],
                      "rho_grid": {"start": 0.0, "stop": 0.6, "step": 0.2}},
        }
        path = write_cfg(tmp_path, cfg)
        out = tmp_path / "o"
        assert main(["table", "--config", path, "--out", str(out)]) == 0
        lines = (out / "tb_table.csv").read_text().strip().splitlines()
        assert lines[0] == "u,H1_max_rho,H2_max_rho,direct_max_rho"
        assert len(lines) == 2
