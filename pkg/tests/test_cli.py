"""Config handling, artifact schemas, slope fit, exit codes."""

import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from mlsgfem import cli
from mlsgfem.cli import RunConfig, fit_slope, load_config, main, run


def write_steps(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            "k,N_dof,eta,energy_sq,refinement_type,card_JP,M,n_marked,"
            "pcg_iters,t_solve_s,t_estimate_s".split(",")
        )
        for k, (n, eta) in enumerate(rows):
            w.writerow([k, n, f"{eta:.17g}", 0, "spatial", 2, 1, 1, 5, 0.1, 0.1])


class TestFitSlope:
    def test_exact_half_slope(self, tmp_path):
        p = tmp_path / "steps.csv"
        ns = np.geomspace(100, 100000, 12).astype(int)
        write_steps(p, [(n, 3.0 * n**-0.5) for n in ns])
        assert fit_slope(p, 1.0) == pytest.approx(-0.5, abs=1e-12)

    def test_constant_eta(self, tmp_path):
        p = tmp_path / "steps.csv"
        ns = np.geomspace(100, 100000, 10).astype(int)
        write_steps(p, [(n, 0.25) for n in ns])
        assert fit_slope(p, 0.8) == pytest.approx(0.0, abs=1e-12)

    def test_tail_fraction_selects_tail(self, tmp_path):
        p = tmp_path / "steps.csv"
        rows = [(100 * 2**k, 1.0) for k in range(5)]
        rows += [(100 * 2**k, 10.0 * (100 * 2**k) ** -0.5) for k in range(5, 12)]
        write_steps(p, rows)
        assert fit_slope(p, 0.5) == pytest.approx(-0.5, abs=1e-12)

    def test_too_few_points(self, tmp_path):
        p = tmp_path / "steps.csv"
        write_steps(p, [(100, 1.0), (200, 0.8)])
        with pytest.raises(ValueError):
            fit_slope(p, 1.0)


class TestConfig:
    def test_defaults_valid(self):
        cfg = RunConfig().validate()
        assert cfg.problem == "tp3"
        assert cfg.solve_options().tol == cfg.tol

    def test_file_plus_overrides(self, tmp_path):
        cfg_file = tmp_path / "run.toml"
        cfg_file.write_text(
            'problem = "tp2"\nversion = 2\ntol = 1e-3\ndelta_m = 3\n'
            "initial_levels = [4, 4]\n"
        )
        cfg = load_config(cfg_file, {"tol": 5e-3, "out": str(tmp_path / "o")})
        assert cfg.problem == "tp2"
        assert cfg.version == 2
        assert cfg.tol == 5e-3  # flag wins
        assert cfg.delta_m == 3

    def test_unknown_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "run.toml"
        cfg_file.write_text("tolerance = 1e-3\n")
        with pytest.raises(ValueError):
            load_config(cfg_file, {})

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            RunConfig(problem="tp7").validate()
        with pytest.raises(ValueError):
            RunConfig(version=3).validate()
        with pytest.raises(ValueError):
            RunConfig(tol=-1.0).validate()
        with pytest.raises(ValueError):
            RunConfig(delta_m=0).validate()

    def test_custom_problem_config(self, tmp_path):
        cfg_file = tmp_path / "run.toml"
        cfg_file.write_text(
            'problem = "custom"\ntol = 2e-2\n'
            "[custom]\na0 = 1.0\nterms = [[0.3, 0.0, 1.0]]\n"
        )
        cfg = load_config(cfg_file, {"out": str(tmp_path / "o")})
        code, result = run(cfg)
        assert code == 0
        assert result.status == "converged"


class TestRunArtifacts:
    @pytest.fixture(scope="class")
    def done_run(self, tmp_path_factory):
        out = tmp_path_factory.mktemp("artifacts")
        cfg = RunConfig(problem="tp3", version=1, tol=8e-3, out=str(out)).validate()
        code, result = run(cfg)
        return out, code, result

    def test_exit_code_and_files(self, done_run):
        out, code, result = done_run
        assert code == 0
        for name in ("steps.csv", "modes.csv", "summary.json", "components.json"):
            assert (out / name).exists()

    def test_steps_schema(self, done_run):
        out, _, result = done_run
        with open(out / "steps.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(result.records)
        assert list(rows[0].keys()) == [
            "k", "N_dof", "eta", "energy_sq", "refinement_type", "card_JP",
            "M", "n_marked", "pcg_iters", "t_solve_s", "t_estimate_s",
        ]
        ndofs = [int(r["N_dof"]) for r in rows]
        assert all(a < b for a, b in zip(ndofs, ndofs[1:]))
        assert float(rows[-1]["eta"]) < 8e-3

    def test_modes_schema(self, done_run):
        out, _, result = done_run
        with open(out / "modes.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == len(result.space.index_set)
        assert rows[0]["mu"] == ""  # zero index listed first
        for row in rows:
            lvl = int(row["level"])
            assert float(row["h"]) == pytest.approx(2.0 ** (-lvl))

    def test_summary_schema(self, done_run):
        out, _, result = done_run
        summary = json.loads((out / "summary.json").read_text())
        assert summary["status"] == "converged"
        assert summary["final_eta"] < 8e-3
        assert summary["card_jp"] == len(result.space.index_set)
        assert sum(summary["mode_level_counts"].values()) == summary["card_jp"]
        assert summary["stiffness_matrices"] <= summary["naive_bound"]
        assert summary["energy"] == pytest.approx(
            math.sqrt(result.energy_sq), rel=1e-15
        )

    def test_components_json(self, done_run):
        out, _, result = done_run
        comp = json.loads((out / "components.json").read_text())
        assert len(comp) == len(result.records)
        first = comp[0]
        assert {"k", "bar_mu_level", "spatial", "parametric"} <= set(first)
        assert first["spatial"][0]["n_dof"] > 0


class TestExitCodes:
    def test_cap_exhaustion_exit_2(self, tmp_path):
        cfg = RunConfig(
            problem="tp3", tol=1e-9, max_steps=1, out=str(tmp_path / "o")
        ).validate()
        code, result = run(cfg)
        assert code == 2
        assert result.status == "max_steps"

    def test_main_config_error_exit_1(self, capsys):
        assert main(["--problem", "tp3", "--tol", "-1"]) == 1
        assert "config error" in capsys.readouterr().err

    def test_main_happy_path(self, tmp_path, capsys):
        code = main(
            ["--problem", "tp4", "--tol", "8e-3", "--out", str(tmp_path / "o")]
        )
        assert code == 0
        assert "status=converged" in capsys.readouterr().out


class TestReferenceRun:
    def test_returns_energy(self):
        energy = cli.reference_run("tp3", 8e-3)
        assert 0.19 < energy < 0.195
