import csv
import json
import subprocess
import sys

import pytest

from conftest import TABLE3, table3_coverage
from underreport.cli import main
from underreport.model import TABLE2_PARAMS


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert run("simulate", "--seed", 7, "--months", 48, "--sigma", 2, "--out-dir", d, "--quiet") == 0
    return d


@pytest.fixture(scope="module")
def fit_dir(sim_dir, tmp_path_factory):
    d = tmp_path_factory.mktemp("fit")
    assert run("fit", "--data", sim_dir / "series.csv", "--restarts", 1, "--out-dir", d, "--quiet") == 0
    return d


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_counts(tmp_path):
    counts = tmp_path / "counts.csv"
    cov = tmp_path / "coverage.csv"
    labels = {0: "F", 1: "M"}
    with counts.open("w") as fh:
        fh.write("sex,age_band,registered,estimated\n")
        for k, row in TABLE3.items():
            fh.write(f"{labels[k.sex]},{k.age_label},{row[0]},{row[1]}\n")
    with cov.open("w") as fh:
        fh.write("sex,age_band,coverage\n")
        for k, c in table3_coverage().items():
            fh.write(f"{labels[k.sex]},{k.age_label},{c!r}\n")
    return counts, cov


class TestSimulate:
    def test_byte_identical(self, tmp_path):
        params = tmp_path / "table2.json"
        params.write_text(json.dumps(TABLE2_PARAMS.to_dict()))
        for d in ("a", "b"):
            assert run("simulate", "--params", params, "--sigma", 2, "--months", 96, "--seed", 7,
                       "--out-dir", tmp_path / d, "--quiet") == 0
        for name in ("series.csv", "truth.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_missing_params(self, tmp_path, capsys):
        assert run("simulate", "--params", tmp_path / "nope.json", "--out-dir", tmp_path) == 2
        assert "nope.json" in capsys.readouterr().err

    def test_one_month(self, tmp_path):
        assert run("simulate", "--months", 1, "--out-dir", tmp_path, "--quiet") == 2

    def test_rerun_from_manifest(self, sim_dir, tmp_path):
        assert run("simulate", "--config", sim_dir / "run_config.json", "--out-dir", tmp_path, "--quiet") == 0
        assert (tmp_path / "series.csv").read_bytes() == (sim_dir / "series.csv").read_bytes()
        cfg = json.loads((tmp_path / "run_config.json").read_text())
        assert cfg["seed"] == 7 and cfg["months"] == 48 and cfg["command"] == "simulate"

    def test_bad_config(self, tmp_path):
        bad = tmp_path / "c.json"
        bad.write_text(json.dumps({"frobnicate": 1}))
        assert run("simulate", "--config", bad, "--out-dir", tmp_path) == 2


class TestFit:
    def test_fit_json(self, fit_dir):
        out = json.loads((fit_dir / "fit.json").read_text())
        assert out["converged"] is True
        assert set(out["ci95"]) == set(out["free"])
        assert out["transform"]["q"] == "logit"
        assert 0 < out["params"]["q"] < 1

    def test_identical_json(self, sim_dir, fit_dir, tmp_path):
        assert run("fit", "--data", sim_dir / "series.csv", "--restarts", 1, "--out-dir", tmp_path, "--quiet") == 0
        assert (tmp_path / "fit.json").read_bytes() == (fit_dir / "fit.json").read_bytes()

    def test_variants_table(self, sim_dir, tmp_path):
        assert run("fit", "--data", sim_dir / "series.csv", "--variants", "full,no-trend,one-harmonic",
                   "--restarts", 0, "--out-dir", tmp_path, "--quiet") == 0
        rows = read_csv(tmp_path / "comparison.csv")
        assert len(rows) == 3
        assert sorted(r["variant"] for r in rows) == ["full", "no-trend", "one-harmonic"]
        aics = [float(r["aic"]) for r in rows]
        assert aics == sorted(aics)
        assert (tmp_path / "fit_no-trend.json").exists()

    def test_malformed_csv(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("month,sex,age_band,rate\n1,F,15-29,1.0\n2,F,15-29,oops\n")
        assert run("fit", "--data", bad, "--out-dir", tmp_path) == 2
        assert "row 3, column rate" in capsys.readouterr().err

    def test_missing_data_flag(self, tmp_path):
        assert run("fit", "--out-dir", tmp_path) == 2

    def test_unknown_variant(self, sim_dir, tmp_path):
        assert run("fit", "--data", sim_dir / "series.csv", "--variants", "tiny", "--out-dir", tmp_path) == 2


class TestReconstruct:
    def test_outputs(self, sim_dir, fit_dir, tmp_path):
        assert run("reconstruct", "--data", sim_dir / "series.csv", "--fit", fit_dir / "fit.json",
                   "--out-dir", tmp_path, "--quiet") == 0
        rows = read_csv(tmp_path / "reconstruction.csv")
        assert len(rows) == 4 * 48
        q = json.loads((fit_dir / "fit.json").read_text())["params"]["q"]
        for r in rows:
            y, x = float(r["rate"]), float(r["latent_x"])
            assert x == (y / q if r["flagged"] == "1" else y)
        groups = [r["group"] for r in read_csv(tmp_path / "summary.csv")]
        assert groups[-1] == "Global"

    def test_q_one_identity(self, sim_dir, tmp_path):
        fitfile = tmp_path / "fit.json"
        fitfile.write_text(json.dumps({"params": TABLE2_PARAMS.with_values(q=1.0).to_dict()}))
        assert run("reconstruct", "--data", sim_dir / "series.csv", "--fit", fitfile, "--out-dir", tmp_path,
                   "--quiet") == 0
        assert all(r["rate"] == r["latent_x"] for r in read_csv(tmp_path / "reconstruction.csv"))

    def test_counts_and_cost(self, sim_dir, fit_dir, tmp_path):
        counts, cov = write_counts(tmp_path)
        assert run("reconstruct", "--data", sim_dir / "series.csv", "--fit", fit_dir / "fit.json",
                   "--counts", counts, "--coverage", cov, "--unit-cost", 1000, "--out-dir", tmp_path,
                   "--quiet") == 0
        cost = json.loads((tmp_path / "cost.json").read_text())
        assert cost["projected_registered"] == 42422


class TestDiagnose:
    def test_outputs(self, sim_dir, fit_dir, tmp_path):
        assert run("diagnose", "--data", sim_dir / "series.csv", "--fit", fit_dir / "fit.json",
                   "--out-dir", tmp_path, "--quiet") == 0
        acf = read_csv(tmp_path / "acf.csv")
        assert len(acf) == 12
        pm = json.loads((tmp_path / "portmanteau.json").read_text())
        assert pm["dof"] == 12 and 0 <= pm["p_value"] <= 1
        assert pm["lags_outside_band"] == sum(int(r["outside_band"]) for r in acf)
        assert len(read_csv(tmp_path / "residuals.csv")) == 48

    def test_constant_residuals(self, tmp_path, capsys):
        data = tmp_path / "flat.csv"
        with data.open("w") as fh:
            fh.write("month,sex,age_band,rate\n")
            for sex in "FM":
                for band in ("15-29", "30-94"):
                    for m in range(1, 25):
                        fh.write(f"{m},{sex},{band},5.0\n")
        fitfile = tmp_path / "fit.json"
        fitfile.write_text(json.dumps({"params": {"alpha0": -5.0, "alpha1": 0.0, "beta0": 5.0,
                                                  "q": 1.0, "sigma": 1.0}}))
        assert run("diagnose", "--data", data, "--fit", fitfile, "--out-dir", tmp_path) == 1
        assert "constant" in capsys.readouterr().err

    def test_max_lag_too_large(self, sim_dir, fit_dir, tmp_path):
        assert run("diagnose", "--data", sim_dir / "series.csv", "--fit", fit_dir / "fit.json",
                   "--max-lag", 100, "--out-dir", tmp_path) == 2


class TestReport:
    def test_table3(self, tmp_path):
        counts, cov = write_counts(tmp_path)
        assert run("report", "--counts", counts, "--coverage", cov, "--unit-cost", 1000,
                   "--out-dir", tmp_path, "--quiet") == 0
        rows = {r["group"]: r for r in read_csv(tmp_path / "projection.csv")}
        assert rows["F 15-29"]["projected_registered"] == "10280"
        assert rows["Global"]["projected_registered"] == "42422"
        cost = json.loads((tmp_path / "cost.json").read_text())
        assert cost["cost_gap"] == 1000 * cost["gap_cases"]

    def test_scalar_coverage(self, tmp_path):
        counts, _ = write_counts(tmp_path)
        assert run("report", "--counts", counts, "--coverage", "1.0", "--out-dir", tmp_path, "--quiet") == 0
        rows = {r["group"]: r for r in read_csv(tmp_path / "projection.csv")}
        assert rows["Global"]["projected_registered"] == "34417"

    def test_invalid_coverage(self, tmp_path):
        counts, _ = write_counts(tmp_path)
        assert run("report", "--counts", counts, "--coverage", "0", "--out-dir", tmp_path) == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "underreport", "report", "--counts", tmp_path / "none.csv",
                           "--out-dir", tmp_path], capture_output=True, text=True)
    assert proc.returncode == 2 and "counts file not found" in proc.stderr
