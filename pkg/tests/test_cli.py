import csv
import json
import os

import numpy as np
import pytest

from bkmr_vi import FitError, PriorSpec, build_kernel, elicit_priors, fit, gls_correct, gls_intervals
from bkmr_vi import cli
from bkmr_vi.io import load_dataset, read_numeric_csv, write_dataset_csv


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_table(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) for v in r) + "\n")


@pytest.fixture
def noisy_csv(tmp_path):
    rng = np.random.default_rng(0)
    n = 40
    x = rng.standard_normal((n, 2))
    z = rng.lognormal(0, 0.5, (n, 2))
    y = 1 + x @ [2.0, -1.0] + np.sin(z[:, 0]) + 0.3 * rng.standard_normal(n)
    path = tmp_path / "data.csv"
    write_table(path, ["y", "a", "b", "z1", "z2"], np.column_stack([y, x, z]))
    return path


FIT_ARGS = ["--response", "y", "--covariates", "a,b", "--exposures", "z1,z2"]


def run_fit(csv_path, out, *extra):
    return cli.main(["fit", "--input", str(csv_path), "--out", str(out), *FIT_ARGS, *extra])


def test_flat_fit_on_noiseless_data_equals_ols(tmp_path):
    rng = np.random.default_rng(1)
    n = 25
    x = rng.standard_normal((n, 2))
    y = 0.5 + x @ [1.5, -2.0]
    path = tmp_path / "lin.csv"
    write_table(path, ["y", "a", "b", "z1", "z2"],
                np.column_stack([y, x, rng.standard_normal((n, 2))]))
    assert run_fit(path, tmp_path / "out", "--prior", "flat") == 0
    rows = read_rows(tmp_path / "out" / "posterior_beta.csv")
    assert [r["name"] for r in rows] == ["(Intercept)", "a", "b"]
    X = np.column_stack([np.ones(n), x])
    ols = np.linalg.lstsq(X, y, rcond=None)[0]
    np.testing.assert_allclose([float(r["mean"]) for r in rows], ols, atol=1e-6)


def test_fit_outputs_and_byte_identical_rerun(noisy_csv, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_fit(noisy_csv, a, "--seed", "7") == 0
    assert run_fit(noisy_csv, b, "--seed", "7") == 0
    for name in ["posterior_beta.csv", "posterior_h.csv", "trace.csv", "summary.json",
                 *[f"state/{s}.npy" for s in cli.STATE_ARRAYS]]:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    timings = json.loads((a / "timings.json").read_text())
    assert set(timings) == {"elicitation", "fit"}
    summary = json.loads((a / "summary.json").read_text())
    assert summary["prior"]["flavor"] == "informative"
    assert len(read_rows(a / "posterior_h.csv")) == 40


def test_cli_matches_library(noisy_csv, tmp_path):
    out = tmp_path / "fit"
    assert run_fit(noisy_csv, out, "--tol", "1e-8") == 0
    assert cli.main(["gls", "--input", str(out)]) == 0
    data, _ = load_dataset(noisy_csv, "y", ["a", "b"], ["z1", "z2"])
    res = fit(data, elicit_priors(data), build_kernel(data.Z),
              cli.FitConfig(tolerance=1e-8))
    rows = read_rows(out / "posterior_beta.csv")
    assert [float(r["mean"]) for r in rows] == res.posterior.mu_beta.tolist()
    g = gls_correct(res, data)
    iv = gls_intervals(g)
    rows = read_rows(out / "gls_beta.csv")
    assert [float(r["beta_gls"]) for r in rows] == g.beta_gls.tolist()
    assert [float(r["half_width"]) for r in rows] == iv.half_width.tolist()
    assert all(float(r["vi_half_width"]) > 0 for r in rows)
    assert "gls" in json.loads((out / "gls_timings.json").read_text())


def test_gls_with_zero_h_covariance_is_ols_on_adjusted_response(noisy_csv, tmp_path):
    out = tmp_path / "fit"
    assert run_fit(noisy_csv, out) == 0
    np.save(out / "state" / "Sigma_h.npy", np.zeros((40, 40)))
    assert cli.main(["gls", "--input", str(out), "--out", str(tmp_path / "g")]) == 0
    X = np.load(out / "state" / "X.npy")
    z = np.load(out / "state" / "y.npy") - np.load(out / "state" / "mu_h.npy")
    rows = read_rows(tmp_path / "g" / "gls_beta.csv")
    np.testing.assert_allclose([float(r["beta_gls"]) for r in rows],
                               np.linalg.lstsq(X, z, rcond=None)[0], rtol=1e-10)


def test_gls_missing_artifacts_is_input_error(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert cli.main(["gls", "--input", str(tmp_path / "empty")]) == 2
    assert "error" in capsys.readouterr().err


def test_missing_values_reported_with_line_numbers(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("y,a,z1\n1,2,3\n4,,6\n7,8,9\n1,2,NA\n")
    assert cli.main(["fit", "--input", str(path), "--out", str(tmp_path / "o"),
                     "--response", "y", "--covariates", "a", "--exposures", "z1"]) == 2
    err = capsys.readouterr().err
    assert "lines 3, 5" in err


def test_parse_error_has_row_and_column(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("y,a,z1\n1,2,3\n4,oops,6\n")
    assert cli.main(["fit", "--input", str(path), "--out", str(tmp_path / "o"),
                     "--response", "y", "--covariates", "a", "--exposures", "z1"]) == 2
    err = capsys.readouterr().err
    assert ":3:" in err and "'a'" in err


def test_undeclared_column_and_missing_file(noisy_csv, tmp_path):
    assert cli.main(["fit", "--input", str(noisy_csv), "--out", str(tmp_path / "o"),
                     "--response", "y", "--covariates", "nope", "--exposures", "z1"]) == 2
    assert cli.main(["fit", "--input", str(tmp_path / "none.csv"), "--out",
                     str(tmp_path / "o"), *FIT_ARGS]) == 2


def test_fit_error_exit_code(noisy_csv, tmp_path, monkeypatch):
    def explode(*args, **kwargs):
        raise FitError("diverged", None)
    monkeypatch.setattr(cli, "fit", explode)
    assert run_fit(noisy_csv, tmp_path / "o") == 3


def test_config_file_supplies_roles(noisy_csv, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"input": str(noisy_csv), "out": str(tmp_path / "o"),
                               "response": "y", "covariates": ["a", "b"],
                               "exposures": ["z1", "z2"], "prior": "flat",
                               "fit": {"tolerance": 1e-4}}))
    assert cli.main(["fit", "--config", str(cfg)]) == 0
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["prior"]["flavor"] == "flat"
    assert summary["fit_config"]["tolerance"] == 1e-4


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    from bkmr_vi import Dataset
    X = np.column_stack([np.ones(10), rng.standard_normal((10, 2))])
    data = Dataset(rng.standard_normal(10) * 1e5, X, rng.lognormal(0, 3, (10, 3)))
    path = tmp_path / "d.csv"
    write_dataset_csv(path, data, ["(Intercept)", "a", "b"], ["z1", "z2", "z3"])
    back, names = load_dataset(path, "y", ["a", "b"], ["z1", "z2", "z3"])
    assert names == ["(Intercept)", "a", "b"]
    assert np.array_equal(back.y, data.y)
    assert np.array_equal(back.X, data.X)
    assert np.array_equal(back.Z, data.Z)


def simulate(out, *extra):
    return cli.main(["simulate", "--out", str(out), "--replications", "2",
                     "--sample-sizes", "20,30", "--seed", "11", *extra])


def test_simulate_is_byte_identical(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"population": {"N": 300}}))
    assert simulate(tmp_path / "a", "--config", str(cfg)) == 0
    assert simulate(tmp_path / "b", "--config", str(cfg), "--threads", "2") == 0
    names = sorted(f for f in os.listdir(tmp_path / "a") if f.endswith((".csv", ".json"))
                   and f != "timing.csv")
    assert "table1_covariate_coverage.csv" in names and "manifest.json" in names
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 11 and len(manifest["config_sha256"]) == 64


def test_simulate_zero_replications(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"population": {"N": 200}, "plan": {"replications": 0}}))
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o"),
                     "--sample-sizes", "20"]) == 0
    rows = read_rows(tmp_path / "o" / "table1_covariate_coverage.csv")
    assert len(rows) == 4
    assert all(r["beta0"] == "" and r["replications_ok"] == "0" for r in rows)


def test_export_sample_then_fit(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"population": {"N": 300}}))
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s"),
                     "--replications", "0", "--sample-sizes", "20",
                     "--export-sample", "50"]) == 0
    sample = tmp_path / "s" / "sample_n50.csv"
    header, arr = read_numeric_csv(sample)
    assert header == ["y", "x1", "x2", "x3", "x4", "x5", "Se", "Cd", "Pb", "Hg"]
    assert arr.shape == (50, 10)
    assert cli.main(["fit", "--input", str(sample), "--out", str(tmp_path / "f"),
                     "--response", "y", "--covariates", "x1,x2,x3,x4,x5",
                     "--exposures", "Se,Cd,Pb,Hg"]) == 0


def test_report_command(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"population": {"N": 300}}))
    assert simulate(tmp_path / "a", "--config", str(cfg)) == 0
    capsys.readouterr()
    assert cli.main(["report", "--input", str(tmp_path / "a")]) == 0
    text = capsys.readouterr().out
    assert "Covariate coverage" in text and "GLS1" in text
    assert cli.main(["report", "--input", str(tmp_path / "nothing")]) == 2
