import csv
import json
import subprocess
import sys
import time

import numpy as np
import pytest

from groupdro.cli import EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, EXIT_VERIFY, main


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--n", "60", "--seed", "1", "--out", str(out)]) == EXIT_OK
    return out


def _beta(path):
    with open(path, newline="") as fh:
        return np.array([float(r["value"]) for r in csv.DictReader(fh)])


def test_simulate_outputs(sim_dir):
    header = (sim_dir / "data.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 49 and header[-1] == "y"
    groups = json.loads((sim_dir / "data.groups.json").read_text())["groups"]
    assert groups[0] == [1, 2, 3] and len(groups) == 16
    assert np.count_nonzero(np.loadtxt(sim_dir / "beta_star.csv", skiprows=1)) == 6


def test_fit_huge_lambda_zero(sim_dir, tmp_path):
    code = main(["fit", "--data", str(sim_dir / "data.csv"), "--lambda", "1e9", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert np.all(_beta(tmp_path / "beta.csv") == 0.0)
    report = json.loads((tmp_path / "fit.json").read_text())
    assert report["converged"] and report["nonzero_groups"] == 0


def test_fit_beta_csv_layout(sim_dir, tmp_path):
    main(["fit", "--data", str(sim_dir / "data.csv"), "--lambda", "0.1", "--out", str(tmp_path)])
    rows = (tmp_path / "beta.csv").read_text().splitlines()
    assert rows[0] == "index,group,value"
    assert rows[1].startswith("1,1,") and rows[4].startswith("4,2,")
    assert len(rows) == 49


def test_rwpi_is_select_then_fit(sim_dir, tmp_path):
    data = str(sim_dir / "data.csv")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["fit", "--data", data, "--rwpi", "--mc", "3000", "--seed", "4", "--out", str(a)]) == 0
    assert main(["select-lambda", "--data", data, "--mc", "3000", "--seed", "4", "--out", str(b)]) == 0
    lam = json.loads((b / "selection.json").read_text())["lam"]
    assert main(["fit", "--data", data, "--lambda", repr(lam), "--out", str(b)]) == 0
    np.testing.assert_array_equal(_beta(a / "beta.csv"), _beta(b / "beta.csv"))
    assert json.loads((a / "fit.json").read_text())["selection"]["lam"] == lam


def test_lambda_and_rwpi_exclusive(sim_dir, tmp_path, capsys):
    data = str(sim_dir / "data.csv")
    assert main(["fit", "--data", data, "--out", str(tmp_path)]) == EXIT_INPUT
    assert main(["fit", "--data", data, "--lambda", "1", "--rwpi", "--out", str(tmp_path)]) == EXIT_INPUT
    assert "exactly one" in capsys.readouterr().err


def test_missing_sidecar(sim_dir, tmp_path, capsys):
    (tmp_path / "x.csv").write_text((sim_dir / "data.csv").read_text())
    assert main(["fit", "--data", str(tmp_path / "x.csv"), "--lambda", "1"]) == EXIT_INPUT
    assert "--groups" in capsys.readouterr().err


def test_malformed_csv(tmp_path, capsys):
    (tmp_path / "d.csv").write_text("a,y\n1,abc\n")
    (tmp_path / "d.groups.json").write_text('{"groups": [[1]]}')
    assert main(["select-lambda", "--data", str(tmp_path / "d.csv")]) == EXIT_INPUT
    assert "row 2" in capsys.readouterr().err


def test_non_convergence_exit(sim_dir, tmp_path):
    code = main(["fit", "--data", str(sim_dir / "data.csv"), "--lambda", "0.01", "--max-iter", "1",
                 "--out", str(tmp_path)])
    assert code == EXIT_NUMERIC
    assert json.loads((tmp_path / "fit.json").read_text())["converged"] is False


def test_degenerate_selection_exit(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((30, 4))
    with open(tmp_path / "d.csv", "w") as fh:
        fh.write("a,b,c,d,y\n")
        for row, t in zip(X, X @ [1.0, 2.0, 0.0, -1.0]):
            fh.write(",".join(repr(float(v)) for v in (*row, t)) + "\n")
    (tmp_path / "d.groups.json").write_text('{"groups": [[1, 2], [3, 4]]}')
    assert main(["select-lambda", "--data", str(tmp_path / "d.csv"), "--mc", "1000"]) == EXIT_NUMERIC


def test_logistic_labels(tmp_path):
    rng = np.random.default_rng(1)
    X = rng.standard_normal((50, 2))
    lab = np.where(X[:, 0] + rng.standard_normal(50) > 0, "M", "B")
    lines = ["u,v,diag"] + [f"{float(a)!r},{float(b)!r},{c}" for (a, b), c in zip(X, lab)]
    (tmp_path / "d.csv").write_text("\n".join(lines) + "\n")
    (tmp_path / "d.groups.json").write_text('{"groups": [[1], [2]]}')
    code = main(["fit", "--data", str(tmp_path / "d.csv"), "--task", "logistic", "--response", "diag",
                 "--positive-label", "M", "--lambda", "0.01", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert _beta(tmp_path / "beta.csv")[0] > 0


def test_cv_outputs(sim_dir, tmp_path):
    code = main(["cv", "--data", str(sim_dir / "data.csv"), "--grid-length", "6", "--folds", "3",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    rows = list(csv.reader(open(tmp_path / "cv_losses.csv")))
    assert rows[0][0] == "fold" and len(rows[0]) == 7 and len(rows) == 4
    info = json.loads((tmp_path / "cv.json").read_text())
    assert info["k_effective"] == 3
    assert info["best_lambda"] in [float(v) for v in rows[0][1:]]


def test_verify_quick_passes_fast(capsys):
    t0 = time.perf_counter()
    assert main(["verify-duality", "--quick"]) == EXIT_OK
    assert time.perf_counter() - t0 < 10.0
    out = capsys.readouterr().out
    assert "[FAIL]" not in out and "[PASS] linear adversary attains closed form" in out


def test_verify_negative_control(capsys):
    assert main(["verify-duality", "--quick", "--delta-mismatch", "2"]) == EXIT_VERIFY
    assert "[FAIL]" in capsys.readouterr().out


def test_experiment_config_and_flags(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"sizes": [30], "replications": 3, "n_mc": 1000,
                               "grid_length": 6, "n_test": 100}))
    out = tmp_path / "out"
    assert main(["experiment", "--config", str(cfg), "--replications", "1", "--out", str(out)]) == 0
    text = (out / "table_linear.csv").read_text()
    assert text.splitlines()[0] == "method,n,train_mean,train_sd,test_mean,test_sd"
    assert len(text.splitlines()) == 4
    assert (out / "table_linear.txt").is_file()
    # flags win over the file and the run is reproducible
    out2 = tmp_path / "out2"
    main(["experiment", "--config", str(cfg), "--replications", "1", "--out", str(out2)])
    assert (out2 / "table_linear.csv").read_text() == text


def test_experiment_missing_config():
    assert main(["experiment", "--config", "/nonexistent.json"]) == EXIT_INPUT


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "groupdro", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("fit", "select-lambda", "cv", "simulate", "verify-duality", "experiment"):
        assert cmd in res.stdout
