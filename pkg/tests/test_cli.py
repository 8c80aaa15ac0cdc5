import csv
import json
from pathlib import Path

import numpy as np
import pytest

from iforge.cli import main

FAST_SIM = ["--n-train", "64", "--n-test", "20"]


def run_dir(out: Path) -> Path:
    dirs = [d for d in out.iterdir() if d.is_dir()]
    assert len(dirs) == 1
    return dirs[0]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def toy_csv(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 2))
    y = X[:, 0] - X[:, 1] + 0.1 * rng.normal(size=40)
    path = tmp_path / "toy.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "b", "y"])
        w.writerows(np.c_[X, y].tolist())
    test = tmp_path / "points.csv"
    with open(test, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["a", "b"])
        w.writerows(rng.normal(size=(10, 2)).tolist())
    return path, test


def test_simulate_single_row(tmp_path):
    out = tmp_path / "runs"
    code = main(["simulate", "--dgp", "linear", "--method", "extra_nn", "--T", "30", "--p", "0.995",
                 "--seed", "1", "--out", str(out), *FAST_SIM])
    assert code == 0
    d = run_dir(out)
    rows = read_csv(d / "results.csv")
    assert len(rows) == 1
    assert list(rows[0]) == ["method", "T", "p", "MAPE", "MSPE", "Cov99", "Cov95", "Cov90", "replications",
                             "manifest_hash"]
    assert rows[0]["manifest_hash"] == d.name
    manifest = json.loads((d / "manifest.json").read_text())
    assert manifest["manifest_hash"] == d.name and manifest["seed"] == 1


def test_simulate_grid_cardinality(tmp_path):
    out = tmp_path / "runs"
    code = main(["simulate", "--dgp", "linear", "--method", "extra_nn", "--T", "30,50,70", "--p", "0.995,0.8",
                 "--out", str(out), *FAST_SIM])
    assert code == 0
    rows = read_csv(run_dir(out) / "results.csv")
    assert len(rows) == 6
    assert {(r["T"], r["p"]) for r in rows} == {(T, p) for T in ("30", "50", "70") for p in ("0.995", "0.8")}


def test_csv_numbers_round_trip(tmp_path):
    out = tmp_path / "runs"
    main(["simulate", "--dgp", "nonlinear", "--method", "mc_dropout", "--T", "5", "--out", str(out), *FAST_SIM])
    row = read_csv(run_dir(out) / "results.csv")[0]
    mspe = row["MSPE"]
    assert repr(float(mspe)) == mspe


@pytest.mark.parametrize("argv", [
    ["simulate", "--dgp", "linear", "--T", "1"],
    ["simulate", "--dgp", "linear", "--p", "1.5"],
    ["simulate", "--dgp", "linear", "--replications", "0"],
    ["benchmark", "--data", "missing.csv", "--target", "y"],
    ["predict"],
])
def test_usage_errors_exit_2(argv, tmp_path, capsys):
    assert main([*argv, "--out", str(tmp_path)]) == 2
    assert "usage" in capsys.readouterr().err


def test_argparse_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--dgp", "cubic"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--dgp", "linear", "--method", "svm"])
    assert exc.value.code == 2


def test_huge_dataset_needs_flag(tmp_path):
    msd = tmp_path / "msd.csv"
    msd.write_text("a,y\n1,2\n")
    assert main(["benchmark", "--data", str(msd), "--target", "y", "--out", str(tmp_path / "o")]) == 2


def test_benchmark_single_split_has_null_se(tmp_path, toy_csv):
    data, _ = toy_csv
    out = tmp_path / "runs"
    code = main(["benchmark", "--data", str(data), "--target", "y", "--T", "5", "--splits", "1",
                 "--width", "8", "--epochs", "3", "--out", str(out)])
    assert code == 0
    result = json.loads((run_dir(out) / "result.json").read_text())
    assert result["se"] is None
    assert len(result["per_split"]) == 1
    assert set(result) >= {"dataset", "method", "T", "mean_rmspe", "se", "per_split", "runtime_s"}


def test_benchmark_reports_se(tmp_path, toy_csv):
    data, _ = toy_csv
    out = tmp_path / "runs"
    main(["benchmark", "--data", str(data), "--target", "y", "--T", "5", "--splits", "3",
          "--width", "8", "--epochs", "3", "--out", str(out)])
    result = json.loads((run_dir(out) / "result.json").read_text())
    assert result["se"] == pytest.approx(np.std(result["per_split"], ddof=1) / np.sqrt(3))


def predict_rows(tmp_path, toy_csv, *extra):
    data, test = toy_csv
    out = tmp_path / "runs"
    code = main(["predict", "--data", str(data), "--test", str(test), "--hidden", "6", "--epochs", "5",
                 "--T", "5", "--out", str(out), *extra])
    assert code == 0
    d = run_dir(out)
    return d, read_csv(d / "intervals.csv")


def test_predict_ten_rows_bracket_center(tmp_path, toy_csv):
    _, rows = predict_rows(tmp_path, toy_csv, "--method", "extra_nn", "--p", "0.9")
    assert len(rows) == 10
    for r in rows:
        c = float(r["center"])
        for a in ("0.01", "0.05", "0.1"):
            assert float(r[f"lower_{a}"]) <= c <= float(r[f"upper_{a}"])


def test_predict_bands_nest(tmp_path, toy_csv):
    _, rows = predict_rows(tmp_path, toy_csv, "--method", "boot_percentile", "--alpha", "0.01,0.05,0.10")
    for r in rows:
        assert float(r["lower_0.01"]) <= float(r["lower_0.05"]) <= float(r["lower_0.1"])
        assert float(r["upper_0.1"]) <= float(r["upper_0.05"]) <= float(r["upper_0.01"])


def test_predict_mc_dropout_p_one_has_zero_epistemic(tmp_path, toy_csv):
    _, rows = predict_rows(tmp_path, toy_csv, "--method", "mc_dropout", "--p", "1.0")
    assert all(float(r["epistemic_var"]) == 0.0 for r in rows)


def test_predict_plot_and_archive(tmp_path, toy_csv):
    d, rows = predict_rows(tmp_path, toy_csv, "--method", "delta", "--plot", "--save-archive")
    assert (d / "intervals.svg").read_text().lstrip().startswith("<?xml")
    out2 = tmp_path / "again"
    code = main(["predict", "--archive", str(d / "model.npz"), "--test", str(toy_csv[1]), "--out", str(out2)])
    assert code == 0
    again = read_csv(run_dir(out2) / "intervals.csv")
    assert [r["center"] for r in again] == [r["center"] for r in rows]
    assert [r["upper_0.05"] for r in again] == [r["upper_0.05"] for r in rows]


def test_malformed_archive_exits_1(tmp_path, toy_csv, capsys):
    bad = tmp_path / "model.npz"
    bad.write_bytes(b"not an archive")
    code = main(["predict", "--archive", str(bad), "--test", str(toy_csv[1]), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "archive" in capsys.readouterr().err


def artifacts(d: Path) -> dict:
    out = {}
    for f in sorted(d.iterdir()):
        if f.name == "manifest.json":
            continue
        if f.name == "result.json":
            data = json.loads(f.read_text())
            data.pop("runtime_s")
            out[f.name] = json.dumps(data, sort_keys=True).encode()
        else:
            out[f.name] = f.read_bytes()
    return out


@pytest.mark.parametrize("argv", [
    ["simulate", "--dgp", "nonlinear", "--method", "extra_nn,boot_mean", "--T", "3", "--replications", "2",
     *FAST_SIM],
    ["benchmark", "--data", "{data}", "--target", "y", "--T", "3", "--splits", "2", "--width", "6",
     "--epochs", "3"],
    ["predict", "--data", "{data}", "--method", "mc_dropout", "--p", "0.9", "--T", "4", "--hidden", "5",
     "--epochs", "3", "--plot"],
])
def test_rerun_reproduces_artifacts(tmp_path, toy_csv, argv):
    argv = [a.replace("{data}", str(toy_csv[0])) for a in argv]
    first = tmp_path / "first"
    assert main([*argv, "--out", str(first)]) == 0
    d1 = run_dir(first)
    second = tmp_path / "second"
    assert main(["rerun", str(d1 / "manifest.json"), "--out", str(second)]) == 0
    d2 = run_dir(second)
    assert d1.name == d2.name
    assert artifacts(d1) == artifacts(d2)


def test_rerun_bad_manifest(tmp_path):
    bad = tmp_path / "manifest.json"
    bad.write_text("{}")
    assert main(["rerun", str(bad)]) == 2


def test_protein_file_uses_reduced_split_tier(tmp_path):
    rng = np.random.default_rng(1)
    path = tmp_path / "protein.csv"
    rows = np.c_[rng.normal(size=(40, 2)), rng.normal(size=40)]
    path.write_text("a,b,y\n" + "\n".join(",".join(map(repr, r.tolist())) for r in rows) + "\n")
    out = tmp_path / "runs"
    assert main(["benchmark", "--data", str(path), "--target", "y", "--T", "2", "--epochs", "1",
                 "--out", str(out)]) == 0
    d = run_dir(out)
    assert len(json.loads((d / "result.json").read_text())["per_split"]) == 5
    assert json.loads((d / "manifest.json").read_text())["config"]["hidden_width"] == 100
