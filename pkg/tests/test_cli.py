import json

import pytest

from eqevid.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    common = ["--seed", "2", "--out", str(out)]
    assert main(["gen-data", "--n-configs", "40", *common]) == EXIT_OK
    assert main(["train", "--epochs", "2", "--lr", "5e-3", *common]) == EXIT_OK
    return out, common


def test_gen_data_outputs(run_dir):
    out, _ = run_dir
    names = ["train", "val", "test_id", "test_ood"]
    counts = [len((out / f"{n}.jsonl").read_text().splitlines()) for n in names]
    assert sum(counts) == 40 and all(c > 0 for c in counts)
    assert json.loads((out / "data_config.json").read_text())["seed"] == 2


def test_train_outputs(run_dir):
    out, _ = run_dir
    report = json.loads((out / "run_report.json").read_text())
    assert len(report["epochs"]) == 2 and report["failure"] is None
    assert report["config"]["train"]["lr"] == 5e-3
    assert (out / "condition_ratio.csv").read_text().startswith("step,mean,min,max")
    assert json.loads((out / "checkpoint.json").read_text())


def test_eval_and_report(run_dir):
    out, common = run_dir
    assert main(["eval", *common]) == EXIT_OK
    doc = json.loads((out / "report.json").read_text())
    assert set(doc["splits"]) == {"test_id", "test_ood"}
    for rep in doc["splits"].values():
        assert abs(rep["extra"]["delta_rho"]) <= 1e-6
    assert (out / "calibration_curve.csv").exists() and (out / "uncertainty_error.csv").exists()
    assert main(["verify-equivariance", "--n-rotations", "4", *common]) == EXIT_OK
    eq = json.loads((out / "equivariance.json").read_text())
    assert eq["n_rotations"] == 4 and eq["max_abs_force_dev"] <= 1e-9
    assert main(["report", *common]) == EXIT_OK
    figs = json.loads((out / "figures.json").read_text())["figures"]
    assert len(figs) == 5
    for f in figs:
        assert (out / f).read_bytes()[:4] == b"\x89PNG"


def test_ensemble_round_trip(run_dir, tmp_path):
    out, _ = run_dir
    common = ["--seed", "2", "--out", str(tmp_path)]
    assert main(["ensemble-train", "--data", str(out), "--members", "2", "--epochs", "1", "--lr", "5e-3",
                 *common]) == EXIT_OK
    assert main(["eval", "--data", str(out), "--manifest", str(tmp_path / "ensemble.json"), *common]) == EXIT_USAGE
    assert main(["ensemble-calibrate", "--data", str(out), *common]) == EXIT_OK
    sigma_sq = json.loads((tmp_path / "ensemble.json").read_text())["calibration"]["sigma_sq"]
    assert main(["eval", "--data", str(out), "--manifest", str(tmp_path / "ensemble.json"), *common]) == EXIT_OK
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["ensemble"] == {"members": 2, "sigma_sq": sigma_sq}
    assert doc["splits"]["test_id"]["extra"]["sigma_sq"] == sigma_sq


def test_gen_data_byte_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["gen-data", "--n-configs", "12", "--seed", "5", "--out", str(tmp_path / d)]) == EXIT_OK
    assert (tmp_path / "a" / "dataset.jsonl").read_bytes() == (tmp_path / "b" / "dataset.jsonl").read_bytes()


def test_usage_errors(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["train", "--epochs", "many"]) == EXIT_USAGE
    assert main(["train", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "gen-data" in capsys.readouterr().err
    assert main(["gen-data", "--seed", "-1", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["report", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["eval", "--out", str(tmp_path), "--checkpoint", str(tmp_path / "none.json")]) == EXIT_USAGE


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"nope": 1}}))
    assert main(["--config", str(cfg), "gen-data", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "nope" in capsys.readouterr().err


def test_numerical_failure_exit_code(run_dir, tmp_path, capsys):
    out, _ = run_dir
    code = main(["train", "--data", str(out), "--out", str(tmp_path), "--no-damper",
                 "--tensor-init-scale", "1000", "--max-steps", "20"])
    assert code == EXIT_NUMERIC
    err = capsys.readouterr().err
    assert "NotPositiveDefinite" in err or "ExpOverflow" in err
    report = json.loads((tmp_path / "run_report.json").read_text())
    assert report["failure"]["kind"] in err
