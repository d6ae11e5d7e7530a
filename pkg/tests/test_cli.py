import json

import pytest

from eegsad.cli import main

SMALL = ["--subjects", "8", "--patients", "4", "--duration", "12", "--seed", "7"]


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort")
    assert main(["synth", *SMALL, "--out", str(out)]) == 0
    return out / "manifest.json"


def test_synth_deterministic(tmp_path, cohort):
    assert main(["synth", *SMALL, "--out", str(tmp_path)]) == 0
    for name in ("manifest.json", "recordings/sub-000.csv", "recordings/sub-007.csv"):
        assert (tmp_path / name).read_bytes() == (cohort.parent / name).read_bytes()
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert cfg["cohort"]["seed"] == 7 and cfg["cohort"]["n_patients"] == 4


@pytest.mark.parametrize("argv,code", [
    (["synth", "--patients", "65", "--out", "x"], 1),
    (["synth", "--subjects", "4", "--patients", "2", "--effect-electrodes", "Zz", "--out", "x"], 1),
    (["cv", "--classifier", "bogus", "--manifest", "m.json", "--out", "x"], 1),
    (["cv", "--out", "x"], 1),
    (["frobnicate"], 1),
])
def test_usage_errors(tmp_path, monkeypatch, argv, code, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == code
    assert capsys.readouterr().err


def test_missing_manifest(tmp_path):
    assert main(["cv", "--manifest", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == 2


def test_invalid_pipeline_value(tmp_path, cohort):
    assert main(["cv", "--manifest", str(cohort), "--folds", "1", "--out", str(tmp_path)]) == 1


def test_help(capsys):
    assert main(["--help"]) == 0


def test_cv_knn(tmp_path, cohort, capsys):
    out = tmp_path / "cv"
    argv = ["cv", "--manifest", str(cohort), "--classifier", "knn", "--folds", "2", "--interp", "idw-nn",
            "--out", str(out)]
    assert main(argv) == 0
    assert "pooled accuracy" in capsys.readouterr().out
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["classifier"] == "knn" and report["config"]["interp_method"] == "idw_nn"
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["pipeline"]["folds"] == 2 and resolved["fingerprint"] == report["fingerprint"]
    assert list((out / "cache").glob("features-*.npz"))
    # second run reuses the cache and reproduces the report byte for byte
    first = (out / "report.json").read_bytes()
    assert main(argv) == 0
    assert (out / "report.json").read_bytes() == first


def test_config_file_round_trip(tmp_path, cohort):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["cv", "--manifest", str(cohort), "--classifier", "svm", "--svm-c", "0.5", "2",
                 "--folds", "2", "--model", "concat", "--out", str(a)]) == 0
    assert main(["cv", "--manifest", str(cohort), "--config", str(a / "config.json"), "--out", str(b)]) == 0
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()


def test_featurize_dump(tmp_path, cohort):
    assert main(["featurize", "--manifest", str(cohort), "--dump", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "features.csv").read_text().splitlines()
    assert len(lines) == 1 + 8 * 2


def test_interp_compare(tmp_path, cohort):
    argv = ["interp-compare", "--manifest", str(cohort), "--classifier", "knn", "--folds", "2",
            "--methods", "idw-nn", "idw-zero", "cubic-spline", "--d-max-values", "2", "4", "--out", str(tmp_path)]
    assert main(argv) == 0
    rows = json.loads((tmp_path / "interp_compare.json").read_text())["rows"]
    assert [(r["interp_method"], r["d_max"]) for r in rows] == [
        ("idw_nn", 2.0), ("idw_nn", 4.0), ("idw_zero", 2.0), ("idw_zero", 4.0), ("cubic_spline", 2.0)]
    assert (tmp_path / "interp_compare.csv").read_text().count("\n") == 6


def test_stride_compare_and_report(tmp_path, cohort, capsys):
    argv = ["stride-compare", "--manifest", str(cohort), "--classifier", "knn", "--folds", "2",
            "--out", str(tmp_path)]
    assert main(argv) == 0
    rows = json.loads((tmp_path / "stride_compare.json").read_text())["rows"]
    assert [r["window_stride"] for r in rows] == [1280, 2560, 5120, 7680]
    assert rows[0]["n_windows"] == 8 * ((12 * 1024 - 5120) // 1280 + 1)
    capsys.readouterr()
    assert main(["report", str(tmp_path / "stride_compare.json"), "--out", str(tmp_path / "t.csv")]) == 0
    assert "7680" in capsys.readouterr().out
    assert (tmp_path / "t.csv").read_text().startswith("model,classifier")


def test_report_bad_file(tmp_path):
    (tmp_path / "r.json").write_text("{}")
    assert main(["report", str(tmp_path / "r.json")]) == 2
