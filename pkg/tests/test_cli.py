import csv
import json

import pytest

from gustpp import cli, pipeline

SCENARIO = {"preset": "nonlinear", "n_stations": 10, "n_years": 3, "lead_times": [6, 15]}
HYPER = {
    "idr": {"n_subsamples": 3},
    "qrf": {"n_trees": 20},
    "drn": {"n_members": 1, "epochs": 5},
    "bqn": {"n_members": 1, "epochs": 5},
    "hen": {"n_members": 1, "epochs": 5},
}
REPORTS = ("scores.csv", "scores_by_lead.csv", "calibration.csv", "dm_tests.csv", "importance.csv", "best_method.csv")


def write_config(path, out, **extra):
    cfg = {"scenario": SCENARIO, "hyper": HYPER, "out": str(out), "seed": 3, "importance_repeats": 2, **extra}
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    d = tmp_path_factory.mktemp("smoke")
    cfg = write_config(d / "run.json", d / "out")
    assert cli.main(["all", "--config", cfg]) == 0
    return d / "out"


def read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_smoke_run_emits_every_artifact(full_run):
    for m in pipeline.METHODS:
        assert (full_run / "forecasts" / f"{m}.csv").exists()
    for r in REPORTS:
        assert (full_run / "reports" / r).exists(), r
    header = next(csv.reader(open(full_run / "forecasts" / "emos.csv")))
    assert header[:4] == ["station_id", "date", "lead_time", "obs"]
    assert header[4] == "q001" and header[-1] == "q125"


def test_smoke_reports_are_consistent(full_run):
    scores = read(full_run / "reports" / "scores_by_lead.csv")
    assert {r["method"] for r in scores} == set(pipeline.METHODS)
    dm = read(full_run / "reports" / "dm_tests.csv")
    assert list(dm[0]) == ["station", "lead", "method_a", "method_b", "t", "p", "rejected"]
    pairs = {(r["method_a"], r["method_b"]) for r in dm}
    assert len(pairs) == len(pipeline.METHODS) * (len(pipeline.METHODS) - 1) // 2
    assert len(dm) == len(pairs) * 10 * 2
    imp = read(full_run / "reports" / "importance.csv")
    assert {r["method"] for r in imp} == set(pipeline.METHODS) - {"epc", "raw"}
    assert {r["kind"] for r in imp} >= {"permutation", "coefficient_location", "oob"}


def test_methods_subset_and_rerun_are_byte_identical(tmp_path):
    runs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        cfg = write_config(tmp_path / f"c{k}.json", out)
        assert cli.main(["all", "--config", cfg, "--methods", "emos"]) == 0
        runs.append(out)
    assert sorted(p.name for p in (runs[0] / "forecasts").iterdir()) == ["emos.csv"]
    assert sorted(p.name for p in (runs[0] / "models").iterdir()) == ["emos.json"]
    assert not (runs[0] / "reports" / "dm_tests.csv").exists()
    for rel in ("forecasts/emos.csv", "reports/scores.csv", "reports/calibration.csv", "reports/importance.csv"):
        assert (runs[0] / rel).read_bytes() == (runs[1] / rel).read_bytes(), rel


def test_stagewise_commands_reproduce_nn_and_forest(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        cfg = write_config(tmp_path / f"c{k}.json", out, methods=["raw", "qrf", "drn"])
        for cmd in ("generate", "train", "predict", "evaluate", "compare"):
            assert cli.main([cmd, "--config", cfg]) == 0, cmd
        outs.append(out)
    for rel in ("forecasts/qrf.csv", "forecasts/drn.csv", "reports/dm_tests.csv"):
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel


def test_flags_override_config(tmp_path):
    cfg = write_config(tmp_path / "c.json", tmp_path / "a")
    args = cli.build_parser().parse_args(["train", "--config", cfg, "--seed", "9", "--out", str(tmp_path / "b"), "--methods", "qrf,emos"])
    c = cli.make_config(args)
    assert c.seed == 9 and c.out == str(tmp_path / "b")
    assert c.methods == ("emos", "qrf")


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["train", "--methods", "emos,gpr", "--out", str(tmp_path)]) == 2
    assert cli.main(["train", "--config", str(tmp_path / "missing.json")]) == 3
    # training before any data was generated
    assert cli.main(["train", "--out", str(tmp_path / "empty"), "--methods", "emos"]) == 3
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["train", "--config", str(bad)]) == 2
    bad.write_text(json.dumps({"jobs": 0}))
    assert cli.main(["train", "--config", str(bad)]) == 2
    with pytest.raises(SystemExit) as e:
        cli.main(["frobnicate"])
    assert e.value.code == 2
    assert "error" in capsys.readouterr().err
