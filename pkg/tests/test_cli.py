import csv
import json

import pytest

from projectnet import cli
from projectnet.end2end import InfeasibleSecondStageError
from projectnet.experiments import METRIC_COLUMNS
from projectnet.metatrain import TrainingDivergedError

TOY = {"experiment": "toy-viz", "data": {"N": 30, "M": 8, "paths": 1}, "meta": {"epochs": 2}}


def write(tmp_path, cfg, name="c.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_validate_valid_config(tmp_path, capsys):
    assert cli.main(["validate", write(tmp_path, TOY)]) == cli.EXIT_OK
    assert capsys.readouterr().out.strip() == "ok"
    assert cli.validate_config(TOY) == []


def test_validate_names_unknown_key(tmp_path, capsys):
    cfg = dict(TOY, solver={"eta": 0.1, "etta": 0.2})
    assert cli.main(["validate", write(tmp_path, cfg)]) == cli.EXIT_CONFIG
    assert "solver.etta" in capsys.readouterr().out


def test_validate_names_missing_csv(tmp_path, capsys):
    missing = str(tmp_path / "nowhere.csv")
    cfg = {"experiment": "electricity-e2e", "data": {"csv": missing}}
    assert cli.main(["validate", write(tmp_path, cfg)]) == cli.EXIT_CONFIG
    assert missing in capsys.readouterr().out


def test_validate_bad_values(tmp_path):
    assert cli.validate_config({"experiment": "nope"})
    assert cli.validate_config(dict(TOY, solver={"eta": -1.0}))
    assert cli.validate_config(dict(TOY, seed="x"))
    assert cli.main(["validate", str(tmp_path / "absent.json")]) == cli.EXIT_CONFIG


def test_run_writes_metrics(tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", write(tmp_path, TOY), "--out", str(out)]) == cli.EXIT_OK
    rows = read_rows(out / "metrics.csv")
    assert rows[0] == METRIC_COLUMNS and len(rows) > 1
    report = json.loads((out / "report.json").read_text())
    assert report["experiment"] == "toy-viz" and report["seed"] == 0


def test_run_is_deterministic_apart_from_wall_time(tmp_path):
    path = write(tmp_path, TOY)
    runs = []
    for name in ("a", "b"):
        cli.main(["run", path, "--out", str(tmp_path / name), "--seed", "3"])
        rows = read_rows(tmp_path / name / "metrics.csv")
        wt = rows[0].index("wall_time")
        runs.append([r[:wt] + r[wt + 1:] for r in rows])
    assert runs[0] == runs[1]
    assert read_rows(tmp_path / "a" / "circle.csv") == read_rows(tmp_path / "b" / "circle.csv")


def test_run_config_error_exit_code(tmp_path, capsys):
    assert cli.main(["run", write(tmp_path, dict(TOY, bogus={}))]) == cli.EXIT_CONFIG
    assert "bogus" in capsys.readouterr().err


def test_bench_single_size(tmp_path):
    cfg = {"experiment": "electricity-e2e", "data": {"days": 10},
           "bench": {"sizes": [24], "epochs": 1, "samples": 4}}
    out = tmp_path / "bench"
    assert cli.main(["bench", write(tmp_path, cfg), "--out", str(out)]) == cli.EXIT_OK
    rows = read_rows(out / "bench.csv")
    assert rows[0] == ["size", "samples", "projectnet_epoch_time", "oracle_in_loop_epoch_time"]
    assert len(rows) == 2 and rows[1][:2] == ["24", "4"]


def test_bench_without_sweep_is_config_error(tmp_path):
    assert cli.main(["bench", write(tmp_path, TOY), "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG


@pytest.mark.parametrize("exc,code", [(TrainingDivergedError("lr"), cli.EXIT_DIVERGED),
                                      (FloatingPointError("nan"), cli.EXIT_DIVERGED),
                                      (InfeasibleSecondStageError("d < 0", {"d": [-1.0]}), cli.EXIT_INFEASIBLE)])
def test_failure_exit_codes(exc, code, capsys):
    def boom():
        raise exc

    assert cli._guard(boom) == code
    if code == cli.EXIT_INFEASIBLE:
        assert "-1.0" in capsys.readouterr().err
