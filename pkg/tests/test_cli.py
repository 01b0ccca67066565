from __future__ import annotations

import csv
import io
import json
import math

import pytest

from decoupling_lab.cli import CSV_COLUMNS, REPORT_VERSION, THREADS_ENV, ExperimentConfig, UsageError, main, run

SMALL_RUNS = {
    "lower-bound": ["--deltas", "1/16", "--ps", "4", "--budget", "10"],
    "appendix-b": ["--grid-n", "512", "--epsilon", "1/16"],
    "wavepackets": ["--scales", "64", "--samples", "2", "--sup-scales", "64"],
    "kakeya": ["--trials", "4", "--tubes", "5"],
    "inflation": ["--deltas", "1/4", "--trials", "1"],
    "multiscale": ["--trials", "1"],
    "pigeonhole": ["--traces", "1", "--s", "2"],
    "bootstrap": ["--n", "2", "--p", "6", "4", "10"],
    "trichotomy": ["--K", "4"],
}


def run_to_file(tmp_path, name: str, argv: list[str]) -> tuple[int, bytes]:
    out = tmp_path / name
    code = main(argv + ["--output", str(out)])
    return code, out.read_bytes()


@pytest.mark.parametrize("command", sorted(SMALL_RUNS))
def test_subcommands_pass_and_are_deterministic(tmp_path, command):
    argv = [command, *SMALL_RUNS[command], "--seed", "3"]
    first_code, first = run_to_file(tmp_path, "a.json", argv)
    second_code, second = run_to_file(tmp_path, "b.json", argv)
    assert first_code == 0 and second_code == 0
    assert first == second
    report = json.loads(first)
    assert report["version"] == REPORT_VERSION
    assert report["config"]["seed"] == 3 and report["config"]["command"] == command
    assert report["summary"]["passed"] and report["summary"]["checks"]
    assert all(row["anchor"] for row in report["summary"]["checks"])


def test_worker_pool_does_not_change_the_report(tmp_path, monkeypatch):
    argv = ["kakeya", *SMALL_RUNS["kakeya"]]
    _, single = run_to_file(tmp_path, "single.json", argv)
    monkeypatch.setenv(THREADS_ENV, "3")
    _, pooled = run_to_file(tmp_path, "pooled.json", argv)
    assert single == pooled


def test_bad_thread_count_is_a_usage_error(monkeypatch, capsys):
    monkeypatch.setenv(THREADS_ENV, "zero")
    assert main(["kakeya", "--trials", "1"]) == 2
    assert THREADS_ENV in capsys.readouterr().err


def test_point_mass_report(tmp_path):
    code, raw = run_to_file(tmp_path, "b.json", ["appendix-b", *SMALL_RUNS["appendix-b"]])
    report = json.loads(raw)
    assert code == 0
    exact = report["results"]["exact"]
    assert exact["value"] == pytest.approx(93 ** (1 / 6) / math.sqrt(20 ** (1 / 3) + 1), rel=1e-15)
    assert f"{exact['value']:.4f}" == "1.1044"
    assert "93^(1/6)" in exact["closed_form"]


def test_bootstrap_reports_zero_exponent(tmp_path):
    trace = tmp_path / "trace.csv"
    code, raw = run_to_file(tmp_path, "boot.json", ["bootstrap", "--n", "2", "--p", "6", "--trace-csv", str(trace)])
    report = json.loads(raw)
    assert code == 0
    assert report["results"]["ch5"][0]["sigma0"] == {"num": 0, "den": 1}
    assert report["results"]["ch3"]["sigma0"] == {"num": 0, "den": 1}
    assert trace.read_text().splitlines()[0] == "iteration,s_chosen,A_value"


def test_unsupported_exponent_is_reported_not_failed(tmp_path):
    code, raw = run_to_file(tmp_path, "low.json", ["bootstrap", "--n", "2", "--p", "3"])
    assert code == 0
    assert json.loads(raw)["results"]["ch5"][0]["supported"] is False


def test_csv_format(capsys):
    assert main(["bootstrap", "--p", "6", "--format", "csv"]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert rows and tuple(rows[0]) == CSV_COLUMNS
    assert {row["command"] for row in rows} == {"bootstrap"}
    assert all(row["passed"] == "true" for row in rows)


def test_config_file_merges_under_flags(tmp_path):
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"trials": 1, "seed": 5, "deltas": ["1/4"], "q": 3}))
    code, raw = run_to_file(tmp_path, "inf.json", ["inflation", "--config", str(config), "--seed", "7"])
    report = json.loads(raw)
    assert code == 0
    assert report["config"]["seed"] == 7
    assert report["config"]["trials"] == 1 and report["config"]["deltas"] == ["1/4"]


def test_unreadable_config_is_a_usage_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2")
    assert main(["bootstrap", "--config", str(bad)]) == 2


def test_empty_sweep_exits_two(capsys):
    assert main(["lower-bound", "--deltas"]) == 2
    assert "empty" in capsys.readouterr().err


def test_unknown_command_exits_two():
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == 2
    with pytest.raises(UsageError):
        run(ExperimentConfig("no-such-command", {}))


def test_failed_check_exits_one(capsys):
    # a strip of half-width 100/K swallows every cap at K = 4
    assert main(["trichotomy", "--K", "4", "--strip-constant", "100"]) == 1
    err = capsys.readouterr().err
    assert "failed checks" in err and "canonical_broad[K=4]" in err


def test_run_returns_report_object():
    code, report = run(ExperimentConfig("bootstrap", {"n": 2, "p": [6]}))
    assert code == 0 and not report.failed
    assert report.to_json()["summary"]["passed"]
