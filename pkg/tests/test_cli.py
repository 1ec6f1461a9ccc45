import json

import pytest

from machlab.cli import build_parser, main

GRID = ["--modes", "16", "--T", "0.8", "--steps", "32"]


def test_scenario_list(capsys):
    assert main(["scenario", "list"]) == 0
    assert "taylor_green_2d" in capsys.readouterr().out.split()


def test_scenario_build(tmp_path):
    assert main(["scenario", "build", "--out", str(tmp_path)] + GRID) == 0
    assert {p.name for p in tmp_path.iterdir()} == {"u.bin", "pi.bin", "scenario.json"}


def test_regularize_and_lift(tmp_path):
    assert main(["regularize", "--epsilon", "0.2", "--out", str(tmp_path / "r")] + GRID) == 0
    assert (tmp_path / "r" / "regularize.json").exists()
    assert main(["lift", "--epsilon", "0.2", "--delta", "0.05", "--out", str(tmp_path / "l")] + GRID) == 0
    assert json.loads((tmp_path / "l" / "lift.json").read_text())["delta"] == 0.05


def test_perturb(tmp_path, capsys):
    args = ["perturb", "--epsilon", "0.2", "--budget", "2", "--levels", "0", "--window", "0.4",
            "--out", str(tmp_path)] + GRID
    assert main(args) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["steps"] == len((tmp_path / "iterate.jsonl").read_text().splitlines())


def test_sweep_verify_report(tmp_path, capsys):
    args = ["sweep", "--epsilons", "0.2", "--deltas", "0.02", "--budget", "1", "--levels", "0",
            "--out", str(tmp_path)] + GRID
    assert main(args) == 0
    run = capsys.readouterr().out.strip()
    assert {p.name for p in (tmp_path / run.split("/")[-1]).iterdir()} == {"manifest.json", "report.json", "report.csv"}
    assert main(["verify", run]) == 0
    assert "identical" in capsys.readouterr().out
    assert main(["report", run, "--format", "csv"]) == 0
    assert capsys.readouterr().out.startswith("# index")


def test_verify_detects_change(tmp_path, capsys):
    args = ["sweep", "--epsilons", "0.2", "--deltas", "0.02", "--budget", "1", "--levels", "0",
            "--out", str(tmp_path)] + GRID
    main(args)
    run = capsys.readouterr().out.strip()
    p = tmp_path / run.split("/")[-1] / "report.csv"
    p.write_text(p.read_text() + "tampered\n")
    assert main(["verify", run]) == 1


def test_errors_exit_nonzero(tmp_path, capsys):
    assert main(["lift", "--scenario", "nope", "--out", str(tmp_path)]) == 2
    assert "UnknownScenario" in capsys.readouterr().err


def test_bad_tolerance_override(tmp_path):
    assert main(["lift", "--tol", "bogus=1", "--out", str(tmp_path)] + GRID) == 2


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
