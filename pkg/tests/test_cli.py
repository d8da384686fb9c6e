import json

import pytest

from epismc import pipeline
from epismc.cli import main

SMALL = """
[simulate]
n_pop = 40
p_contact = 0.05
gamma = 10
a = 2
side = 0.28
seed = 3
min_final_size = 6

[model]
a = 2

[mcmc]
B = 400
N = 40
M = 4

[smc]
particles = 40
np = 3
from_day = 3
to_day = 6
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "small.ini").write_text(SMALL)
    assert main(["simulate", "--config", str(root / "small.ini"), "--out", str(root / "data")]) == 0
    return root


def args(root, *extra):
    return ["--population", str(root / "data/population.csv"),
            "--events", str(root / "data/events.csv"), "--config", str(root / "small.ini"),
            *extra]


@pytest.fixture(scope="module")
def first_run(workspace):
    out = workspace / "run1"
    assert main(["run", *args(workspace, "--out", str(out))]) == 0
    return out


def test_simulate_writes_data(workspace):
    d = workspace / "data"
    assert {p.name for p in d.iterdir()} >= {"population.csv", "events.csv", "truth.csv"}
    assert (d / "events.csv").read_text().startswith("day,id,event")


def test_run_layout(first_run):
    for t in range(3, 7):
        d = first_run / f"day_{t}"
        for name in ("summary", "density", "particles", "aug"):
            assert (d / f"{name}_{t}.csv").exists()
        assert (d / f"state_{t}.json").exists()
    assert (first_run / "day_3" / "trace_3.csv").exists()
    manifest = json.loads((first_run / "manifest.json").read_text())
    assert set(manifest) == {"command", "config", "seed", "inputs", "versions"}
    assert "particles = 40" in manifest["config"]
    summary = (first_run / "day_5" / "summary_5.csv").read_text()
    assert "p_contact" in summary and "P(u_t=" in summary and "unique" in summary


def test_rerun_from_manifest_is_byte_identical(workspace, first_run):
    out = workspace / "rerun"
    assert main(["run", "--manifest", str(first_run / "manifest.json"), "--workers", "2",
                 "--out", str(out)]) == 0
    for t in range(3, 7):
        for name in ("summary", "particles", "aug", "density"):
            a = (first_run / f"day_{t}" / f"{name}_{t}.csv").read_bytes()
            b = (out / f"day_{t}" / f"{name}_{t}.csv").read_bytes()
            assert a == b, (t, name)


def test_resume_continues_identically(workspace, first_run):
    out = workspace / "partial"
    assert main(["run", *args(workspace, "--to-day", "4", "--out", str(out))]) == 0
    assert not (out / "day_5").exists()
    assert main(["run", *args(workspace, "--out", str(out))]) == 0
    for t in (5, 6):
        assert (out / f"day_{t}" / f"summary_{t}.csv").read_bytes() == \
            (first_run / f"day_{t}" / f"summary_{t}.csv").read_bytes()


def test_init_only_when_end_is_start(workspace):
    out = workspace / "init_only"
    assert main(["run", *args(workspace, "--to-day", "3", "--out", str(out))]) == 0
    assert sorted(p.name for p in out.glob("day_*")) == ["day_3"]


def test_golden_runs_and_compare(workspace, first_run, capsys):
    gold = workspace / "gold"
    assert main(["init", *args(workspace, "--day", "3", "5", "--samples", "60",
                               "--out", str(gold))]) == 0
    table = workspace / "cmp.csv"
    assert main(["compare", "--smc", str(first_run), "--mcmc", str(gold),
                 "--out", str(table)]) == 2
    assert "days differ" in capsys.readouterr().err
    assert main(["compare", "--smc", str(first_run), "--mcmc", str(gold), "--common-days",
                 "--out", str(table)]) == 0
    lines = table.read_text().splitlines()
    assert lines[0] == "day,quantity,mean_smc,mean_mcmc,se_smc,se_mcmc,z"
    assert {l.split(",")[0] for l in lines[1:]} == {"3", "5"}


def test_changed_input_is_refused(workspace, first_run, tmp_path, capsys):
    import shutil
    copy = tmp_path / "data"
    shutil.copytree(workspace / "data", copy)
    out = tmp_path / "run"
    assert main(["run", "--population", str(copy / "population.csv"),
                 "--events", str(copy / "events.csv"), "--config", str(workspace / "small.ini"),
                 "--to-day", "3", "--out", str(out)]) == 0
    with open(copy / "events.csv", "a") as fh:
        fh.write("99,1,N\n")
    assert main(["run", "--manifest", str(out / "manifest.json"), "--out",
                 str(tmp_path / "again")]) == 2
    assert "changed" in capsys.readouterr().err


def test_bad_events_reported_with_line(workspace, tmp_path, capsys):
    bad = tmp_path / "events.csv"
    bad.write_text("day,id,event\n0,1,N\n0,1,N\n")
    code = main(["run", "--population", str(workspace / "data/population.csv"),
                 "--events", str(bad), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "line 3" in capsys.readouterr().err


def test_step_failure_exit_code(workspace, tmp_path, monkeypatch):
    from epismc import smc

    def fail(*a, **k):
        raise smc.StepFailure("all particles have zero weight")

    monkeypatch.setattr(pipeline, "smc_step", fail)
    out = tmp_path / "fail"
    assert main(["run", *args(workspace, "--out", str(out))]) == pipeline.EXIT_STEP_FAILURE
    assert (out / "day_3" / "summary_3.csv").exists()


def test_init_seed_gives_an_independent_chain(workspace, first_run):
    same, other = workspace / "gold_same", workspace / "gold_other"
    for out, extra in ((same, []), (other, ["--seed", "7"])):
        assert main(["init", *args(workspace, "--day", "3", *extra, "--out", str(out))]) == 0
    run_summary = (first_run / "day_3/summary_3.csv").read_text()
    assert (same / "day_3/summary_3.csv").read_text() == run_summary
    assert (other / "day_3/summary_3.csv").read_text() != run_summary
