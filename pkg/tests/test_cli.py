import csv
import subprocess
import sys

import pytest

from mvpost import cli
from mvpost.archive import ingest
from mvpost.pipeline import ExperimentConfig


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def archive_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "arch.csv"
    argv = ["synth", "--stations", "2", "--days", "120", "--leads", "3", "--bias", "0.5", "--deflation", "0.7", "--seed", "4", "--output", str(path)]
    assert cli.main(argv) == cli.EXIT_OK
    return path


def test_synth_writes_archive(archive_file):
    a = ingest(archive_file, "T2M")
    assert a.station_ids() == ["S000", "S001"]
    assert a.stations["S000"].obs.shape == (120, 3)


def test_config_file_and_flag_override(tmp_path, archive_file):
    conf = tmp_path / "exp.conf"
    conf.write_text(f"# experiment\nvariable_kind = T2M\narchive = {archive_file}\nwindow_days = 200  # too long\nmethods = RAW, ECC-Q\nseed = 3\n")
    args = cli.build_parser().parse_args(["run", "--config", str(conf), "--window-days", "80"])
    c = cli.experiment_config(args)
    assert isinstance(c, ExperimentConfig)
    assert c.window_days == 80 and c.methods == ("RAW", "ECC-Q") and c.seed == 3


def test_bad_config_lines(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("window_days 80\n")
    assert cli.main(["run", "--config", str(conf)]) == cli.EXIT_INVALID
    conf.write_text("windows = 80\n")
    assert cli.main(["run", "--config", str(conf)]) == cli.EXIT_INVALID


def test_run_then_dm(tmp_path, archive_file, capsys):
    out = tmp_path / "rep"
    argv = ["run", "--archive", str(archive_file), "--window-days", "80", "--methods", "RAW,EMOS-Q,ECC-Q", "--output", str(out)]
    assert cli.main(argv) == cli.EXIT_OK
    assert "ranking by mean ES" in capsys.readouterr().out
    skill = read_csv(out / "skill.csv")
    assert {r["reference"] for r in skill} == {"ECC-Q"}
    dm_out = tmp_path / "dm.csv"
    argv = ["dm", "--series", str(out / "series.csv"), "--f", "ECC-Q", "--g", "RAW", "--score", "VS", "--output", str(dm_out)]
    assert cli.main(argv) == cli.EXIT_OK
    rows = read_csv(dm_out)
    assert [r["station"] for r in rows] == ["S000", "S001"] and all(r["score"] == "VS" for r in rows)
    dm_rows = [r for r in read_csv(out / "dm.csv") if r["method"] == "RAW" and r["score"] == "VS"]
    # the dm subcommand on F=ECC-Q, G=RAW is the negated report statistic
    assert [float(r["t"]) for r in rows] == pytest.approx([-float(r["t"]) for r in dm_rows], rel=1e-12)
    assert cli.main(["dm", "--series", str(out / "series.csv"), "--f", "ECC-Q", "--g", "SSh-R"]) == cli.EXIT_INVALID
    assert cli.main(["dm", "--series", str(out / "series.csv"), "--f", "ECC-Q", "--g", "RAW", "--score", "CRPS"]) == cli.EXIT_INVALID


def test_postprocess_verify_reproduces_run(tmp_path, archive_file):
    common = ["--archive", str(archive_file), "--window-days", "80", "--methods", "ECC-R,SSh-S,mdSSh", "--seed", "9"]
    assert cli.main(["run", *common, "--output", str(tmp_path / "run")]) == cli.EXIT_OK
    ens = tmp_path / "ens.csv"
    assert cli.main(["postprocess", *common, "--output", str(ens)]) == cli.EXIT_OK
    assert cli.main(["verify", *common, "--ensembles", str(ens), "--output", str(tmp_path / "ver")]) == cli.EXIT_OK
    key = lambda r: (r["station"], r["method"], r["init_date"])
    a = sorted(read_csv(tmp_path / "run" / "series.csv"), key=key)
    b = sorted(read_csv(tmp_path / "ver" / "series.csv"), key=key)
    assert a == b and len(a) == 3 * 2 * 40


def test_calibrate(tmp_path, archive_file):
    out = tmp_path / "cal.csv"
    assert cli.main(["calibrate", "--archive", str(archive_file), "--window-days", "80", "--output", str(out)]) == cli.EXIT_OK
    rows = read_csv(out)
    assert len(rows) == 2 * 40 * 3 and float(rows[0]["scale"]) > 0


def test_validation_errors_exit_one(tmp_path, archive_file):
    out = str(tmp_path / "x")
    base = ["run", "--archive", str(archive_file), "--output", out]
    assert cli.main([*base, "--window-days", "80", "--methods", "RAW,FOO"]) == cli.EXIT_INVALID
    assert cli.main([*base, "--window-days", "80", "--methods", "RAW", "--reference", "ECC-Q"]) == cli.EXIT_INVALID
    assert cli.main([*base, "--window-days", "500"]) == cli.EXIT_INVALID
    assert cli.main([*base, "--variable-kind", "PPT24", "--methods", "mdSSh", "--window-days", "80"]) == cli.EXIT_INVALID
    assert cli.main(["run", "--archive", str(tmp_path / "missing.csv"), "--window-days", "80", "--output", out]) == cli.EXIT_INVALID
    assert cli.main(["run", "--window-days", "80", "--output", out]) == cli.EXIT_INVALID
    bad = tmp_path / "bad.csv"
    bad.write_text(archive_file.read_text().replace(",", ";", 1))
    assert cli.main(["run", "--archive", str(bad), "--window-days", "80", "--output", out]) == cli.EXIT_INVALID


def test_failure_threshold_exit_two(tmp_path, archive_file, monkeypatch):
    def fake(cfg, archive):
        return ["station"], [], 0.5

    monkeypatch.setattr(cli, "calibration_rows", fake)
    argv = ["calibrate", "--archive", str(archive_file), "--window-days", "80", "--output", str(tmp_path / "c.csv")]
    assert cli.main(argv) == cli.EXIT_FAILURES
    assert cli.main([*argv, "--failure-threshold", "0.6"]) == cli.EXIT_OK


def test_module_entry_point(tmp_path):
    out = tmp_path / "a.csv"
    res = subprocess.run(
        [sys.executable, "-m", "mvpost", "synth", "--days", "5", "--stations", "1", "--leads", "2", "--output", str(out)],
        capture_output=True,
        text=True,
    )
    assert res.returncode == 0, res.stderr
    assert len(out.read_text().splitlines()) == 1 + 5 * 2
    res = subprocess.run([sys.executable, "-m", "mvpost", "run", "--methods", "NOPE", "--archive", str(out)], capture_output=True, text=True)
    assert res.returncode == 1 and "unknown method" in res.stderr
