import csv

import numpy as np
import pytest

from mvpost.emos import VariableKind
from mvpost.errors import ConfigurationError
from mvpost.marginals import sample_quantiles
from mvpost.pipeline import (
    METHODS,
    ExperimentConfig,
    calibration_rows,
    ensemble_rows,
    iter_station_cases,
    read_ensembles,
    run_experiment,
    same_season_fraction,
    verify_ensembles,
    write_table,
)
from mvpost.synth import ScenarioConfig, generate_archive

WINDOW = 80


def small_archive(kind=VariableKind.T2M, **kw):
    base = dict(n_stations=2, n_days=130, L=4, seed=3, ensemble_bias=0.5, spread_deflation=0.7)
    base.update(kw)
    return generate_archive(ScenarioConfig(kind, **base))


def cfg(**kw):
    base = dict(window_days=WINDOW, methods=METHODS, seed=11, workers=1)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def t2m():
    return small_archive()


@pytest.fixture(scope="module")
def full_report(t2m):
    return run_experiment(cfg(), t2m)


def test_all_methods_paired_and_finite(full_report):
    assert full_report.reference == "ECC-Q"
    assert full_report.failure_fraction == 0.0
    for s in full_report.stations:
        n = s.dates.size
        assert n == 130 - WINDOW
        for m in METHODS:
            for x in ("ES", "VS", "EE"):
                assert s.scores[m][x].shape == (n,) and np.all(np.isfinite(s.scores[m][x]))
            assert s.ranks[m].shape == (n,) and s.ranks[m].min() >= 1 and s.ranks[m].max() <= 53
        assert set(s.same_season) == {"SSh-R", "SSh-Q", "SSh-S", "mdSSh", "simSSh"}


def test_bit_exact_rerun_and_parallel(t2m, full_report):
    again = run_experiment(cfg(workers=2), t2m)
    for a, b in zip(full_report.stations, again.stations):
        for m in METHODS:
            for x in ("ES", "VS", "EE"):
                np.testing.assert_array_equal(a.scores[m][x], b.scores[m][x])
            np.testing.assert_array_equal(a.ranks[m], b.ranks[m])
    assert full_report.summary() == again.summary()


def test_seed_changes_random_methods_only(t2m, full_report):
    other = run_experiment(cfg(seed=12, methods=("RAW", "EMOS-Q", "EMOS-R")), t2m)
    a, b = full_report.stations[0], other.stations[0]
    np.testing.assert_array_equal(a.scores["RAW"]["ES"], b.scores["RAW"]["ES"])
    np.testing.assert_array_equal(a.scores["EMOS-Q"]["ES"], b.scores["EMOS-Q"]["ES"])
    assert not np.array_equal(a.scores["EMOS-R"]["ES"], b.scores["EMOS-R"]["ES"])


def test_quantile_methods_share_marginals(t2m):
    c = cfg(methods=("EMOS-Q", "ECC-Q", "dECC", "SSh-Q", "mdSSh", "simSSh"))
    for i, case in enumerate(iter_station_cases(t2m.stations["S000"], c, 0)):
        ref = np.sort(case.ensembles["EMOS-Q"], axis=0)
        for m in c.methods:
            np.testing.assert_array_equal(np.sort(case.ensembles[m], axis=0), ref)
        if i > 10:
            break


def test_ecc_keeps_raw_ranks(t2m):
    c = cfg(methods=("ECC-R", "ECC-S"))
    st = t2m.stations["S001"]
    for case in iter_station_cases(st, c, 1):
        raw = st.members[case.day].T
        rr = np.argsort(np.argsort(raw, axis=0), axis=0)
        for m in c.methods:
            np.testing.assert_array_equal(np.argsort(np.argsort(case.ensembles[m], axis=0), axis=0), rr)


def test_v10_ensembles_on_physical_scale():
    a = small_archive(VariableKind.V10, n_days=110)
    c = cfg(variable_kind="V10", methods=("EMOS-Q", "ECC-Q"), window_days=60)
    from mvpost.emos import rolling_calibrate

    st = a.stations["S000"]
    cal = rolling_calibrate(st, VariableKind.V10, 60)
    for case in iter_station_cases(st, c, 0, cal):
        q = sample_quantiles(cal.dist(case.day), 52) ** 2
        np.testing.assert_array_equal(np.sort(case.ensembles["ECC-Q"], axis=0), q)
        assert case.ensembles["EMOS-Q"].min() >= 0


def test_ppt24_run_and_mdssh_rejected():
    a = small_archive(VariableKind.PPT24, n_days=110)
    rep = run_experiment(cfg(variable_kind="PPT24", methods=("RAW", "ECC-Q", "simSSh"), window_days=60), a)
    assert all(s.dates.size > 0 for s in rep.stations)
    with pytest.raises(ConfigurationError, match="mdSSh"):
        run_experiment(cfg(variable_kind="PPT24", methods=("mdSSh",), window_days=60), a)


def test_raw_only_has_empty_skill_section(t2m):
    rep = run_experiment(cfg(methods=("RAW",)), t2m)
    assert rep.reference is None
    assert rep.skill_rows()[1] == [] and rep.dm_rows()[1] == []
    assert "reference: (none)" in rep.summary()
    assert rep.score_rows()[1][0][1] == "RAW"


def test_duplicate_methods_reported_equal(t2m):
    rep = run_experiment(cfg(methods=("ECC-Q", "ECC-S", "ECC-S")), t2m)
    assert rep.labels == ("ECC-Q", "ECC-S", "ECC-S#2")
    s = rep.stations[0]
    np.testing.assert_array_equal(s.scores["ECC-S"]["ES"], s.scores["ECC-S#2"]["ES"])
    c = ExperimentConfig(methods=("ECC-S", "ECC-S"), reference="ECC-S", window_days=WINDOW)
    rep2 = run_experiment(c, t2m)
    assert rep2.dm("ECC-S#2", "ES", "S000").decision == "equal"


@pytest.mark.parametrize(
    "kw,needle",
    [
        (dict(methods=("RAW", "FOO")), "unknown method"),
        (dict(methods=("RAW",), reference="ECC-Q"), "reference"),
        (dict(methods=()), "no methods"),
        (dict(window_days=0), "window"),
        (dict(failure_threshold=2.0), "failure_threshold"),
        (dict(optimizer="bfgs"), "optimizer"),
    ],
)
def test_config_validation(kw, needle):
    with pytest.raises(ConfigurationError, match=needle):
        cfg(**kw).validate()


def test_from_mapping_parses_strings():
    c = ExperimentConfig.from_mapping({"variable_kind": "V10", "methods": "RAW, ECC-Q", "seed": "7", "vs_p": "0.5"})
    assert c.variable_kind is VariableKind.V10 and c.methods == ("RAW", "ECC-Q")
    assert c.seed == 7 and c.vs_p == 0.5 and c.window_days == 365
    assert ExperimentConfig(variable_kind="PPT24").window_days == 1816
    assert ExperimentConfig().window_days == 720
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_mapping({"sede": "1"})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_mapping({"seed": "x"})
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_mapping({"variable_kind": "SNOW"})


def test_archive_checks(t2m):
    with pytest.raises(ConfigurationError, match="need more than"):
        run_experiment(cfg(window_days=127), t2m)
    with pytest.raises(ConfigurationError, match="configuration expects"):
        run_experiment(cfg(variable_kind="V10"), t2m)


def test_missing_obs_days_skipped_for_all_methods():
    a = small_archive(missing_obs_fraction=0.05)
    rep = run_experiment(cfg(methods=("RAW", "ECC-Q", "SSh-R")), a)
    for s in rep.stations:
        assert s.n_skipped_days > 0
        assert s.dates.size + s.n_skipped_days == 130 - WINDOW
        assert len({v["ES"].size for v in s.scores.values()}) == 1


def test_same_season_fraction():
    d = np.datetime64("2010-01-10")
    dates = np.array(["2009-12-20", "2009-11-26", "2009-11-25", "2010-07-01"], dtype="datetime64[D]")
    assert same_season_fraction(dates, d, 45) == 0.5
    assert same_season_fraction(dates[:1], d, 20) == 0.0


def test_report_tables_written(tmp_path, full_report):
    out = full_report.write(tmp_path / "rep")
    names = sorted(p.name for p in out.iterdir())
    assert names == ["dm.csv", "pit.csv", "rank_hist.csv", "scores.csv", "series.csv", "skill.csv", "summary.txt", "templates.csv"]
    with (out / "scores.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 * len(METHODS)
    allrow = next(r for r in rows if r["station"] == "ALL" and r["method"] == "ECC-Q")
    assert float(allrow["ES"]) == full_report.mean_score("ECC-Q", "ES")
    with (out / "skill.csv").open() as fh:
        ecc = [r for r in csv.DictReader(fh) if r["method"] == "ECC-Q"]
    assert all(float(r["ESS"]) == 0.0 for r in ecc)
    with (out / "rank_hist.csv").open() as fh:
        counts = [int(r["count"]) for r in csv.DictReader(fh) if r["station"] == "S000" and r["method"] == "RAW"]
    assert len(counts) == 53 and sum(counts) == 130 - WINDOW
    with (out / "dm.csv").open() as fh:
        dm = list(csv.DictReader(fh))
    assert len(dm) == 2 * (len(METHODS) - 1) * 3
    assert "ranking by mean ES" in (out / "summary.txt").read_text()


def test_postprocess_then_verify_matches_run(tmp_path, t2m):
    c = cfg(methods=("RAW", "ECC-R", "SSh-R", "ECC-R"))
    run = run_experiment(c, t2m)
    header, rows = ensemble_rows(c, t2m)
    path = tmp_path / "ens.csv"
    write_table(path, header, rows)
    ens = read_ensembles(path)
    assert len(ens) == 2 * (130 - WINDOW)
    assert ens[("S000", run.stations[0].dates[0])]["ECC-R#2"].shape == (52, 4)
    ver = verify_ensembles(c, t2m, ens)
    # verify lists methods in canonical order
    assert sorted(ver.series_rows()[1]) == sorted(run.series_rows()[1])
    assert sorted(ver.rank_rows()[1]) == sorted(run.rank_rows()[1])


def test_calibration_rows(t2m):
    header, rows, frac = calibration_rows(cfg(), t2m)
    assert header[:5] == ["station", "init_date", "lead_days", "family", "location"]
    assert len(rows) == 2 * (130 - WINDOW) * 4 and frac == 0.0
    assert all(r[3] == "gaussian" and r[5] > 0 and r[6] == "" for r in rows)
