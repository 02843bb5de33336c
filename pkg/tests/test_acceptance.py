"""Acceptance criteria; each test prints one PASS/FAIL line.

The two long-running scenarios (headline T2M comparison and the seasonal
template experiment) take several minutes each on a single core.
"""

import math
import time

import numpy as np
import pytest

import oracles
from mvpost.dists import CensoredGevDist, GaussianDist, TruncGaussianDist, crps_analytic
from mvpost.emos import ensemble_stats
from mvpost.marginals import draw_samples
from mvpost.pipeline import ExperimentConfig, build_ensemble, run_experiment
from mvpost.reorder import ErrorAutocorrelation, HistoricalArchive, decc, ecc
from mvpost.synth import ScenarioConfig, generate_archive, headline_scenario, seasonal_scenario
from mvpost.verify import crps_empirical, dm_test, energy_score, l1_median, l1_objective, variogram_score

RESULTS = {}


def report(num, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d}: {detail}"
    RESULTS[num] = line
    print(line)
    return ok


def rng(seed):
    return np.random.default_rng(seed)


@pytest.fixture(scope="module")
def raw_cases():
    """Raw (K=52, L=10) ensembles and matching predictive distributions from a synthetic archive."""
    a = generate_archive(ScenarioConfig(n_stations=2, n_days=60, seed=31, ensemble_bias=0.7, spread_deflation=0.7))
    r = rng(5)
    out = []
    for st in a.stations.values():
        for d in range(st.dates.size):
            members = st.members[d]
            mu = members.mean(-1) - 0.7 + r.normal(0, 0.2, 10)
            sigma = members.std(-1) / 0.7 * r.uniform(0.8, 1.2, 10)
            out.append((members.T.copy(), GaussianDist(mu, sigma), st.obs[d]))
    return out[:100]


# 1 ------------------------------------------------------------------------


def test_criterion_01_crps_closed_form_vs_quadrature():
    r = rng(101)
    t0 = time.time()
    worst = 0.0
    for _ in range(1000):
        mu, sigma = r.uniform(-10, 10), r.uniform(0.1, 5)
        y = mu + sigma * r.uniform(-5, 5)
        a = crps_analytic(GaussianDist(mu, sigma), y)
        worst = max(worst, abs(a - oracles.crps_gaussian_oracle(mu, sigma, y)) / (1 + abs(a)))

        scale = r.uniform(0.2, 4)
        loc = scale * r.uniform(-3, 4)
        y = 0.0 if r.random() < 0.1 else max(loc, 0) + scale * r.uniform(0, 5)
        a = crps_analytic(TruncGaussianDist(loc, scale), y)
        worst = max(worst, abs(a - oracles.crps_trunc_oracle(loc, scale, y)) / (1 + abs(a)))

        loc, scale = r.uniform(-2, 5), r.uniform(0.2, 4)
        y = 0.0 if r.random() < 0.2 else r.uniform(0, loc + 10 * scale + 2)
        a = crps_analytic(CensoredGevDist(loc, scale, 0.2), y)
        worst = max(worst, abs(a - oracles.crps_censored_gev_oracle(loc, scale, 0.2, y)) / (1 + abs(a)))
    elapsed = time.time() - t0
    ok = worst < 1e-6 and elapsed < 60
    assert report(1, ok, f"3 x 1000 cases, worst scaled error {worst:.2e} (< 1e-6), {elapsed:.1f} s (< 60 s)")


# 2 ------------------------------------------------------------------------


def test_criterion_02_decc_identity_equals_ecc_q(raw_cases):
    mismatches = 0
    for i, (raw, dist, _) in enumerate(raw_cases):
        a = decc(raw, dist, ErrorAutocorrelation.identity(raw.shape[1]), rng(i))
        b = ecc(raw, dist, "Q", rng(i))
        mismatches += not np.array_equal(a, b)
    assert report(2, mismatches == 0, f"dECC(identity) == ECC-Q exactly on {len(raw_cases) - mismatches}/{len(raw_cases)} cases")


# 3 ------------------------------------------------------------------------

BASELINE_AND_REORDERING = (
    "EMOS-R", "EMOS-Q", "EMOS-S", "ECC-R", "ECC-Q", "ECC-S", "dECC", "SSh-R", "SSh-Q", "SSh-S", "mdSSh", "simSSh",
)


def test_criterion_03_marginal_preservation(raw_cases):
    r = rng(7)
    cfg = ExperimentConfig(window_days=200, methods=BASELINE_AND_REORDERING)
    failures = {}
    for i, (raw, dist, _) in enumerate(raw_cases):
        obs = dist.mu + r.normal(size=(200, 10)) * dist.sigma
        hist = HistoricalArchive(obs, obs + r.normal(size=obs.shape), r.uniform(0.5, 2, obs.shape))
        autocorr = ErrorAutocorrelation.from_matrix(0.5 + 0.5 * np.eye(10))
        stats = ensemble_stats(raw.T[None])
        for m in BASELINE_AND_REORDERING:
            ens, _ = build_ensemble(m, raw, dist, 52, rng(i), hist, autocorr, stats, 0, cfg)
            scheme = m[-1] if m[-2] == "-" else "Q"
            expected = draw_samples(dist, scheme, 52, rng(i))
            if not np.array_equal(np.sort(ens, axis=0), expected):
                failures[m] = failures.get(m, 0) + 1
    n = len(raw_cases)
    assert report(3, not failures, f"{len(BASELINE_AND_REORDERING)} methods x {n} cases bitwise; failures {failures or 'none'}")


# 4 ------------------------------------------------------------------------


def test_criterion_04_es_equals_crps_in_one_dimension():
    r = rng(404)
    worst = 0.0
    for _ in range(100):
        k = int(r.integers(1, 60))
        ens = r.normal(r.uniform(-5, 5), r.uniform(0.1, 3), size=(k, 1))
        y = r.normal()
        worst = max(worst, abs(energy_score(ens, [y]) - crps_empirical(ens[:, 0], y)))
    assert report(4, worst <= 1e-12, f"max |ES - CRPS| over 100 cases = {worst:.1e} (<= 1e-12)")


# 5 ------------------------------------------------------------------------


def test_criterion_05_variogram_score_correlation_sensitivity():
    r = rng(505)
    n_cases, k = 10_000, 52
    true = np.linalg.cholesky(np.array([[1.0, 0.8], [0.8, 1.0]]))
    diff = np.empty(n_cases)
    for i in range(n_cases):
        y = true @ r.normal(size=2)
        right = r.normal(size=(k, 2)) @ true.T
        wrong = r.normal(size=(k, 2))
        diff[i] = variogram_score(wrong, y) - variogram_score(right, y)
    se = diff.std(ddof=1) / math.sqrt(n_cases)
    z = diff.mean() / se
    assert report(5, z >= 3, f"mean VS(rho=0) - VS(rho=0.8) = {diff.mean():.4f}, {z:.1f} standard errors (>= 3)")


# 6, 7 ---------------------------------------------------------------------


@pytest.fixture(scope="module")
def headline():
    archive = generate_archive(headline_scenario())
    cfg = ExperimentConfig(window_days=720, methods=("RAW", "EMOS-Q", "ECC-Q"), seed=0)
    t0 = time.time()
    rep = run_experiment(cfg, archive)
    return rep, time.time() - t0


@pytest.mark.slow
def test_criterion_06_headline_ordering(headline):
    rep, elapsed = headline
    n = len(rep.stations)
    order_ok = {"ES": 0, "VS": 0}
    dm_sig = {"ES": 0, "VS": 0}
    for s in rep.stations:
        for x in ("ES", "VS"):
            ecc_ = s.scores["ECC-Q"][x].mean()
            order_ok[x] += ecc_ < s.scores["EMOS-Q"][x].mean() and ecc_ < s.scores["RAW"][x].mean()
            dm_sig[x] += abs(dm_test(s.scores["ECC-Q"][x], s.scores["EMOS-Q"][x]).statistic) > 1.96
    ok = all(order_ok[x] == n for x in order_ok) and all(dm_sig[x] >= 0.8 * n for x in dm_sig)
    detail = (
        f"ECC-Q < EMOS-Q, RAW at ES {order_ok['ES']}/{n}, VS {order_ok['VS']}/{n} stations; "
        f"DM vs EMOS-Q significant ES {dm_sig['ES']}/{n}, VS {dm_sig['VS']}/{n} (>= 80%); {elapsed:.0f} s"
    )
    assert report(6, ok, detail)


@pytest.mark.slow
def test_criterion_07_calibration_recovery(headline):
    rep, _ = headline
    pit = rep.pit_ks()
    frac = np.mean([p > 0.05 for *_, p in pit])
    ri_ok = sum(rep.reliability("ECC-Q", s.station_id)[0] < rep.reliability("RAW", s.station_id)[0] for s in rep.stations)
    n = len(rep.stations)
    ok = frac >= 0.9 and ri_ok == n
    assert report(7, ok, f"PIT KS passes at {frac:.1%} of {len(pit)} (station, lead) pairs (>= 90%); RI(ECC-Q) < RI(RAW) at {ri_ok}/{n} stations")


# 8 ------------------------------------------------------------------------


def test_criterion_08_l1_median_oracle():
    r = rng(808)
    worst = 0.0
    for _ in range(200):
        k, dim = int(r.integers(1, 11)), int(r.integers(1, 6))
        pts = r.normal(size=(k, dim)) * r.uniform(0.1, 10)
        if k > 2 and r.random() < 0.2:
            # repeated point: the minimiser may sit on a data point
            pts[-1] = pts[0]
        _, best = oracles.l1_grid_oracle(pts)
        worst = max(worst, abs(l1_objective(l1_median(pts), pts) - best))
    assert report(8, worst < 1e-6, f"200 point sets, max |objective - oracle| = {worst:.1e} (< 1e-6)")


# 9 ------------------------------------------------------------------------


def test_criterion_09_dm_size():
    r = rng(909)
    reps, n = 2000, 1000
    rejections = sum(dm_test(r.normal(size=n), r.normal(size=n)).significant for _ in range(reps))
    rate = rejections / reps
    assert report(9, 0.03 <= rate <= 0.07, f"rejection rate under equal skill {rate:.3f} over {reps} replications (in [0.03, 0.07])")


# 10 -----------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_10_seasonal_template_selection():
    archive = generate_archive(seasonal_scenario())
    rep = run_experiment(ExperimentConfig(window_days=720, methods=("SSh-R", "simSSh"), seed=0), archive)
    f_ssh = np.mean([s.same_season["SSh-R"] for s in rep.stations])
    f_sim = np.mean([s.same_season["simSSh"] for s in rep.stations])
    wins = sum(s.scores["simSSh"]["ES"].mean() <= s.scores["SSh-R"]["ES"].mean() for s in rep.stations)
    n = len(rep.stations)
    ok = f_sim >= 2 * f_ssh and wins >= 0.7 * n
    assert report(10, ok, f"same-season fraction simSSh {f_sim:.3f} vs SSh-R {f_ssh:.3f} (>= 2x); simSSh ES <= SSh-R ES at {wins}/{n} stations (>= 70%)")
