"""Headline comparison on a biased, underdispersive synthetic T2M archive.

Runs RAW, EMOS-Q and ECC-Q (optionally more methods) with a 720-day rolling
window and prints per-station ES/VS, DM statistics against EMOS-Q, EMOS PIT
uniformity and reliability indices.

    python scripts/headline_t2m.py --output runs/headline
"""

import argparse
import time

import numpy as np

from mvpost import ExperimentConfig, generate_archive, run_experiment
from mvpost.synth import headline_scenario
from mvpost.verify import dm_test


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--stations", type=int, default=20)
    p.add_argument("--days", type=int, default=1500)
    p.add_argument("--window", type=int, default=720)
    p.add_argument("--methods", default="RAW,EMOS-Q,ECC-Q")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--output", default=None, help="directory for report tables")
    args = p.parse_args()

    t0 = time.time()
    archive = generate_archive(headline_scenario(n_stations=args.stations, n_days=args.days))
    kw = dict(window_days=args.window, methods=args.methods, seed=args.seed)
    if args.workers:
        kw["workers"] = args.workers
    report = run_experiment(ExperimentConfig(**kw), archive)
    print(f"run time {time.time() - t0:.1f} s")

    print(f"{'station':8s} {'ES raw':>8s} {'ES emos':>8s} {'ES ecc':>8s} {'VS raw':>8s} {'VS emos':>8s} {'VS ecc':>8s} {'t_ES':>7s} {'t_VS':>7s} {'RI raw':>7s} {'RI ecc':>7s}")
    for s in report.stations:
        es = lambda m: s.scores[m]["ES"].mean()
        vs = lambda m: s.scores[m]["VS"].mean()
        t_es = dm_test(s.scores["ECC-Q"]["ES"], s.scores["EMOS-Q"]["ES"]).statistic
        t_vs = dm_test(s.scores["ECC-Q"]["VS"], s.scores["EMOS-Q"]["VS"]).statistic
        ri = lambda m: report.reliability(m, s.station_id)[0]
        print(
            f"{s.station_id:8s} {es('RAW'):8.4f} {es('EMOS-Q'):8.4f} {es('ECC-Q'):8.4f} "
            f"{vs('RAW'):8.3f} {vs('EMOS-Q'):8.3f} {vs('ECC-Q'):8.3f} {t_es:7.2f} {t_vs:7.2f} {ri('RAW'):7.3f} {ri('ECC-Q'):7.3f}"
        )
    pit = report.pit_ks()
    ok = np.mean([row[4] > 0.05 for row in pit])
    print(f"EMOS PIT: KS p > 0.05 for {ok:.1%} of {len(pit)} (station, lead) pairs")
    print()
    print(report.summary())
    if args.output:
        print(f"tables written to {report.write(args.output)}")


if __name__ == "__main__":
    main()
