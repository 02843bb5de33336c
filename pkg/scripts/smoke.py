"""All thirteen methods on a small archive for each variable kind (about a minute)."""

import time

from mvpost import METHODS, ExperimentConfig, ScenarioConfig, generate_archive, run_experiment

for kind, window in (("T2M", 120), ("V10", 120), ("PPT24", 150)):
    t0 = time.time()
    archive = generate_archive(ScenarioConfig(kind, n_stations=2, n_days=window + 60, ensemble_bias=0.3, spread_deflation=0.8))
    methods = [m for m in METHODS if not (kind == "PPT24" and m == "mdSSh")]
    report = run_experiment(ExperimentConfig(kind, window_days=window, methods=methods), archive)
    print(f"== {kind} ({time.time() - t0:.1f} s)")
    print(report.summary())
