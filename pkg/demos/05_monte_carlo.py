"""
A small Monte Carlo study
=========================

Five runs per variant at 1 px. The acceptance suite uses 30 runs; this keeps
the demo short.
"""

from pogvio.consistency import nees, rmse
from pogvio.estimator import ALGORITHMS, FilterConfig
from pogvio.simulator import SimConfig, run_monte_carlo

cfg = SimConfig(duration=100.0)
for algorithm in ALGORITHMS:
    recs = run_monte_carlo(cfg, FilterConfig(algorithm=algorithm), n_runs=5, base_seed=0)
    ori, pos = rmse(recs)
    print(f"{algorithm:24s} ori {ori:.3f} deg  pos {pos:.3f} m  NEES {nees(recs):.2f}")
