"""Target tracking with alternating bearing landmarks: EKF, T-EKF and dead reckoning.

    python demos/tt_consistency.py [trials]
"""
import sys

from tekf.harness import TrialConfig, run_comparison

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 30
runs = run_comparison(TrialConfig(app="tt", trials=trials, master_seed=3), ["ekf", "tekf1", "tekf2", "dr"])
for name, m in runs.items():
    s = m.summary()
    print(f"{name:6} pos rmse {s['rmse_pos']:.3f}  nees {s['nees_pos']:.2f} | "
          f"ori rmse {s['rmse_ori']:.3f}  nees {s['nees_ori']:.2f}")
