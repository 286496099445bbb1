"""EKF vs T-EKF on cooperative localization: average NEES, RMSE and cost.

    python demos/cl_consistency.py [trials]
"""
import sys

from tekf.harness import TrialConfig, run_comparison

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 20
cfg = TrialConfig(app="cl", trials=trials, steps=100, robots=6, master_seed=1)
runs = run_comparison(cfg, [
    "ekf",
    "fej",
    ("tekf1-t1", {"estimator": "tekf1", "transformation": "t1"}),
    ("tekf1-t2", {"estimator": "tekf1", "transformation": "t2"}),
    ("tekf2-t2", {"estimator": "tekf2", "transformation": "t2"}),
])
print(f"{'estimator':10} {'rmse pos':>9} {'rmse ori':>9} {'nees pos':>9} {'nees ori':>9} {'ms/step':>8}")
for name, m in runs.items():
    s = m.summary()
    print(f"{name:10} {s['rmse_pos']:9.3f} {s['rmse_ori']:9.3f} {s['nees_pos']:9.2f} {s['nees_ori']:9.2f} "
          f"{m.ms_per_step:8.2f}")
