"""Print the unobservable-subspace dimension each estimator's linearization implies."""
from tekf.audit import AUDIT_ESTIMATORS, obs_audit

# a single bearing landmark leaves target tracking with one unobservable direction
for app, extra in (("cl", {}), ("tt", {"schedule": "single"})):
    for est in AUDIT_ESTIMATORS:
        rep = obs_audit(app, seed=0, estimator=est, **extra)
        print(f"{app} {est:6} nominal dim {rep['dim_nominal']}  estimator dim {rep['dim_estimator']}  "
              f"lost {rep['lost_directions']}")
