"""Observability audits: nominal vs estimator linearized systems on simulated runs.

A trace holds the Jacobian sequences of one run in the layout expected by
:func:`build_observability_matrix`: ``H_seq[k]`` is the measurement Jacobian
at step ``k`` (step 0 has no measurement) and ``F_seq[k]`` maps step ``k`` to
``k + 1``.  The nominal trace is evaluated on the noise-free true trajectory
with the true inputs; the estimator trace is whatever the filter linearized
with.  For transformed filters both traces are expressed in transformed
coordinates so their kernels can be compared directly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .apps import cl as cl_app
from .apps import tt as tt_app
from .core import ContractViolation, GaussianBelief
from .estimators import make_estimator
from .observability import (
    DEFAULT_RANK_TOL,
    SubspaceBasis,
    build_observability_matrix,
    kernel_basis,
    mismatch_report,
)
from .transform import Transformation, UpdateMode, identity_transformation

AUDIT_ESTIMATORS = ("ekf", "fej", "tekf1")


@dataclass
class AuditTrace:
    F_nominal: list
    H_nominal: list
    F_estimator: list
    H_estimator: list
    x_ref: np.ndarray
    transformation: Transformation

    @property
    def steps(self) -> int:
        return len(self.F_nominal)

    def window(self, start: int, length: int, which: str = "estimator"):
        F = self.F_estimator if which == "estimator" else self.F_nominal
        H = self.H_estimator if which == "estimator" else self.H_nominal
        if start + length > self.steps:
            raise ContractViolation(f"window [{start}, {start + length}] exceeds the {self.steps}-step trace")
        return build_observability_matrix(F[start:start + length], H[start:start + length + 1], start)

    def kernel(self, start: int, length: int, which: str = "estimator", tol: float = DEFAULT_RANK_TOL) -> SubspaceBasis:
        return kernel_basis(self.window(start, length, which), tol)


def _traces(model, noise, trans, truth, true_inputs, odometry, meas, est_name):
    n = model.n
    est = make_estimator(est_name, model, noise, GaussianBelief(truth[0], np.zeros((n, n))), trans,
                         UpdateMode.EXACT, record=True)
    for k in range(len(odometry)):
        est.predict(odometry[k])
        est.update(meas[k])
    F_nom, H_nom = [], [np.zeros((0, n))]
    for k in range(len(odometry)):
        x, x_next = truth[k], truth[k + 1]
        F_nom.append(trans.T(x_next) @ model.F(x, true_inputs[k]) @ trans.T_inv(x))
        if meas[k] is None or meas[k].p == 0:
            H_nom.append(np.zeros((0, n)))
        else:
            H_nom.append(model.H(x_next, meas[k].ctx) @ trans.T_inv(x_next))
    H_est = [np.zeros((0, n))] + est.H_trace
    return AuditTrace(F_nom, H_nom, est.F_trace, H_est, np.asarray(truth[0]), trans)


def cl_audit_trace(estimator: str = "ekf", seed: int = 0, robots: int = 3, steps: int = 60,
                   detection_prob: float = 0.5, transformation: str = "t1") -> AuditTrace:
    """Simulate one CL run and collect nominal and estimator Jacobians."""
    if estimator not in AUDIT_ESTIMATORS:
        raise ContractViolation(f"audits support {AUDIT_ESTIMATORS}, got {estimator!r}")
    cfg = cl_app.ClNoiseConfig(detection_prob=detection_prob)
    model = cl_app.cl_model(robots, cfg)
    rng = np.random.default_rng(seed)
    data = cl_app.simulate_cl(robots, steps, cfg, rng)
    meas = [cl_app.cl_measurement(mm) if mm else None for mm in data.measurements]
    if estimator == "tekf1":
        trans = cl_app.cl_transform_t1() if transformation == "t1" else cl_app.cl_transform_t2()
    else:
        trans = identity_transformation(model.n)
    return _traces(model, cfg.noise(robots), trans, data.truth, data.true_inputs, data.odometry, meas, estimator)


def tt_audit_trace(estimator: str = "ekf", seed: int = 0, steps: int = 40, schedule: str = "alternate",
                   cfg: Optional[tt_app.TtConfig] = None) -> AuditTrace:
    """Simulate one tracking run.

    ``schedule="single"`` keeps only the first landmark; ``"alternate"`` uses
    the configured alternation.
    """
    if estimator not in AUDIT_ESTIMATORS:
        raise ContractViolation(f"audits support {AUDIT_ESTIMATORS}, got {estimator!r}")
    cfg = cfg or tt_app.TtConfig()
    if schedule == "single":
        cfg = tt_app.TtConfig(**{**cfg.__dict__, "landmarks": cfg.landmarks[:1]})
    elif schedule != "alternate":
        raise ContractViolation(f"unknown schedule {schedule!r}")
    model = tt_app.tt_model(cfg.landmark_list(), cfg)
    rng = np.random.default_rng(seed)
    data = tt_app.simulate_tt(steps, cfg, rng)
    meas = [tt_app.tt_measurement(mm) if mm else None for mm in data.measurements]
    trans = tt_app.tt_transform() if estimator == "tekf1" else identity_transformation(model.n)
    return _traces(model, cfg.noise(), trans, data.truth, data.true_inputs, data.odometry, meas, estimator)


def audit_report(trace: AuditTrace, window: Optional[int] = None, start: int = 0,
                 tol: float = DEFAULT_RANK_TOL) -> dict:
    """Kernel dimensions and principal angles for one window of a trace."""
    n = trace.x_ref.size
    window = 4 * n if window is None else window
    nominal = trace.window(start, window, "nominal")
    estimator = trace.window(start, window, "estimator")
    rep = mismatch_report(nominal, estimator, tol)
    return {
        "dim_nominal": rep.dim_nominal,
        "dim_estimator": rep.dim_estimator,
        "principal_angles": [float(a) for a in rep.principal_angles],
        "lost_directions": rep.lost_directions.dim,
        "window": window,
        "n": n,
    }


def obs_audit(app: str = "cl", seed: int = 0, window: Optional[int] = None, estimator: str = "ekf",
              **kwargs) -> dict:
    """Run one audit and return a JSON-ready report."""
    if app == "cl":
        robots = kwargs.pop("robots", 3)
        w = 4 * 3 * robots if window is None else window
        trace = cl_audit_trace(estimator, seed, robots=robots, steps=max(w, kwargs.pop("steps", 0)), **kwargs)
    elif app == "tt":
        w = 12 if window is None else window
        trace = tt_audit_trace(estimator, seed, steps=max(w, kwargs.pop("steps", 0)), **kwargs)
    else:
        raise ContractViolation(f"unknown app {app!r}")
    out = audit_report(trace, w)
    out.update(app=app, seed=seed, estimator=estimator)
    return out
