"""Single-robot planar tracking from alternating bearing-only landmarks.

State ``(x, y, psi)``; input ``(v_x, v_y, omega)`` in the body frame.  The
measurement ``ctx`` is a tuple of landmark indices observed at that step.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..core import (
    ContractViolation,
    DegenerateGeometryError,
    GaussianBelief,
    Measurement,
    NoiseSpec,
    SystemModel,
    ekf_predict,
    stack_measurements,
    wrap_angle,
)
from ..transform import Transformation
from .cl import J, rot

MIN_RANGE = 1e-9


@dataclass(frozen=True)
class TargetState:
    p: np.ndarray
    psi: float

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(2))
        object.__setattr__(self, "psi", float(wrap_angle(self.psi)))

    def to_vector(self) -> np.ndarray:
        return np.r_[self.p, self.psi]


@dataclass(frozen=True)
class Landmark:
    id: int
    p_s: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p_s, dtype=float).reshape(2)
        if not np.all(np.isfinite(p)):
            raise ContractViolation("landmark coordinates must be finite")
        object.__setattr__(self, "p_s", p)


@dataclass(frozen=True)
class BearingMeasurement:
    landmark_id: int
    z: float
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "z", float(wrap_angle(self.z)))


@dataclass(frozen=True)
class TtConfig:
    """Circle-tracking scenario; defaults follow the reference simulation."""

    v: float = 0.3
    omega: float = 0.1
    sigma_v: float = 0.15
    sigma_omega: float = 0.06
    sigma_bearing: float = 0.1
    dt: float = 0.4
    switch_period: int = 1
    landmarks: tuple = ((0.0, 3.0), (1.0, 4.0))

    def __post_init__(self):
        if self.dt <= 0 or self.switch_period < 1:
            raise ContractViolation("dt must be positive and switch_period >= 1")
        if min(self.sigma_v, self.sigma_omega, self.sigma_bearing) < 0:
            raise ContractViolation("noise levels must be non-negative")

    def noise(self) -> NoiseSpec:
        return NoiseSpec(np.diag([self.sigma_v**2, self.sigma_v**2, self.sigma_omega**2]),
                         np.array([[self.sigma_bearing**2]]))

    def landmark_list(self) -> list[Landmark]:
        return [Landmark(i, p) for i, p in enumerate(self.landmarks)]


def tt_normalize(x):
    x = np.array(x, dtype=float)
    x[2] = wrap_angle(x[2])
    return x


def _delta(x, lm: Landmark):
    d = lm.p_s - np.asarray(x[:2], dtype=float)
    r2 = d @ d
    if r2 < MIN_RANGE**2:
        raise DegenerateGeometryError("robot coincides with a landmark")
    return d, r2


def tt_model(landmarks: Sequence[Landmark], cfg: TtConfig) -> SystemModel:
    if len(landmarks) < 1:
        raise ContractViolation("need at least one landmark")
    lms = {lm.id: lm for lm in landmarks}
    dt = cfg.dt

    def f(x, u, v):
        w = np.asarray(u, dtype=float) + np.asarray(v, dtype=float)
        out = np.empty(3)
        out[:2] = x[:2] + rot(x[2]) @ w[:2] * dt
        out[2] = x[2] + w[2] * dt
        return out

    def F(x, u):
        out = np.eye(3)
        out[:2, 2] = J @ rot(x[2]) @ np.asarray(u, dtype=float)[:2] * dt
        return out

    def F_fej(x_first, x_next, u):
        out = np.eye(3)
        out[:2, 2] = J @ (np.asarray(x_next)[:2] - np.asarray(x_first)[:2])
        return out

    def G(x, u):
        out = np.zeros((3, 3))
        out[:2, :2] = rot(x[2]) * dt
        out[2, 2] = dt
        return out

    def h(x, ctx):
        out = np.empty(len(ctx))
        for k, lid in enumerate(ctx):
            d, _ = _delta(x, lms[lid])
            out[k] = np.arctan2(d[1], d[0]) - x[2]
        return wrap_angle(out)

    def H(x, ctx):
        out = np.zeros((len(ctx), 3))
        for k, lid in enumerate(ctx):
            d, r2 = _delta(x, lms[lid])
            out[k] = [d[1] / r2, -d[0] / r2, -1.0]
        return out

    def residual(y, y_pred, ctx):
        return wrap_angle(np.asarray(y) - np.asarray(y_pred))

    return SystemModel(n=3, q=3, f=f, F=F, G=G, h=h, H=H, residual=residual,
                       normalize=tt_normalize, F_fej=F_fej, name="tt")


def tt_measurement(meas: Sequence[BearingMeasurement]) -> Measurement:
    return stack_measurements([(np.array([b.z]), np.array([[b.sigma**2]]), b.landmark_id) for b in meas])


def tt_single_landmark_basis(x, lm: Landmark) -> np.ndarray:
    """Unobservable direction when only ``lm`` is observed, ``3 x 1``."""
    x = np.asarray(x, dtype=float)
    return np.r_[J @ (x[:2] - lm.p_s), 1.0][:, None]


def _tt_T(x):
    T = np.eye(3)
    T[:2, 2] = -J @ np.asarray(x, dtype=float)[:2]
    return T


def _tt_T_inv(x):
    T = np.eye(3)
    T[:2, 2] = J @ np.asarray(x, dtype=float)[:2]
    return T


def _tt_exact(x_pred, e):
    A = np.eye(2) - e[2] * J
    p = np.linalg.solve(A, x_pred[:2] + e[:2])
    return np.r_[p, x_pred[2] + e[2]]


def tt_transform() -> Transformation:
    return Transformation(_tt_T, _tt_T_inv, name="tt-default", identity_propagation=True, exact_solver=_tt_exact)


def dead_reckoning_step(belief: GaussianBelief, model: SystemModel, u, noise: NoiseSpec) -> GaussianBelief:
    """Propagation only; no measurement is ever applied."""
    return ekf_predict(belief, model, u, noise)


# --- simulation ------------------------------------------------------------


@dataclass
class TtTrial:
    truth: np.ndarray
    true_inputs: np.ndarray
    odometry: np.ndarray
    measurements: list


def landmark_schedule(step: int, n_landmarks: int, period: int) -> int:
    """Index of the landmark observing at ``step`` (1-based) under strict alternation."""
    return ((step - 1) // period) % n_landmarks


def simulate_tt(steps: int, cfg: TtConfig, rng: np.random.Generator, x0=None) -> TtTrial:
    lms = cfg.landmark_list()
    model = tt_model(lms, cfg)
    x = np.zeros(3) if x0 is None else np.asarray(x0, dtype=float)
    u = np.array([cfg.v, 0.0, cfg.omega])
    sig = np.array([cfg.sigma_v, cfg.sigma_v, cfg.sigma_omega])
    truth, odo, meas = [x], [], []
    for k in range(1, steps + 1):
        noise = rng.normal(size=3) * sig
        x = model.propagate(x, u)
        truth.append(x)
        odo.append(u + noise)
        lid = landmark_schedule(k, len(lms), cfg.switch_period)
        z = model.h(x, (lid,))[0] + rng.normal() * cfg.sigma_bearing
        meas.append([BearingMeasurement(lid, z, cfg.sigma_bearing)])
    return TtTrial(np.array(truth), np.tile(u, (steps, 1)), np.array(odo), meas)


def pose_slices() -> list:
    return [((0, 1), 2)]
