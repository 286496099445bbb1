"""Planar multi-robot cooperative localization.

State layout: ``(p_1, psi_1, ..., p_m, psi_m)``, ``n = 3m``.  Inputs and
process noise share the layout ``(v_x, v_y, omega)`` per robot, with the
linear velocity expressed in the body frame.

Measurements are relative positions of robot ``j`` in the frame of robot
``i``: ``R(psi_i)^T (p_j - p_i)``.  A measurement ``ctx`` is a tuple of
``(i, j)`` pairs.  ``j`` may also be a known 2-vector anchor (a landmark)
instead of a robot index.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..core import ContractViolation, Measurement, NoiseSpec, SystemModel, stack_measurements, wrap_angle
from ..transform import Transformation

J = np.array([[0.0, -1.0], [1.0, 0.0]])


def rot(psi: float) -> np.ndarray:
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class RobotPose:
    p: np.ndarray
    psi: float

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(2))
        object.__setattr__(self, "psi", float(wrap_angle(self.psi)))


@dataclass(frozen=True)
class FleetState:
    poses: tuple

    @property
    def m(self) -> int:
        return len(self.poses)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.r_[pose.p, pose.psi] for pose in self.poses])

    @classmethod
    def from_vector(cls, x) -> "FleetState":
        x = np.asarray(x, dtype=float).reshape(-1, 3)
        return cls(tuple(RobotPose(row[:2], row[2]) for row in x))


@dataclass(frozen=True)
class RelPosMeasurement:
    observer: int
    target: int
    z: np.ndarray
    R: np.ndarray


@dataclass(frozen=True)
class ClNoiseConfig:
    """Noise and timing of the CL simulation (defaults follow the reference setup)."""

    sigma_v: float = 0.15
    sigma_omega: float = 0.06
    sigma_z: float = 0.1
    dt: float = 2.0
    detection_prob: float = 0.2
    v_nominal: float = 0.3
    omega_max: float = 0.1

    def __post_init__(self):
        for name in ("sigma_v", "sigma_omega", "sigma_z", "dt"):
            if not getattr(self, name) >= 0.0:
                raise ContractViolation(f"{name} must be non-negative")
        if self.dt <= 0:
            raise ContractViolation("dt must be positive")
        if not 0.0 <= self.detection_prob <= 1.0:
            raise ContractViolation("detection_prob must lie in [0, 1]")

    def noise(self, m: int) -> NoiseSpec:
        q = np.tile([self.sigma_v**2, self.sigma_v**2, self.sigma_omega**2], m)
        return NoiseSpec(np.diag(q), self.sigma_z**2 * np.eye(2))


def _poses(x):
    return np.asarray(x, dtype=float).reshape(-1, 3)


def cl_normalize(x):
    X = _poses(x).copy()
    X[:, 2] = wrap_angle(X[:, 2])
    return X.reshape(-1)


def cl_model(m: int, cfg: ClNoiseConfig) -> SystemModel:
    """CL system with analytic Jacobians for ``m`` robots."""
    if m < 2:
        raise ContractViolation("cooperative localization needs at least two robots")
    dt = cfg.dt
    n = 3 * m
    idx = 3 * np.arange(m)

    def f(x, u, v):
        X = _poses(x)
        U = _poses(u) + _poses(v)
        c, s = np.cos(X[:, 2]), np.sin(X[:, 2])
        out = X.copy()
        out[:, 0] += (c * U[:, 0] - s * U[:, 1]) * dt
        out[:, 1] += (s * U[:, 0] + c * U[:, 1]) * dt
        out[:, 2] += U[:, 2] * dt
        return out.reshape(-1)

    def F(x, u):
        X, U = _poses(x), _poses(u)
        c, s = np.cos(X[:, 2]), np.sin(X[:, 2])
        # J R(psi) v dt
        dpx = (c * U[:, 0] - s * U[:, 1]) * dt
        dpy = (s * U[:, 0] + c * U[:, 1]) * dt
        out = np.eye(n)
        out[idx, idx + 2] = -dpy
        out[idx + 1, idx + 2] = dpx
        return out

    def F_fej(x_first, x_next, u):
        # position increment from first estimates keeps the rotation direction unobservable
        d = _poses(x_next)[:, :2] - _poses(x_first)[:, :2]
        out = np.eye(n)
        out[idx, idx + 2] = -d[:, 1]
        out[idx + 1, idx + 2] = d[:, 0]
        return out

    def G(x, u):
        X = _poses(x)
        c, s = np.cos(X[:, 2]) * dt, np.sin(X[:, 2]) * dt
        out = np.zeros((n, n))
        out[idx, idx] = c
        out[idx, idx + 1] = -s
        out[idx + 1, idx] = s
        out[idx + 1, idx + 1] = c
        out[idx + 2, idx + 2] = dt
        return out

    def _pairs(X, ctx):
        obs = np.fromiter((i for i, _ in ctx), dtype=int, count=len(ctx))
        targets = np.empty((len(ctx), 2))
        robot_target = np.full(len(ctx), -1)
        for k, (_, j) in enumerate(ctx):
            if np.ndim(j) == 0:
                robot_target[k] = j
                targets[k] = X[j, :2]
            else:
                targets[k] = j
        return obs, robot_target, targets - X[obs, :2]

    def h(x, ctx):
        X = _poses(x)
        obs, _, d = _pairs(X, ctx)
        c, s = np.cos(X[obs, 2]), np.sin(X[obs, 2])
        out = np.empty((len(ctx), 2))
        out[:, 0] = c * d[:, 0] + s * d[:, 1]
        out[:, 1] = -s * d[:, 0] + c * d[:, 1]
        return out.reshape(-1)

    def H(x, ctx):
        X = _poses(x)
        obs, tgt, d = _pairs(X, ctx)
        c, s = np.cos(X[obs, 2]), np.sin(X[obs, 2])
        rows = 2 * np.arange(len(ctx))
        out = np.zeros((2 * len(ctx), n))
        ci = 3 * obs
        # -R_i^T on p_i, -R_i^T J d on psi_i
        out[rows, ci], out[rows, ci + 1] = -c, -s
        out[rows + 1, ci], out[rows + 1, ci + 1] = s, -c
        out[rows, ci + 2] = -(c * -d[:, 1] + s * d[:, 0])
        out[rows + 1, ci + 2] = -(-s * -d[:, 1] + c * d[:, 0])
        hit = tgt >= 0
        cj = 3 * tgt[hit]
        r = rows[hit]
        out[r, cj], out[r, cj + 1] = c[hit], s[hit]
        out[r + 1, cj], out[r + 1, cj + 1] = -s[hit], c[hit]
        return out

    return SystemModel(n=n, q=n, f=f, F=F, G=G, h=h, H=H, normalize=cl_normalize, F_fej=F_fej, name=f"cl{m}")


def cl_measurement(meas: Iterable[RelPosMeasurement]) -> Measurement:
    return stack_measurements([(mm.z, mm.R, (mm.observer, mm.target)) for mm in meas])


def cl_unobservable_basis(x) -> np.ndarray:
    """Global translation and rotation directions, ``n x 3``."""
    X = _poses(x)
    m = X.shape[0]
    N = np.zeros((3 * m, 3))
    for i in range(m):
        N[3 * i:3 * i + 2, :2] = np.eye(2)
        N[3 * i:3 * i + 2, 2] = J @ X[i, :2]
        N[3 * i + 2, 2] = 1.0
    return N


def _pose_block(p) -> np.ndarray:
    B = np.eye(3)
    B[:2, 2] = J @ p
    return B


def _pose_block_inv(p) -> np.ndarray:
    B = np.eye(3)
    B[:2, 2] = -J @ p
    return B


def _t1_inv(x):
    X = _poses(x)
    m = X.shape[0]
    M = np.eye(3 * m)
    M[:3, :3] = _pose_block(X[0, :2])
    for j in range(1, m):
        M[3 * j:3 * j + 3, :3] = _pose_block(X[j, :2])
    return M


def _t1(x):
    X = _poses(x)
    m = X.shape[0]
    T = np.eye(3 * m)
    T[:3, :3] = _pose_block_inv(X[0, :2])
    for j in range(1, m):
        T[3 * j:3 * j + 3, :3] = -_pose_block(X[j, :2] - X[0, :2])
    return T


def _t2_inv(x):
    X = _poses(x)
    M = np.eye(X.size)
    for i in range(X.shape[0]):
        M[3 * i:3 * i + 2, 3 * i + 2] = J @ X[i, :2]
    return M


def _t2(x):
    X = _poses(x)
    T = np.eye(X.size)
    for i in range(X.shape[0]):
        T[3 * i:3 * i + 2, 3 * i + 2] = -J @ X[i, :2]
    return T


def _solve_pose(p_pred, e_p, e_psi):
    # (I - e_psi J) p = p_pred + e_p; det = 1 + e_psi^2
    A = np.eye(2) - e_psi * J
    return np.linalg.solve(A, p_pred + e_p)


def cl_exact_update_closed_form(pred, correction, transform: str = "t2") -> np.ndarray:
    """Closed-form solution of ``x = x_pred + T(x)^-1 e`` for T1 or T2."""
    X = _poses(pred)
    E = _poses(correction)
    out = np.empty_like(X)
    if transform == "t2":
        for i in range(X.shape[0]):
            out[i, :2] = _solve_pose(X[i, :2], E[i, :2], E[i, 2])
            out[i, 2] = X[i, 2] + E[i, 2]
    elif transform == "t1":
        e1p, e1psi = E[0, :2], E[0, 2]
        out[0, :2] = _solve_pose(X[0, :2], e1p, e1psi)
        out[0, 2] = X[0, 2] + e1psi
        for j in range(1, X.shape[0]):
            out[j, :2] = _solve_pose(X[j, :2], e1p + E[j, :2], e1psi)
            out[j, 2] = X[j, 2] + e1psi + E[j, 2]
    else:
        raise ContractViolation(f"unknown CL transformation {transform!r}")
    return out.reshape(-1)


def cl_transform_t1() -> Transformation:
    """Basis-partition transformation anchored on robot 1's pose block."""
    return Transformation(
        _t1, _t1_inv, name="t1", exact_solver=lambda x, e: cl_exact_update_closed_form(x, e, "t1")
    )


def cl_transform_t2() -> Transformation:
    """Block-diagonal transformation making the propagation Jacobian the identity."""
    return Transformation(
        _t2,
        _t2_inv,
        name="t2",
        identity_propagation=True,
        exact_solver=lambda x, e: cl_exact_update_closed_form(x, e, "t2"),
    )


# --- simulation ------------------------------------------------------------


@dataclass
class ClTrial:
    """One simulated CL run.

    ``truth[k]`` is the true state at step ``k`` (``k = 0..steps``);
    ``odometry[k]`` drives the transition ``k -> k+1``; ``measurements[k]``
    is observed at step ``k + 1``.
    """

    truth: np.ndarray
    true_inputs: np.ndarray
    odometry: np.ndarray
    measurements: list


def initial_fleet(m: int, rng: np.random.Generator, spread: float = 10.0) -> np.ndarray:
    X = np.empty((m, 3))
    X[:, :2] = rng.uniform(-spread, spread, size=(m, 2))
    X[:, 2] = rng.uniform(-np.pi, np.pi, size=m)
    return X.reshape(-1)


def simulate_cl(m: int, steps: int, cfg: ClNoiseConfig, rng: np.random.Generator, x0=None) -> ClTrial:
    """Random-motion CL run with noisy odometry and random pairwise detections."""
    model = cl_model(m, cfg)
    x = initial_fleet(m, rng) if x0 is None else np.asarray(x0, dtype=float)
    truth = [x]
    true_inputs, odometry, measurements = [], [], []
    R = cfg.sigma_z**2 * np.eye(2)
    pairs = [(i, j) for i in range(m) for j in range(m) if i != j]
    for _ in range(steps):
        u = np.zeros((m, 3))
        u[:, 0] = cfg.v_nominal
        u[:, 2] = rng.uniform(-cfg.omega_max, cfg.omega_max, size=m)
        u = u.reshape(-1)
        noise = rng.normal(size=(m, 3)) * np.array([cfg.sigma_v, cfg.sigma_v, cfg.sigma_omega])
        x = model.propagate(x, u)
        truth.append(x)
        true_inputs.append(u)
        odometry.append(u + noise.reshape(-1))
        detected = rng.random(len(pairs)) < cfg.detection_prob
        w = rng.normal(size=(len(pairs), 2)) * cfg.sigma_z
        step_meas = []
        for (i, j), hit, wk in zip(pairs, detected, w):
            if hit:
                z = model.h(x, ((i, j),)) + wk
                step_meas.append(RelPosMeasurement(i, j, z, R))
        measurements.append(step_meas)
    return ClTrial(np.array(truth), np.array(true_inputs), np.array(odometry), measurements)


def pose_slices(m: int) -> list[tuple[Sequence[int], int]]:
    return [((3 * i, 3 * i + 1), 3 * i + 2) for i in range(m)]
