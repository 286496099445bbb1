"""Discrete-time nonlinear system abstraction and the classical / FEJ EKF.

State estimates are carried as :class:`GaussianBelief` values.  A
:class:`SystemModel` bundles the process and measurement functions with their
analytic Jacobians; every filter in the package is written against it.

Measurements whose dimension varies from step to step (pairwise robot
detections, alternating landmarks) are described by a :class:`Measurement`
carrying the stacked vector, its block-diagonal covariance and an opaque
``ctx`` that the model uses to evaluate ``h`` and ``H``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np
import scipy.linalg

SYMMETRY_TOL = 1e-10
PSD_TOL = 1e-9
MAX_INNOVATION_COND = 1e12


class EstimationError(Exception):
    """Base class for all estimation failures raised by this package."""


class ContractViolation(EstimationError, ValueError):
    """Inputs do not satisfy an operation's preconditions."""


class SingularInnovationError(EstimationError):
    """Innovation covariance is numerically singular."""


class DivergenceError(EstimationError):
    """An iterative solve or a filter run failed to converge."""


class DegenerateGeometryError(EstimationError):
    """Measurement geometry makes the model undefined (e.g. zero range)."""


def wrap_angle(a):
    """Wrap angles to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a, dtype=float), 2.0 * np.pi)


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


@dataclass(frozen=True)
class GaussianBelief:
    """Mean and covariance of the full stacked state.

    The covariance is re-symmetrized on construction and checked to be
    positive semi-definite up to round-off.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise ContractViolation(f"covariance shape {cov.shape} does not match mean length {n}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ContractViolation("belief contains non-finite entries")
        cov = symmetrize(cov)
        if n:
            w = np.linalg.eigvalsh(cov)
            if w[0] < -PSD_TOL * max(1.0, abs(w[-1])):
                raise ContractViolation("covariance is not positive semi-definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def n(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class NoiseSpec:
    """Process noise covariance ``Q`` and per-block measurement covariance ``R``.

    When several measurement blocks arrive at once their covariances are
    stacked block-diagonally (see :func:`stack_measurements`).
    """

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        for name, M in (("Q", Q), ("R", R)):
            if M.shape[0] != M.shape[1]:
                raise ContractViolation(f"{name} must be square")
            if not np.allclose(M, M.T, atol=SYMMETRY_TOL):
                raise ContractViolation(f"{name} must be symmetric")
            if M.size and np.linalg.eigvalsh(M)[0] < -PSD_TOL:
                raise ContractViolation(f"{name} must be positive semi-definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)


@dataclass(frozen=True)
class Measurement:
    """A stacked measurement vector ``y`` with covariance ``R``.

    ``ctx`` identifies which measurement functions produced each block; it is
    passed untouched to ``model.h``, ``model.H``, ``model.D`` and
    ``model.residual``.
    """

    y: np.ndarray
    R: np.ndarray
    ctx: Any = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).reshape(-1)
        R = np.asarray(self.R, dtype=float).reshape(y.size, y.size)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "R", R)

    @property
    def p(self) -> int:
        return self.y.size


def stack_measurements(blocks: list[tuple[np.ndarray, np.ndarray, Any]]) -> Measurement:
    """Stack ``(y, R, ctx)`` blocks into one measurement with block-diagonal R."""
    if not blocks:
        return Measurement(np.zeros(0), np.zeros((0, 0)), ())
    ys = [np.atleast_1d(np.asarray(y, dtype=float)) for y, _, _ in blocks]
    Rs = [np.atleast_2d(np.asarray(R, dtype=float)) for _, R, _ in blocks]
    return Measurement(np.concatenate(ys), scipy.linalg.block_diag(*Rs), tuple(c for _, _, c in blocks))


def _default_residual(y, y_pred, ctx):
    return y - y_pred


@dataclass(frozen=True)
class SystemModel:
    """Nonlinear system ``x' = f(x, u, v)``, ``y = h(x, ctx) + D w``.

    Parameters
    ----------
    n, q : int
        State and process-noise dimensions.
    f : callable ``(x, u, v) -> x'``
    F : callable ``(x, u) -> (n, n)``
        Jacobian of ``f`` w.r.t. the state at zero noise.
    G : callable ``(x, u) -> (n, q)``
        Jacobian of ``f`` w.r.t. the process noise.
    h : callable ``(x, ctx) -> (p,)``
        Noise-free measurement function.
    H : callable ``(x, ctx) -> (p, n)``
    D : callable ``(x, ctx) -> (p, p)``, optional
        Measurement-noise Jacobian; identity when omitted.
    residual : callable ``(y, y_pred, ctx) -> (p,)``, optional
        Innovation; wraps angular components where needed.
    normalize : callable ``(x) -> x``, optional
        Canonicalizes a state (angle wrapping) after every write.
    F_fej : callable ``(x_first, x_next_pred, u) -> (n, n)``, optional
        Propagation Jacobian built from first estimates; defaults to
        ``F(x_first, u)``.
    """

    n: int
    q: int
    f: Callable
    F: Callable
    G: Callable
    h: Callable
    H: Callable
    D: Optional[Callable] = None
    residual: Callable = _default_residual
    normalize: Optional[Callable] = None
    F_fej: Optional[Callable] = None
    name: str = ""

    def propagate(self, x, u, v=None):
        if v is None:
            v = np.zeros(self.q)
        x_next = np.asarray(self.f(x, u, v), dtype=float)
        return self.canonical(x_next)

    def canonical(self, x):
        return self.normalize(x) if self.normalize is not None else x

    def noise_jacobian(self, x, ctx, p: int) -> np.ndarray:
        if self.D is None:
            return np.eye(p)
        return np.asarray(self.D(x, ctx), dtype=float)


class LinearizationPolicy(enum.Enum):
    CURRENT_BEST = "current_best"
    FIRST_ESTIMATES = "first_estimates"


class FirstEstimateCache:
    """Remembers the first prediction made for each time step.

    A step's entry is written once and never overwritten, so Jacobians built
    from it stay bitwise identical regardless of later updates.
    """

    def __init__(self, keep: int = 2):
        self._store: dict[int, np.ndarray] = {}
        self._keep = keep

    def record(self, step: int, x) -> np.ndarray:
        if step not in self._store:
            self._store[step] = np.array(x, dtype=float)
            self._store[step].setflags(write=False)
            for old in [k for k in self._store if k <= step - self._keep]:
                del self._store[old]
        return self._store[step]

    def get(self, step: int) -> np.ndarray:
        return self._store[step]

    def __contains__(self, step: int) -> bool:
        return step in self._store


def _check_dim(x, n, what):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != n:
        raise ContractViolation(f"{what} has length {x.shape[0]}, expected {n}")
    return x


def propagate_mean(model: SystemModel, x, u) -> np.ndarray:
    """Noise-free state propagation ``f(x, u, 0)``."""
    x = _check_dim(x, model.n, "state")
    return model.propagate(x, u)


def ekf_predict(
    belief: GaussianBelief,
    model: SystemModel,
    u,
    noise: NoiseSpec,
    policy: LinearizationPolicy = LinearizationPolicy.CURRENT_BEST,
    first_estimate=None,
) -> GaussianBelief:
    """EKF time update ``P' = F P F^T + G Q G^T``.

    With ``FIRST_ESTIMATES`` the state Jacobian is evaluated at
    ``first_estimate`` (the cached first prediction of the prior state) through
    ``model.F_fej`` when the model provides one.
    """
    x = _check_dim(belief.mean, model.n, "belief mean")
    if noise.Q.shape != (model.q, model.q):
        raise ContractViolation(f"Q has shape {noise.Q.shape}, expected ({model.q}, {model.q})")
    x_pred = model.propagate(x, u)
    if policy is LinearizationPolicy.FIRST_ESTIMATES and first_estimate is not None:
        if model.F_fej is not None:
            F = model.F_fej(first_estimate, x_pred, u)
        else:
            F = model.F(first_estimate, u)
    else:
        F = model.F(x, u)
    G = model.G(x, u)
    P = F @ belief.cov @ F.T + G @ noise.Q @ G.T
    return GaussianBelief(x_pred, P)


def innovation_gain(P: np.ndarray, H: np.ndarray, DRD: np.ndarray) -> np.ndarray:
    """Kalman gain ``P H^T (H P H^T + D R D^T)^-1`` via a Cholesky solve."""
    HP = H @ P
    if not np.any(HP):
        # no cross-covariance: the gain is zero whatever S is
        return np.zeros_like(HP.T)
    S = symmetrize(HP @ H.T + DRD)
    w = np.linalg.eigvalsh(S)
    if w[0] <= 0.0 or w[-1] > MAX_INNOVATION_COND * w[0]:
        raise SingularInnovationError("innovation covariance is numerically singular")
    try:
        c = scipy.linalg.cho_factor(S)
    except np.linalg.LinAlgError as exc:
        raise SingularInnovationError("innovation covariance is not positive definite") from exc
    return scipy.linalg.cho_solve(c, HP).T


def ekf_update(
    belief: GaussianBelief,
    model: SystemModel,
    meas: Measurement,
    policy: LinearizationPolicy = LinearizationPolicy.CURRENT_BEST,
    first_estimate=None,
    joseph: bool = False,
) -> GaussianBelief:
    """Classical EKF measurement update in the ``(I - K H) P`` form.

    An empty measurement returns the belief unchanged.  ``joseph=True``
    switches to the Joseph-form covariance update.
    """
    if meas.p == 0:
        return belief
    x = belief.mean
    x_lin = first_estimate if (policy is LinearizationPolicy.FIRST_ESTIMATES and first_estimate is not None) else x
    H = np.asarray(model.H(x_lin, meas.ctx), dtype=float)
    D = model.noise_jacobian(x_lin, meas.ctx, meas.p)
    DRD = D @ meas.R @ D.T
    K = innovation_gain(belief.cov, H, DRD)
    r = model.residual(meas.y, model.h(x, meas.ctx), meas.ctx)
    x_new = model.canonical(x + K @ r)
    IKH = np.eye(model.n) - K @ H
    if joseph:
        P = IKH @ belief.cov @ IKH.T + K @ DRD @ K.T
    else:
        P = IKH @ belief.cov
    return GaussianBelief(x_new, P)
