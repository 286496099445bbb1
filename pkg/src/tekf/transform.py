"""Observability-preserving linear time-varying transformations and the
two transformed EKFs built on them.

``Tekf1`` filters the transformed error state ``T(x) e`` and keeps its
covariance in transformed coordinates.  ``Tekf2`` runs the classical EKF
recursion in the original coordinates and restores equivalence through the
correction factor ``dT = T(x_post)^-1 T(x_pred)``.  With the same
transformation and update mode both produce identical estimates.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .core import (
    ContractViolation,
    DivergenceError,
    EstimationError,
    GaussianBelief,
    Measurement,
    NoiseSpec,
    SystemModel,
    ekf_predict,
    innovation_gain,
    symmetrize,
)

EXACT_TOL = 1e-12
EXACT_MAX_ITER = 50
N1_MAX_COND = 1e12


class TransformDesignError(EstimationError):
    """The basis partition cannot produce an invertible transformation."""


class UpdateMode(enum.Enum):
    EXACT = "exact"
    APPROXIMATE = "approximate"


@dataclass(frozen=True)
class Transformation:
    """State-dependent invertible matrix ``T(x)`` with analytic inverse.

    Optional hooks carry application knowledge:

    ``identity_propagation``
        ``T(x') F(x) T(x)^-1 = I`` for every transition, so covariance
        propagation in transformed coordinates skips the product.
    ``exact_solver``
        ``(x_pred, correction) -> x`` solving ``x = x_pred + T(x)^-1 correction``
        in closed form.
    """

    T: Callable[[np.ndarray], np.ndarray]
    T_inv: Callable[[np.ndarray], np.ndarray]
    name: str = ""
    identity_propagation: bool = False
    exact_solver: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None


def identity_transformation(n: int) -> Transformation:
    eye = np.eye(n)
    return Transformation(
        lambda x: eye,
        lambda x: eye,
        name="identity",
        exact_solver=lambda x_pred, c: x_pred + c,
    )


# --- transformation design -------------------------------------------------


def pivot_rows(N: np.ndarray) -> np.ndarray:
    """Row order placing a well-conditioned r x r block of ``N`` on top.

    Keeps the natural order when the leading block is already invertible.
    """
    N = np.asarray(N, dtype=float)
    n, r = N.shape
    if r == 0:
        return np.arange(n)
    if np.linalg.cond(N[:r]) < N1_MAX_COND:
        return np.arange(n)
    _, _, piv = scipy.linalg.qr(N.T, pivoting=True, mode="economic")
    top = np.sort(piv[:r])
    rest = np.setdiff1d(np.arange(n), top)
    return np.concatenate([top, rest])


def basis_transform_matrices(N, perm: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """``T = [[N1, 0], [N2, I]]^-1 P`` and its inverse for one basis matrix.

    ``P`` permutes rows of ``N`` so that ``P N = [N1; N2]``; then
    ``T N = [I_r; 0]``.
    """
    N = np.asarray(N, dtype=float)
    if N.ndim == 1:
        N = N[:, None]
    n, r = N.shape
    if r > n:
        raise ContractViolation("basis has more columns than rows")
    if perm is None:
        perm = pivot_rows(N)
    PN = N[perm]
    N1, N2 = PN[:r], PN[r:]
    if r and np.linalg.cond(N1) > N1_MAX_COND:
        raise TransformDesignError("leading basis block is singular for the chosen row order")
    N1_inv = np.linalg.inv(N1) if r else np.zeros((0, 0))
    M_inv = np.zeros((n, n))
    M_inv[:r, :r] = N1_inv
    M_inv[r:, :r] = -N2 @ N1_inv
    M_inv[r:, r:] = np.eye(n - r)
    M = np.zeros((n, n))
    M[:r, :r] = N1
    M[r:, :r] = N2
    M[r:, r:] = np.eye(n - r)
    P = np.eye(n)[perm]
    return M_inv @ P, P.T @ M


def transformation_from_basis(
    basis_fn: Callable[[np.ndarray], np.ndarray], x_ref=None, perm=None, name: str = "basis"
) -> Transformation:
    """Build ``T(x)`` from a state-dependent unobservable basis ``N(x)``.

    The row permutation is fixed once, from ``perm`` or from ``N(x_ref)``, so
    that ``T`` stays continuous in ``x``.
    """
    if perm is None and x_ref is not None:
        perm = pivot_rows(basis_fn(x_ref))

    def T(x):
        return basis_transform_matrices(basis_fn(x), perm)[0]

    def T_inv(x):
        return basis_transform_matrices(basis_fn(x), perm)[1]

    return Transformation(T, T_inv, name=name)


@dataclass(frozen=True)
class ConstancyReport:
    is_constant: bool
    max_deviation: float
    F_bars: np.ndarray


def transformed_propagation_jacobian(trans: Transformation, model: SystemModel, x_prev, u, x_pred=None):
    if x_pred is None:
        x_pred = model.propagate(x_prev, u)
    return trans.T(x_pred) @ model.F(x_prev, u) @ trans.T_inv(x_prev)


def verify_constant_F(
    trans: Transformation, model: SystemModel, samples: Sequence[tuple], tol: float = 1e-9
) -> ConstancyReport:
    """Evaluate ``T(f(x,u)) F(x,u) T(x)^-1`` on ``(x, u)`` samples and test constancy."""
    if len(samples) < 2:
        raise ContractViolation("need at least two samples")
    F_bars = np.stack([transformed_propagation_jacobian(trans, model, x, u) for x, u in samples])
    dev = float(np.ptp(F_bars, axis=0).max())
    return ConstancyReport(dev < tol, dev, F_bars)


# --- exact update ----------------------------------------------------------


def solve_exact_update(
    x_pred,
    correction,
    T_inv: Callable[[np.ndarray], np.ndarray],
    tol: float = EXACT_TOL,
    max_iter: int = EXACT_MAX_ITER,
) -> np.ndarray:
    """Solve ``x = x_pred + T_inv(x) @ correction`` by damped fixed-point iteration.

    Seeded at the approximate update.  The damping factor halves whenever a
    step grows, which rescues mildly expansive maps.
    """
    x_pred = np.asarray(x_pred, dtype=float)
    c = np.asarray(correction, dtype=float)

    def g(x):
        return x_pred + T_inv(x) @ c

    x = g(x_pred)
    alpha, last_step = 1.0, np.inf
    for _ in range(max_iter):
        x_new = (1.0 - alpha) * x + alpha * g(x)
        step = np.linalg.norm(x_new - x)
        x = x_new
        if not np.isfinite(step):
            break
        if step <= tol * (1.0 + np.linalg.norm(x)):
            if np.linalg.norm(x - g(x)) <= 10 * tol * (1.0 + np.linalg.norm(x)):
                return x
        if step > last_step:
            alpha *= 0.5
        last_step = step
    raise DivergenceError("exact state update did not converge")


def exact_update(trans: Transformation, x_pred, correction) -> np.ndarray:
    if trans.exact_solver is not None:
        return np.asarray(trans.exact_solver(x_pred, correction), dtype=float)
    return solve_exact_update(x_pred, correction, trans.T_inv)


# --- T-EKF 1 ---------------------------------------------------------------


@dataclass(frozen=True)
class Tekf1State:
    """Mean in original coordinates, covariance of the transformed error."""

    mean: np.ndarray
    cov_bar: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = symmetrize(np.array(self.cov_bar, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise ContractViolation("cov_bar dimension does not match mean")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ContractViolation("T-EKF 1 state contains non-finite entries")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov_bar", cov)

    def to_belief(self, trans: Transformation) -> GaussianBelief:
        """Covariance mapped back to original coordinates."""
        Ti = trans.T_inv(self.mean)
        return GaussianBelief(self.mean, Ti @ self.cov_bar @ Ti.T)


def tekf1_init(belief: GaussianBelief, trans: Transformation) -> Tekf1State:
    T = trans.T(belief.mean)
    return Tekf1State(belief.mean, T @ belief.cov @ T.T)


def _checked(M, what):
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise TransformDesignError(f"{what} is not finite at this state")
    return M


def tekf1_predict(
    state: Tekf1State, model: SystemModel, trans: Transformation, u, noise: NoiseSpec
) -> Tekf1State:
    x = state.mean
    x_pred = model.propagate(x, u)
    T_pred = _checked(trans.T(x_pred), "transformation")
    G_bar = T_pred @ model.G(x, u)
    Q_term = G_bar @ noise.Q @ G_bar.T
    if trans.identity_propagation:
        P = state.cov_bar + Q_term
    else:
        F_bar = T_pred @ model.F(x, u) @ _checked(trans.T_inv(x), "inverse transformation")
        P = F_bar @ state.cov_bar @ F_bar.T + Q_term
    return Tekf1State(x_pred, P)


def tekf1_update(
    state: Tekf1State,
    model: SystemModel,
    trans: Transformation,
    meas: Measurement,
    mode: UpdateMode = UpdateMode.EXACT,
) -> Tekf1State:
    if meas.p == 0:
        return state
    x_pred = state.mean
    Ti_pred = _checked(trans.T_inv(x_pred), "inverse transformation")
    H_bar = model.H(x_pred, meas.ctx) @ Ti_pred
    D = model.noise_jacobian(x_pred, meas.ctx, meas.p)
    K_bar = innovation_gain(state.cov_bar, H_bar, D @ meas.R @ D.T)
    r = model.residual(meas.y, model.h(x_pred, meas.ctx), meas.ctx)
    correction = K_bar @ r
    if mode is UpdateMode.EXACT:
        x_new = exact_update(trans, x_pred, correction)
    else:
        x_new = x_pred + Ti_pred @ correction
    P = (np.eye(model.n) - K_bar @ H_bar) @ state.cov_bar
    return Tekf1State(model.canonical(x_new), P)


# --- T-EKF 2 ---------------------------------------------------------------


def tekf2_predict(belief: GaussianBelief, model: SystemModel, u, noise: NoiseSpec) -> GaussianBelief:
    return ekf_predict(belief, model, u, noise)


def tekf2_update(
    belief: GaussianBelief,
    model: SystemModel,
    trans: Transformation,
    meas: Measurement,
    mode: UpdateMode = UpdateMode.EXACT,
) -> GaussianBelief:
    """Classical-gain update followed by the correction factor on mean and covariance."""
    if meas.p == 0:
        return belief
    x_pred, P_pred = belief.mean, belief.cov
    H = model.H(x_pred, meas.ctx)
    D = model.noise_jacobian(x_pred, meas.ctx, meas.p)
    K = innovation_gain(P_pred, H, D @ meas.R @ D.T)
    r = model.residual(meas.y, model.h(x_pred, meas.ctx), meas.ctx)
    T_pred = _checked(trans.T(x_pred), "transformation")
    if mode is UpdateMode.EXACT:
        x_new = exact_update(trans, x_pred, T_pred @ (K @ r))
    else:
        x_new = x_pred + K @ r
    x_new = model.canonical(x_new)
    dT = _checked(trans.T_inv(x_new), "inverse transformation") @ T_pred
    S = (np.eye(model.n) - K @ H) @ P_pred
    return GaussianBelief(x_new, dT @ S @ dT.T)


def tekf2_step(
    belief: GaussianBelief,
    model: SystemModel,
    trans: Transformation,
    u,
    meas: Optional[Measurement],
    noise: NoiseSpec,
    mode: UpdateMode = UpdateMode.EXACT,
) -> GaussianBelief:
    pred = tekf2_predict(belief, model, u, noise)
    if meas is None:
        return pred
    return tekf2_update(pred, model, trans, meas, mode)
