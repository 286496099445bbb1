"""Local observability matrices, numerical kernels and subspace comparisons."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .core import ContractViolation

DEFAULT_RANK_TOL = 1e-8


@dataclass(frozen=True)
class ObservabilityMatrix:
    """Stack ``[H_k; H_{k+1} F_k; ...; H_{k+l} F_{k+l-1} ... F_k]``.

    ``block_rows[i]`` gives the row slice of block ``i`` since measurement
    dimensions may differ between steps.
    """

    rows: np.ndarray
    window: int
    anchor_step: int
    block_rows: tuple

    @property
    def n(self) -> int:
        return self.rows.shape[1]

    def block(self, i: int) -> np.ndarray:
        return self.rows[self.block_rows[i]]


@dataclass(frozen=True)
class SubspaceBasis:
    """Orthonormal basis (columns) of a subspace of R^n."""

    basis: np.ndarray
    tol: float = DEFAULT_RANK_TOL

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def n(self) -> int:
        return self.basis.shape[0]

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T


@dataclass(frozen=True)
class MismatchReport:
    dim_nominal: int
    dim_estimator: int
    lost_directions: SubspaceBasis
    principal_angles: np.ndarray


def build_observability_matrix(
    F_seq: Sequence[np.ndarray], H_seq: Sequence[np.ndarray], anchor_step: int = 0
) -> ObservabilityMatrix:
    """Stack measurement Jacobians propagated through the transition chain."""
    if len(H_seq) != len(F_seq) + 1:
        raise ContractViolation("need exactly one more measurement Jacobian than transition Jacobians")
    n = np.asarray(F_seq[0]).shape[0] if F_seq else np.atleast_2d(H_seq[0]).shape[1]
    Phi = np.eye(n)
    blocks, slices, start = [], [], 0
    for i, H in enumerate(H_seq):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        if H.size == 0:
            H = H.reshape(0, n)
        if H.shape[1] != n:
            raise ContractViolation(f"H_seq[{i}] has {H.shape[1]} columns, expected {n}")
        if i > 0:
            F = np.asarray(F_seq[i - 1], dtype=float)
            if F.shape != (n, n):
                raise ContractViolation(f"F_seq[{i - 1}] has shape {F.shape}, expected ({n}, {n})")
            Phi = F @ Phi
        blocks.append(H @ Phi)
        slices.append(slice(start, start + H.shape[0]))
        start += H.shape[0]
    return ObservabilityMatrix(np.vstack(blocks), len(F_seq), anchor_step, tuple(slices))


def kernel_basis(M, tol: float = DEFAULT_RANK_TOL) -> SubspaceBasis:
    """Orthonormal basis of the numerical null space of ``M``.

    Singular values below ``tol * sigma_max`` count as zero.
    """
    if isinstance(M, ObservabilityMatrix):
        M = M.rows
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = M.shape[1]
    if M.shape[0] == 0:
        return SubspaceBasis(np.eye(n), tol)
    _, s, Vt = np.linalg.svd(M, full_matrices=True)
    if s.size == 0 or s[0] == 0.0:
        return SubspaceBasis(np.eye(n), tol)
    rank = int(np.sum(s > tol * s[0]))
    return SubspaceBasis(Vt[rank:].T.copy(), tol)


def as_subspace(A, tol: float = DEFAULT_RANK_TOL) -> SubspaceBasis:
    """Orthonormalize an arbitrary spanning set into a :class:`SubspaceBasis`."""
    if isinstance(A, SubspaceBasis):
        return A
    A = np.asarray(A, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    if A.shape[1] == 0:
        return SubspaceBasis(np.zeros((A.shape[0], 0)), tol)
    return SubspaceBasis(scipy.linalg.orth(A, rcond=tol), tol)


def subspace_contains(A, B, tol: float = 1e-8) -> bool:
    """True iff span(B) is contained in span(A)."""
    A, B = as_subspace(A), as_subspace(B)
    if A.n != B.n:
        raise ContractViolation("subspaces live in different ambient dimensions")
    if B.dim == 0:
        return True
    if A.dim == 0:
        return False
    resid = B.basis - A.basis @ (A.basis.T @ B.basis)
    return bool(np.all(np.linalg.norm(resid, axis=0) < tol))


def subspace_equal(A, B, tol: float = 1e-8) -> bool:
    A, B = as_subspace(A), as_subspace(B)
    return A.dim == B.dim and subspace_contains(A, B, tol) and subspace_contains(B, A, tol)


def principal_angles(A, B) -> np.ndarray:
    """Principal angles (radians, descending) between two subspaces."""
    A, B = as_subspace(A), as_subspace(B)
    if A.dim == 0 or B.dim == 0:
        return np.zeros(0)
    return scipy.linalg.subspace_angles(A.basis, B.basis)


def orthogonal_complement_within(outer, inner, tol: float = 1e-8) -> SubspaceBasis:
    """Directions of ``outer`` orthogonal to ``inner``."""
    outer, inner = as_subspace(outer), as_subspace(inner)
    if outer.dim == 0:
        return outer
    V = outer.basis
    if inner.dim:
        V = V - inner.basis @ (inner.basis.T @ V)
    if np.linalg.norm(V) < tol:
        return SubspaceBasis(np.zeros((outer.n, 0)), tol)
    U, s, _ = np.linalg.svd(V, full_matrices=False)
    keep = s > max(tol, tol * s[0]) if s.size else np.zeros(0, bool)
    return SubspaceBasis(U[:, keep], tol)


def mismatch_report(
    nominal: ObservabilityMatrix, estimator: ObservabilityMatrix, tol: float = DEFAULT_RANK_TOL
) -> MismatchReport:
    """Compare nominal and estimator kernels.

    ``lost_directions`` spans the part of the nominal kernel the estimator
    treats as observable.
    """
    if nominal.n != estimator.n:
        raise ContractViolation("observability matrices have different state dimensions")
    Kn = kernel_basis(nominal, tol)
    Ke = kernel_basis(estimator, tol)
    lost = orthogonal_complement_within(Kn, Ke, 1e-6)
    return MismatchReport(Kn.dim, Ke.dim, lost, principal_angles(Kn, Ke))


def is_forward_invariant(F: np.ndarray, kernel_now, kernel_next, tol: float = 1e-8) -> bool:
    """Check ``F Ker(O_k) ⊆ Ker(O_{k+1})``."""
    kernel_now = as_subspace(kernel_now)
    if kernel_now.dim == 0:
        return True
    image = F @ kernel_now.basis
    return subspace_contains(kernel_next, image, tol)


def kernel_in_measurement_kernel(H: np.ndarray, kernel, tol: float = 1e-8) -> bool:
    """Check ``Ker(O_k) ⊆ Ker(H_k)``."""
    kernel = as_subspace(kernel)
    if kernel.dim == 0 or np.asarray(H).size == 0:
        return True
    return bool(np.all(np.linalg.norm(H @ kernel.basis, axis=0) < tol))
