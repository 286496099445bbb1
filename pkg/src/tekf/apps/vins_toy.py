"""Visual-inertial unobservable-subspace toy.

Only the structure of the error-state unobservable basis is modelled here:
``(theta, p, v, b_g, b_a, f_1, ..., f_m)``, each 3-dimensional.  Used to
exercise transformation design on a basis whose leading block is singular.
"""
from __future__ import annotations

import numpy as np

from ..transform import Transformation

GRAVITY = np.array([0.0, 0.0, -9.81])


def skew(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])


def vins_dim(n_features: int) -> int:
    return 15 + 3 * n_features


def _split(x):
    x = np.asarray(x, dtype=float)
    p, v = x[3:6], x[6:9]
    feats = x[15:].reshape(-1, 3)
    return p, v, feats


def vins_unobservable_basis(x, g=GRAVITY) -> np.ndarray:
    """Global translation (3 columns) and yaw about gravity (1 column)."""
    p, v, feats = _split(x)
    n = vins_dim(len(feats))
    N = np.zeros((n, 4))
    N[0:3, 3] = g
    N[3:6, :3] = np.eye(3)
    N[3:6, 3] = -skew(p) @ g
    N[6:9, 3] = -skew(v) @ g
    for i, f in enumerate(feats):
        r = 15 + 3 * i
        N[r:r + 3, :3] = np.eye(3)
        N[r:r + 3, 3] = -skew(f) @ g
    return N


def _coupling(x) -> np.ndarray:
    p, v, feats = _split(x)
    C = np.zeros((vins_dim(len(feats)) - 3, 3))
    C[0:3] = -skew(p)
    C[3:6] = -skew(v)
    for i, f in enumerate(feats):
        C[12 + 3 * i:15 + 3 * i] = -skew(f)
    return C


def vins_transform() -> Transformation:
    """Rotation-coupling transformation: maps the yaw column to ``[g; 0]``."""

    def T_inv(x):
        C = _coupling(x)
        M = np.eye(C.shape[0] + 3)
        M[3:, :3] = C
        return M

    def T(x):
        C = _coupling(x)
        M = np.eye(C.shape[0] + 3)
        M[3:, :3] = -C
        return M

    return Transformation(T, T_inv, name="vins")
