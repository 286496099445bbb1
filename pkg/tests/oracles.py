"""Independent reference implementations used by the tests."""
from __future__ import annotations

import numpy as np

from tekf.core import NoiseSpec, SystemModel


def fd_jacobian(fun, x, rel_step=1e-6):
    """Central differences with step ``rel_step * max(1, |x_i|)``."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def rel_err(A, B):
    A, B = np.asarray(A), np.asarray(B)
    return np.linalg.norm(A - B) / max(1.0, np.linalg.norm(B))


def information_filter(x0, P0, F, G, Q, H, R, us, ys):
    """Linear filter in information form: Y = P^-1, y = Y x."""
    Y = np.linalg.inv(P0)
    yv = Y @ x0
    out = []
    for u, z in zip(us, ys):
        P = np.linalg.inv(Y)
        x = F @ (P @ yv) + u
        P = F @ P @ F.T + G @ Q @ G.T
        Y = np.linalg.inv(P)
        yv = Y @ x
        Ri = np.linalg.inv(R)
        Y = Y + H.T @ Ri @ H
        yv = yv + H.T @ Ri @ z
        P = np.linalg.inv(Y)
        out.append((P @ yv, P))
    return out


def linear_model(F, G, H, name="linear"):
    """Time-invariant model ``x' = F x + u + G v``, ``y = H x``."""
    F, G, H = (np.asarray(M, dtype=float) for M in (F, G, H))
    return SystemModel(
        n=F.shape[0], q=G.shape[1],
        f=lambda x, u, v: F @ x + u + G @ v,
        F=lambda x, u: F, G=lambda x, u: G,
        h=lambda x, ctx: H @ x, H=lambda x, ctx: H,
        name=name,
    )


def random_walk_toy(sigma_q=0.3, sigma_r=0.5):
    """2D position random walk observed directly; consistent by construction."""
    model = linear_model(np.eye(2), np.eye(2), np.eye(2), "rw2")
    return model, NoiseSpec(sigma_q**2 * np.eye(2), sigma_r**2 * np.eye(2))
