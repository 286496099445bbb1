"""Stateful filter wrappers with a common ``predict / update / estimate`` API.

Each wrapper can record the Jacobians it linearized with, so that the
estimator's observability matrix can be rebuilt after a run.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .core import (
    FirstEstimateCache,
    GaussianBelief,
    LinearizationPolicy,
    Measurement,
    NoiseSpec,
    SystemModel,
    ekf_predict,
    ekf_update,
)
from .transform import (
    Tekf1State,
    Transformation,
    UpdateMode,
    tekf1_init,
    tekf1_predict,
    tekf1_update,
    tekf2_update,
)

ESTIMATORS = ("ekf", "fej", "tekf1", "tekf2", "dr")


class _Base:
    def __init__(self, model: SystemModel, noise: NoiseSpec, belief: GaussianBelief, record: bool = False):
        self.model = model
        self.noise = noise
        self.record = record
        self.F_trace: list[np.ndarray] = []
        self.H_trace: list[np.ndarray] = []
        self.step = 0

    def _rec_F(self, F):
        if self.record:
            self.F_trace.append(F)

    def _rec_H(self, H):
        if self.record:
            self.H_trace.append(H)

    def _rec_H_for(self, x, meas: Optional[Measurement], T_inv=None):
        if not self.record:
            return
        if meas is None or meas.p == 0:
            self.H_trace.append(np.zeros((0, self.model.n)))
            return
        H = self.model.H(x, meas.ctx)
        self.H_trace.append(H if T_inv is None else H @ T_inv)


class Ekf(_Base):
    def __init__(self, model, noise, belief, record=False, joseph=False):
        super().__init__(model, noise, belief, record)
        self.belief = belief
        self.joseph = joseph

    def predict(self, u):
        self._rec_F(self.model.F(self.belief.mean, u))
        self.belief = ekf_predict(self.belief, self.model, u, self.noise)
        self.step += 1

    def update(self, meas: Optional[Measurement]):
        self._rec_H_for(self.belief.mean, meas)
        if meas is not None:
            self.belief = ekf_update(self.belief, self.model, meas, joseph=self.joseph)

    def estimate(self):
        return self.belief.mean, self.belief.cov


class Fej(Ekf):
    """EKF with Jacobians frozen at the first prediction of each step's state."""

    def __init__(self, model, noise, belief, record=False, joseph=False):
        super().__init__(model, noise, belief, record, joseph)
        self.cache = FirstEstimateCache()
        self.cache.record(0, belief.mean)

    def predict(self, u):
        first = self.cache.get(self.step)
        new = ekf_predict(self.belief, self.model, u, self.noise,
                          LinearizationPolicy.FIRST_ESTIMATES, first_estimate=first)
        if self.record:
            F = self.model.F_fej(first, new.mean, u) if self.model.F_fej else self.model.F(first, u)
            self.F_trace.append(F)
        self.belief = new
        self.step += 1
        self.cache.record(self.step, new.mean)

    def update(self, meas):
        first = self.cache.get(self.step)
        self._rec_H_for(first, meas)
        if meas is not None:
            self.belief = ekf_update(self.belief, self.model, meas,
                                     LinearizationPolicy.FIRST_ESTIMATES, first_estimate=first,
                                     joseph=self.joseph)


class DeadReckoning(Ekf):
    def update(self, meas):
        self._rec_H_for(self.belief.mean, None)


class Tekf1(_Base):
    def __init__(self, model, noise, belief, trans: Transformation, mode=UpdateMode.EXACT, record=False):
        super().__init__(model, noise, belief, record)
        self.trans = trans
        self.mode = mode
        self.state: Tekf1State = tekf1_init(belief, trans)

    def predict(self, u):
        if self.record:
            x = self.state.mean
            x_pred = self.model.propagate(x, u)
            self.F_trace.append(self.trans.T(x_pred) @ self.model.F(x, u) @ self.trans.T_inv(x))
        self.state = tekf1_predict(self.state, self.model, self.trans, u, self.noise)
        self.step += 1

    def update(self, meas):
        self._rec_H_for(self.state.mean, meas, self.trans.T_inv(self.state.mean) if self.record else None)
        if meas is not None:
            self.state = tekf1_update(self.state, self.model, self.trans, meas, self.mode)

    def estimate(self):
        b = self.state.to_belief(self.trans)
        return b.mean, b.cov


class Tekf2(Ekf):
    def __init__(self, model, noise, belief, trans: Transformation, mode=UpdateMode.EXACT, record=False):
        super().__init__(model, noise, belief, record)
        self.trans = trans
        self.mode = mode

    def update(self, meas):
        self._rec_H_for(self.belief.mean, meas)
        if meas is not None:
            self.belief = tekf2_update(self.belief, self.model, self.trans, meas, self.mode)


def make_estimator(name: str, model: SystemModel, noise: NoiseSpec, belief: GaussianBelief,
                   trans: Optional[Transformation] = None, mode: UpdateMode = UpdateMode.EXACT,
                   record: bool = False):
    if name == "ekf":
        return Ekf(model, noise, belief, record)
    if name == "fej":
        return Fej(model, noise, belief, record)
    if name == "dr":
        return DeadReckoning(model, noise, belief, record)
    if name in ("tekf1", "tekf2"):
        if trans is None:
            raise ValueError(f"{name} needs a transformation")
        cls = Tekf1 if name == "tekf1" else Tekf2
        return cls(model, noise, belief, trans, mode, record)
    raise ValueError(f"unknown estimator {name!r}")
