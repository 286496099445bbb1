"""Reader and replay driver for UTIAS MRCLAM-format multi-robot logs.

Expected files in a dataset directory (whitespace separated, ``#`` comments)::

    Barcodes.dat                subject barcode
    Robot{i}_Odometry.dat       time v w
    Robot{i}_Measurement.dat    time barcode range bearing
    Robot{i}_Groundtruth.dat    time x y theta
    Landmark_Groundtruth.dat    subject x y [x_std y_std]     (optional)

Subjects ``1..robot_count`` are robots; any other subject is a landmark.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .apps import cl as cl_app
from .apps import tt as tt_app
from .core import ContractViolation, EstimationError, GaussianBelief, Measurement, stack_measurements, wrap_angle
from .estimators import make_estimator
from .transform import UpdateMode, identity_transformation

log = logging.getLogger(__name__)


class DatasetFormatError(ContractViolation):
    """A dataset file is missing or contains a malformed line."""


@dataclass(frozen=True)
class Event:
    time: float
    kind: str  # "odometry" | "measurement" | "groundtruth"
    robot: int
    values: tuple


@dataclass
class UtiasDataset:
    robot_count: int
    barcodes: dict
    odometry: list
    measurements: list
    groundtruth: list
    landmarks: dict = field(default_factory=dict)
    dropped_measurements: int = 0

    def events(self) -> list[Event]:
        """All records of all robots merged into one time-sorted stream.

        Ties keep the file order (odometry, then measurements, then ground
        truth, robot by robot) because the sort is stable.
        """
        out = []
        for kind, per_robot in (("odometry", self.odometry), ("measurement", self.measurements),
                                ("groundtruth", self.groundtruth)):
            for r, rows in enumerate(per_robot, start=1):
                out.extend(Event(float(row[0]), kind, r, tuple(float(v) for v in row[1:])) for row in rows)
        out.sort(key=lambda e: e.time)
        return out

    @property
    def start_time(self) -> float:
        return max(float(g[0, 0]) for g in self.groundtruth)

    @property
    def end_time(self) -> float:
        return min(float(g[-1, 0]) for g in self.groundtruth)


def _read_table(path: Path, ncols: int, optional_cols: int = 0) -> np.ndarray:
    if not path.exists():
        raise DatasetFormatError(f"missing file {path}")
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if not ncols <= len(parts) <= ncols + optional_cols:
                raise DatasetFormatError(f"{path.name}:{lineno}: expected {ncols} columns, got {len(parts)}")
            try:
                vals = [float(p) for p in parts[:ncols]]
            except ValueError as exc:
                raise DatasetFormatError(f"{path.name}:{lineno}: {exc}") from None
            if not all(np.isfinite(vals)):
                raise DatasetFormatError(f"{path.name}:{lineno}: non-finite value")
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, ncols)


def utias_load(path, robot_count: int) -> UtiasDataset:
    """Parse a dataset directory; measurements of unknown barcodes are dropped and counted."""
    root = Path(path)
    if robot_count < 1:
        raise ContractViolation("robot_count must be positive")
    bc = _read_table(root / "Barcodes.dat", 2)
    barcode_to_subject = {int(b): int(s) for s, b in bc}
    odo, meas, gt = [], [], []
    dropped = 0
    for i in range(1, robot_count + 1):
        odo.append(_read_table(root / f"Robot{i}_Odometry.dat", 3))
        gt.append(_read_table(root / f"Robot{i}_Groundtruth.dat", 4))
        raw = _read_table(root / f"Robot{i}_Measurement.dat", 4)
        keep = []
        for t, b, r, beta in raw:
            subject = barcode_to_subject.get(int(b))
            if subject is None:
                dropped += 1
                continue
            keep.append((t, subject, r, beta))
        meas.append(np.array(keep, dtype=float).reshape(-1, 4))
    if dropped:
        log.warning("dropped %d measurement(s) with unknown barcodes", dropped)
    landmarks = {}
    lm_path = root / "Landmark_Groundtruth.dat"
    if lm_path.exists():
        for row in _read_table(lm_path, 3, optional_cols=2):
            landmarks[int(row[0])] = row[1:3].copy()
    return UtiasDataset(robot_count, barcode_to_subject, odo, meas, gt, landmarks, dropped)


def range_bearing_to_relpos(r: float, bearing: float, sigma_r: float, sigma_b: float):
    """Relative position ``r [cos b, sin b]`` with first-order covariance."""
    c, s = np.cos(bearing), np.sin(bearing)
    z = r * np.array([c, s])
    Jac = np.array([[c, -r * s], [s, r * c]])
    R = Jac @ np.diag([sigma_r**2, sigma_b**2]) @ Jac.T
    # keep R usable at very short range where the bearing term vanishes
    R += 1e-9 * np.eye(2)
    return z, R


def write_dataset(path, robot_count: int, odometry, measurements, groundtruth, barcodes, landmarks=None):
    """Write arrays in the text layout :func:`utias_load` reads (used for fixtures)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)

    def dump(name, rows, header):
        with (root / name).open("w") as fh:
            fh.write(f"# {header}\n")
            for row in rows:
                fh.write(" ".join("%.17g" % float(v) for v in row) + "\n")

    dump("Barcodes.dat", [(s, b) for s, b in barcodes], "subject barcode")
    for i in range(robot_count):
        dump(f"Robot{i + 1}_Odometry.dat", odometry[i], "time v w")
        dump(f"Robot{i + 1}_Measurement.dat", measurements[i], "time barcode range bearing")
        dump(f"Robot{i + 1}_Groundtruth.dat", groundtruth[i], "time x y theta")
    if landmarks:
        dump("Landmark_Groundtruth.dat", [(s, *p) for s, p in landmarks.items()], "subject x y")


# --- replay ----------------------------------------------------------------


def _interp_pose(gt: np.ndarray, t: np.ndarray) -> np.ndarray:
    x = np.interp(t, gt[:, 0], gt[:, 1])
    y = np.interp(t, gt[:, 0], gt[:, 2])
    th = np.interp(t, gt[:, 0], np.unwrap(gt[:, 3]))
    return np.stack([x, y, wrap_angle(th)], axis=1)


def _hold(rows: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Zero-order hold of ``(time, v, w)`` samples onto the grid ``t``."""
    if rows.shape[0] == 0:
        return np.zeros((t.size, 2))
    idx = np.searchsorted(rows[:, 0], t, side="right") - 1
    out = rows[np.clip(idx, 0, None), 1:3].copy()
    out[idx < 0] = 0.0
    return out


@dataclass
class ReplayResult:
    times: np.ndarray
    estimates: np.ndarray
    truth: np.ndarray
    rmse_pos: float
    rmse_ori: float
    diverged: bool
    used_measurements: int


def _bin(t_meas: float, t0: float, dt: float) -> int:
    return int(np.ceil((t_meas - t0) / dt - 1e-9))


def _finish(times, est, truth, diverged, used):
    n = len(est)
    E = np.array(est).reshape(n, -1, 3)
    T = truth[:n].reshape(n, -1, 3)
    if n == 0:
        return ReplayResult(times[:0], E, T, float("nan"), float("nan"), diverged, used)
    e_pos = E[..., :2] - T[..., :2]
    e_ori = wrap_angle(E[..., 2] - T[..., 2])
    return ReplayResult(times[:n], E.reshape(n, -1), T.reshape(n, -1),
                        float(np.sqrt(np.mean(np.sum(e_pos**2, axis=-1)))),
                        float(np.sqrt(np.mean(e_ori**2))), diverged, used)


def replay_cl(ds: UtiasDataset, estimator: str = "tekf1", transformation: str = "t2", dt: float = 0.1,
              landmarks: str = "discard", sigma_v: float = 0.1, sigma_omega: float = 0.2,
              sigma_r: float = 0.1, sigma_b: float = 0.05, prior_std: float = 1e-3,
              mode: UpdateMode = UpdateMode.EXACT, duration: Optional[float] = None) -> ReplayResult:
    """Replay the fleet through a filter on a fixed ``dt`` grid.

    ``landmarks="anchor"`` turns robot-to-landmark detections into
    relative-position measurements to known anchors; ``"discard"`` ignores
    them.
    """
    if landmarks not in ("discard", "anchor"):
        raise ContractViolation("landmarks must be 'discard' or 'anchor'")
    m = ds.robot_count
    if m < 2:
        raise ContractViolation("cooperative replay needs at least two robots")
    t0, t1 = ds.start_time, ds.end_time
    if duration is not None:
        t1 = min(t1, t0 + duration)
    times = np.arange(t0, t1 + 1e-12, dt)
    K = times.size - 1
    cfg = cl_app.ClNoiseConfig(sigma_v=sigma_v, sigma_omega=sigma_omega, sigma_z=sigma_r, dt=dt, detection_prob=0.0)
    model = cl_app.cl_model(m, cfg)
    noise = cfg.noise(m)
    truth = np.concatenate([_interp_pose(g, times) for g in ds.groundtruth], axis=1)
    held = [_hold(o, times[:-1]) for o in ds.odometry]
    u = np.zeros((K, 3 * m))
    for i in range(m):
        u[:, 3 * i] = held[i][:, 0]
        u[:, 3 * i + 2] = held[i][:, 1]
    blocks = [dict() for _ in range(K + 1)]
    for i, rows in enumerate(ds.measurements):
        for t, subject, r, beta in rows:
            k = _bin(t, t0, dt)
            if not 1 <= k <= K:
                continue
            s = int(subject)
            if 1 <= s <= m and s - 1 != i:
                target = s - 1
            elif s > m and landmarks == "anchor" and s in ds.landmarks:
                target = ("lm", s)
            else:
                continue
            z, R = range_bearing_to_relpos(r, beta, sigma_r, sigma_b)
            blocks[k][(i, target)] = (z, R)
    trans = {"t1": cl_app.cl_transform_t1, "t2": cl_app.cl_transform_t2}.get(transformation)
    trans = trans() if (trans and estimator in ("tekf1", "tekf2")) else identity_transformation(model.n)
    est = make_estimator(estimator, model, noise, GaussianBelief(truth[0], prior_std**2 * np.eye(model.n)),
                         trans, mode)
    estimates = [truth[0].copy()]
    used = 0
    diverged = False
    for k in range(K):
        step = blocks[k + 1]
        meas: Optional[Measurement] = None
        if step:
            items = []
            for (i, target), (z, R) in step.items():
                tgt = ds.landmarks[target[1]] if isinstance(target, tuple) else target
                items.append((z, R, (i, tgt)))
            meas = stack_measurements(items)
            used += len(items)
        try:
            est.predict(u[k])
            est.update(meas)
        except (EstimationError, np.linalg.LinAlgError):
            diverged = True
            break
        x_hat, _ = est.estimate()
        estimates.append(x_hat)
    return _finish(times, estimates, truth, diverged, used)


def replay_tt(ds: UtiasDataset, robot: int = 1, estimator: str = "tekf1", dt: float = 0.1,
              sigma_v: float = 0.1, sigma_omega: float = 0.2, sigma_b: float = 0.05, prior_std: float = 1e-3,
              mode: UpdateMode = UpdateMode.EXACT, duration: Optional[float] = None) -> ReplayResult:
    """Track one robot from bearings to landmarks used as known anchors."""
    if not ds.landmarks:
        raise ContractViolation("tracking replay needs Landmark_Groundtruth.dat")
    if not 1 <= robot <= ds.robot_count:
        raise ContractViolation(f"robot must lie in 1..{ds.robot_count}")
    t0, t1 = ds.start_time, ds.end_time
    if duration is not None:
        t1 = min(t1, t0 + duration)
    times = np.arange(t0, t1 + 1e-12, dt)
    K = times.size - 1
    subjects = sorted(ds.landmarks)
    cfg = tt_app.TtConfig(sigma_v=sigma_v, sigma_omega=sigma_omega, sigma_bearing=sigma_b, dt=dt,
                          landmarks=tuple(tuple(ds.landmarks[s]) for s in subjects))
    model = tt_app.tt_model(cfg.landmark_list(), cfg)
    lid = {s: k for k, s in enumerate(subjects)}
    truth = _interp_pose(ds.groundtruth[robot - 1], times)
    held = _hold(ds.odometry[robot - 1], times[:-1])
    u = np.zeros((K, 3))
    u[:, 0], u[:, 2] = held[:, 0], held[:, 1]
    per_step = [dict() for _ in range(K + 1)]
    for t, subject, _r, beta in ds.measurements[robot - 1]:
        k = _bin(t, t0, dt)
        if 1 <= k <= K and int(subject) in lid:
            per_step[k][lid[int(subject)]] = beta
    if estimator == "tekf1" or estimator == "tekf2":
        trans = tt_app.tt_transform()
    else:
        trans = identity_transformation(3)
    est = make_estimator(estimator, model, cfg.noise(), GaussianBelief(truth[0], prior_std**2 * np.eye(3)), trans, mode)
    estimates = [truth[0].copy()]
    used = 0
    diverged = False
    for k in range(K):
        obs = per_step[k + 1]
        meas = tt_app.tt_measurement([tt_app.BearingMeasurement(l, b, sigma_b) for l, b in sorted(obs.items())]) if obs else None
        used += len(obs)
        try:
            est.predict(u[k])
            est.update(meas)
        except (EstimationError, np.linalg.LinAlgError):
            diverged = True
            break
        estimates.append(est.estimate()[0])
    return _finish(times, estimates, truth, diverged, used)


def synthetic_dataset(path, robot_count: int = 3, duration: float = 20.0, rate: float = 10.0,
                      n_landmarks: int = 4, seed: int = 0, unknown_barcodes: int = 0) -> UtiasDataset:
    """Simulate a small fleet and write it in MRCLAM layout.

    Odometry, ground truth and range-bearing detections are generated on a
    ``1/rate`` grid. ``unknown_barcodes`` extra detections carry a barcode
    that is not in ``Barcodes.dat``.
    """
    rng = np.random.default_rng(seed)
    dt = 1.0 / rate
    t = np.arange(0.0, duration + 1e-12, dt)
    subjects = list(range(1, robot_count + n_landmarks + 1))
    barcodes = [(s, 10 * s + 3) for s in subjects]
    lm_pos = {robot_count + k + 1: rng.uniform(-4, 4, size=2) for k in range(n_landmarks)}
    poses = np.zeros((robot_count, t.size, 3))
    poses[:, 0, :2] = rng.uniform(-2, 2, size=(robot_count, 2))
    poses[:, 0, 2] = rng.uniform(-np.pi, np.pi, size=robot_count)
    v = np.full((robot_count, t.size), 0.2)
    w = rng.uniform(-0.2, 0.2, size=(robot_count, t.size))
    for k in range(1, t.size):
        th = poses[:, k - 1, 2]
        poses[:, k, 0] = poses[:, k - 1, 0] + np.cos(th) * v[:, k - 1] * dt
        poses[:, k, 1] = poses[:, k - 1, 1] + np.sin(th) * v[:, k - 1] * dt
        poses[:, k, 2] = wrap_angle(th + w[:, k - 1] * dt)
    odo, meas, gt = [], [], []
    for i in range(robot_count):
        odo.append(np.column_stack([t, v[i] + 0.02 * rng.normal(size=t.size), w[i] + 0.02 * rng.normal(size=t.size)]))
        gt.append(np.column_stack([t, poses[i]]))
        rows = []
        for k in range(1, t.size, 5):
            tk = t[k] - 0.5 * dt
            for s in subjects:
                if s == i + 1:
                    continue
                target = poses[s - 1, k, :2] if s <= robot_count else lm_pos[s]
                d = target - poses[i, k, :2]
                r = float(np.hypot(*d)) + 0.01 * rng.normal()
                b = float(wrap_angle(np.arctan2(d[1], d[0]) - poses[i, k, 2] + 0.01 * rng.normal()))
                rows.append((tk, 10 * s + 3, r, b))
        meas.append(np.array(rows).reshape(-1, 4))
    for _ in range(unknown_barcodes):
        meas[0] = np.vstack([meas[0], [[t[1], 999, 1.0, 0.0]]])
    write_dataset(path, robot_count, odo, meas, gt, barcodes, lm_pos)
    return utias_load(path, robot_count)
