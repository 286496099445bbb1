"""Monte Carlo trials, RMSE / NEES metrics and result files."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import subprocess
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .apps import cl as cl_app
from .apps import tt as tt_app
from .core import ContractViolation, EstimationError, GaussianBelief, wrap_angle
from .estimators import ESTIMATORS, make_estimator
from .transform import UpdateMode, identity_transformation

DIVERGENCE_POS_ERR = 1e3
NEES_MAX_COND = 1e12
TRANSFORMS = ("t1", "t2", "tt-default", "identity")
DEFAULT_STEPS = {"cl": 100, "tt": 200}


class ConfigError(ContractViolation):
    pass


@dataclass
class TrialConfig:
    app: str = "cl"
    estimator: str = "tekf1"
    transformation: Optional[str] = None
    update_mode: str = "exact"
    trials: int = 100
    steps: Optional[int] = None
    master_seed: int = 0
    robots: int = 6
    cl: cl_app.ClNoiseConfig = field(default_factory=cl_app.ClNoiseConfig)
    tt: tt_app.TtConfig = field(default_factory=tt_app.TtConfig)
    workers: int = 1

    def __post_init__(self):
        if self.steps is None:
            self.steps = DEFAULT_STEPS.get(self.app, 100)
        if self.transformation is None:
            if self.estimator in ("tekf1", "tekf2"):
                self.transformation = "t2" if self.app == "cl" else "tt-default"
            else:
                self.transformation = "identity"
        self.validate()

    def validate(self):
        if self.app not in ("cl", "tt"):
            raise ConfigError(f"unknown app {self.app!r}")
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.transformation not in TRANSFORMS:
            raise ConfigError(f"unknown transformation {self.transformation!r}")
        if self.update_mode not in ("exact", "approximate"):
            raise ConfigError(f"unknown update mode {self.update_mode!r}")
        if self.estimator == "dr" and self.app != "tt":
            raise ConfigError("dead reckoning is only offered for the tracking app")
        if self.transformation in ("t1", "t2") and self.app != "cl":
            raise ConfigError("t1/t2 transformations belong to the cl app")
        if self.transformation == "tt-default" and self.app != "tt":
            raise ConfigError("tt-default transformation belongs to the tt app")
        if self.trials < 0 or self.steps < 0:
            raise ConfigError("trials and steps must be non-negative")
        if self.app == "cl" and self.robots < 2:
            raise ConfigError("cl needs at least two robots")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class TrialMetrics:
    """Per-step series (steps ``1..K``) and run averages."""

    step: np.ndarray
    rmse_pos: np.ndarray
    rmse_ori: np.ndarray
    nees_pos: np.ndarray
    nees_ori: np.ndarray
    nees_full: np.ndarray
    ms_per_step: float = float("nan")
    n_trials: int = 0
    n_diverged: int = 0
    config: dict = field(default_factory=dict)

    @property
    def avg_rmse_pos(self) -> float:
        return _nanmean(self.rmse_pos)

    @property
    def avg_rmse_ori(self) -> float:
        return _nanmean(self.rmse_ori)

    @property
    def avg_nees_pos(self) -> float:
        return _nanmean(self.nees_pos)

    @property
    def avg_nees_ori(self) -> float:
        return _nanmean(self.nees_ori)

    @property
    def avg_nees_full(self) -> float:
        return _nanmean(self.nees_full)

    def summary(self) -> dict:
        return {
            "rmse_pos": self.avg_rmse_pos,
            "rmse_ori": self.avg_rmse_ori,
            "nees_pos": self.avg_nees_pos,
            "nees_ori": self.avg_nees_ori,
            "nees_full": self.avg_nees_full,
            "ms_per_step": self.ms_per_step,
            "n_trials": self.n_trials,
            "n_diverged": self.n_diverged,
        }


def _nanmean(a, axis=None):
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return float("nan")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        out = np.nanmean(a, axis=axis)
    return float(out) if axis is None else out


def nees(error, cov) -> float:
    """Normalized estimation error squared ``e^T P^-1 e``; NaN if ``P`` is singular."""
    e = np.atleast_1d(np.asarray(error, dtype=float))
    P = np.atleast_2d(np.asarray(cov, dtype=float))
    if not np.all(np.isfinite(P)):
        return float("nan")
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    aw = np.abs(w)
    if aw.max() == 0.0 or aw.max() > NEES_MAX_COND * aw.min():
        return float("nan")
    c = V.T @ e
    return float(c @ (c / w))


def block_nees(errors, covs) -> np.ndarray:
    """Batched NEES for 1x1 or 2x2 blocks; ``errors`` is (k, d), ``covs`` (k, d, d)."""
    E = np.asarray(errors, dtype=float)
    C = np.asarray(covs, dtype=float)
    if E.ndim == 1 or E.shape[1] == 1:
        c = C.reshape(-1)
        e = E.reshape(-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = e**2 / c
        out[~(c > 0)] = np.nan
        return out
    a, b, d = C[:, 0, 0], 0.5 * (C[:, 0, 1] + C[:, 1, 0]), C[:, 1, 1]
    det = a * d - b * b
    tr = a + d
    disc = np.sqrt(np.maximum(0.25 * (a - d) ** 2 + b * b, 0.0))
    lmax, lmin = 0.5 * tr + disc, 0.5 * tr - disc
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (d * E[:, 0] ** 2 - 2 * b * E[:, 0] * E[:, 1] + a * E[:, 1] ** 2) / det
    bad = ~(lmax > 0) | (np.abs(lmax) > NEES_MAX_COND * np.abs(lmin)) | ~np.isfinite(out)
    out[bad] = np.nan
    return out


# --- single trial ----------------------------------------------------------


def _transformation(cfg: TrialConfig, n: int):
    if cfg.transformation == "t1":
        return cl_app.cl_transform_t1()
    if cfg.transformation == "t2":
        return cl_app.cl_transform_t2()
    if cfg.transformation == "tt-default":
        return tt_app.tt_transform()
    return identity_transformation(n)


def _setup(cfg: TrialConfig, rng: np.random.Generator):
    """Model, noise, slices and the simulated data of one trial."""
    if cfg.app == "cl":
        model = cl_app.cl_model(cfg.robots, cfg.cl)
        noise = cfg.cl.noise(cfg.robots)
        data = cl_app.simulate_cl(cfg.robots, cfg.steps, cfg.cl, rng)
        meas = [cl_app.cl_measurement(mm) if mm else None for mm in data.measurements]
        slices = cl_app.pose_slices(cfg.robots)
    else:
        lms = cfg.tt.landmark_list()
        model = tt_app.tt_model(lms, cfg.tt)
        noise = cfg.tt.noise()
        data = tt_app.simulate_tt(cfg.steps, cfg.tt, rng)
        meas = [tt_app.tt_measurement(mm) if mm else None for mm in data.measurements]
        slices = tt_app.pose_slices()
    return model, noise, data, meas, slices


def trial_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([master_seed, index])


@dataclass
class TrialResult:
    pos_sq: np.ndarray
    ori_sq: np.ndarray
    nees_pos: np.ndarray
    nees_ori: np.ndarray
    nees_full: np.ndarray
    seconds: float
    diverged: bool


def run_trial(cfg: TrialConfig, index: int) -> TrialResult:
    rng = trial_rng(cfg.master_seed, index)
    model, noise, data, meas, slices = _setup(cfg, rng)
    K = cfg.steps
    out = {k: np.full(K, np.nan) for k in ("pos_sq", "ori_sq", "nees_pos", "nees_ori", "nees_full")}
    x0 = data.truth[0]
    est = make_estimator(cfg.estimator, model, noise, GaussianBelief(x0, np.zeros((model.n, model.n))),
                         _transformation(cfg, model.n), UpdateMode(cfg.update_mode))
    pos_idx = np.array([list(p) for p, _ in slices])
    ori_idx = np.array([o for _, o in slices])
    elapsed = 0.0
    diverged = False
    for k in range(K):
        t0 = time.perf_counter()
        try:
            est.predict(data.odometry[k])
            est.update(meas[k])
            x_hat, P = est.estimate()
        except (EstimationError, np.linalg.LinAlgError):
            diverged = True
            break
        elapsed += time.perf_counter() - t0
        truth = data.truth[k + 1]
        err = x_hat - truth
        e_pos = err[pos_idx]
        e_ori = wrap_angle(err[ori_idx])
        if not np.all(np.isfinite(x_hat)) or np.max(np.linalg.norm(e_pos, axis=1)) > DIVERGENCE_POS_ERR:
            diverged = True
            break
        out["pos_sq"][k] = np.mean(np.sum(e_pos**2, axis=1))
        out["ori_sq"][k] = np.mean(e_ori**2)
        out["nees_pos"][k] = _nanmean(block_nees(e_pos, P[pos_idx[:, :, None], pos_idx[:, None, :]]))
        out["nees_ori"][k] = _nanmean(block_nees(e_ori, P[ori_idx, ori_idx]))
        e_full = err.copy()
        e_full[ori_idx] = e_ori
        out["nees_full"][k] = nees(e_full, P)
    return TrialResult(seconds=elapsed, diverged=diverged, **out)


# --- Monte Carlo -----------------------------------------------------------


def _run_one(args):
    cfg, idx = args
    return run_trial(cfg, idx)


def run_trials(cfg: TrialConfig) -> list:
    """Raw per-trial results in trial order."""
    cfg.validate()
    jobs = [(cfg, i) for i in range(cfg.trials)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


def aggregate(cfg: TrialConfig, results: list, keep=None) -> TrialMetrics:
    """Reduce trial results to per-step metrics.

    Diverged trials are always excluded; ``keep`` optionally restricts the
    reduction to a subset of trial indices.
    """
    K = cfg.steps
    if cfg.trials == 0 or K == 0:
        empty = np.zeros(0)
        return TrialMetrics(np.zeros(0, dtype=int), empty, empty, empty, empty, empty, float("nan"),
                            cfg.trials, 0, cfg.to_dict())
    n_div = sum(r.diverged for r in results)
    idx = range(len(results)) if keep is None else keep
    good = [results[i] for i in idx if not results[i].diverged]
    steps = np.arange(1, K + 1)
    if not good:
        nan = np.full(K, np.nan)
        return TrialMetrics(steps, nan, nan, nan, nan, nan, float("nan"), cfg.trials, n_div, cfg.to_dict())

    def stack(name):
        return np.stack([getattr(r, name) for r in good])

    ms = 1e3 * sum(r.seconds for r in good) / (len(good) * K)
    return TrialMetrics(
        step=steps,
        rmse_pos=np.sqrt(_nanmean(stack("pos_sq"), axis=0)),
        rmse_ori=np.sqrt(_nanmean(stack("ori_sq"), axis=0)),
        nees_pos=_nanmean(stack("nees_pos"), axis=0),
        nees_ori=_nanmean(stack("nees_ori"), axis=0),
        nees_full=_nanmean(stack("nees_full"), axis=0),
        ms_per_step=ms,
        n_trials=cfg.trials,
        n_diverged=n_div,
        config=cfg.to_dict(),
    )


def run_monte_carlo(cfg: TrialConfig) -> TrialMetrics:
    """Run ``cfg.trials`` independent trials and aggregate per-step metrics.

    Trial ``i`` draws from its own generator seeded by ``(master_seed, i)``, and
    results are reduced in trial order, so the output does not depend on the
    worker count.  Diverged trials are excluded and counted.
    """
    return aggregate(cfg, run_trials(cfg))


def run_paired(cfg_a: TrialConfig, cfg_b: TrialConfig) -> tuple[TrialMetrics, TrialMetrics]:
    """Metrics of two setups over the trials where neither diverged.

    Both configs must share seeds and trial counts so trial ``i`` sees the
    same simulated data.  ``n_diverged`` still counts all trials.
    """
    if (cfg_a.trials, cfg_a.master_seed) != (cfg_b.trials, cfg_b.master_seed):
        raise ConfigError("paired runs need equal trial counts and seeds")
    ra, rb = run_trials(cfg_a), run_trials(cfg_b)
    both = [i for i in range(len(ra)) if not (ra[i].diverged or rb[i].diverged)]
    return aggregate(cfg_a, ra, both), aggregate(cfg_b, rb, both)


def run_comparison(cfg: TrialConfig, estimators, **overrides) -> dict[str, TrialMetrics]:
    """Same trials (same seeds, same simulated data) for several estimator setups.

    ``estimators`` items are estimator names or ``(label, dict_of_overrides)``.
    """
    out = {}
    for item in estimators:
        label, extra = (item, {"estimator": item}) if isinstance(item, str) else item
        fields = {**{f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}, **overrides, **extra}
        if "transformation" not in extra and "estimator" in extra:
            fields["transformation"] = None
        out[label] = run_monte_carlo(TrialConfig(**fields))
    return out


# --- result files ----------------------------------------------------------

CSV_COLUMNS = ("step", "rmse_pos", "rmse_ori", "nees_pos", "nees_ori")


def version_string() -> str:
    try:
        desc = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                              timeout=5, cwd=Path(__file__).parent)
        if desc.returncode == 0 and desc.stdout.strip():
            return f"{__version__}+{desc.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _json_float(v):
    v = float(v)
    return v if math.isfinite(v) else None


def emit_results(metrics: TrialMetrics, path, fmt: str = "csv") -> Path:
    """Write per-step metrics as CSV or JSON (JSON adds config and version)."""
    path = Path(path)
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for row in zip(metrics.step, metrics.rmse_pos, metrics.rmse_ori, metrics.nees_pos, metrics.nees_ori):
                w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
    elif fmt == "json":
        doc = {
            "version": version_string(),
            "config": metrics.config,
            "summary": {k: (_json_float(v) if isinstance(v, float) else v) for k, v in metrics.summary().items()},
            "series": {
                "step": [int(s) for s in metrics.step],
                **{c: [_json_float(v) for v in getattr(metrics, c)]
                   for c in ("rmse_pos", "rmse_ori", "nees_pos", "nees_ori", "nees_full")},
            },
        }
        path.write_text(json.dumps(doc, indent=1, default=str))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def load_results(path) -> dict[str, np.ndarray]:
    """Read back the per-step series written by :func:`emit_results`."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        return {k: np.array([np.nan if v is None else v for v in vals], dtype=float)
                for k, vals in doc["series"].items()}
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {c: np.array([float(r[c]) for r in rows], dtype=float) for c in CSV_COLUMNS}
