"""Command-line entry point.

Every flag can also come from an INI config file given with ``--config``.
Keys in ``[DEFAULT]`` apply to all subcommands and keys in a section named
after the subcommand (e.g. ``[sim-cl]``) override them.  Flags given on the
command line win over both.  Keys use the flag names with dashes or
underscores, for example::

    [DEFAULT]
    seed = 7

    [sim-cl]
    trials = 50
    estimator = ekf
    detect-prob = 0.3
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .apps import cl as cl_app
from .apps import tt as tt_app
from .audit import AUDIT_ESTIMATORS, obs_audit
from .core import ContractViolation, EstimationError
from .estimators import ESTIMATORS
from .harness import TRANSFORMS, ConfigError, TrialConfig, emit_results, run_monte_carlo
from .transform import UpdateMode

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3

SIM_KEYS = {
    "trials": int, "steps": int, "seed": int, "estimator": str, "transform": str,
    "update_mode": str, "detect_prob": float, "out": str, "format": str, "robots": int, "workers": int,
    "sigma_v": float, "sigma_omega": float, "sigma_z": float, "sigma_bearing": float, "dt": float,
    "switch_period": int,
}
REPLAY_KEYS = {
    "data": str, "robots": int, "app": str, "estimator": str, "transform": str, "update_mode": str,
    "landmarks": str, "dt": float, "robot": int, "duration": float, "out": str,
}
AUDIT_KEYS = {
    "model": str, "seed": int, "window": int, "estimator": str, "robots": int, "steps": int,
    "detect_prob": float, "schedule": str, "transform": str, "out": str,
}
KEYS = {"sim-cl": SIM_KEYS, "sim-tt": SIM_KEYS, "replay-utias": REPLAY_KEYS, "obs-audit": AUDIT_KEYS}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _sim_flags(p):
    p.add_argument("--trials", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--estimator", choices=ESTIMATORS)
    p.add_argument("--transform", choices=TRANSFORMS)
    p.add_argument("--update-mode", choices=("exact", "approximate"))
    p.add_argument("--detect-prob", type=float, help="pairwise detection probability (cl)")
    p.add_argument("--out", help="result file; a JSON summary goes to stdout when omitted")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--robots", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--switch-period", type=int, help="landmark alternation period in steps (tt)")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tekf", description="Transformed EKF simulations, replays and observability audits.")
    ap.add_argument("--config", help="INI file with default values for the subcommand")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, text in (("sim-cl", "Monte Carlo cooperative localization"),
                       ("sim-tt", "Monte Carlo bearing-only target tracking")):
        _sim_flags(sub.add_parser(name, help=text))

    p = sub.add_parser("replay-utias", help="run a filter over an MRCLAM-format dataset")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--robots", type=int)
    p.add_argument("--app", choices=("cl", "tt"))
    p.add_argument("--estimator", choices=ESTIMATORS)
    p.add_argument("--transform", choices=("t1", "t2"))
    p.add_argument("--update-mode", choices=("exact", "approximate"))
    p.add_argument("--landmarks", choices=("discard", "anchor"))
    p.add_argument("--robot", type=int, help="tracked robot for --app tt")
    p.add_argument("--dt", type=float)
    p.add_argument("--duration", type=float, help="seconds of data to replay")
    p.add_argument("--out")
    p.add_argument("--format", choices=("json",))

    p = sub.add_parser("obs-audit", help="nominal vs estimator observability report")
    p.add_argument("--model", choices=("cl", "tt"))
    p.add_argument("--seed", type=int)
    p.add_argument("--window", type=int)
    p.add_argument("--estimator", choices=AUDIT_ESTIMATORS)
    p.add_argument("--robots", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--detect-prob", type=float)
    p.add_argument("--schedule", choices=("single", "alternate"))
    p.add_argument("--transform", choices=("t1", "t2"))
    p.add_argument("--out")
    p.add_argument("--format", choices=("json",))
    return ap


def load_config(path, command: str) -> dict:
    """Typed values for ``command`` from an INI file."""
    cp = configparser.ConfigParser()
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file: {exc}") from None
    raw = dict(cp.defaults())
    if cp.has_section(command):
        raw.update(cp.items(command))
    types = KEYS[command]
    out = {}
    for key, val in raw.items():
        k = key.replace("-", "_")
        if k not in types:
            raise ConfigError(f"unknown config key {key!r} for {command}")
        try:
            out[k] = types[k](val)
        except ValueError:
            raise ConfigError(f"config key {key!r}: cannot parse {val!r}") from None
    return out


def _merged(args) -> dict:
    opts = load_config(args.config, args.command) if args.config else {}
    for k, v in vars(args).items():
        if k not in ("config", "command", "verbose") and v is not None:
            opts[k] = v
    return opts


def _sim_config(app: str, o: dict) -> TrialConfig:
    kw = {"app": app}
    for src, dst in (("trials", "trials"), ("steps", "steps"), ("seed", "master_seed"), ("estimator", "estimator"),
                     ("transform", "transformation"), ("update_mode", "update_mode"), ("robots", "robots"),
                     ("workers", "workers")):
        if src in o:
            kw[dst] = o[src]
    try:
        if app == "cl":
            noise = {k: o[k] for k in ("sigma_v", "sigma_omega", "sigma_z", "dt") if k in o}
            if "detect_prob" in o:
                noise["detection_prob"] = o["detect_prob"]
            kw["cl"] = replace(cl_app.ClNoiseConfig(), **noise)
        else:
            noise = {k: o[k] for k in ("sigma_v", "sigma_omega", "sigma_bearing", "dt", "switch_period") if k in o}
            kw["tt"] = replace(tt_app.TtConfig(), **noise)
        return TrialConfig(**kw)
    except ConfigError:
        raise
    except (ContractViolation, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def _write_json(doc: dict, out):
    text = json.dumps(doc, indent=1, default=str)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _cmd_sim(app: str, o: dict) -> int:
    cfg = _sim_config(app, o)
    fmt = o.get("format", "csv")
    metrics = run_monte_carlo(cfg)
    if o.get("out"):
        emit_results(metrics, o["out"], fmt)
    summary = {k: v for k, v in metrics.summary().items()}
    print(json.dumps(summary, default=str))
    if metrics.n_trials and metrics.n_diverged * 2 > metrics.n_trials:
        print(f"error: {metrics.n_diverged} of {metrics.n_trials} trials diverged", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_replay(o: dict) -> int:
    from .utias import replay_cl, replay_tt, utias_load

    if "data" not in o:
        raise ConfigError("replay-utias needs --data")
    app = o.get("app", "cl")
    ds = utias_load(o["data"], o.get("robots", 5))
    common = {k: o[k] for k in ("dt", "duration") if k in o}
    mode = UpdateMode(o.get("update_mode", "exact"))
    est = o.get("estimator", "tekf1")
    if est == "dr":
        raise ConfigError("replay does not offer dead reckoning")
    if app == "cl":
        res = replay_cl(ds, est, o.get("transform", "t2"), landmarks=o.get("landmarks", "discard"), mode=mode, **common)
    else:
        res = replay_tt(ds, o.get("robot", 1), est, mode=mode, **common)
    doc = {"app": app, "estimator": est, "rmse_pos": res.rmse_pos, "rmse_ori": res.rmse_ori,
           "steps": int(len(res.times)), "measurements": res.used_measurements,
           "dropped_measurements": ds.dropped_measurements, "diverged": res.diverged}
    _write_json(doc, o.get("out"))
    return EXIT_DIVERGED if res.diverged else EXIT_OK


def _cmd_audit(o: dict) -> int:
    app = o.get("model", "cl")
    kw = {}
    if app == "cl":
        for src, dst in (("robots", "robots"), ("steps", "steps"), ("detect_prob", "detection_prob"),
                         ("transform", "transformation")):
            if src in o:
                kw[dst] = o[src]
    else:
        for key in ("steps", "schedule"):
            if key in o:
                kw[key] = o[key]
    report = obs_audit(app, o.get("seed", 0), o.get("window"), o.get("estimator", "ekf"), **kw)
    _write_json(report, o.get("out"))
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        o = _merged(args)
        if args.command == "sim-cl":
            return _cmd_sim("cl", o)
        if args.command == "sim-tt":
            return _cmd_sim("tt", o)
        if args.command == "replay-utias":
            return _cmd_replay(o)
        return _cmd_audit(o)
    except ContractViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EstimationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
