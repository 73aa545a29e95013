"""Command-line front end.

One subcommand per question: classify / eigen / green / defect / hittime /
simulate / audit.  Every run reads a JSON config carrying the measure
descriptor plus run parameters, writes a JSON report (config echo,
package version, wall time, result) into the output directory, and emits
CSV files for curve-valued outputs.  Exit status: 0 success, 2 refused
verdict (undecidable tails or a conjectured regime), 1 any other error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .classify import classify, consistency_audit
from .eigen import SolverOptions, auto_window, hitting_laplace, solve_pair
from .errors import AuditError, MeasureError, NatscaleError, \
    UndecidableTailError
from .measure import SpeedMeasure, build_measure
from .resolvent import (DEFAULT_PROBE_LAMBDAS, defect_curve, green,
                        martingale_defect, stopped_mean_laplace)
from .simulate import (StepControl, estimate_hitting_laplace,
                       estimate_stopped_mean, simulate_paths)

COMMANDS = ("classify", "eigen", "green", "defect", "hittime", "simulate",
            "audit")

_COMMON_KEYS = {"measure", "x", "lambda", "window", "seed", "tolerances"}
_KEYS = {
    "classify": _COMMON_KEYS,
    "eigen": _COMMON_KEYS,
    "green": _COMMON_KEYS | {"y"},
    "defect": _COMMON_KEYS | {"lambdas"},
    "hittime": _COMMON_KEYS | {"level", "n_paths", "t_max", "condition",
                               "bridge_correction"},
    "simulate": _COMMON_KEYS | {"n_paths", "t_max", "checkpoints",
                                "hit_levels", "dump_paths",
                                "bridge_correction"},
    "audit": _COMMON_KEYS | {"lambdas", "n_paths"},
}
_TOLERANCE_KEYS = {"n_core", "series_rel_tol", "ladder_rel_tol",
                   "points_per_wavelength", "max_terms", "fprime_rungs"}


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration; unknown keys are rejected outright."""

    command: str
    measure: dict
    x: float | None = None
    lam: float | None = None
    window: tuple[float, float] | None = None
    y: float | None = None
    level: float | None = None
    lambdas: tuple[float, ...] | None = None
    t_max: float | None = None
    n_paths: int | None = None
    seed: int | None = None
    checkpoints: tuple[float, ...] = ()
    hit_levels: tuple[float, ...] = ()
    condition: str = "unconditional"
    bridge_correction: bool = False
    dump_paths: bool = False
    tolerances: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, command: str, raw: dict) -> "RunConfig":
        if command not in COMMANDS:
            raise MeasureError(f"unknown command {command!r}")
        unknown = set(raw) - _KEYS[command]
        if unknown:
            raise MeasureError(
                f"config for {command!r} has unknown keys {sorted(unknown)}")
        if "measure" not in raw:
            raise MeasureError("config needs a 'measure' descriptor")
        tol = dict(raw.get("tolerances", {}))
        bad = set(tol) - _TOLERANCE_KEYS
        if bad:
            raise MeasureError(f"unknown tolerance overrides {sorted(bad)}")
        lam = raw.get("lambda")
        if lam is not None and not lam > 0:
            raise MeasureError("lambda must be positive")
        n_paths = raw.get("n_paths")
        if n_paths is not None and n_paths < 0:
            raise MeasureError("n_paths must be nonnegative")
        t_max = raw.get("t_max")
        if t_max is not None and not t_max > 0:
            raise MeasureError("t_max must be positive")
        window = raw.get("window")
        if window is not None:
            window = (float(window[0]), float(window[1]))
            if not window[0] < window[1]:
                raise MeasureError("window endpoints out of order")
        lambdas = raw.get("lambdas")
        if lambdas is not None:
            lambdas = tuple(float(v) for v in lambdas)
            if any(v <= 0 for v in lambdas):
                raise MeasureError("all lambdas must be positive")
        condition = raw.get("condition", "unconditional")
        if condition not in ("unconditional", "before_lower_absorption"):
            raise MeasureError(f"unknown condition {condition!r}")
        return cls(
            command=command, measure=dict(raw["measure"]),
            x=_opt_float(raw.get("x")), lam=_opt_float(lam),
            window=window, y=_opt_float(raw.get("y")),
            level=_opt_float(raw.get("level")), lambdas=lambdas,
            t_max=_opt_float(t_max),
            n_paths=None if n_paths is None else int(n_paths),
            seed=None if raw.get("seed") is None else int(raw["seed"]),
            checkpoints=tuple(float(t) for t in raw.get("checkpoints", ())),
            hit_levels=tuple(float(a) for a in raw.get("hit_levels", ())),
            condition=condition,
            bridge_correction=bool(raw.get("bridge_correction", False)),
            dump_paths=bool(raw.get("dump_paths", False)),
            tolerances=tol)

    def to_dict(self) -> dict:
        d = {"measure": self.measure}
        if self.x is not None:
            d["x"] = self.x
        if self.lam is not None:
            d["lambda"] = self.lam
        if self.window is not None:
            d["window"] = list(self.window)
        if self.y is not None:
            d["y"] = self.y
        if self.level is not None:
            d["level"] = self.level
        if self.lambdas is not None:
            d["lambdas"] = list(self.lambdas)
        if self.t_max is not None:
            d["t_max"] = self.t_max
        if self.n_paths is not None:
            d["n_paths"] = self.n_paths
        if self.seed is not None:
            d["seed"] = self.seed
        if self.checkpoints:
            d["checkpoints"] = list(self.checkpoints)
        if self.hit_levels:
            d["hit_levels"] = list(self.hit_levels)
        if self.condition != "unconditional":
            d["condition"] = self.condition
        if self.bridge_correction:
            d["bridge_correction"] = True
        if self.dump_paths:
            d["dump_paths"] = True
        if self.tolerances:
            d["tolerances"] = self.tolerances
        return d

    def solver_options(self) -> SolverOptions:
        return SolverOptions().replaced(**self.tolerances) \
            if self.tolerances else SolverOptions()


def _opt_float(v):
    return None if v is None else float(v)


def _need(cfg: RunConfig, *names):
    for nm in names:
        attr = {"lambda": "lam"}.get(nm, nm)
        if getattr(cfg, attr) in (None, ()):
            raise MeasureError(f"{cfg.command} config needs {nm!r}")


def _seed_of(cfg: RunConfig) -> int:
    if cfg.seed is not None:
        return cfg.seed
    env = os.environ.get("NATSCALE_SEED")
    if env is not None:
        return int(env)
    return 0


# ---------------------------------------------------------------------------
# command handlers: each returns (result dict, exit code, files written)


def _cmd_classify(cfg: RunConfig, m: SpeedMeasure, out: str):
    _need(cfg, "x")
    lam = cfg.lam if cfg.lam is not None else 0.5
    verdict = classify(m, cfg.x, lambda_probe=lam,
                       options=cfg.solver_options())
    return verdict.to_json_dict(), 0, []


def _cmd_eigen(cfg: RunConfig, m: SpeedMeasure, out: str):
    _need(cfg, "lambda")
    window = cfg.window or auto_window(m, cfg.x)
    pair = solve_pair(m, cfg.lam, window, cfg.solver_options())
    files = []
    for fn, name in ((pair.f_minus, "f_minus.csv"),
                     (pair.f_plus, "f_plus.csv")):
        path = os.path.join(out, name)
        fn.to_csv(path)
        files.append(path)
    result = {
        "lambda": pair.lam,
        "window": list(window),
        "wronskian_h": pair.wronskian_h,
        "wronskian_rel_dev": pair.wronskian_dev,
        "alpha_plus": pair.alpha_plus,
        "normalizations": {"f_minus": pair.f_minus.normalization,
                           "f_plus": pair.f_plus.normalization},
        "csv": [os.path.basename(f) for f in files],
    }
    return result, 0, files


def _cmd_green(cfg: RunConfig, m: SpeedMeasure, out: str):
    _need(cfg, "x", "lambda")
    window = cfg.window or auto_window(m, cfg.x)
    pair = solve_pair(m, cfg.lam, window, cfg.solver_options())
    files = []
    result = {"lambda": cfg.lam, "x": cfg.x}
    if cfg.y is not None:
        result["green"] = green(pair, cfg.x, cfg.y)
        result["y"] = cfg.y
    else:
        ys = np.linspace(window[0], window[1], 201)
        path = os.path.join(out, "green_curve.csv")
        with open(path, "w") as fh:
            fh.write("y,green\n")
            for yv in ys:
                fh.write(f"{float(yv)!r},{float(green(pair, cfg.x, float(yv)))!r}\n")
        files.append(path)
        result["csv"] = ["green_curve.csv"]
    if not np.isfinite(m.interval.l_plus) and np.isfinite(m.interval.l_minus):
        result["stopped_mean_laplace"] = stopped_mean_laplace(pair, cfg.x)
        result["martingale_defect"] = martingale_defect(pair, cfg.x)
    return result, 0, files


def _cmd_defect(cfg: RunConfig, m: SpeedMeasure, out: str):
    _need(cfg, "x")
    lambdas = cfg.lambdas or DEFAULT_PROBE_LAMBDAS
    curve = defect_curve(m, cfg.x, lambdas=lambdas, window=cfg.window,
                         options=cfg.solver_options())
    path = os.path.join(out, "defect_curve.csv")
    curve.to_csv(path)
    result = {
        "x": curve.x,
        "lambdas": list(curve.lambdas),
        "defect": list(curve.defect),
        "extrapolated_limit": curve.extrapolated_limit,
        "extrapolation_error": curve.extrapolation_error,
        "target_gap": curve.target_gap,
        "matches_gap": curve.matches_gap,
        "monotone_in_lambda": curve.monotone_in_lambda,
        "csv": ["defect_curve.csv"],
    }
    return result, 0, [path]


def _cmd_hittime(cfg: RunConfig, m: SpeedMeasure, out: str):
    _need(cfg, "x", "lambda", "level")
    window = cfg.window or auto_window(m, cfg.x)
    lo = min(window[0], cfg.x, cfg.level)
    hi = max(window[1], cfg.x, cfg.level)
    pair = solve_pair(m, cfg.lam, (lo, hi), cfg.solver_options())
    analytic = hitting_laplace(pair, cfg.x, cfg.level)
    result = {"x": cfg.x, "level": cfg.level, "lambda": cfg.lam,
              "analytic": analytic}
    if cfg.n_paths:
        t_max = cfg.t_max if cfg.t_max is not None else 16.0 / cfg.lam
        ctrl = StepControl(bridge_correction=cfg.bridge_correction)
        ens = simulate_paths(m, cfg.x, t_max, cfg.n_paths, _seed_of(cfg),
                             control=ctrl, hit_levels=(cfg.level,))
        est = estimate_hitting_laplace(ens, cfg.level, cfg.lam,
                                       condition=cfg.condition)
        gap = abs(est.mean - analytic)
        result["mc"] = {"mean": est.mean, "stderr": est.stderr,
                        "n": est.n, "bias_bound": est.bias_bound,
                        "within_3_stderr_plus_bias":
                            bool(gap <= 3 * est.stderr + est.bias_bound)}
    return result, 0, []


def _cmd_simulate(cfg: RunConfig, m: SpeedMeasure, out: str):
    _need(cfg, "x", "t_max", "n_paths")
    ctrl = StepControl(bridge_correction=cfg.bridge_correction)
    ens = simulate_paths(m, cfg.x, cfg.t_max, cfg.n_paths, _seed_of(cfg),
                         control=ctrl, checkpoints=cfg.checkpoints,
                         hit_levels=cfg.hit_levels)
    result = ens.summary_dict()
    result["estimates"] = [
        {"t": t, **estimate_stopped_mean(ens, t).__dict__}
        for t in cfg.checkpoints] if cfg.n_paths else []
    files = []
    if cfg.dump_paths:
        path = os.path.join(out, "paths.csv")
        ens.dump_checkpoints_csv(path)
        files.append(path)
        result["csv"] = ["paths.csv"]
    return result, 0, files


def _cmd_audit(cfg: RunConfig, m: SpeedMeasure, out: str):
    _need(cfg, "x")
    lambdas = cfg.lambdas or (0.1, 0.5, 2.0)
    budget = cfg.n_paths or 0
    report = consistency_audit(m, cfg.x, lambdas=lambdas, mc_budget=budget,
                               seed=_seed_of(cfg),
                               options=cfg.solver_options())
    return report.to_json_dict(), 0 if report.all_consistent else 1, []


_HANDLERS = {
    "classify": _cmd_classify,
    "eigen": _cmd_eigen,
    "green": _cmd_green,
    "defect": _cmd_defect,
    "hittime": _cmd_hittime,
    "simulate": _cmd_simulate,
    "audit": _cmd_audit,
}


def run(config: RunConfig, out_dir: str = ".") -> int:
    """Dispatch one validated config; returns the process exit status."""
    os.makedirs(out_dir, exist_ok=True)
    started = time.time()
    report = {
        "command": config.command,
        "version": __version__,
        "config": config.to_dict(),
    }
    status = 0
    try:
        m = build_measure(config.measure)
        result, status, _ = _HANDLERS[config.command](config, m, out_dir)
        report["result"] = result
    except UndecidableTailError as exc:
        report["refusal"] = str(exc)
        status = 2
    except AuditError as exc:
        report["error"] = str(exc)
        if exc.report is not None:
            report["result"] = exc.report.to_json_dict()
        status = 1
    except NatscaleError as exc:
        report["error"] = str(exc)
        status = 1
    report["status"] = status
    report["wall_time_s"] = round(time.time() - started, 6)
    path = os.path.join(out_dir, f"{config.command}_report.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="natscale",
        description="Classify one-dimensional natural-scale diffusions "
                    "from their speed measure.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True,
                        help="JSON config file for the command")
    parser.add_argument("--out", default=".",
                        help="directory for the report and CSV outputs")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed (or NATSCALE_SEED)")
    parser.add_argument("--paths", type=int, default=None,
                        help="override the config n_paths")
    parser.add_argument("--lambda", dest="lam", type=float, default=None,
                        help="override the config lambda")
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise MeasureError("config must be a JSON object")
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.paths is not None:
            raw["n_paths"] = args.paths
        if args.lam is not None:
            raw["lambda"] = args.lam
        cfg = RunConfig.from_dict(args.command, raw)
    except (OSError, json.JSONDecodeError, NatscaleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return run(cfg, args.out)
    except NatscaleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
