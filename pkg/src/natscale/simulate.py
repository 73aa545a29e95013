"""Monte Carlo path oracle for natural-scale diffusions.

The generator d^2/(dm dx) with absolutely continuous m(dx) = rho(x) dx is
the generator of the driftless SDE  dX = sigma(X) dW  with
sigma^2 = 2 / rho; that identification is the module's single modeling
assumption.  Paths are Euler-Maruyama with a state-dependent step: the
root-mean-square move sigma sqrt(dt) is kept below a fraction of both the
distance to any finite boundary and the local position scale, which is
what keeps the scheme honest when sigma explodes (x^2 for the reciprocal
Bessel family) or vanishes toward an inaccessible endpoint.

Randomness is counter-based: normals for step round k come from a Philox
stream keyed by (seed, k), so path-level parallelism can never reorder
draws and identical (measure, seed, controls) reproduce ensembles
bit-for-bit.  Level crossings are detected at grid times; the optional
Brownian-bridge correction also samples the within-step crossing
probability exp(-2 (a-x)(a-y) / (sigma^2 dt)), removing the
O(sigma sqrt(dt)) barrier-shift bias that grid detection alone suffers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MeasureError, SimulationError
from .measure import SpeedMeasure

_BRIDGE_SALT = 0x9E3779B97F4A7C15


@dataclass(frozen=True)
class StepControl:
    """Time-step and absorption policy for the Euler scheme."""

    dt_base: float = 5e-3
    boundary_refinement: float = 0.25   # rms move vs distance to boundary
    move_fraction: float = 0.25         # rms move vs local position scale
    absorption_band: float = 1e-4       # entering l +- band absorbs
    dt_floor: float = 1e-12
    bridge_correction: bool = False

    def __post_init__(self):
        if self.dt_base <= 0 or self.dt_floor <= 0:
            raise SimulationError("time steps must be positive")
        if not (0 < self.boundary_refinement <= 1
                and 0 < self.move_fraction <= 1):
            raise SimulationError("step fractions must lie in (0, 1]")


@dataclass(frozen=True)
class MCEstimate:
    """Monte Carlo mean with its standard error and provenance."""

    mean: float
    stderr: float
    n: int
    estimator: str
    bias_bound: float = 0.0


@dataclass(frozen=True)
class PathEnsemble:
    """Stopped-path ensemble: checkpoint states, absorption records and
    first-crossing times for the tracked levels.

    Absorbed paths hold the boundary value from their absorption time on,
    so checkpoint columns are samples of the stopped process.
    """

    measure_label: str
    x0: float
    t_max: float
    n_paths: int
    seed: int
    control: StepControl
    checkpoints: tuple[float, ...]
    checkpoint_values: np.ndarray           # shape (n_checkpoints, n_paths)
    absorbed: np.ndarray                    # bool per path
    absorption_time: np.ndarray             # nan when never absorbed
    absorption_value: np.ndarray            # boundary value when absorbed
    hit_times: dict[float, np.ndarray] = field(default_factory=dict)
    n_rounds: int = 0

    def checkpoint_column(self, t: float) -> np.ndarray:
        for j, ct in enumerate(self.checkpoints):
            if math.isclose(ct, t, rel_tol=1e-12, abs_tol=1e-12):
                return self.checkpoint_values[j]
        raise SimulationError(
            f"no checkpoint at t={t}; recorded {list(self.checkpoints)}")

    def summary_dict(self) -> dict:
        return {
            "measure": self.measure_label,
            "x0": self.x0,
            "t_max": self.t_max,
            "n_paths": self.n_paths,
            "seed": self.seed,
            "n_rounds": self.n_rounds,
            "absorbed_fraction": float(np.mean(self.absorbed))
            if self.n_paths else 0.0,
            "checkpoints": list(self.checkpoints),
            "checkpoint_means": [float(np.mean(c)) if self.n_paths else None
                                 for c in self.checkpoint_values],
            "hit_levels": {str(a): float(np.mean(~np.isnan(t)))
                           for a, t in self.hit_times.items()}
            if self.n_paths else {},
        }

    def dump_checkpoints_csv(self, path):
        with open(path, "w") as fh:
            fh.write("path_id,t,x,absorbed\n")
            for j, ct in enumerate(self.checkpoints):
                col = self.checkpoint_values[j]
                dead = self.absorbed & ~(self.absorption_time > ct)
                for i in range(self.n_paths):
                    fh.write(f"{i},{float(ct)!r},{float(col[i])!r},{int(dead[i])}\n")


def _round_normals(seed: int, k: int, n: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), k]))
    return gen.standard_normal(n)


def _round_uniforms(seed: int, k: int, n: int) -> np.ndarray:
    gen = np.random.Generator(
        np.random.Philox(key=[(seed ^ _BRIDGE_SALT) & (2**64 - 1), k]))
    return gen.random(n)


def simulate_paths(m: SpeedMeasure, x0: float, t_max: float, n: int,
                   seed: int, control: StepControl | None = None,
                   checkpoints=(), hit_levels=()) -> PathEnsemble:
    """Generate n stopped Euler-Maruyama paths started at x0.

    ``checkpoints`` lists times at which the stopped state is recorded
    (steps land on them exactly); ``hit_levels`` lists levels whose first
    crossing times are tracked.  Measures with atoms are refused: sticky
    points have no Euler scheme.
    """
    if m.has_atoms:
        raise SimulationError("measures with atoms do not admit "
                              "Euler-Maruyama simulation")
    iv = m.interval
    if not iv.contains(x0):
        raise SimulationError(f"start {x0} outside the open interval")
    if t_max <= 0:
        raise SimulationError("t_max must be positive")
    if n < 0:
        raise SimulationError("path count must be nonnegative")
    ctrl = control or StepControl()
    cps = tuple(sorted(float(t) for t in checkpoints))
    if any(t <= 0 or t > t_max for t in cps):
        raise SimulationError("checkpoints must lie in (0, t_max]")
    levels = tuple(float(a) for a in hit_levels)
    for a in levels:
        if not iv.contains(a):
            raise SimulationError(f"hit level {a} outside the interval")

    l_minus = iv.l_minus if math.isfinite(iv.l_minus) else None
    l_plus = iv.l_plus if math.isfinite(iv.l_plus) else None
    band_lo = None if l_minus is None \
        else l_minus + ctrl.absorption_band * max(1.0, abs(l_minus))
    band_hi = None if l_plus is None \
        else l_plus - ctrl.absorption_band * max(1.0, abs(l_plus))
    if band_lo is not None and not x0 > band_lo:
        raise SimulationError("start inside the lower absorption band")
    if band_hi is not None and not x0 < band_hi:
        raise SimulationError("start inside the upper absorption band")

    x = np.full(n, float(x0))
    t = np.zeros(n)
    absorbed = np.zeros(n, dtype=bool)
    absorption_time = np.full(n, np.nan)
    absorption_value = np.full(n, np.nan)
    cp_vals = np.full((len(cps), n), np.nan)
    cp_next = np.zeros(n, dtype=np.int64)
    cps_arr = np.asarray(cps)
    # a level equal to the start is hit at time zero by definition
    hit = {a: (np.zeros(n) if a == x0 else np.full(n, np.nan))
           for a in levels}

    live = np.flatnonzero(~absorbed & (t < t_max)) if n else np.array([], int)
    rounds = 0
    max_rounds = 50_000_000 // max(n, 1) + 10_000_000
    while live.size:
        xs = x[live]
        ts = t[live]
        sig = m.sigma(xs)
        if np.any(~np.isfinite(sig)) or np.any(sig <= 0):
            raise SimulationError("density must be strictly positive and "
                                  "finite along simulated paths")
        sig2 = sig * sig
        dt = np.full(live.size, ctrl.dt_base)
        scale = ctrl.move_fraction * np.maximum(1.0, np.abs(xs))
        np.minimum(dt, scale * scale / sig2, out=dt)
        if l_minus is not None:
            d = ctrl.boundary_refinement * (xs - l_minus)
            np.minimum(dt, d * d / sig2, out=dt)
        if l_plus is not None:
            d = ctrl.boundary_refinement * (l_plus - xs)
            np.minimum(dt, d * d / sig2, out=dt)
        if np.any(dt < ctrl.dt_floor):
            raise SimulationError("step control produced a dt underflow; "
                                  "paths too close to a boundary scale")
        # land exactly on the next checkpoint / horizon
        t_next = np.full(live.size, t_max)
        if len(cps):
            has = cp_next[live] < len(cps)
            t_next[has] = cps_arr[np.minimum(cp_next[live],
                                             len(cps) - 1)][has]
        np.minimum(t_next, t_max, out=t_next)
        dt = np.minimum(dt, t_next - ts)

        z = _round_normals(seed, rounds, live.size)
        sqdt = np.sqrt(dt)
        xn = xs + sig * sqdt * z
        tn = ts + dt

        if levels and ctrl.bridge_correction:
            u = _round_uniforms(seed, rounds, live.size)
        for a in levels:
            ht = hit[a]
            notyet = np.isnan(ht[live])
            crossed = (xn >= a) if a >= x0 else (xn <= a)
            first = crossed & notyet
            if np.any(first):
                frac = np.clip((a - xs) / np.where(xn != xs, xn - xs, np.inf),
                               0.0, 1.0)
                ht[live[first]] = ts[first] + frac[first] * dt[first]
            if ctrl.bridge_correction:
                gap0 = a - xs
                gap1 = a - xn
                interior = notyet & ~crossed & (gap0 * gap1 > 0)
                if np.any(interior):
                    p = np.exp(-2.0 * gap0 * gap1 / (sig2 * dt))
                    bridge = interior & (u < p)
                    ht[live[bridge]] = ts[bridge] + 0.5 * dt[bridge]

        newly_dead = np.zeros(live.size, dtype=bool)
        if band_lo is not None:
            low = xn <= band_lo
            if np.any(low):
                xn[low] = l_minus
                newly_dead |= low
        if band_hi is not None:
            high = xn >= band_hi
            if np.any(high):
                xn[high] = l_plus
                newly_dead |= high
        if np.any(newly_dead):
            idx = live[newly_dead]
            absorbed[idx] = True
            absorption_time[idx] = tn[newly_dead]
            absorption_value[idx] = xn[newly_dead]

        if len(cps):
            at_cp = (cp_next[live] < len(cps)) & (tn >= t_next - 1e-15) \
                & (t_next < t_max + 1.0)
            at_cp &= np.isclose(t_next, cps_arr[np.minimum(cp_next[live],
                                                           len(cps) - 1)])
            if np.any(at_cp):
                rows = cp_next[live[at_cp]]
                cp_vals[rows, live[at_cp]] = xn[at_cp]
                cp_next[live[at_cp]] += 1

        x[live] = xn
        t[live] = tn
        live = np.flatnonzero(~absorbed & (t < t_max * (1 - 1e-15)))
        rounds += 1
        if rounds > max_rounds:
            raise SimulationError("round budget exhausted; dt controls are "
                                  "likely too aggressive for this measure")

    # absorbed paths hold the boundary value at every later checkpoint
    for j, ct in enumerate(cps):
        mfill = absorbed & np.isnan(cp_vals[j])
        cp_vals[j, mfill] = absorption_value[mfill]

    return PathEnsemble(
        measure_label=m.label, x0=float(x0), t_max=float(t_max), n_paths=n,
        seed=int(seed), control=ctrl, checkpoints=cps,
        checkpoint_values=cp_vals, absorbed=absorbed,
        absorption_time=absorption_time, absorption_value=absorption_value,
        hit_times=hit, n_rounds=rounds)


def estimate_stopped_mean(ens: PathEnsemble, t: float,
                          lower_stop: float | None = None) -> MCEstimate:
    """Mean of the stopped process at a recorded checkpoint time.

    With ``lower_stop`` the process is additionally stopped at the first
    crossing of that level (which must have been tracked at simulation
    time), giving samples of X stopped at min(tau_level, tau_boundary).
    """
    if ens.n_paths == 0:
        raise SimulationError("empty ensemble has no means")
    vals = ens.checkpoint_column(t).copy()
    if lower_stop is not None:
        key = _lookup_level(ens, lower_stop)
        ht = ens.hit_times[key]
        stopped = ~np.isnan(ht) & (ht <= t)
        vals[stopped] = key
    mean = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) \
        if len(vals) > 1 else math.inf
    return MCEstimate(mean=mean, stderr=stderr, n=len(vals),
                      estimator=f"stopped_mean@t={t}")


def _lookup_level(ens: PathEnsemble, a: float) -> float:
    for key in ens.hit_times:
        if math.isclose(key, a, rel_tol=1e-12, abs_tol=1e-12):
            return key
    raise SimulationError(f"level {a} was not tracked; tracked levels: "
                          f"{sorted(ens.hit_times)}")


def estimate_hitting_laplace(ens: PathEnsemble, a: float, lam: float,
                             condition: str = "unconditional",
                             bias_tol: float | None = None) -> MCEstimate:
    """Mean of exp(-lambda tau_a), zero for paths that never crossed.

    Paths still running at the horizon are truncated, which biases the
    estimate down by at most (unhit fraction) * exp(-lambda t_max); that
    bound is reported and optionally enforced.  The conditional variant
    zeroes paths absorbed at the lower boundary before the crossing.
    """
    if lam <= 0:
        raise SimulationError("lambda must be positive")
    if condition not in ("unconditional", "before_lower_absorption"):
        raise SimulationError(f"unknown conditioning {condition!r}")
    if ens.n_paths == 0:
        raise SimulationError("empty ensemble has no means")
    key = _lookup_level(ens, a)
    ht = ens.hit_times[key].copy()
    if condition == "before_lower_absorption":
        at_lower = ens.absorbed & (ens.absorption_value <= ens.x0)
        beaten = at_lower & (~np.isnan(ht)) & (ens.absorption_time < ht)
        never = at_lower & np.isnan(ht)
        ht[beaten | never] = np.nan
    vals = np.where(np.isnan(ht), 0.0, np.exp(-lam * np.nan_to_num(ht)))
    unhit = float(np.mean(np.isnan(ht)))
    bias = unhit * math.exp(-lam * ens.t_max)
    mean = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) \
        if len(vals) > 1 else math.inf
    if bias_tol is not None and bias > bias_tol:
        raise SimulationError(
            f"truncation bias bound {bias:.3g} exceeds {bias_tol:.3g}; "
            "increase t_max")
    return MCEstimate(mean=mean, stderr=stderr, n=len(vals),
                      estimator=f"hitting_laplace@a={a},lam={lam}",
                      bias_bound=bias)


def ensemble_summary_json(ens: PathEnsemble, path):
    with open(path, "w") as fh:
        json.dump(ens.summary_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
