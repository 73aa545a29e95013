"""Monotone eigenfunctions of the natural-scale generator.

For lambda > 0 the equation  (d/dm)(d/dx) f = lambda f  has a positive
increasing solution f_minus and a positive decreasing solution f_plus,
unique up to constants away from regular boundaries.  Everything here is
built from one primitive: the successive-approximation (Volterra) series
for the solution with prescribed value and slope at an expansion point,

    f(x) = f(x0) + f'(x0) (x - x0) + lambda * int_x0^x (x - y) f(y) m(dy),

iterated on a fixed grid.  The series is entire in lambda, and every term
keeps the sign of its seed, which makes the constructions below free of
catastrophic cancellation:

* f_minus is the limit of solutions killed at a ladder of points z
  descending to the left endpoint (or to -infinity), each seeded with
  unit slope at z.
* f_plus solves the tail equation g = 1 + lambda * int_x^inf (y-x) g dm
  when the right tail first moment is finite (then alpha_plus = 1), and
  otherwise is the limit of solutions killed at a ladder climbing to the
  right endpoint.

Kill points advance dyadically, but never by more than a fixed increment
of the local amplitude integral int sqrt(lambda rho) dx, which keeps the
solution scale representable however fast the density blows up at the
endpoint.  Derivatives are never finite-differenced; they come from the
same cumulative measure integrals as the values, as right-derivatives, so
atom jumps land on the correct side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import ConvergenceError, MeasureError
from .measure import FINITE, SpeedMeasure, first_moment_tail
from .quadrature import MeasureGrid, improper_integral, insert_points

NORM_VANISH_LEFT = "f_minus_vanishing_at_l_minus"
NORM_ALPHA_ONE = "alpha_plus_one"
NORM_UNIT = "unit_at_origin"
NORM_KILLED = "vanishing_at_kill_point"


@dataclass(frozen=True)
class SolverOptions:
    """Grid and convergence knobs for the eigenfunction solvers."""

    n_core: int = 3000                  # uniform point target on the core
    points_per_wavelength: float = 16.0  # resolves 1/sqrt(lambda rho)
    geometric_factor: float = 0.011     # relative step near finite endpoints
    relative_factor: float = 0.02       # relative step in far extensions
    series_rel_tol: float = 1e-13       # Volterra term cutoff vs partial sum
    max_terms: int = 2500
    ladder_rel_tol: float = 1e-9        # kill-ladder probe convergence
    ladder_accept_tol: float = 1e-6     # accepted Aitken residual at exhaustion
    ladder_start: float = 4.0           # first rung offset toward infinity
    ladder_amplitude_step: float = 12.0  # max amplitude gain per rung
    max_rungs: int = 26
    fprime_rungs: int = 12              # derivative ladder length (L0 * 2^k)
    amplitude_budget: float = 500.0     # cap on int sqrt(lambda rho) dx
    probe_count: int = 5

    def replaced(self, **kw) -> "SolverOptions":
        return replace(self, **kw)


DEFAULT_OPTIONS = SolverOptions()


def default_expansion_point(m: SpeedMeasure) -> float:
    """0 when the interval contains it, else midpoint / unit inset."""
    iv = m.interval
    if iv.contains(0.0):
        return 0.0
    if math.isfinite(iv.l_minus) and math.isfinite(iv.l_plus):
        return 0.5 * (iv.l_minus + iv.l_plus)
    if math.isfinite(iv.l_minus):
        return iv.l_minus + 1.0
    return iv.l_plus - 1.0


def auto_window(m: SpeedMeasure, x: float | None = None) -> tuple[float, float]:
    """A sensible core window around x (or the expansion point)."""
    iv = m.interval
    ref = x if x is not None else default_expansion_point(m)
    if not iv.contains(ref):
        raise MeasureError(f"reference point {ref} outside the interval")
    if math.isfinite(iv.l_minus) and math.isfinite(iv.l_plus):
        pad = (iv.l_plus - iv.l_minus) / 64.0
        return iv.l_minus + pad, iv.l_plus - pad
    if math.isfinite(iv.l_minus):
        gap = max(ref - iv.l_minus, 1.0)
        return iv.l_minus + gap / 64.0, iv.l_minus + 8.0 * gap
    if math.isfinite(iv.l_plus):
        gap = max(iv.l_plus - ref, 1.0)
        return iv.l_plus - 8.0 * gap, iv.l_plus - gap / 64.0
    return ref - 8.0, ref + 8.0


# ---------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class Eigenfunction:
    """Grid-sampled positive solution of the eigenvalue equation.

    ``right_derivative`` holds right-derivatives consistent with the
    measure (they jump across atoms).  ``window`` records the requested
    core; the grid may extend beyond it with solver support points.
    """

    lam: float
    grid: np.ndarray
    values: np.ndarray
    right_derivative: np.ndarray
    monotonicity: str | None
    normalization: str
    kind: str
    x0: float
    window: tuple[float, float]

    @cached_property
    def _value_interp(self):
        return PchipInterpolator(self.grid, self.values, extrapolate=False)

    @cached_property
    def _deriv_interp(self):
        return PchipInterpolator(self.grid, self.right_derivative,
                                 extrapolate=False)

    def __call__(self, x):
        out = self._value_interp(np.asarray(x, dtype=float))
        if np.any(np.isnan(out)):
            raise MeasureError(f"{self.kind}: evaluation outside the grid "
                               f"[{self.grid[0]:.6g}, {self.grid[-1]:.6g}]")
        return out

    def deriv(self, x):
        out = self._deriv_interp(np.asarray(x, dtype=float))
        if np.any(np.isnan(out)):
            raise MeasureError(f"{self.kind}: evaluation outside the grid")
        return out

    def rescaled(self, c: float) -> "Eigenfunction":
        return replace(self, values=self.values * c,
                       right_derivative=self.right_derivative * c)

    def to_csv(self, path):
        """Write x,value,right_derivative rows; the header line carries
        lambda, normalization and the core window."""
        with open(path, "w") as fh:
            fh.write(f"# lambda={float(self.lam)!r} "
                     f"normalization={self.normalization} "
                     f"window={float(self.window[0])!r},"
                     f"{float(self.window[1])!r}\n")
            fh.write("x,value,right_derivative\n")
            for x, v, d in zip(self.grid, self.values, self.right_derivative):
                fh.write(f"{float(x)!r},{float(v)!r},{float(d)!r}\n")

    def validate(self, rel_tol: float = 1e-9) -> "Eigenfunction":
        vals = self.values[1:] if self.kind == "killed" else self.values
        if len(vals) and np.min(vals) <= 0:
            raise ConvergenceError(f"{self.kind}: nonpositive values on grid")
        if self.monotonicity is not None:
            d = np.diff(self.values)
            scale = np.maximum(np.abs(self.values[:-1]),
                               np.abs(self.values[1:]))
            bad = d < -rel_tol * scale if self.monotonicity == "increasing" \
                else d > rel_tol * scale
            if np.any(bad):
                i = int(np.flatnonzero(bad)[0])
                raise ConvergenceError(
                    f"{self.kind}: {self.monotonicity} monotonicity violated "
                    f"near x={self.grid[i]:.6g}")
        return self


@dataclass(frozen=True)
class EigenPair:
    """Matched increasing/decreasing solutions at one lambda.

    ``wronskian_h`` is the grid median of f_plus f'_minus - f_minus f'_plus
    over the shared core, constant in exact arithmetic; ``wronskian_dev``
    records the observed relative spread as a solver diagnostic.
    """

    f_minus: Eigenfunction
    f_plus: Eigenfunction
    wronskian_h: float
    wronskian_dev: float
    alpha_plus: float
    lam: float
    truncation_window: tuple[float, float]
    measure: SpeedMeasure

    def __post_init__(self):
        if not self.wronskian_h > 0:
            raise ConvergenceError("nonpositive wronskian")
        if self.alpha_plus < 0:
            raise ConvergenceError("negative alpha_plus")
        if self.alpha_plus > float(np.min(self.f_plus.values)) * (1 + 1e-9):
            raise ConvergenceError("alpha_plus exceeds the f_plus minimum")


# ---------------------------------------------------------------------------
# grid construction


def _march(m: SpeedMeasure, lam: float, start: float, stop: float,
           opt: SolverOptions, h_max: float | None,
           max_points: int = 500_000) -> np.ndarray:
    """March from start to stop (either direction), resolving the local
    oscillation length, finite endpoints and (in far extensions, where
    h_max is None) the relative position scale."""
    if start == stop:
        return np.array([start])
    direction = 1.0 if stop > start else -1.0
    iv = m.interval
    pts = [start]
    x = start
    for _ in range(max_points):
        r = float(m.rho(np.asarray([x]))[0])
        step = h_max if h_max is not None \
            else opt.relative_factor * max(abs(x), 1.0)
        if lam * r > 0:
            step = min(step, 1.0 / math.sqrt(lam * r) /
                       opt.points_per_wavelength)
        if math.isfinite(iv.l_minus):
            step = min(step, max(opt.geometric_factor * (x - iv.l_minus),
                                 1e-300))
        if math.isfinite(iv.l_plus):
            step = min(step, max(opt.geometric_factor * (iv.l_plus - x),
                                 1e-300))
        step = max(step, 1e-13 * max(abs(x), 1e-6))
        x = x + direction * step
        if (stop - x) * direction <= 0:
            pts.append(stop)
            break
        pts.append(x)
    else:
        raise MeasureError("grid march exceeded the point budget")
    arr = np.array(pts)
    return arr[::-1] if direction < 0 else arr


def _march_amplitude(m: SpeedMeasure, lam: float, start: float,
                     direction: int, s_cap: float, dist_cap: float,
                     opt: SolverOptions, max_points: int = 500_000):
    """March away from ``start`` recording the amplitude integral
    S(x) = int sqrt(lambda rho); stop at the amplitude cap, the distance
    cap, or a step underflow near a finite endpoint.

    Returns (points, S) with points ordered away from start.
    """
    iv = m.interval
    limit = iv.l_plus if direction > 0 else iv.l_minus
    pts = [start]
    amps = [0.0]
    x, s = start, 0.0
    for _ in range(max_points):
        r = float(m.rho(np.asarray([x]))[0])
        k = math.sqrt(max(lam * r, 0.0))
        step = opt.relative_factor * max(abs(x), 1.0)
        if k > 0:
            step = min(step, 1.0 / k / opt.points_per_wavelength)
        if math.isfinite(iv.l_minus):
            step = min(step, max(opt.geometric_factor * (x - iv.l_minus),
                                 1e-300))
        if math.isfinite(iv.l_plus):
            step = min(step, max(opt.geometric_factor * (iv.l_plus - x),
                                 1e-300))
        if step <= 1e-13 * max(abs(x), 1e-12):
            break
        nxt = x + direction * step
        if math.isfinite(limit) and (limit - nxt) * direction <= 0:
            break
        s += k * step
        pts.append(nxt)
        amps.append(s)
        x = nxt
        if s >= s_cap or abs(x - start) >= dist_cap:
            break
    else:
        raise MeasureError("amplitude march exceeded the point budget")
    return np.array(pts), np.array(amps)


def _solver_grid(m: SpeedMeasure, lam: float, core: tuple[float, float],
                 left_pts: np.ndarray | None, right_pts: np.ndarray | None,
                 opt: SolverOptions, musts=()) -> np.ndarray:
    lo, hi = core
    iv = m.interval
    if not (iv.l_minus < lo < hi < iv.l_plus):
        raise MeasureError(f"window [{lo}, {hi}] not inside the open "
                           f"interval ({iv.l_minus}, {iv.l_plus})")
    h_max = (hi - lo) / max(opt.n_core, 8)
    parts = [_march(m, lam, lo, hi, opt, h_max)]
    if left_pts is not None and len(left_pts) > 1:
        parts.insert(0, left_pts[::-1][:-1])   # ascending, drop the join
    if right_pts is not None and len(right_pts) > 1:
        parts.append(right_pts[1:])
    grid = np.concatenate(parts)
    extra = list(musts)
    extra += [p for p, _ in m.atoms if grid[0] < p < grid[-1]]
    extra += [b for b in m.breakpoints if grid[0] < b < grid[-1]]
    return insert_points(grid, extra)


def _measure_grid(m: SpeedMeasure, grid: np.ndarray) -> MeasureGrid:
    lo, hi = grid[0], grid[-1]
    return MeasureGrid(
        grid, m.rho(grid),
        breakpoints=[b for b in m.breakpoints if lo < b < hi],
        atoms=[(p, ms) for p, ms in m.atoms if lo < p < hi])


def _grid_index(grid: np.ndarray, x: float) -> int:
    j = int(np.searchsorted(grid, x))
    for cand in (j - 1, j, j + 1):
        if 0 <= cand < len(grid) and math.isclose(grid[cand], x,
                                                  rel_tol=1e-12,
                                                  abs_tol=1e-300):
            return cand
    raise MeasureError(f"point {x} is not a grid point")


# ---------------------------------------------------------------------------
# the series engine


def _series(mq: MeasureGrid, lam: float, i0: int, seed: np.ndarray,
            slope: float, opt: SolverOptions):
    """Sum the Volterra series from expansion index i0.

    Returns (values, right_derivatives, term_sup_norms); raises when the
    terms stop decaying inside the term budget.
    """
    f = seed.copy()
    df = np.full_like(seed, slope)
    t = seed.copy()
    norms = []
    for _ in range(opt.max_terms):
        T, M = mq.convolve_kernel(t, i0)
        df += lam * M
        t = lam * T
        f += t
        sup = float(np.max(np.abs(t)))
        norms.append(sup)
        scale = float(np.max(np.abs(f)))
        if not math.isfinite(sup) or not math.isfinite(scale):
            raise ConvergenceError(
                "series overflow; window too wide for this lambda")
        if sup <= opt.series_rel_tol * max(scale, 1e-300):
            return f, df, norms
    raise ConvergenceError(
        f"series terms still {norms[-1]:.3g} after {opt.max_terms} terms "
        "(window too wide for this lambda)")


def _series_from_right(mq: MeasureGrid, lam: float, opt: SolverOptions):
    """Bounded tail solution g = 1 + lambda int_x^R (y - x) g dm."""
    n = mq.n
    g = np.ones(n)
    dg = np.zeros(n)
    t = np.ones(n)
    norms = []
    for _ in range(opt.max_terms):
        T, Mr = mq.convolve_kernel_right(t)
        t = lam * T
        dg -= lam * Mr
        g += t
        sup = float(np.max(t))
        norms.append(sup)
        if not math.isfinite(sup):
            raise ConvergenceError("tail series overflow; right tail moment "
                                   "was misdeclared as finite")
        if sup <= opt.series_rel_tol * float(np.max(g)):
            return g, dg, norms
    raise ConvergenceError("tail series does not decay; right tail moment "
                           "was misdeclared as finite")


# ---------------------------------------------------------------------------
# public basis


def picard_basis(m: SpeedMeasure, lam: float, window,
                 tol: float | None = None,
                 options: SolverOptions = DEFAULT_OPTIONS):
    """Successive-approximation basis (phi, psi) at the expansion point.

    phi(x0) = 1, phi'(x0) = 0, psi(x0) = 0, psi'(x0) = 1 hold exactly by
    construction.  The series is truncated once the latest term falls
    below ``tol`` relative to the partial sum's sup norm over the window;
    term sup norms are attached as ``_term_norms`` for diagnostics.
    """
    if lam <= 0:
        raise MeasureError("lambda must be positive")
    lo, hi = float(window[0]), float(window[1])
    x0 = default_expansion_point(m)
    if not lo <= x0 <= hi:
        raise MeasureError(
            f"window [{lo}, {hi}] must contain the expansion point {x0}")
    opt = options if tol is None else options.replaced(series_rel_tol=tol)
    grid = _solver_grid(m, lam, (lo, hi), None, None, opt, musts=[x0])
    mq = _measure_grid(m, grid)
    i0 = mq.index_of(x0)

    phi, dphi, norms_phi = _series(mq, lam, i0, np.ones(len(grid)), 0.0, opt)
    psi, dpsi, norms_psi = _series(mq, lam, i0, grid - x0, 1.0, opt)

    common = dict(lam=lam, grid=grid, x0=x0, window=(lo, hi))
    phi_f = Eigenfunction(values=phi, right_derivative=dphi,
                          monotonicity=None, normalization=NORM_UNIT,
                          kind="phi", **common)
    psi_f = Eigenfunction(values=psi, right_derivative=dpsi,
                          monotonicity="increasing", normalization=NORM_UNIT,
                          kind="psi", **common)
    object.__setattr__(phi_f, "_term_norms", norms_phi)
    object.__setattr__(psi_f, "_term_norms", norms_psi)
    return phi_f, psi_f


# ---------------------------------------------------------------------------
# kill-point ladders


class _LadderSolution:
    """One converged monotone solution plus its rung diagnostics."""

    def __init__(self, grid, values, derivs, i0, rungs, kill_position):
        self.grid = grid
        self.values = values
        self.derivs = derivs
        self.i0 = i0
        self.rungs = rungs
        self.kill_position = kill_position


def _aitken_arrays(v0, v1, v2):
    d1 = v1 - v0
    d2 = v2 - v1
    den = d2 - d1
    out = v2.copy()
    safe = np.abs(den) > 1e-30 * np.maximum(np.abs(v2), 1e-300)
    out[safe] = v2[safe] - d2[safe] ** 2 / den[safe]
    return np.where(out > 0, out, v2) if np.any(out <= 0) else out


def _pick_rungs(ext_pts: np.ndarray, ext_amp: np.ndarray, start: float,
                endpoint: float, direction: int, opt: SolverOptions):
    """Kill positions along the marched extension: dyadic strides toward
    the endpoint, shortened whenever a stride would gain more than
    ``ladder_amplitude_step`` of amplitude."""
    rungs = []
    prev_s = 0.0
    prev_pos = start
    for k in range(opt.max_rungs):
        if math.isfinite(endpoint):
            target = endpoint + (start - endpoint) * 2.0 ** -(k + 1)
        else:
            target = start + direction * opt.ladder_start * 2.0 ** k
        # index of the first marched point at/beyond the amplitude step
        j = int(np.searchsorted(ext_amp, prev_s + opt.ladder_amplitude_step))
        if j >= len(ext_pts):
            cand = target
        else:
            s_point = ext_pts[j]
            cand = max(target, s_point) if direction < 0 \
                else min(target, s_point)
        # clamp to the marched range
        if direction < 0:
            cand = max(cand, ext_pts[-1])
            if cand >= prev_pos:
                continue
        else:
            cand = min(cand, ext_pts[-1])
            if cand <= prev_pos:
                continue
        jj = int(np.abs(ext_pts - cand).argmin())
        rungs.append(float(ext_pts[jj]))
        prev_s = float(ext_amp[jj])
        prev_pos = rungs[-1]
        if jj == len(ext_pts) - 1:
            break
    # drop duplicates while preserving order
    out = []
    for r in rungs:
        if not out or (direction < 0 and r < out[-1]) \
                or (direction > 0 and r > out[-1]):
            out.append(r)
    if len(out) < 2:
        raise ConvergenceError(
            "kill ladder has no room inside the amplitude budget; "
            "lambda is too large for this window")
    return out


def _killed_ladder(m: SpeedMeasure, lam: float, core, side: str,
                   opt: SolverOptions, far: float | None = None,
                   musts=()) -> _LadderSolution:
    """Drive the kill point toward one endpoint until the normalized
    solution stabilizes on the core window.

    side "left" builds the increasing branch (seed slope +1 at z below the
    core), side "right" the decreasing branch.  ``far`` extends the grid
    beyond the core on the opposite side, for derivative ladders and tail
    quadrature.  All rungs live on one shared grid, so successive rung
    solutions align exactly for comparison and Aitken extrapolation.
    """
    lo, hi = core
    if not lo < hi:
        raise MeasureError(f"empty core window [{lo}, {hi}]")
    x0 = min(max(default_expansion_point(m), lo), hi)
    iv = m.interval
    budget = opt.amplitude_budget

    if side == "left":
        endpoint, direction, edge = iv.l_minus, -1, lo
    elif side == "right":
        endpoint, direction, edge = iv.l_plus, +1, hi
    else:
        raise MeasureError(f"unknown side {side!r}")

    dist_cap = opt.ladder_start * 2.0 ** opt.max_rungs
    ext_pts, ext_amp = _march_amplitude(m, lam, edge, direction,
                                        0.5 * budget, dist_cap, opt)
    rungs = _pick_rungs(ext_pts, ext_amp, edge, endpoint, direction, opt)

    # far-side coverage, clamped by the remaining amplitude budget
    if far is not None:
        far_dir = -direction
        reach = _far_reach(m, lam, hi if side == "left" else lo, far_dir,
                           0.45 * budget, opt)
        far = min(far, reach) if far_dir > 0 else max(far, reach)

    probes = list(np.linspace(lo, hi, opt.probe_count))
    # extension arrays are ordered away from the core in _solver_grid
    if side == "left":
        left_pts = ext_pts
        right_pts = _march(m, lam, hi, far, opt, None) \
            if far is not None and far > hi else None
    else:
        right_pts = ext_pts
        left_pts = _march(m, lam, lo, far, opt, None)[::-1] \
            if far is not None and far < lo else None
    grid = _solver_grid(m, lam, core, left_pts, right_pts, opt,
                        musts=[x0, *rungs, *probes, *musts])
    rho_vals = m.rho(grid)
    breaks = [b for b in m.breakpoints if grid[0] < b < grid[-1]]
    atoms = [(p, ms) for p, ms in m.atoms if grid[0] < p < grid[-1]]

    probe_idx_full = [_grid_index(grid, p) for p in probes]

    history = []
    keep: list[tuple[int, np.ndarray, np.ndarray]] = []
    last_probe = None
    converged_at = None
    for z in rungs:
        iz = _grid_index(grid, z)
        if side == "left":
            sl = slice(iz, len(grid))
            sub_kill, sgn = 0, +1.0
        else:
            sl = slice(0, iz + 1)
            sub_kill, sgn = iz, -1.0
        gsub = grid[sl]
        sub = MeasureGrid(gsub, rho_vals[sl],
                          breakpoints=[b for b in breaks
                                       if gsub[0] < b < gsub[-1]],
                          atoms=[(p, ms) for p, ms in atoms
                                 if gsub[0] < p < gsub[-1]])
        seed = sgn * (gsub - z)
        vals, ders, _ = _series(sub, lam, sub_kill, seed, sgn, opt)
        i0 = _grid_index(gsub, x0)
        c = vals[i0]
        if not c > 0:
            raise ConvergenceError(
                "killed solution nonpositive at the expansion point "
                "(quadrature failure)")
        vals = vals / c
        ders = ders / c
        local = [i - sl.start for i in probe_idx_full]
        pv = vals[local]
        history.append((z, float(pv[len(pv) // 2])))
        keep.append((iz, vals, ders))
        if len(keep) > 3:
            keep.pop(0)
        if last_probe is not None:
            rel = np.abs(pv - last_probe) / np.maximum(np.abs(pv), 1e-300)
            if float(np.max(rel)) <= opt.ladder_rel_tol:
                converged_at = z
                break
        last_probe = pv

    if converged_at is None:
        return _finish_by_aitken(m, grid, keep, history, rungs, side, x0, opt,
                                 probe_idx_full)

    iz, vals, ders = keep[-1]
    if side == "left":
        g = grid[iz + 1:]
        return _LadderSolution(g, vals[1:], ders[1:],
                               _grid_index(g, x0), history, converged_at)
    g = grid[:iz]
    return _LadderSolution(g, vals[:-1], ders[:-1], _grid_index(g, x0),
                           history, converged_at)


def _finish_by_aitken(m, grid, keep, history, rungs, side, x0, opt,
                      probe_idx_full):
    """Ladders with an accessible endpoint (or a finite opposite tail)
    converge geometrically under rung halving; Aitken extrapolation of
    the last three rungs then removes the leading error term."""
    if len(keep) < 3:
        raise ConvergenceError(
            f"{side} kill ladder did not stabilize; rung trace: {history}")
    (_, v0, d0), (_, v1, d1), (iz2, v2, d2) = keep
    n_common = min(len(v0), len(v1), len(v2)) - 1
    if side == "left":
        a = [v[-n_common:] for v in (v0, v1, v2)]
        b = [d[-n_common:] for d in (d0, d1, d2)]
        g = grid[len(grid) - n_common:]
    else:
        a = [v[:n_common] for v in (v0, v1, v2)]
        b = [d[:n_common] for d in (d0, d1, d2)]
        g = grid[:n_common]
    acc = _aitken_arrays(*a)
    dacc = _aitken_arrays(*b)
    i0 = _grid_index(g, x0)
    locs = [_grid_index(g, grid[i]) for i in probe_idx_full]
    rel = np.abs(acc[locs] - a[2][locs]) / np.maximum(np.abs(acc[locs]), 1e-300)
    err = float(np.max(rel))
    if err > opt.ladder_accept_tol:
        raise ConvergenceError(
            f"{side} kill ladder did not stabilize (Aitken residual "
            f"{err:.2e}); rung trace: {history}")
    return _LadderSolution(g, acc, dacc, i0, history,
                           rungs[len(history) - 1])


def _far_reach(m: SpeedMeasure, lam: float, start: float, direction: int,
               budget: float, opt: SolverOptions) -> float:
    pts, amp = _march_amplitude(m, lam, start, direction, budget,
                                opt.ladder_start * 2.0 ** opt.max_rungs, opt)
    return float(pts[-1])


# ---------------------------------------------------------------------------
# the two monotone solutions


def solve_f_minus(m: SpeedMeasure, lam: float, window=None,
                  options: SolverOptions = DEFAULT_OPTIONS,
                  far: float | None = None) -> Eigenfunction:
    """Positive increasing solution, unit value at the expansion point.

    With a finite left endpoint the solution vanishes there (the kill
    ladder descends to it); with l_minus = -inf the normalization is unit
    value at the expansion point.
    """
    if lam <= 0:
        raise MeasureError("lambda must be positive")
    core = tuple(map(float, window)) if window is not None else auto_window(m)
    sol = _killed_ladder(m, lam, core, "left", options, far=far)
    tag = NORM_VANISH_LEFT if math.isfinite(m.interval.l_minus) else NORM_UNIT
    f = Eigenfunction(lam=lam, grid=sol.grid, values=sol.values,
                      right_derivative=sol.derivs, monotonicity="increasing",
                      normalization=tag, kind="f_minus",
                      x0=float(sol.grid[sol.i0]), window=core)
    object.__setattr__(f, "_rungs", sol.rungs)
    return f.validate()


def _choose_tail_radius(m: SpeedMeasure, lam: float, core,
                        opt: SolverOptions):
    """Truncation radius for the tail equation: the neglected mass
    lambda * int_R (y - x) m(dy) must be negligible for every core x."""
    lo, hi = core
    R = max(2.0 * abs(hi), hi + 8.0 * opt.ladder_start, 64.0)
    target = 0.01 * opt.ladder_rel_tol
    bound = math.inf
    for _ in range(24):
        t1 = improper_integral(lambda y: abs(y) * float(m.rho(y)), R,
                               m.breakpoints)
        bound = lam * t1 * (1.0 + (abs(lo) + abs(hi)) / R)
        if not math.isfinite(bound):
            raise ConvergenceError("right tail first moment diverges; "
                                   "tail equation not applicable")
        if bound <= target:
            return R, bound
        R *= 2.0
    return R, bound


def solve_f_plus(m: SpeedMeasure, lam: float, window=None,
                 options: SolverOptions = DEFAULT_OPTIONS,
                 far: float | None = None) -> Eigenfunction:
    """Positive decreasing solution.

    When the right tail first moment is finite the bounded tail solution
    (g -> 1 at +inf) exists and is returned, so alpha_plus = 1.  When it
    is infinite (alpha_plus = 0) or the right endpoint is finite, the
    solution is a kill ladder climbing to the right, unit at the
    expansion point.
    """
    if lam <= 0:
        raise MeasureError("lambda must be positive")
    core = tuple(map(float, window)) if window is not None else auto_window(m)
    lo, hi = core
    x0 = min(max(default_expansion_point(m), lo), hi)
    iv = m.interval

    tail_finite = False
    if not math.isfinite(iv.l_plus):
        tail_finite = first_moment_tail(m, x0, "right").verdict == FINITE

    if tail_finite:
        R, bound = _choose_tail_radius(m, lam, core, options)
        left_pts = None
        if far is not None and far < lo:
            # ordered away from the core, as _solver_grid expects
            left_pts = _march(m, lam, lo, far, options, None)[::-1]
        right_pts = _march(m, lam, hi, R, options, None)
        grid = _solver_grid(m, lam, core, left_pts, right_pts, options,
                            musts=[x0])
        mq = _measure_grid(m, grid)
        g, dg, norms = _series_from_right(mq, lam, options)
        f = Eigenfunction(lam=lam, grid=grid, values=g, right_derivative=dg,
                          monotonicity="decreasing",
                          normalization=NORM_ALPHA_ONE, kind="f_plus",
                          x0=x0, window=core)
        object.__setattr__(f, "_term_norms", norms)
        object.__setattr__(f, "_tail_truncation", (R, bound))
        return f.validate()

    sol = _killed_ladder(m, lam, core, "right", options, far=far)
    f = Eigenfunction(lam=lam, grid=sol.grid, values=sol.values,
                      right_derivative=sol.derivs, monotonicity="decreasing",
                      normalization=NORM_UNIT, kind="f_plus",
                      x0=float(sol.grid[sol.i0]), window=core)
    object.__setattr__(f, "_rungs", sol.rungs)
    return f.validate()


# ---------------------------------------------------------------------------
# pairing, wronskian and derived quantities


def wronskian(f_minus: Eigenfunction, f_plus: Eigenfunction,
              max_rel_dev: float = 1e-4) -> float:
    """Median of f_plus f'_minus - f_minus f'_plus over shared points.

    Constant in exact arithmetic; raises when the observed relative spread
    exceeds ``max_rel_dev`` (a sign of inconsistent solutions).
    """
    h, dev = _wronskian_profile(f_minus, f_plus)
    if dev > max_rel_dev:
        raise ConvergenceError(
            f"wronskian deviates by {dev:.2e} across the grid")
    return h


def _wronskian_profile(fm: Eigenfunction, fp: Eigenfunction):
    if fm.lam != fp.lam:
        raise MeasureError("eigenfunctions have different lambda")
    lo = max(fm.grid[0], fp.grid[0], fm.window[0])
    hi = min(fm.grid[-1], fp.grid[-1], fm.window[1])
    if not lo < hi:
        raise MeasureError("eigenfunction grids do not overlap")
    sel = (fm.grid >= lo) & (fm.grid <= hi)
    xs = fm.grid[sel]
    shared = np.isin(xs, fp.grid)
    if int(shared.sum()) >= 16:
        xs = xs[shared]
        i_m = np.searchsorted(fm.grid, xs)
        i_p = np.searchsorted(fp.grid, xs)
        w = (fp.values[i_p] * fm.right_derivative[i_m]
             - fm.values[i_m] * fp.right_derivative[i_p])
    else:
        w = fp(xs) * fm.right_derivative[sel] - fm.values[sel] * fp.deriv(xs)
    h = float(np.median(w))
    dev = float(np.max(np.abs(w - h)) / abs(h)) if h != 0 else math.inf
    return h, dev


def solve_pair(m: SpeedMeasure, lam: float, window=None,
               options: SolverOptions = DEFAULT_OPTIONS,
               far_minus: float | None = None,
               far_plus: float | None = None) -> EigenPair:
    """Solve both monotone eigenfunctions on a shared core window.

    With a finite left endpoint, f_minus is rescaled so the pair's
    wronskian is 1 (together with the tail normalization of f_plus this
    pins every downstream ratio); on a two-sided infinite interval both
    members keep unit value at the expansion point instead.
    """
    core = tuple(map(float, window)) if window is not None else auto_window(m)
    fm = solve_f_minus(m, lam, core, options, far=far_minus)
    fp = solve_f_plus(m, lam, core, options, far=far_plus)
    h, dev = _wronskian_profile(fm, fp)
    if dev > 1e-4:
        raise ConvergenceError(
            f"pair wronskian deviates by {dev:.2e}; solutions inconsistent")
    if h <= 0:
        raise ConvergenceError("nonpositive wronskian; solver failure")

    alpha = 1.0 if fp.normalization == NORM_ALPHA_ONE else 0.0
    if math.isfinite(m.interval.l_minus):
        fm = fm.rescaled(1.0 / h)
        h, dev = _wronskian_profile(fm, fp)
    return EigenPair(f_minus=fm, f_plus=fp, wronskian_h=h, wronskian_dev=dev,
                     alpha_plus=alpha, lam=lam,
                     truncation_window=(float(fm.grid[0]), float(fp.grid[-1])),
                     measure=m)


def killed_f_minus(pair: EigenPair, z: float) -> Eigenfunction:
    """The increasing solution vanishing at z:
    f_minus - (f_minus(z) / f_plus(z)) * f_plus, positive above z."""
    fm, fp = pair.f_minus, pair.f_plus
    lo = max(fm.grid[0], fp.grid[0])
    hi = min(fm.grid[-1], fp.grid[-1])
    if not lo <= z < hi:
        raise MeasureError(f"kill point {z} outside the shared grid")
    fpz = float(fp(z))
    if not fpz > 0:
        raise ConvergenceError("f_plus vanished at the kill point; "
                               "upstream solver failure")
    ratio = float(fm(z)) / fpz
    sel = (fm.grid > z) & (fm.grid <= hi)
    xs = fm.grid[sel]
    vals = fm.values[sel] - ratio * fp(xs)
    ders = fm.right_derivative[sel] - ratio * fp.deriv(xs)
    grid = np.concatenate([[z], xs])
    vals = np.concatenate([[0.0], vals])
    d_at_z = float(fm.deriv(z)) - ratio * float(fp.deriv(z))
    ders = np.concatenate([[d_at_z], ders])
    f = Eigenfunction(lam=pair.lam, grid=grid, values=vals,
                      right_derivative=ders, monotonicity="increasing",
                      normalization=NORM_KILLED, kind="killed",
                      x0=fm.x0 if fm.x0 > z else float(xs[0]), window=(z, hi))
    return f.validate()


def hitting_laplace(pair: EigenPair, x: float, a: float) -> float:
    """Laplace transform of the hitting time of level a started from x.

    Downward targets (a < x) use the decreasing-solution ratio
    f_plus(x) / f_plus(a); upward targets use f_minus(x) / f_minus(a),
    which carries the implicit "before the lower boundary" conditioning.
    Returns 1 when a == x.
    """
    iv = pair.measure.interval
    for pt in (x, a):
        if not iv.contains(pt):
            raise MeasureError(f"point {pt} outside the interval")
    if a == x:
        return 1.0
    if a < x:
        return float(pair.f_plus(x) / pair.f_plus(a))
    return float(pair.f_minus(x) / pair.f_minus(a))


def integral_residual(f: Eigenfunction, m: SpeedMeasure,
                      window=None) -> float:
    """Sup over the window of the defining integral-equation residual,
    normalized by the sup of |f| there.

    For a true solution this is pure quadrature noise; it is the cheapest
    independent certificate that a grid function solves the eigenvalue
    problem.
    """
    lo, hi = window if window is not None else f.window
    sel = (f.grid >= lo) & (f.grid <= hi)
    grid = f.grid[sel]
    if len(grid) < 3:
        raise MeasureError("residual window too small")
    if not grid[0] <= f.x0 <= grid[-1]:
        raise MeasureError("expansion point outside the residual window")
    mq = _measure_grid(m, grid)
    i0 = mq.index_of(f.x0)
    vals = f.values[sel]
    ders = f.right_derivative[sel]
    T, _ = mq.convolve_kernel(vals, i0)
    model = vals[i0] + ders[i0] * (grid - f.x0) + f.lam * T
    return float(np.max(np.abs(vals - model)) / np.max(np.abs(vals)))


def derivative_ladder(m: SpeedMeasure, lam: float, side: str, window=None,
                      options: SolverOptions = DEFAULT_OPTIONS):
    """Sample |f'| of the relevant monotone solution along a dyadic ladder
    marching to the infinite endpoint on ``side``.

    side "right" follows f'_minus toward +inf, side "left" follows
    |f'_plus| toward -inf.  Values are normalized by |f'| at the expansion
    point, making the divergence signature scale-free.  Returns a list of
    (position, normalized derivative magnitude) pairs.
    """
    iv = m.interval
    core = tuple(map(float, window)) if window is not None else auto_window(m)
    lo, hi = core
    x0 = min(max(default_expansion_point(m), lo), hi)
    if side == "right":
        if math.isfinite(iv.l_plus):
            raise MeasureError("right derivative ladder needs l_plus = +inf")
        reach = _far_reach(m, lam, hi, +1, 0.45 * options.amplitude_budget,
                           options)
        rungs = [hi + options.ladder_start * 2.0 ** k
                 for k in range(options.fprime_rungs)]
        rungs = [r for r in rungs if r <= reach]
        if len(rungs) < 3:
            raise ConvergenceError("no room for derivative rungs inside the "
                                   "amplitude budget on the right")
        f = solve_f_minus(m, lam, core, options, far=rungs[-1])
    elif side == "left":
        if math.isfinite(iv.l_minus):
            raise MeasureError("left derivative ladder needs l_minus = -inf")
        reach = _far_reach(m, lam, lo, -1, 0.45 * options.amplitude_budget,
                           options)
        rungs = [lo - options.ladder_start * 2.0 ** k
                 for k in range(options.fprime_rungs)]
        rungs = [r for r in rungs if r >= reach]
        if len(rungs) < 3:
            raise ConvergenceError("no room for derivative rungs inside the "
                                   "amplitude budget on the left")
        f = solve_f_plus(m, lam, core, options, far=rungs[-1])
    else:
        raise MeasureError(f"unknown side {side!r}")
    scale = abs(float(f.deriv(x0)))
    if scale == 0:
        raise ConvergenceError("degenerate derivative normalization")
    return [(r, abs(float(f.deriv(r))) / scale) for r in rungs
            if f.grid[0] <= r <= f.grid[-1]]
