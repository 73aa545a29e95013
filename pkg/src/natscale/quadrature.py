"""Quadrature kernels shared by the measure and eigenfunction modules.

Two regimes are needed.  Scalar integrals of the density over an interval
use adaptive Gauss-Kronrod (`scipy.integrate.quad`) split at density
breakpoints.  The Volterra iterations of the eigenfunction solver instead
need *cumulative* integrals of grid-sampled integrands; those use composite
cumulative Simpson per smooth segment so that a density kink or an atom
never degrades the order of the rule.

Atoms are handled exactly: a cumulative measure integral C(x) jumps by
``mass * f(a)`` at an atom position ``a`` and the convention is the
right-closed one, C(x) = integral over (grid[0], x].  This matches the
right-derivative reading of eigenfunction identities.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .errors import MeasureError

_QUAD_LIMIT = 200


def segment_integral(func, a: float, b: float, breakpoints=(), epsabs=1e-13,
                     epsrel=1e-12) -> float:
    """Integrate ``func`` over [a, b], splitting at interior breakpoints."""
    if a == b:
        return 0.0
    if a > b:
        raise MeasureError(f"integration bounds out of order: {a} > {b}")
    cuts = sorted({a, b} | {p for p in breakpoints if a < p < b})
    total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        val, _ = quad(func, lo, hi, epsabs=epsabs, epsrel=epsrel,
                      limit=_QUAD_LIMIT)
        total += val
    return total


def improper_integral(func, a: float, breakpoints=(), epsabs=1e-12,
                      epsrel=1e-10) -> float:
    """Integrate ``func`` over [a, inf), splitting at breakpoints beyond a.

    The unbounded part is mapped through u = 1/y, which renders power-law
    tails polynomial.  A divergent tail makes Gauss-Kronrod warn instead
    of fail; that signal is converted to an inf return value so callers
    can reject misdeclared finite tails instead of trusting garbage.
    """
    cut = max([a, 1.0] + [p for p in breakpoints if p > a])
    total = segment_integral(func, a, cut, breakpoints) if cut > a else 0.0

    def mapped(u):
        return func(1.0 / u) / (u * u)

    with warnings.catch_warnings():
        warnings.simplefilter("error", IntegrationWarning)
        try:
            val, _ = quad(mapped, 0.0, 1.0 / cut, epsabs=epsabs,
                          epsrel=epsrel, limit=_QUAD_LIMIT)
        except IntegrationWarning:
            # one relaxed retry separates hard-but-finite from divergent
            try:
                val, _ = quad(mapped, 0.0, 1.0 / cut, epsabs=1e-9,
                              epsrel=1e-8, limit=_QUAD_LIMIT)
            except IntegrationWarning:
                return math.inf
    return total + val


class MeasureGrid:
    """A sampled measure on a fixed grid with segment-aware cumulatives.

    Parameters
    ----------
    grid:
        Strictly increasing sample points.  Breakpoints and atom positions
        must coincide with grid points (the grid builders guarantee this).
    rho_vals:
        Density values at the grid points.
    breakpoints:
        Positions where the density is non-smooth; cumulative Simpson is
        restarted there.
    atoms:
        Sequence of (position, mass) pairs, positions strictly inside the
        grid range.
    """

    def __init__(self, grid: np.ndarray, rho_vals: np.ndarray,
                 breakpoints=(), atoms=()):
        grid = np.asarray(grid, dtype=float)
        if grid.ndim != 1 or len(grid) < 3:
            raise MeasureError("grid must be a 1-d array with >= 3 points")
        if np.any(np.diff(grid) <= 0):
            raise MeasureError("grid must be strictly increasing")
        self.grid = grid
        self.rho_vals = np.asarray(rho_vals, dtype=float)
        self.n = len(grid)

        seg = {0, self.n - 1}
        for p in breakpoints:
            if grid[0] < p < grid[-1]:
                j = int(np.searchsorted(grid, p))
                if not math.isclose(grid[j], p, rel_tol=1e-12, abs_tol=1e-300):
                    raise MeasureError(f"breakpoint {p} not on grid")
                seg.add(j)

        self.atom_idx = []
        self.atom_mass = []
        for pos, mass_ in atoms:
            j = int(np.searchsorted(grid, pos))
            if j >= self.n or not math.isclose(grid[j], pos, rel_tol=1e-12,
                                               abs_tol=1e-300):
                raise MeasureError(f"atom position {pos} not on grid")
            self.atom_idx.append(j)
            self.atom_mass.append(float(mass_))
            # solutions kink where an atom sits, so quadrature restarts too
            if 0 < j < self.n - 1:
                seg.add(j)
        self._seg_idx = sorted(seg)
        self.atom_idx = np.asarray(self.atom_idx, dtype=int)
        self.atom_mass = np.asarray(self.atom_mass, dtype=float)
        self._prepare_geometry()

    def index_of(self, x: float) -> int:
        j = int(np.searchsorted(self.grid, x))
        j = min(max(j, 0), self.n - 1)
        for cand in (j - 1, j, j + 1):
            if 0 <= cand < self.n and math.isclose(self.grid[cand], x,
                                                   rel_tol=1e-12,
                                                   abs_tol=1e-300):
                return cand
        raise MeasureError(f"point {x} is not a grid point")

    def _prepare_geometry(self):
        """Cache the grid-only factors of the per-cell parabola integrals;
        only the sample values change between calls to ``_increments``."""
        self._geom = []
        x = self.grid
        for lo, hi in zip(self._seg_idx[:-1], self._seg_idx[1:]):
            if hi - lo == 1:
                self._geom.append((lo, hi, None))
                continue
            xs = x[lo:hi + 1]
            a, b, c = xs[:-2], xs[1:-1], xs[2:]
            beta = b - a
            gam = c - a
            cb = c - b
            inv_beta = 1.0 / beta
            inv_cb = 1.0 / cb
            inv_gam = 1.0 / gam
            w_l1 = beta * beta / 2.0
            w_l2 = -(beta ** 3) / 6.0
            w_r1 = (gam * gam - beta * beta) / 2.0
            Fg = gam ** 3 / 3.0 - beta * gam * gam / 2.0
            Fb = beta ** 3 / 3.0 - beta ** 3 / 2.0
            w_r2 = Fg - Fb
            self._geom.append((lo, hi, (beta, cb, inv_beta, inv_cb, inv_gam,
                                        w_l1, w_l2, w_r1, w_r2)))

    def _increments(self, u: np.ndarray) -> np.ndarray:
        """Per-cell integrals of samples u, restarted at segment boundaries
        so density kinks never degrade the order.

        Each cell integral averages the quadratic interpolants through its
        two flanking point triples (plain composite Simpson order), and is
        computed purely from local data in cell-shifted coordinates; a
        global cumulative would lose the far field to cancellation when
        the integrand spans hundreds of orders of magnitude.
        """
        inc = np.empty(self.n - 1)
        x = self.grid
        for lo, hi, geom in self._geom:
            if geom is None:
                inc[lo] = 0.5 * (u[lo] + u[hi]) * (x[hi] - x[lo])
                continue
            beta, cb, inv_beta, inv_cb, inv_gam, w_l1, w_l2, w_r1, w_r2 = geom
            ys = u[lo:hi + 1]
            ya, yb, yc = ys[:-2], ys[1:-1], ys[2:]
            d1 = (yb - ya) * inv_beta
            d2 = ((yc - yb) * inv_cb - d1) * inv_gam
            # integral of ya + d1 s + d2 s (s - beta) in s = x - a
            left = ya * beta + d1 * w_l1 + d2 * w_l2
            right = ya * cb + d1 * w_r1 + d2 * w_r2
            cells = np.empty(hi - lo)
            cells[0] = left[0]
            cells[-1] = right[-1]
            if hi - lo > 2:
                cells[1:-1] = 0.5 * (left[1:] + right[:-1])
            inc[lo:hi] = cells
        return inc

    def _anchored(self, inc: np.ndarray, i0: int) -> np.ndarray:
        """Signed cumulative of per-cell increments, zero at index i0.

        Accumulation always runs outward from the anchor, so integrands
        with mass concentrated anywhere never suffer cancellation.
        """
        out = np.empty(self.n)
        out[i0] = 0.0
        if i0 < self.n - 1:
            out[i0 + 1:] = np.cumsum(inc[i0:])
        if i0 > 0:
            out[:i0] = -np.cumsum(inc[:i0][::-1])[::-1]
        return out

    def measure_anchored(self, f_vals: np.ndarray, i0: int) -> np.ndarray:
        """M[i] = integral of f dm over (grid[i0], grid[i]], signed for
        i < i0 (then it is minus the integral over (grid[i], grid[i0]]).

        The right-closed convention matches right-derivatives: an atom at
        the anchor never contributes, an atom at grid[i] does.
        """
        f_vals = np.asarray(f_vals, dtype=float)
        M = self._anchored(self._increments(f_vals * self.rho_vals), i0)
        if len(self.atom_idx):
            steps = np.zeros(self.n)
            steps[self.atom_idx] = self.atom_mass * f_vals[self.atom_idx]
            A = np.cumsum(steps)
            M += A - A[i0]
        return M

    def lebesgue_anchored(self, u: np.ndarray, i0: int) -> np.ndarray:
        """L[i] = integral of u dy from grid[i0] to grid[i], signed."""
        return self._anchored(self._increments(np.asarray(u, dtype=float)),
                              i0)

    def cum_measure(self, f_vals: np.ndarray) -> np.ndarray:
        """C[i] = integral of f dm over (grid[0], grid[i]]."""
        return self.measure_anchored(f_vals, 0)

    def cum_lebesgue(self, u: np.ndarray) -> np.ndarray:
        """L[i] = integral of u dy over (grid[0], grid[i])."""
        return self.lebesgue_anchored(u, 0)

    def convolve_kernel(self, f_vals: np.ndarray, i0: int):
        """Return (T, M) with T[i] = int_{x0}^{x_i} (x_i - y) f dm and
        M[i] = int over (x0, x_i] of f dm (signed), x0 = grid[i0].

        One Volterra iteration step; both outputs share the same
        quadrature so value and derivative stay consistent.
        """
        M = self.measure_anchored(f_vals, i0)
        # int_{x0}^{x} (x - y) f dm = int_{x0}^{x} M(u) du, valid both sides
        T = self.lebesgue_anchored(M, i0)
        return T, M

    def convolve_kernel_right(self, f_vals: np.ndarray):
        """Return (T, Mr) with T[i] = int_{x_i}^{R} (y - x_i) f dm and
        Mr[i] = int of f dm over (x_i, R], R the last grid point."""
        Mr = -self.measure_anchored(f_vals, self.n - 1)
        T = -self.lebesgue_anchored(Mr, self.n - 1)
        return T, Mr

    def mass_between(self, i: int, j: int, f_vals=None) -> float:
        """Measure of (grid[i], grid[j]] against samples f (default 1)."""
        if f_vals is None:
            f_vals = np.ones(self.n)
        return float(self.measure_anchored(f_vals, i)[j])


def march_grid(lo: float, hi: float, rho, lam: float, *,
               n_uniform: int = 3000, points_per_wavelength: float = 16.0,
               geometric_factor: float = 0.011, l_minus: float = -np.inf,
               l_plus: float = np.inf, max_points: int = 400_000) -> np.ndarray:
    """March a grid over [lo, hi] resolving both the density scale and
    any finite endpoint.

    The local step is the minimum of a uniform target, a fraction of the
    local oscillation length 1 / sqrt(lam * rho), and a geometric fraction
    of the distance to each finite endpoint.
    """
    if not lo < hi:
        raise MeasureError(f"empty grid window [{lo}, {hi}]")
    h_max = (hi - lo) / max(int(n_uniform), 8)
    pts = [lo]
    x = lo
    while x < hi:
        r = float(rho(np.asarray([x]))[0])
        step = h_max
        if r > 0.0 and lam > 0.0:
            step = min(step, 1.0 / math.sqrt(lam * r) / points_per_wavelength)
        if math.isfinite(l_minus):
            step = min(step, max(geometric_factor * (x - l_minus), 1e-300))
        if math.isfinite(l_plus):
            step = min(step, max(geometric_factor * (l_plus - x), 1e-300))
        step = max(step, 1e-14 * max(abs(x), 1.0))
        x = min(x + step, hi)
        pts.append(x)
        if len(pts) > max_points:
            raise MeasureError("grid march exceeded the point budget; "
                               "widen tolerances or shrink the window")
    return np.array(pts)


def insert_points(grid: np.ndarray, extra) -> np.ndarray:
    """Insert extra points into a sorted grid without creating sliver cells.

    A requested point closer than a quarter of the local spacing to an
    existing grid point replaces that point (the grid is only ever a
    quadrature support, so a quarter-cell nudge is harmless); otherwise it
    is inserted.  Degenerate near-duplicate cells would otherwise wreck
    the accuracy of cumulative Simpson.
    """
    out = list(np.asarray(grid, dtype=float))
    for e in sorted({float(v) for v in extra}):
        if e < out[0] or e > out[-1]:
            continue
        j = int(np.searchsorted(out, e))
        j = min(max(j, 1), len(out) - 1)
        local = out[j] - out[j - 1]
        if abs(out[j] - e) <= 0.25 * local:
            out[j] = e
        elif abs(out[j - 1] - e) <= 0.25 * local:
            out[j - 1] = e
        else:
            out.insert(j, e)
    arr = np.array(out)
    return arr[np.concatenate([[True], np.diff(arr) > 0])]
