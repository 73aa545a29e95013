"""Speed measures on an open interval, with decidable tail first moments.

A one-dimensional diffusion in natural scale is determined by its speed
measure m on (l_minus, l_plus).  Everything downstream (eigenfunctions,
resolvent, classification, simulation) consumes the representation built
here: a piecewise-smooth density, optional point atoms, and per-side
metadata that settles whether the tail first moment  int x m(dx)  diverges.

Divergence of an improper integral cannot be decided from samples alone,
so built-in families carry analytic tail verdicts, while tabulated
densities either declare a tail exponent or get a log-log slope fit over
the last two decades of their support (provenance is reported either way).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Sequence

import numpy as np

from .errors import MeasureError, UndecidableTailError
from .quadrature import improper_integral, segment_integral

Side = Literal["left", "right"]

INFINITE = "infinite"
FINITE = "finite"
UNDECLARED = "undeclared"

# fitted tail exponent p <= 2 + margin means int x * x^-p dx diverges
_EXTRAPOLATION_MARGIN = 0.05
_MIN_FIT_DECADES = 2.0


def _parse_endpoint(v) -> float:
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("inf", "+inf", "infinity"):
            return math.inf
        if s == "-inf":
            return -math.inf
        raise MeasureError(f"unrecognized interval endpoint {v!r}")
    return float(v)


@dataclass(frozen=True)
class Interval:
    """Open interval (l_minus, l_plus); either endpoint may be infinite."""

    l_minus: float
    l_plus: float

    def __post_init__(self):
        if not self.l_minus < self.l_plus:
            raise MeasureError(
                f"interval endpoints out of order: {self.l_minus} >= {self.l_plus}")

    @property
    def case(self) -> str:
        """Bounded, CaseI (finite left, infinite right), CaseII (both
        infinite) or MirroredCaseI (infinite left, finite right)."""
        left_fin = math.isfinite(self.l_minus)
        right_fin = math.isfinite(self.l_plus)
        if left_fin and right_fin:
            return "Bounded"
        if left_fin:
            return "CaseI"
        if right_fin:
            return "MirroredCaseI"
        return "CaseII"

    def contains(self, x: float) -> bool:
        return self.l_minus < x < self.l_plus

    def reflected(self) -> "Interval":
        return Interval(-self.l_plus, -self.l_minus)


@dataclass(frozen=True)
class TailMoment:
    """Verdict on int |x| m(dx) over one unbounded (or bounded) side."""

    side: Side
    verdict: str                   # "infinite" | "finite"
    value: float | None = None     # present iff finite
    provenance: str = "declared-analytic"   # or "extrapolated"

    def __post_init__(self):
        if self.verdict == FINITE:
            if self.value is None or not self.value >= 0 or not math.isfinite(self.value):
                raise MeasureError("finite tail moment needs a finite value >= 0")


@dataclass(frozen=True)
class SpeedMeasure:
    """Immutable speed measure: density, atoms and tail metadata.

    ``density`` must be vectorized over numpy arrays and strictly positive
    inside the interval.  ``breakpoints`` lists the positions where the
    density is not smooth (family knees); quadrature splits there.
    All operations are pure, so instances are safe to share across threads.
    """

    interval: Interval
    density: Callable[[np.ndarray], np.ndarray]
    breakpoints: tuple[float, ...] = ()
    atoms: tuple[tuple[float, float], ...] = ()
    tail_left: str = UNDECLARED
    tail_right: str = UNDECLARED
    tail_exponent_left: float | None = None
    tail_exponent_right: float | None = None
    label: str = "measure"
    descriptor: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        for pos, mass_ in self.atoms:
            if not self.interval.contains(pos):
                raise MeasureError(f"atom at {pos} outside the open interval")
            if not mass_ > 0:
                raise MeasureError(f"atom at {pos} must carry positive mass")

    def rho(self, x) -> np.ndarray:
        return np.asarray(self.density(np.asarray(x, dtype=float)), dtype=float)

    def sigma(self, x) -> np.ndarray:
        """Diffusion coefficient of the generator, sigma^2 = 2 / rho."""
        return np.sqrt(2.0 / self.rho(x))

    def tail_flag(self, side: Side) -> str:
        return self.tail_left if side == "left" else self.tail_right

    @property
    def has_atoms(self) -> bool:
        return len(self.atoms) > 0


def mass(m: SpeedMeasure, a: float, b: float) -> float:
    """m((a, b]): density integral plus atoms in the right-closed interval.

    Requires l_minus < a <= b < l_plus; exact for atoms, adaptive
    quadrature split at family knees for the density part.
    """
    if a > b:
        raise MeasureError(f"mass bounds out of order: {a} > {b}")
    iv = m.interval
    if not (iv.l_minus < a and b < iv.l_plus):
        raise MeasureError(f"mass bounds [{a}, {b}] outside open interval")
    if a == b:
        return 0.0
    total = segment_integral(lambda x: float(m.rho(x)), a, b, m.breakpoints)
    for pos, mass_ in m.atoms:
        if a < pos <= b:
            total += mass_
    return total


def _fit_tail_exponent(m: SpeedMeasure, side: Side) -> float:
    """Log-log slope of the density over the last two decades of |x|."""
    iv = m.interval
    lim = iv.l_plus if side == "right" else iv.l_minus
    if math.isfinite(lim):
        raise MeasureError("tail exponent fit applies to unbounded sides only")
    dom = _tabulated_domain(m, side)
    if dom is None:
        # analytic density with no declared flag: probe a synthetic window
        hi = 1e6
        lo = hi / 10.0 ** _MIN_FIT_DECADES
    else:
        lo, hi = dom
        if hi / lo < 10.0 ** _MIN_FIT_DECADES:
            raise UndecidableTailError(
                f"{m.label}: {side} tail samples span {hi/lo:.3g}x, need two "
                "decades or a declared tail_exponent")
    xs = np.geomspace(lo, hi, 64)
    pts = xs if side == "right" else -xs
    vals = m.rho(pts)
    if np.any(vals <= 0):
        raise UndecidableTailError(f"{m.label}: nonpositive density in tail fit")
    slope = np.polyfit(np.log(xs), np.log(vals), 1)[0]
    return -float(slope)


def _tabulated_domain(m: SpeedMeasure, side: Side):
    d = m.descriptor or {}
    if d.get("family") != "tabulated":
        return None
    xs = np.asarray(d["x"], dtype=float)
    if side == "right":
        pos = xs[xs > 0]
        if len(pos) < 2:
            raise UndecidableTailError(f"{m.label}: no positive samples for right tail")
        return float(pos.min()), float(pos.max())
    neg = -xs[xs < 0]
    if len(neg) < 2:
        raise UndecidableTailError(f"{m.label}: no negative samples for left tail")
    return float(neg.min()), float(neg.max())


def _tail_value(m: SpeedMeasure, r: float, side: Side) -> float:
    """Numeric value of int |x| m(dx) over the tail beyond r."""
    def weighted(x):
        return abs(x) * float(m.rho(x))

    if side == "right":
        val = improper_integral(weighted, r, m.breakpoints)
        val += sum(abs(pos) * ms for pos, ms in m.atoms if pos > r)
        return val
    # left side: reflect
    val = improper_integral(lambda x: weighted(-x), -r,
                            tuple(-b for b in m.breakpoints))
    val += sum(abs(pos) * ms for pos, ms in m.atoms if pos < r)
    return val


def _bounded_side_moment(m: SpeedMeasure, r: float, side: Side) -> TailMoment:
    """First moment over a side whose endpoint is finite.

    The measure can still blow up at an inaccessible finite boundary, so
    integrability is established by a shrinking-offset ladder rather than
    assumed.
    """
    iv = m.interval
    end = iv.l_plus if side == "right" else iv.l_minus
    span = abs(r - end)

    def piece(eps):
        # probing a possibly-divergent integral; quad may warn near the
        # endpoint and that is exactly the signal being measured
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if side == "right":
                return segment_integral(lambda x: abs(x) * float(m.rho(x)),
                                        r, end - eps, m.breakpoints)
            return segment_integral(lambda x: abs(x) * float(m.rho(x)),
                                    end + eps, r, m.breakpoints)

    prev = None
    eps = span / 8.0
    for _ in range(48):
        cur = piece(eps)
        if prev is not None:
            scale = max(abs(cur), 1.0)
            if abs(cur - prev) <= 1e-9 * scale:
                atoms = sum(abs(p) * ms for p, ms in m.atoms
                            if (p > r if side == "right" else p < r))
                return TailMoment(side, FINITE, cur + atoms)
            if cur > 1e12 and cur > 2.0 * prev:
                return TailMoment(side, INFINITE)
        prev = cur
        eps *= 0.5
    return TailMoment(side, INFINITE)


def first_moment_tail(m: SpeedMeasure, r: float, side: Side) -> TailMoment:
    """Tail first moment int |x| m(dx) beyond r on the given side.

    The verdict never depends on r (only the finite value does).  Built-in
    families answer from their analytic flag; tabulated densities fall back
    to the fitted tail exponent and report ``extrapolated`` provenance.
    """
    if side not in ("left", "right"):
        raise MeasureError(f"unknown side {side!r}")
    if not m.interval.contains(r):
        raise MeasureError(f"reference point {r} outside the interval")

    iv = m.interval
    end = iv.l_plus if side == "right" else iv.l_minus
    if math.isfinite(end):
        return _bounded_side_moment(m, r, side)

    flag = m.tail_flag(side)
    if flag == INFINITE:
        return TailMoment(side, INFINITE)
    if flag == FINITE:
        return TailMoment(side, FINITE, _tail_value(m, r, side))

    declared = (m.tail_exponent_right if side == "right"
                else m.tail_exponent_left)
    p = declared if declared is not None else _fit_tail_exponent(m, side)
    if p <= 2.0 + _EXTRAPOLATION_MARGIN:
        return TailMoment(side, INFINITE, provenance="extrapolated")
    return TailMoment(side, FINITE, _tail_value(m, r, side),
                      provenance="extrapolated")


def reflect(m: SpeedMeasure) -> SpeedMeasure:
    """Mirror image: density(x) -> density(-x) on the negated interval.

    Swaps the left and right tail verdicts exactly.
    """
    inner = m.density

    def flipped(x):
        return inner(-np.asarray(x, dtype=float))

    return SpeedMeasure(
        interval=m.interval.reflected(),
        density=flipped,
        breakpoints=tuple(sorted(-b for b in m.breakpoints)),
        atoms=tuple(sorted((-p, ms) for p, ms in m.atoms)),
        tail_left=m.tail_right,
        tail_right=m.tail_left,
        tail_exponent_left=m.tail_exponent_right,
        tail_exponent_right=m.tail_exponent_left,
        label=f"reflect({m.label})",
        descriptor=None,
    )


def scale_measure(m: SpeedMeasure, c: float) -> SpeedMeasure:
    """c * m for c > 0; a time change that preserves every tail verdict."""
    if not c > 0:
        raise MeasureError("scale factor must be positive")
    inner = m.density

    def scaled(x):
        return c * inner(np.asarray(x, dtype=float))

    return replace(
        m, density=scaled,
        atoms=tuple((p, c * ms) for p, ms in m.atoms),
        label=f"{c}*{m.label}", descriptor=None)


# ---------------------------------------------------------------------------
# built-in families


def _power_verdict(p: float) -> str:
    # int_r^inf x * x^-p dx converges iff p > 2
    return FINITE if p > 2.0 else INFINITE


def constant_measure(l_minus=-math.inf, l_plus=math.inf, level: float = 2.0,
                     atoms=()) -> SpeedMeasure:
    """Constant density; level 2 on the whole line is standard Brownian
    motion (sigma = 1)."""
    if not level > 0:
        raise MeasureError("density level must be positive")
    iv = Interval(_parse_endpoint(l_minus), _parse_endpoint(l_plus))

    def rho(x):
        return np.full_like(np.asarray(x, dtype=float), level)

    return SpeedMeasure(
        interval=iv, density=rho, atoms=tuple(atoms),
        tail_left=INFINITE if not math.isfinite(iv.l_minus) else UNDECLARED,
        tail_right=INFINITE if not math.isfinite(iv.l_plus) else UNDECLARED,
        label=f"constant(level={level})",
        descriptor={"family": "constant", "interval": [iv.l_minus, iv.l_plus],
                    "level": level, "atoms": [list(a) for a in atoms]})


def power_tail_measure(l_minus=0.0, l_plus=math.inf, coefficient: float = 2.0,
                       exponent: float = 4.0, knee: float = 0.0,
                       atoms=()) -> SpeedMeasure:
    """Density c * |x|^-p beyond the knee, constant c * knee^-p inside.

    With knee = 0 the pure power extends over the whole (necessarily
    one-signed) interval; the default (0, inf) with c = 2, p = 4 is the
    reciprocal of a three-dimensional Bessel process, the textbook strict
    local martingale.
    """
    if not coefficient > 0:
        raise MeasureError("density coefficient must be positive")
    if knee < 0:
        raise MeasureError("knee must be nonnegative")
    iv = Interval(_parse_endpoint(l_minus), _parse_endpoint(l_plus))
    if knee == 0.0 and exponent > 0 and iv.contains(0.0):
        raise MeasureError("pure power density is singular at interior 0; "
                           "use a positive knee")
    if knee > 0 and not (iv.l_minus < knee < iv.l_plus or
                         iv.l_minus < -knee < iv.l_plus):
        raise MeasureError(f"knee {knee} outside the interval")
    plateau = coefficient * knee ** -exponent if knee > 0 else None

    def rho(x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        outer = np.abs(x) >= knee if knee > 0 else np.ones_like(x, dtype=bool)
        out[outer] = coefficient * np.abs(x[outer]) ** -exponent
        if knee > 0:
            out[~outer] = plateau
        return out

    verdict = _power_verdict(exponent)
    breaks = tuple(b for b in (-knee, knee) if knee > 0 and iv.contains(b))
    return SpeedMeasure(
        interval=iv, density=rho, breakpoints=breaks, atoms=tuple(atoms),
        tail_left=verdict if not math.isfinite(iv.l_minus) else UNDECLARED,
        tail_right=verdict if not math.isfinite(iv.l_plus) else UNDECLARED,
        label=f"power_tail(c={coefficient},p={exponent},knee={knee})",
        descriptor={"family": "power_tail", "interval": [iv.l_minus, iv.l_plus],
                    "coefficient": coefficient, "exponent": exponent,
                    "knee": knee, "atoms": [list(a) for a in atoms]})


def hybrid_measure(knee: float = 1.0, left_level: float = 2.0,
                   coefficient: float = 2.0, exponent: float = 4.0,
                   mirror: bool = False, atoms=()) -> SpeedMeasure:
    """Constant density left of the knee glued to a power tail right of it,
    on the whole line.  The default knee at 1 keeps the density bounded
    near 0.  ``mirror=True`` reflects the construction."""
    if knee <= 0:
        raise MeasureError("hybrid knee must be positive")
    if not (left_level > 0 and coefficient > 0):
        raise MeasureError("density parameters must be positive")

    def rho(x):
        x = np.asarray(x, dtype=float)
        out = np.where(x <= knee, left_level,
                       coefficient * np.where(x > knee, x, knee) ** -exponent)
        return out

    m = SpeedMeasure(
        interval=Interval(-math.inf, math.inf), density=rho,
        breakpoints=(knee,), atoms=tuple(atoms),
        tail_left=INFINITE,
        tail_right=_power_verdict(exponent),
        label=f"hybrid(knee={knee})",
        descriptor={"family": "hybrid", "interval": [-math.inf, math.inf],
                    "knee": knee, "left_level": left_level,
                    "coefficient": coefficient, "exponent": exponent,
                    "mirror": mirror, "atoms": [list(a) for a in atoms]})
    if mirror:
        m = replace(reflect(m), label=f"hybrid(knee={knee},mirror)",
                    descriptor=m.descriptor)
    return m


def tabulated_measure(l_minus, l_plus, x: Sequence[float],
                      rho_values: Sequence[float], tail_exponent=None,
                      atoms=()) -> SpeedMeasure:
    """Piecewise-linear density through the given samples.

    Evaluation outside the sample span continues with the declared tail
    exponent when one is given; otherwise it extends the last sample level,
    and tail verdicts stay undeclared (decided later by slope fitting, or
    refused when the samples span less than two decades).
    """
    xs = np.asarray(x, dtype=float)
    vals = np.asarray(rho_values, dtype=float)
    if len(xs) != len(vals) or len(xs) < 2:
        raise MeasureError("tabulated density needs matching x/rho arrays")
    if np.any(np.diff(xs) <= 0):
        raise MeasureError("tabulated x samples must be strictly increasing")
    if np.any(vals <= 0):
        raise MeasureError("tabulated density must be strictly positive")
    iv = Interval(_parse_endpoint(l_minus), _parse_endpoint(l_plus))
    p = None if tail_exponent is None else float(tail_exponent)

    def rho(q):
        q = np.asarray(q, dtype=float)
        out = np.interp(q, xs, vals)
        if p is not None:
            hi = q > xs[-1]
            out = np.where(hi, vals[-1] * (np.abs(q) / abs(xs[-1])) ** -p, out)
            lo = q < xs[0]
            out = np.where(lo, vals[0] * (np.abs(q) / abs(xs[0])) ** -p, out)
        return out

    verdict = UNDECLARED if p is None else _power_verdict(p)
    return SpeedMeasure(
        interval=iv, density=rho,
        breakpoints=tuple(float(v) for v in xs),
        atoms=tuple(atoms),
        tail_left=verdict if not math.isfinite(iv.l_minus) else UNDECLARED,
        tail_right=verdict if not math.isfinite(iv.l_plus) else UNDECLARED,
        tail_exponent_left=p, tail_exponent_right=p,
        label="tabulated",
        descriptor={"family": "tabulated", "interval": [iv.l_minus, iv.l_plus],
                    "x": [float(v) for v in xs],
                    "rho": [float(v) for v in vals],
                    "tail_exponent": p, "atoms": [list(a) for a in atoms]})


def brownian_measure() -> SpeedMeasure:
    return constant_measure()


def inverse_bessel_measure() -> SpeedMeasure:
    return power_tail_measure(0.0, math.inf, coefficient=2.0, exponent=4.0,
                              knee=0.0)


def double_power_measure(knee: float = 1.0, coefficient: float = 2.0,
                         exponent: float = 4.0) -> SpeedMeasure:
    """Power tails on both sides of the line; with p > 2 both tail first
    moments are finite, the strictly-local-only cell of the decision table."""
    return power_tail_measure(-math.inf, math.inf, coefficient=coefficient,
                              exponent=exponent, knee=knee)


_FAMILIES = {"constant", "power_tail", "hybrid", "tabulated"}


def build_measure(descriptor: dict) -> SpeedMeasure:
    """Build a SpeedMeasure from a JSON-style family descriptor.

    Schema: ``{"family": ..., "interval": [lo, hi], <family parameters>,
    "atoms": [[x, mass], ...], "tail_exponent": optional}`` with "-inf" /
    "inf" accepted as endpoint sentinels.  Unknown keys are rejected.
    """
    if not isinstance(descriptor, dict):
        raise MeasureError("measure descriptor must be a JSON object")
    d = dict(descriptor)
    family = d.pop("family", None)
    if family not in _FAMILIES:
        raise MeasureError(f"unknown measure family {family!r}; "
                           f"expected one of {sorted(_FAMILIES)}")
    interval = d.pop("interval", None)
    atoms = [tuple(a) for a in d.pop("atoms", [])]

    if family == "constant":
        allowed = {"level"}
        _reject_unknown(d, allowed)
        if interval is None:
            interval = ["-inf", "inf"]
        return constant_measure(interval[0], interval[1],
                                level=float(d.get("level", 2.0)), atoms=atoms)
    if family == "power_tail":
        allowed = {"coefficient", "exponent", "knee"}
        _reject_unknown(d, allowed)
        if interval is None:
            raise MeasureError("power_tail descriptor needs an interval")
        return power_tail_measure(
            interval[0], interval[1],
            coefficient=float(d.get("coefficient", 2.0)),
            exponent=float(d.get("exponent", 4.0)),
            knee=float(d.get("knee", 0.0)), atoms=atoms)
    if family == "hybrid":
        allowed = {"knee", "left_level", "coefficient", "exponent", "mirror"}
        _reject_unknown(d, allowed)
        return hybrid_measure(
            knee=float(d.get("knee", 1.0)),
            left_level=float(d.get("left_level", 2.0)),
            coefficient=float(d.get("coefficient", 2.0)),
            exponent=float(d.get("exponent", 4.0)),
            mirror=bool(d.get("mirror", False)), atoms=atoms)
    # tabulated
    allowed = {"x", "rho", "tail_exponent"}
    _reject_unknown(d, allowed)
    if interval is None or "x" not in d or "rho" not in d:
        raise MeasureError("tabulated descriptor needs interval, x and rho")
    return tabulated_measure(interval[0], interval[1], d["x"], d["rho"],
                             tail_exponent=d.get("tail_exponent"), atoms=atoms)


def _reject_unknown(d: dict, allowed: set):
    unknown = set(d) - allowed
    if unknown:
        raise MeasureError(f"unknown descriptor keys: {sorted(unknown)}")


def load_measure(path) -> SpeedMeasure:
    with open(path) as fh:
        return build_measure(json.load(fh))
