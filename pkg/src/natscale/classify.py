"""Martingale classification of the stopped diffusion, with evidence.

The decision table is driven entirely by the two tail first moments of
the speed measure:

* bounded interval: the stopped process is bounded, hence a martingale;
* finite left endpoint, infinite right: martingale iff the right tail
  first moment diverges, else strict supermartingale (bounded below, so
  never a submartingale);
* both endpoints infinite: both tails divergent -> martingale; right
  divergent only -> strict submartingale; left divergent only -> strict
  supermartingale; both finite -> a strict local martingale that is
  neither (the table's remaining cell).

Three independent numeric criteria must agree with that verdict and with
each other, and the audit enforces it: tail integrals (measure module),
divergence of the monotone-solution derivatives at infinity (eigen
ladders), and the vanishing of the decreasing solution's limit alpha_plus
together with its tail-equation residual.  A finite left endpoint adds
the lambda -> 0 defect limit, and a path budget adds Monte Carlo trend
checks.  Analytic disagreement raises: it can only mean a solver bug, a
misdeclared tail, or a measure outside the package's assumptions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AuditError, MeasureError
from .eigen import (DEFAULT_OPTIONS, SolverOptions, _march_amplitude,
                    auto_window, default_expansion_point, derivative_ladder,
                    solve_f_plus)
from .measure import (FINITE, INFINITE, SpeedMeasure, first_moment_tail,
                      reflect)
from .quadrature import MeasureGrid
from .resolvent import defect_curve
from .simulate import StepControl, estimate_stopped_mean, simulate_paths

MARTINGALE = "Martingale"
STRICT_SUB = "StrictSubmartingale"
STRICT_SUPER = "StrictSupermartingale"
STRICT_LOCAL_ONLY = "StrictLocalMartingaleOnly"

CRIT_TAIL_RIGHT = "tail-right"
CRIT_TAIL_LEFT = "tail-left"
CRIT_FPRIME = "fprime-divergence"
CRIT_ALPHA = "alpha-plus"
CRIT_DEFECT = "defect-limit"

_DIVERGENCE_GROWTH = 1.5       # rung-over-rung growth declaring divergence
_DIVERGENCE_THRESHOLD = 1e4    # and the normalized value must exceed this
_CAUCHY_TOL = 1e-6             # relative settling declaring boundedness


@dataclass(frozen=True)
class CriterionEvidence:
    criterion: str
    status: str                  # "pass" | "fail" | "not-applicable"
    payload: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {"criterion": self.criterion, "status": self.status,
                "payload": _jsonable(self.payload)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


@dataclass(frozen=True)
class Verdict:
    """Classification outcome with per-criterion evidence."""

    case_tag: str                # Bounded | CaseI | CaseII
    classification: str
    evidence: dict[str, CriterionEvidence]
    measure_label: str
    x: float
    lambda_probe: float
    reflected: bool = False      # l_minus = -inf, l_plus finite, reduced

    def __post_init__(self):
        allowed = {
            "Bounded": {MARTINGALE},
            "CaseI": {MARTINGALE, STRICT_SUPER},
            "CaseII": {MARTINGALE, STRICT_SUB, STRICT_SUPER,
                       STRICT_LOCAL_ONLY},
        }[self.case_tag]
        if self.classification not in allowed:
            raise MeasureError(
                f"{self.classification} impossible in {self.case_tag}")

    def to_json_dict(self) -> dict:
        return {
            "classification": self.classification,
            "case": self.case_tag,
            "measure": self.measure_label,
            "x": self.x,
            "lambda": self.lambda_probe,
            "reflected": self.reflected,
            "evidence": [ev.to_json_dict()
                         for _, ev in sorted(self.evidence.items())],
        }


def _tail_verdicts(m: SpeedMeasure, x: float):
    iv = m.interval
    out = {}
    for side, endpoint in (("left", iv.l_minus), ("right", iv.l_plus)):
        if math.isfinite(endpoint):
            out[side] = None
        else:
            out[side] = first_moment_tail(m, x, side)
    return out


def _table_classification(case: str, right_infinite, left_infinite) -> str:
    if case == "Bounded":
        return MARTINGALE
    if case == "CaseI":
        return MARTINGALE if right_infinite else STRICT_SUPER
    # CaseII
    if right_infinite and left_infinite:
        return MARTINGALE
    if right_infinite:
        return STRICT_SUB
    if left_infinite:
        return STRICT_SUPER
    return STRICT_LOCAL_ONLY


def classify(m: SpeedMeasure, x: float, lambda_probe: float = 0.5,
             options: SolverOptions = DEFAULT_OPTIONS,
             evidence: str = "full") -> Verdict:
    """Classify the stopped diffusion started anywhere in the interval.

    The verdict itself needs only the tail verdicts (and never depends on
    x or lambda_probe); with ``evidence="full"`` the eigen-side criteria
    are evaluated at lambda_probe and attached, including the defect limit
    when the left endpoint is finite.  An undecidable tail raises rather
    than guessing.
    """
    iv = m.interval
    if not iv.contains(x):
        raise MeasureError(f"start {x} outside the interval")
    if lambda_probe <= 0:
        raise MeasureError("lambda_probe must be positive")
    if iv.case == "MirroredCaseI":
        # finite right endpoint: reduce by the x -> -x reflection
        inner = classify(reflect(m), -x, lambda_probe, options, evidence)
        flipped = {STRICT_SUB: STRICT_SUPER, STRICT_SUPER: STRICT_SUB}
        cls = flipped.get(inner.classification, inner.classification)
        return Verdict(case_tag=inner.case_tag, classification=cls,
                       evidence=inner.evidence, measure_label=m.label,
                       x=x, lambda_probe=lambda_probe, reflected=True)

    case = iv.case
    tails = _tail_verdicts(m, x)
    ev: dict[str, CriterionEvidence] = {}

    right_inf = left_inf = None
    if tails["right"] is None:
        ev[CRIT_TAIL_RIGHT] = CriterionEvidence(
            CRIT_TAIL_RIGHT, "not-applicable",
            {"reason": "finite right endpoint"})
    else:
        tm = tails["right"]
        right_inf = tm.verdict == INFINITE
        ev[CRIT_TAIL_RIGHT] = CriterionEvidence(
            CRIT_TAIL_RIGHT, "pass" if right_inf else "fail",
            {"verdict": tm.verdict, "value": tm.value,
             "provenance": tm.provenance})
    if tails["left"] is None:
        ev[CRIT_TAIL_LEFT] = CriterionEvidence(
            CRIT_TAIL_LEFT, "not-applicable",
            {"reason": "finite left endpoint"})
    else:
        tm = tails["left"]
        left_inf = tm.verdict == INFINITE
        ev[CRIT_TAIL_LEFT] = CriterionEvidence(
            CRIT_TAIL_LEFT, "pass" if left_inf else "fail",
            {"verdict": tm.verdict, "value": tm.value,
             "provenance": tm.provenance})

    cls = _table_classification(case, right_inf, left_inf)

    if evidence == "full" and case != "Bounded":
        fp = fprime_divergence(m, lambda_probe, window=None, options=options)
        right_div = fp.get("right")
        payload = {s: {"verdict": r.verdict, "rungs": r.rungs}
                   for s, r in fp.items()}
        status = "not-applicable" if right_div is None else \
            ("pass" if right_div.verdict == "diverges" else "fail")
        ev[CRIT_FPRIME] = CriterionEvidence(CRIT_FPRIME, status, payload)

        cc = alpha_tail_crosscheck(m, lambda_probe, x=x, options=options)
        ev[CRIT_ALPHA] = CriterionEvidence(
            CRIT_ALPHA, "pass" if cc.alpha_zero else "fail",
            {"alpha_estimate": cc.alpha_estimate,
             "tail_infinite": cc.tail_infinite,
             "eq_residual": cc.eq_residual,
             "residual_scale": cc.residual_scale})

        if case == "CaseI":
            curve = defect_curve(m, x, options=options)
            ev[CRIT_DEFECT] = CriterionEvidence(
                CRIT_DEFECT, "pass" if curve.matches_gap else "fail",
                {"extrapolated_limit": curve.extrapolated_limit,
                 "target_gap": curve.target_gap,
                 "error": curve.extrapolation_error})
        else:
            ev[CRIT_DEFECT] = CriterionEvidence(
                CRIT_DEFECT, "not-applicable",
                {"reason": "long-time defect statement needs a finite "
                           "left endpoint"})
    return Verdict(case_tag=case, classification=cls, evidence=ev,
                   measure_label=m.label, x=x, lambda_probe=lambda_probe)


@dataclass(frozen=True)
class DivergenceVerdict:
    side: str
    verdict: str                         # diverges | bounded | indeterminate
    rungs: tuple[tuple[float, float], ...]


def _judge_ladder(side: str, rungs) -> DivergenceVerdict:
    vals = [v for _, v in rungs]
    verdict = "indeterminate"
    if len(vals) >= 2 and abs(vals[-1] - vals[-2]) \
            <= _CAUCHY_TOL * max(1.0, abs(vals[-1])):
        verdict = "bounded"
    if len(vals) >= 4:
        last = vals[-4:]
        ratios = [b / a for a, b in zip(last[:-1], last[1:]) if a > 0]
        if len(ratios) == 3 and all(r >= _DIVERGENCE_GROWTH for r in ratios) \
                and vals[-1] >= _DIVERGENCE_THRESHOLD:
            verdict = "diverges"
    return DivergenceVerdict(side=side, verdict=verdict,
                             rungs=tuple((float(p), float(v))
                                         for p, v in rungs))


def fprime_divergence(m: SpeedMeasure, lam: float, window=None,
                      options: SolverOptions = DEFAULT_OPTIONS
                      ) -> dict[str, DivergenceVerdict]:
    """Divergence signature of f'_minus at +inf and |f'_plus| at -inf.

    Martingality on an unbounded side is equivalent to the derivative
    ladder blowing up on it.  Sides with a finite endpoint are omitted.
    Indeterminate ladders (neither settled nor persistently growing) are
    reported as such, with the full rung trace attached.
    """
    if lam <= 0:
        raise MeasureError("lambda must be positive")
    iv = m.interval
    out = {}
    if not math.isfinite(iv.l_plus):
        rungs = derivative_ladder(m, lam, "right", window=window,
                                  options=options)
        out["right"] = _judge_ladder("right", rungs)
    if not math.isfinite(iv.l_minus):
        rungs = derivative_ladder(m, lam, "left", window=window,
                                  options=options)
        out["left"] = _judge_ladder("left", rungs)
    if not out:
        raise MeasureError("bounded interval has no divergence criterion")
    return out


@dataclass(frozen=True)
class CrosscheckReport:
    """The three-way equivalence for the decreasing solution's limit.

    alpha_zero: measured far-field limit of f_plus vanishes;
    tail_infinite: right tail first moment diverges;
    eq_residual: | lambda int (y - x) f_plus dm - f_plus(x) |, which is
    quadrature noise exactly when alpha_plus = 0 and otherwise reproduces
    alpha_plus.  The three signals must agree; the audit enforces it.
    """

    alpha_zero: bool
    alpha_estimate: float
    tail_infinite: bool
    eq_residual: float
    residual_scale: float
    far_field: tuple[tuple[float, float], ...]


def alpha_tail_crosscheck(m: SpeedMeasure, lam: float, x: float | None = None,
                          options: SolverOptions = DEFAULT_OPTIONS
                          ) -> CrosscheckReport:
    if lam <= 0:
        raise MeasureError("lambda must be positive")
    iv = m.interval
    if math.isfinite(iv.l_plus):
        raise MeasureError("the decreasing-limit crosscheck needs "
                           "l_plus = +inf")
    window = auto_window(m, x)
    # widen the core until the solution amplitude has grown by e^21, so
    # the truncated part of the tail-equation residual is negligible when
    # the decreasing solution really does die out
    ext_pts, ext_amp = _march_amplitude(
        m, lam, window[1], +1, 21.0,
        64.0 * max(1.0, abs(window[1]), window[1] - window[0]), options)
    hi_ext = float(ext_pts[-1])
    fp = solve_f_plus(m, lam, (window[0], hi_ext), options)
    x_eval = float(x) if x is not None else \
        min(max(default_expansion_point(m), window[0]), window[1])

    # far-field samples of f_plus along a geometric position ladder
    top = float(fp.grid[-1])
    anchor = min(max(1.0, 2.0 * abs(x_eval)), top / 4.0)
    positions = np.geomspace(max(anchor, fp.grid[0] + 1e-12), top, 6)
    far = [(float(p), float(fp(p))) for p in positions]
    alpha_est = far[-1][1]
    unit = float(fp(x_eval))
    alpha_zero = alpha_est <= 1e-4 * max(unit, 1e-300)

    # tail-equation residual with the limit term omitted
    sel = fp.grid >= x_eval
    gsel = fp.grid[sel]
    mq = MeasureGrid(gsel, m.rho(gsel),
                     breakpoints=[b for b in m.breakpoints
                                  if gsel[0] < b < gsel[-1]],
                     atoms=[(pz, w) for pz, w in m.atoms
                            if gsel[0] < pz < gsel[-1]])
    T, _ = mq.convolve_kernel_right(fp.values[sel])
    resid = abs(lam * float(T[0]) - float(fp.values[sel][0]))
    scale = alpha_est if not alpha_zero else unit

    tail_inf = first_moment_tail(m, x_eval, "right").verdict == INFINITE
    return CrosscheckReport(alpha_zero=alpha_zero,
                            alpha_estimate=float(alpha_est),
                            tail_infinite=tail_inf,
                            eq_residual=float(resid),
                            residual_scale=float(scale),
                            far_field=tuple(far))


@dataclass(frozen=True)
class AuditReport:
    """Cross-criterion consistency record, the package's own self-test."""

    verdict: Verdict
    criteria: tuple[dict, ...]
    mc: tuple[dict, ...]
    all_consistent: bool
    notes: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        d = self.verdict.to_json_dict()
        d["criteria"] = _jsonable(list(self.criteria))
        d["mc"] = _jsonable(list(self.mc))
        d["all_consistent"] = self.all_consistent
        d["notes"] = list(self.notes)
        return d


def _side_consistency(label, expected_infinite, fp_verdict, notes, rows):
    ok = True
    if fp_verdict == "indeterminate":
        notes.append(f"{label}: derivative ladder indeterminate")
        ok = False
    else:
        diverges = fp_verdict == "diverges"
        if diverges != expected_infinite:
            notes.append(
                f"{label}: derivative ladder says {fp_verdict} but the tail "
                f"moment is {'infinite' if expected_infinite else 'finite'}")
            ok = False
    rows.append({"criterion": label,
                 "expected_infinite_tail": expected_infinite,
                 "ladder": fp_verdict, "consistent": ok})
    return ok


def consistency_audit(m: SpeedMeasure, x: float, lambdas=(0.1, 0.5, 2.0),
                      mc_budget: int = 0, seed: int = 20_25,
                      options: SolverOptions = DEFAULT_OPTIONS,
                      mc_control: StepControl | None = None) -> AuditReport:
    """Check every applicable criterion against the tail decision table,
    at every probe lambda, plus an optional Monte Carlo trend leg.

    Analytic inconsistency raises AuditError with the report attached
    (declared tail facts outrank finitized limits, so a disagreement
    always indicts the numeric side).  Monte Carlo disagreement only
    clears ``all_consistent``: sampling noise is not a solver bug.
    """
    if isinstance(lambdas, (int, float)):
        lambdas = (float(lambdas),)
    iv = m.interval
    if iv.case == "MirroredCaseI":
        inner = consistency_audit(reflect(m), -x, lambdas, mc_budget, seed,
                                  options, mc_control)
        flipped = {STRICT_SUB: STRICT_SUPER, STRICT_SUPER: STRICT_SUB}
        v = inner.verdict
        verdict = Verdict(case_tag=v.case_tag,
                          classification=flipped.get(v.classification,
                                                     v.classification),
                          evidence=v.evidence, measure_label=m.label,
                          x=x, lambda_probe=v.lambda_probe, reflected=True)
        return AuditReport(verdict=verdict, criteria=inner.criteria,
                           mc=inner.mc, all_consistent=inner.all_consistent,
                           notes=inner.notes + ("reduced by reflection",))

    verdict = classify(m, x, lambda_probe=lambdas[0], options=options,
                       evidence="analytic")
    notes: list[str] = []
    rows: list[dict] = []
    analytic_ok = True

    tails = _tail_verdicts(m, x)
    right_inf = None if tails["right"] is None \
        else tails["right"].verdict == INFINITE
    left_inf = None if tails["left"] is None \
        else tails["left"].verdict == INFINITE

    for lam in lambdas:
        if verdict.case_tag != "Bounded":
            fp = fprime_divergence(m, lam, options=options)
            if right_inf is not None:
                analytic_ok &= _side_consistency(
                    f"fprime-right@lambda={lam}", right_inf,
                    fp["right"].verdict, notes, rows)
            if left_inf is not None and "left" in fp:
                analytic_ok &= _side_consistency(
                    f"fprime-left@lambda={lam}", left_inf,
                    fp["left"].verdict, notes, rows)
            if right_inf is not None:
                cc = alpha_tail_crosscheck(m, lam, x=x, options=options)
                ok = (cc.alpha_zero == right_inf) \
                    and (cc.tail_infinite == right_inf)
                if cc.alpha_zero:
                    ok &= cc.eq_residual <= 1e-6 * max(cc.residual_scale,
                                                       1e-300)
                else:
                    ok &= abs(cc.eq_residual - cc.alpha_estimate) \
                        <= 0.05 * cc.alpha_estimate
                rows.append({"criterion": f"alpha-tail@lambda={lam}",
                             "alpha_zero": cc.alpha_zero,
                             "alpha_estimate": cc.alpha_estimate,
                             "eq_residual": cc.eq_residual,
                             "consistent": bool(ok)})
                if not ok:
                    notes.append(f"alpha/tail equivalence failed at "
                                 f"lambda={lam}")
                    analytic_ok = False

    if verdict.case_tag == "CaseI":
        curve = defect_curve(m, x, options=options)
        expect_drain = verdict.classification == STRICT_SUPER
        ok = curve.matches_gap == expect_drain
        rows.append({"criterion": "defect-limit",
                     "extrapolated_limit": curve.extrapolated_limit,
                     "target_gap": curve.target_gap,
                     "matches_gap": curve.matches_gap,
                     "consistent": bool(ok)})
        if not ok:
            notes.append("lambda->0 defect limit contradicts the verdict")
            analytic_ok = False

    mc_rows: list[dict] = []
    mc_ok = True
    if mc_budget > 0:
        mc_ok = _mc_leg(m, x, verdict.classification, mc_budget, seed,
                        mc_control, mc_rows, notes)

    report = AuditReport(verdict=verdict, criteria=tuple(rows),
                         mc=tuple(mc_rows),
                         all_consistent=bool(analytic_ok and mc_ok),
                         notes=tuple(notes))
    if not analytic_ok:
        raise AuditError("analytic criteria disagree: " + "; ".join(notes),
                         report=report)
    return report


def _mc_leg(m, x, classification, budget, seed, control, rows, notes) -> bool:
    times = (1.0, 5.0)
    ens = simulate_paths(m, x, t_max=times[-1], n=budget, seed=seed,
                         control=control, checkpoints=times)
    ok = True
    means = {t: estimate_stopped_mean(ens, t) for t in times}
    for t, est in means.items():
        rows.append({"criterion": f"mc-mean@t={t}", "mean": est.mean,
                     "stderr": est.stderr, "n": est.n})
    if classification == MARTINGALE:
        for t, est in means.items():
            if abs(est.mean - x) > 3.0 * est.stderr:
                notes.append(f"MC mean at t={t} departs from {x} by more "
                             f"than 3 stderr")
                ok = False
    elif classification == STRICT_SUPER:
        est = means[times[-1]]
        if not est.mean < x - 3.0 * est.stderr:
            notes.append("MC mean failed to decrease for a strict "
                         "supermartingale")
            ok = False
    elif classification == STRICT_SUB:
        est = means[times[-1]]
        if not est.mean > x + 3.0 * est.stderr:
            notes.append("MC mean failed to increase for a strict "
                         "submartingale")
            ok = False
    else:
        # neither sub- nor supermartingale: no one-sided trend is implied
        rows.append({"criterion": "mc-trend", "note":
                     "no trend assertion for a strict local martingale"})
    return ok
