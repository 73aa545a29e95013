import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from natscale import (MeasureError, UndecidableTailError, build_measure,
                      constant_measure, first_moment_tail, hybrid_measure,
                      mass, power_tail_measure, reflect, scale_measure,
                      tabulated_measure)


def test_mass_constant_density(brownian):
    # density 2 on (0, 1]
    assert mass(brownian, 0.0, 1.0) == pytest.approx(2.0, rel=1e-12)


def test_mass_inverse_bessel(inverse_bessel):
    # antiderivative of 2 x^-4 is -(2/3) x^-3, so m((1,2]) = (2/3)(1 - 1/8)
    expected = (2.0 / 3.0) * (1.0 - 1.0 / 8.0)
    assert expected == pytest.approx(7.0 / 12.0)
    assert mass(inverse_bessel, 1.0, 2.0) == pytest.approx(expected,
                                                           rel=1e-12)


def test_mass_empty_interval(brownian, inverse_bessel):
    assert mass(brownian, 0.7, 0.7) == 0.0
    assert mass(inverse_bessel, 2.0, 2.0) == 0.0


def test_mass_argument_errors(brownian, inverse_bessel):
    with pytest.raises(MeasureError):
        mass(brownian, 1.0, 0.0)
    with pytest.raises(MeasureError):
        mass(inverse_bessel, -1.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(pts=st.lists(st.floats(min_value=0.25, max_value=8.0), min_size=3,
                    max_size=3, unique=True))
def test_mass_additivity(pts):
    m = power_tail_measure(0.0, math.inf, coefficient=2.0, exponent=4.0)
    a, b, c = sorted(pts)
    whole = mass(m, a, c)
    split = mass(m, a, b) + mass(m, b, c)
    assert whole == pytest.approx(split, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3.0, -0.5), b=st.floats(0.5, 3.0),
       pad=st.floats(0.1, 2.0))
def test_mass_monotone_in_interval(brownian, a, b, pad):
    assert mass(brownian, a - pad, b + pad) >= mass(brownian, a, b)


def test_mass_counts_atoms_right_closed():
    m = constant_measure(-math.inf, math.inf, level=2.0,
                         atoms=[(0.5, 0.25)])
    base = 2.0 * 1.0
    assert mass(m, 0.0, 1.0) == pytest.approx(base + 0.25, rel=1e-12)
    # atom exactly at the left edge is excluded, at the right edge included
    assert mass(m, 0.5, 1.0) == pytest.approx(2.0 * 0.5, rel=1e-12)
    assert mass(m, 0.0, 0.5) == pytest.approx(2.0 * 0.5 + 0.25, rel=1e-12)


# --- tail first moments ----------------------------------------------------


def test_tail_brownian_right_infinite(brownian):
    tm = first_moment_tail(brownian, 1.0, "right")
    assert tm.verdict == "infinite"
    assert tm.provenance == "declared-analytic"


def test_tail_inverse_bessel_right_finite(inverse_bessel):
    # int_1^inf x * 2 x^-4 dx = int_1^inf 2 x^-3 dx = 1
    tm = first_moment_tail(inverse_bessel, 1.0, "right")
    assert tm.verdict == "finite"
    assert tm.value == pytest.approx(1.0, rel=1e-9)


def test_tail_bounded_side_is_finite():
    m = constant_measure(-2.0, 3.0, level=1.5)
    tm = first_moment_tail(m, 0.5, "right")
    assert tm.verdict == "finite"
    # int_{0.5}^{3} |x| * 1.5 dx
    assert tm.value == pytest.approx(1.5 * (9.0 - 0.25) / 2.0, rel=1e-6)


def test_tail_verdict_independent_of_r(hybrid):
    verdicts = {first_moment_tail(hybrid, r, "right").verdict
                for r in (-3.0, 0.1, 7.0)}
    assert verdicts == {"finite"}
    verdicts = {first_moment_tail(hybrid, r, "left").verdict
                for r in (-3.0, 0.1, 7.0)}
    assert verdicts == {"infinite"}


def test_tail_verdict_scale_invariant(inverse_bessel):
    scaled = scale_measure(inverse_bessel, 3.0)
    tm = first_moment_tail(inverse_bessel, 1.0, "right")
    tm3 = first_moment_tail(scaled, 1.0, "right")
    assert tm3.verdict == tm.verdict
    assert tm3.value == pytest.approx(3.0 * tm.value, rel=1e-9)


def test_reflection_swaps_tails(hybrid):
    mirrored = reflect(hybrid)
    assert first_moment_tail(mirrored, 0.0, "right").verdict == "infinite"
    assert first_moment_tail(mirrored, 0.0, "left").verdict == "finite"
    # density actually reflects
    xs = np.array([-3.0, 2.0])
    assert np.allclose(mirrored.rho(xs), hybrid.rho(-xs))


def test_double_power_both_tails_finite(double_power):
    assert first_moment_tail(double_power, 0.0, "right").verdict == "finite"
    assert first_moment_tail(double_power, 0.0, "left").verdict == "finite"


def test_inaccessible_finite_boundary_moment_diverges(inverse_bessel):
    # the left endpoint is finite but the measure blows up there; the
    # first moment over (0, r] genuinely diverges and is reported honestly
    tm = first_moment_tail(inverse_bessel, 1.0, "left")
    assert tm.verdict == "infinite"


# --- families and descriptors ----------------------------------------------


def test_power_verdict_threshold():
    # int x * c x^-p is infinite iff p <= 2
    m_inf = power_tail_measure(0.0, math.inf, coefficient=1.0, exponent=2.0)
    assert first_moment_tail(m_inf, 1.0, "right").verdict == "infinite"
    m_fin = power_tail_measure(0.0, math.inf, coefficient=1.0, exponent=2.1)
    assert first_moment_tail(m_fin, 1.0, "right").verdict == "finite"


def test_hybrid_density_profile(hybrid):
    xs = np.array([-5.0, 0.0, 1.0, 2.0])
    assert np.allclose(hybrid.rho(xs), [2.0, 2.0, 2.0, 2.0 * 2.0 ** -4])


def test_descriptor_round_trip(inverse_bessel):
    rebuilt = build_measure(inverse_bessel.descriptor)
    xs = np.array([0.3, 1.7, 9.0])
    assert np.allclose(rebuilt.rho(xs), inverse_bessel.rho(xs))
    assert rebuilt.tail_right == inverse_bessel.tail_right


def test_descriptor_errors():
    with pytest.raises(MeasureError):
        build_measure({"family": "nope", "interval": [0, 1]})
    with pytest.raises(MeasureError):
        build_measure({"family": "constant", "interval": [0, 1],
                       "level": -1.0})
    with pytest.raises(MeasureError):
        build_measure({"family": "constant", "interval": [0, 1],
                       "level": 2.0, "atoms": [[5.0, 1.0]]})
    with pytest.raises(MeasureError):
        build_measure({"family": "power_tail", "interval": [0, "inf"],
                       "knee": -1.0})
    with pytest.raises(MeasureError):
        build_measure({"family": "constant", "interval": [0, 1],
                       "bogus_key": 1})


def test_pure_power_rejects_interior_origin():
    with pytest.raises(MeasureError):
        power_tail_measure(-math.inf, math.inf, exponent=4.0, knee=0.0)


def test_tabulated_declared_exponent():
    xs = np.geomspace(0.5, 50.0, 40)
    m = tabulated_measure(0.0, math.inf, xs, 2.0 * xs ** -4.0,
                          tail_exponent=4.0)
    assert first_moment_tail(m, 1.0, "right").verdict == "finite"


def test_tabulated_extrapolated_fit():
    xs = np.geomspace(0.5, 200.0, 80)   # spans > two decades
    m = tabulated_measure(0.0, math.inf, xs, 3.0 * xs ** -1.5)
    tm = first_moment_tail(m, 1.0, "right")
    assert tm.verdict == "infinite"
    assert tm.provenance == "extrapolated"


def test_tabulated_refusal_on_short_span():
    xs = np.linspace(1.0, 5.0, 20)      # far less than two decades
    m = tabulated_measure(0.0, math.inf, xs, np.full_like(xs, 2.0))
    with pytest.raises(UndecidableTailError):
        first_moment_tail(m, 2.0, "right")


def test_atom_validation():
    with pytest.raises(MeasureError):
        constant_measure(0.0, 1.0, atoms=[(2.0, 1.0)])
    with pytest.raises(MeasureError):
        constant_measure(0.0, 1.0, atoms=[(0.5, -1.0)])


def test_interval_case_tags():
    assert constant_measure(0.0, 1.0).interval.case == "Bounded"
    assert constant_measure(0.0, math.inf).interval.case == "CaseI"
    assert constant_measure(-math.inf, math.inf).interval.case == "CaseII"
    assert constant_measure(-math.inf, 0.0).interval.case == "MirroredCaseI"
