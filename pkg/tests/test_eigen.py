import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from natscale import (ConvergenceError, MeasureError, SolverOptions,
                      constant_measure, hitting_laplace, integral_residual,
                      killed_f_minus, picard_basis, solve_f_minus,
                      solve_f_plus, solve_pair, wronskian)
from natscale.quadrature import MeasureGrid

LAM = 0.5
BM_WINDOW = (-2.0, 2.0)
IB_WINDOW = (0.2, 10.0)


# --- successive-approximation basis -----------------------------------------


def test_picard_basis_brownian_closed_form(brownian):
    phi, psi = picard_basis(brownian, LAM, BM_WINDOW)
    assert np.max(np.abs(phi.values - np.cosh(phi.grid))) < 1e-8
    assert np.max(np.abs(psi.values - np.sinh(psi.grid))) < 1e-8
    # derivatives come from the same quadrature
    assert np.max(np.abs(phi.right_derivative - np.sinh(phi.grid))) < 1e-8
    assert np.max(np.abs(psi.right_derivative - np.cosh(psi.grid))) < 1e-8


def test_picard_initial_conditions_exact(brownian):
    phi, psi = picard_basis(brownian, 1.7, (-1.0, 3.0))
    i0 = int(np.argmin(np.abs(phi.grid)))
    assert phi.grid[i0] == 0.0
    assert phi.values[i0] == 1.0
    assert phi.right_derivative[i0] == 0.0
    assert psi.values[i0] == 0.0
    assert psi.right_derivative[i0] == 1.0


def test_picard_small_lambda_limit(brownian):
    phi, psi = picard_basis(brownian, 1e-9, BM_WINDOW)
    assert np.max(np.abs(phi.values - 1.0)) < 1e-7
    assert np.max(np.abs(psi.values - psi.grid)) < 1e-7


def test_picard_first_order_term(brownian):
    # (psi(lambda) - x) / lambda -> int_0^x (x - y) y m(dy) = x^3 / 3
    lam = 1e-6
    _, psi = picard_basis(brownian, lam, BM_WINDOW)
    first = (psi.values - psi.grid) / lam
    assert np.max(np.abs(first - psi.grid ** 3 / 3.0)) < 1e-5


def test_picard_term_decay(brownian):
    phi, _ = picard_basis(brownian, LAM, BM_WINDOW)
    norms = phi._term_norms
    ratios = np.array(norms[1:]) / np.array(norms[:-1])
    # ratios eventually fall below 1 and stay there
    assert np.all(ratios[-3:] < 1.0)
    assert norms[-1] < 1e-10 * max(np.max(phi.values), 1.0)


def test_picard_window_must_contain_expansion_point(brownian):
    with pytest.raises(MeasureError):
        picard_basis(brownian, LAM, (1.0, 2.0))


# --- the increasing solution -------------------------------------------------


def test_f_minus_brownian(brownian):
    f = solve_f_minus(brownian, LAM, BM_WINDOW)
    sel = (f.grid >= -2.0) & (f.grid <= 2.0)
    rel = np.abs(f.values[sel] / np.exp(f.grid[sel]) - 1.0)
    assert rel.max() < 1e-6
    assert f.normalization == "unit_at_origin"
    assert f.monotonicity == "increasing"


def test_f_minus_inverse_bessel(inverse_bessel):
    pair = solve_pair(inverse_bessel, LAM, IB_WINDOW)
    xs = np.linspace(0.2, 10.0, 257)
    target = xs * np.exp(-1.0 / xs)
    assert np.max(np.abs(pair.f_minus(xs) / target - 1.0)) < 1e-5
    assert pair.f_minus.normalization == "f_minus_vanishing_at_l_minus"


def test_f_minus_small_lambda_shape():
    # with l_minus finite the lambda -> 0 profile is linear, proportional
    # to 1 - x / l_minus
    m = constant_measure(-1.0, math.inf, level=2.0)
    f = solve_f_minus(m, 1e-7, (-0.9, 3.0))
    xs = np.linspace(-0.8, 2.5, 41)
    shape = f(xs) / f(0.0)
    assert np.max(np.abs(shape - (1.0 + xs))) < 1e-4


# --- the decreasing solution -------------------------------------------------


def test_f_plus_brownian(brownian):
    f = solve_f_plus(brownian, LAM, BM_WINDOW)
    sel = (f.grid >= -2.0) & (f.grid <= 2.0)
    rel = np.abs(f.values[sel] / np.exp(-f.grid[sel]) - 1.0)
    assert rel.max() < 1e-6
    assert f.normalization == "unit_at_origin"


def test_f_plus_inverse_bessel_tail_solution(inverse_bessel):
    f = solve_f_plus(inverse_bessel, LAM, IB_WINDOW)
    assert f.normalization == "alpha_plus_one"
    # g >= 1 everywhere and g -> 1 at the far end
    assert np.min(f.values) >= 1.0 - 1e-12
    assert f.values[-1] == pytest.approx(1.0, abs=1e-6)
    xs = np.linspace(0.2, 10.0, 257)
    target = xs * np.sinh(1.0 / xs)
    assert np.max(np.abs(f(xs) / target - 1.0)) < 1e-5


def test_f_plus_misdeclared_tail_raises(brownian):
    # claim a finite right tail for the standard Brownian density: the
    # tail equation has no bounded solution and the series must say so
    from dataclasses import replace
    bad = replace(brownian, tail_right="finite")
    with pytest.raises(ConvergenceError):
        solve_f_plus(bad, LAM, BM_WINDOW)


# --- wronskian and pairing ---------------------------------------------------


def test_wronskian_brownian(brownian):
    pair = solve_pair(brownian, LAM, BM_WINDOW)
    assert pair.wronskian_h == pytest.approx(2.0, rel=1e-6)
    assert pair.wronskian_dev < 1e-6
    assert pair.alpha_plus == 0.0


def test_wronskian_inverse_bessel(inverse_bessel):
    pair = solve_pair(inverse_bessel, LAM, IB_WINDOW)
    assert pair.wronskian_h == pytest.approx(1.0, rel=1e-6)
    assert pair.alpha_plus == 1.0


def test_wronskian_bilinearity(brownian):
    pair = solve_pair(brownian, LAM, BM_WINDOW)
    h = wronskian(pair.f_minus, pair.f_plus)
    h3 = wronskian(pair.f_minus.rescaled(3.0), pair.f_plus)
    assert h3 == pytest.approx(3.0 * h, rel=1e-12)


def test_wronskian_lambda_mismatch(brownian):
    p1 = solve_pair(brownian, 0.5, BM_WINDOW)
    p2 = solve_pair(brownian, 0.7, BM_WINDOW)
    with pytest.raises(MeasureError):
        wronskian(p1.f_minus, p2.f_plus)


# --- killed solution and hitting transforms ----------------------------------


def test_killed_vanishes_at_kill_point(brownian):
    pair = solve_pair(brownian, LAM, BM_WINDOW)
    fz = killed_f_minus(pair, 0.0)
    assert fz(0.0) == 0.0
    # e^x - e^-x = 2 sinh x, up to the pair normalization
    xs = np.linspace(0.3, 1.8, 21)
    ratio = fz(xs) / (2.0 * np.sinh(xs))
    assert np.max(np.abs(ratio - ratio[0])) < 1e-8


def test_killed_identity_and_bound(inverse_bessel):
    pair = solve_pair(inverse_bessel, LAM, IB_WINDOW)
    z = 0.5
    fz = killed_f_minus(pair, z)
    xs = np.linspace(0.7, 6.0, 31)
    ratio = float(pair.f_minus(z) / pair.f_plus(z))
    # exact decomposition f_minus = killed + ratio * f_plus
    recon = fz(xs) + ratio * pair.f_plus(xs)
    assert np.max(np.abs(recon / pair.f_minus(xs) - 1.0)) < 1e-9
    # replacing f_plus(x) by any later value can only lower the bound
    for w in (2.0, 4.0, 8.0):
        bound = fz(xs) + ratio * float(pair.f_plus(w))
        assert np.all(pair.f_minus(xs) >= np.where(xs <= w, bound, -np.inf)
                      - 1e-9 * pair.f_minus(xs))


def test_hitting_laplace_trivial_and_closed_forms(brownian, inverse_bessel):
    pb = solve_pair(brownian, LAM, BM_WINDOW)
    assert hitting_laplace(pb, 1.0, 1.0) == 1.0
    assert hitting_laplace(pb, 1.0, 0.0) == pytest.approx(math.exp(-1.0),
                                                          rel=1e-8)
    pi = solve_pair(inverse_bessel, LAM, IB_WINDOW)
    expected = math.exp(-0.5) / 2.0   # f_minus ratio of x e^{-1/x}
    assert hitting_laplace(pi, 1.0, 2.0) == pytest.approx(expected, rel=1e-7)


def test_hitting_laplace_monotonicity(brownian):
    vals_lam = []
    for lam in (0.3, 0.6, 1.2):
        pair = solve_pair(brownian, lam, BM_WINDOW)
        vals_lam.append(hitting_laplace(pair, 1.0, 0.0))
    assert vals_lam[0] > vals_lam[1] > vals_lam[2]
    pair = solve_pair(brownian, LAM, BM_WINDOW)
    closer, farther = hitting_laplace(pair, 0.5, 0.0), \
        hitting_laplace(pair, 1.5, 0.0)
    assert farther < closer < 1.0


@settings(max_examples=20, deadline=None)
@given(x=st.floats(-1.5, 1.5), a=st.floats(-1.9, 1.9))
def test_hitting_laplace_in_unit_interval(brownian, x, a):
    pair = solve_pair(brownian, LAM, BM_WINDOW)
    v = hitting_laplace(pair, x, a)
    assert 0.0 < v <= 1.0


# --- integral identities -----------------------------------------------------


def test_integral_residual_all_solutions(brownian, inverse_bessel):
    for m, window in ((brownian, BM_WINDOW), (inverse_bessel, IB_WINDOW)):
        pair = solve_pair(m, LAM, window)
        for f in (pair.f_minus, pair.f_plus):
            assert integral_residual(f, m, window) < 1e-7


def test_derivative_identity(inverse_bessel):
    # f'(y) - f'(x) = lambda * int_(x,y] f dm
    pair = solve_pair(inverse_bessel, LAM, IB_WINDOW)
    f = pair.f_minus
    sel = (f.grid >= 0.25) & (f.grid <= 9.0)
    grid = f.grid[sel]
    mq = MeasureGrid(grid, inverse_bessel.rho(grid))
    M = mq.measure_anchored(f.values[sel], 0)
    lhs = f.right_derivative[sel] - f.right_derivative[sel][0]
    assert np.max(np.abs(lhs - LAM * M)) < 1e-8 * np.max(
        np.abs(f.right_derivative[sel]))


def test_atom_introduces_derivative_jump():
    m = constant_measure(-math.inf, math.inf, level=2.0, atoms=[(0.3, 0.5)])
    pair = solve_pair(m, LAM, BM_WINDOW)
    f = pair.f_minus
    i = int(np.argmin(np.abs(f.grid - 0.3)))
    assert f.grid[i] == pytest.approx(0.3, abs=1e-12)
    jump = f.right_derivative[i] - f.right_derivative[i - 1]
    expected = LAM * 0.5 * f.values[i]
    # the continuous part contributes O(cell) on top of the atom jump
    assert jump == pytest.approx(expected, rel=5e-3)
    # the wronskian stays constant across the atom
    assert pair.wronskian_dev < 1e-6
    assert integral_residual(f, m, BM_WINDOW) < 1e-7


def test_monotonicity_validation_catches_corruption(brownian):
    f = solve_f_minus(brownian, LAM, BM_WINDOW)
    vals = f.values.copy()
    vals[len(vals) // 2] *= 0.5
    from dataclasses import replace
    broken = replace(f, values=vals)
    with pytest.raises(ConvergenceError):
        broken.validate()


def test_ladder_amplitude_guard(inverse_bessel):
    # a huge lambda on a window hugging the singular endpoint cannot fit
    # inside the overflow/point budgets, whichever trips first
    with pytest.raises((ConvergenceError, MeasureError)):
        solve_f_minus(inverse_bessel, 5e4, (1e-3, 8.0))


def test_eigenfunction_csv_round_trip(tmp_path, brownian):
    f = solve_f_minus(brownian, LAM, BM_WINDOW)
    path = tmp_path / "f.csv"
    f.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# lambda=0.5")
    assert "unit_at_origin" in lines[0]
    assert lines[1] == "x,value,right_derivative"
    xs, vals = [], []
    for row in lines[2:]:
        sx, sv, _ = row.split(",")
        xs.append(float(sx))
        vals.append(float(sv))
    assert np.allclose(xs, f.grid)
    assert np.allclose(vals, f.values)
