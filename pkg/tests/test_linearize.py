import warnings

import numpy as np
import pytest
import sympy as sp

from koopman_bilin.errors import ConditionFailed, NotGES, ResonantDenominator
from koopman_bilin.flow import sample_box
from koopman_bilin.linearize import (
    NearResonanceWarning, continuity_sweep, eigenfunctions, evaluate_conjugacy,
    homological_residual, linearize_parameterized, psi_jacobian, solve_homological,
    verify_conjugacy,
)
from koopman_bilin.polyfield import Box, PolyMap, evaluate, example_system, linear_part, materialize, monomials

from conftest import random_family, random_stable_field


def sympy_conjugacy(terms, n, k):
    """Solve D psi . f = A psi with psi = x + O(|x|^2) by undetermined
    coefficients in exact rational arithmetic, truncated at degree ``k``."""
    x = sp.symbols(f"x1:{n + 1}")
    f = [sp.Integer(0)] * n
    for i, m, c in terms:
        f[i] += sp.Rational(c) * sp.Mul(*[xj ** e for xj, e in zip(x, m)])
    A = sp.Matrix(n, n, lambda i, j: sp.diff(f[i], x[j]).subs({xj: 0 for xj in x}))
    mons = [m for m in monomials(n, k, 2)]
    coeffs = {}
    psi = []
    for r in range(n):
        expr = x[r]
        for m in mons:
            c = sp.Symbol(f"c_{r}_{'_'.join(map(str, m))}")
            coeffs[(r, m)] = c
            expr += c * sp.Mul(*[xj ** e for xj, e in zip(x, m)])
        psi.append(expr)
    eqs = []
    for r in range(n):
        lhs = sum(sp.diff(psi[r], x[j]) * f[j] for j in range(n))
        rhs = sum(A[r, j] * psi[j] for j in range(n))
        poly = sp.Poly(sp.expand(lhs - rhs), *x)
        for mono, c in poly.terms():
            if 2 <= sum(mono) <= k:
                eqs.append(c)
    sol = sp.solve(eqs, list(coeffs.values()), dict=True)[0]
    return {key: float(sol[c]) for key, c in coeffs.items()}


ORACLE_CASES = {
    "triangular": [(0, (1, 0), -1), (0, (0, 1), "1/2"), (1, (0, 1), "-3/2"),
                   (0, (2, 0), "1/3"), (1, (1, 1), -1), (1, (3, 0), "1/4"), (0, (0, 2), "2/5")],
    "focus": [(0, (1, 0), -1), (0, (0, 1), 2), (1, (1, 0), -2), (1, (0, 1), -1),
              (0, (2, 0), "1/2"), (1, (1, 1), "1/3"), (0, (0, 3), "-1/5")],
}


@pytest.mark.parametrize("case", sorted(ORACLE_CASES))
def test_homological_solution_matches_exact_oracle(case):
    terms = ORACLE_CASES[case]
    n, k = 2, 4
    f = PolyMap.from_terms(n, [(i, m, float(sp.Rational(c))) for i, m, c in terms])
    psi = solve_homological(f, k)
    oracle = sympy_conjugacy(terms, n, k)
    for (r, m), c in oracle.items():
        assert psi.coefficient(r, m) == pytest.approx(c, abs=1e-12)
    assert psi.imag_residue < 1e-12
    np.testing.assert_allclose(linear_part(psi.psi_poly), np.eye(2), atol=1e-12)


# closed-form coefficient of x1^2 in the second component: (a + u) / (1 + u)
@pytest.mark.parametrize("a,u,expected", [
    (2.0, 0.0, 2.0), (2.0, 0.1, 2.1 / 1.1), (1.0, 0.0, 1.0), (0.5, -0.5, 0.0),
])
def test_example_eigenfunction_coefficient(a, u, expected):
    psi = linearize_parameterized(example_system(a), [u], k=2)
    assert psi.coefficient(1, (2, 0)) == pytest.approx(expected, abs=1e-12)
    assert psi.coefficient(0, (1, 0)) == pytest.approx(1.0, abs=1e-12)
    assert psi.coefficient(0, (2, 0)) == 0


def test_example_vanishing_denominator():
    with pytest.raises(ResonantDenominator) as info:
        linearize_parameterized(example_system(2.0), [-1.0], k=2)
    assert info.value.detail["witness"] == [2, 0]
    assert info.value.detail["gap"] == 0
    assert info.value.exit_status == 2


def test_reverse_order_gives_same_solution(rng):
    f = random_stable_field(rng, 3)
    a = solve_homological(f, 5)
    b = solve_homological(f, 5, order="reverse")
    assert (a.psi_poly - b.psi_poly).is_zero(1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_homological_residual_vanishes_through_order(seed):
    f = random_stable_field(np.random.default_rng(seed), 3)
    psi = solve_homological(f, 5)
    res = homological_residual(f, psi)
    scale = max(1.0, psi.psi_poly.max_abs_coeff()) * max(1.0, f.max_abs_coeff())
    assert max(res.values()) < 1e-10 * scale
    # above the truncation order the equation is generally not satisfied
    assert max(homological_residual(f, psi, max_degree=7).values()) > 1e-8


def test_conjugacy_on_example():
    sys = example_system(2.0)
    f = materialize(sys, [0.0])
    psi = linearize_parameterized(sys, [0.0], k=2)
    X = sample_box(Box.symmetric(2, 0.8), 40)
    d = verify_conjugacy(f, psi, X, horizon=5.0)
    assert d.conjugacy_residual < 1e-8
    assert d.instantaneous_residual < 1e-12


def test_pullback_horizon_doubling(rng):
    f = random_stable_field(rng, 2)
    psi = solve_homological(f, 5)
    X = sample_box(Box.symmetric(2, 0.5), 20)
    T = psi.pullback_T
    a = evaluate_conjugacy(psi, f, X, T=T)
    b = evaluate_conjugacy(psi, f, X, T=2 * T)
    assert np.max(np.abs(a - b)) < 1e-8


def test_pullback_improves_on_polynomial(rng):
    f = random_stable_field(rng, 2)
    psi = solve_homological(f, 3)
    X = sample_box(Box.symmetric(2, 0.5), 30)
    poly = verify_conjugacy(f, psi, X, 3.0, T=0.0, n_times=6).conjugacy_residual
    pulled = verify_conjugacy(f, psi, X, 3.0, n_times=6).conjugacy_residual
    assert pulled < 1e-3 * poly


def test_residual_decreases_with_order(rng):
    f = random_stable_field(rng, 2)
    X = sample_box(Box.symmetric(2, 0.5), 30)
    res = [verify_conjugacy(f, solve_homological(f, k), X, 3.0, T=0.0, n_times=6).conjugacy_residual
           for k in (2, 4, 6)]
    assert res[0] > res[1] > res[2]


def test_eigenfunctions_evolve_exponentially(rng):
    f = random_stable_field(rng, 3)
    psi = solve_homological(f, 5)
    x = np.array([0.2, -0.1, 0.15])
    from koopman_bilin.flow import flow_map
    t = 0.7
    lhs = eigenfunctions(psi, f, flow_map(f, x, t))
    rhs = np.exp(psi.spectrum.eigenvalues * t) * eigenfunctions(psi, f, x)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_psi_jacobian_identity_at_origin(rng):
    psi = solve_homological(random_stable_field(rng, 3), 4)
    np.testing.assert_allclose(psi_jacobian(psi, np.zeros(3)), np.eye(3), atol=1e-12)


def test_linear_field_gives_identity():
    f = PolyMap.linear(np.array([[-1.0, 0.3], [0.0, -2.5]]))
    psi = solve_homological(f, 5)
    X = np.array([[0.3, -0.4], [1.0, 2.0]])
    np.testing.assert_allclose(evaluate(psi.psi_poly, X), X, atol=1e-12)


def test_unstable_family_rejected():
    with pytest.raises(NotGES):
        linearize_parameterized(example_system(2.0), [1.5], k=2)


def test_spread_condition_enforced():
    f = PolyMap.from_terms(2, [(0, (1, 0), -1.0), (1, (0, 1), -2.5), (1, (2, 0), 1.0)])
    from koopman_bilin.polyfield import ControlAffineSystem
    with pytest.raises(ConditionFailed):
        linearize_parameterized(ControlAffineSystem(f), [], k=2)
    assert linearize_parameterized(ControlAffineSystem(f), [], k=3).k == 3


def test_near_resonance_warns():
    f = PolyMap.from_terms(2, [(0, (1, 0), -1.0), (1, (0, 1), -2.0 - 5e-8), (1, (2, 0), 1.0)])
    with pytest.warns(NearResonanceWarning):
        solve_homological(f, 2, tol=1e-9)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        solve_homological(f, 2, tol=1e-12)


def test_serialisation(rng):
    psi = solve_homological(random_stable_field(rng, 2), 3)
    d = psi.to_dict()
    assert d["k"] == 3
    assert len(d["psi"]) == 2
    assert d["pullback"]["T"] == psi.pullback_T


def test_continuity_sweep_linear_rate():
    rows = continuity_sweep(example_system(2.0), [0.2], [0.1, 0.05, 0.025, 0.0125], k=3)
    gaps = [r.gap for r in rows]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))
    for r in rows[1:]:
        assert r.ratio == pytest.approx(0.5, abs=0.05)


def test_continuity_sweep_random_family(rng):
    sys = random_family(rng, 3)
    rows = continuity_sweep(sys, [0.0], [0.1, 0.05, 0.025], k=4)
    gaps = [r.gap for r in rows]
    assert gaps[0] > gaps[1] > gaps[2] > 0
    assert all(r.derivative_gap > 0 for r in rows)
