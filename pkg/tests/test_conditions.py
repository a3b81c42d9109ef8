import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from koopman_bilin.conditions import (
    check_conditions, check_nonresonant, check_spectral_spread, scan_parameter_resonances,
)
from koopman_bilin.errors import BudgetExceeded
from koopman_bilin.polyfield import example_system


def naive_nonresonant(lam, i, k, tol, min_order=0):
    n = len(lam)
    for m in itertools.product(range(k + 1), repeat=n):
        s = sum(m)
        if s > k or s < min_order:
            continue
        if s == 1 and m[i] == 1:
            continue
        if abs(lam[i] - sum(mj * lj for mj, lj in zip(m, lam))) < tol:
            return False
    return True


def random_tuple(rng):
    """Eigenvalues on a coarse rational lattice so resonances actually occur."""
    n = int(rng.integers(1, 5))
    lam = []
    while len(lam) < n:
        re = -int(rng.integers(1, 7)) / int(rng.integers(1, 4))
        if n - len(lam) >= 2 and rng.random() < 0.25:
            im = int(rng.integers(1, 4)) / 2
            lam += [complex(re, im), complex(re, -im)]
        else:
            lam.append(complex(re, 0.0))
    return np.array(lam)


def test_matches_naive_oracle_on_lattice_tuples():
    rng = np.random.default_rng(2024)
    resonant = 0
    for _ in range(300):
        lam = random_tuple(rng)
        k = int(rng.integers(1, 7))
        for i in range(len(lam)):
            got = check_nonresonant(lam, i, k, 1e-9).nonresonant
            assert got == naive_nonresonant(lam, i, k, 1e-9)
            resonant += not got
    assert resonant > 50


@pytest.mark.parametrize("lam,i,k,expected", [
    ([-1.0, -2.0], 1, 2, False),          # -2 = 2 * (-1)
    ([-1.0, -2.0], 1, 1, True),
    ([-1.0, -3.0], 1, 2, True),
    ([-1.0, -3.0], 1, 3, False),
    ([-1.0, -1.0], 0, 2, False),          # repeated eigenvalue, |m| = 1
    ([-1 + 1j, -1 - 1j, -2.0], 2, 2, False),  # conjugate pair sums to -2
])
def test_hand_cases(lam, i, k, expected):
    assert check_nonresonant(lam, i, k).nonresonant is expected


def test_min_order_skips_linear_coincidences():
    lam = [-1.0, -1.0]
    assert not check_nonresonant(lam, 0, 3).nonresonant
    assert check_nonresonant(lam, 0, 3, min_order=2).nonresonant


def test_witness_and_gap():
    v = check_nonresonant([-1.0, -2.0], 1, 4)
    assert v.violations[0].witness == (2, 0)
    assert v.min_gap == 0.0
    v = check_nonresonant([-1.0, -2.1], 1, 2)
    assert v.min_gap == pytest.approx(0.1)
    assert v.min_gap_witness == (2, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 5))
def test_lower_order_inherits_nonresonance(seed, k):
    lam = random_tuple(np.random.default_rng(seed))
    for i in range(len(lam)):
        if check_nonresonant(lam, i, k + 1).nonresonant:
            assert check_nonresonant(lam, i, k).nonresonant


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.1, 10.0))
def test_scale_covariance(seed, c):
    lam = random_tuple(np.random.default_rng(seed))
    for i in range(len(lam)):
        a = check_nonresonant(lam, i, 4, 1e-6)
        b = check_nonresonant(c * lam, i, 4, 1e-6 * c)
        assert a.nonresonant == b.nonresonant


def test_infinite_order_is_capped():
    v = check_nonresonant([-1.0, -1.7], 0, math.inf, k_max=6)
    assert v.capped and v.order == 6


def test_budget_exceeded():
    with pytest.raises(BudgetExceeded):
        check_nonresonant(-np.arange(1, 13, dtype=float), 0, 40)


def test_unstable_spectrum_warns():
    with pytest.warns(RuntimeWarning):
        check_nonresonant([0.5, -1.0], 0, 2)


@pytest.mark.parametrize("lam,i,k,ok", [
    ([-1.0, -1.5], 1, 2, True),
    ([-1.0, -2.5], 1, 2, False),
    ([-1.0, -2.5], 1, 3, True),
    ([-1.0, -2.0], 1, 2, True),   # boundary counted with tolerance
])
def test_spectral_spread(lam, i, k, ok):
    assert check_spectral_spread(lam, i, k) is ok


def test_conditions_report():
    rep = check_conditions([-1.0, -2.0], 2)
    assert not rep.all_pass
    assert rep.nonresonant == [True, False]
    d = rep.to_dict()
    assert d["violations"][0]["witness"] == [2, 0]
    assert check_conditions([-1.0, -1.5], 3).all_pass


# --- parameter scans on the two-state example ------------------------------

def _flagged(res):
    return sorted(round(p.u[0], 2) for p in res.points if p.flagged)


def test_scan_order_four_flags_listed_set():
    grid = np.round(np.arange(-2.2, 0.95 + 1e-9, 0.01), 10)
    res = scan_parameter_resonances(example_system(2.0), grid, 4, 1e-6)
    assert _flagged(res) == [-2.0, -1.0, 0.0, 0.5, 0.67, 0.75]


def test_scan_order_five_adds_four_fifths():
    # lam = (-1, -1+u) also satisfies -1 = 5 (-1+u) at u = 4/5
    grid = np.round(np.arange(-2.2, 0.95 + 1e-9, 0.01), 10)
    res = scan_parameter_resonances(example_system(2.0), grid, 5, 1e-6)
    assert _flagged(res) == [-2.0, -1.0, 0.0, 0.5, 0.67, 0.75, 0.8]


def test_scan_refinement_catches_off_grid_resonance():
    # neither 1/2 nor 2/3 is a grid point; their nearest points must be flagged
    grid = [0.38, 0.48, 0.58, 0.68, 0.78]
    res = scan_parameter_resonances(example_system(1.0), grid, 3, 1e-6)
    assert _flagged(res) == [0.48, 0.68]
    hits = [h[0][0] for p in res.points for h in p.localized]
    assert min(abs(h - 2 / 3) for h in hits) < 1e-6
    unrefined = scan_parameter_resonances(example_system(1.0), grid, 3, 1e-6, refine=False)
    assert _flagged(unrefined) == []


def test_scan_skips_unstable_points():
    res = scan_parameter_resonances(example_system(1.0), [0.5, 1.0, 1.5], 2, 1e-6)
    assert [p.ges for p in res.points] == [True, False, False]
