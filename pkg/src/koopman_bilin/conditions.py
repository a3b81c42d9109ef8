"""Nonresonance and spectral-spread conditions on eigenvalue tuples.

An eigenvalue ``lam[i]`` is k-nonresonant when no multi-index ``m != e_i``
with ``|m| <= k`` satisfies ``lam[i] == sum_j m_j lam[j]``. It satisfies the
k-spectral-spread condition when ``Re lam[i] > k * max_l Re lam[l]``.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import BudgetExceeded
from .polyfield import ControlAffineSystem, MultiIndex, jacobian_at, materialize, monomials
from .spectral import match_eigenvalues
from . import defaults

log = logging.getLogger(__name__)

INF = math.inf
ENUMERATION_BUDGET = 10**7


@lru_cache(maxsize=64)
def _exponent_table(n: int, k: int) -> np.ndarray:
    count = math.comb(n + k, k)
    if count > ENUMERATION_BUDGET:
        raise BudgetExceeded(
            f"C(n+k, k) = {count} multi-indices exceeds the budget {ENUMERATION_BUDGET}",
            n=n, k=k, count=count,
        )
    table = np.array(monomials(n, k), dtype=np.int64).reshape(-1, n)
    table.setflags(write=False)
    return table


def _effective_order(k, k_max: int) -> tuple[int, bool]:
    if k == INF or k is None:
        return int(k_max), True
    k = int(k)
    if k < 1:
        raise ValueError("order k must be >= 1")
    return k, False


@dataclass(frozen=True)
class ResonanceRecord:
    target_index: int
    witness: MultiIndex
    value_gap: float
    kind: str  # "nonresonance" or "spread"

    def to_dict(self) -> dict:
        return {
            "target_index": self.target_index,
            "witness": list(self.witness),
            "value_gap": self.value_gap,
            "kind": self.kind,
        }


@dataclass(frozen=True)
class NonresonanceVerdict:
    index: int
    order: int
    nonresonant: bool
    min_gap: float
    min_gap_witness: MultiIndex | None
    violations: tuple[ResonanceRecord, ...]
    capped: bool = False


def check_nonresonant(lam, i: int, k=2, tol: float = defaults.RESONANCE_TOL,
                      min_order: int = 0, k_max: int = defaults.K_MAX) -> NonresonanceVerdict:
    """Enumerate every ``m`` with ``min_order <= |m| <= k``, ``m != e_i`` and
    collect those with ``|lam[i] - m . lam| < tol``.

    ``k`` may be ``math.inf``; enumeration is then capped at ``k_max`` and the
    verdict is flagged ``capped``. ``min_order=2`` restricts the check to the
    orders that appear as denominators of the homological equation.
    """
    lam = np.asarray(lam, dtype=complex)
    n = lam.size
    if not 0 <= i < n:
        raise IndexError(f"eigen-index {i} out of range")
    if np.any(lam.real >= 0):
        warnings.warn("eigenvalues with non-negative real part: equilibrium is not GES",
                      RuntimeWarning, stacklevel=2)
    order, capped = _effective_order(k, k_max)
    table = _exponent_table(n, order)
    degrees = table.sum(axis=1)
    keep = degrees >= min_order
    keep &= ~((degrees == 1) & (table[:, i] == 1))
    table = table[keep]
    gaps = np.abs(lam[i] - table @ lam)
    witnesses = tuple(
        ResonanceRecord(i, tuple(int(e) for e in table[r]), float(gaps[r]), "nonresonance")
        for r in np.flatnonzero(gaps < tol)
    )
    if gaps.size:
        r = int(np.argmin(gaps))
        min_gap, arg = float(gaps[r]), tuple(int(e) for e in table[r])
    else:
        min_gap, arg = math.inf, None
    return NonresonanceVerdict(i, order, not witnesses, min_gap, arg, witnesses, capped)


def check_spectral_spread(lam, i: int, k=2, tol: float = defaults.RESONANCE_TOL) -> bool:
    """``Re lam[i] > k * max_l Re lam[l] - tol``; always true for ``k = inf``
    when the spectrum is Hurwitz."""
    lam = np.asarray(lam, dtype=complex)
    top = float(lam.real.max())
    if k == INF:
        return top < 0
    return bool(lam[i].real > k * top - tol)


@dataclass
class ConditionsReport:
    k: float
    eigenvalues: tuple
    tolerance: float
    nonresonant: list = field(default_factory=list)
    spread_ok: list = field(default_factory=list)
    min_gaps: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    min_order: int = 0
    capped_at: int | None = None

    @property
    def all_pass(self) -> bool:
        return all(self.nonresonant) and all(self.spread_ok)

    @property
    def min_gap(self) -> float:
        return min(self.min_gaps, default=math.inf)

    def to_dict(self) -> dict:
        return {
            "k": "inf" if self.k == INF else int(self.k),
            "capped_at": self.capped_at,
            "min_order": self.min_order,
            "tolerance": self.tolerance,
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "nonresonant": list(self.nonresonant),
            "spread_ok": list(self.spread_ok),
            "min_gaps": list(self.min_gaps),
            "violations": [v.to_dict() for v in self.violations],
            "all_pass": self.all_pass,
        }


def check_conditions(lam, k=2, tol: float = defaults.RESONANCE_TOL, min_order: int = 0,
                     k_max: int = defaults.K_MAX) -> ConditionsReport:
    """Both conditions for every index of ``lam``."""
    lam = np.asarray(lam, dtype=complex)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        verdicts = [check_nonresonant(lam, i, k, tol, min_order, k_max) for i in range(lam.size)]
    report = ConditionsReport(k, tuple(complex(z) for z in lam), tol, min_order=min_order)
    top = float(lam.real.max())
    for i, v in enumerate(verdicts):
        report.nonresonant.append(v.nonresonant)
        report.min_gaps.append(v.min_gap)
        report.violations.extend(v.violations)
        ok = check_spectral_spread(lam, i, k, tol)
        report.spread_ok.append(ok)
        if not ok:
            report.violations.append(ResonanceRecord(
                i, (), float(lam[i].real - k * top), "spread"))
        if v.capped:
            report.capped_at = v.order
    return report


# ---------------------------------------------------------------------------
# parameter scans
# ---------------------------------------------------------------------------

@dataclass
class GridPoint:
    u: tuple
    ges: bool
    report: ConditionsReport | None
    flagged: bool = False
    localized: list = field(default_factory=list)  # refined (u, gap, i, m) hits

    def to_dict(self) -> dict:
        return {
            "u": list(self.u),
            "ges": self.ges,
            "flagged": self.flagged,
            "min_gap": None if self.report is None else self.report.min_gap,
            "localized": [
                {"u": list(u), "gap": g, "target_index": i, "witness": list(m)}
                for u, g, i, m in self.localized
            ],
            "report": None if self.report is None else self.report.to_dict(),
        }


@dataclass
class ScanResult:
    k: float
    tolerance: float
    points: list

    @property
    def flagged_u(self) -> list:
        return [p.u for p in self.points if p.flagged]

    def to_dict(self) -> dict:
        return {
            "k": "inf" if self.k == INF else int(self.k),
            "tolerance": self.tolerance,
            "flagged_u": [list(u) for u in self.flagged_u],
            "points": [p.to_dict() for p in self.points],
        }


def _jacobian_spectrum(sys: ControlAffineSystem, u) -> np.ndarray:
    A = jacobian_at(materialize(sys, u), np.zeros(sys.n))
    lam = np.linalg.eigvals(A).astype(complex)
    return lam[np.lexsort((lam.imag, -lam.real))]


def _residual_table(lam: np.ndarray, table: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """``lam[i] - m . lam`` for every (target i, multi-index m) row."""
    return lam[targets] - table @ lam


def scan_parameter_resonances(sys: ControlAffineSystem, u_grid, k=4,
                              tol: float = defaults.RESONANCE_TOL, min_order: int = 0,
                              k_max: int = defaults.K_MAX, refine: bool = True,
                              workers: int | None = None) -> ScanResult:
    """Per-point condition reports along an ordered parameter grid.

    A grid point is flagged when its own minimal gap is below ``tol``, or
    when minimising a residual ``lam_i(u) - m . lam(u)`` over a neighbouring
    grid cell reaches below ``tol`` and this grid point is the one nearest to
    the minimiser. Eigenvalue labels are carried across each cell by
    minimal-distance assignment.
    """
    grid = [tuple(float(v) for v in np.atleast_1d(u)) for u in u_grid]
    if not grid:
        raise ValueError("parameter grid is empty")
    n = sys.n
    order, _ = _effective_order(k, k_max)

    def at(u):
        lam = _jacobian_spectrum(sys, u)
        if np.any(lam.real >= 0):
            return lam, None
        return lam, check_conditions(lam, k, tol, min_order, k_max)

    workers = workers or defaults.max_workers()
    if workers > 1 and len(grid) > 64:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(at, grid))
    else:
        results = [at(u) for u in grid]

    points = []
    for u, (lam, rep) in zip(grid, results):
        ges = rep is not None
        if not ges:
            log.info("grid point u=%s is not GES; skipped", u)
        points.append(GridPoint(u, ges, rep, flagged=ges and not all(rep.nonresonant)))

    if refine and len(grid) > 1:
        table = _exponent_table(n, order)
        rows, targets = [], []
        for i in range(n):
            deg = table.sum(axis=1)
            keep = (deg >= min_order) & ~((deg == 1) & (table[:, i] == 1))
            rows.append(table[keep])
            targets.append(np.full(int(keep.sum()), i))
        M = np.vstack(rows)
        T = np.concatenate(targets)
        for a in range(len(grid) - 1):
            pa, pb = points[a], points[a + 1]
            if not (pa.ges and pb.ges):
                continue
            _refine_cell(sys, pa, pb, results[a][0], results[a + 1][0], M, T, tol)
    return ScanResult(k, tol, points)


def _refine_cell(sys, pa: GridPoint, pb: GridPoint, lam_a, lam_b, M, T, tol):
    ua, ub = np.array(pa.u), np.array(pb.u)
    lam_b = lam_b[match_eigenvalues(lam_a, lam_b)]
    ra = _residual_table(lam_a, M, T)
    rb = _residual_table(lam_b, M, T)
    delta = rb - ra
    # minimum of |ra + s*delta| on s in [0, 1] under a linear model
    denom = np.abs(delta) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        s_lin = np.where(denom > 0, -np.real(np.conj(delta) * ra) / denom, 0.0)
    s_lin = np.clip(s_lin, 0.0, 1.0)
    predicted = np.abs(ra + s_lin * delta)
    candidates = np.flatnonzero(predicted < tol + 0.1 * np.abs(delta))
    for r in candidates:
        m_row, i = M[r], int(T[r])

        def gap(s, m_row=m_row, i=i):
            lam = _jacobian_spectrum(sys, ua + s * (ub - ua))
            lam = lam[match_eigenvalues(lam_a, lam)]
            return abs(lam[i] - m_row @ lam)

        res = minimize_scalar(gap, bounds=(0.0, 1.0), method="bounded",
                              options={"xatol": 1e-12})
        s_best, g_best = float(res.x), float(res.fun)
        for s_end in (0.0, 1.0):
            g_end = gap(s_end)
            if g_end < g_best:
                s_best, g_best = s_end, g_end
        if g_best < tol:
            near = pa if s_best <= 0.5 else pb
            u_star = tuple(float(v) for v in ua + s_best * (ub - ua))
            hit = (u_star, g_best, i, tuple(int(e) for e in m_row))
            if not any(abs(h[0][0] - u_star[0]) < 1e-9 and h[2:] == hit[2:] for h in near.localized):
                near.localized.append(hit)
            near.flagged = True
