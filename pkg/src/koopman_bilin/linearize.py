"""Global linearization through Koopman principal eigenfunctions.

The polynomial part of each eigenfunction is obtained by solving the
homological equation degree by degree in eigen-coordinates ``y = W x``::

    (m . lam - lam_i) c_m = -[ sum_j d(phi_i)/dy_j * N_j(y) ]_m

where ``N`` is the nonlinear part of the field in eigen-coordinates. The
linearizing map is ``psi = V phi``, so ``D psi(0) = I`` and
``d/dt psi(x(t)) = A psi(x(t))``. Away from the origin ``psi`` is refined by
pulling back along the flow: ``phi(x) = exp(-Lambda T) phi_poly(S_T x)``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import defaults
from .conditions import check_spectral_spread
from .errors import ConditionFailed, NotGES, ResonantDenominator
from .flow import PULLBACK_CONFIG, IntegratorConfig, integrate
from .polyfield import (
    PRUNE_TOL,
    ControlAffineSystem,
    MultiIndex,
    PolyMap,
    canonical,
    evaluate,
    jacobian_at,
    lie_derivative,
    linear_part,
    linear_substitute,
    materialize,
    monomials_of_degree,
    poly_add,
    poly_deriv,
    poly_mul,
    poly_truncate,
    unit,
)
from .spectral import Spectrum, eigen_decompose, match_eigenvalues

log = logging.getLogger(__name__)


class NearResonanceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class ConjugacyMap:
    """Linearizing map ``psi`` and the eigenfunctions it is built from.

    ``phi_eigen[i]`` is ``phi_i`` as a polynomial in eigen-coordinates,
    ``phi[i]`` the same function in the original coordinates (degree-1 part
    equal to the left eigenvector ``w_i``) and ``psi_poly`` the real map
    ``V phi``.
    """

    k: int
    spectrum: Spectrum
    A: np.ndarray
    phi_eigen: PolyMap
    phi: PolyMap
    psi_poly: PolyMap
    pullback_T: float
    cfg: IntegratorConfig = PULLBACK_CONFIG
    min_denominator: float = math.inf
    imag_residue: float = 0.0
    prune_tol: float = PRUNE_TOL

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def coefficient(self, component: int, m) -> float:
        """Real coefficient of ``x^m`` in ``psi_poly[component]``."""
        return float(np.real(self.psi_poly.coefficient(component, m)))

    def with_pullback(self, T: float) -> "ConjugacyMap":
        return ConjugacyMap(self.k, self.spectrum, self.A, self.phi_eigen, self.phi,
                            self.psi_poly, float(T), self.cfg, self.min_denominator,
                            self.imag_residue, self.prune_tol)

    def to_dict(self) -> dict:
        def coeff_list(p: PolyMap):
            return [
                [[list(m), float(np.real(c)), float(np.imag(c))] for m, c in comp.items()]
                for comp in p.components
            ]

        return {
            "k": self.k,
            "A": self.A.tolist(),
            "spectrum": self.spectrum.to_dict(),
            "phi": coeff_list(self.phi),
            "psi": coeff_list(self.psi_poly),
            "realification": {
                "pairs": [[int(i), int(j)] for i, j in sorted(self.spectrum.pairs.items()) if i < j],
                "imag_residue": self.imag_residue,
            },
            "pullback": {
                "T": self.pullback_T,
                "method": self.cfg.method,
                "rtol": self.cfg.rtol,
                "atol": self.cfg.atol,
                "step": self.cfg.step,
            },
            "min_denominator": self.min_denominator,
            "prune_tol": self.prune_tol,
        }


@dataclass
class LinearizationDiagnostics:
    conjugacy_residual: float
    instantaneous_residual: float
    homological_residual: dict
    pullback_T: float
    samples: int
    horizon: float
    residual_by_time: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "conjugacy_residual": self.conjugacy_residual,
            "instantaneous_residual": self.instantaneous_residual,
            "homological_residual": {str(d): r for d, r in self.homological_residual.items()},
            "pullback_T": self.pullback_T,
            "samples": self.samples,
            "horizon": self.horizon,
            "residual_by_time": self.residual_by_time,
        }


def default_pullback(spectrum: Spectrum) -> float:
    return defaults.PULLBACK_FACTOR / spectrum.slowest_rate


def _eigen_field(f: PolyMap, s: Spectrum, k: int) -> list[dict]:
    """Nonlinear part of ``W f(V y)`` up to degree ``k``."""
    out = []
    for i in range(f.n):
        # component i of W f = sum_r W[i, r] f_r
        comp: dict = {}
        for r in range(f.n):
            if s.left[i, r] != 0 and f.components[r]:
                comp = poly_add(comp, f.components[r], s.left[i, r])
        comp = poly_truncate(comp, k, 2)
        out.append(linear_substitute(comp, s.right, max_degree=k))
    return out


def solve_homological(f: PolyMap, k: int = defaults.K, tol: float = defaults.RESONANCE_TOL,
                      spectrum: Spectrum | None = None, order: str = "graded-lex",
                      cfg: IntegratorConfig = PULLBACK_CONFIG) -> ConjugacyMap:
    """Polynomial part (through degree ``k``) of the linearizing map of ``f``.

    Raises
    ------
    ResonantDenominator
        When some ``|m . lam - lam_i|`` with ``2 <= |m| <= k`` is below ``tol``.
    NonDiagonalizable
        From the eigen-decomposition of ``Df(0)``.
    """
    if k < 1:
        raise ValueError("order k must be >= 1")
    n = f.n
    if any((0,) * n in comp for comp in f.components):
        raise ValueError("field must vanish at the origin")
    A = np.real_if_close(linear_part(f))
    s = spectrum if spectrum is not None else eigen_decompose(A)
    lam = s.eigenvalues
    N = _eigen_field(f, s, k)

    min_den = math.inf
    phis = []
    for i in range(n):
        phi: dict = {unit(n, i): 1.0 + 0j}
        for d in range(2, k + 1):
            Q: dict = {}
            for j in range(n):
                if N[j]:
                    Q = poly_add(Q, poly_mul(poly_deriv(phi, j), N[j], max_degree=d))
            monos = monomials_of_degree(n, d)
            if order == "reverse":
                monos = monos[::-1]
            for m in monos:
                den = complex(np.dot(m, lam) - lam[i])
                gap = abs(den)
                min_den = min(min_den, gap)
                if gap < tol:
                    raise ResonantDenominator(
                        f"resonant denominator {gap:.3g} for eigenvalue {i} at multi-index {m}",
                        target_index=i, witness=list(m), gap=gap,
                    )
                if gap < defaults.NEAR_RESONANCE_FACTOR * tol:
                    warnings.warn(
                        f"near-resonant denominator {gap:.3g} at {m} (eigenvalue {i})",
                        NearResonanceWarning, stacklevel=2,
                    )
                q = Q.get(m, 0.0)
                if q != 0:
                    phi[m] = -q / den
        phis.append(canonical(phi))
    phi_eigen = PolyMap(n, tuple(phis))

    # back to the original coordinates: phi_i(x) = phi_eigen_i(W x)
    phi_x = PolyMap(n, tuple(
        canonical(linear_substitute(p, s.left, max_degree=k), PRUNE_TOL) for p in phis
    ))
    psi_comps, imag = [], 0.0
    for r in range(n):
        comp: dict = {}
        for i in range(n):
            if s.right[r, i] != 0:
                comp = poly_add(comp, phi_x.components[i], s.right[r, i])
        imag = max(imag, max((abs(c.imag) for c in comp.values()), default=0.0))
        psi_comps.append(canonical({m: float(c.real) for m, c in comp.items()}, PRUNE_TOL))
    psi_poly = PolyMap(n, tuple(psi_comps))
    return ConjugacyMap(k, s, np.asarray(A, dtype=float), phi_eigen, phi_x, psi_poly,
                        default_pullback(s) if s.is_hurwitz else 0.0, cfg, min_den, imag)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _pulled_back(psi: ConjugacyMap, f: PolyMap, X: np.ndarray, T: float) -> np.ndarray:
    """``exp(-Lambda T) phi_eigen(W S_T x)`` for rows of ``X`` (complex)."""
    Y = integrate(f, X, [T], psi.cfg)[0] if T > 0 else X
    Z = Y @ psi.spectrum.left.T
    return evaluate(psi.phi_eigen, Z) * np.exp(-psi.spectrum.eigenvalues * T)


def eigenfunctions(psi: ConjugacyMap, f: PolyMap, x, T: float | None = None) -> np.ndarray:
    """Values of ``phi_1..phi_n`` (complex) at ``x`` with pullback horizon ``T``."""
    T = psi.pullback_T if T is None else T
    X = np.atleast_2d(np.asarray(x, dtype=float))
    out = _pulled_back(psi, f, X, T) if T > 0 else evaluate(psi.phi, X)
    return out[0] if np.ndim(x) == 1 else out


def evaluate_conjugacy(psi: ConjugacyMap, f: PolyMap, x, T: float | None = None) -> np.ndarray:
    """``psi(x)``; with ``T > 0`` the polynomial part is evaluated at
    ``S_T(x)`` and mapped back by ``exp(-A T)``."""
    T = psi.pullback_T if T is None else T
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if T == 0:
        out = evaluate(psi.psi_poly, X)
    else:
        out = np.real(_pulled_back(psi, f, X, T) @ psi.spectrum.right.T)
    return out[0] if np.ndim(x) == 1 else out


def psi_jacobian(psi: ConjugacyMap, x) -> np.ndarray:
    """Jacobian of the polynomial part of ``psi``."""
    return jacobian_at(psi.psi_poly, x)


def homological_residual(f: PolyMap, psi: ConjugacyMap, max_degree: int | None = None) -> dict:
    """Largest coefficient magnitude, per degree, of ``D psi . f - A psi``."""
    k = psi.k if max_degree is None else max_degree
    out = {d: 0.0 for d in range(1, k + 1)}
    for r in range(f.n):
        R = lie_derivative(f, psi.psi_poly.components[r], max_degree=k)
        for j in range(f.n):
            if psi.A[r, j] != 0:
                R = poly_add(R, psi.psi_poly.components[j], -psi.A[r, j])
        for m, c in R.items():
            d = sum(m)
            if 1 <= d <= k:
                out[d] = max(out[d], abs(c))
    return out


def verify_conjugacy(f: PolyMap, psi: ConjugacyMap, samples, horizon: float = 5.0,
                     cfg: IntegratorConfig | None = None, n_times: int = 20,
                     T: float | None = None) -> LinearizationDiagnostics:
    """Sampled check of ``psi(S_t x) = exp(A t) psi(x)`` on ``[0, horizon]``."""
    cfg = psi.cfg if cfg is None else cfg
    T = psi.pullback_T if T is None else T
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    ts = np.linspace(0.0, horizon, n_times + 1)
    all_t = np.unique(np.concatenate([ts, ts + T]))
    states = integrate(f, X, all_t, cfg)
    lookup = {t: states[j] for j, t in enumerate(all_t)}
    V, lam = psi.spectrum.right, psi.spectrum.eigenvalues
    scale = np.exp(-lam * T)

    def psi_from_flowed(Y):
        if T == 0:
            return evaluate(psi.psi_poly, Y)
        return np.real((evaluate(psi.phi_eigen, Y @ psi.spectrum.left.T) * scale) @ V.T)

    psi0 = psi_from_flowed(lookup[T])
    by_time = []
    worst = 0.0
    for t in ts:
        lhs = psi_from_flowed(lookup[t + T])
        rhs = psi0 @ scipy.linalg.expm(psi.A * t).T
        r = float(np.max(np.linalg.norm(lhs - rhs, axis=1)))
        by_time.append((float(t), r))
        worst = max(worst, r)

    # instantaneous residual, pulled back: exp(-AT)[D psi(y) f(y) - A psi(y)] at y = S_T x
    Y = lookup[T]
    J = jacobian_at(psi.phi, Y)
    FY = evaluate(f, Y)
    inst = np.einsum("nij,nj->ni", J, FY) - evaluate(psi.phi, Y) * lam
    inst = np.real((inst * scale) @ V.T)
    return LinearizationDiagnostics(
        conjugacy_residual=worst,
        instantaneous_residual=float(np.max(np.linalg.norm(inst, axis=1))),
        homological_residual=homological_residual(f, psi),
        pullback_T=float(T),
        samples=X.shape[0],
        horizon=float(horizon),
        residual_by_time=by_time,
    )


# ---------------------------------------------------------------------------
# parameterised families
# ---------------------------------------------------------------------------

def linearize_parameterized(sys: ControlAffineSystem, u, k: int = defaults.K,
                            tol: float = defaults.RESONANCE_TOL, reference=None,
                            cfg: IntegratorConfig = PULLBACK_CONFIG,
                            check_spread: bool = True) -> ConjugacyMap:
    """``psi^u`` for the frozen parameter ``u``.

    ``reference`` (eigenvalues at a reference parameter) fixes the labelling of
    the eigen-coordinates so that ``phi_i^u`` varies continuously along sweeps.
    """
    f = materialize(sys, u)
    A = linear_part(f)
    s = eigen_decompose(A)
    if not s.is_hurwitz:
        raise NotGES(f"Jacobian at u={list(np.atleast_1d(u))} is not Hurwitz",
                     eigenvalues=[[z.real, z.imag] for z in s.eigenvalues])
    if reference is not None:
        s = s.permuted(match_eigenvalues(reference, s.eigenvalues))
    psi = solve_homological(f, k, tol, spectrum=s, cfg=cfg)
    if check_spread:
        bad = [i for i in range(s.n) if not check_spectral_spread(s.eigenvalues, i, k, tol)]
        if bad:
            raise ConditionFailed(
                f"{k}-spectral-spread fails for eigen-indices {bad}",
                condition="spectral_spread", indices=bad,
            )
    return psi


@dataclass
class SweepRow:
    delta: float
    gap: float
    derivative_gap: float
    ratio: float | None

    def to_dict(self) -> dict:
        return {"delta": self.delta, "gap": self.gap,
                "derivative_gap": self.derivative_gap, "ratio": self.ratio}


def continuity_sweep(sys: ControlAffineSystem, u0, deltas, k: int = defaults.K, grid=None,
                     tol: float = defaults.RESONANCE_TOL, direction=None) -> list[SweepRow]:
    """Sampled sup-norm gaps ``max_x |psi^{u0+delta}(x) - psi^{u0}(x)|`` and
    the same for ``D psi``; ``ratio`` is ``gap(delta_j)/gap(delta_{j-1})``."""
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    direction = np.ones_like(u0) if direction is None else np.asarray(direction, dtype=float)
    if grid is None:
        from .flow import sample_box
        grid = sample_box(sys.domain, 64)
    X = np.atleast_2d(grid)
    base = linearize_parameterized(sys, u0, k, tol)
    ref = base.spectrum.eigenvalues
    v0, J0 = evaluate(base.psi_poly, X), jacobian_at(base.psi_poly, X)
    rows: list[SweepRow] = []
    for delta in deltas:
        if delta == 0:
            g = gd = 0.0
        else:
            psi = linearize_parameterized(sys, u0 + delta * direction, k, tol, reference=ref)
            g = float(np.max(np.abs(evaluate(psi.psi_poly, X) - v0)))
            gd = float(np.max(np.abs(jacobian_at(psi.psi_poly, X) - J0)))
        ratio = None
        if rows and rows[-1].gap > 0:
            ratio = g / rows[-1].gap
        rows.append(SweepRow(float(delta), g, gd, ratio))
    return rows
