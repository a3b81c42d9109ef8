"""Global bilinear models ``zdot = A z + sum_i u_i B_i z`` with ``z = psi(x)``.

``psi`` is the linearizing map of the drift alone, so it does not depend on
the input. When the Lie algebra generated by the fields is isomorphic to the
one generated by their Jacobians at the origin, ``D psi . G_i = B_i psi``
with ``B_i = DG_i(0)``; the model checks this identity on samples by fitting
the matrices ``C_i`` in ``D psi . G_i ~ C_i psi`` and comparing with ``B_i``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg

from . import defaults
from .conditions import check_conditions
from .errors import CertificateNotIsomorphic, ConditionFailed, ResidualTooLarge
from .flow import DEFAULT_CONFIG, IntegratorConfig, integrate, sample_box
from .liealg import IsomorphismCertificate, check_isomorphism
from .linearize import ConjugacyMap, evaluate_conjugacy, solve_homological
from .polyfield import ControlAffineSystem, evaluate, jacobian_at, linear_part, materialize
from .spectral import eigen_decompose, match_eigenvalues


@dataclass(frozen=True, eq=False)
class BilinearModel:
    A: np.ndarray
    B: tuple
    psi: ConjugacyMap
    certificate: IsomorphismCertificate
    residual: float
    fitted: tuple = ()

    def generator(self, u) -> np.ndarray:
        """``A + sum_i u_i B_i``."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return self.A + sum((ui * Bi for ui, Bi in zip(u, self.B)), np.zeros_like(self.A))

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "B": [Bi.tolist() for Bi in self.B],
            "fitted_C": [Ci.tolist() for Ci in self.fitted],
            "psi": self.psi.to_dict(),
            "certificate": self.certificate.to_dict(),
            "residual": self.residual,
        }


def _identity_residual(psi: ConjugacyMap, G, B: np.ndarray, X: np.ndarray):
    """Fit ``C`` in ``D psi(x) G(x) ~ C psi(x)`` and measure against ``B``."""
    P = evaluate(psi.psi_poly, X)
    J = jacobian_at(psi.psi_poly, X)
    Y = np.einsum("nij,nj->ni", J, evaluate(G, X))
    Ct, *_ = np.linalg.lstsq(P, Y, rcond=None)
    resid = float(np.max(np.linalg.norm(Y - P @ B.T, axis=1)))
    return Ct.T, resid


def bilinearize(sys: ControlAffineSystem, k: int = defaults.K, depth: int = defaults.DEPTH,
                tol: float = defaults.RESONANCE_TOL, samples=None,
                degree_cap: int = defaults.DEGREE_CAP,
                residual_tol: float = defaults.BILINEAR_RESIDUAL,
                sample_scale: float = 1.0, ignore_certificate: bool = False,
                seed: int = defaults.SEED) -> BilinearModel:
    """Build and verify the bilinear model of ``sys``.

    ``samples`` is a point count or an array of points (default ``max(10 n,
    64)`` Sobol points in the domain box scaled by ``sample_scale``).
    ``ignore_certificate`` skips the isomorphism and residual gates; the
    returned model then carries the failing certificate and residual.

    Raises
    ------
    ConditionFailed
        Drift not GES, or a nonresonance / spectral-spread condition fails.
    CertificateNotIsomorphic
        The Lie-algebraic hypothesis is not verified at ``depth``.
    ResidualTooLarge
        The fitted ``C_i`` differ from ``B_i`` by more than ``residual_tol``.
    """
    if k < 2:
        raise ValueError("bilinearization needs k >= 2")
    F = sys.drift
    A = linear_part(F)
    s = eigen_decompose(A)
    if not s.is_hurwitz:
        raise ConditionFailed("drift equilibrium is not exponentially stable", condition="ges")
    # degree-1 coincidences (repeated eigenvalues) never enter a denominator
    report = check_conditions(s.eigenvalues, k, tol, min_order=2)
    if not report.all_pass:
        v = report.violations[0]
        raise ConditionFailed(
            f"{v.kind} condition fails for eigen-index {v.target_index}",
            condition=v.kind, target_index=v.target_index, witness=list(v.witness),
            gap=v.value_gap,
        )
    cert = check_isomorphism(sys, depth, degree_cap)
    if not cert.isomorphic and not ignore_certificate:
        raise CertificateNotIsomorphic(
            f"Lie-algebraic hypothesis not verified at depth {depth}: {cert.verdict}",
            **cert.to_dict(),
        )
    psi = solve_homological(F, k, tol, spectrum=s)
    B = tuple(linear_part(G) for G in sys.controls)

    if samples is None or np.isscalar(samples):
        count = max(10 * sys.n, 64 if samples is None else int(samples))
        X = sample_box(sys.domain, count, seed, shrink=sample_scale)
    else:
        X = np.atleast_2d(np.asarray(samples, dtype=float))
    fitted, residual = [], 0.0
    for G, Bi in zip(sys.controls, B):
        Ci, r = _identity_residual(psi, G, Bi, X)
        fitted.append(Ci)
        residual = max(residual, r, float(np.max(np.abs(Ci - Bi))))
    if residual > residual_tol and not ignore_certificate:
        raise ResidualTooLarge(
            f"fitted input matrices deviate from DG_i(0) by {residual:.3g}",
            residual=residual, threshold=residual_tol,
        )
    return BilinearModel(np.asarray(A, dtype=float), B, psi, cert, residual, tuple(fitted))


def feedback_transform(*_args, **_kwargs):
    raise NotImplementedError(
        "input transformations u = alpha(x) + beta(x) v are not supported; "
        "bilinearize the transformed system directly"
    )


# ---------------------------------------------------------------------------
# paired simulation
# ---------------------------------------------------------------------------

def _pieces(schedule, horizon: float):
    """Normalise ``[(t_start, u), ...]`` into ``[(t0, t1, u), ...]``."""
    sched = sorted(((float(t), np.atleast_1d(np.asarray(u, dtype=float))) for t, u in schedule),
                   key=lambda p: p[0])
    if not sched or sched[0][0] > 0:
        raise ValueError("schedule must start at t = 0")
    out = []
    for j, (t0, u) in enumerate(sched):
        t1 = sched[j + 1][0] if j + 1 < len(sched) else horizon
        t1 = min(t1, horizon)
        if t1 > t0:
            out.append((t0, t1, u))
    return out


@dataclass
class PairedSimulation:
    times: np.ndarray
    z: np.ndarray
    x: np.ndarray
    psi_x: np.ndarray
    error: np.ndarray = field(init=False)

    def __post_init__(self):
        self.error = np.linalg.norm(self.z - self.psi_x, axis=-1)

    @property
    def max_error(self) -> float:
        return float(np.max(self.error))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "err"])
            for t, e in zip(self.times, self.error):
                w.writerow([repr(float(t)), repr(float(e))])


def simulate_bilinear(model: BilinearModel, sys: ControlAffineSystem, x0, schedule,
                      horizon: float, cfg: IntegratorConfig = DEFAULT_CONFIG,
                      n_grid: int = 301, pullback: float | None = 0.0) -> PairedSimulation:
    """Run the bilinear model from ``psi(x0)`` next to the true system from
    ``x0`` under a piecewise-constant input and record ``|z - psi(x)|``.

    The bilinear state is propagated with the exact matrix exponential on
    each piece. ``pullback=None`` evaluates ``psi`` with the map's own
    pullback horizon; the default uses its polynomial part.
    """
    x0 = np.asarray(x0, dtype=float)
    grid = np.linspace(0.0, horizon, n_grid)
    T = model.psi.pullback_T if pullback is None else pullback
    xs = np.empty((n_grid, sys.n))
    zs = np.empty((n_grid, sys.n))
    x, z = x0.copy(), evaluate_conjugacy(model.psi, sys.drift, x0, T=T)
    for t0, t1, u in _pieces(schedule, horizon):
        idx = np.flatnonzero((grid >= t0) & ((grid < t1) | ((t1 == horizon) & (grid <= t1))))
        f = materialize(sys, u)
        M = model.generator(u)
        local = np.concatenate([grid[idx] - t0, [t1 - t0]])
        states = integrate(f, x, local, cfg)
        xs[idx] = states[:-1]
        for r, tau in zip(idx, local[:-1]):
            zs[r] = scipy.linalg.expm(M * tau) @ z
        x, z = states[-1], scipy.linalg.expm(M * (t1 - t0)) @ z
    psi_x = evaluate_conjugacy(model.psi, sys.drift, xs, T=T)
    return PairedSimulation(grid, zs, xs, psi_x)


def parameter_independence(model: BilinearModel, sys: ControlAffineSystem, u, X) -> np.ndarray:
    """``max_x |L_{F^u} phi_j - lam_j^u phi_j|`` for each drift eigenfunction.

    Under the isomorphism hypothesis the drift eigenfunctions remain
    eigenfunctions of every frozen-input field.
    """
    f = materialize(sys, u)
    lam_u = np.linalg.eigvals(linear_part(f))
    lam_u = lam_u[match_eigenvalues(model.psi.spectrum.eigenvalues, lam_u)]
    X = np.atleast_2d(X)
    phi = evaluate(model.psi.phi, X)
    J = jacobian_at(model.psi.phi, X)
    Lphi = np.einsum("nij,nj->ni", J, evaluate(f, X))
    return np.max(np.abs(Lphi - phi * lam_u), axis=0)
