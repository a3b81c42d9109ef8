"""Generator EDMD with a monomial dictionary.

Regresses the action of the Koopman generator ``L_F g = Dg . F`` on a
dictionary of monomials from sampled states. The known field and analytic
dictionary derivatives are used, so on a dictionary that spans an invariant
subspace the regression is exact. This is an independent route to the
eigenfunctions produced by the homological solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import defaults
from .errors import IllConditioned, NoMatch
from .polyfield import MultiIndex, PolyMap, evaluate, graded_lex_key, monomial_values, monomials, unit
from .spectral import Spectrum


@dataclass(frozen=True)
class Dictionary:
    monomials: tuple

    def __post_init__(self):
        mons = tuple(tuple(int(e) for e in m) for m in self.monomials)
        if not mons:
            raise ValueError("empty dictionary")
        n = len(mons[0])
        for i in range(n):
            if unit(n, i) not in mons:
                raise ValueError(f"dictionary must contain the coordinate x{i + 1}")
        object.__setattr__(self, "monomials", tuple(sorted(set(mons), key=graded_lex_key)))

    @classmethod
    def up_to(cls, n: int, degree: int) -> "Dictionary":
        return cls(monomials(n, degree, 1))

    @property
    def n(self) -> int:
        return len(self.monomials[0])

    @property
    def size(self) -> int:
        return len(self.monomials)

    def index(self, m) -> int:
        return self.monomials.index(tuple(m))

    def values(self, X: np.ndarray) -> np.ndarray:
        return monomial_values(np.atleast_2d(X), np.array(self.monomials, dtype=np.int64))

    def lie_derivative_values(self, f: PolyMap, X: np.ndarray) -> np.ndarray:
        """``(D psi_k . f)(x)`` for every dictionary element, shape (N, size)."""
        X = np.atleast_2d(X)
        E = np.array(self.monomials, dtype=np.int64)
        F = evaluate(f, X)
        out = np.zeros((X.shape[0], self.size))
        for j in range(self.n):
            Ej = E.copy()
            has = Ej[:, j] > 0
            Ej[has, j] -= 1
            d = monomial_values(X, Ej) * E[:, j]
            out += d * F[:, [j]]
        return out


@dataclass(frozen=True, eq=False)
class GeneratorMatrix:
    """``L[k, j]``: coefficient of dictionary element ``j`` in ``L_F psi_k``."""

    L: np.ndarray
    dictionary: Dictionary
    conditioning: float
    samples: int
    residual: float

    def to_dict(self) -> dict:
        return {
            "L": self.L.tolist(),
            "dictionary": [list(m) for m in self.dictionary.monomials],
            "conditioning": self.conditioning,
            "samples": self.samples,
            "residual": self.residual,
        }


def fit_generator(f: PolyMap, dictionary: Dictionary, sample_points,
                  max_cond: float = defaults.GEDMD_MAX_COND) -> GeneratorMatrix:
    """Least-squares generator matrix (QR-based) on sampled states.

    ``residual`` is the largest regression misfit; it is non-zero when the
    dictionary does not span an invariant subspace.
    """
    X = np.atleast_2d(np.asarray(sample_points, dtype=float))
    N = dictionary.size
    if X.shape[0] < 2 * N:
        raise ValueError(f"need at least {2 * N} samples for a dictionary of size {N}")
    Psi = dictionary.values(X)
    dPsi = dictionary.lie_derivative_values(f, X)
    cond = float(np.linalg.cond(Psi.T @ Psi))
    if not np.isfinite(cond) or cond > max_cond:
        raise IllConditioned(f"Gram matrix condition {cond:.3g} exceeds {max_cond:.3g}",
                             condition=cond)
    Q, R = np.linalg.qr(Psi)
    Lt = np.linalg.solve(R, Q.T @ dPsi)
    resid = float(np.max(np.abs(Psi @ Lt - dPsi)))
    return GeneratorMatrix(Lt.T, dictionary, cond, X.shape[0], resid)


@dataclass
class EigenMatch:
    jacobian_eigenvalue: complex
    generator_eigenvalue: complex
    coefficients: dict  # MultiIndex -> complex coefficient of phi in the dictionary

    def coefficient(self, m) -> complex:
        return self.coefficients.get(tuple(m), 0.0)

    def to_dict(self) -> dict:
        return {
            "jacobian_eigenvalue": [self.jacobian_eigenvalue.real, self.jacobian_eigenvalue.imag],
            "generator_eigenvalue": [self.generator_eigenvalue.real, self.generator_eigenvalue.imag],
            "coefficients": [[list(m), c.real, c.imag] for m, c in self.coefficients.items()],
        }


def _spectral_gap(lam: np.ndarray) -> float:
    d = np.abs(lam[:, None] - lam[None, :])
    d = d[d > 1e-8]
    return float(d.min()) if d.size else 1.0


def eigenfunctions_from_generator(G: GeneratorMatrix, spectrum_ref: Spectrum,
                                  cluster_tol: float = 1e-6) -> list[EigenMatch]:
    """Eigenfunctions of the regressed generator matched to the Jacobian
    spectrum, normalised so their degree-1 parts are the left eigenvectors.

    A repeated eigenvalue of ``L`` is handled through its whole eigenspace:
    the normalisation selects the combination with the prescribed linear part.
    """
    K = G.L.T  # L_F (Psi c) = Psi (K c)
    mu, C = np.linalg.eig(K)
    lam = spectrum_ref.eigenvalues
    gap = _spectral_gap(np.concatenate([lam, mu]))
    cost = np.abs(lam[:, None] - mu[None, :])
    rows, cols = linear_sum_assignment(cost)
    dic = G.dictionary
    lin_rows = [dic.index(unit(dic.n, j)) for j in range(dic.n)]
    out = []
    for i, c in zip(rows, cols):
        if cost[i, c] > 0.1 * gap:
            raise NoMatch(f"no generator eigenvalue near {lam[i]:.6g} (nearest {mu[c]:.6g})",
                          eigenvalue=[lam[i].real, lam[i].imag], distance=float(cost[i, c]))
        cluster = np.flatnonzero(np.abs(mu - mu[c]) <= cluster_tol * max(1.0, abs(mu[c])))
        basis = C[:, cluster]
        w = spectrum_ref.left[i]
        # combination whose linear coefficients equal w_i
        a, *_ = np.linalg.lstsq(basis[lin_rows, :], w, rcond=None)
        coeffs = basis @ a
        out.append(EigenMatch(
            complex(lam[i]), complex(mu[c]),
            {m: complex(coeffs[r]) for r, m in enumerate(dic.monomials) if abs(coeffs[r]) > 1e-14},
        ))
    out.sort(key=lambda e: list(lam).index(e.jacobian_eigenvalue))
    return out
