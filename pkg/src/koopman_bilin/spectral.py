"""Dense eigen-analysis of small Jacobians.

Eigenprojections are available two ways: directly from the eigenvector
decomposition, and by trapezoidal quadrature of the resolvent around a
circle that isolates one eigenvalue. The two routes are independent and
are cross-checked in the test-suite.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ContourTouchesSpectrum, DimensionMismatch, NearSingular, NonDiagonalizable

#: eigenvector matrices with a larger condition number are rejected
DIAGONALIZABLE_COND = 1e8
MAX_DIM = 64


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigen-decomposition ``A = V diag(eigenvalues) W`` with ``W = V^{-1}``.

    ``right[:, i]`` is the right eigenvector for ``eigenvalues[i]`` and
    ``left[i, :]`` the matching left covector, so ``left @ right = I``.
    ``pairs`` maps each index of a non-real eigenvalue to the index of its
    conjugate.
    """

    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    pairs: dict
    condition: float

    @property
    def n(self) -> int:
        return len(self.eigenvalues)

    @property
    def is_hurwitz(self) -> bool:
        return bool(np.all(self.eigenvalues.real < 0))

    @property
    def is_simple(self) -> bool:
        lam = self.eigenvalues
        gaps = np.abs(lam[:, None] - lam[None, :]) + np.eye(self.n) * np.inf
        return bool(np.all(gaps > 1e-8))

    @property
    def slowest_rate(self) -> float:
        """``|max Re lambda|``."""
        return float(abs(self.eigenvalues.real.max()))

    def reconstruct(self) -> np.ndarray:
        return (self.right * self.eigenvalues) @ self.left

    def permuted(self, order) -> "Spectrum":
        order = list(order)
        inv = {old: new for new, old in enumerate(order)}
        return Spectrum(
            self.eigenvalues[order],
            self.right[:, order],
            self.left[order, :],
            {inv[i]: inv[j] for i, j in self.pairs.items()},
            self.condition,
        )

    def to_dict(self) -> dict:
        def interleave(z):
            z = np.asarray(z).ravel()
            return [float(v) for pair in zip(z.real, z.imag) for v in pair]

        return {
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "right_vectors": [interleave(self.right[:, i]) for i in range(self.n)],
            "left_vectors": [interleave(self.left[i, :]) for i in range(self.n)],
            "conjugate_pairs": [[int(i), int(j)] for i, j in sorted(self.pairs.items()) if i < j],
            "condition": float(self.condition),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Spectrum":
        def deinterleave(v):
            v = np.asarray(v, dtype=float)
            return v[0::2] + 1j * v[1::2]

        lam = np.array([complex(re, im) for re, im in data["eigenvalues"]])
        right = np.column_stack([deinterleave(v) for v in data["right_vectors"]])
        left = np.vstack([deinterleave(v) for v in data["left_vectors"]])
        pairs = {}
        for i, j in data.get("conjugate_pairs", []):
            pairs[i], pairs[j] = j, i
        return cls(lam, right, left, pairs, float(data.get("condition", np.nan)))


def _check_square(A) -> np.ndarray:
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {A.shape}")
    return A


def eigen_decompose(A, cond_limit: float = DIAGONALIZABLE_COND) -> Spectrum:
    """Eigenvalues sorted by descending real part, then ascending imaginary
    part, with biorthogonal left/right vectors.

    Raises
    ------
    NonDiagonalizable
        If the eigenvector matrix has condition number above ``cond_limit``.
    """
    A = _check_square(A)
    n = A.shape[0]
    if n > MAX_DIM:
        raise DimensionMismatch(f"dense eigen-analysis limited to n <= {MAX_DIM}")
    lam, V = np.linalg.eig(A)
    lam = np.asarray(lam, dtype=complex)
    V = np.asarray(V, dtype=complex)
    # snap numerically real eigenvalues of a real matrix onto the real axis
    if np.isrealobj(A):
        small = np.abs(lam.imag) <= 1e-14 * max(1.0, float(np.abs(lam).max(initial=0.0)))
        lam[small] = lam[small].real
        V[:, small] = V[:, small].real
    order = sorted(range(n), key=lambda i: (-round(lam[i].real, 12), lam[i].imag))
    lam, V = lam[order], V[:, order]

    pairs: dict[int, int] = {}
    if np.isrealobj(A):
        used = set()
        for i in range(n):
            if lam[i].imag == 0 or i in used:
                continue
            target = lam[i].conjugate()
            cands = [j for j in range(n) if j != i and j not in used and lam[j].imag != 0]
            j = min(cands, key=lambda j: abs(lam[j] - target))
            # enforce exact conjugate symmetry on the pair
            lam[j] = lam[i].conjugate()
            V[:, j] = V[:, i].conjugate()
            pairs[i], pairs[j] = j, i
            used.update((i, j))

    cond = float(np.linalg.cond(V))
    if not np.isfinite(cond) or cond > cond_limit:
        raise NonDiagonalizable(
            f"eigenvector matrix condition number {cond:.3g} exceeds {cond_limit:.3g}",
            condition=cond,
        )
    W = np.linalg.solve(V, np.eye(n, dtype=complex))
    return Spectrum(lam, V, W, pairs, cond)


def eigenprojection_direct(s: Spectrum, i: int) -> np.ndarray:
    """Rank-one projection ``v_i w_i`` onto eigen-direction ``i``."""
    if not 0 <= i < s.n:
        raise IndexError(f"eigen-index {i} out of range")
    return np.outer(s.right[:, i], s.left[i, :])


@dataclass(frozen=True)
class ContourSpec:
    center: complex
    radius: float
    nodes: int = 64

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("contour radius must be positive")
        if self.nodes < 4:
            raise ValueError("need at least 4 quadrature nodes")

    @property
    def margin(self) -> float:
        return self.radius / 4

    def enclosed(self, eigenvalues) -> np.ndarray:
        """Boolean mask of eigenvalues strictly inside the circle.

        Raises :class:`ContourTouchesSpectrum` when an eigenvalue lies within
        ``margin`` of the circle or the circle encloses more than one distinct
        eigenvalue (or none).
        """
        lam = np.asarray(eigenvalues)
        dist = np.abs(lam - self.center)
        touching = np.abs(dist - self.radius) <= self.margin
        if np.any(touching):
            raise ContourTouchesSpectrum(
                "eigenvalue within margin of the contour",
                eigenvalues=[complex(z) for z in lam[touching]],
            )
        inside = dist < self.radius
        vals = lam[inside]
        if vals.size == 0:
            raise ContourTouchesSpectrum("contour encloses no eigenvalue")
        if np.ptp(vals.real) > 1e-8 or np.ptp(vals.imag) > 1e-8:
            raise ContourTouchesSpectrum("contour encloses more than one distinct eigenvalue")
        return inside

    @classmethod
    def around(cls, s: Spectrum, i: int, nodes: int = 64, fraction: float = 1 / 3) -> "ContourSpec":
        """Circle centred on eigenvalue ``i`` with radius ``fraction`` of the
        distance to the nearest distinct eigenvalue."""
        lam = s.eigenvalues
        d = np.abs(lam - lam[i])
        d = d[d > 1e-8]
        r = fraction * float(d.min()) if d.size else 1.0
        return cls(complex(lam[i]), r, nodes)


def eigenprojection_contour(A, c: ContourSpec, spectrum: Spectrum | None = None) -> np.ndarray:
    """Trapezoidal quadrature of ``-(1/2 pi i) \\oint (A - z I)^{-1} dz``."""
    A = _check_square(A)
    n = A.shape[0]
    if spectrum is None:
        lam = np.linalg.eigvals(A)
    else:
        lam = spectrum.eigenvalues
    c.enclosed(lam)
    theta = 2 * np.pi * np.arange(c.nodes) / c.nodes
    e = np.exp(1j * theta)
    z = c.center + c.radius * e
    I = np.eye(n)
    P = np.zeros((n, n), dtype=complex)
    for zj, ej in zip(z, e):
        P += ej * np.linalg.solve(A - zj * I, I)
    # dz = i r e^{i theta} d theta, d theta = 2 pi / N
    return -(c.radius / c.nodes) * P


PIVOT_TOL = 1e-12


def resolvent_apply(A, zeta: complex, b) -> np.ndarray:
    """Solve ``(A - zeta I) x = b`` by LU with partial pivoting."""
    A = _check_square(A)
    b = np.asarray(b)
    n = A.shape[0]
    if b.shape[0] != n:
        raise DimensionMismatch("right-hand side length differs from matrix size")
    M = A - zeta * np.eye(n)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(M)
    pivot = float(np.min(np.abs(np.diag(lu))))
    if pivot < PIVOT_TOL:
        raise NearSingular(
            f"A - zeta I is singular at zeta={zeta} (pivot {pivot:.3g})",
            zeta=complex(zeta), pivot=pivot,
        )
    return scipy.linalg.lu_solve((lu, piv), b)


def match_eigenvalues(reference, current) -> np.ndarray:
    """Permutation ``p`` minimising ``sum |current[p[i]] - reference[i]|``."""
    from scipy.optimize import linear_sum_assignment

    ref = np.asarray(reference)
    cur = np.asarray(current)
    cost = np.abs(ref[:, None] - cur[None, :])
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(len(ref), dtype=int)
    perm[rows] = cols
    return perm
