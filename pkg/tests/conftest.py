import numpy as np
import pytest
from scipy.stats import ortho_group

from koopman_bilin.polyfield import Box, ControlAffineSystem, PolyMap, monomials


def random_stable_field(rng, n, scale=0.4, ratio=(1.05, 1.9), density=0.5, max_degree=3):
    """Random polynomial field with a diagonalizable Hurwitz linear part.

    Every eigenvalue is within a factor ``ratio[1] < 2`` of the slowest one,
    so no relation ``lam_i = m . lam`` with ``|m| >= 2`` can hold.
    """
    slow = rng.uniform(0.8, 1.2)
    lam = -slow * np.concatenate([[1.0], rng.uniform(*ratio, n - 1)])
    V = rng.normal(size=(n, n)) + 2 * np.eye(n)
    A = V @ np.diag(lam) @ np.linalg.inv(V)
    terms = [(i, m, A[i, m.index(1)]) for i in range(n) for m in monomials(n, 1, 1)]
    for i in range(n):
        for m in monomials(n, max_degree, 2):
            if rng.random() < density:
                terms.append((i, m, scale * rng.uniform(-1, 1)))
    return PolyMap.from_terms(n, terms)


def random_polymap(rng, n, max_degree=3, density=0.5, min_degree=1):
    terms = [(i, m, rng.uniform(-1, 1)) for i in range(n)
             for m in monomials(n, max_degree, min_degree) if rng.random() < density]
    return PolyMap.from_terms(n, terms)


def random_family(rng, n, d=1):
    """Control-affine family whose drift is stable and well separated."""
    F = random_stable_field(rng, n, scale=0.3, ratio=(1.2, 1.8))
    Gs = tuple(random_polymap(rng, n, 2, 0.5).scaled(0.05) for _ in range(d))
    return ControlAffineSystem(F, Gs, Box.symmetric(n, 0.5))


def random_hurwitz(rng, n, min_sep=0.3):
    """Real Hurwitz matrix with eigenvalues pairwise at least ``min_sep`` apart."""
    while True:
        n_pairs = int(rng.integers(0, n // 2 + 1))
        lam = []
        for _ in range(n_pairs):
            z = complex(-rng.uniform(0.2, 3), rng.uniform(0.3, 3))
            lam += [z, z.conjugate()]
        lam += list(-rng.uniform(0.2, 3, n - len(lam)))
        lam = np.array(lam, dtype=complex)
        d = np.abs(lam[:, None] - lam[None, :]) + np.eye(n) * 10
        if d.min() >= min_sep:
            break
    D = np.zeros((n, n))
    j = 0
    while j < n:
        z = lam[j]
        if z.imag != 0:
            D[j:j + 2, j:j + 2] = [[z.real, z.imag], [-z.imag, z.real]]
            j += 2
        else:
            D[j, j] = z.real
            j += 1
    V = rng.normal(size=(n, n)) + 2 * np.eye(n)
    return V @ D @ np.linalg.inv(V), lam


def random_hurwitz_schur(rng, n, min_sep=0.3):
    """Orthogonal similarity ``Q (T + U) Q^T`` of a real quasi-triangular
    Hurwitz matrix: ``T`` holds the separated eigenvalues, ``U`` a bounded
    strictly upper non-normal part."""
    _, lam = random_hurwitz(rng, n, min_sep)
    T = np.zeros((n, n))
    j = 0
    while j < n:
        z = lam[j]
        if z.imag != 0:
            T[j:j + 2, j:j + 2] = [[z.real, z.imag], [-z.imag, z.real]]
            j += 2
        else:
            T[j, j] = z.real
            j += 1
    U = np.triu(rng.uniform(-1, 1, (n, n)), 1)
    U[T != 0] = 0
    Q = ortho_group.rvs(n, random_state=rng) if n > 1 else np.eye(1)
    return Q @ (T + U) @ Q.T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
