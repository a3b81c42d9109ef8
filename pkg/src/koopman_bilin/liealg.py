"""Finitely generated Lie algebras of matrices and polynomial vector fields.

Both kinds of payload use the same bracket convention. For fields it is
``[f, g] = Dg.f - Df.g``; for matrices ``[X, Y] = Y X - X Y``. With this
choice ``D[f, g](0) = [Df(0), Dg(0)]`` holds word by word, so relations
between bracket words can be compared directly across the two sides.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from . import defaults
from .errors import DimensionExplosion, DimensionMismatch, NotInvariant
from .polyfield import ControlAffineSystem, PolyMap, lie_bracket, linear_part

log = logging.getLogger(__name__)

Payload = Union[np.ndarray, PolyMap]
Word = Union[int, tuple]  # generator index, or (left word, right word)

VF_BASIS_CAP = 200
RELATION_TOL = 1e-6


def matrix_bracket(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return Y @ X - X @ Y


def bracket(a: Payload, b: Payload) -> Payload:
    if isinstance(a, PolyMap):
        return lie_bracket(a, b)
    return matrix_bracket(a, b)


def word_str(w: Word) -> str:
    if isinstance(w, int):
        return f"g{w}"
    return f"[{word_str(w[0])},{word_str(w[1])}]"


def parse_word(s: str) -> Word:
    s = s.replace(" ", "")

    def parse(i: int):
        if s[i] == "g":
            j = i + 1
            while j < len(s) and s[j].isdigit():
                j += 1
            return int(s[i + 1:j]), j
        if s[i] != "[":
            raise ValueError(f"bad bracket word at position {i}: {s!r}")
        left, i = parse(i + 1)
        if s[i] != ",":
            raise ValueError(f"expected ',' at position {i}: {s!r}")
        right, i = parse(i + 1)
        if s[i] != "]":
            raise ValueError(f"expected ']' at position {i}: {s!r}")
        return (left, right), i + 1

    w, end = parse(0)
    if end != len(s):
        raise ValueError(f"trailing characters in {s!r}")
    return w


def word_length(w: Word) -> int:
    return 1 if isinstance(w, int) else word_length(w[0]) + word_length(w[1])


def evaluate_word(w: Word, generators: Sequence[Payload]) -> Payload:
    """Recompute a word's payload from the generators."""
    if isinstance(w, int):
        return generators[w]
    return bracket(evaluate_word(w[0], generators), evaluate_word(w[1], generators))


@dataclass(frozen=True, eq=False)
class LieElement:
    payload: Payload
    word: Word

    @property
    def label(self) -> str:
        return word_str(self.word)


def _vectorize(p: Payload, degree_cap: int) -> tuple[np.ndarray, bool]:
    """Coordinates of a payload and whether anything was cut off."""
    if isinstance(p, PolyMap):
        return p.coefficient_vector(degree_cap).astype(float), p.max_degree > degree_cap
    return np.asarray(p, dtype=float).ravel(), False


class _Span:
    """Incrementally grown span with an orthonormal basis for rank decisions
    and the raw vectors for coordinates."""

    def __init__(self, rank_tol: float):
        self.rank_tol = rank_tol
        self.Q: list[np.ndarray] = []
        self.raw: list[np.ndarray] = []
        self.scale = 0.0

    def residual(self, v: np.ndarray) -> tuple[np.ndarray, float]:
        r = v.copy()
        for _ in range(2):  # re-orthogonalise once
            for q in self.Q:
                r -= (q @ r) * q
        return r, float(np.linalg.norm(r))

    def threshold(self, v: np.ndarray) -> float:
        return self.rank_tol * max(self.scale, float(np.linalg.norm(v)), 1e-300)

    def try_add(self, v: np.ndarray) -> tuple[bool, float]:
        r, rn = self.residual(v)
        if rn > self.threshold(v):
            self.Q.append(r / rn)
            self.raw.append(v)
            self.scale = max(self.scale, float(np.linalg.norm(v)))
            return True, rn
        return False, rn

    def coordinates(self, v: np.ndarray) -> np.ndarray:
        if not self.raw:
            return np.zeros(0)
        M = np.column_stack(self.raw)
        c, *_ = np.linalg.lstsq(M, v, rcond=None)
        return c


@dataclass
class LieBasis:
    elements: list
    depth: int
    degree_cap: int
    rank_tol: float
    closed: bool
    degree_truncated: bool = False
    coordinates: dict = field(default_factory=dict)  # word label -> coefficients
    rank_log: list = field(default_factory=list)     # (word label, residual, kept)

    @property
    def dim(self) -> int:
        return len(self.elements)

    @property
    def is_matrix(self) -> bool:
        return bool(self.elements) and not isinstance(self.elements[0].payload, PolyMap)

    def vectors(self) -> np.ndarray:
        return np.column_stack([_vectorize(e.payload, self.degree_cap)[0] for e in self.elements])

    def coords_of(self, p: Payload) -> tuple[np.ndarray, float]:
        M = self.vectors()
        v, _ = _vectorize(p, self.degree_cap)
        c, *_ = np.linalg.lstsq(M, v, rcond=None)
        return c, float(np.linalg.norm(M @ c - v))

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "depth": self.depth,
            "degree_cap": self.degree_cap,
            "rank_tol": self.rank_tol,
            "closed": self.closed,
            "degree_truncated": self.degree_truncated,
            "basis_words": [e.label for e in self.elements],
        }


def _enumerate(generators: Sequence[Payload], depth: int, degree_cap: int, rank_tol: float,
               cap: int, on_word=None):
    """Breadth-first bracket closure.

    Level ``L`` holds the left-normed words ``[w, g_i]`` for every
    independent word ``w`` of level ``L-1`` and every generator ``g_i``; these
    span all brackets of length ``L``. ``on_word(word, payload, span)`` is consulted before each
    rank decision and may return ``False`` to stop the enumeration.
    """
    span = _Span(rank_tol)
    elements: list[LieElement] = []
    coords: dict = {}
    rank_log: list = []
    truncated = False
    stopped = False

    def consider(word, payload) -> bool:
        nonlocal truncated
        v, cut = _vectorize(payload, degree_cap)
        truncated |= cut
        if on_word is not None and on_word(word, payload, v, span) is False:
            return False
        kept, rn = span.try_add(v)
        rank_log.append((word_str(word), rn, kept))
        if kept:
            elements.append(LieElement(payload, word))
            if len(elements) > cap:
                raise DimensionExplosion(
                    f"basis exceeded {cap} elements", cap=cap, dim=len(elements))
        coords[word_str(word)] = span.coordinates(v)
        return kept

    def halted() -> bool:
        return on_word is not None and getattr(on_word, "stopped", False)

    level: list[LieElement] = []
    for i, g in enumerate(generators):
        kept = consider(i, g)
        if halted():
            stopped = True
            break
        if kept:
            level.append(elements[-1])
    grew_last = bool(level)
    L = 1
    while not stopped and level and L < depth:
        L += 1
        nxt: list[LieElement] = []
        for w in level:
            for i, g in enumerate(generators):
                kept = consider((w.word, i), bracket(w.payload, g))
                if halted():
                    stopped = True
                    break
                if kept:
                    nxt.append(elements[-1])
            if stopped:
                break
        grew_last = bool(nxt)
        level = nxt

    closed = False
    if not stopped:
        closed = not grew_last or _closure_probe(elements, span, degree_cap)
    return elements, span, coords, rank_log, truncated, closed, stopped


def _closure_probe(elements, span: _Span, degree_cap: int) -> bool:
    """True when every bracket of basis pairs stays in the span."""
    for a in range(len(elements)):
        for b in range(a + 1, len(elements)):
            p = bracket(elements[a].payload, elements[b].payload)
            v, cut = _vectorize(p, degree_cap)
            if cut:
                return False
            _, rn = span.residual(v)
            if rn > span.threshold(v):
                return False
    return True


def generate_algebra(generators: Sequence[Payload], depth: int = defaults.DEPTH,
                     degree_cap: int = defaults.DEGREE_CAP,
                     rank_tol: float = defaults.RANK_TOL, cap: int | None = None) -> LieBasis:
    """Basis (with word provenance) of the Lie algebra generated by matrices
    or polynomial fields, truncated at bracket words of length ``depth``."""
    generators = list(generators)
    if not generators:
        raise ValueError("need at least one generator")
    first = generators[0]
    if isinstance(first, PolyMap):
        if any(not isinstance(g, PolyMap) or g.n != first.n for g in generators):
            raise DimensionMismatch("generators must be fields of one dimension")
        cap = VF_BASIS_CAP if cap is None else cap
    else:
        generators = [np.asarray(g, dtype=float) for g in generators]
        if any(g.shape != generators[0].shape for g in generators):
            raise DimensionMismatch("generators must be matrices of one shape")
        cap = 10 * generators[0].shape[0] ** 2 if cap is None else cap
    elements, _, coords, rank_log, truncated, closed, _ = _enumerate(
        generators, depth, degree_cap, rank_tol, cap)
    for word, rn, kept in rank_log:
        log.debug("rank decision %s residual=%.3g kept=%s", word, rn, kept)
    return LieBasis(elements, depth, degree_cap, rank_tol, closed and not truncated,
                    truncated, coords, rank_log)


# ---------------------------------------------------------------------------
# isomorphism certificate
# ---------------------------------------------------------------------------

@dataclass
class IsomorphismCertificate:
    verdict: str  # isomorphic | dimension-mismatch | relation-mismatch | inconclusive-truncation
    dim_vf: int
    dim_mat: int
    depth: int
    degree_cap: int
    witness: str | None = None
    detail: str = ""

    @property
    def isomorphic(self) -> bool:
        return self.verdict == "isomorphic"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "dim_vf": self.dim_vf,
            "dim_mat": self.dim_mat,
            "depth": self.depth,
            "degree_cap": self.degree_cap,
            "witness": self.witness,
            "detail": self.detail,
        }


class _RelationMatcher:
    """Compares the rank decision and coordinates of every word with the
    other side; stops at the first disagreement."""

    def __init__(self, other_gens, degree_cap, rank_tol):
        self.other_gens = other_gens
        self.other = _Span(rank_tol)
        self.degree_cap = degree_cap
        self.stopped = False
        self.witness = None
        self.detail = ""
        self.other_payloads: dict = {}
        self.other_basis: list = []

    def __call__(self, word, payload, v, span):
        if isinstance(word, int):
            op = self.other_gens[word]
        else:
            op = bracket(self.other_payloads[word_str(word[0])], self.other_gens[word[1]])
        self.other_payloads[word_str(word)] = op
        ov, _ = _vectorize(op, self.degree_cap)
        _, rn = span.residual(v)
        _, orn = self.other.residual(ov)
        indep = rn > span.threshold(v)
        oindep = orn > self.other.threshold(ov)
        if indep != oindep:
            self._stop(word, f"{word_str(word)} is {'in' if indep else ''}dependent on the driving "
                             f"side but {'in' if oindep else ''}dependent on the other side")
            return False
        if indep:
            self.other.try_add(ov)
            self.other_basis.append(op)
            return True
        c, oc = span.coordinates(v), self.other.coordinates(ov)
        if not np.allclose(c, oc, atol=RELATION_TOL, rtol=RELATION_TOL):
            self._stop(word, f"{word_str(word)} has coordinates {c.tolist()} vs {oc.tolist()}")
            return False
        return True

    def _stop(self, word, detail):
        self.stopped = True
        self.witness = word_str(word)
        self.detail = detail


def check_isomorphism(sys: ControlAffineSystem, depth: int = defaults.DEPTH,
                      degree_cap: int = defaults.DEGREE_CAP,
                      rank_tol: float = defaults.RANK_TOL, drive: str = "vf") -> IsomorphismCertificate:
    """Test whether ``F -> A, G_i -> B_i`` extends to a Lie algebra
    isomorphism, by comparing the linear relations among identically
    enumerated bracket words on both sides.

    A ``relation-mismatch`` means the sufficient condition for global
    bilinearization is not verified at this depth; it does not show that no
    bilinearization exists.
    """
    vf = [sys.drift, *sys.controls]
    mats = [linear_part(f) for f in vf]
    if drive == "vf":
        driving, other = vf, mats
    elif drive == "mat":
        driving, other = mats, vf
    else:
        raise ValueError("drive must be 'vf' or 'mat'")
    cap = VF_BASIS_CAP
    matcher = _RelationMatcher(other, degree_cap, rank_tol)
    elements, span, _, _, truncated, closed, stopped = _enumerate(
        driving, depth, degree_cap, rank_tol, cap, on_word=matcher)
    dim_drive, dim_other = len(elements), len(matcher.other.raw)
    dims = (dim_drive, dim_other) if drive == "vf" else (dim_other, dim_drive)
    if stopped:
        full = tuple(_dimension(g, depth, degree_cap, rank_tol) for g in (vf, mats))
        return IsomorphismCertificate("relation-mismatch", *full, depth, degree_cap,
                                      matcher.witness, matcher.detail)
    # the other side's closure is probed independently
    other_closed = _closure_probe(
        [LieElement(p, None) for p in matcher.other_basis], matcher.other, degree_cap)
    if truncated or not (closed and other_closed):
        return IsomorphismCertificate(
            "inconclusive-truncation", *dims, depth, degree_cap, None,
            "bracket words still produce new directions at the depth or degree cutoff")
    if dims[0] != dims[1]:
        return IsomorphismCertificate("dimension-mismatch", *dims, depth, degree_cap)
    return IsomorphismCertificate("isomorphic", *dims, depth, degree_cap)


def _dimension(generators, depth, degree_cap, rank_tol) -> int:
    try:
        return generate_algebra(generators, depth, degree_cap, rank_tol).dim
    except DimensionExplosion as exc:
        return int(exc.detail["dim"])


# ---------------------------------------------------------------------------
# adjoint action
# ---------------------------------------------------------------------------

def adjoint_matrix(A: np.ndarray, basis: LieBasis) -> np.ndarray:
    """Matrix of ``X -> [A, X]`` in the coordinates of ``basis``."""
    A = np.asarray(A, dtype=float)
    M = basis.vectors()
    cols = []
    for e in basis.elements:
        v = matrix_bracket(A, e.payload).ravel()
        c, *_ = np.linalg.lstsq(M, v, rcond=None)
        res = float(np.linalg.norm(M @ c - v))
        if res > basis.rank_tol * max(1.0, float(np.linalg.norm(v))):
            raise NotInvariant(
                f"ad_A leaves the span at element {e.label} (residual {res:.3g})",
                word=e.label, residual=res,
            )
        cols.append(c)
    return np.column_stack(cols)


def adjoint_spectrum(A: np.ndarray, basis: LieBasis) -> np.ndarray:
    """Eigenvalues of ``ad_A`` restricted to the algebra."""
    return np.linalg.eigvals(adjoint_matrix(A, basis))


def eigenvalue_differences(A: np.ndarray) -> np.ndarray:
    lam = np.linalg.eigvals(np.asarray(A, dtype=float))
    return (lam[:, None] - lam[None, :]).ravel()
