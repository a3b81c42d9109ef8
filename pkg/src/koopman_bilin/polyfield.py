"""Polynomial vector fields, control-affine families and Lie brackets.

A scalar polynomial is a ``dict`` mapping a multi-index (tuple of
non-negative ints) to its coefficient. A :class:`PolyMap` holds one such
table per output component. Tables are kept sparse-canonical: no stored
coefficient is zero and keys are stored in graded-lex order.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DimensionMismatch

MultiIndex = tuple[int, ...]
Poly = dict[MultiIndex, complex]

#: coefficients produced by arithmetic with magnitude below this are dropped
PRUNE_TOL = 1e-14


# ---------------------------------------------------------------------------
# multi-indices
# ---------------------------------------------------------------------------

def degree(m: MultiIndex) -> int:
    return sum(m)


def graded_lex_key(m: MultiIndex) -> tuple:
    """Sort key: total degree first, then x1 powers descending, then x2 ..."""
    return (sum(m), tuple(-e for e in m))


def unit(n: int, i: int) -> MultiIndex:
    return tuple(1 if j == i else 0 for j in range(n))


@lru_cache(maxsize=None)
def monomials_of_degree(n: int, d: int) -> tuple[MultiIndex, ...]:
    """All multi-indices in ``n`` variables of total degree ``d``, graded-lex."""
    out = []
    for combo in itertools.combinations_with_replacement(range(n), d):
        m = [0] * n
        for j in combo:
            m[j] += 1
        out.append(tuple(m))
    return tuple(out)


@lru_cache(maxsize=None)
def monomials(n: int, max_degree: int, min_degree: int = 0) -> tuple[MultiIndex, ...]:
    out: list[MultiIndex] = []
    for d in range(min_degree, max_degree + 1):
        out.extend(monomials_of_degree(n, d))
    return tuple(out)


def add_index(a: MultiIndex, b: MultiIndex) -> MultiIndex:
    return tuple(x + y for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# scalar polynomial arithmetic on dict tables
# ---------------------------------------------------------------------------

def canonical(p: Mapping[MultiIndex, complex], prune: float = 0.0) -> Poly:
    """Return ``p`` sorted graded-lex with entries ``|c| <= prune`` removed
    (exact zeros are always removed)."""
    items = [(m, c) for m, c in p.items() if c != 0 and abs(c) > prune]
    items.sort(key=lambda kv: graded_lex_key(kv[0]))
    return dict(items)


def poly_add(p: Mapping, q: Mapping, alpha: complex = 1.0) -> Poly:
    """``p + alpha*q``."""
    out = dict(p)
    for m, c in q.items():
        out[m] = out.get(m, 0.0) + alpha * c
    return out


def poly_scale(p: Mapping, s: complex) -> Poly:
    return {m: s * c for m, c in p.items()}


def poly_mul(p: Mapping, q: Mapping, max_degree: int | None = None) -> Poly:
    out: Poly = {}
    for m1, c1 in p.items():
        d1 = sum(m1)
        for m2, c2 in q.items():
            if max_degree is not None and d1 + sum(m2) > max_degree:
                continue
            m = add_index(m1, m2)
            out[m] = out.get(m, 0.0) + c1 * c2
    return out


def poly_deriv(p: Mapping, j: int) -> Poly:
    out: Poly = {}
    for m, c in p.items():
        e = m[j]
        if e == 0:
            continue
        mm = list(m)
        mm[j] -= 1
        out[tuple(mm)] = e * c
    return out


def poly_truncate(p: Mapping, max_degree: int, min_degree: int = 0) -> Poly:
    return {m: c for m, c in p.items() if min_degree <= sum(m) <= max_degree}


def poly_degree(p: Mapping) -> int:
    return max((sum(m) for m in p), default=-1)


def linear_substitute(p: Mapping, M: np.ndarray, max_degree: int | None = None) -> Poly:
    """Expand ``p(M y)`` as a polynomial in ``y``.

    ``M`` is an (n_old, n_new) matrix; ``x_j = sum_k M[j, k] y_k``.
    """
    M = np.asarray(M)
    n_old, n_new = M.shape
    forms = [
        {unit(n_new, k): M[j, k] for k in range(n_new) if M[j, k] != 0}
        for j in range(n_old)
    ]
    power_cache: dict[tuple[int, int], Poly] = {}

    def power(j: int, e: int) -> Poly:
        key = (j, e)
        if key not in power_cache:
            if e == 0:
                power_cache[key] = {(0,) * n_new: 1.0}
            else:
                power_cache[key] = poly_mul(power(j, e - 1), forms[j], max_degree)
        return power_cache[key]

    out: Poly = {}
    for m, c in p.items():
        term: Poly = {(0,) * n_new: c}
        for j, e in enumerate(m):
            if e:
                term = poly_mul(term, power(j, e), max_degree)
        out = poly_add(out, term)
    return out


# ---------------------------------------------------------------------------
# vector fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PolyMap:
    """Polynomial map R^n -> R^n (or C^n), one sparse table per component."""

    n: int
    components: tuple[Poly, ...]

    def __post_init__(self):
        if len(self.components) != self.n:
            raise DimensionMismatch(
                f"expected {self.n} components, got {len(self.components)}"
            )
        for comp in self.components:
            for m in comp:
                if len(m) != self.n or any(e < 0 for e in m):
                    raise DimensionMismatch(f"bad multi-index {m} for n={self.n}")
        object.__setattr__(
            self, "components", tuple(canonical(c) for c in self.components)
        )

    # construction --------------------------------------------------------
    @classmethod
    def zero(cls, n: int) -> "PolyMap":
        return cls(n, tuple({} for _ in range(n)))

    @classmethod
    def from_terms(cls, n: int, terms: Iterable[tuple[int, Sequence[int], complex]]) -> "PolyMap":
        """Build from ``(component, exponents, coeff)`` triples (0-indexed)."""
        comps: list[Poly] = [{} for _ in range(n)]
        for i, exps, c in terms:
            if not 0 <= i < n:
                raise DimensionMismatch(f"component {i} out of range for n={n}")
            m = tuple(int(e) for e in exps)
            comps[i][m] = comps[i].get(m, 0.0) + c
        return cls(n, tuple(comps))

    @classmethod
    def linear(cls, M) -> "PolyMap":
        M = np.asarray(M)
        n = M.shape[0]
        if M.shape != (n, n):
            raise DimensionMismatch("linear field needs a square matrix")
        return cls(n, tuple(
            {unit(n, j): M[i, j].item() for j in range(n) if M[i, j] != 0}
            for i in range(n)
        ))

    # structure -----------------------------------------------------------
    @property
    def max_degree(self) -> int:
        return max((poly_degree(c) for c in self.components), default=-1)

    def terms(self):
        for i, comp in enumerate(self.components):
            for m, c in comp.items():
                yield i, m, c

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(abs(c) <= tol for _, _, c in self.terms())

    def max_abs_coeff(self) -> float:
        return max((abs(c) for _, _, c in self.terms()), default=0.0)

    def pruned(self, tol: float = PRUNE_TOL) -> "PolyMap":
        return PolyMap(self.n, tuple(canonical(c, tol) for c in self.components))

    def truncated(self, max_degree: int) -> "PolyMap":
        return PolyMap(self.n, tuple(poly_truncate(c, max_degree) for c in self.components))

    def degree_part(self, d: int) -> "PolyMap":
        return PolyMap(self.n, tuple(poly_truncate(c, d, d) for c in self.components))

    def coefficient(self, i: int, m: Sequence[int]) -> complex:
        return self.components[i].get(tuple(m), 0.0)

    def coefficient_vector(self, max_degree: int) -> np.ndarray:
        """Dense coefficients for every (component, monomial) up to ``max_degree``."""
        basis = monomials(self.n, max_degree)
        return np.array([comp.get(m, 0.0) for comp in self.components for m in basis])

    def __add__(self, other: "PolyMap") -> "PolyMap":
        _check_same(self, other)
        return PolyMap(self.n, tuple(
            poly_add(a, b) for a, b in zip(self.components, other.components)
        ))

    def __sub__(self, other: "PolyMap") -> "PolyMap":
        _check_same(self, other)
        return PolyMap(self.n, tuple(
            poly_add(a, b, -1.0) for a, b in zip(self.components, other.components)
        ))

    def __neg__(self) -> "PolyMap":
        return self.scaled(-1.0)

    def scaled(self, s: complex) -> "PolyMap":
        return PolyMap(self.n, tuple(poly_scale(c, s) for c in self.components))

    # evaluation ----------------------------------------------------------
    def _compiled(self):
        cache = self.__dict__.get("_compiled_cache")
        if cache is None:
            keys = sorted({m for comp in self.components for m in comp}, key=graded_lex_key)
            E = np.array(keys, dtype=np.int64).reshape(len(keys), self.n)
            is_complex = any(isinstance(c, complex) or np.iscomplexobj(c) for _, _, c in self.terms())
            C = np.zeros((len(keys), self.n), dtype=complex if is_complex else float)
            index = {m: r for r, m in enumerate(keys)}
            for i, m, c in self.terms():
                C[index[m], i] = c
            cache = (E, C)
            object.__setattr__(self, "_compiled_cache", cache)
        return cache

    def __call__(self, x):
        return evaluate(self, x)

    def jacobian_fields(self) -> tuple[tuple[Poly, ...], ...]:
        """Symbolic Jacobian: entry [i][j] is d f_i / d x_j."""
        cache = self.__dict__.get("_jac_cache")
        if cache is None:
            cache = tuple(
                tuple(poly_deriv(comp, j) for j in range(self.n)) for comp in self.components
            )
            object.__setattr__(self, "_jac_cache", cache)
        return cache

    def __repr__(self) -> str:
        parts = []
        for i, comp in enumerate(self.components):
            body = " + ".join(f"{c:g}*{_mono_str(m)}" for m, c in comp.items()) or "0"
            parts.append(f"f{i + 1} = {body}")
        return f"PolyMap(n={self.n}; " + "; ".join(parts) + ")"


def _mono_str(m: MultiIndex) -> str:
    s = "*".join(f"x{j + 1}" + (f"^{e}" if e > 1 else "") for j, e in enumerate(m) if e)
    return s or "1"


def _check_same(f: PolyMap, g: PolyMap) -> None:
    if f.n != g.n:
        raise DimensionMismatch(f"dimension mismatch: {f.n} vs {g.n}")


def _as_points(x, n: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.ndim != 2 or X.shape[1] != n:
        raise DimensionMismatch(f"point dimension {x.shape} does not match n={n}")
    return X, single


def monomial_values(X: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Rows of ``X`` (N, n) raised to exponent rows of ``E`` (M, n) -> (N, M)."""
    N, n = X.shape
    if E.shape[0] == 0:
        return np.zeros((N, 0), dtype=X.dtype)
    top = int(E.max(initial=0))
    powers = np.empty((top + 1, N, n), dtype=X.dtype)
    powers[0] = 1
    for e in range(1, top + 1):
        powers[e] = powers[e - 1] * X
    out = powers[E[:, 0], :, 0].T.copy()
    for j in range(1, n):
        out *= powers[E[:, j], :, j].T
    return out


def evaluate_poly(p: Mapping, x) -> complex | np.ndarray:
    """Evaluate one scalar table at a point (or rows of points)."""
    X = np.atleast_2d(np.asarray(x))
    if not p:
        out = np.zeros(X.shape[0])
    else:
        keys = list(p)
        E = np.array(keys, dtype=np.int64)
        c = np.array([p[m] for m in keys])
        out = monomial_values(X, E) @ c
    return out[0] if np.ndim(x) == 1 else out


def evaluate(f: PolyMap, x) -> np.ndarray:
    """Evaluate ``f`` at a point (shape (n,)) or a batch (shape (N, n))."""
    X, single = _as_points(x, f.n)
    E, C = f._compiled()
    if E.shape[0] == 0:
        out = np.zeros((X.shape[0], f.n), dtype=np.result_type(X, C))
    else:
        out = monomial_values(X, E) @ C
    return out[0] if single else out


def jacobian_at(f: PolyMap, x) -> np.ndarray:
    """Analytic Jacobian at a point (n, n) or a batch (N, n, n)."""
    X, single = _as_points(x, f.n)
    jac = f.jacobian_fields()
    out = np.zeros((X.shape[0], f.n, f.n), dtype=np.result_type(X, f._compiled()[1]))
    for i in range(f.n):
        for j in range(f.n):
            if jac[i][j]:
                out[:, i, j] = evaluate_poly(jac[i][j], X)
    return out[0] if single else out


def linear_part(f: PolyMap) -> np.ndarray:
    """``Df(0)`` read off the degree-1 coefficients."""
    M = np.zeros((f.n, f.n))
    if any(isinstance(c, complex) for _, _, c in f.terms()):
        M = M.astype(complex)
    for i, m, c in f.terms():
        if sum(m) == 1:
            M[i, m.index(1)] = c
    return M


def lie_bracket(f: PolyMap, g: PolyMap, prune: float = PRUNE_TOL) -> PolyMap:
    """Vector-field bracket ``[f, g] = Dg.f - Df.g``.

    This is the field whose Lie derivative equals ``L_f L_g - L_g L_f``.
    """
    _check_same(f, g)
    Df, Dg = f.jacobian_fields(), g.jacobian_fields()
    comps = []
    for i in range(f.n):
        acc: Poly = {}
        for j in range(f.n):
            if Dg[i][j] and f.components[j]:
                acc = poly_add(acc, poly_mul(Dg[i][j], f.components[j]))
            if Df[i][j] and g.components[j]:
                acc = poly_add(acc, poly_mul(Df[i][j], g.components[j]), -1.0)
        comps.append(canonical(acc, prune))
    return PolyMap(f.n, tuple(comps))


def lie_derivative(f: PolyMap, p: Mapping, max_degree: int | None = None) -> Poly:
    """Scalar Lie derivative ``Dp . f`` of the table ``p`` along ``f``."""
    out: Poly = {}
    for j in range(f.n):
        dp = poly_deriv(p, j)
        if dp and f.components[j]:
            out = poly_add(out, poly_mul(dp, f.components[j], max_degree))
    return out


# ---------------------------------------------------------------------------
# control-affine systems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or any(a > b for a, b in zip(lo, hi)):
            raise ConfigError(f"invalid box lo={lo} hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def symmetric(cls, n: int, half_width: float) -> "Box":
        return cls((-half_width,) * n, (half_width,) * n)

    @property
    def n(self) -> int:
        return len(self.lo)

    def contains(self, x, strict: bool = False) -> np.ndarray:
        X = np.atleast_2d(x)
        lo, hi = np.array(self.lo), np.array(self.hi)
        if strict:
            inside = np.all((X > lo) & (X < hi), axis=1)
        else:
            inside = np.all((X >= lo) & (X <= hi), axis=1)
        return inside[0] if np.ndim(x) == 1 else inside

    def scaled(self, s: float) -> "Box":
        return Box(tuple(s * v for v in self.lo), tuple(s * v for v in self.hi))


@dataclass(frozen=True)
class ControlAffineSystem:
    """``xdot = F(x) + sum_i u_i G_i(x)`` on an axis-aligned domain box."""

    drift: PolyMap
    controls: tuple[PolyMap, ...] = ()
    domain: Box | None = None

    def __post_init__(self):
        object.__setattr__(self, "controls", tuple(self.controls))
        n = self.drift.n
        for g in self.controls:
            if g.n != n:
                raise DimensionMismatch("drift and control fields differ in dimension")
        if self.domain is None:
            object.__setattr__(self, "domain", Box.symmetric(n, 1.0))
        elif self.domain.n != n:
            raise DimensionMismatch("domain box dimension differs from the state")

    @property
    def n(self) -> int:
        return self.drift.n

    @property
    def d(self) -> int:
        return len(self.controls)

    def vanishes_at_origin(self) -> bool:
        z = (0,) * self.n
        return all(z not in comp for f in (self.drift, *self.controls) for comp in f.components)


@dataclass(frozen=True)
class ParameterizedField:
    base: ControlAffineSystem
    u: tuple[float, ...] = field(default=())

    @property
    def field(self) -> PolyMap:
        return materialize(self.base, self.u)


def _as_u(u, d: int) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (d,):
        raise DimensionMismatch(f"parameter has shape {u.shape}, system expects ({d},)")
    return u


def materialize(sys: ControlAffineSystem, u) -> PolyMap:
    """Coefficient-wise ``F + sum_i u_i G_i``."""
    u = _as_u(u, sys.d)
    comps = [dict(c) for c in sys.drift.components]
    for ui, g in zip(u, sys.controls):
        if ui == 0.0:
            continue
        for i, m, c in g.terms():
            comps[i][m] = comps[i].get(m, 0.0) + float(ui) * c
    return PolyMap(sys.n, tuple(comps))


# ---------------------------------------------------------------------------
# system definition files (components 1-indexed in files)
# ---------------------------------------------------------------------------

def _terms_to_json(f: PolyMap) -> list[dict]:
    return [
        {"component": i + 1, "exponents": list(m), "coeff": float(np.real(c))}
        for i, m, c in f.terms()
    ]


def _terms_from_json(n: int, raw, where: str) -> PolyMap:
    if not isinstance(raw, list):
        raise ConfigError(f"{where}: expected a list of terms")
    terms = []
    for k, t in enumerate(raw):
        try:
            comp = int(t["component"]) - 1
            exps = [int(e) for e in t["exponents"]]
            coeff = float(t["coeff"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{where}[{k}]: malformed term ({exc})", field=f"{where}[{k}]") from exc
        if len(exps) != n:
            raise ConfigError(f"{where}[{k}].exponents: expected {n} entries", field=f"{where}[{k}]")
        if not 0 <= comp < n:
            raise ConfigError(f"{where}[{k}].component: out of range 1..{n}", field=f"{where}[{k}]")
        terms.append((comp, exps, coeff))
    return PolyMap.from_terms(n, terms)


def system_to_dict(sys: ControlAffineSystem) -> dict:
    return {
        "n": sys.n,
        "d": sys.d,
        "drift": _terms_to_json(sys.drift),
        "controls": [_terms_to_json(g) for g in sys.controls],
        "domain": {"lo": list(sys.domain.lo), "hi": list(sys.domain.hi)},
    }


def system_from_dict(data: dict) -> ControlAffineSystem:
    try:
        n = int(data["n"])
        d = int(data.get("d", len(data.get("controls", []))))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"system: missing or invalid 'n'/'d' ({exc})", field="n") from exc
    drift = _terms_from_json(n, data.get("drift", []), "drift")
    raw_controls = data.get("controls", [])
    if len(raw_controls) != d:
        raise ConfigError(f"controls: expected {d} fields, got {len(raw_controls)}", field="controls")
    controls = tuple(_terms_from_json(n, c, f"controls[{i}]") for i, c in enumerate(raw_controls))
    dom = data.get("domain")
    box = None
    if dom is not None:
        try:
            box = Box(tuple(dom["lo"]), tuple(dom["hi"]))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"domain: malformed ({exc})", field="domain") from exc
    sys = ControlAffineSystem(drift, controls, box)
    if not sys.vanishes_at_origin():
        raise ConfigError("drift and control fields must vanish at the origin", field="drift")
    return sys


def load_system(path: str | Path) -> ControlAffineSystem:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}",
            line=exc.lineno, column=exc.colno,
        ) from exc
    return system_from_dict(data)


def example_system(a: float = 2.0, half_width: float = 1.0) -> ControlAffineSystem:
    """``x1' = -x1``, ``x2' = (-1+u) x2 + (a+u) x1^2`` written as ``F + uG``."""
    F = PolyMap.from_terms(2, [(0, (1, 0), -1.0), (1, (0, 1), -1.0), (1, (2, 0), a)])
    G = PolyMap.from_terms(2, [(1, (0, 1), 1.0), (1, (2, 0), 1.0)])
    return ControlAffineSystem(F, (G,), Box.symmetric(2, half_width))
