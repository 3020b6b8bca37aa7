"""Exact polynomials in the coordinates x_kn and first-order differential operators.

Everything here is exact over the rationals.  A :class:`Poly` lives on an
:class:`~trimod.core_matrix.IndexWindow`: its variables are the coordinates
``x_kn`` of that window in ``(k, n)`` order and monomials are dense exponent
tuples over that ordering.  A :class:`WeylOp` is ``sum_a p_a d/dx_a + q`` with
polynomial coefficients, always kept with derivations to the right.  First-order
operators are closed under commutators, which is all the identity checks need.

The generators follow the derivative definitions:

* ``D_pq = d/dx_pq - b_pq x_pq``
* ``A^R_kn = sum_{r<k} x_rk D_rn + D_kn``, the derivative of
  ``s -> T^R_{1+sE_kn}`` at 0;
* ``A^L_pq = -(sum_{m>q} x_qm D_pm + D_pq)``, the derivative of
  ``s -> T^L_{1+sE_pq}`` at 0 (the left action evaluates at ``(1+sE)^{-1} x``,
  hence the overall minus sign).

``log_delta`` returns ``sum_{k<n} b_kn w_kn``, which is ``-ln Delta``.
"""
from __future__ import annotations

import operator
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Any, Iterable, Mapping

from .core_matrix import IndexWindow, WindowError, _chains

_add = operator.add


@lru_cache(maxsize=None)
def _layout(window: IndexWindow) -> tuple[tuple[tuple[int, int], ...], dict]:
    pairs = tuple(window.pairs())
    return pairs, {kn: i for i, kn in enumerate(pairs)}


class Poly:
    """Sparse multivariate polynomial with rational coefficients on a window."""

    __slots__ = ("window", "terms")

    def __init__(self, window: IndexWindow, terms: Mapping[tuple[int, ...], Any] | None = None):
        self.window = window
        self.terms = {e: c for e, c in (terms or {}).items() if c != 0}

    # -- construction -----------------------------------------------------------
    @classmethod
    def zero(cls, window):
        return cls(window)

    @classmethod
    def const(cls, window, c):
        if c == 0:
            return cls(window)
        pairs, _ = _layout(window)
        return cls(window, {(0,) * len(pairs): c})

    @classmethod
    def var(cls, window, k, n):
        window.check_pair(k, n)
        pairs, index = _layout(window)
        e = [0] * len(pairs)
        e[index[(k, n)]] = 1
        return cls(window, {tuple(e): 1})

    @classmethod
    def from_canonical(cls, window, canonical: Mapping[tuple, Any]):
        pairs, index = _layout(window)
        terms = {}
        for mono, c in canonical.items():
            e = [0] * len(pairs)
            for kn, p in mono:
                if kn not in index:
                    raise WindowError(f"variable x{kn} not in window {window}")
                e[index[kn]] = p
            terms[tuple(e)] = c
        return cls(window, terms)

    # -- arithmetic -------------------------------------------------------------
    def _coerce(self, other) -> "Poly":
        if isinstance(other, Poly):
            if other.window != self.window:
                raise WindowError(f"window mismatch: {self.window} vs {other.window}")
            return other
        return Poly.const(self.window, other)

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0) + c
        return Poly(self.window, out)

    __radd__ = __add__

    def __neg__(self):
        return Poly(self.window, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if not isinstance(other, Poly):
            if other == 0:
                return Poly(self.window)
            return Poly(self.window, {e: c * other for e, c in self.terms.items()})
        other = self._coerce(other)
        out: dict = {}
        get = out.get
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(map(_add, e1, e2))
                out[e] = get(e, 0) + c1 * c2
        return Poly(self.window, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("negative power")
        result = Poly.const(self.window, 1)
        base = self
        while k:
            if k & 1:
                result = result * base
            base = base * base
            k >>= 1
        return result

    def __eq__(self, other):
        if isinstance(other, Poly):
            return self.window == other.window and self.terms == other.terms
        if isinstance(other, (int, Fraction, float)):
            return self == Poly.const(self.window, other)
        return NotImplemented

    def __hash__(self):
        return hash((self.window, frozenset(self.terms.items())))

    def __bool__(self):
        return bool(self.terms)

    # -- calculus and evaluation ------------------------------------------------
    def diff(self, k: int, n: int) -> "Poly":
        _, index = _layout(self.window)
        i = index[(k, n)]
        out = {}
        for e, c in self.terms.items():
            p = e[i]
            if p:
                e2 = list(e)
                e2[i] = p - 1
                out[tuple(e2)] = c * p
        return Poly(self.window, out)

    def evaluate(self, values: Mapping[tuple[int, int], Any]):
        """Evaluate with ``values[(k, n)]`` (floats, Fractions or numpy arrays)."""
        pairs, _ = _layout(self.window)
        total = 0
        for e, c in self.terms.items():
            term = float(c) if not isinstance(c, int) else c
            for kn, p in zip(pairs, e):
                if p:
                    term = term * values[kn] ** p
            total = total + term
        return total

    def evaluate_exact(self, values: Mapping[tuple[int, int], Any]):
        pairs, _ = _layout(self.window)
        total = Fraction(0)
        for e, c in self.terms.items():
            term = Fraction(c)
            for kn, p in zip(pairs, e):
                if p:
                    term *= Fraction(values[kn]) ** p
            total += term
        return total

    # -- structure ----------------------------------------------------------------
    def variables(self) -> set[tuple[int, int]]:
        pairs, _ = _layout(self.window)
        used = set()
        for e in self.terms:
            used.update(kn for kn, p in zip(pairs, e) if p)
        return used

    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def canonical(self) -> dict:
        """Window-independent form: ``{((k, n), power), ...} -> coefficient``."""
        pairs, _ = _layout(self.window)
        return {tuple((kn, p) for kn, p in zip(pairs, e) if p): c for e, c in self.terms.items()}

    def embed(self, window: IndexWindow) -> "Poly":
        return Poly.from_canonical(window, self.canonical())

    def sorted_terms(self):
        """Terms in graded lexicographic order, highest first."""
        return sorted(self.terms.items(), key=lambda t: (sum(t[0]), t[0]), reverse=True)

    def __str__(self):
        if not self.terms:
            return "0"
        pairs, _ = _layout(self.window)
        parts = []
        for e, c in self.sorted_terms():
            mono = "*".join(f"x{k},{n}" + (f"^{p}" if p > 1 else "")
                            for (k, n), p in zip(pairs, e) if p)
            if not mono:
                parts.append(str(c))
            elif c == 1:
                parts.append(mono)
            elif c == -1:
                parts.append("-" + mono)
            else:
                parts.append(f"{c}*{mono}")
        return " + ".join(parts).replace("+ -", "- ")

    def __repr__(self):
        return f"Poly({self.window}, {self})"


# -- coordinate polynomials --------------------------------------------------------

def x_entry(window: IndexWindow, i: int, j: int) -> Poly:
    """Entry (i, j) of X = I + x: x_ij above the diagonal, 1 on it, 0 below."""
    if i == j:
        return Poly.const(window, 1)
    if i > j:
        return Poly.zero(window)
    return Poly.var(window, i, j)


@lru_cache(maxsize=4096)
def inverse_coordinate(window: IndexWindow, k: int, n: int) -> Poly:
    """x_kn^{-1}, the (k, n) entry of X^{-1}, as a polynomial in the x_rs.

    Built from the alternating chain sum; each increasing chain
    k = i_0 < ... < i_j = n contributes the monomial x_{i_0 i_1}...x_{i_{j-1} i_j}
    with sign (-1)^j.
    """
    window.check_pair(k, n)
    pairs, index = _layout(window)
    terms = {}
    for chain in _chains(n - k):
        e = [0] * len(pairs)
        for a, b in zip(chain, chain[1:]):
            e[index[(k + a, k + b)]] += 1
        terms[tuple(e)] = -1 if (len(chain) - 1) % 2 else 1
    return Poly(window, terms)


def inverse_entry(window: IndexWindow, i: int, j: int) -> Poly:
    """Entry (i, j) of X^{-1}, using the unit diagonal convention x_ii^{-1} = 1."""
    if i == j:
        return Poly.const(window, 1)
    if i > j:
        return Poly.zero(window)
    return inverse_coordinate(window, i, j)


def w_poly(window: IndexWindow, k: int, n: int) -> Poly:
    """w_kn = (x_kn + x_kn^{-1})(x_kn - x_kn^{-1})."""
    x = Poly.var(window, k, n)
    xi = inverse_coordinate(window, k, n)
    return (x + xi) * (x - xi)


@dataclass(frozen=True)
class RationalWeights:
    """Exact positive weights b_kn for every coordinate of a window."""
    window: IndexWindow
    values: Mapping[tuple[int, int], Fraction] = field(default_factory=dict)

    def __post_init__(self):
        missing = [kn for kn in self.window.pairs() if kn not in self.values]
        if missing:
            raise ValueError(f"weights missing for {missing[:4]}...")
        vals = {kn: Fraction(self.values[kn]) for kn in self.window.pairs()}
        bad = [kn for kn, v in vals.items() if v <= 0]
        if bad:
            raise ValueError(f"weights must be positive, got b{bad[0]} = {vals[bad[0]]}")
        object.__setattr__(self, "values", vals)

    def __getitem__(self, kn):
        return self.values[kn]

    def __hash__(self):
        return hash((self.window, tuple(sorted(self.values.items()))))

    @classmethod
    def ones(cls, window):
        return cls(window, {kn: Fraction(1) for kn in window.pairs()})

    @classmethod
    def geometric(cls, window, s=2):
        """b_kn = (s^k)^n."""
        s = Fraction(s)
        return cls(window, {(k, n): s ** (k * n) for k, n in window.pairs()})

    @classmethod
    def from_config(cls, cfg, window):
        """Exact snapshot of a :mod:`trimod.weights_series` configuration."""
        return cls(window, {(k, n): cfg.b_exact(k, n) for k, n in window.pairs()})

    def shifted(self, extra: Mapping[tuple[int, int], Any]) -> "RationalWeights":
        return RationalWeights(self.window, {kn: v + Fraction(extra.get(kn, 0))
                                             for kn, v in self.values.items()})


def log_delta(window: IndexWindow, weights: RationalWeights) -> Poly:
    """sum_{k<n} b_kn w_kn over the window; this equals -ln Delta(x)."""
    return _log_delta_cached(window, weights)


@lru_cache(maxsize=32)
def _log_delta_cached(window, weights):
    total = Poly.zero(window)
    for k, n in window.pairs():
        if n - k > 1:  # w_{k,k+1} vanishes identically
            total = total + w_poly(window, k, n) * weights[(k, n)]
    return total


# -- first-order operators ------------------------------------------------------------

class WeylOp:
    """``sum_a coeffs[a] * d/dx_a + mult`` with polynomial coefficients."""

    __slots__ = ("window", "coeffs", "mult")

    def __init__(self, window, coeffs: Mapping[tuple[int, int], Poly] | None = None,
                 mult: Poly | None = None):
        self.window = window
        self.coeffs = {a: p for a, p in (coeffs or {}).items() if p}
        self.mult = mult if mult is not None else Poly.zero(window)

    @classmethod
    def multiplication(cls, f: Poly) -> "WeylOp":
        return cls(f.window, {}, f)

    @classmethod
    def partial(cls, window, p, q) -> "WeylOp":
        window.check_pair(p, q)
        return cls(window, {(p, q): Poly.const(window, 1)})

    @property
    def is_multiplication(self) -> bool:
        return not self.coeffs

    def derive(self, f: Poly) -> Poly:
        """Vector-field part applied to f."""
        total = Poly.zero(self.window)
        for (p, q), c in self.coeffs.items():
            d = f.diff(p, q)
            if d:
                total = total + c * d
        return total

    def __call__(self, f: Poly) -> Poly:
        return apply(self, f)

    def __add__(self, other: "WeylOp") -> "WeylOp":
        coeffs = dict(self.coeffs)
        for a, p in other.coeffs.items():
            coeffs[a] = coeffs[a] + p if a in coeffs else p
        return WeylOp(self.window, coeffs, self.mult + other.mult)

    def __neg__(self):
        return WeylOp(self.window, {a: -p for a, p in self.coeffs.items()}, -self.mult)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, c) -> "WeylOp":
        return WeylOp(self.window, {a: p * c for a, p in self.coeffs.items()}, self.mult * c)

    def times(self, f: Poly) -> "WeylOp":
        """Left multiplication f * self."""
        return WeylOp(self.window, {a: f * p for a, p in self.coeffs.items()}, f * self.mult)

    def __eq__(self, other):
        if not isinstance(other, WeylOp):
            return NotImplemented
        return (self.window == other.window and self.coeffs == other.coeffs
                and self.mult == other.mult)

    def __bool__(self):
        return bool(self.coeffs) or bool(self.mult)

    def __str__(self):
        parts = [f"({c})*d{p},{q}" for (p, q), c in sorted(self.coeffs.items())]
        if self.mult or not parts:
            parts.append(f"({self.mult})")
        return " + ".join(parts)

    __repr__ = __str__


def apply(op: WeylOp, f: Poly) -> Poly:
    """Apply a first-order operator to a polynomial (Leibniz rule for the derivations)."""
    if op.window != f.window:
        raise WindowError(f"window mismatch: {op.window} vs {f.window}")
    return op.derive(f) + op.mult * f


def commutator(a: WeylOp, b: WeylOp) -> WeylOp:
    """[a, b] = ab - ba in normal form."""
    if a.window != b.window:
        raise WindowError(f"window mismatch: {a.window} vs {b.window}")
    coeffs = {}
    for beta in set(a.coeffs) | set(b.coeffs):
        c = Poly.zero(a.window)
        if beta in b.coeffs:
            c = c + a.derive(b.coeffs[beta])
        if beta in a.coeffs:
            c = c - b.derive(a.coeffs[beta])
        coeffs[beta] = c
    return WeylOp(a.window, coeffs, a.derive(b.mult) - b.derive(a.mult))


def d_op(window, weights: RationalWeights, p, q) -> WeylOp:
    """D_pq = d/dx_pq - b_pq x_pq."""
    return WeylOp(window, {(p, q): Poly.const(window, 1)},
                  Poly.var(window, p, q) * (-weights[(p, q)]))


def a_left(window, weights, p, q) -> WeylOp:
    """Generator of s -> T^L_{1+sE_pq}, truncated to the window."""
    window.check_pair(p, q)
    op = d_op(window, weights, p, q)
    for m in range(q + 1, window.hi + 1):
        op = op + d_op(window, weights, p, m).times(Poly.var(window, q, m))
    return -op


def a_right(window, weights, k, n, convention: str = "rk") -> WeylOp:
    """Generator of s -> T^R_{1+sE_kn}, truncated to the window.

    ``convention="rk"`` uses the coefficient x_rk (r < k).  ``"kr"`` reads the
    coefficient as the matrix entry x_kr, which sits below the diagonal and is
    therefore zero; it exists only as a deliberately wrong variant.
    """
    window.check_pair(k, n)
    if convention not in ("rk", "kr"):
        raise ValueError(f"unknown convention {convention!r}")
    op = d_op(window, weights, k, n)
    for r in range(window.lo, k):
        coef = x_entry(window, r, k) if convention == "rk" else x_entry(window, k, r)
        if coef:
            op = op + d_op(window, weights, r, n).times(coef)
    return op


# -- identity reports ------------------------------------------------------------------

@dataclass
class TupleCheck:
    indices: tuple
    status: str  # "exact-zero" | "residual" | "skipped"
    residual: Any = None
    note: str = ""

    def to_json_obj(self):
        out = {"indices": list(self.indices), "status": self.status}
        if self.residual is not None:
            out["residual_poly"] = str(self.residual)
        if self.note:
            out["note"] = self.note
        return out


@dataclass
class IdentityReport:
    name: str
    window: IndexWindow
    checks: list[TupleCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.status != "residual" for c in self.checks)

    def count(self, status: str) -> int:
        return sum(c.status == status for c in self.checks)

    def failures(self) -> list[TupleCheck]:
        return [c for c in self.checks if c.status == "residual"]

    def to_json_obj(self, include_tuples: bool = True) -> dict:
        out = {
            "name": self.name,
            "kind": "symbolic",
            "window": [self.window.lo, self.window.hi],
            "pass": self.passed,
            "checked": len(self.checks) - self.count("skipped"),
            "exact_zero": self.count("exact-zero"),
            "residual": self.count("residual"),
            "skipped": self.count("skipped"),
        }
        if include_tuples:
            out["tuples"] = [c.to_json_obj() for c in self.checks]
        else:
            out["tuples"] = [c.to_json_obj() for c in self.checks if c.status != "exact-zero"]
        return out


def _record(report: IdentityReport, indices, got: WeylOp, expected: Poly,
            require_multiplication: bool = True) -> None:
    diff = got - WeylOp.multiplication(expected)
    if not diff:
        report.checks.append(TupleCheck(tuple(indices), "exact-zero"))
        return
    note = "derivation terms survive" if (require_multiplication and not got.is_multiplication) else ""
    report.checks.append(TupleCheck(tuple(indices), "residual", diff, note))


def verify_lemma_D_inverse(window: IndexWindow, weights: RationalWeights | None = None) -> IdentityReport:
    """[D_pq, x_kn^{-1}] = -x_kp^{-1} x_qn^{-1} if k <= p < q <= n, else 0."""
    weights = weights or RationalWeights.ones(window)
    report = IdentityReport("lemma_D_inverse", window)
    for p, q in window.pairs():
        d = d_op(window, weights, p, q)
        for k, n in window.pairs():
            got = commutator(d, WeylOp.multiplication(inverse_coordinate(window, k, n)))
            if k <= p and q <= n:
                expected = -(inverse_entry(window, k, p) * inverse_entry(window, q, n))
            else:
                expected = Poly.zero(window)
            _record(report, (p, q, k, n), got, expected)
    return report


def expected_AR_w(window, p, q, k, n) -> Poly:
    """Closed form of [A^R_pq, w_kn]."""
    if n == q and k < p:
        return Poly.var(window, k, p) * Poly.var(window, k, q) * 2
    if k == p and n > q:
        return inverse_coordinate(window, p, n) * inverse_coordinate(window, q, n) * 2
    if (k, n) == (p, q):
        return (Poly.var(window, p, q) + inverse_coordinate(window, p, q)) * 2
    return Poly.zero(window)


def expected_AR_log_delta(window, weights, p, q) -> Poly:
    """Window-truncated closed form of [A^R_pq, sum b w] = -[A^R_pq, ln Delta]."""
    total = (Poly.var(window, p, q) + inverse_coordinate(window, p, q)) * (2 * weights[(p, q)])
    for r in range(window.lo, p):
        total = total + Poly.var(window, r, p) * Poly.var(window, r, q) * (2 * weights[(r, q)])
    for n in range(q + 1, window.hi + 1):
        total = total + (inverse_coordinate(window, p, n) * inverse_coordinate(window, q, n)
                         * (2 * weights[(p, n)]))
    return total


def verify_bracket_AR_w(window, weights, convention: str = "rk") -> IdentityReport:
    """The four-case table for [A^R_pq, w_kn] and the truncated [A^R_pq, ln Delta] formula."""
    report = IdentityReport("bracket_AR_w", window)
    ld = log_delta(window, weights)
    for p, q in window.pairs():
        ar = a_right(window, weights, p, q, convention)
        for k, n in window.pairs():
            got = commutator(ar, WeylOp.multiplication(w_poly(window, k, n)))
            _record(report, ("w", p, q, k, n), got, expected_AR_w(window, p, q, k, n))
        got = commutator(ar, WeylOp.multiplication(ld))
        _record(report, ("log_delta", p, q), got, expected_AR_log_delta(window, weights, p, q))
    return report


def verify_AL_brackets(window, weights: RationalWeights | None = None) -> IdentityReport:
    """[A^L_ij, x_kn] = -d_ki (x_jn + d_jn) and [A^L_ij, x_kn^{-1}] = d_jn (x_ki^{-1} + d_ki)."""
    weights = weights or RationalWeights.ones(window)
    report = IdentityReport("AL_brackets", window)
    for i, j in window.pairs():
        al = a_left(window, weights, i, j)
        for k, n in window.pairs():
            got = commutator(al, WeylOp.multiplication(Poly.var(window, k, n)))
            expected = -x_entry(window, j, n) if k == i else Poly.zero(window)
            _record(report, ("x", i, j, k, n), got, expected)
            got = commutator(al, WeylOp.multiplication(inverse_coordinate(window, k, n)))
            expected = inverse_entry(window, k, i) if j == n else Poly.zero(window)
            _record(report, ("x_inv", i, j, k, n), got, expected)
    return report


def triple_commutator(window, weights, i, p, j, q, convention: str = "rk",
                      _cache: dict | None = None) -> tuple[WeylOp, WeylOp]:
    """Return ([A^L_ij, [A^R_pq, L]], [A^L_ip, [A^L_ij, [A^R_pq, L]]]) with L = sum b w."""
    key = (p, q)
    if _cache is not None and key in _cache:
        inner = _cache[key]
    else:
        ld = WeylOp.multiplication(log_delta(window, weights))
        inner = commutator(a_right(window, weights, p, q, convention), ld)
        if _cache is not None:
            _cache[key] = inner
    double = commutator(a_left(window, weights, i, j), inner)
    triple = commutator(a_left(window, weights, i, p), double)
    return double, triple


def verify_triple_commutator(window, weights, tuples: Iterable[tuple] | None = None,
                             convention: str = "rk") -> IdentityReport:
    """Double and triple commutators against -2 b_iq x_ip x_jq and 2 b_iq x_jq."""
    report = IdentityReport("triple_commutator", window)
    if tuples is None:
        idx = range(window.lo, window.hi + 1)
        tuples = [(i, p, j, q) for i in idx for p in idx for j in idx for q in idx
                  if i < p < j < q]
    cache: dict = {}
    for t in tuples:
        i, p, j, q = t
        if not (i < p < j < q):
            report.checks.append(TupleCheck(tuple(t), "skipped", note="requires i<p<j<q"))
            continue
        if not (window.lo <= i and q <= window.hi):
            report.checks.append(TupleCheck(tuple(t), "skipped", note="insufficient window"))
            continue
        double, triple = triple_commutator(window, weights, i, p, j, q, convention, cache)
        b = weights[(i, q)]
        _record(report, ("double", *t), double,
                Poly.var(window, i, p) * Poly.var(window, j, q) * (-2 * b))
        _record(report, ("triple", *t), triple, Poly.var(window, j, q) * (2 * b))
    return report
