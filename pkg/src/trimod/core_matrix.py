"""Finite truncations of the unitriangular group.

A :class:`UniMatrix` is an upper-unitriangular matrix ``I + x`` on an
:class:`IndexWindow` ``[lo, hi]``.  Only the strictly upper entries ``x_kn``
(``lo <= k < n <= hi``) are stored, sparsely; a missing key is an exact zero
and the diagonal is implicitly one.

Entries are duck-typed ring elements.  Exact rationals (:class:`fractions.Fraction`
or ``int``) are the default; binary64 floats are accepted and are subject to the
usual rounding (roughly ``n * eps`` relative error per entry for window size
``n``).  Polynomials from :mod:`trimod.weyl_algebra` also work, which gives the
symbolic inverse.
"""
from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Any, Iterator, Mapping


class WindowError(ValueError):
    """Index outside a window, or two windows that do not match."""


@dataclass(frozen=True, order=True)
class IndexWindow:
    lo: int
    hi: int

    def __post_init__(self):
        if self.hi - self.lo < 1:
            raise WindowError(f"window needs hi > lo, got [{self.lo}, {self.hi}]")

    @classmethod
    def symmetric(cls, radius: int) -> "IndexWindow":
        return cls(-radius, radius)

    @property
    def size(self) -> int:
        """Number of indices, i.e. the matrix dimension."""
        return self.hi - self.lo + 1

    def pairs(self) -> list[tuple[int, int]]:
        """All coordinate pairs (k, n), lo <= k < n <= hi, in (k, n) order."""
        return [(k, n) for k in range(self.lo, self.hi + 1) for n in range(k + 1, self.hi + 1)]

    def __contains__(self, item) -> bool:
        if isinstance(item, IndexWindow):
            return self.lo <= item.lo and item.hi <= self.hi
        if isinstance(item, tuple):
            k, n = item
            return self.lo <= k < n <= self.hi
        return self.lo <= item <= self.hi

    def check_pair(self, k: int, n: int) -> None:
        if not (self.lo <= k < n <= self.hi):
            raise WindowError(f"index ({k}, {n}) not a coordinate of window [{self.lo}, {self.hi}]")

    def __str__(self):
        return f"[{self.lo}, {self.hi}]"


def _is_zero(v) -> bool:
    return v == 0


@dataclass(frozen=True)
class UniMatrix:
    window: IndexWindow
    entries: Mapping[tuple[int, int], Any] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for (k, n), v in self.entries.items():
            self.window.check_pair(k, n)
            if not _is_zero(v):
                clean[(k, n)] = v
        object.__setattr__(self, "entries", clean)

    def __getitem__(self, kn: tuple[int, int]):
        """Entry (k, n) of the full matrix, including the unit diagonal and zeros below it."""
        k, n = kn
        if k == n:
            return 1
        return self.entries.get((k, n), 0)

    def __eq__(self, other):
        if not isinstance(other, UniMatrix):
            return NotImplemented
        return self.window == other.window and self.entries == other.entries

    def __hash__(self):
        return hash((self.window, frozenset(self.entries.items())))

    def __matmul__(self, other: "UniMatrix") -> "UniMatrix":
        return multiply(self, other)

    def __repr__(self):
        body = ", ".join(f"x{k},{n}={v}" for (k, n), v in sorted(self.entries.items()))
        return f"UniMatrix({self.window}, {{{body}}})"

    @property
    def mode(self) -> str:
        """'exact' when every entry is rational, 'float' if any entry is a float."""
        if any(isinstance(v, float) for v in self.entries.values()):
            return "float"
        return "exact"

    def items(self) -> Iterator[tuple[tuple[int, int], Any]]:
        return iter(sorted(self.entries.items()))

    def to_dense(self) -> list[list]:
        lo, size = self.window.lo, self.window.size
        rows = [[0] * size for _ in range(size)]
        for i in range(size):
            rows[i][i] = 1
        for (k, n), v in self.entries.items():
            rows[k - lo][n - lo] = v
        return rows

    def to_float(self) -> "UniMatrix":
        return UniMatrix(self.window, {kn: float(v) for kn, v in self.entries.items()})

    # -- JSON -----------------------------------------------------------------
    def to_json_obj(self) -> dict:
        out = []
        for (k, n), v in sorted(self.entries.items()):
            if isinstance(v, float):
                out.append([k, n, v])
            else:
                v = Fraction(v)
                out.append([k, n, f"{v.numerator}/{v.denominator}"])
        return {"lo": self.window.lo, "hi": self.window.hi, "entries": out}

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj())

    @classmethod
    def from_json_obj(cls, obj: dict) -> "UniMatrix":
        window = IndexWindow(int(obj["lo"]), int(obj["hi"]))
        entries = {}
        for k, n, v in obj["entries"]:
            entries[(int(k), int(n))] = Fraction(v) if isinstance(v, str) else float(v)
        return cls(window, entries)

    @classmethod
    def from_json(cls, text: str) -> "UniMatrix":
        return cls.from_json_obj(json.loads(text))


def identity(window: IndexWindow) -> UniMatrix:
    return UniMatrix(window, {})


def _require_same_window(a: UniMatrix, b: UniMatrix) -> None:
    if a.window != b.window:
        raise WindowError(f"window mismatch: {a.window} vs {b.window}")


def multiply(a: UniMatrix, b: UniMatrix) -> UniMatrix:
    """Matrix product; ``(AB)_kn = sum_{r=k}^{n} A_kr B_rn`` with unit diagonals."""
    _require_same_window(a, b)
    rows_b: dict[int, list[tuple[int, Any]]] = {}
    for (r, n), v in b.entries.items():
        rows_b.setdefault(r, []).append((n, v))
    out: dict[tuple[int, int], Any] = {}

    def acc(key, v):
        if key in out:
            out[key] = out[key] + v
        else:
            out[key] = v

    for key, v in a.entries.items():
        acc(key, v)
    for key, v in b.entries.items():
        acc(key, v)
    for (k, r), av in a.entries.items():
        for n, bv in rows_b.get(r, ()):
            acc((k, n), av * bv)
    return UniMatrix(a.window, out)


def invert_recursive(x: UniMatrix) -> UniMatrix:
    """Inverse via ``x_kn^{-1} = -sum_{r=k+1}^{n} x_kr x_rn^{-1}``, by increasing n - k."""
    w = x.window
    inv: dict[tuple[int, int], Any] = {}
    for gap in range(1, w.size):
        for k in range(w.lo, w.hi - gap + 1):
            n = k + gap
            total = x.entries.get((k, n), 0)
            for r in range(k + 1, n):
                xkr = x.entries.get((k, r))
                if xkr is None:
                    continue
                irn = inv.get((r, n))
                if irn is not None:
                    total = total + xkr * irn
            if not _is_zero(total):
                inv[(k, n)] = -total
    return UniMatrix(w, inv)


@lru_cache(maxsize=None)
def _chains(gap: int) -> tuple[tuple[int, ...], ...]:
    """All strictly increasing offset chains 0 = i_0 < ... < i_j = gap."""
    inner = range(1, gap)
    out = []
    for r in range(gap):
        for mid in itertools.combinations(inner, r):
            out.append((0, *mid, gap))
    return tuple(out)


def invert_explicit(x: UniMatrix) -> UniMatrix:
    """Inverse from the alternating chain sum.

    ``x_kn^{-1} = sum over chains k = i_0 < i_1 < ... < i_j = n`` of
    ``(-1)^j x_{i_0 i_1} ... x_{i_{j-1} i_j}``.  Exponential in ``n - k``; meant
    as an oracle for :func:`invert_recursive` on small windows.
    """
    w = x.window
    e = x.entries
    inv = {}
    for k, n in w.pairs():
        total = 0
        for chain in _chains(n - k):
            prod = None
            for a, b in zip(chain, chain[1:]):
                v = e.get((k + a, k + b))
                if v is None:
                    prod = None
                    break
                prod = v if prod is None else prod * v
            if prod is None:
                continue
            total = total + (prod if (len(chain) - 1) % 2 == 0 else -prod)
        if not _is_zero(total):
            inv[(k, n)] = total
    return UniMatrix(w, inv)


invert = invert_recursive


def elementary(window: IndexWindow, p: int, q: int, s) -> UniMatrix:
    """``I + s E_pq``."""
    window.check_pair(p, q)
    return UniMatrix(window, {(p, q): s})


def embed_symmetric(x: UniMatrix, bigger: IndexWindow) -> UniMatrix:
    """Embed into a larger window; new coordinates are zero."""
    if x.window not in bigger or x.window == bigger:
        raise WindowError(f"{bigger} does not strictly contain {x.window}")
    return UniMatrix(bigger, dict(x.entries))


def project(x: UniMatrix, smaller: IndexWindow) -> UniMatrix:
    """Restrict to the coordinates of a sub-window."""
    if smaller not in x.window:
        raise WindowError(f"{smaller} is not inside {x.window}")
    return UniMatrix(smaller, {kn: v for kn, v in x.entries.items() if kn in smaller})


def random_rational(window: IndexWindow, rng: random.Random, *, density: float = 1.0,
                    max_num: int = 9, max_den: int = 5) -> UniMatrix:
    """Random matrix with small rational entries, for tests and sweeps."""
    entries = {}
    for kn in window.pairs():
        if rng.random() < density:
            entries[kn] = Fraction(rng.randint(-max_num, max_num), rng.randint(1, max_den))
    return UniMatrix(window, entries)
