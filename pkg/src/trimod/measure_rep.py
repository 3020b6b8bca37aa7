"""Numeric layer: the Gaussian measure, regular representations and modular data.

Functions live on ``B x R``: a point is a unitriangular matrix ``X`` (float) on a
window and a real ``t``.  Points are processed in batches: ``X`` has shape
``(P, N, N)`` with a unit diagonal and ``t`` has shape ``(P,)``.

Every function and operator works with complex *log values*.  A density ratio
is a difference of log densities, a phase ``Delta^{it}`` adds ``i t ln Delta``,
and conjugation conjugates the log.  Only the final comparison exponentiates,
as ``|exp(z1 - z2) - 1|``.  Nothing overflows even when individual factors
would.

Log density (up to the normalising constant, which cancels in every ratio):
``ln rho(x) = -sum_{k<n} b_kn x_kn^2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np

from .core_matrix import IndexWindow, UniMatrix, WindowError
from .weights_series import WeightConfig
from .weyl_algebra import (RationalWeights, Poly, a_left, a_right, apply, log_delta)

LogFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


# -- measure and points -------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianSpec:
    """Product Gaussian on the coordinates of a window; variance of x_kn is 1/(2 b_kn)."""
    window: IndexWindow
    b: np.ndarray = field(compare=False, repr=False)

    def __post_init__(self):
        b = np.array(self.b, dtype=float)
        n = self.window.size
        if b.shape != (n, n):
            raise ValueError(f"weight matrix must be {n}x{n}")
        upper = np.triu(np.ones((n, n), dtype=bool), 1)
        if np.any(b[upper] <= 0) or not np.all(np.isfinite(b[upper])):
            raise ValueError("weights must be positive and finite")
        b = np.where(upper, b, 0.0)
        b.setflags(write=False)
        object.__setattr__(self, "b", b)

    @classmethod
    def from_config(cls, cfg: WeightConfig, window: IndexWindow) -> "GaussianSpec":
        n, lo = window.size, window.lo
        b = np.zeros((n, n))
        for k, m in window.pairs():
            b[k - lo, m - lo] = cfg.b_float(k, m)
        return cls(window, b)

    @classmethod
    def from_rational(cls, weights: RationalWeights) -> "GaussianSpec":
        w = weights.window
        b = np.zeros((w.size, w.size))
        for (k, m), v in weights.values.items():
            b[k - w.lo, m - w.lo] = float(v)
        return cls(w, b)

    def rational(self) -> RationalWeights:
        lo = self.window.lo
        return RationalWeights(self.window, {(k, m): Fraction(float(self.b[k - lo, m - lo]))
                                             for k, m in self.window.pairs()})

    def b_of(self, k: int, n: int) -> float:
        self.window.check_pair(k, n)
        return float(self.b[k - self.window.lo, n - self.window.lo])

    def idx(self, k: int, n: int) -> tuple[int, int]:
        self.window.check_pair(k, n)
        return k - self.window.lo, n - self.window.lo

    def log_density(self, X: np.ndarray) -> np.ndarray:
        return -np.einsum("kn,pkn->p", self.b, X * X)

    def sample(self, count: int, seed: int, *, clip: float | None = None,
               t_sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None) -> "PointBatch":
        """i.i.d. coordinates from per-coordinate seed streams; t standard normal by default."""
        if count < 1:
            raise ValueError("count must be >= 1")
        pairs = self.window.pairs()
        streams = np.random.SeedSequence(seed).spawn(len(pairs) + 1)
        n = self.window.size
        X = np.broadcast_to(np.eye(n), (count, n, n)).copy()
        for (k, m), ss in zip(pairs, streams):
            i, j = self.idx(k, m)
            col = np.random.default_rng(ss).standard_normal(count) * math.sqrt(0.5 / self.b[i, j])
            if clip is not None:
                col = np.clip(col, -clip, clip)
            X[:, i, j] = col
        rng_t = np.random.default_rng(streams[-1])
        t = t_sampler(rng_t, count) if t_sampler else rng_t.standard_normal(count)
        if clip is not None:
            t = np.clip(t, -clip, clip)
        return PointBatch(self.window, X, np.asarray(t, dtype=float))


@dataclass(frozen=True)
class PointBatch:
    window: IndexWindow
    X: np.ndarray
    t: np.ndarray

    def __len__(self):
        return self.X.shape[0]

    def point(self, i: int) -> tuple[UniMatrix, float]:
        return to_unimatrix(self.window, self.X[i]), float(self.t[i])

    def coordinate(self, k: int, n: int) -> np.ndarray:
        return self.X[:, k - self.window.lo, n - self.window.lo]

    def with_X(self, X: np.ndarray) -> "PointBatch":
        return PointBatch(self.window, X, self.t)

    def with_t(self, t: np.ndarray) -> "PointBatch":
        return PointBatch(self.window, self.X, t)


def to_dense(x: UniMatrix) -> np.ndarray:
    return np.array(x.to_float().to_dense(), dtype=float)


def to_unimatrix(window: IndexWindow, M: np.ndarray) -> UniMatrix:
    lo = window.lo
    return UniMatrix(window, {(k, n): float(M[k - lo, n - lo]) for k, n in window.pairs()})


def batch_inverse(X: np.ndarray) -> np.ndarray:
    """Inverse of unipotent upper-triangular matrices via the finite Neumann series."""
    n = X.shape[-1]
    eye = np.eye(n)
    x = X - eye
    Y = np.broadcast_to(eye, X.shape).copy()
    for _ in range(n - 1):
        Y = eye - x @ Y
    return Y


def _coords_dict(window: IndexWindow, X: np.ndarray) -> dict:
    lo = window.lo
    return {(k, n): X[:, k - lo, n - lo] for k, n in window.pairs()}


# -- densities --------------------------------------------------------------------------------

def _dense(spec: GaussianSpec, tau) -> np.ndarray:
    if isinstance(tau, UniMatrix):
        if tau.window != spec.window:
            raise WindowError(f"window mismatch: {tau.window} vs {spec.window}")
        return to_dense(tau)
    return np.asarray(tau, dtype=float)


def log_rn_right(spec: GaussianSpec, X: np.ndarray, tau) -> np.ndarray:
    """ln[rho(x tau) / rho(x)]."""
    T = _dense(spec, tau)
    return spec.log_density(X @ T) - spec.log_density(X)


def log_rn_left(spec: GaussianSpec, X: np.ndarray, tau) -> np.ndarray:
    """ln[rho(tau^-1 x) / rho(x)]."""
    Ti = batch_inverse(_dense(spec, tau)[None])[0]
    return spec.log_density(Ti @ X) - spec.log_density(X)


def rn_right(spec: GaussianSpec, x: UniMatrix, tau: UniMatrix) -> float:
    """prod_{k<n} exp(-b_kn[((x tau)_kn)^2 - x_kn^2]); the shear has unit Jacobian."""
    return float(np.exp(log_rn_right(spec, to_dense(x)[None], tau))[0])


def rn_left(spec: GaussianSpec, x: UniMatrix, tau: UniMatrix) -> float:
    return float(np.exp(log_rn_left(spec, to_dense(x)[None], tau))[0])


def log_delta_batch(spec: GaussianSpec, X: np.ndarray) -> np.ndarray:
    """ln Delta(x) = sum b_kn((x^-1_kn)^2 - x_kn^2) = ln rho(x) - ln rho(x^-1)."""
    Xi = batch_inverse(X)
    return np.einsum("kn,pkn->p", spec.b, Xi * Xi - X * X)


def delta_density(spec: GaussianSpec, x: UniMatrix) -> float:
    return float(np.exp(log_delta_batch(spec, to_dense(x)[None]))[0])


def delta_density_of_inverse(spec: GaussianSpec, x: UniMatrix) -> float:
    Xi = batch_inverse(to_dense(x)[None])
    return float(np.exp(log_delta_batch(spec, Xi))[0])


def log_delta_poly_value(spec: GaussianSpec, X: np.ndarray, weights: RationalWeights | None = None) -> np.ndarray:
    """Numeric value of the symbolic sum b_kn w_kn (which is -ln Delta)."""
    weights = weights or spec.rational()
    poly = log_delta(spec.window, weights)
    val = poly.evaluate(_coords_dict(spec.window, X))
    return np.broadcast_to(np.asarray(val, dtype=float), (X.shape[0],))


# -- test functions -----------------------------------------------------------------------------

@dataclass(frozen=True)
class TestFunction:
    """sum_j coef_j * monomial_j(x)  *  exp(-sum c_kn x_kn^2)  *  h(t).

    ``h(t) = exp(-t^2 / (2 t_width^2) + i t_freq t)`` when ``t_width`` is set,
    otherwise 1.
    """
    terms: tuple = ((1.0, ()),)
    gauss: tuple = ()
    t_width: float | None = None
    t_freq: float = 0.0
    label: str = ""

    __test__ = False  # not a pytest class

    @classmethod
    def make(cls, terms: Sequence[tuple[complex, Mapping]], gauss: Mapping | None = None,
             t_width=None, t_freq=0.0, label=""):
        norm_terms = tuple((complex(c), tuple(sorted(m.items()))) for c, m in terms)
        return cls(norm_terms, tuple(sorted((gauss or {}).items())), t_width, t_freq, label)

    def log_eval(self, batch: PointBatch) -> np.ndarray:
        lo = batch.window.lo
        X = batch.X
        poly = np.zeros(X.shape[0], dtype=complex)
        for c, mono in self.terms:
            term = np.full(X.shape[0], c, dtype=complex)
            for (k, n), p in mono:
                term = term * X[:, k - lo, n - lo] ** p
            poly = poly + term
        with np.errstate(divide="ignore"):
            out = np.log(poly)
        for (k, n), c in self.gauss:
            out = out - c * X[:, k - lo, n - lo] ** 2
        if self.t_width is not None:
            out = out - batch.t ** 2 / (2 * self.t_width ** 2) + 1j * self.t_freq * batch.t
        return out

    def __call__(self, batch: PointBatch) -> np.ndarray:
        return np.exp(self.log_eval(batch))

    def poly(self, window: IndexWindow) -> Poly:
        """Exact polynomial part (real rational coefficients only)."""
        total = Poly.zero(window)
        for c, mono in self.terms:
            if c.imag != 0:
                raise ValueError("symbolic part needs real coefficients")
            term = Poly.const(window, Fraction(c.real))
            for (k, n), p in mono:
                term = term * Poly.var(window, k, n) ** p
            total = total + term
        return total


def test_dictionary(spec: GaussianSpec, with_t: bool = False) -> list[TestFunction]:
    """Fixed dictionary: monomials of degree <= 3 in <= 3 coordinates, Gaussian factors c in {0, b/2}."""
    pairs = spec.window.pairs()
    a, b_, c = pairs[0], pairs[len(pairs) // 2], pairs[-1]
    half = {kn: spec.b_of(*kn) / 2 for kn in pairs}
    tw = 1.5 if with_t else None
    return [
        TestFunction.make([(1, {})], label="one", t_width=tw, t_freq=0.3),
        TestFunction.make([(1, {a: 1})], label="x_a", t_width=tw),
        TestFunction.make([(1 + 0.5j, {a: 1, b_: 2})], {c: half[c]}, label="x_a x_b^2 g_c",
                          t_width=tw, t_freq=-0.7),
        TestFunction.make([(2, {c: 3}), (-1j, {a: 1, b_: 1}), (0.25, {})], half, label="mixed g_all",
                          t_width=tw, t_freq=1.1),
        TestFunction.make([(1, {})], {kn: half[kn] for kn in pairs[::2]}, label="gauss_even",
                          t_width=tw),
    ]


# -- operators ---------------------------------------------------------------------------------

class Fn:
    """A function on B x R given by its complex log value."""

    __slots__ = ("log_eval", "label")

    def __init__(self, log_eval: LogFn | Callable[[PointBatch], np.ndarray], label: str = ""):
        self.log_eval = log_eval
        self.label = label

    def __call__(self, batch: PointBatch) -> np.ndarray:
        return np.exp(self.log_eval(batch))


def as_fn(f) -> Fn:
    if isinstance(f, Fn):
        return f
    return Fn(f.log_eval, getattr(f, "label", ""))


@dataclass(frozen=True)
class OpEvaluator:
    """An operator mapping functions to functions; compose with ``@`` (right acts first)."""
    transform: Callable[[Fn], Fn]
    name: str = ""

    def __call__(self, f) -> Fn:
        return self.transform(as_fn(f))

    def __matmul__(self, other: "OpEvaluator") -> "OpEvaluator":
        return OpEvaluator(lambda f: self.transform(other.transform(f)), f"{self.name}*{other.name}")


def compose(*ops: OpEvaluator) -> OpEvaluator:
    """compose(A, B, C) acts as A B C."""
    out = ops[-1]
    for op in reversed(ops[:-1]):
        out = op @ out
    return out


def op_identity() -> OpEvaluator:
    return OpEvaluator(lambda f: f, "I")


def op_T_right(spec: GaussianSpec, tau) -> OpEvaluator:
    """(T^R_tau f)(x) = (rho(x tau)/rho(x))^{1/2} f(x tau)."""
    T = _dense(spec, tau)

    def tr(f: Fn) -> Fn:
        def ev(batch: PointBatch):
            Xt = batch.X @ T
            return 0.5 * (spec.log_density(Xt) - spec.log_density(batch.X)) + f.log_eval(batch.with_X(Xt))
        return Fn(ev)
    return OpEvaluator(tr, "T^R")


def op_T_left(spec: GaussianSpec, tau) -> OpEvaluator:
    """(T^L_tau f)(x) = (rho(tau^-1 x)/rho(x))^{1/2} f(tau^-1 x)."""
    Ti = batch_inverse(_dense(spec, tau)[None])[0]

    def tl(f: Fn) -> Fn:
        def ev(batch: PointBatch):
            Xt = Ti @ batch.X
            return 0.5 * (spec.log_density(Xt) - spec.log_density(batch.X)) + f.log_eval(batch.with_X(Xt))
        return Fn(ev)
    return OpEvaluator(tl, "T^L")


def op_J(spec: GaussianSpec) -> OpEvaluator:
    """(J f)(x) = (rho(x^-1)/rho(x))^{1/2} conj f(x^-1); conjugate-linear."""
    def j(f: Fn) -> Fn:
        def ev(batch: PointBatch):
            Xi = batch_inverse(batch.X)
            return (0.5 * (spec.log_density(Xi) - spec.log_density(batch.X))
                    + np.conj(f.log_eval(batch.with_X(Xi))))
        return Fn(ev)
    return OpEvaluator(j, "J")


def _mult(phase: Callable[[PointBatch], np.ndarray], name: str) -> OpEvaluator:
    def m(f: Fn) -> Fn:
        return Fn(lambda batch: phase(batch) + f.log_eval(batch))
    return OpEvaluator(m, name)


def op_Delta_it(spec: GaussianSpec, u: float) -> OpEvaluator:
    """Multiplication by Delta(x)^{iu} for a fixed real u."""
    return _mult(lambda batch: 1j * u * log_delta_batch(spec, batch.X), f"Delta^i{u}")


def op_W(spec: GaussianSpec) -> OpEvaluator:
    """(W f)(x, t) = Delta(x)^{-it} f(x, t)."""
    return _mult(lambda batch: -1j * batch.t * log_delta_batch(spec, batch.X), "W")


def op_W_star(spec: GaussianSpec) -> OpEvaluator:
    return _mult(lambda batch: 1j * batch.t * log_delta_batch(spec, batch.X), "W*")


def op_lambda(s: float) -> OpEvaluator:
    """(lambda(s) f)(x, t) = f(x, t - s)."""
    def lam(f: Fn) -> Fn:
        return Fn(lambda batch: f.log_eval(batch.with_t(batch.t - s)))
    return OpEvaluator(lam, f"lambda({s})")


def op_rho(s: float) -> OpEvaluator:
    """(rho(s) f)(x, t) = f(x, t + s)."""
    def r(f: Fn) -> Fn:
        return Fn(lambda batch: f.log_eval(batch.with_t(batch.t + s)))
    return OpEvaluator(r, f"rho({s})")


def op_Q_phase(spec: GaussianSpec, k: int, n: int, s: float) -> OpEvaluator:
    """exp(i s Q_kn): multiplication by exp(i s x_kn)."""
    i, j = spec.idx(k, n)
    return _mult(lambda batch: 1j * s * batch.X[:, i, j], f"exp(isQ{k},{n})")


def op_Qt_phase(s: float) -> OpEvaluator:
    """exp(i s Q_t): multiplication by exp(i s t)."""
    return _mult(lambda batch: 1j * s * batch.t, "exp(isQt)")


def op_mult(g) -> OpEvaluator:
    g = as_fn(g)
    return _mult(g.log_eval, f"mult({g.label})")


def group_commutator(a: OpEvaluator, a_inv: OpEvaluator, b: OpEvaluator, b_inv: OpEvaluator) -> OpEvaluator:
    """{A, B} = A B A^-1 B^-1."""
    return compose(a, b, a_inv, b_inv)


# -- comparison and reports ------------------------------------------------------------------------

def rel_err(z1: np.ndarray, z2: np.ndarray) -> np.ndarray:
    """|exp(z1 - z2) - 1| for log values; equal zeros count as agreement."""
    z1 = np.asarray(z1, dtype=complex)
    z2 = np.asarray(z2, dtype=complex)
    both_zero = np.isneginf(z1.real) & np.isneginf(z2.real)
    with np.errstate(invalid="ignore"):
        d = np.abs(np.expm1(z1 - z2))
    return np.where(both_zero, 0.0, np.nan_to_num(d, nan=np.inf))


@dataclass
class NumericReport:
    name: str
    max_rel_err: float
    points: int
    tol: float
    details: dict = field(default_factory=dict)
    skipped: str = ""
    extra: dict = field(default_factory=dict)  # name -> (value, tolerance)

    @property
    def passed(self) -> bool:
        if self.skipped:
            return True
        return bool(self.max_rel_err <= self.tol) and all(v <= t for v, t in self.extra.values())

    def to_json_obj(self) -> dict:
        out = {"name": self.name, "kind": "numeric", "max_rel_err": float(self.max_rel_err),
               "points": int(self.points), "tol": self.tol, "pass": self.passed}
        if self.skipped:
            out["skipped"] = self.skipped
        if self.details:
            out["details"] = _jsonable(self.details)
        if self.extra:
            out["extra"] = {k: {"value": float(v), "tol": t} for k, (v, t) in self.extra.items()}
        return out


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def _max(a) -> float:
    a = np.asarray(a, dtype=float)
    return float(a.max()) if a.size else 0.0


# -- pointwise identity checks ------------------------------------------------------------------------

def check_commutation(spec: GaussianSpec, tau, points: PointBatch, functions=None,
                      tol: float = 1e-9) -> NumericReport:
    """J T^R_tau J f against T^L_tau f."""
    functions = functions or test_dictionary(spec)
    J = op_J(spec)
    lhs_op = compose(J, op_T_right(spec, tau), J)
    rhs_op = op_T_left(spec, tau)
    err = max(_max(rel_err(lhs_op(f).log_eval(points), rhs_op(f).log_eval(points))) for f in functions)
    return NumericReport("commutation", err, len(points), tol, {"functions": len(functions)})


def check_J_involution(spec: GaussianSpec, points: PointBatch, functions=None, tol=1e-12) -> NumericReport:
    functions = functions or test_dictionary(spec)
    J = op_J(spec)
    JJ = J @ J
    err = max(_max(rel_err(JJ(f).log_eval(points), f.log_eval(points))) for f in functions)
    return NumericReport("J_involution", err, len(points), tol)


def check_TgT(spec: GaussianSpec, tau, g, points: PointBatch, functions=None, tol=1e-9) -> NumericReport:
    """T^R_tau g T^R_{tau^-1} f = g(x tau) f(x)."""
    functions = functions or test_dictionary(spec)
    T = _dense(spec, tau)
    Ti = batch_inverse(T[None])[0]
    g = as_fn(g)
    op = compose(op_T_right(spec, T), op_mult(g), op_T_right(spec, Ti))
    err = 0.0
    for f in functions:
        lhs = op(f).log_eval(points)
        rhs = g.log_eval(points.with_X(points.X @ T)) + f.log_eval(points)
        err = max(err, _max(rel_err(lhs, rhs)))
    return NumericReport("TgT", err, len(points), tol)


def check_cocycle(spec: GaussianSpec, sigma_, tau, points: PointBatch, tol=1e-10) -> NumericReport:
    """rn_right(x, sigma tau) = rn_right(x, sigma) rn_right(x sigma, tau)."""
    S, T = _dense(spec, sigma_), _dense(spec, tau)
    lhs = log_rn_right(spec, points.X, S @ T)
    rhs = log_rn_right(spec, points.X, S) + log_rn_right(spec, points.X @ S, T)
    return NumericReport("cocycle", _max(rel_err(lhs, rhs)), len(points), tol)


def check_delta_crosscheck(spec: GaussianSpec, points: PointBatch, tol=1e-10) -> NumericReport:
    """ln Delta(x) + (sum b w)(x) = 0, against the symbolic polynomial."""
    num = log_delta_batch(spec, points.X)
    sym = log_delta_poly_value(spec, points.X)
    err = np.abs(num + sym) / np.maximum(1.0, np.abs(num))
    recip = np.abs(num + log_delta_batch(spec, batch_inverse(points.X))) / np.maximum(1.0, np.abs(num))
    return NumericReport("delta_crosscheck", max(_max(err), _max(recip)), len(points), tol)


# -- crossed-product phases ------------------------------------------------------------------------------

def u_formula_log(spec: GaussianSpec, tau, sigma_, points: PointBatch) -> np.ndarray:
    """Log of Delta^{-it}(tau^-1 x) Delta^{it}(tau^-1 x s) Delta^{-it}(x s) Delta^{it}(x)."""
    T, S = _dense(spec, tau), _dense(spec, sigma_)
    Ti = batch_inverse(T[None])[0]
    X, t = points.X, points.t
    ld = lambda M: log_delta_batch(spec, M)  # noqa: E731
    return 1j * t * (-ld(Ti @ X) + ld(Ti @ X @ S) - ld(X @ S) + ld(X))


def group_commutator_U(spec: GaussianSpec, tau, sigma_, points: PointBatch) -> np.ndarray:
    """Complex value of the four-factor phase U(tau, sigma) at each point."""
    return np.exp(u_formula_log(spec, tau, sigma_, points))


def u_composed_op(spec: GaussianSpec, tau, sigma_) -> OpEvaluator:
    """T^L_tau W T^R_sigma W* T^L_{tau^-1} W T^R_{sigma^-1} W*."""
    T, S = _dense(spec, tau), _dense(spec, sigma_)
    Ti, Si = batch_inverse(T[None])[0], batch_inverse(S[None])[0]
    W, Ws = op_W(spec), op_W_star(spec)
    return compose(op_T_left(spec, T), W, op_T_right(spec, S), Ws,
                   op_T_left(spec, Ti), W, op_T_right(spec, Si), Ws)


def _urm_elements(spec: GaussianSpec, r: int, m: int, s: float):
    w = spec.window
    if not (r < m and w.lo <= r and m + 1 <= w.hi):
        return None
    n = w.size
    tau = np.eye(n)
    tau[r - w.lo, m + 1 - w.lo] = -1.0
    sig = np.eye(n)
    sig[m - w.lo, m + 1 - w.lo] = s
    return tau, sig


def urm_closed_log(spec: GaussianSpec, r: int, m: int, s: float, points: PointBatch) -> np.ndarray:
    """Log of exp(-2i b_{r,m+1} s t x_rm)."""
    return -2j * spec.b_of(r, m + 1) * s * points.t * points.coordinate(r, m)


def step1_G(spec: GaussianSpec, m: int, s: float, X: np.ndarray) -> np.ndarray:
    """ln Delta(x) - ln Delta(x sigma) for sigma = 1 + s E_{m,m+1}, in closed form."""
    w = spec.window
    lo, hi = w.lo, w.hi
    Xi = batch_inverse(X)
    i_m, i_m1 = m - lo, m + 1 - lo
    total = np.zeros(X.shape[0])
    for k in range(lo, m):
        ik = k - lo
        total += spec.b[ik, i_m1] * (2 * s * X[:, ik, i_m] * X[:, ik, i_m1] + s * s * X[:, ik, i_m] ** 2)
    for n in range(m + 2, hi + 1):
        jn = n - lo
        total += spec.b[i_m, jn] * (2 * s * Xi[:, i_m, jn] * Xi[:, i_m1, jn] - s * s * Xi[:, i_m1, jn] ** 2)
    return total


def verify_Urm(spec: GaussianSpec, r: int, m: int, s_values: Sequence[float], points: PointBatch,
               tol: float = 1e-9, perturb_tol: float = 1e-10, functions=None, seed: int = 0) -> NumericReport:
    """Composed operator, four-factor formula and the closed-form phase for U_rm(s)."""
    if _urm_elements(spec, r, m, 0.0) is None:
        return NumericReport("Urm", 0.0, 0, tol, skipped="insufficient window")
    functions = functions or test_dictionary(spec, with_t=True)
    err_paths = err_closed = err_step1 = err_perturb = 0.0
    rng = np.random.default_rng(seed)
    for s in s_values:
        tau, sig = _urm_elements(spec, r, m, s)
        closed = urm_closed_log(spec, r, m, s, points)
        formula = u_formula_log(spec, tau, sig, points)
        op = u_composed_op(spec, tau, sig)
        for f in functions:
            lhs = op(f).log_eval(points)
            err_paths = max(err_paths, _max(rel_err(lhs, formula + f.log_eval(points))))
        err_closed = max(err_closed, _max(rel_err(formula, closed)))
        # Step 1: Delta^{it}(x) Delta^{-it}(x sigma) = exp(i t G(x))
        X = points.X
        direct = log_delta_batch(spec, X) - log_delta_batch(spec, X @ sig)
        g = step1_G(spec, m, s, X)
        err_step1 = max(err_step1, _max(np.abs(direct - g) / np.maximum(1.0, np.abs(direct))))
        # perturb every coordinate except x_rm
        Xp = X.copy()
        ir, im = r - spec.window.lo, m - spec.window.lo
        noise = np.triu(rng.standard_normal(X.shape), 1) * 0.5
        noise[:, ir, im] = 0.0
        Xp = Xp + noise
        pert = u_formula_log(spec, tau, sig, points.with_X(Xp))
        err_perturb = max(err_perturb, _max(rel_err(pert, formula)))
    err = max(err_paths, err_closed, err_step1)
    return NumericReport("Urm", err, len(points), tol,
                         {"r": r, "m": m, "s_values": list(s_values), "paths": err_paths,
                          "closed_form": err_closed, "step1": err_step1},
                         extra={"perturbation": (err_perturb, perturb_tol)})


@dataclass
class PhaseResult:
    name: str
    c: float
    c_spread: float
    modulus_dev: float
    linearity_err: float
    independence_err: float
    dependence_ok: bool
    points: int

    def to_json_obj(self):
        return _jsonable(self.__dict__.copy())


def _phase_values(op: OpEvaluator, points: PointBatch) -> np.ndarray:
    one = Fn(lambda batch: np.zeros(len(batch), dtype=complex), "one")
    return op(one).log_eval(points)


def verify_phase_commutators(spec: GaussianSpec, r: int, m: int, s_values: Sequence[float],
                             points: PointBatch, tol: float = 1e-9, seed: int = 0) -> dict:
    """Group commutators of the closed-form U_rm(s) with lambda(1) and with T^L_{1+E_rm}.

    Each is expected to be a multiplication by exp(i c s b_{r,m+1} v) with v = x_rm
    (for lambda) or v = t (for T^L); the constant c is estimated from the points.
    """
    if _urm_elements(spec, r, m, 0.0) is None:
        return {"skipped": "insufficient window"}
    b = spec.b_of(r, m + 1)
    w = spec.window
    n = w.size
    e_rm = np.eye(n)
    e_rm[r - w.lo, m - w.lo] = 1.0
    e_rm_inv = batch_inverse(e_rm[None])[0]
    rng = np.random.default_rng(seed)

    def u_op(s, sign=1.0):
        return _mult(lambda batch: sign * urm_closed_log(spec, r, m, s, batch), "U_rm")

    out = {}
    for name, partner, partner_inv, var_of in (
        ("lambda", op_lambda(1.0), op_lambda(-1.0), lambda batch: batch.coordinate(r, m)),
        ("T^L", op_T_left(spec, e_rm), op_T_left(spec, e_rm_inv), lambda batch: batch.t),
    ):
        cs, mods, lin, indep = [], [], [], []
        for s in s_values:
            if s == 0:
                z = _phase_values(group_commutator(u_op(0.0), u_op(0.0, -1), partner, partner_inv), points)
                mods.append(_max(np.abs(np.abs(np.exp(z)) - 1)))
                lin.append(_max(np.abs(np.exp(z) - 1)))
                continue
            z = _phase_values(group_commutator(u_op(s), u_op(s, -1), partner, partner_inv), points)
            z2 = _phase_values(group_commutator(u_op(2 * s), u_op(2 * s, -1), partner, partner_inv), points)
            v = var_of(points)
            mods.append(_max(np.abs(np.abs(np.exp(z)) - 1)))
            # arg at 2s against twice arg at s, compared on the unit circle
            lin.append(_max(np.abs(np.exp(z2) - np.exp(2 * z))))
            scale = s * b * v
            sel = (np.abs(scale) > 1e-3) & (np.abs(scale) < 1.0)
            if np.any(sel):
                cs.append(np.angle(np.exp(z[sel])) / scale[sel])
            # perturb everything except the expected variable
            if name == "lambda":
                Xp = points.X + np.triu(rng.standard_normal(points.X.shape), 1) * 0.5
                Xp[:, r - w.lo, m - w.lo] = points.X[:, r - w.lo, m - w.lo]
                moved = PointBatch(w, Xp, points.t + rng.standard_normal(len(points)))
            else:
                Xp = points.X + np.triu(rng.standard_normal(points.X.shape), 1) * 0.5
                moved = points.with_X(Xp)
            zp = _phase_values(group_commutator(u_op(s), u_op(s, -1), partner, partner_inv), moved)
            indep.append(_max(rel_err(zp, z)))
        allc = np.concatenate(cs) if cs else np.array([np.nan])
        c = float(np.median(allc))
        spread = float(np.max(np.abs(allc - c))) if allc.size else math.inf
        res = PhaseResult(name, c, spread, max(mods), max(lin), max(indep) if indep else 0.0,
                          True, len(points))
        res.dependence_ok = (res.independence_err <= 1e-10 and res.modulus_dev <= 1e-12
                             and res.linearity_err <= tol and res.c_spread <= tol * max(1.0, abs(c)))
        out[name] = res
    return out


# -- Monte Carlo ----------------------------------------------------------------------------------

@dataclass(frozen=True)
class MCEstimate:
    mean: complex
    std_error: float
    samples: int
    seed: int

    def within(self, value: complex, sigmas: float) -> bool:
        return abs(self.mean - value) <= sigmas * self.std_error

    def to_json_obj(self):
        return {"mean": [float(np.real(self.mean)), float(np.imag(self.mean))],
                "std_error": float(self.std_error), "samples": self.samples, "seed": self.seed}


def _pairwise_sum(v: np.ndarray):
    # numpy's add.reduce is pairwise for contiguous arrays: deterministic and accurate
    return np.add.reduce(np.ascontiguousarray(v))


def _mc(values: np.ndarray, seed: int) -> MCEstimate:
    n = values.shape[0]
    mean = _pairwise_sum(values) / n
    if n > 1:
        dev = values - mean
        var = _pairwise_sum(np.abs(dev) ** 2) / (n - 1)
    else:
        var = 0.0
    return MCEstimate(complex(mean), float(math.sqrt(var / n)), n, seed)


def mc_inner(spec: GaussianSpec, f, g, count: int, seed: int) -> MCEstimate:
    """Monte Carlo estimate of the integral of f conj(g) against mu_b (t = 0)."""
    pts = spec.sample(count, seed)
    pts = pts.with_t(np.zeros(count))
    vals = np.exp(as_fn(f).log_eval(pts) + np.conj(as_fn(g).log_eval(pts)))
    return _mc(vals, seed)


def mc_moment(spec: GaussianSpec, k: int, n: int, count: int, seed: int) -> MCEstimate:
    pts = spec.sample(count, seed)
    return _mc(pts.coordinate(k, n) ** 2 + 0j, seed)


def check_unitarity(spec: GaussianSpec, tau, f, count: int, seed: int) -> MCEstimate:
    """|T^R_tau f|^2 - |f|^2 on common samples; the mean should vanish."""
    pts = spec.sample(count, seed)
    pts = pts.with_t(np.zeros(count))
    f = as_fn(f)
    tf = op_T_right(spec, tau)(f).log_eval(pts)
    vals = np.exp(2 * tf.real) - np.exp(2 * f.log_eval(pts).real)
    return _mc(vals + 0j, seed)


# -- generator finite differences -------------------------------------------------------------------------

def _elementary_dense(spec: GaussianSpec, p: int, q: int, s: float) -> np.ndarray:
    i, j = spec.idx(p, q)
    M = np.eye(spec.window.size)
    M[i, j] = s
    return M


def generator_fd_check(spec: GaussianSpec, generator_kind: str, p: int, q: int, points: PointBatch,
                       functions=None, h: float = 1e-4, tol: float = 1e-6) -> NumericReport:
    """Central difference of s -> (T_{1+sE_pq} f)(x) at 0 against the symbolic generator.

    ``generator_kind`` is ``"left"``, ``"right"`` or ``"right_kr"`` (the rejected
    coefficient order, kept as a negative control).  Test functions must be
    real polynomials times Gaussians with factors c_kn in {0, b_kn/2}.
    """
    w = spec.window
    weights = spec.rational()
    functions = functions or [f for f in test_dictionary(spec) if all(c.imag == 0 for c, _ in f.terms)]
    if generator_kind == "left":
        make_T = lambda s: op_T_left(spec, _elementary_dense(spec, p, q, s))  # noqa: E731
    elif generator_kind in ("right", "right_kr"):
        make_T = lambda s: op_T_right(spec, _elementary_dense(spec, p, q, s))  # noqa: E731
    else:
        raise ValueError(f"unknown generator kind {generator_kind!r}")
    coords = _coords_dict(w, points.X)
    err = 0.0
    for f in functions:
        extra = {kn: 2 * Fraction(c) for kn, c in f.gauss}
        shifted = weights.shifted(extra)
        if generator_kind == "left":
            op = a_left(w, shifted, p, q)
        else:
            op = a_right(w, shifted, p, q, "rk" if generator_kind == "right" else "kr")
        sym_poly = apply(op, f.poly(w))
        gauss = np.exp(-sum(c * coords[kn] ** 2 for kn, c in f.gauss)) if f.gauss else 1.0
        sym = np.asarray(sym_poly.evaluate(coords), dtype=float) * gauss
        plus = np.exp(make_T(h)(f).log_eval(points)).real
        minus = np.exp(make_T(-h)(f).log_eval(points)).real
        fd = (plus - minus) / (2 * h)
        err = max(err, _max(np.abs(fd - sym) / np.maximum(1.0, np.abs(sym))))
    return NumericReport(f"generator_{generator_kind}[{p},{q}]", err, len(points), tol,
                         {"h": h, "kind": generator_kind})
