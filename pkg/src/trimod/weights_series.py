"""Gaussian weight families and certified evaluation of the convergence series.

Three families of positive weights ``b_kn`` (k < n) are supported:

* ``TableWeights``: an explicit, complete table over a window.  Every series is
  a finite sum and is evaluated exactly with rationals.
* ``PowerWeights``: ``b_kn = a_k^n`` with ``a_k = scale * ratio^k``.
* ``GeometricWeights``: the power family with ``scale = 1`` and ``ratio = s > 1``.

For the power family every series term is an exponential of a quadratic form in
the indices, so terms are computed in log space (no overflow at large radius)
and tails are bounded by geometric comparison.  A :class:`SeriesEstimate`
carries a lower bound ``partial_sum`` and a ``tail_bound`` such that the true
value lies in ``[partial_sum, partial_sum + tail_bound]`` whenever the verdict is
convergent.  Per-term rounding is accounted for by a relative slack of
``4 * eps * (|log term| + 2)``; this is outward rounding by error analysis,
not by switching the FPU rounding mode.
"""
from __future__ import annotations

import json
import math
import sys
from concurrent.futures import Executor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable

from .core_matrix import IndexWindow, WindowError

EPS = sys.float_info.epsilon
CONVERGENT = "convergent"
DIVERGENT = "divergent"
UNDECIDED = "undecided"


class ConfigError(ValueError):
    """Malformed or invalid weight configuration."""


# -- configurations ---------------------------------------------------------------

def _positive_number(v, what: str):
    if isinstance(v, bool) or not isinstance(v, (int, float, str, Fraction)):
        raise ConfigError(f"{what} must be a number, got {v!r}")
    try:
        x = Fraction(v) if not isinstance(v, float) else v
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"{what}: cannot parse {v!r}") from exc
    if isinstance(x, float) and not math.isfinite(x):
        raise ConfigError(f"{what} must be finite, got {v!r}")
    if x <= 0:
        raise ConfigError(f"{what} must be positive, got {v!r}")
    return x


class WeightConfig:
    family: str = ""

    def b_exact(self, k: int, n: int) -> Fraction:
        raise NotImplementedError

    def log_b(self, k: int, n: int) -> float:
        raise NotImplementedError

    def b_float(self, k: int, n: int) -> float:
        return math.exp(self.log_b(k, n))

    def to_json_obj(self) -> dict:
        raise NotImplementedError

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), sort_keys=True)


@dataclass(frozen=True)
class TableWeights(WeightConfig):
    entries: dict = field(default_factory=dict)
    family = "table"

    def __post_init__(self):
        if not self.entries:
            raise ConfigError("table needs at least one entry")
        clean = {}
        for (k, n), v in self.entries.items():
            if not (isinstance(k, int) and isinstance(n, int)) or k >= n:
                raise ConfigError(f"table entry ({k}, {n}) needs integers k < n")
            clean[(k, n)] = _positive_number(v, f"b{(k, n)}")
        object.__setattr__(self, "entries", clean)
        w = self.window
        missing = [kn for kn in w.pairs() if kn not in clean]
        if missing:
            raise ConfigError(f"table over {w} is incomplete, missing {missing[:4]}")

    def __hash__(self):
        return hash(tuple(sorted(self.entries.items())))

    @property
    def window(self) -> IndexWindow:
        idx = [i for kn in self.entries for i in kn]
        return IndexWindow(min(idx), max(idx))

    def b_exact(self, k, n):
        return Fraction(self.b_value(k, n))

    def b_value(self, k, n):
        if (k, n) not in self.entries:
            raise WindowError(f"no table entry for ({k}, {n})")
        return self.entries[(k, n)]

    def log_b(self, k, n):
        return math.log(self.b_value(k, n))

    def to_json_obj(self):
        def enc(v):
            if isinstance(v, float):
                return v
            v = Fraction(v)
            return int(v) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
        return {"family": "table",
                "entries": [[k, n, enc(v)] for (k, n), v in sorted(self.entries.items())]}


@dataclass(frozen=True)
class PowerWeights(WeightConfig):
    """b_kn = a_k^n with a_k = scale * ratio^k."""
    scale: Any = 1
    ratio: Any = 2
    family = "power"

    def __post_init__(self):
        object.__setattr__(self, "scale", _positive_number(self.scale, "scale"))
        object.__setattr__(self, "ratio", _positive_number(self.ratio, "ratio"))

    @property
    def ln_c(self) -> float:
        return math.log(self.scale)

    @property
    def ln_s(self) -> float:
        return math.log(self.ratio)

    def a(self, k: int) -> Fraction:
        return Fraction(self.scale) * Fraction(self.ratio) ** k

    def b_exact(self, k, n):
        if k >= n:
            raise ValueError(f"b_kn needs k < n, got ({k}, {n})")
        return self.a(k) ** n

    def b_value(self, k, n):
        return self.b_exact(k, n)

    def log_b(self, k, n):
        return n * self.ln_c + k * n * self.ln_s

    def to_json_obj(self):
        return {"family": "power", "a": {"scale": _num_json(self.scale), "ratio": _num_json(self.ratio)}}


@dataclass(frozen=True)
class GeometricWeights(PowerWeights):
    """a_k = s^k with s > 1."""

    def __init__(self, s):
        object.__setattr__(self, "scale", 1)
        object.__setattr__(self, "ratio", s)
        self.__post_init__()

    family = "geometric"

    def __post_init__(self):
        super().__post_init__()
        if self.ratio <= 1:
            raise ConfigError(f"geometric family needs s > 1, got {self.ratio}")

    @property
    def s(self):
        return self.ratio

    def __repr__(self):
        return f"GeometricWeights(s={self.ratio})"

    def to_json_obj(self):
        return {"family": "geometric", "s": _num_json(self.ratio)}


def _num_json(v):
    if isinstance(v, float):
        return v
    v = Fraction(v)
    return int(v) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


def parse_weight_config(obj: Any) -> WeightConfig:
    """Build a configuration from its JSON object form."""
    if not isinstance(obj, dict) or "family" not in obj:
        raise ConfigError("weight config must be an object with a 'family' key")
    fam = obj["family"]
    if fam == "geometric":
        if "s" not in obj:
            raise ConfigError("geometric family needs 's'")
        return GeometricWeights(obj["s"])
    if fam == "power":
        a = obj.get("a")
        if not isinstance(a, dict):
            raise ConfigError("power family needs 'a': {'scale': c, 'ratio': s}")
        unknown = set(a) - {"scale", "ratio"}
        if unknown:
            raise ConfigError(f"unknown keys in 'a': {sorted(unknown)}")
        return PowerWeights(a.get("scale", 1), a.get("ratio", 2))
    if fam == "table":
        rows = obj.get("entries")
        if not isinstance(rows, list):
            raise ConfigError("table family needs 'entries': [[k, n, b], ...]")
        entries = {}
        for row in rows:
            if not (isinstance(row, list) and len(row) == 3):
                raise ConfigError(f"bad table row {row!r}")
            k, n, v = row
            if (k, n) in entries:
                raise ConfigError(f"duplicate table entry ({k}, {n})")
            entries[(k, n)] = v
        return TableWeights(entries)
    raise ConfigError(f"unknown family {fam!r}")


def b_value(cfg: WeightConfig, k: int, n: int):
    """b_kn, exact where the configuration is exact."""
    if k >= n:
        raise ValueError(f"b_kn needs k < n, got ({k}, {n})")
    v = cfg.b_value(k, n)
    if v <= 0:
        raise ConfigError(f"nonpositive weight b{(k, n)} = {v}")
    return v


# -- estimates -----------------------------------------------------------------------

@dataclass(frozen=True)
class TruncationBudget:
    max_radius: int = 60
    max_terms: int = 4000
    target_tail: float = 1e-13

    def __post_init__(self):
        if self.max_radius < 1 or self.max_terms < 1 or not self.target_tail > 0:
            raise ValueError("budget fields must be positive")


@dataclass(frozen=True)
class SeriesEstimate:
    name: str
    partial_sum: float
    tail_bound: float
    terms_used: int
    verdict: str
    certificate: str = ""

    @property
    def upper(self) -> float:
        return self.partial_sum + self.tail_bound

    def contains(self, value: float) -> bool:
        return self.partial_sum <= value <= self.upper

    def to_json_obj(self) -> dict:
        tail = self.tail_bound if math.isfinite(self.tail_bound) else "inf"
        return {"name": self.name, "verdict": self.verdict, "partial_sum": self.partial_sum,
                "tail_bound": tail, "terms_used": self.terms_used,
                "certificate": self.certificate}


def _down(x: float) -> float:
    return math.nextafter(x, -math.inf)


def _up(x: float) -> float:
    return math.nextafter(x, math.inf)


class _Acc:
    """Certified accumulator of positive terms: keeps lower values and slack separately."""

    __slots__ = ("lows", "slacks")

    def __init__(self):
        self.lows: list[float] = []
        self.slacks: list[float] = []

    def add_log(self, log_t: float) -> float:
        t = math.exp(log_t)
        d = 4 * EPS * (abs(log_t) + 2)
        self.lows.append(t * (1 - d))
        self.slacks.append(t * 2 * d + 1e-320)
        return t

    def add_interval(self, lo: float, hi: float) -> None:
        self.lows.append(lo)
        self.slacks.append(max(hi - lo, 0.0))

    def __len__(self):
        return len(self.lows)

    def lower(self) -> float:
        return max(_down(_down(math.fsum(self.lows))), 0.0)

    def slack(self) -> float:
        return _up(_up(math.fsum(self.slacks)) + 4 * EPS * math.fsum(self.lows))

    def estimate(self, name, tail, verdict, certificate) -> SeriesEstimate:
        if not math.isfinite(tail):
            return SeriesEstimate(name, self.lower(), math.inf, len(self), verdict, certificate)
        return SeriesEstimate(name, self.lower(), _up(self.slack() + tail * (1 + 8 * EPS)),
                              len(self), verdict, certificate)


def _exact_estimate(name: str, value: Fraction, terms: int, certificate="finite exact sum") -> SeriesEstimate:
    v = float(value)
    if Fraction(v) > value:
        v = _down(v)
    gap = value - Fraction(v)
    tail = float(gap)
    if Fraction(tail) < gap:
        tail = _up(tail)
    return SeriesEstimate(name, v, tail, terms, CONVERGENT, certificate)


def _geometric(name: str, log_first: float, log_ratio: float, budget: TruncationBudget,
               target: float | None = None) -> SeriesEstimate:
    """Sum exp(log_first + j*log_ratio), j >= 0, term by term with a geometric tail."""
    acc = _Acc()
    if log_ratio >= 0:
        for j in range(min(budget.max_terms, 64)):
            acc.add_log(log_first + j * log_ratio)
        return acc.estimate(name, math.inf, DIVERGENT,
                            "ratio >= 1: terms bounded below by the first term")
    target = budget.target_tail if target is None else target
    one_minus = -math.expm1(log_ratio)
    running = 0.0
    j = 0
    while True:
        running += acc.add_log(log_first + j * log_ratio)
        j += 1
        tail = math.exp(log_first + j * log_ratio) / one_minus * (1 + 16 * EPS * (abs(log_first) + j + 2))
        if tail <= target * running or j >= budget.max_terms:
            break
    return acc.estimate(name, tail, CONVERGENT, f"geometric tail, ratio {math.exp(log_ratio):.6g}")


# -- single series -------------------------------------------------------------------------

def _check_pair(k, n):
    if k >= n:
        raise ValueError(f"series needs k < n, got ({k}, {n})")


def _s_right_power(cfg: PowerWeights, k, n, budget, log_scale=0.0, target=None):
    # r = k-1, k-2, ...: b_rn / b_rk = c^(n-k) s^(r(n-k))
    d = n - k
    return _geometric(f"S^R[{k},{n}]", d * cfg.ln_c + (k - 1) * d * cfg.ln_s - log_scale,
                      -d * cfg.ln_s, budget, target)


def _s_left_power(cfg: PowerWeights, k, n, budget, log_scale=0.0, target=None):
    # m = n+1, n+2, ...: b_km / b_nm = s^((k-n)m)
    return _geometric(f"S^L[{k},{n}]", (k - n) * (n + 1) * cfg.ln_s - log_scale,
                      (k - n) * cfg.ln_s, budget, target)


def _s_right_table_exact(cfg: TableWeights, k, n) -> Fraction:
    lo = cfg.window.lo
    return sum((Fraction(cfg.b_value(r, n)) / Fraction(cfg.b_value(r, k)) for r in range(lo, k)),
               Fraction(0))


def _s_left_table_exact(cfg: TableWeights, k, n) -> Fraction:
    hi = cfg.window.hi
    return sum((Fraction(cfg.b_value(k, m)) / Fraction(cfg.b_value(n, m)) for m in range(n + 1, hi + 1)),
               Fraction(0))


def _require_table_pair(cfg: TableWeights, k, n):
    if (k, n) not in cfg.window:
        raise WindowError(f"({k}, {n}) outside table window {cfg.window}")


def s_right(cfg: WeightConfig, k: int, n: int, budget: TruncationBudget = TruncationBudget()) -> SeriesEstimate:
    """S^R_kn = sum_{r < k} b_rn / b_rk."""
    _check_pair(k, n)
    if isinstance(cfg, TableWeights):
        _require_table_pair(cfg, k, n)
        return _exact_estimate(f"S^R[{k},{n}]", _s_right_table_exact(cfg, k, n), max(k - cfg.window.lo, 0))
    return _s_right_power(cfg, k, n, budget)


def s_left(cfg: WeightConfig, k: int, n: int, budget: TruncationBudget = TruncationBudget()) -> SeriesEstimate:
    """S^L_kn = sum_{m > n} b_km / b_nm."""
    _check_pair(k, n)
    if isinstance(cfg, TableWeights):
        _require_table_pair(cfg, k, n)
        return _exact_estimate(f"S^L[{k},{n}]", _s_left_table_exact(cfg, k, n), max(cfg.window.hi - n, 0))
    return _s_left_power(cfg, k, n, budget)


def closed_form_s_right(cfg: PowerWeights, k: int, n: int) -> float:
    """c^(n-k) s^((k-1)(n-k)) / (1 - s^-(n-k)); infinite when s <= 1."""
    _check_pair(k, n)
    d = n - k
    if cfg.ratio <= 1:
        return math.inf
    return math.exp(d * cfg.ln_c + (k - 1) * d * cfg.ln_s) / -math.expm1(-d * cfg.ln_s)


def closed_form_s_left(cfg: PowerWeights, k: int, n: int) -> float:
    """q^(n+1) / (1 - q) with q = a_k / a_n; infinite when q >= 1."""
    _check_pair(k, n)
    if cfg.ratio <= 1:
        return math.inf
    lq = (k - n) * cfg.ln_s
    return math.exp((n + 1) * lq) / -math.expm1(lq)


# -- E(b) and E_m(b) ---------------------------------------------------------------------------
#
# For the power family the triple-sum term with k = n - i, r = n + j is
#     b_kr / (b_kn b_nr) = c^-n s^-(n^2) s^-(i j),
# and sum_{j>=1} sum_{i>=I} s^-(ij) <= C^2 s^-I with C = 1/(1 - 1/s).

def _one_side_upper(logf: Callable[[int], float], start: int, step: int) -> float:
    """Upper bound of sum_{j>=0} exp(logf(start + j*step)) for log-concave logf tending to -inf."""
    total = 0.0
    n = start
    peak = logf(start)
    while True:
        cur = logf(n)
        peak = max(peak, cur)
        total += math.exp(cur)
        nxt = logf(n + step)
        if nxt - cur <= -math.log(2) and nxt < peak - 60:
            # ratios only shrink from here on, so the rest is at most 2 * next term
            total += 2 * math.exp(nxt)
            break
        n += step
    return total * (1 + 1e-12)


def _log_concave_sum_upper(logf: Callable[[int], float], start: int = 0) -> float:
    """Upper bound of sum_{n in Z} exp(logf(n))."""
    return _one_side_upper(logf, start, 1) + _one_side_upper(logf, start - 1, -1)


def _power_e_consts(cfg: PowerWeights):
    a, lc = cfg.ln_s, cfg.ln_c
    log_c2 = -2 * math.log(-math.expm1(-a))  # ln C^2
    return a, lc, log_c2


def _e_box_tail(cfg: PowerWeights, lo_cut: int, hi_cut: int | None) -> float:
    """Bound on the terms with k < lo_cut or (if hi_cut is given) r > hi_cut."""
    a, lc, log_c2 = _power_e_consts(cfg)

    def low(n):
        return -n * lc - n * n * a + log_c2 - a * max(1, n - lo_cut + 1)

    total = _log_concave_sum_upper(low)
    if hi_cut is not None:
        def high(n):
            return -n * lc - n * n * a + log_c2 - a * max(1, hi_cut - n + 1)
        total += _log_concave_sum_upper(high)
    return total


def _box_radius(cfg: PowerWeights, budget: TruncationBudget) -> int:
    for radius in range(2, budget.max_radius + 1):
        if _e_box_tail(cfg, -radius, radius) <= budget.target_tail:
            return radius
    return budget.max_radius


def _divergent_e(name, cfg, top):
    acc = _Acc()
    # the terms with n = 0 are s^-(ij) >= 1 for s <= 1: infinitely many terms >= 1
    for i in range(1, 6):
        for j in range(1, 6):
            if top is None or j <= top:
                acc.add_log(-i * j * cfg.ln_s)
    return acc.estimate(name, math.inf, DIVERGENT, "s <= 1: infinitely many terms >= 1")


def _triple_box(cfg: PowerWeights, lo: int, hi: int, name: str, tail: float) -> SeriesEstimate:
    a, lc = cfg.ln_s, cfg.ln_c
    acc = _Acc()
    for n in range(lo + 1, hi):
        base = -n * lc - n * n * a
        for i in range(1, n - lo + 1):
            for j in range(1, hi - n + 1):
                acc.add_log(base - i * j * a)
    return acc.estimate(name, tail, CONVERGENT, f"box [{lo}, {hi}], quadratic-exponent tail bound")


def _table_e_exact(cfg: TableWeights, top: int | None = None) -> tuple[Fraction, int]:
    w = cfg.window
    total, count = Fraction(0), 0
    b = {kn: Fraction(v) for kn, v in cfg.entries.items()}
    hi = w.hi if top is None else min(top, w.hi)
    for k in range(w.lo, hi + 1):
        for n in range(k + 1, hi + 1):
            for r in range(n + 1, hi + 1):
                total += b[(k, r)] / (b[(k, n)] * b[(n, r)])
                count += 1
    return total, count


def e_total(cfg: WeightConfig, budget: TruncationBudget = TruncationBudget()) -> SeriesEstimate:
    """E(b) = sum_{k<n<r} b_kr / (b_kn b_nr), summed over a symmetric index box."""
    if isinstance(cfg, TableWeights):
        v, count = _table_e_exact(cfg)
        return _exact_estimate("E", v, count)
    if cfg.ratio <= 1:
        return _divergent_e("E", cfg, None)
    radius = _box_radius(cfg, budget)
    return _triple_box(cfg, -radius, radius, "E", _e_box_tail(cfg, -radius, radius))


def e_m(cfg: WeightConfig, m: int, budget: TruncationBudget = TruncationBudget()) -> SeriesEstimate:
    """E_m(b) = sum_{k<n<r<=m} b_kr / (b_kn b_nr)."""
    name = f"E_m[{m}]"
    if isinstance(cfg, TableWeights):
        v, count = _table_e_exact(cfg, m)
        return _exact_estimate(name, v, count)
    if cfg.ratio <= 1:
        return _divergent_e(name, cfg, None)
    radius = _box_radius(cfg, budget)
    lo = -radius
    if m - lo < 2:
        acc = _Acc()
        return acc.estimate(name, _e_box_tail(cfg, lo, None), CONVERGENT, "empty box, tail bound only")
    return _triple_box(cfg, lo, m, name, _e_box_tail(cfg, lo, None))


def e_routes(cfg: WeightConfig, budget: TruncationBudget = TruncationBudget()) -> dict[str, SeriesEstimate]:
    """Three evaluations of E(b): the triple sum, sum S^L/b and sum S^R/b."""
    out = {"triple": e_total(cfg, budget)}
    if isinstance(cfg, TableWeights):
        w = cfg.window
        b = {kn: Fraction(v) for kn, v in cfg.entries.items()}
        left = sum((_s_left_table_exact(cfg, k, n) / b[(k, n)] for k, n in w.pairs()), Fraction(0))
        right = sum((_s_right_table_exact(cfg, k, n) / b[(k, n)] for k, n in w.pairs()), Fraction(0))
        out["sum_left"] = _exact_estimate("E via S^L/b", left, len(w.pairs()))
        out["sum_right"] = _exact_estimate("E via S^R/b", right, len(w.pairs()))
        return out
    if cfg.ratio <= 1:
        out["sum_left"] = _divergent_e("E via S^L/b", cfg, None)
        out["sum_right"] = _divergent_e("E via S^R/b", cfg, None)
        return out
    radius = _box_radius(cfg, budget)
    a, lc, log_c2 = _power_e_consts(cfg)
    log_row = log_c2 - a  # ln(C^2 / s) bounds sum_{i,j>=1} s^-(ij)
    inner_target = budget.target_tail * 1e-3
    for key, fn, name in (("sum_left", _s_left_power, "E via S^L/b"),
                          ("sum_right", _s_right_power, "E via S^R/b")):
        acc = _Acc()
        inner_tail = 0.0
        for k in range(-radius, radius + 1):
            for n in range(k + 1, radius + 1):
                est = fn(cfg, k, n, budget, log_scale=cfg.log_b(k, n), target=inner_target)
                acc.add_interval(est.partial_sum, est.partial_sum)
                inner_tail += est.tail_bound
        def row(n, lc=lc, a=a, log_row=log_row):
            return -n * lc - n * n * a + log_row

        if key == "sum_left":
            # omitted: lowest index k < -R, or middle index n > R
            omitted = _e_box_tail(cfg, -radius, None) + _one_side_upper(row, radius + 1, 1)
        else:
            # omitted: middle index n < -R, or top index r > R
            omitted = _e_box_tail_high(cfg, radius) + _one_side_upper(row, -radius - 1, -1)
        out[key] = acc.estimate(name, inner_tail + omitted, CONVERGENT,
                                f"pairs in [{-radius}, {radius}], inner geometric tails")
    return out


def _e_box_tail_high(cfg: PowerWeights, hi_cut: int) -> float:
    a, lc, log_c2 = _power_e_consts(cfg)
    return _log_concave_sum_upper(lambda n: -n * lc - n * n * a + log_c2 - a * max(1, hi_cut - n + 1))


def routes_consistent(routes: dict[str, SeriesEstimate]) -> bool:
    """Pairwise overlap of the certified intervals."""
    ests = list(routes.values())
    if any(e.verdict != CONVERGENT for e in ests):
        return len({e.verdict for e in ests}) == 1
    lo = max(e.partial_sum for e in ests)
    hi = min(e.upper for e in ests)
    return lo <= hi


# -- nested series ----------------------------------------------------------------------------

def _interval_recip_one_plus(lo: float, hi: float) -> tuple[float, float]:
    """[1/(1+hi), 1/(1+lo)] rounded outward."""
    return _down(1 / (1 + hi) * (1 - 2 * EPS)), _up(1 / (1 + lo) * (1 + 2 * EPS))


def _nested_power(cfg: PowerWeights, k: int, n: int, budget, kind: str) -> SeriesEstimate:
    name = f"{'sigma' if kind == 'sigma' else 'S^RL'}[{k},{n}]"
    if cfg.ratio <= 1:
        return SeriesEstimate(name, 0.0, math.inf, 0, UNDECIDED,
                              "inner S^R divergent: series not defined")
    a, lc = cfg.ln_s, cfg.ln_c
    inner_target = budget.target_tail * 1e-3
    acc = _Acc()

    def factor_right(i, m):
        # 1 / (1 + S^R_im / b_im)
        e = _s_right_power(cfg, i, m, budget, log_scale=cfg.log_b(i, m), target=inner_target)
        return _interval_recip_one_plus(e.partial_sum, e.upper)

    if kind == "sigma":
        # term = (b_km / b_nm) / ((1 + S^R_km/b_km)(1 + S^R_nm/b_nm)) <= b_km / b_nm
        log_ratio = (k - n) * a
        for m in range(n + 1, n + 1 + budget.max_terms):
            f1 = factor_right(k, m)
            f2 = factor_right(n, m)
            base = math.exp((k - n) * m * a)
            d = 4 * EPS * (abs((k - n) * m * a) + 2)
            lo = base * (1 - d) * f1[0] * f2[0] * (1 - 4 * EPS)
            hi = base * (1 + d) * f1[1] * f2[1] * (1 + 4 * EPS)
            acc.add_interval(lo, hi)
            tail = math.exp((k - n) * (m + 1) * a) / -math.expm1(log_ratio) * (1 + 1e-12)
            if tail <= budget.target_tail * math.fsum(acc.lows):
                break
        return acc.estimate(name, tail, CONVERGENT, "terms bounded by S^L terms")

    # S^{R,L}: term = [1/(1 + S^R_km/b_km)] * [1/((S^L_nm + S^R_nm)/b_km)]
    if n == k + 1:
        # terms tend to a_k^(k+1) = c^n s^(k(k+1)) > 0: certify a positive lower bound
        start = max(n + 1, math.ceil(-lc / (2 * a)) + 1)
        for m in range(n + 1, start + 1):
            _add_rl_term(cfg, acc, k, n, m, budget, inner_target)
        rho1 = math.exp(-k * lc - (start + k * k - k) * a) / -math.expm1(-(start - k) * a)
        rho2 = math.exp(-(start - n) * (lc + (start + n) * a))
        kappa = math.exp(n * lc + k * (k + 1) * a) * -math.expm1(-a) / ((1 + rho1) * (1 + rho2))
        return acc.estimate(name, math.inf, DIVERGENT,
                            f"terms >= {kappa:.6g} > 0 for all m >= {start}")
    # n >= k+2: term <= c^n s^(m(k-n+1) + n(n-1)), geometric in m
    log_ratio = (k - n + 1) * a
    for m in range(n + 1, n + 1 + budget.max_terms):
        _add_rl_term(cfg, acc, k, n, m, budget, inner_target)
        tail = math.exp(n * lc + (m + 1) * (k - n + 1) * a + n * (n - 1) * a) / -math.expm1(log_ratio)
        tail *= 1 + 1e-12
        if tail <= budget.target_tail * math.fsum(acc.lows):
            break
    return acc.estimate(name, tail, CONVERGENT, f"geometric majorant, ratio {math.exp(log_ratio):.6g}")


def _add_rl_term(cfg, acc, k, n, m, budget, target):
    lb = cfg.log_b(k, m)
    r_km = _s_right_power(cfg, k, m, budget, log_scale=lb, target=target)
    f1 = _interval_recip_one_plus(r_km.partial_sum, r_km.upper)
    l_nm = _s_left_power(cfg, n, m, budget, log_scale=lb, target=target)
    r_nm = _s_right_power(cfg, n, m, budget, log_scale=lb, target=target)
    den_lo = l_nm.partial_sum + r_nm.partial_sum
    den_hi = l_nm.upper + r_nm.upper
    lo = f1[0] / den_hi * (1 - 4 * EPS)
    hi = f1[1] / den_lo * (1 + 4 * EPS)
    acc.add_interval(lo, hi)


def _nested_table(cfg: TableWeights, k, n, kind) -> SeriesEstimate:
    b = {kn: Fraction(v) for kn, v in cfg.entries.items()}
    total = Fraction(0)
    hi = cfg.window.hi
    for m in range(n + 1, hi + 1):
        first = _s_right_table_exact(cfg, k, m) + b[(k, m)]
        if kind == "sigma":
            second = _s_right_table_exact(cfg, n, m) + b[(n, m)]
        else:
            second = _s_left_table_exact(cfg, n, m) + _s_right_table_exact(cfg, n, m)
        total += b[(k, m)] ** 2 / (first * second)
    name = f"{'sigma' if kind == 'sigma' else 'S^RL'}[{k},{n}]"
    return _exact_estimate(name, total, max(hi - n, 0))


def sigma(cfg: WeightConfig, k: int, n: int, budget: TruncationBudget = TruncationBudget()) -> SeriesEstimate:
    """sigma_kn = sum_{m>n} b_km^2 / ([S^R_km + b_km][S^R_nm + b_nm])."""
    _check_pair(k, n)
    if isinstance(cfg, TableWeights):
        _require_table_pair(cfg, k, n)
        return _nested_table(cfg, k, n, "sigma")
    return _nested_power(cfg, k, n, budget, "sigma")


def s_right_left(cfg: WeightConfig, k: int, n: int, budget: TruncationBudget = TruncationBudget()) -> SeriesEstimate:
    """S^{R,L}_kn = sum_{m>n} b_km^2 / ([S^R_km + b_km][S^L_nm + S^R_nm])."""
    _check_pair(k, n)
    if isinstance(cfg, TableWeights):
        _require_table_pair(cfg, k, n)
        return _nested_table(cfg, k, n, "rl")
    return _nested_power(cfg, k, n, budget, "rl")


# -- classification ------------------------------------------------------------------------------

COMMUTATION_FLAG = "commutation theorem applies; type III_1 expected"
ERGODICITY_ASSUMPTION = "ergodicity of mu_b is assumed, not certified"


@dataclass
class ConditionVerdict:
    name: str
    verdict: str
    meaning: str
    series: list[SeriesEstimate] = field(default_factory=list)
    note: str = ""

    def to_json_obj(self) -> dict:
        out = {"verdict": self.verdict, "meaning": self.meaning,
               "series": [s.to_json_obj() for s in self.series]}
        if self.note:
            out["note"] = self.note
        return out


@dataclass
class ClassificationReport:
    config: WeightConfig
    window: IndexWindow
    budget: TruncationBudget
    conditions: dict[str, ConditionVerdict]
    flags: list[str]
    consistent: bool

    @property
    def undecided(self) -> bool:
        return any(c.verdict == UNDECIDED for c in self.conditions.values())

    def to_json_obj(self) -> dict:
        return {
            "kind": "classification",
            "config": self.config.to_json_obj(),
            "window": [self.window.lo, self.window.hi],
            "budget": {"max_radius": self.budget.max_radius, "max_terms": self.budget.max_terms,
                       "target_tail": self.budget.target_tail},
            "conditions": {k: v.to_json_obj() for k, v in self.conditions.items()},
            "flags": list(self.flags),
            "consistent": self.consistent,
        }

    def summary_lines(self) -> list[str]:
        lines = [f"{name}: {c.verdict} ({c.meaning})" for name, c in self.conditions.items()]
        e = self.conditions["inversion_equivalent"]
        if e.verdict == CONVERGENT:
            lines.append(f"E(b) convergent; {COMMUTATION_FLAG}")
        lines.extend(f"flag: {f}" for f in self.flags if f != COMMUTATION_FLAG)
        return lines


def _all_of(name, ests, meaning, divergent_note=""):
    verdicts = {e.verdict for e in ests}
    if DIVERGENT in verdicts:
        v = DIVERGENT
    elif UNDECIDED in verdicts:
        v = UNDECIDED
    else:
        v = CONVERGENT
    return ConditionVerdict(name, v, meaning, list(ests), divergent_note if v == DIVERGENT else "")


def _need_infinite(name, ests, meaning):
    """Condition that every series diverges."""
    verdicts = {e.verdict for e in ests}
    if verdicts == {DIVERGENT}:
        v = "condition met"
    elif CONVERGENT in verdicts:
        v = "condition unmet"
    else:
        v = UNDECIDED
    return ConditionVerdict(name, v, meaning, list(ests))


def classify(cfg: WeightConfig, window: IndexWindow | None = None,
             budget: TruncationBudget = TruncationBudget(),
             executor: Executor | None = None) -> ClassificationReport:
    """Evaluate every condition over the pairs of ``window``."""
    if window is None:
        if not isinstance(cfg, TableWeights):
            raise ValueError("window required for non-table families")
        window = cfg.window
    if isinstance(cfg, TableWeights) and window not in cfg.window:
        raise WindowError(f"window {window} not inside table window {cfg.window}")
    pairs = window.pairs()
    mapper: Callable = executor.map if executor is not None else map

    def run(fn: Callable, items: Iterable):
        return list(mapper(lambda kn: fn(cfg, kn[0], kn[1], budget), items))

    right = run(s_right, pairs)
    left = run(s_left, pairs)
    sig = run(sigma, pairs)
    rl = run(s_right_left, pairs)
    e = e_total(cfg, budget)
    ems = list(mapper(lambda m: e_m(cfg, m, budget), range(window.lo + 2, window.hi + 1)))

    conditions: dict[str, ConditionVerdict] = {}
    conditions["right_qi"] = _all_of("right_qi", right, "S^R_kn finite iff right translates are equivalent")
    conditions["left_qi"] = _all_of("left_qi", left, "S^L_kn finite iff left translates are equivalent",
                                    "left translates mutually singular to mu_b (S^L_kn infinite)")
    conditions["inversion_equivalent"] = ConditionVerdict(
        "inversion_equivalent", e.verdict, "E(b) finite implies inversion-equivalence", [e])
    if ems:
        ev = {x.verdict for x in ems}
        erg = ("sufficient condition met" if ev == {CONVERGENT}
               else "sufficient condition unmet" if DIVERGENT in ev else UNDECIDED)
    else:
        erg = "sufficient condition met" if e.verdict == CONVERGENT else UNDECIDED
    conditions["ergodicity"] = ConditionVerdict("ergodicity", erg, "E_m(b) finite for all m", ems)
    if conditions["right_qi"].verdict == DIVERGENT:
        conditions["irreducibility"] = ConditionVerdict(
            "irreducibility", "not-applicable", "sigma_kn infinite for all k<n", sig,
            "right regular representation undefined")
        conditions["factor"] = ConditionVerdict(
            "factor", "not-applicable", "S^{R,L}_kn infinite for all k<n", rl,
            "regular representations undefined")
    else:
        conditions["irreducibility"] = _need_infinite("irreducibility", sig, "sigma_kn infinite for all k<n")
        conditions["factor"] = _need_infinite("factor", rl, "S^{R,L}_kn infinite for all k<n")

    flags = []
    if e.verdict == CONVERGENT:
        flags.append(COMMUTATION_FLAG)
    flags.append(ERGODICITY_ASSUMPTION)
    consistent = True
    if e.verdict == CONVERGENT:
        consistent = (conditions["right_qi"].verdict == CONVERGENT
                      and conditions["left_qi"].verdict == CONVERGENT)
    return ClassificationReport(cfg, window, budget, conditions, flags, consistent)
