import math
from fractions import Fraction

import mpmath
import pytest
from hypothesis import given, settings, strategies as st

from trimod.core_matrix import IndexWindow, WindowError
from trimod.weights_series import (CONVERGENT, DIVERGENT, COMMUTATION_FLAG, ConfigError, GeometricWeights,
                                   PowerWeights, TableWeights, TruncationBudget, b_value,
                                   classify, closed_form_s_left, closed_form_s_right, e_m, e_routes,
                                   e_total, parse_weight_config, routes_consistent, s_left, s_right,
                                   s_right_left, sigma)

G2 = GeometricWeights(2)


def brute(cfg, terms):
    mpmath.mp.dps = 40
    return sum(terms, mpmath.mpf(0))


def mp_frac(v):
    v = Fraction(v)
    return mpmath.mpf(v.numerator) / v.denominator


def mp_b(cfg, k, n):
    return (mp_frac(cfg.scale) * mp_frac(cfg.ratio) ** k) ** n


def brute_s_right(cfg, k, n, depth=200):
    return brute(cfg, (mp_b(cfg, r, n) / mp_b(cfg, r, k) for r in range(k - 1, k - 1 - depth, -1)))


def brute_s_left(cfg, k, n, depth=200):
    return brute(cfg, (mp_b(cfg, k, m) / mp_b(cfg, n, m) for m in range(n + 1, n + 1 + depth)))


class TestConfigs:
    def test_geometric_values(self):
        assert b_value(G2, 0, 1) == 1
        assert b_value(G2, 1, 2) == 4
        assert b_value(G2, -1, 1) == Fraction(1, 2)

    def test_table_verbatim(self):
        t = TableWeights({(0, 1): Fraction(3, 7)})
        assert b_value(t, 0, 1) == Fraction(3, 7)
        with pytest.raises(WindowError):
            b_value(t, 0, 2)

    def test_index_order(self):
        with pytest.raises(ValueError):
            b_value(G2, 1, 1)

    @pytest.mark.parametrize("s", [1, 0.5, 0, -2])
    def test_geometric_needs_s_above_one(self, s):
        with pytest.raises(ConfigError):
            GeometricWeights(s)

    @pytest.mark.parametrize("obj", [
        {}, {"family": "nope"}, {"family": "geometric"}, {"family": "power", "a": 3},
        {"family": "power", "a": {"scale": 1, "slope": 2}}, {"family": "table", "entries": [[0, 1]]},
        {"family": "table", "entries": [[0, 1, 1], [0, 1, 2]]}, {"family": "table", "entries": [[1, 0, 1]]},
        {"family": "table", "entries": [[0, 1, -1]]}, {"family": "table", "entries": [[0, 2, 1]]},
    ])
    def test_parse_errors(self, obj):
        with pytest.raises(ConfigError):
            parse_weight_config(obj)

    @pytest.mark.parametrize("cfg", [G2, PowerWeights(3, Fraction(1, 2)),
                                     TableWeights({(0, 1): 1, (1, 2): 2.5, (0, 2): Fraction(1, 3)})])
    def test_json_round_trip(self, cfg):
        back = parse_weight_config(cfg.to_json_obj())
        assert back == cfg and type(back) is type(cfg)


class TestSingleSeries:
    def test_right_example(self):
        e = s_right(G2, 0, 1)
        assert e.verdict == CONVERGENT and e.contains(1.0)
        assert e.tail_bound <= 1e-12

    def test_left_example(self):
        e = s_left(G2, 0, 1)
        assert e.verdict == CONVERGENT and e.contains(0.5)
        assert e.tail_bound <= 1e-12

    @pytest.mark.parametrize("s", [Fraction(3, 2), 2, 3, Fraction(10, 3)])
    @pytest.mark.parametrize("kn", [(0, 1), (-2, 1), (1, 4), (-3, -1)])
    def test_closed_forms_vs_direct_summation(self, s, kn):
        cfg = GeometricWeights(s)
        for series, closed, oracle in ((s_right, closed_form_s_right, brute_s_right),
                                       (s_left, closed_form_s_left, brute_s_left)):
            est = series(cfg, *kn)
            truth = float(oracle(cfg, *kn))
            assert est.contains(truth) or math.isclose(est.partial_sum, truth, rel_tol=1e-14)
            assert math.isclose(closed(cfg, *kn), truth, rel_tol=1e-12)

    def test_right_power_with_scale(self):
        cfg = PowerWeights(Fraction(1, 3), 2)
        est = s_right(cfg, 0, 2)
        assert est.contains(float(brute_s_right(cfg, 0, 2))) or math.isclose(
            est.partial_sum, float(brute_s_right(cfg, 0, 2)), rel_tol=1e-14)

    @pytest.mark.parametrize("ratio", [1, Fraction(1, 2)])
    def test_right_divergent_when_a_not_summable(self, ratio):
        est = s_right(PowerWeights(1, ratio), 0, 1)
        assert est.verdict == DIVERGENT and math.isinf(est.tail_bound)

    def test_left_divergent_for_decreasing_a(self):
        est = s_left(PowerWeights(1, Fraction(1, 2)), 0, 1)
        assert est.verdict == DIVERGENT

    def test_table_finite_sums(self):
        t = TableWeights({(0, 1): 1, (0, 2): 2, (1, 2): 4})
        r = s_right(t, 1, 2)
        assert r.tail_bound == 0 and r.partial_sum == 2.0
        assert s_right(t, 0, 1).partial_sum == 0
        assert s_left(t, 0, 1).partial_sum == 0.5

    def test_partial_sums_grow_with_budget(self):
        cfg = GeometricWeights(Fraction(11, 10))
        sums = [s_left(cfg, 0, 3, TruncationBudget(max_terms=m, target_tail=1e-30)).partial_sum
                for m in (1, 5, 20, 80)]
        assert sums == sorted(sums) and len(set(sums)) == 4

    def test_budget_exhaustion_keeps_enclosure(self):
        cfg = GeometricWeights(Fraction(11, 10))
        truth = float(brute_s_left(cfg, 0, 1, depth=2000))
        e = s_left(cfg, 0, 1, TruncationBudget(max_terms=10))
        assert e.contains(truth)


def brute_e(cfg, radius):
    mpmath.mp.dps = 30
    tot = mpmath.mpf(0)
    for k in range(-radius, radius + 1):
        for n in range(k + 1, radius + 1):
            for r in range(n + 1, radius + 1):
                tot += mp_b(cfg, k, r) / (mp_b(cfg, k, n) * mp_b(cfg, n, r))
    return tot


class TestE:
    def test_geometric_2_against_product_formula(self):
        # for c=1 the terms factor as s^(-n^2) * s^(-ij) with i, j >= 1
        theta = mpmath.nsum(lambda n: mpmath.mpf(2) ** (-n * n), [-mpmath.inf, mpmath.inf])
        g = mpmath.nsum(lambda i: 1 / (mpmath.mpf(2) ** i - 1), [1, mpmath.inf])
        e = e_total(G2)
        assert e.verdict == CONVERGENT and e.tail_bound <= 1e-12
        assert e.contains(float(theta * g)) or math.isclose(e.partial_sum, float(theta * g), rel_tol=1e-14)

    def test_brute_force_box_stays_below(self):
        e = e_total(G2)
        assert float(brute_e(G2, 12)) <= e.upper

    def test_routes_consistent(self):
        routes = e_routes(G2)
        assert set(routes) == {"triple", "sum_left", "sum_right"}
        assert routes_consistent(routes)
        assert all(r.verdict == CONVERGENT for r in routes.values())

    def test_routes_consistent_with_scale(self):
        assert routes_consistent(e_routes(PowerWeights(Fraction(1, 2), 3)))

    def test_e_m_monotone_and_bounded(self):
        e = e_total(G2)
        vals = [e_m(G2, m) for m in range(-3, 5)]
        lows = [v.partial_sum for v in vals]
        assert lows == sorted(lows)
        assert all(v.partial_sum <= e.upper for v in vals)

    def test_e_divergent_for_nonsummable(self):
        assert e_total(PowerWeights(1, 1)).verdict == DIVERGENT

    def test_table_e_exact(self):
        t = TableWeights({(0, 1): 1, (0, 2): 2, (1, 2): 4})
        e = e_total(t)
        assert e.partial_sum == 0.5 and e.tail_bound == 0


def brute_sigma(cfg, k, n, depth=80):
    mpmath.mp.dps = 30
    tot = mpmath.mpf(0)
    for m in range(n + 1, n + 1 + depth):
        a = brute_s_right(cfg, k, m) + mp_b(cfg, k, m)
        b = brute_s_right(cfg, n, m) + mp_b(cfg, n, m)
        tot += mp_b(cfg, k, m) ** 2 / (a * b)
    return tot


def brute_rl(cfg, k, n, depth):
    mpmath.mp.dps = 30
    tot = mpmath.mpf(0)
    for m in range(n + 1, n + 1 + depth):
        a = brute_s_right(cfg, k, m) + mp_b(cfg, k, m)
        b = brute_s_left(cfg, n, m) + brute_s_right(cfg, n, m)
        tot += mp_b(cfg, k, m) ** 2 / (a * b)
    return tot


class TestNested:
    def test_sigma_example(self):
        est = sigma(G2, 0, 1)
        assert est.verdict == CONVERGENT
        truth = float(brute_sigma(G2, 0, 1))
        assert est.partial_sum <= truth * (1 + 1e-15) and truth <= est.upper * (1 + 1e-15)
        assert abs(truth - 1 / 3) < 0.05

    def test_rl_far_pair_converges(self):
        est = s_right_left(G2, 0, 2)
        assert est.verdict == CONVERGENT
        truth = float(brute_rl(G2, 0, 2, 60))
        assert est.partial_sum <= truth * (1 + 1e-15) and truth <= est.upper * (1 + 1e-15)

    def test_rl_adjacent_pair_diverges(self):
        est = s_right_left(G2, 0, 1)
        assert est.verdict == DIVERGENT and "terms >=" in est.certificate
        # the certified lower bound on the terms is visible in brute force
        kappa = float(est.certificate.split(">=")[1].split(">")[0])
        assert float(brute_rl(G2, 0, 1, 40) - brute_rl(G2, 0, 1, 39)) >= kappa

    def test_table_nested(self):
        t = TableWeights({(0, 1): 1, (0, 2): 2, (1, 2): 4})
        sg = sigma(t, 0, 1)
        # sigma_01 = b02^2 / ((S^R_02 + b02)(S^R_12 + b12)) with S^R_02 = 0, S^R_12 = b02/b01
        lo, slack = Fraction(sg.partial_sum), Fraction(sg.tail_bound)
        assert lo <= Fraction(1, 3) <= lo + slack and slack < Fraction(1, 10**15)


class TestClassify:
    def test_geometric_chain(self):
        rep = classify(G2, IndexWindow(-3, 3))
        c = rep.conditions
        assert c["right_qi"].verdict == CONVERGENT
        assert c["left_qi"].verdict == CONVERGENT
        assert c["inversion_equivalent"].verdict == CONVERGENT
        assert COMMUTATION_FLAG in rep.flags and rep.consistent and not rep.undecided
        assert f"E(b) convergent; {COMMUTATION_FLAG}" in rep.summary_lines()

    def test_decreasing_family(self):
        rep = classify(PowerWeights(1, Fraction(1, 2)), IndexWindow(-2, 2))
        left = rep.conditions["left_qi"]
        assert left.verdict == DIVERGENT and "mutually singular" in left.note
        assert COMMUTATION_FLAG not in rep.flags
        assert rep.conditions["irreducibility"].verdict == "not-applicable"

    def test_single_entry_table(self):
        rep = classify(TableWeights({(0, 1): 5}))
        assert not rep.undecided
        for name in ("right_qi", "left_qi", "inversion_equivalent"):
            c = rep.conditions[name]
            assert c.verdict == CONVERGENT and all(s.tail_bound == 0 for s in c.series)

    def test_every_verdict_cites_series(self):
        rep = classify(G2, IndexWindow(-1, 2))
        assert all(c.series for c in rep.conditions.values())

    def test_window_outside_table(self):
        with pytest.raises(WindowError):
            classify(TableWeights({(0, 1): 1}), IndexWindow(0, 2))


@given(st.fractions(min_value=Fraction(21, 20), max_value=5, max_denominator=20),
       st.fractions(min_value=Fraction(1, 4), max_value=4, max_denominator=8),
       st.integers(-4, 4), st.integers(1, 4))
@settings(max_examples=40, deadline=None)
def test_convergent_verdicts_enclose_truth(s, c, k, gap):
    cfg = PowerWeights(c, s)
    n = k + gap
    for series, oracle in ((s_right, brute_s_right), (s_left, brute_s_left)):
        est = series(cfg, k, n)
        assert est.verdict == CONVERGENT
        truth = float(oracle(cfg, k, n, depth=3000))
        assert est.partial_sum <= truth * (1 + 1e-14) and truth <= est.upper * (1 + 1e-14)


@given(st.fractions(min_value=Fraction(11, 10), max_value=4, max_denominator=10))
@settings(max_examples=15, deadline=None)
def test_e_routes_agree_over_family(s):
    assert routes_consistent(e_routes(GeometricWeights(s)))
