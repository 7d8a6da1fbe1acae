from fractions import Fraction as Fr

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from pfrontier.errors import DomainError
from pfrontier.pindex import (
    BoundViolation, DegenerateTreeError, PeriodSkipped, RiskNeutralWeight, call_price,
    compute_records, estimate_pi, modified_p_ratio, p_index, p_index_bounds, p_index_closed_form,
    p_ratio, portfolio_p_index, put_price, tree_weight, value_weighted_p_index,
)

from conftest import pbar

W = RiskNeutralWeight(0.55, 1.01)
BAR = pbar(100.0, 110.0, 90.0)


# --- risk-neutral weight ---------------------------------------------------


def test_pi_hand_value():
    assert estimate_pi(BAR, 0.01).pi == pytest.approx(float((Fr("1.01") - Fr("0.9")) / Fr("0.2")), abs=1e-15)


def test_pi_invalid_without_fallback_skips():
    bad = pbar(100.0, 110.0, 102.0)
    assert tree_weight(bad, 0.01).pi == pytest.approx(-0.125)
    with pytest.raises(PeriodSkipped):
        estimate_pi(bad, 0.01)


def test_pi_degenerate():
    with pytest.raises(DegenerateTreeError):
        estimate_pi(pbar(100.0, 100.0, 100.0), 0.01)


def test_pi_two_period_fallback():
    prev = pbar(100.0, 110.0, 90.0, 100.0, period="2024-01")
    cur = pbar(100.0, 110.0, 102.0, period="2024-02")
    w = estimate_pi(cur, 0.01, prev, 0.01)
    assert w.window_periods == 2 and w.one_plus_r_eff == pytest.approx(1.02)
    assert w.pi == pytest.approx((1.02 - 0.9) / 0.2)
    # default prev rate doubles r
    assert estimate_pi(cur, 0.01, prev).one_plus_r_eff == pytest.approx(1.02)
    # a degenerate current bar also falls back
    flat = pbar(100.0, 100.0, 100.0, period="2024-02")
    assert estimate_pi(flat, 0.01, prev).window_periods == 2


def test_pi_fallback_still_invalid():
    prev = pbar(100.0, 110.0, 102.0, 105.0, period="2024-01")
    cur = pbar(100.0, 110.0, 102.0, period="2024-02")
    with pytest.raises(PeriodSkipped, match="fallback"):
        estimate_pi(cur, 0.01, prev)


# --- prices ----------------------------------------------------------------


def test_put_and_call_hand_values():
    # K = 101, put pays 11 in the down state, call pays 9 in the up state
    assert put_price(BAR, W, 0.01) == pytest.approx(0.45 * 11 / 1.01, rel=1e-14)
    assert call_price(BAR, W, 0.01) == pytest.approx(0.55 * 9 / 1.01, rel=1e-14)
    assert put_price(BAR, W, 0.01) == pytest.approx(4.9010, abs=5e-5)


def test_put_zero_when_strike_at_low():
    assert put_price(pbar(100.0, 110.0, 101.0), W, 0.01) == 0.0


def test_put_deep_in_the_money():
    w = tree_weight(BAR, 0.02)
    p = put_price(BAR, w, 0.2)  # K = 120 >= S0 u
    assert p == pytest.approx(120 / 1.02 - 100, rel=1e-13)
    assert call_price(BAR, w, 0.2) == 0.0


def test_call_deep_in_the_money():
    w = tree_weight(BAR, 0.02)
    assert call_price(BAR, w, -0.2) == pytest.approx(100 - 80 / 1.02, rel=1e-13)


def test_invalid_weight_rejected():
    with pytest.raises(DomainError):
        put_price(BAR, RiskNeutralWeight(1.2, 1.01), 0.01)


# --- p-index ---------------------------------------------------------------


def test_p_index_hand_value_and_closed_form():
    v = p_index(put_price(BAR, W, 0.01), 101.0, 0.01, 0.01)
    want = (Fr("0.11") / Fr("1.01")) * (Fr("0.45") / Fr("1.01"))
    assert v == pytest.approx(float(want), rel=1e-14)
    assert v == pytest.approx(0.048525, abs=5e-7)
    assert p_index_closed_form(0.9, 0.01, W) == pytest.approx(float(want), rel=1e-14)


def test_closed_form_edges():
    assert p_index_closed_form(1.01, 0.01, W) == 0.0
    for delta in (0.0, 0.05, 0.3):
        assert p_index_closed_form(0.0, delta, W) == pytest.approx(0.45 / 1.01, rel=1e-15)
    with pytest.raises(DomainError):
        p_index_closed_form(1.2, 0.01, W)


def test_p_index_bounds():
    assert p_index_bounds(0.01, 0.01) == (0.0, 1 / 1.01)
    lo, hi = p_index_bounds(0.01, 0.05)
    assert lo == pytest.approx(1 / 1.01 - 1 / 1.05)
    with pytest.raises(BoundViolation):
        p_index(1.0, 1.01, 0.01)  # v = 1/(1+r) is not allowed
    with pytest.raises(BoundViolation):
        p_index(0.0, 105.0, 0.01, 0.05)
    assert p_index(1e-300, 101.0, 0.01, 0.01) > 0
    with pytest.raises(DomainError):
        p_index(1.0, 0.0)


def test_p_ratio():
    assert p_ratio(0.05, 0.01, 0.048525) == pytest.approx(0.82432, abs=5e-6)
    assert p_ratio(0.01, 0.01, 0.05) == 0
    assert p_ratio(0.0, 0.01, 0.05) == pytest.approx(-0.2)
    with pytest.raises(DomainError):
        p_ratio(0.1, 0.0, 0.0)


def test_modified_p_ratio():
    got = modified_p_ratio([0.1, 0.2, 0.3], [0.01, 0.02, 0.03])
    assert got == pytest.approx([0.0, 0.5 / (0.5 + 1e-4), 1 / (1 + 1e-4)], rel=1e-12)
    assert modified_p_ratio([0, 1], [1, 0]) == pytest.approx([0, 1e4])
    with pytest.raises(DomainError):
        modified_p_ratio([0.1, 0.1], [0.01, 0.02])


def test_portfolio_p_index():
    assert portfolio_p_index([0.5, 0.5], [0.02, 0.04]) == pytest.approx(0.03)
    assert portfolio_p_index([1.0], [0.07]) == 0.07
    assert portfolio_p_index([0.25, 0.75], [0.01, 0.05]) == pytest.approx(0.04)
    with pytest.raises(DomainError):
        portfolio_p_index([0.5, 0.6], [0.1, 0.1])


def test_value_weighted_p_index():
    assert value_weighted_p_index([2, 4], [100, 100], 0.01) == pytest.approx(6 / 202)
    assert value_weighted_p_index([4.0], [100.0], 0.01) == pytest.approx(p_index(4.0, 101.0))
    p, s0 = np.array([1.0, 3.0, 2.0]), np.array([50.0, 50.0, 50.0])
    v = p / (s0 * 1.02)
    assert value_weighted_p_index(p, s0, 0.02) == pytest.approx(portfolio_p_index([1 / 3] * 3, v))


# --- properties ------------------------------------------------------------

rates = st.floats(0.0, 0.02)


@st.composite
def tree(draw):
    r = draw(rates)
    d = draw(st.floats(0.5, 1.0))
    u = draw(st.floats(1.0 + r + 1e-3, 1.6))
    assume(d < 1.0 + r - 1e-3)
    s0 = draw(st.floats(1.0, 500.0))
    return s0, u, d, r


@given(tree(), st.floats(-0.3, 0.7))
def test_put_call_parity(t, delta):
    s0, u, d, r = t
    bar = pbar(s0, s0 * u, s0 * d)
    w = tree_weight(bar, r)
    assume(w.valid)
    k = s0 * (1 + delta)
    p, c = put_price(bar, w, delta), call_price(bar, w, delta)
    assert abs(c + k / (1 + r) - s0 - p) <= 1e-9 * s0


@given(tree(), st.floats(0.0, 0.5))
def test_bounds_hold(t, delta):
    s0, u, d, r = t
    bar = pbar(s0, s0 * u, s0 * d)
    w = tree_weight(bar, r)
    p = put_price(bar, w, delta)
    assume(p > 0)
    v = p_index(p, s0 * (1 + delta), r, delta)  # raises on violation
    lo, hi = p_index_bounds(r, delta)
    assert lo - 1e-12 <= v < hi


@given(st.floats(0.01, 0.99), rates, st.floats(0.0, 1.0))
def test_flat_case_d_zero(pi, r, delta):
    w = RiskNeutralWeight(pi, 1 + r)
    assert p_index_closed_form(0.0, delta, w) == (1 - pi) / (1 + r)


@given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3), st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3),
       st.lists(st.floats(0.0, 0.9), min_size=3, max_size=3), st.floats(0.0, 1.0))
def test_portfolio_p_index_linear(a, b, v, alpha):
    a, b = np.array(a) + 1e-3, np.array(b) + 1e-3
    a, b = a / a.sum(), b / b.sum()
    mix = alpha * a + (1 - alpha) * b
    mix = mix / mix.sum()
    lhs = portfolio_p_index(mix, v)
    rhs = alpha * portfolio_p_index(a, v) + (1 - alpha) * portfolio_p_index(b, v)
    assert lhs == pytest.approx(rhs, abs=1e-12)


# --- panel records ---------------------------------------------------------


def test_compute_records_two_by_two_trace():
    """Hand trace of the one- and two-period paths.

    2024-01: index pi = (1.01 - 0.9) / 0.2 = 0.55, A priced on its own bar.
    2024-02: index pi = -0.125; the merged window (anchor 100, high 110,
    low 90, rate 0.02) gives pi = 0.6, and A is priced on its merged bar
    (anchor 10, high 12, low 9) with delta = 0.02.
    B has p = 0 in 2024-01 (low equals strike) and no earlier window.
    """
    bars = [
        pbar(100.0, 110.0, 90.0, 100.0, symbol="IDX", period="2024-01"),
        pbar(100.0, 110.0, 102.0, 105.0, symbol="IDX", period="2024-02"),
        pbar(10.0, 12.0, 9.0, 11.0, symbol="A", period="2024-01"),
        pbar(11.0, 12.0, 11.0, 12.0, symbol="A", period="2024-02"),
        pbar(10.0, 11.0, 10.1, 10.5, symbol="B", period="2024-01"),
    ]
    recs, excl = compute_records(bars, "IDX", lambda b: 0.01)
    assert [(r.symbol, r.period_id.label, r.window_periods) for r in recs] == [
        ("A", "2024-01", 1), ("A", "2024-02", 2)]
    r1, r2 = recs
    assert r1.put_price == pytest.approx(0.45 * 1.1 / 1.01, rel=1e-13)
    assert r1.p_index == pytest.approx(0.45 * 1.1 / 1.01 / 10.1, rel=1e-13)
    assert r1.realized_return == pytest.approx(0.1)
    assert r1.p_ratio == pytest.approx((0.1 - 0.01) / r1.p_index)
    assert r2.delta == pytest.approx(0.02) and r2.strike == pytest.approx(10.2)
    assert r2.put_price == pytest.approx(0.4 * 1.2 / 1.02, rel=1e-13)
    assert r2.realized_return == pytest.approx(12 / 11 - 1)
    assert r2.p_ratio == pytest.approx((12 / 11 - 1 - 0.01) / r2.p_index)
    assert [(e.symbol, e.period_id.label, e.reason) for e in excl] == [
        ("B", "2024-01", "p <= 0, no fallback window")]


def test_compute_records_excludes_bound_violations():
    # the stock's own tree is much wider than the index's, so the index weight
    # underprices its put relative to parity when delta > r
    bars = [
        pbar(100.0, 102.0, 99.0, 100.0, symbol="IDX", period="2024-01"),
        pbar(10.0, 20.0, 9.9, 15.0, symbol="A", period="2024-01"),
    ]
    recs, excl = compute_records(bars, "IDX", lambda b: 0.0, delta=0.5)
    assert recs == []
    assert excl[0].reason.startswith("p-index outside bounds")


def test_compute_records_fixed_delta_and_exclusions():
    bars = [
        pbar(100.0, 110.0, 102.0, 105.0, symbol="IDX", period="2024-01"),
        pbar(10.0, 12.0, 9.0, 11.0, symbol="A", period="2024-01"),
        pbar(10.0, 12.0, 9.0, 11.0, symbol="A", period="2024-03"),
    ]
    recs, excl = compute_records(bars, "IDX", lambda b: 0.01, delta=0.05)
    assert recs == []
    assert sorted((e.period_id.label, e.reason) for e in excl) == [
        ("2024-01", "pi invalid after fallback"), ("2024-03", "no index bar")]
