import math

import numpy as np
import pandas as pd
import pytest
import statsmodels.api as sm
from hypothesis import given, settings, strategies as st

from pfrontier.errors import DomainError, InsufficientDataError
from pfrontier.factor_lab import (
    SingularDesignError, bartlett_lrv, decile_performance, decile_returns, fama_macbeth_two_param,
    ff5_alpha, form_deciles, newey_west_cov, newey_west_tstat, ols, run_factor_analysis,
    spread_portfolio, stage1_exposures, two_stage_six_factor,
)
from pfrontier.market_data import FACTOR_NAMES, SyntheticRegime, factors_frame, generate_synthetic_panel
from pfrontier.panel import build_panel


def months(n, start=2010):
    return [f"{start + i // 12:04d}-{i % 12 + 1:02d}" for i in range(n)]


def random_factors(rng, n):
    f = pd.DataFrame(rng.normal(0, 0.03, (n, 5)), index=months(n), columns=list(FACTOR_NAMES))
    f["rf"] = 0.002
    return f


# --- deciles ---------------------------------------------------------------


def test_deciles_twenty():
    cs = [(f"S{i:02d}", float(i)) for i in range(20)]
    groups = form_deciles(cs, "2020-01")
    assert [g.portfolio_id for g in groups] == list(range(1, 11))
    assert all(len(g.members) == 2 for g in groups)
    assert set(groups[-1].members) == {"S19", "S18"} and set(groups[0].members) == {"S00", "S01"}
    assert groups[-1].formation_v_mean == 18.5 and groups[-1].formation_v2_mean == (18 ** 2 + 19 ** 2) / 2


def test_deciles_remainder_goes_high():
    groups = form_deciles([(f"S{i:02d}", float(i)) for i in range(23)], "2020-01")
    assert [len(g.members) for g in reversed(groups)] == [3, 3, 3, 2, 2, 2, 2, 2, 2, 2]


def test_deciles_ties_by_symbol():
    groups = form_deciles([(f"S{i:02d}", 0.5) for i in range(10)][::-1], "2020-01")
    assert [g.members for g in reversed(groups)] == [(f"S{i:02d}",) for i in range(10)]


def test_deciles_need_ten():
    with pytest.raises(InsufficientDataError, match="2020-07"):
        form_deciles([("A", 1.0)] * 9, "2020-07")


@given(st.lists(st.floats(0, 1), min_size=10, max_size=60))
def test_deciles_partition(vs):
    cs = [(f"S{i:03d}", v) for i, v in enumerate(vs)]
    groups = form_deciles(cs, "m")
    members = [s for g in groups for s in g.members]
    assert sorted(members) == sorted(s for s, _ in cs)
    sizes = [len(g.members) for g in groups]
    assert max(sizes) - min(sizes) <= 1
    highs = [max(dict(cs)[s] for s in g.members) for g in groups]
    lows = [min(dict(cs)[s] for s in g.members) for g in groups]
    assert all(lo_next >= hi for hi, lo_next in zip(highs, lows[1:]))


def test_decile_returns():
    groups = form_deciles([(f"S{i:02d}", float(i)) for i in range(20)], "m")
    rets = {"S19": 0.02, "S18": 0.04, "S00": 0.01}
    out = decile_returns(groups, rets)
    assert out[10] == pytest.approx(0.03) and out[1] == 0.01 and math.isnan(out[5])


def test_spread_portfolio():
    h, l = pd.Series([0.05, 0.01]), pd.Series([0.02, 0.01])
    assert list(spread_portfolio(h, l)) == pytest.approx([0.03, 0.0])
    assert (spread_portfolio(h, h) == 0).all()
    assert list(spread_portfolio(l, h)) == [-x for x in spread_portfolio(h, l)]
    with pytest.raises(DomainError):
        spread_portfolio(h, pd.Series([0.0, 0.0], index=[5, 6]))
    with pytest.raises(DomainError):
        spread_portfolio([1.0, 2.0], [1.0])


# --- OLS -------------------------------------------------------------------


def test_ols_exact_and_orthogonal():
    x = np.arange(10.0)
    res = ols(2 + 3 * x, np.column_stack([np.ones(10), x]))
    assert res.coef == pytest.approx([2, 3]) and np.abs(res.resid).max() < 1e-12
    y = np.array([1.0, -1.0, 1.0, -1.0])
    xs = np.array([1.0, 1.0, -1.0, -1.0])
    assert ols(y, np.column_stack([np.ones(4), xs])).coef[1] == pytest.approx(0, abs=1e-15)


def test_ols_matches_normal_equations():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(12), rng.normal(size=(12, 3))])
    y = rng.normal(size=12)
    want = np.linalg.solve(X.T @ X, X.T @ y)
    res = ols(y, X)
    assert res.coef == pytest.approx(want, abs=1e-10)
    assert np.abs(X.T @ res.resid).max() < 1e-8


def test_ols_singular():
    X = np.column_stack([np.ones(5), np.arange(5.0), 2 * np.arange(5.0)])
    with pytest.raises(SingularDesignError):
        ols(np.arange(5.0), X)
    with pytest.raises(SingularDesignError):
        ols(np.arange(2.0), np.ones((2, 2)))


# --- Newey-West -------------------------------------------------------------


def brute_lrv(x, lags):
    x = np.asarray(x, dtype=float)
    T, m = len(x), sum(x) / len(x)
    total = 0.0
    for j in range(-lags, lags + 1):
        w = 1 - abs(j) / (lags + 1)
        total += w * sum((x[t] - m) * (x[t - abs(j)] - m) for t in range(abs(j), T)) / T
    return total


def test_nw_hand_example():
    res = newey_west_tstat([1.0, 2.0, 3.0], lags=0)
    assert res.mean == 2.0
    assert res.tstat == pytest.approx(2 / math.sqrt((2 / 3) / 3), rel=1e-15)


def test_nw_constant_series_sentinel():
    res = newey_west_tstat([0.3] * 10, 4)
    assert res.tstat == math.inf and res.pvalue == 0.0
    res = newey_west_tstat([-0.3] * 10, 4)
    assert res.tstat == -math.inf
    res = newey_west_tstat([0.0] * 10, 4)
    assert res.tstat == 0.0 and res.pvalue == 1.0


def test_nw_short_series():
    with pytest.raises(DomainError):
        newey_west_tstat([1.0, 2.0, 3.0, 4.0, 5.0], 4)
    with pytest.raises(DomainError):
        newey_west_tstat([1.0, 2.0, 3.0], -1)


def test_nw_matches_brute_force_and_statsmodels():
    rng = np.random.default_rng(1)
    e = rng.normal(size=200)
    x = np.empty(200)
    x[0] = e[0]
    for t in range(1, 200):
        x[t] = 0.6 * x[t - 1] + e[t]
    assert bartlett_lrv(x, 4) == pytest.approx(brute_lrv(x, 4), rel=1e-12)
    res = newey_west_tstat(x, 4)
    fit = sm.OLS(x, np.ones(200)).fit(cov_type="HAC", cov_kwds={"maxlags": 4, "use_correction": False})
    assert res.tstat == pytest.approx(fit.tvalues[0], rel=1e-10)
    assert res.pvalue == pytest.approx(fit.pvalues[0], rel=1e-8)


@settings(max_examples=50)
@given(st.lists(st.floats(-1, 1), min_size=6, max_size=40), st.integers(0, 4))
def test_nw_lrv_non_negative(xs, lags):
    assert bartlett_lrv(xs, lags) >= -1e-15


def test_nw_cov_matches_statsmodels():
    rng = np.random.default_rng(2)
    X = np.column_stack([np.ones(80), rng.normal(size=(80, 2))])
    y = X @ [0.1, 0.5, -0.2] + rng.normal(size=80)
    res = ols(y, X)
    cov = newey_west_cov(X, res.resid, 4)
    fit = sm.OLS(y, X).fit(cov_type="HAC", cov_kwds={"maxlags": 4, "use_correction": False})
    assert cov == pytest.approx(np.asarray(fit.cov_params()), rel=1e-9)


# --- Fama-MacBeth ----------------------------------------------------------


def fm_panel(rng, n_months, gammas, noise=0.0):
    rows = []
    for m in months(n_months):
        v = rng.uniform(0.01, 0.1, 10)
        ret = gammas[0] + gammas[1] * v + gammas[2] * v ** 2 + noise * rng.normal(size=10)
        rows += [{"month": m, "portfolio": p + 1, "ret": ret[p], "v": v[p], "v2": v[p] ** 2} for p in range(10)]
    return pd.DataFrame(rows)


def test_fama_macbeth_exact_fit():
    est = fama_macbeth_two_param(fm_panel(np.random.default_rng(3), 60, (0.001, 20.0, 0.0)))
    assert est.coefficients["gamma0"] == pytest.approx(0.001, abs=1e-8)
    assert est.coefficients["gamma1"] == pytest.approx(20.0, abs=1e-8)
    assert est.coefficients["gamma2"] == pytest.approx(0.0, abs=1e-8)
    assert est.n_obs == 60 and est.lags == 4


def test_fama_macbeth_noise():
    est = fama_macbeth_two_param(fm_panel(np.random.default_rng(4), 120, (0, 0, 0), noise=0.05))
    assert all(abs(t) < 3 for t in est.tstats.values())
    assert all(0 <= p <= 1 for p in est.pvalues.values())


def test_fama_macbeth_drops_singular_month():
    df = fm_panel(np.random.default_rng(5), 20, (0.001, 20.0, 0.0))
    df.loc[df.month == "2010-03", ["v", "v2"]] = [0.05, 0.0025]
    with pytest.warns(UserWarning, match="2010-03"):
        est = fama_macbeth_two_param(df)
    assert est.n_obs == 19


def test_fama_macbeth_too_few_months():
    with pytest.raises(InsufficientDataError):
        fama_macbeth_two_param(fm_panel(np.random.default_rng(6), 5, (0, 1, 0)))


# --- FF5 -------------------------------------------------------------------


def test_ff5_planted_alpha():
    f = random_factors(np.random.default_rng(7), 60)
    est = ff5_alpha(0.004 + 1.0 * f["mkt_rf"], f)
    assert est.coefficients["alpha"] == pytest.approx(0.004, abs=1e-12)
    assert est.coefficients["mkt_rf"] == pytest.approx(1.0, abs=1e-12)
    assert est.coefficients["smb"] == pytest.approx(0.0, abs=1e-12)


def test_ff5_replicates_factor_and_constant():
    f = random_factors(np.random.default_rng(8), 40)
    est = ff5_alpha(f["rmw"], f)
    assert est.coefficients["alpha"] == pytest.approx(0.0, abs=1e-12)
    assert est.coefficients["rmw"] == pytest.approx(1.0, abs=1e-12)
    const = ff5_alpha(pd.Series(0.003, index=f.index), f)
    assert const.coefficients["alpha"] == pytest.approx(0.003, abs=1e-12)


def test_ff5_matches_statsmodels_and_residuals_orthogonal():
    rng = np.random.default_rng(9)
    f = random_factors(rng, 90)
    y = 0.002 + f[list(FACTOR_NAMES)] @ [1.1, 0.3, -0.2, 0.1, 0.0] + rng.normal(0, 0.02, 90)
    est = ff5_alpha(y, f)
    X = sm.add_constant(f[list(FACTOR_NAMES)].to_numpy())
    fit = sm.OLS(y.to_numpy(), X).fit(cov_type="HAC", cov_kwds={"maxlags": 4, "use_correction": False})
    assert est.coefficients["alpha"] == pytest.approx(fit.params[0], rel=1e-10)
    assert est.tstats["alpha"] == pytest.approx(fit.tvalues[0], rel=1e-8)
    resid = est.series["resid"].to_numpy()
    assert np.abs(f[list(FACTOR_NAMES)].to_numpy().T @ resid).max() < 1e-8


def test_ff5_errors():
    f = random_factors(np.random.default_rng(10), 6)
    with pytest.raises(InsufficientDataError):
        ff5_alpha(f["mkt_rf"], f)
    f = random_factors(np.random.default_rng(11), 30)
    f["cma"] = f["hml"]
    with pytest.raises(SingularDesignError):
        ff5_alpha(f["mkt_rf"], f)


# --- two-stage model --------------------------------------------------------


def single_factor_panel(seed, n_stocks=60, n_months=120, noise=0.0):
    regime = SyntheticRegime(factor_means=(0.005, 0, 0, 0, 0), beta_spread=0.8,
                             idio_vol=noise, daily_vol=0.01)
    sp = generate_synthetic_panel(seed, n_stocks, n_months, regime)
    return sp


def test_two_stage_recovers_priced_factor():
    sp = single_factor_panel(12, noise=0.01)
    est = two_stage_six_factor(sp.truth.excess_returns, None, sp.truth.factors)
    lam, se = est.coefficients["mkt_rf"], est.se["mkt_rf"]
    assert abs(lam - 0.005) <= 2 * se
    for name in FACTOR_NAMES[1:]:
        assert abs(est.coefficients[name]) <= 2 * est.se[name] + 1e-12


def test_two_stage_constant_characteristic_is_missing():
    sp = single_factor_panel(13, n_stocks=20, n_months=30, noise=0.01)
    const = sp.truth.excess_returns * 0 + 0.05
    est = two_stage_six_factor(sp.truth.excess_returns, const, sp.truth.factors, name="p_index")
    assert math.isnan(est.coefficients["p_index"])
    assert not math.isnan(est.coefficients["mkt_rf"])


def test_stage1_noiseless_betas_exact():
    sp = single_factor_panel(14, n_stocks=8, n_months=40, noise=0.0)
    truth = sp.truth
    for exp in stage1_exposures(truth.excess_returns, None, truth.factors):
        assert exp.betas == pytest.approx(tuple(truth.betas.loc[exp.symbol]), abs=1e-8)
        assert exp.a_i == pytest.approx(0.0, abs=1e-8) and math.isnan(exp.beta_v)


def test_two_stage_needs_months():
    sp = single_factor_panel(15, n_stocks=10, n_months=9, noise=0.01)
    with pytest.raises(InsufficientDataError):
        two_stage_six_factor(sp.truth.excess_returns, None, sp.truth.factors)


# --- full analysis ----------------------------------------------------------


@pytest.fixture(scope="module")
def small_panel():
    sp = generate_synthetic_panel(21, 25, 40)
    panel = build_panel(sp.bars, sp.rates, "monthly", "INDEX")
    return panel, factors_frame(sp.factors)


@pytest.mark.parametrize("mode", ["pindex", "pratio"])
def test_run_factor_analysis(small_panel, mode):
    panel, factors = small_panel
    rep = run_factor_analysis(panel.frame("p_index"), panel.frame("return"), factors, mode)
    assert list(rep.performance.columns) == ["portfolio", "ann_return", "ann_vol", "t_return", "alpha", "t_alpha"]
    assert list(rep.performance.portfolio) == ["L"] + [str(i) for i in range(2, 10)] + ["H", "H-L", "L-H"]
    assert set(rep.six_factor.coefficients) == {"p_index" if mode == "pindex" else "p_ratio", *FACTOR_NAMES}
    assert set(rep.five_factor.coefficients) == set(FACTOR_NAMES)
    assert (rep.spreads["H-L"] == -rep.spreads["L-H"]).all()
    # each holding month's deciles were formed on the previous month
    first = rep.deciles.returns.index[0]
    assert first == panel.periods[1].label


def test_run_factor_analysis_rejects_small_cross_section(small_panel):
    panel, factors = small_panel
    pv = panel.frame("p_index").iloc[:, :9]
    rv = panel.frame("return").iloc[:, :9]
    with pytest.raises(InsufficientDataError, match=panel.periods[1].label):
        run_factor_analysis(pv, rv, factors)
    with pytest.raises(ValueError):
        run_factor_analysis(pv, rv, factors, mode="beta")


def test_decile_performance_annualization():
    idx = months(24)
    rets = pd.DataFrame({p: [0.01] * 24 for p in range(1, 11)}, index=idx)
    f = random_factors(np.random.default_rng(3), 24)
    perf = decile_performance(rets, f)
    assert perf.loc[0, "ann_return"] == pytest.approx(1.01 ** 12 - 1)
    assert perf.loc[0, "ann_vol"] == 0.0
    assert perf.loc[0, "alpha"] == pytest.approx(0.01 - 0.002, abs=1e-10)
