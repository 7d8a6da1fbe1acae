"""
Cross-sectional and time-series factor tests on a characteristic panel.

The characteristic is the p-index (or the modified p-ratio). Monthly decile
portfolios are formed on last month's characteristic, their next-month
returns feed a two-parameter Fama-MacBeth regression and FF5 alpha
regressions, and a two-stage procedure estimates the characteristic's factor
return alongside the five Fama-French factors. All inference uses Newey-West
standard errors with Bartlett weights and a standard normal reference.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .backtest import REINVEST, accumulate, annualize
from .errors import DomainError, InsufficientDataError
from .market_data import FACTOR_NAMES, PeriodId
from .pindex import modified_p_ratio

log = logging.getLogger(__name__)

N_GROUPS = 10


class SingularDesignError(DomainError):
    pass


@dataclass(frozen=True)
class DecileAssignment:
    month_id: str
    portfolio_id: int  # 1 = L (lowest characteristic), 10 = H
    members: tuple[str, ...]
    formation_v_mean: float
    formation_v2_mean: float


@dataclass
class OLSResult:
    coef: np.ndarray
    resid: np.ndarray
    fitted: np.ndarray


@dataclass(frozen=True)
class NWResult:
    mean: float
    se: float
    tstat: float
    pvalue: float
    lrv: float


@dataclass
class RegressionEstimate:
    coefficients: dict[str, float]
    tstats: dict[str, float]
    pvalues: dict[str, float]
    lags: int
    n_obs: int
    se: dict[str, float] = field(default_factory=dict)
    series: pd.DataFrame | None = field(default=None, repr=False)


@dataclass(frozen=True)
class FactorExposure:
    symbol: str
    a_i: float
    beta_v: float
    betas: tuple[float, ...]


# ---------------------------------------------------------------------------
# deciles


def form_deciles(cross_section: Iterable[tuple[str, float]], month_id: str) -> list[DecileAssignment]:
    """Ten near-equal groups by descending characteristic; the extra members go to the high end."""
    xs = sorted(cross_section, key=lambda sv: (-sv[1], sv[0]))
    n = len(xs)
    if n < N_GROUPS:
        raise InsufficientDataError(f"{month_id}: {n} eligible stocks, need {N_GROUPS}")
    base, extra = divmod(n, N_GROUPS)
    out = []
    pos = 0
    for k in range(N_GROUPS):
        size = base + (1 if k < extra else 0)
        grp = xs[pos:pos + size]
        pos += size
        vals = np.array([v for _, v in grp])
        out.append(DecileAssignment(month_id, N_GROUPS - k, tuple(s for s, _ in grp),
                                    float(vals.mean()), float((vals ** 2).mean())))
    return sorted(out, key=lambda a: a.portfolio_id)


def decile_returns(assignments: Iterable[DecileAssignment],
                   next_month_returns: Mapping[str, float]) -> dict[int, float]:
    out = {}
    for a in assignments:
        rets = [next_month_returns[s] for s in a.members
                if s in next_month_returns and np.isfinite(next_month_returns[s])]
        out[a.portfolio_id] = float(np.mean(rets)) if rets else math.nan
    return out


def spread_portfolio(long_series, short_series):
    if isinstance(long_series, pd.Series) and isinstance(short_series, pd.Series):
        if not long_series.index.equals(short_series.index):
            raise DomainError("long and short series are not aligned")
        return long_series - short_series
    a = np.asarray(long_series, dtype=float)
    b = np.asarray(short_series, dtype=float)
    if a.shape != b.shape:
        raise DomainError("long and short series are not aligned")
    return a - b


# ---------------------------------------------------------------------------
# regression primitives


def ols(y, X) -> OLSResult:
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DomainError("design matrix shape does not match response")
    if X.shape[0] <= X.shape[1]:
        raise SingularDesignError(f"need more rows than columns, got {X.shape}")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise SingularDesignError("design matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    fitted = X @ coef
    return OLSResult(coef, y - fitted, fitted)


def bartlett_lrv(x, lags: int) -> float:
    """Bartlett-weighted long-run variance about the mean, autocovariances divided by T."""
    x = np.asarray(x, dtype=float)
    e = x - x.mean()
    T = e.size
    s = e @ e / T
    for j in range(1, lags + 1):
        s += 2.0 * (1.0 - j / (lags + 1.0)) * (e[j:] @ e[:-j]) / T
    return float(s)


def _normal_p(t: float) -> float:
    if math.isnan(t):
        return math.nan
    return math.erfc(abs(t) / math.sqrt(2.0))


def _tstat(coef: float, se: float) -> float:
    if se > 0:
        return coef / se
    if coef == 0 or math.isnan(coef):
        return 0.0 if coef == 0 else math.nan
    return math.copysign(math.inf, coef)


def newey_west_tstat(series, lags: int = 4) -> NWResult:
    """Mean of a series with its Newey-West t-statistic.

    A zero long-run variance gives an infinite t-statistic (signed like the
    mean) and p-value 0; a zero mean in that case gives t = 0, p = 1.
    """
    x = np.asarray(series, dtype=float)
    x = x[np.isfinite(x)]
    if lags < 0:
        raise DomainError("lags must be >= 0")
    if x.size <= lags + 1:
        raise DomainError(f"series of length {x.size} too short for {lags} lags")
    m = float(x.mean())
    # an exactly constant series has zero variance; roundoff in the mean would hide that
    s = 0.0 if (x == x[0]).all() else max(bartlett_lrv(x, lags), 0.0)
    se = math.sqrt(s / x.size)
    t = _tstat(m, se)
    return NWResult(m, se, t, _normal_p(t), s)


def newey_west_cov(X, resid, lags: int = 4) -> np.ndarray:
    """HAC sandwich covariance of OLS coefficients (Bartlett kernel, no small-sample factor)."""
    X = np.asarray(X, dtype=float)
    u = np.asarray(resid, dtype=float)
    xu = X * u[:, None]
    S = xu.T @ xu
    for j in range(1, lags + 1):
        g = xu[j:].T @ xu[:-j]
        S += (1.0 - j / (lags + 1.0)) * (g + g.T)
    bread = np.linalg.inv(X.T @ X)
    return bread @ S @ bread


# ---------------------------------------------------------------------------
# regressions


def _summarize(series: pd.DataFrame, lags: int) -> RegressionEstimate:
    coefs, tstats, pvals, ses = {}, {}, {}, {}
    for name in series.columns:
        col = series[name].dropna()
        if col.size <= lags + 1:
            coefs[name] = tstats[name] = pvals[name] = ses[name] = math.nan
            continue
        nw = newey_west_tstat(col.to_numpy(), lags)
        coefs[name], tstats[name], pvals[name], ses[name] = nw.mean, nw.tstat, nw.pvalue, nw.se
    return RegressionEstimate(coefs, tstats, pvals, lags, int(len(series)), ses, series)


def fama_macbeth_two_param(panel: pd.DataFrame, lags: int = 4) -> RegressionEstimate:
    """Monthly regressions of portfolio return on lagged mean v and mean v^2.

    ``panel`` is long format with columns ``month, ret, v, v2`` (one row per
    portfolio-month). Returns time-series means of gamma0..gamma2.
    """
    rows = {}
    for month, grp in panel.groupby("month", sort=True):
        grp = grp.dropna(subset=["ret", "v", "v2"])
        if len(grp) < 3:
            warnings.warn(f"{month}: fewer than 3 portfolios, month dropped", stacklevel=2)
            continue
        X = np.column_stack([np.ones(len(grp)), grp["v"], grp["v2"]])
        try:
            res = ols(grp["ret"].to_numpy(), X)
        except SingularDesignError:
            warnings.warn(f"{month}: singular cross-section, month dropped", stacklevel=2)
            continue
        rows[month] = res.coef
    series = pd.DataFrame.from_dict(rows, orient="index", columns=["gamma0", "gamma1", "gamma2"])
    if len(series) < lags + 2:
        raise InsufficientDataError(f"only {len(series)} usable months for {lags} lags")
    return _summarize(series, lags)


def ff5_alpha(excess_returns, factors: pd.DataFrame, lags: int = 4) -> RegressionEstimate:
    """Time-series FF5 regression; the intercept is the alpha."""
    y = pd.Series(excess_returns, dtype=float) if not isinstance(excess_returns, pd.Series) else excess_returns
    F = factors[list(FACTOR_NAMES)]
    if isinstance(excess_returns, pd.Series):
        F = F.reindex(y.index)
    df = pd.concat([y.rename("y").reset_index(drop=True), F.reset_index(drop=True)], axis=1).dropna()
    if len(df) < 7:
        raise InsufficientDataError(f"{len(df)} observations, need at least 7")
    X = np.column_stack([np.ones(len(df)), df[list(FACTOR_NAMES)].to_numpy()])
    res = ols(df["y"].to_numpy(), X)
    cov = newey_west_cov(X, res.resid, lags)
    names = ("alpha",) + FACTOR_NAMES
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    tstats = {n: _tstat(float(c), float(s)) for n, c, s in zip(names, res.coef, se)}
    return RegressionEstimate(
        coefficients=dict(zip(names, map(float, res.coef))),
        tstats=tstats,
        pvalues={n: _normal_p(t) for n, t in tstats.items()},
        lags=lags,
        n_obs=len(df),
        se=dict(zip(names, map(float, se))),
        series=pd.DataFrame({"resid": res.resid}),
    )


def _stage1(y: np.ndarray, char: np.ndarray | None, F: np.ndarray):
    """Per-stock time-series betas; beta_v is NaN when the characteristic is constant."""
    cols = [np.ones(len(y))]
    use_char = char is not None and np.ptp(char) > 0
    if use_char:
        cols.append(char)
    X = np.column_stack(cols + [F])
    coef = ols(y, X).coef
    beta_v = coef[1] if use_char else math.nan
    return coef[0], beta_v, coef[-F.shape[1]:]


def two_stage_six_factor(excess_returns: pd.DataFrame, characteristic: pd.DataFrame | None,
                         factors: pd.DataFrame, min_window: int = 8, lags: int = 4,
                         name: str = "p_index") -> RegressionEstimate:
    """Two-stage factor-return estimation.

    Stage 1: for every month ``t`` and stock, regress excess returns on an
    intercept, the stock's own characteristic (omitted when
    ``characteristic`` is None) and the five factors, over all months before
    ``t`` (at least ``min_window`` observations). Stage 2: regress month-``t``
    excess returns cross-sectionally on those betas. The reported lambdas are
    time-series means of the stage-2 slopes with Newey-West t-statistics.
    """
    months = list(excess_returns.index)
    F_all = factors.reindex(months)[list(FACTOR_NAMES)]
    Rv = excess_returns.to_numpy(dtype=float)
    Cv = None if characteristic is None else characteristic.reindex(
        index=months, columns=excess_returns.columns).to_numpy(dtype=float)
    Fv = F_all.to_numpy(dtype=float)
    f_ok = np.isfinite(Fv).all(axis=1)
    with_char = characteristic is not None
    names = ([name] if with_char else []) + list(FACTOR_NAMES)
    k = len(FACTOR_NAMES)

    rows = {}
    for t in range(1, len(months)):
        betas, ys = [], []
        for i in range(Rv.shape[1]):
            if not np.isfinite(Rv[t, i]):
                continue
            ok = f_ok[:t] & np.isfinite(Rv[:t, i])
            if with_char:
                ok &= np.isfinite(Cv[:t, i])
            if ok.sum() < min_window:
                continue
            try:
                _, bv, b = _stage1(Rv[:t, i][ok], Cv[:t, i][ok] if with_char else None, Fv[:t][ok])
            except SingularDesignError:
                continue
            betas.append(([bv] if with_char else []) + list(b))
            ys.append(Rv[t, i])
        if not betas:
            continue
        B = np.asarray(betas)
        y = np.asarray(ys)
        lam = np.full(len(names), math.nan)
        cols = list(range(len(names)))
        if with_char:
            valid = np.isfinite(B[:, 0])
            if valid.sum() >= len(names) + 2 and np.ptp(B[valid, 0]) > 0:
                B, y = B[valid], y[valid]
            else:
                cols = cols[1:]
        X = np.column_stack([np.ones(len(y)), B[:, cols]])
        try:
            coef = ols(y, X).coef
        except SingularDesignError:
            warnings.warn(f"{months[t]}: singular cross-section, month dropped", stacklevel=2)
            continue
        lam[cols] = coef[1:]
        rows[months[t]] = lam
    if len(rows) < 2:
        raise InsufficientDataError(f"only {len(rows)} second-stage months")
    series = pd.DataFrame.from_dict(rows, orient="index", columns=names)
    return _summarize(series, lags)


def stage1_exposures(excess_returns: pd.DataFrame, characteristic: pd.DataFrame | None,
                     factors: pd.DataFrame) -> list[FactorExposure]:
    """Full-sample stage-1 loadings per stock."""
    months = list(excess_returns.index)
    F = factors.reindex(months)[list(FACTOR_NAMES)].to_numpy(dtype=float)
    out = []
    for sym in excess_returns.columns:
        y = excess_returns[sym].to_numpy(dtype=float)
        c = None if characteristic is None else characteristic.reindex(months)[sym].to_numpy(dtype=float)
        ok = np.isfinite(y) & np.isfinite(F).all(axis=1)
        if c is not None:
            ok &= np.isfinite(c)
        a, bv, b = _stage1(y[ok], None if c is None else c[ok], F[ok])
        out.append(FactorExposure(sym, float(a), float(bv), tuple(map(float, b))))
    return out


# ---------------------------------------------------------------------------
# full analysis


def modified_p_ratio_panel(returns: pd.DataFrame, p_index: pd.DataFrame, epsilon: float = 1e-4) -> pd.DataFrame:
    out = pd.DataFrame(np.nan, index=p_index.index, columns=p_index.columns)
    for month in p_index.index:
        both = pd.concat([returns.loc[month], p_index.loc[month]], axis=1, keys=["R", "v"]).dropna()
        if len(both) < 2:
            continue
        try:
            out.loc[month, both.index] = modified_p_ratio(both["R"], both["v"], epsilon)
        except DomainError:
            log.warning("%s: degenerate cross-section for modified p-ratio", month)
    return out


def _previous_label(label: str) -> str:
    pid = PeriodId.parse(label)
    return PeriodId(pid.calendar, pid.index - 1).label


@dataclass
class DecilePanel:
    assignments: dict[str, list[DecileAssignment]]  # keyed by holding month
    returns: pd.DataFrame  # holding month x portfolio id
    two_param: pd.DataFrame  # long: month, portfolio, ret, v, v2


def decile_panel(characteristic: pd.DataFrame, returns: pd.DataFrame) -> DecilePanel:
    """Form deciles on month t-1 characteristic and track month-t returns."""
    assignments, port_rets, long_rows = {}, {}, []
    months = set(characteristic.index)
    for month in returns.index:
        prev = _previous_label(month)
        if prev not in months:
            continue
        chars = characteristic.loc[prev]
        rets = returns.loc[month]
        elig = chars.notna() & rets.notna()
        if not elig.any():
            log.info("%s: no eligible stocks, month skipped", month)
            continue
        cs = [(s, float(chars[s])) for s in chars.index[elig]]
        groups = form_deciles(cs, month)
        dr = decile_returns(groups, rets[elig].to_dict())
        assignments[month] = groups
        port_rets[month] = dr
        for g in groups:
            long_rows.append({"month": month, "portfolio": g.portfolio_id, "ret": dr[g.portfolio_id],
                              "v": g.formation_v_mean, "v2": g.formation_v2_mean})
    ret_frame = pd.DataFrame.from_dict(port_rets, orient="index").sort_index()
    ret_frame = ret_frame.reindex(columns=range(1, N_GROUPS + 1))
    return DecilePanel(assignments, ret_frame, pd.DataFrame(long_rows))


def _portfolio_label(pid) -> str:
    return {1: "L", N_GROUPS: "H"}.get(pid, str(pid))


def decile_performance(port_returns: pd.DataFrame, factors: pd.DataFrame, lags: int = 4,
                       periods_per_year: int = 12) -> pd.DataFrame:
    """Per-portfolio annualized return/volatility, NW t of mean return, FF5 alpha and its t."""
    rf = factors["rf"].reindex(port_returns.index)
    cols = {pid: port_returns[pid] for pid in port_returns.columns}
    spreads = {
        "H-L": spread_portfolio(port_returns[N_GROUPS], port_returns[1]),
        "L-H": spread_portfolio(port_returns[1], port_returns[N_GROUPS]),
    }
    rows = []
    for label, series, excess in (
        [(_portfolio_label(pid), s, s - rf) for pid, s in cols.items()]
        + [(k, s, s) for k, s in spreads.items()]
    ):
        s = series.dropna()
        years = len(s) / periods_per_year
        cum = accumulate(s.tolist(), REINVEST)
        nw = newey_west_tstat(s.to_numpy(), lags)
        try:
            fa = ff5_alpha(excess.dropna(), factors, lags)
            alpha, t_alpha = fa.coefficients["alpha"], fa.tstats["alpha"]
        except (InsufficientDataError, SingularDesignError):
            alpha = t_alpha = math.nan
        rows.append({
            "portfolio": label,
            "ann_return": annualize(cum, years),
            "ann_vol": float(s.std(ddof=1) * math.sqrt(periods_per_year)),
            "t_return": nw.tstat,
            "alpha": alpha,
            "t_alpha": t_alpha,
        })
    return pd.DataFrame(rows)


@dataclass
class FactorReport:
    mode: str
    deciles: DecilePanel
    performance: pd.DataFrame
    two_param: RegressionEstimate
    six_factor: RegressionEstimate
    five_factor: RegressionEstimate
    spreads: pd.DataFrame


def run_factor_analysis(p_index: pd.DataFrame, returns: pd.DataFrame, factors: pd.DataFrame,
                        mode: str = "pindex", lags: int = 4, min_window: int = 8) -> FactorReport:
    """Deciles, two-parameter regression, FF5 alphas and the two-stage models.

    ``p_index`` and ``returns`` are month x symbol frames indexed by labels
    like ``2014-01``; ``factors`` is indexed the same way with the five
    factors plus ``rf``.
    """
    if mode == "pindex":
        char, name = p_index, "p_index"
    elif mode == "pratio":
        char, name = modified_p_ratio_panel(returns, p_index), "p_ratio"
    else:
        raise ValueError(f"mode must be 'pindex' or 'pratio', got {mode!r}")
    missing = [m for m in returns.index if m not in factors.index]
    if missing:
        raise InsufficientDataError(f"no factor observations for months {missing[:3]}...")

    dp = decile_panel(char, returns)
    if dp.returns.empty:
        raise InsufficientDataError("no formation months")
    perf = decile_performance(dp.returns, factors, lags)
    two = fama_macbeth_two_param(dp.two_param, lags)
    excess = returns.sub(factors["rf"].reindex(returns.index), axis=0)
    six = two_stage_six_factor(excess, char, factors, min_window, lags, name)
    five = two_stage_six_factor(excess, None, factors, min_window, lags)
    spreads = pd.DataFrame({
        "H": dp.returns[N_GROUPS],
        "L": dp.returns[1],
        "H-L": spread_portfolio(dp.returns[N_GROUPS], dp.returns[1]),
        "L-H": spread_portfolio(dp.returns[1], dp.returns[N_GROUPS]),
    })
    spreads.index.name = "month"
    return FactorReport(mode, dp, perf, two, six, five, spreads)
