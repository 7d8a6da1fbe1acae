"""
Strategy backtests over rolling formation/holding periods.

Each holding period ``t+1`` trades on a selection formed from period ``t``
p-index records: the highest p-ratio stock, the stocks supporting the EEF
(left frontier) or the right frontier, or a 50/50 mix of the highest p-ratio
stock and the risk-free asset. Positions are bought at the holding period's
first close (or through the price-limit simulation) and sold at its last
close.
"""

from __future__ import annotations

import bisect
import enum
import json
import math
from dataclasses import dataclass, field
from datetime import date
from typing import Callable, Iterable, Mapping, Sequence

from .errors import DomainError, InsufficientDataError
from .frontier import AssetPoint, FrontierCurve, build_eef, eef_stock_members, tangent_stock
from .market_data import PERIODS_PER_YEAR, DailyBar, PeriodBar
from .panel import Panel

REINVEST = "reinvest"
NON_REINVEST = "non_reinvest"
ACCOUNTINGS = (REINVEST, NON_REINVEST)
RESULT_COLUMNS = ("period", "strategy", "selection", "return", "cumulative")


class StrategyKind(str, enum.Enum):
    HPRatio = "HPRatio"
    EEFStocks = "EEFStocks"
    HPRatioPlusRiskFree = "HPRatioPlusRiskFree"
    LeftFrontier = "LeftFrontier"
    RightFrontier = "RightFrontier"


@dataclass(frozen=True)
class StrategySpec:
    kind: StrategyKind
    calendar: str
    accounting: str = REINVEST
    price_limit: float | None = None
    limit_overrides: tuple[tuple[str, float], ...] = ()
    threshold_share: float = 0.8
    defer_cap: int = 5
    grid_size: int = 50

    def __post_init__(self):
        object.__setattr__(self, "kind", StrategyKind(self.kind))
        if self.accounting not in ACCOUNTINGS:
            raise ValueError(f"accounting must be one of {ACCOUNTINGS}, got {self.accounting!r}")

    @property
    def name(self) -> str:
        return f"{self.kind.value}:{self.accounting}"

    @property
    def limits_enabled(self) -> bool:
        return self.price_limit is not None and math.isfinite(self.price_limit)

    def limit_for(self, symbol: str) -> float:
        return dict(self.limit_overrides).get(symbol, self.price_limit)


@dataclass
class StrategyResult:
    spec: StrategySpec
    periods: list[str]
    selections: list[tuple[str, ...]]
    per_period_returns: list[float]
    cumulative: float
    annualized: float
    years: float
    skipped: list[tuple[str, str]] = field(default_factory=list)

    @property
    def skipped_periods(self) -> int:
        return len(self.skipped)

    def cumulative_path(self) -> list[float]:
        return cumulative_path(self.per_period_returns, self.spec.accounting)


@dataclass(frozen=True)
class LimitFill:
    price: float
    date: date
    deferrals: int


# ---------------------------------------------------------------------------
# accounting


def cumulative_path(returns: Sequence[float], accounting: str) -> list[float]:
    out = []
    if accounting == NON_REINVEST:
        total = 0.0
        for r in returns:
            total += r
            out.append(total)
        return out
    if accounting != REINVEST:
        raise ValueError(f"unknown accounting {accounting!r}")
    wealth = 1.0
    for r in returns:
        wealth = 0.0 if (wealth <= 0.0 or r <= -1.0) else wealth * (1.0 + r)
        out.append(wealth - 1.0)
    return out


def accumulate(returns: Sequence[float], accounting: str) -> float:
    """Compounded (reinvest) or summed (non-reinvest) return; a return <= -1 ruins."""
    path = cumulative_path(returns, accounting)
    return path[-1] if path else 0.0


def annualize(cumulative: float, years: float, method: str = "auto") -> float:
    """Geometric annualization, falling back to ``cumulative / years`` when 1 + cumulative <= 0."""
    if not years > 0:
        raise DomainError(f"years must be > 0, got {years}")
    if method == "arithmetic" or (method == "auto" and 1.0 + cumulative <= 0.0):
        return cumulative / years
    if method not in ("auto", "geometric"):
        raise ValueError(f"unknown method {method!r}")
    return (1.0 + cumulative) ** (1.0 / years) - 1.0


# ---------------------------------------------------------------------------
# price limits


def simulate_limit_buy(bars: Sequence[DailyBar], day: date, limit: float,
                       threshold_share: float = 0.8, defer_cap: int = 5,
                       last_day: date | None = None) -> LimitFill | None:
    """Fill a buy order placed on ``day`` under a daily price limit.

    The limit-up price is the previous close times ``1 + limit``. A day whose
    intraday low sits at the limit-up price is untradeable and the order rolls
    to the next day (at most ``defer_cap`` times, never past ``last_day``).
    Otherwise the order fills at the intraday low when that low is at or
    below ``prev_close * (1 + threshold_share * limit)``, else at the close.
    Returns None when the order is cancelled.
    """
    dates = [b.date for b in bars]
    i = bisect.bisect_left(dates, day)
    if i >= len(bars) or bars[i].date != day:
        raise DomainError(f"no bar on {day}")
    if i == 0:
        raise DomainError(f"no previous close before {day}")
    for k in range(defer_cap + 1):
        j = i + k
        if j >= len(bars) or (last_day is not None and bars[j].date > last_day):
            return None
        prev = bars[j - 1].close
        limit_up = prev * (1.0 + limit)
        b = bars[j]
        if b.low >= limit_up * (1.0 - 1e-9):
            continue
        if b.low <= prev * (1.0 + threshold_share * limit):
            return LimitFill(b.low, b.date, k)
        return LimitFill(b.close, b.date, k)
    return None


# ---------------------------------------------------------------------------
# strategies


@dataclass
class Formation:
    assets: list[AssetPoint]
    rate: float
    curve: FrontierCurve | None = None
    tangent: str | None = None


def formation(panel: Panel, t: int, grid_size: int, cache: dict | None = None) -> Formation | None:
    key = (t, grid_size)
    if cache is not None and key in cache:
        return cache[key]
    recs = panel.records.get(t, [])
    out = None
    if recs:
        assets = [AssetPoint(r.symbol, r.p_index, r.realized_return) for r in recs]
        out = Formation(assets, panel.rates[t])
    if cache is not None:
        cache[key] = out
    return out


def select(kind: StrategyKind, form: Formation, grid_size: int) -> tuple[str, ...]:
    if kind in (StrategyKind.HPRatio, StrategyKind.HPRatioPlusRiskFree):
        if form.tangent is None:
            form.tangent = tangent_stock(form.assets, form.rate)
        return (form.tangent,)
    if form.curve is None:
        form.curve = build_eef(form.assets, grid_size)
    side = "right" if kind == StrategyKind.RightFrontier else "left"
    return tuple(sorted(eef_stock_members(form.curve, side)))


EntryFn = Callable[[str, PeriodBar], "float | None"]


def _close_entry(symbol: str, bar: PeriodBar) -> float:
    return bar.anchor_close


def _run(spec: StrategySpec, panel: Panel, entry: EntryFn, cache: dict | None) -> StrategyResult:
    if len(panel.periods) < 2:
        raise InsufficientDataError("need at least 2 periods")
    periods, selections, returns, skipped = [], [], [], []
    for hold in panel.periods[1:]:
        h = hold.index
        r_hold = panel.rates[h]
        idle = r_hold if spec.accounting == REINVEST else 0.0
        periods.append(hold.label)
        form = formation(panel, h - 1, spec.grid_size, cache)
        if form is None:
            selections.append(())
            returns.append(idle)
            skipped.append((hold.label, "no formation records"))
            continue
        sel = select(spec.kind, form, spec.grid_size)
        held, rets = [], []
        for sym in sel:
            bar = panel.bars[h].get(sym)
            if bar is None:
                continue
            price = entry(sym, bar)
            if price is None:
                continue
            held.append(sym)
            rets.append(bar.last_close / price - 1.0)
        selections.append(tuple(held))
        if not rets:
            returns.append(idle)
            skipped.append((hold.label, "selection not tradeable"))
            continue
        stock = sum(rets) / len(rets)
        if spec.kind == StrategyKind.HPRatioPlusRiskFree:
            stock = 0.5 * stock + 0.5 * r_hold
        returns.append(stock)
    cum = accumulate(returns, spec.accounting)
    years = len(returns) / PERIODS_PER_YEAR[spec.calendar]
    return StrategyResult(spec, periods, selections, returns, cum, annualize(cum, years), years, skipped)


def run_strategy(spec: StrategySpec, panel: Panel, cache: dict | None = None) -> StrategyResult:
    return _run(spec, panel, _close_entry, cache)


def run_adjusted_strategy(spec: StrategySpec, panel: Panel, *,
                          daily_bars: Mapping[str, Sequence[DailyBar]] | None = None,
                          cache: dict | None = None) -> StrategyResult:
    """Like :func:`run_strategy`, with entries routed through the price-limit rules."""
    if not spec.limits_enabled:
        return _run(spec, panel, _close_entry, cache)
    daily = panel.daily if daily_bars is None else daily_bars

    def entry(sym: str, bar: PeriodBar) -> float | None:
        fill = simulate_limit_buy(daily[sym], bar.first_date, spec.limit_for(sym),
                                  spec.threshold_share, spec.defer_cap, bar.last_date)
        return None if fill is None else fill.price

    return _run(spec, panel, entry, cache)


# ---------------------------------------------------------------------------
# output


def result_rows(results: Iterable[StrategyResult]) -> list[list]:
    rows = []
    for res in results:
        for label, sel, ret, cum in zip(res.periods, res.selections, res.per_period_returns,
                                        res.cumulative_path()):
            rows.append([label, res.spec.name, " ".join(sel), repr(ret), repr(cum)])
    return rows


def summary(results: Iterable[StrategyResult]) -> dict:
    """Nested ``strategy -> calendar -> accounting`` summary of cumulative/annualized returns."""
    out: dict = {}
    for res in results:
        s = res.spec
        out.setdefault(s.kind.value, {}).setdefault(s.calendar, {})[s.accounting] = {
            "cumulative": res.cumulative,
            "annualized": res.annualized,
            "years": res.years,
            "periods": len(res.per_period_returns),
            "skipped_periods": res.skipped_periods,
            "price_limit": s.price_limit if s.limits_enabled else None,
        }
    return out


def summary_json(results: Iterable[StrategyResult]) -> str:
    return json.dumps(summary(results), indent=2, sort_keys=True) + "\n"
