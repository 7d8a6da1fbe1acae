"""
Market data ingestion and period aggregation.

Daily bars, risk-free yields, factor returns and corporate-action events are
read from UTF-8 CSV files with a header row. Daily bars are forward adjusted
and then rolled up into weekly (ISO week) or monthly period bars, whose
first/highest/lowest/last closes feed the one-step binomial tree.

A deterministic synthetic panel generator is included so the whole pipeline
can be exercised without vendor data.
"""

from __future__ import annotations

import bisect
import csv
import logging
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
import pandas as pd

from .errors import InputError, MissingRateError, ParseError, ValidationError

log = logging.getLogger(__name__)

WEEKLY = "weekly"
MONTHLY = "monthly"
CALENDARS = (WEEKLY, MONTHLY)
PERIODS_PER_YEAR = {WEEKLY: 52, MONTHLY: 12}

BAR_FIELDS = ("symbol", "date", "open", "high", "low", "close")
FACTOR_NAMES = ("mkt_rf", "smb", "hml", "rmw", "cma")


@dataclass(frozen=True)
class DailyBar:
    symbol: str
    date: date
    open: float
    high: float
    low: float
    close: float

    def violations(self) -> list[str]:
        out = []
        if not self.low > 0:
            out.append("low must be > 0")
        if self.low > min(self.open, self.close):
            out.append("low > min(open, close)")
        if self.high < max(self.open, self.close):
            out.append("high < max(open, close)")
        return out

    def scaled(self, factor: float) -> "DailyBar":
        return replace(
            self,
            open=self.open * factor,
            high=self.high * factor,
            low=self.low * factor,
            close=self.close * factor,
        )


@dataclass(frozen=True)
class AdjustmentEvent:
    symbol: str
    date: date
    factor: float  # post-event price / pre-event price

    def __post_init__(self):
        if not self.factor > 0:
            raise ValidationError(f"adjustment factor must be > 0, got {self.factor}")


class PeriodId(NamedTuple):
    """A holding period. ``index`` is an ordinal: consecutive periods differ by 1."""

    calendar: str
    index: int

    @property
    def label(self) -> str:
        if self.calendar == MONTHLY:
            y, m = divmod(self.index, 12)
            return f"{y:04d}-{m + 1:02d}"
        monday = date.fromordinal(self.index * 7 + 1)
        y, w, _ = monday.isocalendar()
        return f"{y:04d}-W{w:02d}"

    @property
    def start(self) -> date:
        """Calendar start of the period (Monday or the 1st of the month)."""
        if self.calendar == MONTHLY:
            y, m = divmod(self.index, 12)
            return date(y, m + 1, 1)
        return date.fromordinal(self.index * 7 + 1)

    @classmethod
    def of(cls, d: date, calendar: str) -> "PeriodId":
        if calendar == MONTHLY:
            return cls(MONTHLY, d.year * 12 + d.month - 1)
        if calendar == WEEKLY:
            return cls(WEEKLY, (d.toordinal() - 1) // 7)
        raise ValueError(f"unknown calendar {calendar!r}")

    @classmethod
    def parse(cls, label: str) -> "PeriodId":
        label = label.strip()
        if "-W" in label:
            y, w = label.split("-W")
            return cls.of(date.fromisocalendar(int(y), int(w), 1), WEEKLY)
        y, m = label.split("-")[:2]
        return cls.of(date(int(y), int(m), 1), MONTHLY)

    def __str__(self) -> str:
        return self.label


@dataclass(frozen=True)
class PeriodBar:
    """One holding period: anchor close S0, highest close S0*u, lowest close S0*d."""

    symbol: str
    period_id: PeriodId
    anchor_close: float
    high_close: float
    low_close: float
    last_close: float
    first_date: date
    last_date: date
    n_days: int = 0

    @property
    def u(self) -> float:
        return self.high_close / self.anchor_close

    @property
    def d(self) -> float:
        return self.low_close / self.anchor_close

    @property
    def period_return(self) -> float:
        return self.last_close / self.anchor_close - 1.0


def merge_window(prev: PeriodBar, cur: PeriodBar) -> PeriodBar:
    """Two-period estimation window: previous anchor, extremes over both periods."""
    if prev.symbol != cur.symbol:
        raise ValueError("cannot merge bars of different symbols")
    return PeriodBar(
        symbol=cur.symbol,
        period_id=cur.period_id,
        anchor_close=prev.anchor_close,
        high_close=max(prev.high_close, cur.high_close),
        low_close=min(prev.low_close, cur.low_close),
        last_close=cur.last_close,
        first_date=prev.first_date,
        last_date=cur.last_date,
        n_days=prev.n_days + cur.n_days,
    )


@dataclass(frozen=True)
class RatePoint:
    date: date
    annual_yield: float

    def __post_init__(self):
        if not self.annual_yield > -1:
            raise ValidationError(f"annual yield must be > -1, got {self.annual_yield}")


@dataclass(frozen=True)
class FactorObservation:
    month_id: str
    mkt_rf: float
    smb: float
    hml: float
    rmw: float
    cma: float
    rf: float

    def __post_init__(self):
        vals = (self.mkt_rf, self.smb, self.hml, self.rmw, self.cma, self.rf)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"non-finite factor value in month {self.month_id}")


# ---------------------------------------------------------------------------
# CSV loading


def _rows(path, required: Sequence[str], schema: Mapping[str, str] | None):
    """Yield (line_number, {field: raw}) for each data row of a CSV file."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: no such file")
    schema = dict(schema or {})
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return
        header = [h.strip() for h in header]
        cols = {}
        for name in required:
            col = schema.get(name, name)
            if col not in header:
                raise ParseError(f"{path}: missing column {col!r} (header: {header})")
            cols[name] = header.index(col)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            yield lineno, {name: row[i].strip() for name, i in cols.items()}


def _parse(path, lineno, what, fn, raw):
    try:
        return fn(raw)
    except (ValueError, TypeError) as exc:
        raise ParseError(f"{path}:{lineno}: bad {what} {raw!r}") from exc


def load_daily_bars(path, schema: Mapping[str, str] | None = None) -> list[DailyBar]:
    """Read daily OHLC bars; ``schema`` maps canonical field names to CSV columns."""
    bars = []
    seen = set()
    for lineno, rec in _rows(path, BAR_FIELDS, schema):
        bar = DailyBar(
            symbol=rec["symbol"],
            date=_parse(path, lineno, "date", date.fromisoformat, rec["date"]),
            open=_parse(path, lineno, "open", float, rec["open"]),
            high=_parse(path, lineno, "high", float, rec["high"]),
            low=_parse(path, lineno, "low", float, rec["low"]),
            close=_parse(path, lineno, "close", float, rec["close"]),
        )
        bad = bar.violations()
        if bad:
            raise ValidationError(f"{path}:{lineno}: {'; '.join(bad)}: {bar}")
        key = (bar.symbol, bar.date)
        if key in seen:
            raise ValidationError(f"{path}:{lineno}: duplicate row for {bar.symbol} {bar.date}")
        seen.add(key)
        bars.append(bar)
    bars.sort(key=lambda b: (b.symbol, b.date))
    return bars


def load_rates(path) -> list[RatePoint]:
    out = []
    for lineno, rec in _rows(path, ("date", "annual_yield"), None):
        out.append(RatePoint(
            _parse(path, lineno, "date", date.fromisoformat, rec["date"]),
            _parse(path, lineno, "annual_yield", float, rec["annual_yield"]),
        ))
    out.sort(key=lambda p: p.date)
    return out


def load_factors(path) -> list[FactorObservation]:
    cols = ("month",) + FACTOR_NAMES + ("rf",)
    out = []
    for lineno, rec in _rows(path, cols, None):
        vals = {k: _parse(path, lineno, k, float, rec[k]) for k in cols[1:]}
        out.append(FactorObservation(month_id=rec["month"], **vals))
    out.sort(key=lambda f: f.month_id)
    return out


def load_adjustments(path) -> list[AdjustmentEvent]:
    out = []
    for lineno, rec in _rows(path, ("symbol", "date", "factor"), None):
        out.append(AdjustmentEvent(
            rec["symbol"],
            _parse(path, lineno, "date", date.fromisoformat, rec["date"]),
            _parse(path, lineno, "factor", float, rec["factor"]),
        ))
    return out


def factors_frame(observations: Iterable[FactorObservation]) -> pd.DataFrame:
    """Factor observations as a DataFrame indexed by month label."""
    rows = [
        {"month": o.month_id, **{k: getattr(o, k) for k in FACTOR_NAMES + ("rf",)}}
        for o in observations
    ]
    if not rows:
        return pd.DataFrame(columns=list(FACTOR_NAMES) + ["rf"])
    return pd.DataFrame(rows).set_index("month").sort_index()


def write_daily_bars(path, bars: Iterable[DailyBar]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(BAR_FIELDS)
        for b in bars:
            w.writerow([b.symbol, b.date.isoformat(), repr(float(b.open)), repr(float(b.high)),
                        repr(float(b.low)), repr(float(b.close))])


def write_rates(path, rates: Iterable[RatePoint]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "annual_yield"])
        for p in rates:
            w.writerow([p.date.isoformat(), repr(p.annual_yield)])


def write_factors(path, factors: Iterable[FactorObservation]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(("month",) + FACTOR_NAMES + ("rf",))
        for f in factors:
            w.writerow([f.month_id] + [repr(getattr(f, k)) for k in FACTOR_NAMES + ("rf",)])


# ---------------------------------------------------------------------------
# transformations


def forward_adjust(bars: Iterable[DailyBar], events: Iterable[AdjustmentEvent]) -> list[DailyBar]:
    """Scale every bar strictly before an event date by the event factor.

    Factors of several events compose multiplicatively. Events for symbols
    absent from ``bars`` are ignored with a warning.
    """
    bars = list(bars)
    by_symbol: dict[str, list[AdjustmentEvent]] = defaultdict(list)
    symbols = {b.symbol for b in bars}
    for ev in events:
        if ev.symbol not in symbols:
            warnings.warn(f"adjustment event for unknown symbol {ev.symbol!r} ignored", stacklevel=2)
            continue
        by_symbol[ev.symbol].append(ev)
    if not by_symbol:
        return bars
    out = []
    for b in bars:
        factor = 1.0
        for ev in by_symbol.get(b.symbol, ()):
            if b.date < ev.date:
                factor *= ev.factor
        out.append(b if factor == 1.0 else b.scaled(factor))
    return out


def aggregate_period(bars: Iterable[DailyBar], calendar: str) -> list[PeriodBar]:
    """Roll daily bars up into period bars over daily *closes*.

    Periods with fewer than two trading days are dropped.
    """
    if calendar not in CALENDARS:
        raise ValueError(f"unknown calendar {calendar!r}")
    groups: dict[tuple[str, PeriodId], list[DailyBar]] = defaultdict(list)
    for b in bars:
        groups[(b.symbol, PeriodId.of(b.date, calendar))].append(b)
    out = []
    for (symbol, pid), grp in groups.items():
        if len(grp) < 2:
            continue
        grp.sort(key=lambda b: b.date)
        closes = [b.close for b in grp]
        out.append(PeriodBar(
            symbol=symbol,
            period_id=pid,
            anchor_close=closes[0],
            high_close=max(closes),
            low_close=min(closes),
            last_close=closes[-1],
            first_date=grp[0].date,
            last_date=grp[-1].date,
            n_days=len(grp),
        ))
    out.sort(key=lambda p: (p.symbol, p.period_id.index))
    return out


def period_rate(rates: Sequence[RatePoint], period: PeriodBar) -> float:
    """Simple per-period rate: latest annual yield on/before the period start, prorated."""
    pts = sorted(rates, key=lambda p: p.date)
    i = bisect.bisect_right([p.date for p in pts], period.first_date)
    if i == 0:
        raise MissingRateError(f"no rate on or before {period.first_date}")
    return pts[i - 1].annual_yield / PERIODS_PER_YEAR[period.period_id.calendar]


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticRegime:
    """Parameters of the synthetic factor economy.

    Returns are per period of ``calendar``. Stock excess returns are
    ``alpha + beta . f_t + idio_vol * z``; prices follow a bridge between the
    period's first and last close so each period's realized return equals the
    planted one.
    """

    calendar: str = MONTHLY
    start: date = date(2014, 1, 1)
    annual_rate: float = 0.03
    factor_means: tuple[float, ...] = (0.005, 0.0, 0.0, 0.0, 0.0)
    factor_vols: tuple[float, ...] = (0.04, 0.025, 0.025, 0.02, 0.02)
    beta_means: tuple[float, ...] = (1.0, 0.3, 0.2, 0.1, 0.1)
    beta_spread: float = 0.5
    alpha: float = 0.0
    idio_vol: float = 0.04
    daily_vol: float = 0.015
    index_symbol: str = "INDEX"
    initial_price: float = 20.0

    @classmethod
    def frozen(cls, **kw) -> "SyntheticRegime":
        """Zero-volatility regime: every price stays constant."""
        base = dict(annual_rate=0.0, factor_means=(0.0,) * 5, factor_vols=(0.0,) * 5,
                    beta_spread=0.0, alpha=0.0, idio_vol=0.0, daily_vol=0.0)
        base.update(kw)
        return cls(**base)


@dataclass
class SyntheticTruth:
    """Planted quantities, indexed by period label."""

    index_symbol: str
    betas: pd.DataFrame  # symbol x factor
    alphas: pd.Series
    factor_means: pd.Series
    factors: pd.DataFrame  # period x (5 factors + rf)
    returns: pd.DataFrame  # period x symbol, total period returns
    excess_returns: pd.DataFrame
    stock_vols: pd.Series


@dataclass
class SyntheticPanel:
    bars: list[DailyBar]
    rates: list[RatePoint]
    factors: list[FactorObservation]
    truth: SyntheticTruth = field(repr=False)


def _trading_days(regime: SyntheticRegime, n_periods: int) -> list[list[date]]:
    first = PeriodId.of(regime.start, regime.calendar)
    periods = []
    for k in range(n_periods):
        pid = PeriodId(regime.calendar, first.index + k)
        start = pid.start
        end = (PeriodId(regime.calendar, pid.index + 1).start - timedelta(days=1))
        days = [d.date() for d in pd.bdate_range(start, end)]
        periods.append(days)
    return periods


def generate_synthetic_panel(seed: int, n_stocks: int, n_periods: int,
                             regime: SyntheticRegime | None = None) -> SyntheticPanel:
    if n_stocks < 2 or n_periods < 2:
        raise ValueError("need n_stocks >= 2 and n_periods >= 2")
    regime = regime or SyntheticRegime()
    rng = np.random.default_rng(seed)
    ppy = PERIODS_PER_YEAR[regime.calendar]
    rf = regime.annual_rate / ppy
    k = len(FACTOR_NAMES)

    symbols = [f"S{i:03d}" for i in range(n_stocks)]
    days = _trading_days(regime, n_periods)
    labels = [PeriodId.of(d[0], regime.calendar).label for d in days]

    f = np.asarray(regime.factor_means) + np.asarray(regime.factor_vols) * rng.standard_normal((n_periods, k))
    betas = np.asarray(regime.beta_means) + regime.beta_spread * rng.uniform(-1, 1, (n_stocks, k))
    alphas = np.full(n_stocks, regime.alpha)
    # persistent cross-sectional spread in volatility, so p-indexes differ across stocks
    vol_scale = rng.uniform(0.5, 1.5, n_stocks) if regime.daily_vol > 0 else np.ones(n_stocks)
    eps = regime.idio_vol * vol_scale * rng.standard_normal((n_periods, n_stocks))
    excess = alphas + f @ betas.T + eps
    total = np.maximum(rf + excess, -0.9)
    index_total = np.maximum(rf + f[:, 0], -0.9)
    excess = total - rf

    bars: list[DailyBar] = []
    paths = {}
    names = symbols + [regime.index_symbol]
    all_returns = np.column_stack([total, index_total])
    all_vols = np.append(regime.daily_vol * vol_scale, regime.daily_vol * 0.7)
    for j, sym in enumerate(names):
        price = regime.initial_price * (1 + 0.5 * j / len(names))
        closes: list[float] = []
        for t, pdays in enumerate(days):
            n = len(pdays)
            sd = all_vols[j]
            gap = sd * rng.standard_normal()
            anchor = price * math.exp(gap) if closes else price
            inc = sd * rng.standard_normal(n - 1)
            inc += (math.log1p(all_returns[t, j]) - inc.sum()) / (n - 1)
            path = anchor * np.exp(np.concatenate([[0.0], np.cumsum(inc)]))
            path[-1] = anchor * (1 + all_returns[t, j])
            closes.extend(path.tolist())
            price = float(path[-1])
        flat_days = [d for pdays in days for d in pdays]
        sd = all_vols[j]
        noise = np.abs(rng.standard_normal((len(flat_days), 3))) * sd
        prev = closes[0]
        for i, (d, c) in enumerate(zip(flat_days, closes)):
            o = prev * math.exp(0.25 * sd * (rng.standard_normal() if sd > 0 else 0.0))
            hi = max(o, c) * (1 + 0.5 * noise[i, 0])
            lo = min(o, c) * (1 - 0.5 * min(noise[i, 1], 1.0))
            bars.append(DailyBar(sym, d, float(o), float(hi), float(lo), float(c)))
            prev = c
        paths[sym] = closes

    rates = [RatePoint(days[0][0] - timedelta(days=7), regime.annual_rate)]
    rates += [RatePoint(pdays[0], regime.annual_rate) for pdays in days]
    factor_obs = [
        FactorObservation(labels[t], *map(float, f[t]), rf) for t in range(n_periods)
    ]
    truth = SyntheticTruth(
        index_symbol=regime.index_symbol,
        betas=pd.DataFrame(betas, index=symbols, columns=list(FACTOR_NAMES)),
        alphas=pd.Series(alphas, index=symbols),
        factor_means=pd.Series(regime.factor_means, index=list(FACTOR_NAMES)),
        factors=pd.DataFrame(np.column_stack([f, np.full(n_periods, rf)]), index=labels,
                             columns=list(FACTOR_NAMES) + ["rf"]),
        returns=pd.DataFrame(total, index=labels, columns=symbols),
        excess_returns=pd.DataFrame(excess, index=labels, columns=symbols),
        stock_vols=pd.Series(all_vols[:-1], index=symbols),
    )
    bars.sort(key=lambda b: (b.symbol, b.date))
    return SyntheticPanel(bars=bars, rates=rates, factors=factor_obs, truth=truth)
