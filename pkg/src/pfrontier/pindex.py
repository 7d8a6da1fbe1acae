"""
One-step binomial put pricing and p-index arithmetic.

The risk-neutral weight is estimated from a market index's period bar
(u and d are the highest and lowest close over the anchor close) and then
used to price a European put on each stock struck at ``S0 * (1 + delta)``.
The p-index is the put price per insured dollar, ``p / K``.
"""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, InsufficientDataError, InvariantError
from .market_data import PeriodBar, PeriodId, merge_window

log = logging.getLogger(__name__)

RECORD_COLUMNS = ("symbol", "period", "delta", "strike", "put", "p_index", "return", "p_ratio", "window")


class DegenerateTreeError(DomainError):
    """u == d: the binomial tree has a single state."""


class PeriodSkipped(InsufficientDataError):
    """The period cannot be priced even after the two-period fallback."""


class BoundViolation(InvariantError):
    pass


@dataclass(frozen=True)
class RiskNeutralWeight:
    pi: float
    one_plus_r_eff: float
    window_periods: int = 1

    @property
    def r_eff(self) -> float:
        return self.one_plus_r_eff - 1.0

    @property
    def valid(self) -> bool:
        return 0.0 < self.pi < 1.0


@dataclass(frozen=True)
class PIndexRecord:
    symbol: str
    period_id: PeriodId
    delta: float
    strike: float
    put_price: float
    p_index: float
    realized_return: float
    p_ratio: float
    window_periods: int
    rate: float = 0.0

    def as_row(self) -> list:
        return [self.symbol, self.period_id.label, repr(self.delta), repr(self.strike),
                repr(self.put_price), repr(self.p_index), repr(self.realized_return),
                repr(self.p_ratio), self.window_periods]


def tree_weight(bar: PeriodBar, r: float, window_periods: int = 1) -> RiskNeutralWeight:
    """pi = ((1+r) - d) / (u - d) for one bar; no validity check on pi."""
    u, d = bar.u, bar.d
    if u == d:
        raise DegenerateTreeError(f"{bar.symbol} {bar.period_id}: u == d == {u}")
    return RiskNeutralWeight(((1.0 + r) - d) / (u - d), 1.0 + r, window_periods)


def estimate_pi(index_bar: PeriodBar, r: float, prev_index_bar: PeriodBar | None = None,
                prev_r: float | None = None) -> RiskNeutralWeight:
    """Risk-neutral weight from the index bar, falling back to a two-period window.

    The fallback anchors at the previous period's first close, takes extremes
    over both periods and uses the summed simple rate ``r + prev_r``
    (``2r`` when ``prev_r`` is omitted). Raises :class:`PeriodSkipped` when
    pi is still outside (0, 1).
    """
    try:
        w = tree_weight(index_bar, r)
        if w.valid:
            return w
    except DegenerateTreeError:
        if prev_index_bar is None:
            raise
    if prev_index_bar is None:
        raise PeriodSkipped(f"pi outside (0, 1) for {index_bar.period_id} and no previous period")
    r2 = r + (r if prev_r is None else prev_r)
    try:
        w = tree_weight(merge_window(prev_index_bar, index_bar), r2, 2)
    except DegenerateTreeError as exc:
        raise PeriodSkipped(str(exc)) from exc
    if not w.valid:
        raise PeriodSkipped(f"pi = {w.pi:.6g} outside (0, 1) after two-period fallback")
    return w


def _check_weight(w: RiskNeutralWeight) -> None:
    if not w.valid:
        raise DomainError(f"pi must lie in (0, 1), got {w.pi}")


def put_price(stock_bar: PeriodBar, w: RiskNeutralWeight, delta: float) -> float:
    _check_weight(w)
    s0 = stock_bar.anchor_close
    k = s0 * (1.0 + delta)
    up = max(k - stock_bar.high_close, 0.0)
    down = max(k - stock_bar.low_close, 0.0)
    return (w.pi * up + (1.0 - w.pi) * down) / w.one_plus_r_eff


def call_price(stock_bar: PeriodBar, w: RiskNeutralWeight, delta: float) -> float:
    _check_weight(w)
    k = stock_bar.anchor_close * (1.0 + delta)
    up = max(stock_bar.high_close - k, 0.0)
    down = max(stock_bar.low_close - k, 0.0)
    return (w.pi * up + (1.0 - w.pi) * down) / w.one_plus_r_eff


def p_index_bounds(r: float, delta: float) -> tuple[float, float]:
    """(inclusive lower, exclusive upper) bound of the p-index."""
    return max(1.0 / (1.0 + r) - 1.0 / (1.0 + delta), 0.0), 1.0 / (1.0 + r)


def p_index(p: float, strike: float, r: float | None = None, delta: float | None = None) -> float:
    """v = p / K, checked against the no-arbitrage bounds when ``r`` is given."""
    if not strike > 0:
        raise DomainError(f"strike must be > 0, got {strike}")
    v = p / strike
    if r is not None:
        lower, upper = p_index_bounds(r, r if delta is None else delta)
        if not v < upper:
            raise BoundViolation(f"p-index {v!r} >= upper bound {upper!r}")
        if delta is not None and v < lower - 1e-12 * upper:
            raise BoundViolation(f"p-index {v!r} < lower bound {lower!r}")
    return v


def p_index_closed_form(d: float, delta: float, w: RiskNeutralWeight, u: float | None = None) -> float:
    """Closed-form p-index when the strike lies between the two terminal prices."""
    _check_weight(w)
    if d < 0 or d > 1.0 + delta or (u is not None and u < 1.0 + delta):
        raise DomainError(f"closed form needs d <= 1+delta <= u (d={d}, delta={delta}, u={u})")
    return ((1.0 + delta) - d) / (1.0 + delta) * (1.0 - w.pi) / w.one_plus_r_eff


def p_ratio(R: float, r: float, v: float) -> float:
    if not v > 0:
        raise DomainError(f"p-index must be > 0, got {v}")
    return (R - r) / v


def modified_p_ratio(returns: Sequence[float], v: Sequence[float], epsilon: float = 1e-4) -> np.ndarray:
    """Cross-sectionally min-max normalized return over normalized p-index plus epsilon."""
    R = np.asarray(returns, dtype=float)
    v = np.asarray(v, dtype=float)
    if R.shape != v.shape:
        raise DomainError("returns and p-indexes differ in length")
    r_span = R.max() - R.min() if R.size else 0.0
    v_span = v.max() - v.min() if v.size else 0.0
    if not (r_span > 0 and v_span > 0):
        raise DomainError("degenerate cross-section: all returns or all p-indexes equal")
    return ((R - R.min()) / r_span) / ((v - v.min()) / v_span + epsilon)


def portfolio_p_index(weights: Sequence[float], v: Sequence[float]) -> float:
    w = np.asarray(weights, dtype=float)
    v = np.asarray(v, dtype=float)
    if w.shape != v.shape:
        raise DomainError("weights and p-indexes differ in length")
    if (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
        raise DomainError("weights must be non-negative and sum to 1")
    return float(w @ v)


def value_weighted_p_index(puts: Sequence[float], anchors: Sequence[float], delta: float) -> float:
    p = np.asarray(puts, dtype=float)
    s0 = np.asarray(anchors, dtype=float)
    if p.size == 0 or p.shape != s0.shape:
        raise DomainError("need matching, non-empty puts and anchors")
    if (s0 <= 0).any():
        raise DomainError("anchor prices must be > 0")
    return float(p.sum() / ((1.0 + delta) * s0.sum()))


# ---------------------------------------------------------------------------
# panel computation


@dataclass(frozen=True)
class Exclusion:
    symbol: str
    period_id: PeriodId
    reason: str


def compute_records(period_bars: Iterable[PeriodBar], index_symbol: str,
                    rate_for: Callable[[PeriodBar], float],
                    delta: float | None = None) -> tuple[list[PIndexRecord], list[Exclusion]]:
    """p-index records for every (stock, period) in the panel.

    ``rate_for`` maps an index period bar to its simple per-period rate.
    ``delta=None`` sets the strike return equal to the rate of the estimation
    window actually used (r, or the summed two-period rate after fallback).

    A stock first tries the one-period index weight; if that weight is
    invalid, or the stock's put comes out non-positive, the two-period
    window (index and stock alike) is tried once before the stock is
    excluded for the period.
    """
    by_symbol: dict[str, dict[int, PeriodBar]] = defaultdict(dict)
    for b in period_bars:
        by_symbol[b.symbol][b.period_id.index] = b
    index_bars = by_symbol.pop(index_symbol, None)
    if not index_bars:
        raise InsufficientDataError(f"no period bars for index symbol {index_symbol!r}")

    stock_periods: dict[int, list[str]] = defaultdict(list)
    for sym in sorted(by_symbol):
        for t in by_symbol[sym]:
            stock_periods[t].append(sym)

    records: list[PIndexRecord] = []
    exclusions: list[Exclusion] = []
    rates: dict[int, float] = {}
    for t in sorted(stock_periods):
        ibar = index_bars.get(t)
        if ibar is None:
            exclusions += [Exclusion(s, by_symbol[s][t].period_id, "no index bar") for s in stock_periods[t]]
            continue
        r = rates.setdefault(t, rate_for(ibar))
        w1 = None
        try:
            w = tree_weight(ibar, r)
            w1 = w if w.valid else None
        except DegenerateTreeError:
            pass
        w2 = None
        prev = index_bars.get(t - 1)
        if prev is not None:
            prev_r = rates.setdefault(t - 1, rate_for(prev))
            try:
                w = tree_weight(merge_window(prev, ibar), r + prev_r, 2)
                w2 = w if w.valid else None
            except DegenerateTreeError:
                pass

        for sym in stock_periods[t]:
            bar = by_symbol[sym][t]
            attempts = []
            if w1 is not None:
                attempts.append((w1, bar))
            if w2 is not None and (t - 1) in by_symbol[sym]:
                attempts.append((w2, merge_window(by_symbol[sym][t - 1], bar)))
            if not attempts:
                exclusions.append(Exclusion(sym, bar.period_id, "pi invalid after fallback"))
                continue
            rec, reason = None, None
            for w, sbar in attempts:
                dlt = w.r_eff if delta is None else delta
                p = put_price(sbar, w, dlt)
                if not p > 0:
                    continue
                strike = sbar.anchor_close * (1.0 + dlt)
                try:
                    v = p_index(p, strike, w.r_eff, dlt)
                except BoundViolation as exc:
                    # the stock is priced with the index weight, so parity-based bounds can fail
                    reason = f"p-index outside bounds ({exc})"
                    continue
                R = bar.period_return
                rec = PIndexRecord(sym, bar.period_id, dlt, strike, p, v, R,
                                   p_ratio(R, r, v), w.window_periods, r)
                break
            if rec is not None:
                records.append(rec)
                continue
            if reason is None:
                reason = "p <= 0 after fallback" if attempts[-1][0] is w2 else "p <= 0, no fallback window"
            log.debug("exclude %s %s: %s", sym, bar.period_id, reason)
            exclusions.append(Exclusion(sym, bar.period_id, reason))
    return records, exclusions


def write_records(fh, records: Iterable[PIndexRecord]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for rec in records:
        w.writerow(rec.as_row())


def records_by_period(records: Iterable[PIndexRecord]) -> dict[int, list[PIndexRecord]]:
    out: dict[int, list[PIndexRecord]] = defaultdict(list)
    for rec in records:
        out[rec.period_id.index].append(rec)
    for recs in out.values():
        recs.sort(key=lambda r: r.symbol)
    return dict(out)
