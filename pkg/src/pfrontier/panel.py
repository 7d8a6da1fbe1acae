"""Assemble daily data into a period panel with p-index records."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

import pandas as pd

from .market_data import (
    AdjustmentEvent, DailyBar, PeriodBar, PeriodId, RatePoint, aggregate_period,
    forward_adjust, period_rate,
)
from .pindex import Exclusion, PIndexRecord, compute_records, records_by_period


@dataclass
class Panel:
    calendar: str
    index_symbol: str
    periods: list[PeriodId]
    bars: dict[int, dict[str, PeriodBar]]
    rates: dict[int, float]
    records: dict[int, list[PIndexRecord]]
    exclusions: list[Exclusion] = field(default_factory=list)
    daily: dict[str, list[DailyBar]] = field(default_factory=dict, repr=False)

    @property
    def symbols(self) -> list[str]:
        syms = {s for bars in self.bars.values() for s in bars}
        syms.discard(self.index_symbol)
        return sorted(syms)

    def all_records(self) -> list[PIndexRecord]:
        return [r for t in sorted(self.records) for r in self.records[t]]

    def period_id(self, label: str) -> PeriodId:
        pid = PeriodId.parse(label)
        if pid.calendar != self.calendar:
            raise ValueError(f"period {label!r} is not a {self.calendar} period")
        return pid

    def frame(self, what: str) -> pd.DataFrame:
        """Wide period x symbol frame of ``"p_index"`` or ``"return"`` values."""
        labels = {p.index: p.label for p in self.periods}
        if what == "p_index":
            data = {(labels[t], r.symbol): r.p_index for t, recs in self.records.items() for r in recs}
        elif what == "return":
            data = {(labels[t], s): b.period_return for t, bars in self.bars.items()
                    for s, b in bars.items() if s != self.index_symbol}
        else:
            raise ValueError(what)
        ser = pd.Series(data, dtype=float)
        if ser.empty:
            return pd.DataFrame(index=[p.label for p in self.periods], columns=self.symbols, dtype=float)
        return ser.unstack().reindex(index=[p.label for p in self.periods], columns=self.symbols)


def build_panel(daily_bars: Iterable[DailyBar], rates: list[RatePoint], calendar: str,
                index_symbol: str, delta: float | None = None,
                events: Iterable[AdjustmentEvent] = ()) -> Panel:
    daily = forward_adjust(daily_bars, events)
    pbars = aggregate_period(daily, calendar)
    rates = sorted(rates, key=lambda p: p.date)

    bars: dict[int, dict[str, PeriodBar]] = defaultdict(dict)
    for b in pbars:
        bars[b.period_id.index][b.symbol] = b
    periods = [PeriodId(calendar, t) for t in sorted(bars)]

    period_rates = {}
    for t, by_sym in bars.items():
        ref = by_sym.get(index_symbol) or min(by_sym.values(), key=lambda b: b.first_date)
        period_rates[t] = period_rate(rates, ref)

    records, exclusions = compute_records(pbars, index_symbol, lambda b: period_rates[b.period_id.index], delta)
    per_symbol: dict[str, list[DailyBar]] = defaultdict(list)
    for b in daily:
        per_symbol[b.symbol].append(b)
    for lst in per_symbol.values():
        lst.sort(key=lambda b: b.date)
    return Panel(calendar, index_symbol, periods, dict(bars), period_rates,
                 records_by_period(records), exclusions, dict(per_symbol))
