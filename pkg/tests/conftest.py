from __future__ import annotations

from datetime import date, timedelta

import pytest

from pfrontier.market_data import DailyBar, PeriodBar, PeriodId, RatePoint

# criterion number -> (passed, description); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, desc = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {desc}")


def pbar(anchor, high, low, last=None, symbol="X", period="2024-01", n_days=5):
    pid = PeriodId.parse(period)
    start = pid.start
    return PeriodBar(symbol, pid, anchor, high, low, anchor if last is None else last,
                     start, start + timedelta(days=n_days - 1), n_days)


def daily(symbol, start: date, closes, lows=None, highs=None, opens=None):
    """Weekday bars with the given closes; intraday fields default to the close."""
    out = []
    d = start
    for i, c in enumerate(closes):
        while d.weekday() >= 5:
            d += timedelta(days=1)
        lo = c if lows is None else lows[i]
        hi = c if highs is None else highs[i]
        op = c if opens is None else opens[i]
        out.append(DailyBar(symbol, d, op, max(hi, op, c), min(lo, op, c), c))
        d += timedelta(days=1)
    return out


def month_bars(symbol, closes_by_month: dict[str, list[float]]):
    out = []
    for label, closes in closes_by_month.items():
        out += daily(symbol, PeriodId.parse(label).start, closes)
    return out


@pytest.fixture
def flat_rates():
    return [RatePoint(date(2000, 1, 1), 0.12)]
