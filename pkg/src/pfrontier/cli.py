"""
Command-line entry point.

    pfrontier synth    --out data/ --seed 7
    pfrontier pindex   --config data/run.toml
    pfrontier frontier --config data/run.toml --period 2014-06
    pfrontier backtest --config data/run.toml --price-limit 0.1
    pfrontier factor   --config data/run.toml --mode pratio

A run is described by a TOML file; command-line flags override it. Every
table written carries a ``# pfrontier <version> config=<hash>`` first line so
outputs can be matched to the configuration that produced them.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .backtest import (
    ACCOUNTINGS, RESULT_COLUMNS, StrategyKind, StrategySpec, result_rows, run_adjusted_strategy,
    summary,
)
from .errors import InputError, InsufficientDataError, PFrontierError
from .factor_lab import run_factor_analysis
from .frontier import AssetPoint, build_eef, tangent_stock, write_curve
from .market_data import (
    CALENDARS, MONTHLY, SyntheticRegime, factors_frame, generate_synthetic_panel,
    load_adjustments, load_daily_bars, load_factors, load_rates, write_daily_bars, write_factors,
    write_rates,
)
from .panel import Panel, build_panel
from .pindex import write_records

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("pfrontier")

EXIT_OK, EXIT_INPUT, EXIT_DATA, EXIT_INVARIANT = 0, 2, 3, 4


@dataclass
class RunConfig:
    bars: str | None = None
    rates: str | None = None
    factors: str | None = None
    adjustments: str | None = None
    index_symbol: str = "INDEX"
    calendar: str = MONTHLY
    delta: float | None = None  # None: delta = r
    strategies: list[str] = field(default_factory=lambda: [k.value for k in StrategyKind])
    accounting: list[str] = field(default_factory=lambda: list(ACCOUNTINGS))
    price_limit: float | None = None
    limit_overrides: dict[str, float] = field(default_factory=dict)
    threshold_share: float = 0.8
    defer_cap: int = 5
    grid_size: int = 50
    mode: str = "pindex"
    lags: int = 4
    out: str = "out"
    seed: int = 0
    n_stocks: int = 50
    n_periods: int = 132

    def validate(self) -> None:
        if self.calendar not in CALENDARS:
            raise InputError(f"calendar must be one of {CALENDARS}, got {self.calendar!r}")
        if self.delta is not None and not self.delta > -1:
            raise InputError(f"delta must be > -1, got {self.delta}")
        for a in self.accounting:
            if a not in ACCOUNTINGS:
                raise InputError(f"accounting must be one of {ACCOUNTINGS}, got {a!r}")
        for s in self.strategies:
            if s not in StrategyKind.__members__:
                raise InputError(f"unknown strategy {s!r}")
        if self.mode not in ("pindex", "pratio"):
            raise InputError(f"mode must be pindex or pratio, got {self.mode!r}")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise InputError("seed must be an unsigned 64-bit integer")

    def digest(self) -> str:
        """Hash of every setting that can change results (the output directory cannot)."""
        fields = {k: v for k, v in asdict(self).items() if k != "out"}
        blob = json.dumps(fields, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def header(self) -> str:
        return f"# pfrontier {__version__} config={self.digest()}\n"


# ---------------------------------------------------------------------------
# configuration


def _parse_limit(value) -> float | None:
    if value is None or value is False:
        return None
    if isinstance(value, str):
        if value.strip().lower() in ("off", "none", "inf"):
            return None
        try:
            value = float(value)
        except ValueError:
            raise InputError(f"price limit must be a fraction or 'off', got {value!r}") from None
    value = float(value)
    if math.isinf(value):
        return None
    if not value > 0:
        raise InputError(f"price limit must be > 0, got {value}")
    return value


def _parse_delta(value) -> float | None:
    if value is None or (isinstance(value, str) and value.strip().lower() == "r"):
        return None
    try:
        return float(value)
    except (TypeError, ValueError):
        raise InputError(f"delta must be 'r' or a number, got {value!r}") from None


def _accounting_name(name: str) -> str:
    return name.replace("-", "_")


def load_config(path: str | None) -> RunConfig:
    """Read a TOML run file; relative data paths resolve against its directory."""
    cfg = RunConfig()
    if path is None:
        return cfg
    p = Path(path)
    try:
        with open(p, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise InputError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"{path}: {exc}") from None
    base = p.resolve().parent

    def resolve(v):
        if v in (None, ""):
            return None
        q = Path(v)
        return str(q if q.is_absolute() else base / q)

    data = raw.get("data", {})
    for key in ("bars", "rates", "factors", "adjustments"):
        setattr(cfg, key, resolve(data.get(key)))
    cfg.index_symbol = data.get("index_symbol", cfg.index_symbol)

    run = raw.get("run", {})
    cfg.calendar = run.get("calendar", cfg.calendar)
    cfg.delta = _parse_delta(run.get("delta"))
    cfg.strategies = list(run.get("strategies", cfg.strategies))
    acc = run.get("accounting", cfg.accounting)
    cfg.accounting = [_accounting_name(a) for a in ([acc] if isinstance(acc, str) else acc)]
    cfg.grid_size = int(run.get("grid_size", cfg.grid_size))
    cfg.mode = run.get("mode", cfg.mode)
    cfg.lags = int(run.get("lags", cfg.lags))
    cfg.seed = int(run.get("seed", cfg.seed))
    if "out" in run:
        cfg.out = resolve(run["out"])

    lim = raw.get("price_limit", {})
    cfg.price_limit = _parse_limit(lim.get("default"))
    cfg.limit_overrides = {k: float(v) for k, v in sorted(lim.get("overrides", {}).items())}
    cfg.threshold_share = float(lim.get("threshold_share", cfg.threshold_share))
    cfg.defer_cap = int(lim.get("defer_cap", cfg.defer_cap))

    synth = raw.get("synth", {})
    cfg.n_stocks = int(synth.get("n_stocks", cfg.n_stocks))
    cfg.n_periods = int(synth.get("n_periods", cfg.n_periods))
    return cfg


def apply_flags(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "calendar", None):
        cfg.calendar = args.calendar
    if getattr(args, "accounting", None):
        cfg.accounting = [_accounting_name(args.accounting)]
    if getattr(args, "price_limit", None) is not None:
        cfg.price_limit = _parse_limit(args.price_limit)
    if getattr(args, "mode", None):
        cfg.mode = args.mode
    if getattr(args, "out", None):
        cfg.out = args.out
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    for key in ("n_stocks", "n_periods"):
        if getattr(args, key, None) is not None:
            setattr(cfg, key, getattr(args, key))
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# helpers


def _require(cfg: RunConfig, *keys: str) -> None:
    for key in keys:
        if not getattr(cfg, key):
            raise InputError(f"no {key} path configured")


def _load_panel(cfg: RunConfig) -> Panel:
    _require(cfg, "bars", "rates")
    bars = load_daily_bars(cfg.bars)
    rates = load_rates(cfg.rates)
    events = load_adjustments(cfg.adjustments) if cfg.adjustments else ()
    log.info("loaded %d bars, %d rate points", len(bars), len(rates))
    return build_panel(bars, rates, cfg.calendar, cfg.index_symbol, cfg.delta, events)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, cfg: RunConfig, body: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(cfg.header())
        fh.write(body)
    log.info("wrote %s", path)


def _csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    w.writerows(rows)
    return buf.getvalue()


def _num(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig) -> int:
    regime = SyntheticRegime(calendar=cfg.calendar, index_symbol=cfg.index_symbol)
    panel = generate_synthetic_panel(cfg.seed, cfg.n_stocks, cfg.n_periods, regime)
    out = _out_dir(cfg)
    write_daily_bars(out / "bars.csv", panel.bars)
    write_rates(out / "rates.csv", panel.rates)
    write_factors(out / "factors.csv", panel.factors)
    (out / "run.toml").write_text(
        "[data]\n"
        'bars = "bars.csv"\n'
        'rates = "rates.csv"\n'
        'factors = "factors.csv"\n'
        f'index_symbol = "{cfg.index_symbol}"\n\n'
        "[run]\n"
        f'calendar = "{cfg.calendar}"\n'
        'delta = "r"\n'
        'out = "out"\n'
        f"seed = {cfg.seed}\n\n"
        "[price_limit]\n"
        'default = "off"\n\n'
        "[synth]\n"
        f"n_stocks = {cfg.n_stocks}\n"
        f"n_periods = {cfg.n_periods}\n",
        encoding="utf-8",
    )
    print(f"wrote synthetic panel ({cfg.n_stocks} stocks x {cfg.n_periods} periods) to {out}")
    return EXIT_OK


def cmd_pindex(cfg: RunConfig) -> int:
    panel = _load_panel(cfg)
    records = panel.all_records()
    if not records:
        raise InsufficientDataError("no p-index records: every (symbol, period) was excluded")
    out = _out_dir(cfg)
    buf = io.StringIO()
    write_records(buf, records)
    _write(out / "pindex.csv", cfg, buf.getvalue())
    excl = sorted(panel.exclusions, key=lambda e: (e.period_id.index, e.symbol))
    for e in excl:
        log.info("excluded %s %s: %s", e.symbol, e.period_id, e.reason)
    _write(out / "exclusions.csv", cfg,
           _csv([[e.symbol, e.period_id.label, e.reason] for e in excl], ["symbol", "period", "reason"]))
    print(f"{len(records)} records, {len(excl)} exclusions -> {out}")
    return EXIT_OK


def cmd_frontier(cfg: RunConfig, period: str | None) -> int:
    panel = _load_panel(cfg)
    if period is None:
        if not panel.records:
            raise InsufficientDataError("no period has p-index records")
        t = max(panel.records)
    else:
        try:
            t = panel.period_id(period).index
        except ValueError as exc:
            raise InputError(str(exc)) from None
    recs = panel.records.get(t, [])
    label = next((p.label for p in panel.periods if p.index == t), period)
    if not recs:
        raise InsufficientDataError(f"{label}: empty cross-section")
    assets = [AssetPoint(r.symbol, r.p_index, r.realized_return) for r in recs]
    curve = build_eef(assets, cfg.grid_size).breakpoints()
    tangent = tangent_stock(assets, panel.rates[t])
    buf = io.StringIO()
    buf.write(f"# period: {label}\n# tangent: {tangent}\n")
    write_curve(buf, curve)
    out = _out_dir(cfg)
    _write(out / f"frontier_{label}.csv", cfg, buf.getvalue())
    _write(out / f"assets_{label}.csv", cfg,
           _csv([[a.symbol, _num(a.v), _num(a.R)] for a in assets], ["symbol", "v", "R"]))
    print(f"{label}: {len(curve.left)} left / {len(curve.right)} right vertices, tangent {tangent}")
    return EXIT_OK


def cmd_backtest(cfg: RunConfig) -> int:
    panel = _load_panel(cfg)
    cache: dict = {}
    results = []
    for kind in cfg.strategies:
        for acc in cfg.accounting:
            spec = StrategySpec(StrategyKind(kind), cfg.calendar, acc, cfg.price_limit,
                                tuple(cfg.limit_overrides.items()), cfg.threshold_share,
                                cfg.defer_cap, cfg.grid_size)
            results.append(run_adjusted_strategy(spec, panel, cache=cache))
    out = _out_dir(cfg)
    _write(out / "backtest.csv", cfg, _csv(result_rows(results), RESULT_COLUMNS))
    doc = {"pfrontier": __version__, "config": cfg.digest(), "results": summary(results)}
    (out / "backtest_summary.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                                               encoding="utf-8")
    for res in results:
        print(f"{res.spec.name:36s} cumulative {res.cumulative:10.4%}  annualized {res.annualized:8.4%}")
    return EXIT_OK


def cmd_factor(cfg: RunConfig) -> int:
    if cfg.calendar != MONTHLY:
        raise InputError("factor analysis runs on the monthly calendar")
    _require(cfg, "factors")
    factors = factors_frame(load_factors(cfg.factors))
    panel = _load_panel(cfg)
    rep = run_factor_analysis(panel.frame("p_index"), panel.frame("return"), factors,
                              cfg.mode, cfg.lags)
    out = _out_dir(cfg)
    tag = cfg.mode

    est = rep.two_param
    _write(out / f"factor_{tag}_two_param.csv", cfg, _csv(
        [[k, _num(est.coefficients[k]), _num(est.pvalues[k]), _num(est.tstats[k])]
         for k in est.coefficients], ["coef", "avg", "pvalue", "tstat"]))

    perf = rep.performance
    _write(out / f"factor_{tag}_deciles.csv", cfg, _csv(
        [[row.portfolio] + [_num(getattr(row, c)) for c in ("ann_return", "ann_vol", "t_return", "alpha", "t_alpha")]
         for row in perf.itertuples(index=False)],
        ["portfolio", "ann_return", "ann_vol", "t_return", "alpha", "t_alpha"]))

    for name, est in (("six_factor", rep.six_factor), ("five_factor", rep.five_factor)):
        _write(out / f"factor_{tag}_{name}.csv", cfg, _csv(
            [[k, _num(est.coefficients[k]), _num(est.tstats[k]), _num(est.pvalues[k])]
             for k in est.coefficients], ["factor", "lambda_avg", "tstat", "pvalue"]))

    sp = rep.spreads
    _write(out / f"factor_{tag}_spreads.csv", cfg, _csv(
        [[m] + [_num(v) for v in row] for m, row in zip(sp.index, sp.to_numpy())],
        ["month"] + list(sp.columns)))
    print(f"factor analysis ({tag}): {len(rep.deciles.returns)} months -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pfrontier", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--version", action="version", version=f"pfrontier {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML run file")
        p.add_argument("--calendar", choices=CALENDARS)
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        return p

    p = common(sub.add_parser("synth", help="write a synthetic panel and run.toml"))
    p.add_argument("--n-stocks", type=int, dest="n_stocks")
    p.add_argument("--n-periods", type=int, dest="n_periods")

    common(sub.add_parser("pindex", help="p-index records and exclusions"))

    p = common(sub.add_parser("frontier", help="empirical efficient frontier for one period"))
    p.add_argument("--period", help="period label, e.g. 2014-06 or 2014-W23 (default: last)")

    p = common(sub.add_parser("backtest", help="strategy backtests"))
    p.add_argument("--accounting", choices=("reinvest", "non-reinvest", "non_reinvest"))
    p.add_argument("--price-limit", dest="price_limit", help="daily limit fraction or 'off'")

    p = common(sub.add_parser("factor", help="decile, Fama-MacBeth and factor-model tables"))
    p.add_argument("--mode", choices=("pindex", "pratio"))
    return parser


def _setup_logging() -> None:
    level = os.environ.get("PFRONTIER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_flags(load_config(args.config), args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "pindex":
            return cmd_pindex(cfg)
        if args.command == "frontier":
            return cmd_frontier(cfg, args.period)
        if args.command == "backtest":
            return cmd_backtest(cfg)
        return cmd_factor(cfg)
    except InputError as exc:
        code, err = EXIT_INPUT, exc
    except InsufficientDataError as exc:
        code, err = EXIT_DATA, exc
    except PFrontierError as exc:
        code, err = EXIT_INVARIANT, exc
    print(f"pfrontier: error: {err}", file=sys.stderr)
    return code

if __name__ == "__main__":
    sys.exit(main())
