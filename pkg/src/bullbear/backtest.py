"""Signals from market heads, equity-curve simulation and return/risk metrics."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

MODES = ("long-flat", "long-short")
CONVENTIONS = ("standard", "paper-literal")
DAYS_PER_YEAR = 365.0


@dataclass(frozen=True)
class Signal:
    date: object
    position: int  # 1 long, 0 flat, -1 short


@dataclass
class EquityCurve:
    dates: list
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.dates) != len(self.values):
            raise DataError("equity curve dates and values differ in length")
        if np.any(self.values <= 0):
            raise DataError("portfolio value fell to or below zero")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise DataError("equity curve dates must be strictly increasing")


@dataclass
class Metrics:
    cumulative_returns: float
    annual_return: float
    max_drawdown: float
    calmar_ratio: float | None
    convention: str = "standard"

    def as_dict(self):
        return asdict(self)


def _check_mode(mode):
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")


def position_from_logits(up, down, mode="long-flat"):
    _check_mode(mode)
    if up > down:
        return 1
    if up < down and mode == "long-short":
        return -1
    return 0


def predict_direction(heads, mode="long-flat"):
    """Long when the bullish head agrees more with the market vector than the bearish one."""
    mar = np.asarray(getattr(heads.h_mar, "data", heads.h_mar))
    comp = np.asarray(getattr(heads.h_comp, "data", heads.h_comp))
    up, down = float(comp[..., 0, :] @ mar), float(comp[..., 1, :] @ mar)
    return position_from_logits(up, down, mode)


def positions_from_logits(up, down, mode="long-flat"):
    _check_mode(mode)
    up, down = np.asarray(up), np.asarray(down)
    pos = (up > down).astype(np.int64)
    if mode == "long-short":
        pos = pos - (up < down).astype(np.int64)
    return pos


def run_backtest(signals, bars, mode="long-flat"):
    """V_{t+1} = V_t (1 + position_t r_{t+1}) with close-to-close returns, V_0 = 1.

    Signals on the last bar have no next close and are skipped.
    """
    _check_mode(mode)
    day_of = {b.date: i for i, b in enumerate(bars)}
    closes = np.array([b.close for b in bars])
    dates, values = [], []
    v = 1.0
    prev_day = -1
    for s in signals:
        if s.position not in (-1, 0, 1):
            raise DataError(f"{s.date}: position must be -1, 0 or 1")
        if s.position == -1 and mode != "long-short":
            raise DataError(f"{s.date}: short position outside long-short mode")
        if s.date not in day_of:
            raise DataError(f"signal date {s.date} has no price bar")
        t = day_of[s.date]
        if t <= prev_day:
            raise DataError(f"signal dates must increase; {s.date} repeats or goes back")
        prev_day = t
        if t + 1 >= len(bars):
            continue
        if not dates:
            dates.append(bars[t].date)
            values.append(v)
        r = closes[t + 1] / closes[t] - 1.0
        v = v * (1.0 + s.position * r)
        dates.append(bars[t + 1].date)
        values.append(v)
    return EquityCurve(dates, np.array(values))


def max_drawdown(values):
    """Largest fractional fall from a running peak, single pass."""
    v = np.asarray(values, dtype=np.float64)
    peak = np.maximum.accumulate(v)
    return float(np.max((peak - v) / peak))


def max_drawdown_literal(values):
    """max(P_peak / P_valley − 1) with the valley after the peak."""
    v = np.asarray(values, dtype=np.float64)
    peak = np.maximum.accumulate(v)
    return float(np.max(peak / v - 1.0))


def calmar(annual, mdd):
    return None if mdd <= 0 else float(annual / mdd)


def compute_metrics(curve, convention="standard", literal_n=1.0, literal_t=None):
    """Cumulative, annualized, drawdown and Calmar figures for an equity curve.

    ``paper-literal`` uses (R/n)^(1/t) − 1 with R = V_T/V_0 and peak/valley − 1;
    ``literal_t`` defaults to the curve span in years.
    """
    if convention not in CONVENTIONS:
        raise ConfigError(f"convention must be one of {CONVENTIONS}, got {convention!r}")
    v = curve.values
    if len(v) < 2:
        raise DataError("metrics need at least two curve points")
    span_days = (curve.dates[-1] - curve.dates[0]).days
    if span_days <= 0:
        raise DataError("equity curve spans no calendar time")
    growth = v[-1] / v[0]
    cumulative = growth - 1.0
    if convention == "standard":
        annual = growth ** (DAYS_PER_YEAR / span_days) - 1.0
        mdd = max_drawdown(v)
    else:
        t = span_days / DAYS_PER_YEAR if literal_t is None else literal_t
        if literal_n <= 0 or t <= 0:
            raise ConfigError("paper-literal annualization needs n > 0 and t > 0")
        annual = (growth / literal_n) ** (1.0 / t) - 1.0
        mdd = max_drawdown_literal(v)
    return Metrics(float(cumulative), float(annual), float(mdd), calmar(annual, mdd), convention)


def write_report(curve, signals, bars, metrics, mode, out_dir, prefix="backtest"):
    """``<prefix>_equity.csv`` (date,position,close,portfolio_value) and ``<prefix>_metrics.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    close_of = {b.date: b.close for b in bars}
    pos_of = {s.date: s.position for s in signals}
    eq = out_dir / f"{prefix}_equity.csv"
    with eq.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "position", "close", "portfolio_value"])
        for d, val in zip(curve.dates, curve.values):
            pos = pos_of.get(d, "")
            w.writerow([d.isoformat(), pos, repr(close_of[d]), repr(float(val))])
    summary = {**metrics.as_dict(), "mode": mode}
    js = out_dir / f"{prefix}_metrics.json"
    js.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return eq, js
