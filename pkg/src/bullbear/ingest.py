"""Price/news loading, trend labels, look-back windows and the chronological split."""
from __future__ import annotations

import csv
import datetime as dt
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, InsufficientDataError, ParseError

PRICE_HEADER = ["date", "open", "high", "low", "close"]
NEWS_KEYS = ("date", "stock", "text", "topics")
WINDOW_COLUMNS = ("open", "close", "low", "high")


@dataclass(frozen=True)
class PriceBar:
    date: dt.date
    open: float
    high: float
    low: float
    close: float
    volume: float | None = None

    def validate(self):
        if min(self.open, self.high, self.low, self.close) <= 0:
            raise DataError(f"{self.date}: prices must be positive")
        lo, hi = min(self.open, self.close), max(self.open, self.close)
        if not (self.low <= lo and hi <= self.high):
            raise DataError(
                f"{self.date}: OHLC invariant violated "
                f"(low={self.low}, open={self.open}, close={self.close}, high={self.high})"
            )


@dataclass(frozen=True)
class PriceWindow:
    end_date: dt.date
    dates: tuple
    matrix: np.ndarray  # delta x 4, columns open, close, low, high

    @property
    def delta(self):
        return self.matrix.shape[0]

    def normalized(self):
        """Prices as returns relative to the window's first close."""
        return self.matrix / self.matrix[0, 1] - 1.0


@dataclass(frozen=True)
class NewsDoc:
    date: dt.date
    stock: str
    text: str
    topics: tuple = ()


@dataclass
class AlignedSample:
    index: int
    day: int  # position in the bar series
    date: dt.date
    window: PriceWindow
    news: list
    label: int
    stock: str = ""


@dataclass
class DatasetSplit:
    train: list
    test: list
    ratio: float


@dataclass
class IndustryMap:
    industries: dict = field(default_factory=dict)  # industry -> list of stocks

    def __post_init__(self):
        seen = {}
        for ind, stocks in self.industries.items():
            for s in stocks:
                if s in seen and seen[s] != ind:
                    raise DataError(f"stock {s} listed under both {seen[s]} and {ind}")
                seen[s] = ind
        self._by_stock = seen

    def industry_of(self, stock):
        try:
            return self._by_stock[stock]
        except KeyError:
            raise DataError(f"stock {stock} is not in the industry map") from None

    def stocks(self, industry):
        return list(self.industries.get(industry, ()))

    def __contains__(self, stock):
        return stock in self._by_stock


class NewsIndex:
    """News documents retrievable by (stock, date)."""

    def __init__(self, docs=()):
        self.docs = list(docs)
        self._index = defaultdict(list)
        for d in self.docs:
            self._index[(d.stock, d.date)].append(d)

    def on(self, stock, date):
        return list(self._index.get((stock, date), ()))

    def stocks(self):
        return sorted({d.stock for d in self.docs})

    def count_by_stock(self):
        counts = defaultdict(int)
        for d in self.docs:
            counts[d.stock] += 1
        return dict(counts)

    def __len__(self):
        return len(self.docs)

    def __iter__(self):
        return iter(self.docs)


def _parse_date(value, path, line):
    try:
        return dt.date.fromisoformat(value.strip())
    except (ValueError, AttributeError):
        raise ParseError(f"bad ISO-8601 date {value!r}", path, line) from None


def load_prices(path):
    path = Path(path)
    bars = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", path, 1)
        header = [h.strip() for h in header]
        if header not in (PRICE_HEADER, PRICE_HEADER + ["volume"]):
            raise ParseError(f"expected header date,open,high,low,close[,volume], got {','.join(header)}", path, 1)
        has_volume = len(header) == 6
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", path, lineno)
            date = _parse_date(row[0], path, lineno)
            try:
                o, h, lo, c = (float(x) for x in row[1:5])
                vol = float(row[5]) if has_volume and row[5].strip() else None
            except ValueError:
                raise ParseError("non-numeric price field", path, lineno) from None
            if not all(math.isfinite(x) for x in (o, h, lo, c)):
                raise ParseError("non-finite price field", path, lineno)
            bar = PriceBar(date, o, h, lo, c, vol)
            bar.validate()
            bars.append(bar)
    bars.sort(key=lambda b: b.date)
    for a, b in zip(bars, bars[1:]):
        if a.date == b.date:
            raise DataError(f"duplicate bar for {a.date} in {path}")
    return bars


def write_prices(bars, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        with_volume = any(b.volume is not None for b in bars)
        w.writerow(PRICE_HEADER + (["volume"] if with_volume else []))
        for b in bars:
            row = [b.date.isoformat(), repr(b.open), repr(b.high), repr(b.low), repr(b.close)]
            if with_volume:
                row.append("" if b.volume is None else repr(b.volume))
            w.writerow(row)


def load_news(path, topics=None):
    """Read JSONL news; ``topics`` is the declared topic universe (None accepts any)."""
    path = Path(path)
    universe = None if topics is None else set(topics)
    docs = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", path, lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("expected a JSON object", path, lineno)
            missing = [k for k in NEWS_KEYS if k not in obj]
            if missing:
                raise ParseError(f"missing key(s) {', '.join(missing)}", path, lineno)
            text = obj["text"]
            if not isinstance(text, str) or not text.strip():
                raise DataError(f"{path}:{lineno}: empty news text")
            tps = obj["topics"]
            if not isinstance(tps, list) or not all(isinstance(t, str) for t in tps):
                raise ParseError("topics must be a list of strings", path, lineno)
            if universe is not None:
                unknown = sorted(set(tps) - universe)
                if unknown:
                    raise DataError(f"{path}:{lineno}: unknown topic id(s) {', '.join(unknown)}")
            docs.append(NewsDoc(_parse_date(str(obj["date"]), path, lineno), str(obj["stock"]), text, tuple(tps)))
    return NewsIndex(docs)


def write_news(docs, path):
    with Path(path).open("w", encoding="utf-8") as fh:
        for d in docs:
            fh.write(json.dumps({"date": d.date.isoformat(), "stock": d.stock,
                                 "text": d.text, "topics": list(d.topics)}) + "\n")


def load_industry_map(path):
    path = Path(path)
    industries = defaultdict(list)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["industry", "stock"]:
            raise ParseError("expected header industry,stock", path, 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", path, lineno)
            industries[row[0].strip()].append(row[1].strip())
    return IndustryMap(dict(industries))


def label_trends(bars, ties="zero"):
    """Next-day direction labels; ``ties`` is "zero" (flat -> 0) or "drop" (flat -> None).

    One label per bar except the last, which has no next close.
    """
    if len(bars) < 2:
        raise InsufficientDataError("need at least 2 bars to label trends")
    if ties not in ("zero", "drop"):
        raise ConfigError(f"ties must be 'zero' or 'drop', got {ties!r}")
    closes = [b.close for b in bars]
    labels = []
    for c0, c1 in zip(closes, closes[1:]):
        if c1 > c0:
            labels.append(1)
        elif c1 < c0 or ties == "zero":
            labels.append(0)
        else:
            labels.append(None)
    return labels


def build_samples(bars, news, delta, stock="", ties="zero"):
    """One sample per labeled day with a full ``delta``-day look-back window."""
    if delta < 1:
        raise ConfigError(f"window length must be >= 1, got {delta}")
    if len(bars) < delta + 1:
        raise InsufficientDataError(f"need at least {delta + 1} bars for a window of {delta}, got {len(bars)}")
    labels = label_trends(bars, ties=ties)
    if news is None:
        news = NewsIndex()
    elif not isinstance(news, NewsIndex):
        news = NewsIndex(news)
    ohlc = np.array([[b.open, b.close, b.low, b.high] for b in bars])
    samples = []
    for t in range(delta - 1, len(bars) - 1):
        if labels[t] is None:
            continue
        rows = slice(t - delta + 1, t + 1)
        window = PriceWindow(bars[t].date, tuple(b.date for b in bars[rows]), ohlc[rows].copy())
        samples.append(AlignedSample(len(samples), t, bars[t].date, window,
                                     news.on(stock, bars[t].date), labels[t], stock))
    return samples


def split_chronological(samples, ratio=0.7):
    if not 0 < ratio < 1:
        raise ConfigError(f"split ratio must lie in (0, 1), got {ratio}")
    cut = math.floor(ratio * len(samples) + 1e-9)
    train, test = list(samples[:cut]), list(samples[cut:])
    if not train or not test:
        raise ConfigError(f"split of {len(samples)} samples at ratio {ratio} leaves a side empty")
    return DatasetSplit(train, test, ratio)
