"""Synthetic market fixtures with a planted text-to-direction signal."""
from __future__ import annotations

import datetime as dt

import numpy as np

from .ingest import NewsDoc, PriceBar

FILLER = (
    "company shares market investors analysts report quarter guidance sector outlook "
    "revenue earnings board meeting product launch supply chain demand policy rates "
    "inflation trade consumer energy technology growth capital dividend fund index "
    "volume session update statement forecast review plan risk team region"
).split()
BULL_WORD = "surge"
BEAR_WORD = "slump"


def trading_days(start, n):
    days, d = [], start
    while len(days) < n:
        if d.weekday() < 5:
            days.append(d)
        d += dt.timedelta(days=1)
    return days


def planted_market(n_days=600, hit_rate=0.9, stock="PLNT", topics=("z1", "z2", "z3", "z4"),
                   seed=0, start=dt.date(2019, 1, 2), docs_per_day=(1, 2), words_per_doc=(4, 9)):
    """Random-walk OHLC bars plus daily news whose marker word calls tomorrow's move.

    The marker is right with probability ``hit_rate``; every other word is noise.
    """
    rng = np.random.default_rng(seed)
    dates = trading_days(start, n_days)
    up = rng.random(n_days) < 0.5
    size = np.abs(rng.normal(0.012, 0.006, n_days)) + 0.001
    rets = np.where(up, size, -size)
    closes = 50.0 * np.cumprod(1.0 + rets)
    bars = []
    prev = 50.0
    for d, c in zip(dates, closes):
        o = prev * (1.0 + rng.normal(0, 0.002))
        hi = max(o, c) * (1.0 + abs(rng.normal(0, 0.003)))
        lo = min(o, c) * (1.0 - abs(rng.normal(0, 0.003)))
        bars.append(PriceBar(d, float(o), float(hi), float(lo), float(c), float(rng.integers(1e5, 1e6))))
        prev = c
    docs = []
    for t in range(n_days - 1):
        tomorrow_up = closes[t + 1] > closes[t]
        hint_up = tomorrow_up if rng.random() < hit_rate else not tomorrow_up
        n_docs = int(rng.integers(docs_per_day[0], docs_per_day[1] + 1))
        marker_doc = int(rng.integers(n_docs))
        for k in range(n_docs):
            words = list(rng.choice(FILLER, size=int(rng.integers(*words_per_doc))))
            if k == marker_doc:
                words.insert(int(rng.integers(len(words) + 1)), BULL_WORD if hint_up else BEAR_WORD)
            topic = str(topics[int(rng.integers(len(topics)))])
            docs.append(NewsDoc(dates[t], stock, " ".join(words), (topic,)))
    return bars, docs
