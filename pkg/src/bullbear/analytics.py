"""Attention panels and the bias-evolution measures built on them.

Keys throughout are plain tuples:

* panel: ``(stock, window, topic, perspective) -> AS``
* migration: ``(stock, from_window, to_window, from_topic, to_topic, perspective) -> AM``
"""
from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

PERSPECTIVES = ("bull", "bear")
SCALE = 1000.0


@dataclass
class AttentionPanel:
    values: dict = field(default_factory=dict)

    def get(self, stock, window, topic, perspective):
        return self.values.get((stock, window, topic, perspective), 0.0)

    def stocks(self):
        return sorted({k[0] for k in self.values})

    def windows(self, stock=None):
        return sorted({k[1] for k in self.values if stock is None or k[0] == stock})

    def topics(self, stock=None, window=None):
        """Topic universe, optionally restricted to one stock and/or window."""
        return sorted({k[2] for k in self.values
                       if (stock is None or k[0] == stock) and (window is None or k[1] == window)})

    def scaled(self, c):
        return AttentionPanel({k: v * c for k, v in self.values.items()})

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True)
class TimeWindow:
    index: int
    start: object
    end: object  # inclusive

    def __contains__(self, date):
        return self.start <= date <= self.end


def equal_windows(dates, count=4):
    """Split the sorted distinct dates into ``count`` contiguous, near-equal windows."""
    uniq = sorted(set(dates))
    if count < 1:
        raise ConfigError("window count must be >= 1")
    if len(uniq) < count:
        raise ConfigError(f"cannot cut {len(uniq)} dates into {count} windows")
    return [TimeWindow(i, chunk[0], chunk[-1])
            for i, chunk in enumerate(np.array_split(np.array(uniq, dtype=object), count))]


def check_partition(windows, dates):
    ws = sorted(windows, key=lambda w: w.start)
    for a, b in zip(ws, ws[1:]):
        if b.start <= a.end:
            raise ConfigError(f"time windows {a.index} and {b.index} overlap")
    for d in dates:
        if not any(d in w for w in ws):
            raise ConfigError(f"date {d} falls in a gap between time windows")


def build_panel(records, windows, aggregate="mean"):
    """Aggregate per-position attention into AS values.

    ``records`` is an iterable of ``(stock, date, maps, tokens, docs)`` where
    ``tokens.doc_of`` maps each fused-sequence text position to its source doc
    (-1 for markers, padding and price rows, which carry no topic).
    """
    if aggregate not in ("mean", "sum"):
        raise ConfigError(f"aggregate must be 'mean' or 'sum', got {aggregate!r}")
    records = list(records)
    check_partition(windows, [r[1] for r in records])
    cells = defaultdict(lambda: ([], []))
    for stock, date, maps, tokens, docs in records:
        w = next(w.index for w in windows if date in w)
        doc_of = np.asarray(tokens.doc_of)
        a_bu = np.abs(np.asarray(maps.a_bu))
        a_be = np.abs(np.asarray(maps.a_be))
        for pos in np.flatnonzero(doc_of >= 0):
            for topic in docs[doc_of[pos]].topics:
                bu, be = cells[(stock, w, topic)]
                bu.append(a_bu[pos])
                be.append(a_be[pos])
    reduce = np.mean if aggregate == "mean" else np.sum
    values = {}
    for (stock, w, topic), (bu, be) in sorted(cells.items()):
        values[(stock, w, topic, "bull")] = SCALE * float(reduce(bu))
        values[(stock, w, topic, "bear")] = SCALE * float(reduce(be))
    return AttentionPanel(values)


def _stock_industry(imap, stock):
    if stock not in imap:
        raise DataError(f"stock {stock} is not in the industry map")
    return imap.industry_of(stock)


def industry_attention(panel, imap):
    """IAS(I, τ, z, perspective) = Σ over the industry's stocks of AS."""
    out = defaultdict(float)
    for (stock, w, topic, persp), v in panel.values.items():
        out[(_stock_industry(imap, stock), w, topic, persp)] += v
    return dict(sorted(out.items()))


def bias_scores(panel, imap=None):
    """Signed Bias per stock cell and, given a map, IBias per industry cell.

    IBias is computed both as a sum of stock biases and as the difference of
    bull and bear IAS; the two must agree.
    """
    bias = {}
    for (stock, w, topic, persp), v in panel.values.items():
        if persp != "bull":
            continue
        if (stock, w, topic, "bear") not in panel.values:
            raise DataError(f"bear entry missing for {(stock, w, topic)}")
        bias[(stock, w, topic)] = v - panel.values[(stock, w, topic, "bear")]
    if imap is None:
        return bias, None
    summed = defaultdict(float)
    for (stock, w, topic), b in bias.items():
        summed[(_stock_industry(imap, stock), w, topic)] += b
    ias = industry_attention(panel, imap)
    ibias = {}
    for key, via_sum in summed.items():
        via_ias = ias.get(key + ("bull",), 0.0) - ias.get(key + ("bear",), 0.0)
        if not np.isclose(via_sum, via_ias, rtol=1e-9, atol=1e-9):
            raise ArithmeticError(f"IBias identity broken at {key}: {via_sum} vs {via_ias}")
        ibias[key] = via_sum
    return bias, dict(sorted(ibias.items()))


def consecutive_pairs(windows):
    idx = sorted(windows)
    return list(zip(idx, idx[1:]))


def migration(panel, pairs=None):
    """AM(s, τ→τ', z→z') = AS(s,τ,z) · AS(s,τ',z') / Σ_z'' AS(s,τ',z''), per perspective.

    Zero destination mass gives AM = 0.
    """
    by_cell = defaultdict(dict)  # (stock, window, persp) -> {topic: AS}
    for (stock, w, topic, persp), v in panel.values.items():
        by_cell[(stock, w, persp)][topic] = v
    am = {}
    for stock in panel.stocks():
        transitions = consecutive_pairs(panel.windows(stock)) if pairs is None else pairs
        for src, dst in transitions:
            for persp in PERSPECTIVES:
                source = by_cell.get((stock, src, persp), {})
                dest = by_cell.get((stock, dst, persp), {})
                mass = sum(dest.values())
                if not source or not dest:
                    continue
                if mass <= 0:
                    log.warning("zero destination mass for %s %s->%s (%s); AM set to 0", stock, src, dst, persp)
                for z, a in sorted(source.items()):
                    for z2, b in sorted(dest.items()):
                        am[(stock, src, dst, z, z2, persp)] = a * b / mass if mass > 0 else 0.0
    return am


def bias_migration(am):
    """BM = AM_bull − AM_bear on every transition present in either perspective."""
    keys = sorted({k[:5] for k in am})
    return {k: am.get(k + ("bull",), 0.0) - am.get(k + ("bear",), 0.0) for k in keys}


def industry_migration(am, imap, perspective="both"):
    """IAM(I, z') summed over stocks, transitions and source topics, plus AMP = IAM / Σ IAM.

    ``perspective`` selects bull, bear, or their combined flow ("both").
    """
    if perspective not in ("bull", "bear", "both"):
        raise ConfigError(f"perspective must be bull, bear or both, got {perspective!r}")
    iam = defaultdict(float)
    for (stock, _src, _dst, _z, z2, persp), v in am.items():
        if perspective in (persp, "both"):
            iam[(_stock_industry(imap, stock), z2)] += v
    iam = dict(sorted(iam.items()))
    return iam, _normalize(iam, abs_denominator=False)


def industry_bias_migration(am, imap):
    """IBM(I, z') = Σ (AM_bull − AM_bear) and BMP = IBM / Σ |IBM|."""
    ibm = defaultdict(float)
    for (stock, _src, _dst, _z, z2), v in bias_migration(am).items():
        ibm[(_stock_industry(imap, stock), z2)] += v
    ibm = dict(sorted(ibm.items()))
    return ibm, _normalize(ibm, abs_denominator=True)


def _normalize(values, abs_denominator):
    totals = defaultdict(float)
    for (ind, _z), v in values.items():
        totals[ind] += abs(v) if abs_denominator else v
    return {k: (v / totals[k[0]] if totals[k[0]] != 0 else None) for k, v in values.items()}


def _fmt(v):
    return "" if v is None else repr(float(v))


def _write(path, header, rows):
    try:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc
    return Path(path)


def emit_reports(panel, am, imap, out_dir):
    """Write the panel, bias, migration and industry heat-map CSVs; returns the paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc.strerror}") from exc
    files = [_write(out / "attention_panel.csv", ["stock", "window", "topic", "perspective", "AS"],
                    [[s, w, z, p, _fmt(v)] for (s, w, z, p), v in sorted(panel.values.items())])]
    bias, _ = bias_scores(panel)
    files.append(_write(out / "bias.csv",
                        ["stock", "window", "topic", "AS_bull", "AS_bear", "bias", "abs_bias"],
                        [[s, w, z, _fmt(panel.get(s, w, z, "bull")), _fmt(panel.get(s, w, z, "bear")),
                          _fmt(b), _fmt(abs(b))] for (s, w, z), b in sorted(bias.items())]))
    files.append(_write(out / "migration.csv",
                        ["stock", "from_window", "to_window", "from_topic", "to_topic", "perspective", "AM"],
                        [[*k, _fmt(v)] for k, v in sorted(am.items())]))
    rows = []
    if imap is not None and len(panel):
        iam, amp = industry_migration(am, imap)
        ibm, bmp = industry_bias_migration(am, imap)
        industries = sorted({imap.industry_of(s) for s in panel.stocks()})
        for ind in industries:
            for z in panel.topics():
                rows.append([ind, z, _fmt(amp.get((ind, z))), _fmt(bmp.get((ind, z)))])
    files.append(_write(out / "industry_heatmap.csv", ["industry", "topic", "AMP", "BMP"], rows))
    return files
