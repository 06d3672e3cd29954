"""Momentum spans, inertial pairing and the dual-competition loss stack."""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError

SPAN_KINDS = ("forward", "backward", "symmetric", "none")
DEFAULT_SPANS = ("-2", "-1", "0", "1", "2", "+-1", "+-2")
DEFAULT_ALPHAS = (0.1, 0.3, 0.5, 0.7, 0.9)


@dataclass(frozen=True)
class MomentumSpan:
    """Which neighbours of an anchor count as momentum-consistent.

    forward k: (i, i+k]; backward k: [i-k, i); symmetric k: [i-k, i+k] minus i.
    """
    kind: str
    k: int = 0

    def __post_init__(self):
        if self.kind not in SPAN_KINDS:
            raise ConfigError(f"unknown span kind {self.kind!r}")
        if self.k < 0 or (self.kind == "none") != (self.k == 0):
            raise ConfigError(f"invalid span {self.kind} {self.k}")

    @classmethod
    def parse(cls, text):
        """'-2' backward, '2' or '+2' forward, '+-2' / '±2' symmetric, '0' none."""
        if isinstance(text, MomentumSpan):
            return text
        s = str(text).strip().replace("±", "+-").replace("pm", "+-")
        m = re.fullmatch(r"(\+-|-|\+)?(\d+)", s)
        if not m:
            raise ConfigError(f"cannot parse momentum span {text!r}")
        sign, k = m.group(1), int(m.group(2))
        if k == 0:
            return cls("none", 0)
        return cls({"+-": "symmetric", "-": "backward"}.get(sign, "forward"), k)

    def window(self, i, n):
        if self.kind == "forward":
            lo, hi = i + 1, i + self.k
        elif self.kind == "backward":
            lo, hi = i - self.k, i - 1
        elif self.kind == "symmetric":
            lo, hi = i - self.k, i + self.k
        else:
            return set()
        return {j for j in range(max(lo, 0), min(hi, n - 1) + 1) if j != i}

    def __str__(self):
        if self.kind == "none":
            return "0"
        return {"forward": "", "backward": "-", "symmetric": "+-"}[self.kind] + str(self.k)


@dataclass
class PairSets:
    positives: list  # frozenset per anchor
    negatives: list
    offset: int = 0  # index of the first anchor in scope

    @property
    def anchors(self):
        return [p | n for p, n in zip(self.positives, self.negatives)]

    def masks(self):
        """Boolean (positive, candidate) matrices with anchors on rows."""
        n = len(self.positives)
        pos = np.zeros((n, n), dtype=bool)
        cand = np.zeros((n, n), dtype=bool)
        o = self.offset
        for i, (p, q) in enumerate(zip(self.positives, self.negatives)):
            pos[i, [j - o for j in p]] = True
            cand[i, [j - o for j in p | q]] = True
        return pos, cand


def inertial_pairs(labels, span, scope=None, include_self=False):
    """Positives share the anchor's label inside its momentum window; everything else
    in scope is a negative.  ``include_self`` restores the literal reading that
    admits the anchor as its own positive."""
    span = MomentumSpan.parse(span)
    idx = list(range(len(labels))) if scope is None else list(scope)
    n = len(idx)
    if idx != list(range(idx[0], idx[0] + n) if n else []):
        raise ConfigError("pairing scope must be a contiguous index range")
    y = [labels[j] for j in idx]
    positives, negatives = [], []
    for a in range(n):
        win = span.window(a, n)
        pos = {j for j in win if y[j] == y[a]}
        if include_self:
            pos.add(a)
        neg = {j for j in range(n) if j != a and j not in pos}
        positives.append(frozenset(idx[j] for j in pos))
        negatives.append(frozenset(idx[j] for j in neg))
    return PairSets(positives, negatives, idx[0] if n else 0)


@dataclass
class LossBreakdown:
    comp: float
    mar: float
    ce: float
    total: float
    logits_cm: np.ndarray = field(default=None, repr=False)  # ground-truth competition x market
    logits_um: np.ndarray = field(default=None, repr=False)
    logits_em: np.ndarray = field(default=None, repr=False)


def _check_tau(tau):
    if not tau > 0:
        raise ConfigError(f"temperature must be > 0, got {tau}")


def label_rows(labels):
    """Row of the competition matrix matching each label: UP (0) for 1, DOWN (1) for 0."""
    return 1 - np.asarray(labels, dtype=np.int64)


def competition_star(heads, labels):
    n = len(labels)
    return T.take(heads.h_comp, (np.arange(n), label_rows(labels), slice(None)))


def pair_logits(heads, labels):
    """S[a, i] = h*_Comp,a · h_Mar,i for every pair in the batch."""
    return T.matmul(competition_star(heads, labels), T.transpose(heads.h_mar))


def contrastive_from_logits(scores, pairs, tau, anchor_axis):
    """Supervised-contrastive term on a pairwise score matrix.

    ``anchor_axis=1`` reads anchor i's candidates down column i (competition
    vectors of others against the anchor's market vector); ``anchor_axis=0``
    reads along row i.  Anchors without positives are dropped from the mean.
    """
    _check_tau(tau)
    pos, cand = pairs.masks()
    live = pos.any(axis=1)
    if not live.any():
        return T.tensor(0.0)
    rows = T.transpose(scores) if anchor_axis == 1 else scores
    rows = T.take(rows, np.flatnonzero(live))
    logp = T.log_softmax_rows(T.scale(rows, 1.0 / tau), mask=cand[live])
    p = pos[live]
    weights = p / p.sum(axis=1, keepdims=True) / live.sum()
    return T.scale(T.tsum(T.mul(logp, T.tensor(weights))), -1.0)


def loss_comp(heads, labels, pairs, tau):
    return contrastive_from_logits(pair_logits(heads, labels), pairs, tau, anchor_axis=1)


def loss_mar(heads, labels, pairs, tau):
    return contrastive_from_logits(pair_logits(heads, labels), pairs, tau, anchor_axis=0)


def direction_logits(heads):
    """(N, 2) matrix of [h_BU·h_Mar, h_BE·h_Mar] per sample."""
    n, d = heads.h_mar.shape
    col = T.reshape(heads.h_mar, (n, d, 1))
    return T.reshape(T.matmul(heads.h_comp, col), (n, 2))


def ce_from_logits(logits, labels):
    logp = T.log_softmax_rows(logits)
    n = logits.shape[0]
    return T.scale(T.tsum(T.take(logp, (np.arange(n), label_rows(labels)))), -1.0 / n)


def loss_ce(heads, labels):
    return ce_from_logits(direction_logits(heads), labels)


def check_alpha(alpha):
    if not 0 <= alpha <= 1:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")


def combine(comp, mar, ce, alpha):
    """α(L_Comp + L_Mar) + (1 − α)L_CE on tensors."""
    check_alpha(alpha)
    return T.add(T.scale(T.add(comp, mar), alpha), T.scale(ce, 1.0 - alpha))


def total_loss(parts, alpha):
    check_alpha(alpha)
    return alpha * (parts.comp + parts.mar) + (1 - alpha) * parts.ce


def batch_loss(heads, labels, span, tau, alpha, include_self=False):
    """Graph-carrying total loss plus a float breakdown for logging."""
    labels = np.asarray(labels, dtype=np.int64)
    pairs = inertial_pairs(labels, span, include_self=include_self)
    comp = loss_comp(heads, labels, pairs, tau)
    mar = loss_mar(heads, labels, pairs, tau)
    ce = loss_ce(heads, labels)
    total = combine(comp, mar, ce, alpha)
    dl = direction_logits(heads).data
    cm = dl[np.arange(len(labels)), label_rows(labels)]
    parts = LossBreakdown(comp.item(), mar.item(), ce.item(), total.item(), cm, dl[:, 0], dl[:, 1])
    return total, parts
