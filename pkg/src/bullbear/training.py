"""Training loop over contiguous temporal batches, prediction and the α/Δ grid search."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import backtest as bt
from .errors import ConfigError, NonFiniteError, TrainingError
from .losses import DEFAULT_ALPHAS, DEFAULT_SPANS, MomentumSpan, batch_loss, check_alpha
from .model import B4Model
from .tensor import OptimizerState, adam_step, backward

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.5
    span: str = "+-1"
    tau: float = 0.1
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    include_self: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        check_alpha(self.alpha)
        MomentumSpan.parse(self.span)
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.lr < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.lr}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")


class Trainer:
    """Holds the optimizer state for one model; a zero learning rate freezes it."""

    def __init__(self, model, config):
        self.model = model
        self.config = config
        self.state = None
        if config.lr > 0:
            self.state = OptimizerState(config.lr, config.beta1, config.beta2, config.eps)
        self.history = []

    def train_epoch(self, data):
        return train_epoch(self.model, data, self.config, self.state)

    def fit(self, data, epochs=None, callback=None):
        epochs = self.config.epochs if epochs is None else epochs
        for epoch in range(epochs):
            parts = self.train_epoch(data)
            self.history.append(parts)
            if callback is not None:
                callback(epoch, parts)
        return self.history


def iter_batches(n, batch_size):
    for start in range(0, n, batch_size):
        yield start, min(start + batch_size, n)


def train_epoch(model, data, config, state=None):
    """One pass in temporal order; returns the per-batch loss breakdowns."""
    if len(data) == 0:
        raise TrainingError("no training samples")
    params = model.parameters()
    out = []
    for b, (start, stop) in enumerate(iter_batches(len(data), config.batch_size)):
        batch = data.batch(start, stop)
        model.zero_grad()
        try:
            fwd = model.forward(batch)
            loss, parts = batch_loss(fwd.heads, batch.labels, config.span, config.tau,
                                     config.alpha, config.include_self)
            if not math.isfinite(parts.total):
                raise NonFiniteError("loss")
            backward(loss)
            if state is not None:
                adam_step(state, params)
        except NonFiniteError as exc:
            raise TrainingError(f"training diverged in batch {b} (samples {start}-{stop - 1}): {exc}",
                                batch=b) from None
        out.append(parts)
    return out


def predict(model, data, mode="long-flat", batch_size=256):
    """Bull/bear logits per sample and the resulting positions."""
    up, down = [], []
    for start, stop in iter_batches(len(data), batch_size):
        fwd = model.forward(data.batch(start, stop))
        comp, mar = fwd.heads.h_comp.data, fwd.heads.h_mar.data
        up.append(np.einsum("nd,nd->n", comp[:, 0], mar))
        down.append(np.einsum("nd,nd->n", comp[:, 1], mar))
    up = np.concatenate(up) if up else np.zeros(0)
    down = np.concatenate(down) if down else np.zeros(0)
    return up, down, bt.positions_from_logits(up, down, mode)


def accuracy(up, down, labels):
    """Directional hit rate; ties count as a bearish call."""
    return float(np.mean((np.asarray(up) > np.asarray(down)).astype(int) == np.asarray(labels)))


def signals_for(samples, positions):
    return [bt.Signal(s.date, int(p)) for s, p in zip(samples, positions)]


@dataclass
class Evaluation:
    accuracy: float
    metrics: bt.Metrics
    curve: bt.EquityCurve
    positions: np.ndarray = field(repr=False)


def evaluate(model, data, bars, mode="long-flat", convention="standard"):
    up, down, pos = predict(model, data, mode)
    curve = bt.run_backtest(signals_for(data.samples, pos), bars, mode)
    return Evaluation(accuracy(up, down, data.labels), bt.compute_metrics(curve, convention), curve, pos)


@dataclass
class GridResult:
    alpha: float
    span: str
    cumulative_return: float
    annual_return: float
    max_drawdown: float
    calmar: float | None
    final_loss: float
    seed: int
    accuracy: float
    test_accuracy: float | None = None
    best: bool = False
    config: TrainConfig = field(default=None, repr=False)


GRID_COLUMNS = ("alpha", "span", "cumulative_return", "annual_return", "max_drawdown",
                "calmar", "final_loss", "seed", "accuracy", "test_accuracy", "best")


def rank_configurations(configs, train_samples, val_samples, bars, model_config,
                        mode="long-flat", convention="standard", test_samples=None):
    """Train one fresh model per config and rank by validation cumulative return.

    With ``test_samples`` each trained model is also scored on that held-out
    split; the score is reported but never used for ranking.
    """
    configs = list(configs)
    if not configs:
        raise ConfigError("nothing to search: empty configuration list")
    results = []
    for cfg in configs:
        model = B4Model(model_config, seed=cfg.seed)
        train = model.prepare(train_samples)
        val = model.prepare(val_samples)
        trainer = Trainer(model, cfg)
        trainer.fit(train)
        final = float(np.mean([p.total for p in trainer.history[-1]])) if trainer.history else float("nan")
        ev = evaluate(model, val, bars, mode, convention)
        m = ev.metrics
        test_acc = None
        if test_samples:
            test = model.prepare(test_samples)
            up, down, _ = predict(model, test, mode)
            test_acc = accuracy(up, down, test.labels)
        log.info("alpha=%s span=%s cum=%.4f acc=%.3f", cfg.alpha, cfg.span, m.cumulative_returns, ev.accuracy)
        results.append(GridResult(cfg.alpha, str(MomentumSpan.parse(cfg.span)), m.cumulative_returns,
                                  m.annual_return, m.max_drawdown, m.calmar_ratio, final, cfg.seed,
                                  ev.accuracy, test_acc, config=cfg))
    order = sorted(range(len(results)), key=lambda i: (-results[i].cumulative_return, i))
    ranked = [results[i] for i in order]
    ranked[0].best = True
    return ranked


def grid_search(alphas, spans, train_samples, val_samples, bars, model_config,
                base=None, mode="long-flat", convention="standard", test_samples=None):
    """Every α × Δ combination, ranked by validation cumulative return."""
    alphas, spans = list(alphas), list(spans)
    if not alphas or not spans:
        raise ConfigError("grid search needs at least one alpha and one span")
    base = base or TrainConfig()
    configs = [replace(base, alpha=a, span=str(MomentumSpan.parse(s))) for a in alphas for s in spans]
    return rank_configurations(configs, train_samples, val_samples, bars, model_config, mode, convention,
                               test_samples)


def default_grid():
    return list(DEFAULT_ALPHAS), list(DEFAULT_SPANS)
