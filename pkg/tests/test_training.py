import numpy as np
import pytest

from bullbear.errors import ConfigError, TrainingError
from bullbear.ingest import NewsIndex, build_samples, split_chronological
from bullbear.losses import DEFAULT_ALPHAS, DEFAULT_SPANS
from bullbear.model import B4Model, ModelConfig
from bullbear.synthetic import planted_market
from bullbear.training import (
    TrainConfig, Trainer, default_grid, grid_search, iter_batches, rank_configurations, train_epoch,
)

from conftest import TINY, tiny_batch

SMALL = ModelConfig(vocab_size=256, d=16, d_k=8, prototypes=4, layers=1, max_len=24, delta=5, d_ff=32)


@pytest.fixture(scope="module")
def planted_split():
    bars, docs = planted_market(200, seed=1)
    samples = build_samples(bars, NewsIndex(docs), SMALL.delta, stock="PLNT")
    return bars, split_chronological(samples, 0.7)


def snapshot(model):
    return {k: p.data.tobytes() for k, p in model.named_parameters()}


def test_zero_learning_rate_freezes_parameters():
    model, data = tiny_batch(seed=3)
    before = snapshot(model)
    parts = train_epoch(model, data, TrainConfig(lr=0.0, batch_size=4), state=None)
    assert len(parts) == 2
    assert snapshot(model) == before
    Trainer(model, TrainConfig(lr=0.0, epochs=2, batch_size=3)).fit(data)
    assert snapshot(model) == before


def test_monotone_descent_on_planted_batch():
    model, data = tiny_batch(seed=0, n=8)
    assert 0 < data.labels.sum() < 8
    trainer = Trainer(model, TrainConfig(lr=1e-2, epochs=10))
    losses = [parts[0].total for parts in trainer.fit(data)]
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_same_seed_same_trajectory():
    def run():
        model, data = tiny_batch(seed=5, n=12)
        history = Trainer(model, TrainConfig(lr=1e-2, epochs=3, batch_size=5)).fit(data)
        return [p.total for parts in history for p in parts]

    assert run() == run()


def test_divergence_names_batch():
    model, data = tiny_batch(seed=1, n=8)
    model.params["token_embedding"].data[:] = np.nan
    with pytest.raises(TrainingError, match="batch 0") as info:
        train_epoch(model, data, TrainConfig(batch_size=4))
    assert info.value.batch == 0


def test_batches_are_contiguous_and_ordered():
    assert list(iter_batches(70, 32)) == [(0, 32), (32, 64), (64, 70)]


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(alpha=1.2)
    with pytest.raises(ConfigError):
        TrainConfig(span="sideways")
    with pytest.raises(ConfigError):
        TrainConfig(tau=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr=-1e-3)


def test_default_grid_has_35_runs():
    alphas, spans = default_grid()
    assert alphas == [0.1, 0.3, 0.5, 0.7, 0.9] and list(DEFAULT_ALPHAS) == alphas
    assert spans == ["-2", "-1", "0", "1", "2", "+-1", "+-2"] and list(DEFAULT_SPANS) == spans
    bars, docs = planted_market(30, seed=2, words_per_doc=(2, 4))
    samples = build_samples(bars, NewsIndex(docs), TINY.delta, stock="PLNT")
    results = grid_search(alphas, spans, samples[:16], samples[16:], bars, TINY, TrainConfig(epochs=1))
    assert len(results) == 35
    assert {(r.alpha, r.span) for r in results} == {(a, s) for a in alphas for s in spans}
    assert sum(r.best for r in results) == 1 and results[0].best
    assert all(np.isfinite([r.cumulative_return, r.annual_return, r.max_drawdown, r.final_loss]).all()
               for r in results)
    cums = [r.cumulative_return for r in results]
    assert cums == sorted(cums, reverse=True)


def test_single_point_grid(planted_split):
    bars, split = planted_split
    results = grid_search([0.5], ["+-1"], split.train[:40], split.test, bars, SMALL, TrainConfig(epochs=1))
    assert len(results) == 1 and results[0].best


def test_empty_grid():
    with pytest.raises(ConfigError):
        grid_search([], ["1"], [], [], [], TINY)


def test_sabotaged_config_ranks_last(planted_split):
    bars, split = planted_split
    frozen, trained = TrainConfig(lr=0.0, epochs=20), TrainConfig(lr=3e-3, epochs=20)
    ranked = rank_configurations([frozen, trained], split.train, split.test, bars, SMALL)
    assert ranked[0].config is trained and ranked[0].best
    assert ranked[1].config is frozen


def test_fit_callback_and_history():
    model, data = tiny_batch(seed=7, n=6)
    seen = []
    trainer = Trainer(model, TrainConfig(epochs=2, batch_size=4))
    trainer.fit(data, callback=lambda e, parts: seen.append((e, len(parts))))
    assert seen == [(0, 2), (1, 2)] and len(trainer.history) == 2


def test_fresh_model_is_seed_deterministic():
    a, b = B4Model(TINY, seed=9), B4Model(TINY, seed=9)
    assert snapshot(a) == snapshot(b)
    assert snapshot(a) != snapshot(B4Model(TINY, seed=10))
