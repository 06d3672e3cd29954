import numpy as np
import pytest

from bullbear.ingest import NewsIndex, build_samples, split_chronological
from bullbear.model import B4Model, ModelConfig
from bullbear.synthetic import planted_market

TINY = ModelConfig(vocab_size=40, d=8, d_k=4, prototypes=4, layers=1, max_len=10, delta=3, d_ff=8)


def central_diff(f, x, i, step=1e-5):
    """d f / d x[i] by central differences, restoring x afterwards."""
    old = x[i]
    x[i] = old + step
    fp = f()
    x[i] = old - step
    fm = f()
    x[i] = old
    return (fp - fm) / (2 * step)


def directional_diff(f, x, direction, step=1e-5):
    old = x.copy()
    x += step * direction
    fp = f()
    x[...] = old - step * direction
    fm = f()
    x[...] = old
    return (fp - fm) / (2 * step)


def rel_err(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def planted_small():
    bars, docs = planted_market(80, seed=3)
    return bars, docs


def tiny_batch(seed, n=8, config=TINY):
    """A random ``n``-sample batch for ``config`` with mixed labels."""
    bars, docs = planted_market(n + config.delta + 1, seed=seed, words_per_doc=(2, 5))
    samples = build_samples(bars, NewsIndex(docs), config.delta, stock="PLNT")[:n]
    model = B4Model(config, seed=seed)
    return model, model.prepare(samples)


def random_panel(rng, stocks=("S0", "S1", "S2"), windows=4, topics=("z1", "z2", "z3", "z4"), sparsity=0.3):
    """Random panel where each (stock, window) keeps a random nonempty topic subset."""
    from bullbear.analytics import AttentionPanel

    values = {}
    for s in stocks:
        for w in range(windows):
            keep = [z for z in topics if rng.random() > sparsity] or [topics[0]]
            for z in keep:
                for p in ("bull", "bear"):
                    values[(s, w, z, p)] = float(rng.exponential(5.0))
    return AttentionPanel(values)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion, in criterion order."""
    results = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            crit = dict(getattr(rep, "user_properties", ())).get("criterion")
            if crit is None:
                continue
            num, title = crit
            ok = status == "passed" and results.get(num, (True,))[0]
            results[num] = (ok, title, dict(rep.user_properties).get("detail", ""))
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        ok, title, detail = results[num]
        line = f"{'PASS' if ok else 'FAIL'}  criterion {num}: {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))


@pytest.fixture
def criterion(request, record_property):
    """Tag a test with the acceptance criterion it verifies; returns a detail recorder."""
    mark = request.node.get_closest_marker("criterion")
    record_property("criterion", tuple(mark.args))
    return lambda text: record_property("detail", text)
