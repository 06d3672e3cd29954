# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Attention panels and migration
#
# Two synthetic stocks in different industries. We run a briefly trained model
# over every day, split the calendar into four windows, and follow how bull and
# bear attention moves between news topics.

# %%
import numpy as np

from bullbear import analytics as an
from bullbear.ingest import IndustryMap, NewsIndex, build_samples
from bullbear.model import AttentionMaps, B4Model, ModelConfig, bias_attention
from bullbear.synthetic import planted_market
from bullbear.training import TrainConfig, Trainer

config = ModelConfig(vocab_size=256, d=16, d_k=8, prototypes=4, layers=1, max_len=24, d_ff=32)
imap = IndustryMap({"Tech": ["AAA"], "Utilities": ["BBB"]})

records = []
for k, stock in enumerate(("AAA", "BBB")):
    bars, docs = planted_market(120, stock=stock, seed=10 + k)
    samples = build_samples(bars, NewsIndex(docs), config.delta, stock=stock)
    model = B4Model(config, seed=k)
    data = model.prepare(samples)
    Trainer(model, TrainConfig(lr=3e-3, epochs=5)).fit(data)
    fwd = model.forward(data)
    maps = bias_attention(fwd.heads, fwd.h)
    for i, s in enumerate(samples):
        records.append((stock, s.date, AttentionMaps(maps.a_bu[i], maps.a_be[i]), data.tokens[i], s.news))

windows = an.equal_windows([r[1] for r in records], 4)
panel = an.build_panel(records, windows)
print(len(panel), "panel entries over", len(windows), "windows")

# %% [markdown]
# Bias per topic: positive means the bullish head leans on it more.

# %%
bias, ibias = an.bias_scores(panel, imap)
for key in sorted(ibias)[:8]:
    print(key, round(ibias[key], 2))

# %% [markdown]
# Migration conserves source mass, and the industry propensities are normalized.

# %%
am = an.migration(panel)
iam, amp = an.industry_migration(am, imap)
ibm, bmp = an.industry_bias_migration(am, imap)
for ind in ("Tech", "Utilities"):
    row = {z: round(v, 3) for (i, z), v in amp.items() if i == ind}
    print(ind, "AMP", row, "sum", round(sum(row.values()), 6))
    print(ind, "BMP", {z: round(v, 3) for (i, z), v in bmp.items() if i == ind})

# %%
import tempfile  # noqa: E402

with tempfile.TemporaryDirectory() as d:
    for path in an.emit_reports(panel, am, imap, d):
        print(path.name, sum(1 for _ in open(path)) - 1, "rows")
