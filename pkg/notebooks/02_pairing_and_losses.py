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
# # Inertial pairing and the dual-competition loss
#
# Trend labels plus a momentum span decide which neighbours count as
# positives for each anchor. Everything else in the batch is a negative.

# %%
import numpy as np

from bullbear import tensor as T
from bullbear.losses import DEFAULT_SPANS, MomentumSpan, batch_loss, inertial_pairs, total_loss
from bullbear.model import MarketHeads

labels = [1, 1, 0, 1, 0, 0, 1, 1]
for text in DEFAULT_SPANS:
    span = MomentumSpan.parse(text)
    pairs = inertial_pairs(labels, span)
    print(f"{text:>3}  {span.kind:<9}", [sorted(p) for p in pairs.positives])

# %% [markdown]
# Anchors with no positives drop out of the contrastive mean, so the `0`
# span trains on cross-entropy alone.

# %%
rng = np.random.default_rng(1)
heads = MarketHeads(T.tensor(rng.normal(size=(8, 6))), T.tensor(rng.normal(size=(8, 2, 6))))
for text in ("+-1", "0"):
    _, parts = batch_loss(heads, labels, text, tau=0.5, alpha=0.5)
    print(f"{text:>3}  comp={parts.comp:.4f}  mar={parts.mar:.4f}  ce={parts.ce:.4f}  total={parts.total:.4f}")

# %% [markdown]
# The total is affine in α, so it runs from the cross-entropy at α = 0 to the
# two contrastive terms at α = 1.

# %%
_, parts = batch_loss(heads, labels, "+-1", tau=0.5, alpha=0.5)
for alpha in (0.0, 0.1, 0.5, 0.9, 1.0):
    print(alpha, round(total_loss(parts, alpha), 6))
