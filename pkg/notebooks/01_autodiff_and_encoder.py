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
# # Tape autodiff and the fused encoder
#
# `bullbear.tensor` is a small reverse-mode engine over float64 arrays. Here we
# check one gradient by hand, then push a news day and its price window through
# the model and look at the heads it produces.

# %%
import numpy as np

from bullbear import tensor as T
from bullbear.ingest import NewsIndex, build_samples
from bullbear.model import B4Model, ModelConfig, bias_attention
from bullbear.synthetic import planted_market

rng = np.random.default_rng(0)

# %% [markdown]
# A scalar loss through softmax attention, compared with a central difference.

# %%
q = T.parameter(rng.normal(size=(3, 4)))
k = T.tensor(rng.normal(size=(5, 4)))
v = T.tensor(rng.normal(size=(5, 2)))


def loss():
    return T.tsum(T.scaled_dot_attention(q, k, v))


T.backward(loss())
i = (1, 2)
old = q.data[i]
q.data[i] = old + 1e-6
up = loss().item()
q.data[i] = old - 1e-6
down = loss().item()
q.data[i] = old
print("analytic", q.grad[i], "numeric", (up - down) / 2e-6)

# %% [markdown]
# ## One sample through the stack
#
# Each sample is `[CLS] [UP] [DOWN] text... PAD` followed by δ price rows that
# were re-expressed as mixtures of text prototypes.

# %%
bars, docs = planted_market(40, seed=1)
config = ModelConfig(vocab_size=512, d=16, d_k=8, prototypes=4, layers=1, max_len=16)
samples = build_samples(bars, NewsIndex(docs), config.delta, stock="PLNT")
model = B4Model(config, seed=0)
data = model.prepare(samples[:4])
print(samples[0].news[0].text)
print("token ids:", data.ids[0])

fwd = model.forward(data)
print("h:", fwd.h.shape, " h_Mar:", fwd.heads.h_mar.shape, " h_Comp:", fwd.heads.h_comp.shape)
print("price rows -> prototype weights\n", np.round(fwd.price_weights.data[0], 3))

# %% [markdown]
# Bull and bear attention over the fused sequence; the bias vector is their difference.

# %%
maps = bias_attention(fwd.heads, fwd.h)
print(np.round(maps.bias_vector[0], 3))
