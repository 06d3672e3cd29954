"""Representation stack: marker-augmented tokens, text prototypes, price-to-concept
cross-attention, fusion, a small pre-norm encoder, head extraction and bias maps.

All functions operate on the last two axes, so the same code serves one sample
(``S x d``) or a batch (``B x S x d``).
"""
from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import CheckpointError, ConfigError, DataError, DimensionError
from .tensor import Tensor

CLS, UP, DOWN, PAD = 0, 1, 2, 3
SPECIAL_IDS = {"CLS": CLS, "UP": UP, "DOWN": DOWN, "PAD": PAD}
DEFAULT_LAYOUT = ("CLS", "UP", "DOWN")
CHECKPOINT_FORMAT = "bullbear-checkpoint/1"

_WORD = re.compile(r"[^\W_]+", re.UNICODE)
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 4096
    d: int = 32
    d_k: int = 16
    prototypes: int = 16
    layers: int = 2
    max_len: int = 64
    delta: int = 5
    d_ff: int = 64
    hash_seed: int = 0
    init_std: float = 0.1
    layout: tuple = DEFAULT_LAYOUT
    positional: bool = True
    mask_padding: bool = True

    def __post_init__(self):
        if self.max_len < 4:
            raise ConfigError(f"max_len must be >= 4, got {self.max_len}")
        if self.vocab_size <= len(SPECIAL_IDS):
            raise ConfigError("vocab_size must exceed the 4 special tokens")
        if not 1 <= self.prototypes <= self.vocab_size:
            raise ConfigError("prototype count must lie in [1, vocab_size]")
        for name in ("d", "d_k", "delta", "d_ff"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.layers < 0:
            raise ConfigError("layers must be >= 0")
        if sorted(self.layout) != sorted(DEFAULT_LAYOUT):
            raise ConfigError(f"layout must order CLS, UP, DOWN; got {self.layout}")
        object.__setattr__(self, "layout", tuple(self.layout))


@dataclass(frozen=True)
class Vocabulary:
    size: int = 4096
    seed: int = 0

    def word_id(self, word):
        h = (_FNV_OFFSET ^ (self.seed & _MASK64)) & _MASK64
        for byte in word.encode("utf-8"):
            h ^= byte
            h = (h * _FNV_PRIME) & _MASK64
        return h % (self.size - len(SPECIAL_IDS)) + len(SPECIAL_IDS)

    @staticmethod
    def words(text):
        return _WORD.findall(text.lower())


@dataclass
class TokenSequence:
    ids: np.ndarray
    positions: dict  # "CLS"/"UP"/"DOWN" -> index
    doc_of: np.ndarray  # source doc index per position, -1 for specials and padding

    @property
    def mask(self):
        return self.ids != PAD

    def __len__(self):
        return len(self.ids)


def tokenize_augment(news, vocab, max_len, layout=DEFAULT_LAYOUT):
    """Special markers first, then hashed words of every doc in order, then padding."""
    if max_len < 4:
        raise ConfigError(f"max_len must be >= 4, got {max_len}")
    ids = [SPECIAL_IDS[name] for name in layout]
    doc_of = [-1] * len(layout)
    room = max_len - len(layout)
    for k, doc in enumerate(news):
        text = doc if isinstance(doc, str) else doc.text
        for w in vocab.words(text):
            if room == 0:
                break
            ids.append(vocab.word_id(w))
            doc_of.append(k)
            room -= 1
    ids += [PAD] * room
    doc_of += [-1] * room
    return TokenSequence(np.array(ids, dtype=np.int64), {name: i for i, name in enumerate(layout)},
                         np.array(doc_of, dtype=np.int64))


@dataclass
class Prototypes:
    base: Tensor  # V x d
    projection: Tensor  # m x V
    matrix: Tensor  # m x d


def text_prototypes(base, projection):
    """Prototype matrix as a learned linear mix of the base embedding rows."""
    if projection.shape[1] != base.shape[0]:
        raise DimensionError(f"projection {projection.shape} does not mix {base.shape[0]} rows")
    if projection.shape[0] > base.shape[0]:
        raise DimensionError("more prototypes than vocabulary rows")
    return Prototypes(base, projection, T.matmul(projection, base))


def price_to_concept(window, proto, w_query, w_key, return_weights=False):
    """Express each (normalized) price row as an attention mixture of prototype rows."""
    window = window if isinstance(window, Tensor) else T.tensor(window)
    if not np.all(np.isfinite(window.data)):
        raise DataError("price window contains non-finite values")
    q = T.matmul(window, w_query)
    k = T.matmul(proto.matrix, w_key)
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(w_query.shape[1]))
    weights = T.softmax_rows(scores)
    out = T.matmul(weights, proto.matrix)
    return (out, weights) if return_weights else out


def embed_text(ids, token_table, position_table=None):
    ids = np.asarray(ids, dtype=np.int64)
    e = T.embedding(token_table, ids)
    if position_table is None:
        return e
    pos = np.broadcast_to(np.arange(ids.shape[-1]), ids.shape)
    return T.add(e, T.embedding(position_table, pos))


@dataclass(frozen=True)
class FusedLayout:
    text_len: int
    price_len: int

    @property
    def text(self):
        return slice(0, self.text_len)

    @property
    def price(self):
        return slice(self.text_len, self.text_len + self.price_len)

    def __len__(self):
        return self.text_len + self.price_len


def fuse(e_text, e_price):
    """Stack text rows above price rows; returns the joint matrix and its row layout."""
    if e_price is None or e_price.data.size == 0:
        return e_text, FusedLayout(e_text.shape[-2], 0)
    if e_text.shape[-1] != e_price.shape[-1]:
        raise DimensionError(f"fuse: width {e_text.shape[-1]} vs {e_price.shape[-1]}")
    return T.concat([e_text, e_price], axis=-2), FusedLayout(e_text.shape[-2], e_price.shape[-2])


def unfuse(e, layout):
    idx = (Ellipsis, layout.text, slice(None))
    pidx = (Ellipsis, layout.price, slice(None))
    return e.data[idx], e.data[pidx]


def encoder_block(x, p, prefix, key_mask=None):
    d = x.shape[-1]
    xn = T.layer_norm(x, p[f"{prefix}.ln1.gain"], p[f"{prefix}.ln1.bias"])
    q = T.matmul(xn, p[f"{prefix}.attn.query"])
    k = T.matmul(xn, p[f"{prefix}.attn.key"])
    v = T.matmul(xn, p[f"{prefix}.attn.value"])
    a = T.scaled_dot_attention(q, k, v, np.sqrt(d), mask=key_mask)
    x = T.add(x, T.matmul(a, p[f"{prefix}.attn.out"]))
    xn = T.layer_norm(x, p[f"{prefix}.ln2.gain"], p[f"{prefix}.ln2.bias"])
    hidden = T.gelu(T.add_bias(T.matmul(xn, p[f"{prefix}.ffn.in"]), p[f"{prefix}.ffn.in_bias"]))
    return T.add(x, T.add_bias(T.matmul(hidden, p[f"{prefix}.ffn.out"]), p[f"{prefix}.ffn.out_bias"]))


def encode(e, params, layers, key_mask=None):
    """Pre-norm self-attention + feed-forward residual stack."""
    if e.shape[-2] < 3:
        raise DimensionError("encoder needs at least the three special rows")
    h = e
    for layer in range(layers):
        h = encoder_block(h, params, f"layer{layer}", key_mask)
    return h


@dataclass
class MarketHeads:
    h_mar: Tensor  # (..., d)
    h_comp: Tensor  # (..., 2, d), rows UP then DOWN

    @property
    def h_bu(self):
        return T.take(self.h_comp, (Ellipsis, 0, slice(None)))

    @property
    def h_be(self):
        return T.take(self.h_comp, (Ellipsis, 1, slice(None)))


def extract_heads(h, positions):
    """Market vector at [CLS], competition rows at [UP] and [DOWN], read from stored positions."""
    try:
        cls, up, down = positions["CLS"], positions["UP"], positions["DOWN"]
    except (KeyError, TypeError):
        raise KeyError("special-token positions missing") from None
    return MarketHeads(T.take(h, (Ellipsis, cls, slice(None))),
                       T.take(h, (Ellipsis, [up, down], slice(None))))


@dataclass
class AttentionMaps:
    a_bu: np.ndarray
    a_be: np.ndarray

    @property
    def bias_vector(self):
        return self.a_bu - self.a_be


def bias_attention(heads, h, as_tensors=False):
    """Bull/bear attention maps ``h_BU hᵀ/√d`` and ``h_BE hᵀ/√d`` over every row of ``h``."""
    d = h.shape[-1]
    s = h.shape[-2]
    lead = h.shape[:-2]
    ht = T.transpose(h)

    def one(vec):
        row = T.reshape(vec, lead + (1, d))
        return T.reshape(T.scale(T.matmul(row, ht), 1.0 / np.sqrt(d)), lead + (s,))

    a_bu, a_be = one(heads.h_bu), one(heads.h_be)
    if as_tensors:
        return a_bu, a_be
    return AttentionMaps(a_bu.data, a_be.data)


def init_params(config, seed):
    """Weights ~ N(0, init_std²); layer-norm gains start at 1 and biases at 0."""
    rng = np.random.default_rng(seed)
    c = config

    def normal(*shape):
        return T.parameter(rng.normal(0.0, c.init_std, size=shape))

    p = {
        "token_embedding": normal(c.vocab_size, c.d),
        "position_embedding": normal(c.max_len, c.d),
        "prototype_projection": normal(c.prototypes, c.vocab_size),
        "price_query": normal(4, c.d_k),
        "prototype_key": normal(c.d, c.d_k),
    }
    for layer in range(c.layers):
        pre = f"layer{layer}"
        p[f"{pre}.ln1.gain"] = T.parameter(np.ones(c.d))
        p[f"{pre}.ln1.bias"] = T.parameter(np.zeros(c.d))
        for name in ("query", "key", "value", "out"):
            p[f"{pre}.attn.{name}"] = normal(c.d, c.d)
        p[f"{pre}.ln2.gain"] = T.parameter(np.ones(c.d))
        p[f"{pre}.ln2.bias"] = T.parameter(np.zeros(c.d))
        p[f"{pre}.ffn.in"] = normal(c.d, c.d_ff)
        p[f"{pre}.ffn.in_bias"] = T.parameter(np.zeros(c.d_ff))
        p[f"{pre}.ffn.out"] = normal(c.d_ff, c.d)
        p[f"{pre}.ffn.out_bias"] = T.parameter(np.zeros(c.d))
    return p


@dataclass
class PreparedData:
    """Tokenized, normalized tensors for a list of samples, ready for batching."""
    samples: list
    tokens: list
    ids: np.ndarray  # N x L
    windows: np.ndarray  # N x delta x 4
    labels: np.ndarray  # N

    def __len__(self):
        return len(self.samples)

    def batch(self, start, stop):
        return PreparedData(self.samples[start:stop], self.tokens[start:stop],
                            self.ids[start:stop], self.windows[start:stop], self.labels[start:stop])


@dataclass
class ForwardResult:
    heads: MarketHeads
    h: Tensor
    layout: FusedLayout
    price_weights: Tensor = field(repr=False, default=None)


class B4Model:
    def __init__(self, config=None, seed=0, params=None):
        self.config = config or ModelConfig()
        self.seed = seed
        self.vocab = Vocabulary(self.config.vocab_size, self.config.hash_seed)
        self.params = params if params is not None else init_params(self.config, seed)

    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def prototypes(self):
        return text_prototypes(self.params["token_embedding"], self.params["prototype_projection"])

    def prepare(self, samples):
        c = self.config
        tokens = [tokenize_augment(s.news, self.vocab, c.max_len, c.layout) for s in samples]
        for s in samples:
            if s.window.delta != c.delta:
                raise DimensionError(f"sample window has {s.window.delta} rows, model expects {c.delta}")
        ids = np.stack([t.ids for t in tokens]) if tokens else np.zeros((0, c.max_len), dtype=np.int64)
        windows = (np.stack([s.window.normalized() for s in samples]) if samples
                   else np.zeros((0, c.delta, 4)))
        labels = np.array([s.label for s in samples], dtype=np.int64)
        return PreparedData(list(samples), tokens, ids, windows, labels)

    def forward(self, data):
        c, p = self.config, self.params
        e_text = embed_text(data.ids, p["token_embedding"],
                            p["position_embedding"] if c.positional else None)
        proto = self.prototypes()
        e_price, weights = price_to_concept(T.tensor(data.windows), proto, p["price_query"],
                                            p["prototype_key"], return_weights=True)
        e, layout = fuse(e_text, e_price)
        key_mask = None
        if c.mask_padding:
            keep = np.concatenate([data.ids != PAD, np.ones((len(data), c.delta), dtype=bool)], axis=1)
            key_mask = keep[:, None, :]
        h = encode(e, p, c.layers, key_mask)
        positions = {name: i for i, name in enumerate(c.layout)}
        return ForwardResult(extract_heads(h, positions), h, layout, weights)

    def state_dict(self):
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise CheckpointError(f"parameter keys differ: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, arr in state.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != self.params[name].shape:
                raise CheckpointError(f"{name}: checkpoint shape {arr.shape} vs model {self.params[name].shape}")
            self.params[name].data = arr.copy()


def save_checkpoint(model, path, extra=None):
    """JSON checkpoint: config echo plus flat row-major arrays keyed by parameter name."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": {**asdict(model.config), "layout": list(model.config.layout)},
        "seed": model.seed,
        "params": {name: {"shape": list(t.shape), "data": t.data.ravel().tolist()}
                   for name, t in model.params.items()},
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_checkpoint(path, expect=None):
    """Rebuild a model; ``expect`` (a ModelConfig) must match the stored dims when given."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unknown checkpoint format {doc.get('format')!r}")
    cfg = dict(doc["config"])
    cfg["layout"] = tuple(cfg["layout"])
    config = ModelConfig(**cfg)
    if expect is not None:
        dims = ("vocab_size", "d", "d_k", "prototypes", "layers", "max_len", "delta", "d_ff")
        bad = [k for k in dims if getattr(expect, k) != getattr(config, k)]
        if bad:
            raise CheckpointError(f"{path}: checkpoint dims differ from config in {', '.join(bad)}")
    model = B4Model(config, seed=doc.get("seed", 0))
    model.load_state_dict({k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                           for k, v in doc["params"].items()})
    return model
