import numpy as np
import pytest

from bullbear import tensor as T
from bullbear.errors import CheckpointError, ConfigError, DataError, DimensionError
from bullbear.ingest import NewsDoc
from bullbear.losses import batch_loss
from bullbear.model import (
    CLS, DOWN, PAD, UP, B4Model, MarketHeads, ModelConfig, Vocabulary, bias_attention, embed_text,
    encode, extract_heads, fuse, init_params, load_checkpoint, price_to_concept, save_checkpoint,
    text_prototypes, tokenize_augment, unfuse,
)

from conftest import TINY, central_diff, directional_diff, rel_err, tiny_batch


def fnv1a_reference(word, seed, vocab_size):
    h = 14695981039346656037 ^ seed
    for ch in word.encode("utf-8"):
        h = ((h ^ ch) * 1099511628211) % 2**64
    return 4 + h % (vocab_size - 4)


class TestTokenize:
    def test_empty_news(self):
        tok = tokenize_augment([], Vocabulary(64), 8)
        assert tok.ids.tolist() == [CLS, UP, DOWN] + [PAD] * 5
        assert tok.positions == {"CLS": 0, "UP": 1, "DOWN": 2}

    def test_rehash_oracle(self):
        vocab = Vocabulary(4096, seed=17)
        tok = tokenize_augment([NewsDoc(None, "X", "Market rallies!", ())], vocab, 6)
        expected = [fnv1a_reference(w, 17, 4096) for w in ("market", "rallies")]
        assert tok.ids.tolist() == [CLS, UP, DOWN, *expected, PAD]
        assert all(i >= 4 for i in expected)

    def test_truncation(self):
        text = " ".join(f"w{i}" for i in range(20))
        tok = tokenize_augment([text], Vocabulary(128), 10)
        assert len(tok.ids) == 10 and PAD not in tok.ids.tolist()
        assert tok.doc_of.tolist() == [-1, -1, -1] + [0] * 7

    def test_short_length(self):
        with pytest.raises(ConfigError):
            tokenize_augment([], Vocabulary(64), 3)

    def test_pure_function(self):
        docs = [NewsDoc(None, "X", "Shares jump on earnings; outlook raised", ())]
        a = tokenize_augment(docs, Vocabulary(512, 3), 12)
        b = tokenize_augment(list(docs), Vocabulary(512, 3), 12)
        assert a.ids.tolist() == b.ids.tolist()

    def test_doc_attribution(self):
        tok = tokenize_augment(["a b", "c"], Vocabulary(64), 8)
        assert tok.doc_of.tolist() == [-1, -1, -1, 0, 0, 1, -1, -1]


class TestPrototypes:
    def test_selector(self, rng):
        h = rng.normal(size=(6, 3))
        sel = np.eye(6)[:2]
        np.testing.assert_array_equal(text_prototypes(T.tensor(h), T.tensor(sel)).matrix.data, h[:2])

    def test_mean(self, rng):
        h = rng.normal(size=(6, 3))
        out = text_prototypes(T.tensor(h), T.tensor(np.full((1, 6), 1 / 6))).matrix.data
        np.testing.assert_allclose(out[0], h.mean(axis=0), atol=1e-14)

    def test_naive_matmul(self, rng):
        h, p = rng.normal(size=(7, 4)), rng.normal(size=(3, 7))
        ref = np.array([[sum(p[i, k] * h[k, j] for k in range(7)) for j in range(4)] for i in range(3)])
        np.testing.assert_allclose(text_prototypes(T.tensor(h), T.tensor(p)).matrix.data, ref, atol=1e-12)


class TestPriceToConcept:
    def setup_method(self):
        rng = np.random.default_rng(7)
        self.window = rng.normal(scale=0.02, size=(5, 4))
        self.wq = T.tensor(rng.normal(size=(4, 6)))
        self.wk = T.tensor(rng.normal(size=(16, 6)))
        self.base = T.tensor(rng.normal(size=(20, 16)))
        self.rng = rng

    def test_single_prototype(self):
        proto = text_prototypes(self.base, T.tensor(self.rng.normal(size=(1, 20))))
        out = price_to_concept(self.window, proto, self.wq, self.wk).data
        np.testing.assert_allclose(out, np.repeat(proto.matrix.data, 5, axis=0), atol=1e-14)

    def test_zero_query(self):
        proto = text_prototypes(self.base, T.tensor(self.rng.normal(size=(8, 20))))
        out = price_to_concept(self.window, proto, T.tensor(np.zeros((4, 6))), self.wk).data
        np.testing.assert_allclose(out, np.tile(proto.matrix.data.mean(axis=0), (5, 1)), atol=1e-13)

    def test_composition_and_convexity(self):
        proto = text_prototypes(self.base, T.tensor(self.rng.normal(size=(8, 20))))
        out = price_to_concept(self.window, proto, self.wq, self.wk).data
        hp = proto.matrix.data
        ref = T.scaled_dot_attention(T.tensor(self.window @ self.wq.data), T.tensor(hp @ self.wk.data),
                                     T.tensor(hp), np.sqrt(6)).data
        np.testing.assert_allclose(out, ref, atol=1e-12, rtol=0)
        assert np.all(out >= hp.min(axis=0) - 1e-12) and np.all(out <= hp.max(axis=0) + 1e-12)

    def test_non_finite_window(self):
        proto = text_prototypes(self.base, T.tensor(self.rng.normal(size=(2, 20))))
        bad = self.window.copy()
        bad[0, 0] = np.nan
        with pytest.raises(Exception) as info:
            price_to_concept(bad, proto, self.wq, self.wk)
        assert isinstance(info.value, (DataError, ArithmeticError))


class TestEmbedText:
    def test_pad_rows_equal(self, rng):
        table, pos = rng.normal(size=(10, 4)), rng.normal(size=(6, 4))
        ids = np.array([0, 1, 2, 7, PAD, PAD])
        e = embed_text(ids, T.tensor(table), T.tensor(pos)).data
        np.testing.assert_array_equal(e[4], table[PAD] + pos[4])
        np.testing.assert_array_equal(e[5], table[PAD] + pos[5])

    def test_positional_additivity(self, rng):
        table, pos = rng.normal(size=(10, 4)), rng.normal(size=(6, 4))
        e = embed_text(np.array([0, 1, 2, 7, 5, 7]), T.tensor(table), T.tensor(pos)).data
        np.testing.assert_allclose(e[5] - e[3], pos[5] - pos[3], atol=1e-15)

    def test_gather_oracle(self, rng):
        table, pos = rng.normal(size=(30, 5)), rng.normal(size=(9, 5))
        ids = rng.integers(0, 30, size=(2, 9))
        e = embed_text(ids, T.tensor(table), T.tensor(pos)).data
        for b in range(2):
            for i in range(9):
                np.testing.assert_array_equal(e[b, i], table[ids[b, i]] + pos[i])

    def test_out_of_range(self, rng):
        with pytest.raises(IndexError):
            embed_text(np.array([0, 99]), T.tensor(rng.normal(size=(10, 2))))


class TestFuse:
    def test_order(self, rng):
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(2, 3))
        e, layout = fuse(T.tensor(a), T.tensor(b))
        assert e.shape == (6, 3) and len(layout) == 6
        np.testing.assert_array_equal(e.data, np.vstack([a, b]))

    def test_empty_price(self, rng):
        a = rng.normal(size=(4, 3))
        e, layout = fuse(T.tensor(a), T.tensor(np.zeros((0, 3))))
        np.testing.assert_array_equal(e.data, a)
        assert layout.price_len == 0

    def test_unfuse_round_trip(self, rng):
        a, b = rng.normal(size=(2, 7, 5)), rng.normal(size=(2, 3, 5))
        e, layout = fuse(T.tensor(a), T.tensor(b))
        ta, tb = unfuse(e, layout)
        np.testing.assert_array_equal(ta, a)
        np.testing.assert_array_equal(tb, b)

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            fuse(T.tensor(np.ones((2, 3))), T.tensor(np.ones((2, 4))))


def _ln(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def _gelu(x):
    c = np.sqrt(np.longdouble(2) / np.longdouble(np.pi))
    return 0.5 * x * (1 + np.tanh(c * (x + np.longdouble(0.044715) * x**3)))


class TestEncode:
    def test_zero_layers(self, rng):
        e = T.tensor(rng.normal(size=(5, 4)))
        assert encode(e, {}, 0) is e

    def test_permutation_equivariance(self, rng):
        cfg = ModelConfig(vocab_size=20, d=6, d_k=3, prototypes=2, layers=2, max_len=8, delta=2, d_ff=7)
        params = init_params(cfg, seed=3)
        e = rng.normal(size=(8, 6))
        perm = np.arange(8)
        perm[[4, 6]] = perm[[6, 4]]
        h = encode(T.tensor(e), params, 2).data
        hp = encode(T.tensor(e[perm]), params, 2).data
        np.testing.assert_allclose(hp, h[perm], atol=1e-12)

    def test_hand_evaluated_single_layer(self, rng):
        cfg = ModelConfig(vocab_size=8, d=4, d_k=2, prototypes=2, layers=1, max_len=4, delta=1, d_ff=3)
        params = init_params(cfg, seed=5)
        for k in ("layer0.ln1.gain", "layer0.ln2.bias", "layer0.ffn.in_bias"):
            params[k].data = rng.normal(size=params[k].shape)
        e = rng.normal(size=(3, 4))
        p = {k: v.data.astype(np.longdouble) for k, v in params.items()}
        x = e.astype(np.longdouble)
        xn = _ln(x, p["layer0.ln1.gain"], p["layer0.ln1.bias"])
        q, k, v = xn @ p["layer0.attn.query"], xn @ p["layer0.attn.key"], xn @ p["layer0.attn.value"]
        s = q @ k.T / np.sqrt(np.longdouble(4))
        w = np.exp(s - s.max(axis=1, keepdims=True))
        w /= w.sum(axis=1, keepdims=True)
        x = x + (w @ v) @ p["layer0.attn.out"]
        xn = _ln(x, p["layer0.ln2.gain"], p["layer0.ln2.bias"])
        x = x + _gelu(xn @ p["layer0.ffn.in"] + p["layer0.ffn.in_bias"]) @ p["layer0.ffn.out"] + p["layer0.ffn.out_bias"]
        np.testing.assert_allclose(encode(T.tensor(e), params, 1).data, x.astype(float), atol=1e-12, rtol=0)


class TestHeads:
    def test_layout(self):
        h = T.tensor(np.repeat(np.arange(6.0)[:, None], 3, axis=1))
        heads = extract_heads(h, {"CLS": 0, "UP": 1, "DOWN": 2})
        assert heads.h_mar.data.tolist() == [0, 0, 0]
        assert heads.h_bu.data.tolist() == [1, 1, 1]
        assert heads.h_be.data.tolist() == [2, 2, 2]

    def test_alternate_layout(self):
        h = T.tensor(np.repeat(np.arange(6.0)[:, None], 2, axis=1))
        tok = tokenize_augment(["x y"], Vocabulary(32), 6, layout=("UP", "DOWN", "CLS"))
        assert tok.ids.tolist()[:3] == [UP, DOWN, CLS]
        heads = extract_heads(h, tok.positions)
        assert heads.h_mar.data.tolist() == [2, 2]
        assert heads.h_bu.data.tolist() == [0, 0] and heads.h_be.data.tolist() == [1, 1]

    def test_random_slicing(self, rng):
        h = rng.normal(size=(4, 9, 5))
        heads = extract_heads(T.tensor(h), {"CLS": 3, "UP": 0, "DOWN": 7})
        np.testing.assert_array_equal(heads.h_mar.data, h[:, 3])
        np.testing.assert_array_equal(heads.h_comp.data, h[:, [0, 7]])
        np.testing.assert_array_equal(heads.h_be.data, heads.h_comp.data[:, 1])

    def test_missing_position(self, rng):
        with pytest.raises(KeyError):
            extract_heads(T.tensor(rng.normal(size=(4, 2))), {"CLS": 0, "UP": 1})


class TestBiasAttention:
    def test_symmetric_heads(self, rng):
        h = rng.normal(size=(6, 4))
        v = h[1]
        heads = MarketHeads(T.tensor(h[0]), T.tensor(np.stack([v, v])))
        np.testing.assert_array_equal(bias_attention(heads, T.tensor(h)).bias_vector, np.zeros(6))

    def test_orthonormal(self):
        h = np.eye(4)
        heads = MarketHeads(T.tensor(h[0]), T.tensor(h[[2, 3]]))
        maps = bias_attention(heads, T.tensor(h))
        np.testing.assert_allclose(maps.a_bu, np.eye(4)[2] / 2.0, atol=1e-15)

    def test_dot_product_oracle_and_antisymmetry(self, rng):
        h = rng.normal(size=(3, 7, 5))
        heads = extract_heads(T.tensor(h), {"CLS": 0, "UP": 1, "DOWN": 2})
        maps = bias_attention(heads, T.tensor(h))
        for b in range(3):
            for j in range(7):
                assert maps.a_bu[b, j] == pytest.approx(np.dot(h[b, 1], h[b, j]) / np.sqrt(5), abs=1e-12)
                assert maps.a_be[b, j] == pytest.approx(np.dot(h[b, 2], h[b, j]) / np.sqrt(5), abs=1e-12)
        swapped = extract_heads(T.tensor(h), {"CLS": 0, "UP": 2, "DOWN": 1})
        np.testing.assert_allclose(bias_attention(swapped, T.tensor(h)).bias_vector, -maps.bias_vector, atol=0)


def test_full_stack_gradient():
    model, data = tiny_batch(seed=2)
    rng = np.random.default_rng(0)

    def loss_value():
        fwd = model.forward(data)
        return batch_loss(fwd.heads, data.labels, "+-1", 0.1, 0.5)[0].item()

    model.zero_grad()
    fwd = model.forward(data)
    T.backward(batch_loss(fwd.heads, data.labels, "+-1", 0.1, 0.5)[0])
    for name, p in model.named_parameters():
        direction = rng.normal(size=p.shape)
        analytic = float(np.sum(p.grad * direction))
        numeric = directional_diff(loss_value, p.data, direction)
        assert rel_err(analytic, numeric, floor=1e-6) < 1e-4, name


def test_forward_shapes():
    model, data = tiny_batch(seed=4, n=5)
    fwd = model.forward(data)
    c = model.config
    assert fwd.h.shape == (5, c.max_len + c.delta, c.d)
    assert fwd.heads.h_comp.shape == (5, 2, c.d)
    np.testing.assert_allclose(fwd.price_weights.data.sum(axis=-1), 1.0, atol=1e-12)


def test_checkpoint_round_trip(tmp_path):
    model, data = tiny_batch(seed=6, n=4)
    path = tmp_path / "ck.json"
    save_checkpoint(model, path)
    again = load_checkpoint(path, expect=TINY)
    for name, p in model.named_parameters():
        assert p.data.tobytes() == again.params[name].data.tobytes()
    assert model.forward(data).h.data.tobytes() == again.forward(data).h.data.tobytes()
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expect=ModelConfig(vocab_size=40, d=16))


def test_model_rejects_window_length():
    model = B4Model(TINY)
    other, data = tiny_batch(seed=1, n=3, config=ModelConfig(vocab_size=40, d=8, d_k=4, prototypes=4,
                                                             layers=1, max_len=10, delta=4, d_ff=8))
    with pytest.raises(DimensionError):
        model.prepare(data.samples)


def test_full_loss_per_coordinate_gradient():
    model, data = tiny_batch(seed=8)
    rng = np.random.default_rng(1)

    def loss_value():
        return batch_loss(model.forward(data).heads, data.labels, "+-1", 0.1, 0.5)[0].item()

    model.zero_grad()
    T.backward(batch_loss(model.forward(data).heads, data.labels, "+-1", 0.1, 0.5)[0])
    for name, p in model.named_parameters():
        for flat in rng.choice(p.data.size, size=min(3, p.data.size), replace=False):
            idx = np.unravel_index(flat, p.shape)
            numeric = central_diff(loss_value, p.data, idx)
            assert rel_err(p.grad[idx], numeric, floor=1e-6) < 1e-4, (name, idx)
