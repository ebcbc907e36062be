import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from textrec.encoder import PRESETS, Encoder, EncoderConfig, attention, count_params, init_params
from textrec.tokenizer import PAD_ID, build_vocab


def tiny_config(**kw):
    base = dict(layers=2, hidden=16, heads=2, vocab_size=64, max_len=16)
    base.update(kw)
    return EncoderConfig(**base)


def random_batch(rng, B, n, V=64, min_len=1):
    lens = rng.integers(min_len, n + 1, size=B)
    ids = np.full((B, n), PAD_ID, dtype=np.int64)
    mask = np.zeros((B, n), dtype=np.int8)
    for b, L in enumerate(lens):
        ids[b, 0] = 0
        ids[b, 1:L] = rng.integers(4, V, size=L - 1)
        mask[b, :L] = 1
    return ids, mask


# ---------------------------------------------------------------- config / init

def test_presets():
    assert PRESETS["base"] == (12, 768, 12)
    assert PRESETS["small"] == (6, 768, 12)
    assert PRESETS["large"] == (24, 1024, 16)
    c = EncoderConfig.from_preset("base", 100, 32)
    assert (c.layers, c.hidden, c.heads, c.ff) == (12, 768, 12, 3072)


def test_invalid_config():
    with pytest.raises(ValueError):
        EncoderConfig(layers=1, hidden=10, heads=3, vocab_size=10, max_len=4)
    with pytest.raises(ValueError):
        EncoderConfig(layers=0, hidden=8, heads=2, vocab_size=10, max_len=4)
    with pytest.raises(ValueError):
        EncoderConfig.from_preset("huge", 10, 4)


def test_param_count_closed_form():
    L, d, V, n = 2, 16, 64, 16
    ff = 4 * d
    per_layer = 4 * (d * d + d) + 2 * 2 * d + (d * ff + ff) + (ff * d + d)
    head = (d * d + d) * 2
    expected = V * d + n * d + L * per_layer + 2 * d + head + V
    assert count_params(tiny_config()) == expected
    assert count_params(tiny_config(tie_mlm=False)) == expected + V * d


def test_init_deterministic_and_structured():
    a = init_params(tiny_config(), 3)
    b = init_params(tiny_config(), 3)
    c = init_params(tiny_config(), 4)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert any(a[k].tobytes() != c[k].tobytes() for k in a)
    assert np.all(a["layer0.ln1.g"] == 1) and np.all(a["layer0.bq"] == 0)
    s = 1 / math.sqrt(16)
    assert np.abs(a["layer0.wq"]).max() <= s


# ---------------------------------------------------------------- attention

def test_attention_singleton():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((1, 4))
    wq, wk, wv, wo = (rng.standard_normal((4, 4)) for _ in range(4))
    out, probs = attention(X, np.ones(1), wq, wk, wv, wo)
    np.testing.assert_allclose(out, X @ wv @ wo, rtol=1e-12)
    assert probs.shape == (1, 1, 1) and probs[0, 0, 0] == 1.0


def test_attention_identical_tokens():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(4)
    X = np.stack([x, x])
    w = [rng.standard_normal((4, 4)) for _ in range(3)]
    out, probs = attention(X, np.ones(2), *w)
    assert np.array_equal(out[0], out[1])
    assert np.array_equal(probs[0, 0], probs[0, 1])


def test_attention_direct_formula():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((3, 4))
    wq, wk, wv = (rng.standard_normal((4, 4)) for _ in range(3))
    out, _ = attention(X, np.ones(3), wq, wk, wv)
    Q, K, Vv = X @ wq, X @ wk, X @ wv
    ref = np.zeros((3, 4))
    for i in range(3):
        logits = [sum(Q[i, a] * K[j, a] for a in range(4)) / 2.0 for j in range(3)]
        m = max(logits)
        w = [math.exp(z - m) for z in logits]
        s = sum(w)
        for j in range(3):
            ref[i] += w[j] / s * Vv[j]
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-14)


def test_attention_mask_and_rows_sum():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((5, 8))
    w = [rng.standard_normal((8, 8)) for _ in range(3)]
    mask = np.array([1, 1, 1, 0, 0])
    _, probs = attention(X, mask, *w, heads=2)
    assert np.all(probs[..., 3:] == 0)
    np.testing.assert_allclose(probs.sum(-1), 1.0, atol=1e-6)


# ---------------------------------------------------------------- forward

def _ln(x, g, b, eps=1e-5):
    mu = sum(x) / len(x)
    var = sum((v - mu) ** 2 for v in x) / len(x)
    return np.array([(v - mu) / math.sqrt(var + eps) * gg + bb for v, gg, bb in zip(x, g, b)])


def _gelu(x):
    return 0.5 * x * (1 + math.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))


def reference_embedding(P, cfg, ids):
    """Straight-line 64-bit evaluation for one unpadded sequence (pre-norm)."""
    n, d, H = len(ids), cfg.hidden, cfg.heads
    dh = d // H
    x = [P["tok_emb"][t] + P["pos_emb"][j] for j, t in enumerate(ids)]
    for l in range(cfg.layers):
        p = f"layer{l}."
        a = [_ln(v, P[p + "ln1.g"], P[p + "ln1.b"]) for v in x]
        q = [v @ P[p + "wq"] + P[p + "bq"] for v in a]
        k = [v @ P[p + "wk"] + P[p + "bk"] for v in a]
        vv = [v @ P[p + "wv"] + P[p + "bv"] for v in a]
        new = []
        for i in range(n):
            heads = []
            for h in range(H):
                sl = slice(h * dh, (h + 1) * dh)
                logits = [float(q[i][sl] @ k[j][sl]) / math.sqrt(dh) for j in range(n)]
                m = max(logits)
                w = [math.exp(z - m) for z in logits]
                s = sum(w)
                heads.append(sum(w[j] / s * vv[j][sl] for j in range(n)))
            att = np.concatenate(heads) @ P[p + "wo"] + P[p + "bo"]
            x1 = x[i] + att
            b = _ln(x1, P[p + "ln2.g"], P[p + "ln2.b"])
            hdn = np.array([_gelu(z) for z in b @ P[p + "w1"] + P[p + "b1"]])
            new.append(x1 + hdn @ P[p + "w2"] + P[p + "b2"])
        x = new
    cls = _ln(x[0], P["ln_f.g"], P["ln_f.b"])
    z = np.tanh(cls @ P["head.w1"] + P["head.b1"])
    return z @ P["head.w2"] + P["head.b2"]


def test_forward_matches_reference():
    cfg = tiny_config()
    enc = Encoder.create(cfg, 0, dtype=np.float64)
    for p in enc.params.values():  # non-trivial biases and gains
        p += np.random.default_rng(9).uniform(-0.1, 0.1, p.shape)
    ids = [0, 10, 20, 30, 40, 5]
    got = enc.encode(np.array([ids]), np.ones((1, 6)))[0]
    ref = reference_embedding(enc.params, cfg, ids)
    np.testing.assert_allclose(got, ref, rtol=1e-4, atol=1e-10)
    got32 = enc.astype(np.float32).encode(np.array([ids]), np.ones((1, 6)))[0]
    np.testing.assert_allclose(got32, ref, rtol=1e-4, atol=1e-5)


def test_identical_sequences_identical_embeddings(rng):
    enc = Encoder.create(tiny_config(), 0)
    ids, mask = random_batch(rng, 1, 10)
    out = enc.encode(np.repeat(ids, 4, 0), np.repeat(mask, 4, 0))
    assert all(np.array_equal(out[0], out[j]) for j in range(1, 4))


def test_padding_isolation(rng):
    enc = Encoder.create(tiny_config(), 0, dtype=np.float64)
    ids, mask = random_batch(rng, 8, 16)
    full = enc.encode(ids, mask)
    for b in range(8):
        alone = enc.encode(ids[b:b + 1], mask[b:b + 1])
        np.testing.assert_allclose(alone[0], full[b], rtol=1e-12, atol=1e-13)


def test_pad_perturbation_has_no_effect(rng):
    enc = Encoder.create(tiny_config(), 1, dtype=np.float64)
    ids, mask = random_batch(rng, 4, 12, min_len=3)
    mask[:, -1] = 0
    ids[:, -1] = PAD_ID
    base = enc.forward(ids, mask)
    ids2 = ids.copy()
    ids2[mask == 0] = rng.integers(4, 64, size=int((mask == 0).sum()))
    other = enc.forward(ids2, mask)
    np.testing.assert_array_equal(base.embeddings, other.embeddings)
    valid = mask[:, : base.hidden.shape[1]] > 0
    np.testing.assert_array_equal(base.hidden[valid], other.hidden[valid])


@given(st.permutations(list(range(6))))
def test_permutation_equivariance(perm):
    rng = np.random.default_rng(5)
    enc = Encoder.create(tiny_config(), 2, dtype=np.float64)
    ids, mask = random_batch(rng, 6, 10)
    out = enc.encode(ids, mask)
    outp = enc.encode(ids[perm], mask[perm])
    np.testing.assert_allclose(outp, out[perm], rtol=1e-12, atol=1e-13)


def test_overlong_sequence_rejected():
    enc = Encoder.create(tiny_config(max_len=4), 0)
    with pytest.raises(ValueError):
        enc.encode(np.zeros((1, 5), np.int64), np.ones((1, 5)))


def test_dropout_only_in_training(rng):
    enc = Encoder.create(tiny_config(), 0, dtype=np.float64)
    ids, mask = random_batch(rng, 3, 10, min_len=4)
    a = enc.forward(ids, mask).embeddings
    b = enc.forward(ids, mask, training=True, rng=np.random.default_rng(0)).embeddings
    assert not np.allclose(a, b)
    with pytest.raises(ValueError):
        enc.forward(ids, mask, training=True)


# ---------------------------------------------------------------- backward

def _loss_and_grads(enc, ids, mask, w_emb, w_hid):
    st_ = enc.forward(ids, mask)
    loss = float((st_.embeddings * w_emb).sum() + (st_.hidden * w_hid[:, : st_.hidden.shape[1]]).sum())
    return loss, enc.backward(st_, w_emb, w_hid[:, : st_.hidden.shape[1]])


@pytest.mark.parametrize("norm,tie", [("pre", True), ("post", True), ("pre", False)])
def test_gradients_finite_differences_64bit(norm, tie):
    rng = np.random.default_rng(11)
    enc = Encoder.create(tiny_config(norm=norm, tie_mlm=tie), 0, dtype=np.float64)
    ids, mask = random_batch(rng, 3, 8, min_len=3)
    n = int(mask.sum(1).max())
    w_emb = rng.standard_normal((3, 16))
    w_hid = rng.standard_normal((3, n, 16)) * 0.1
    _, G = _loss_and_grads(enc, ids, mask, w_emb, w_hid)
    names = [k for k in enc.params if not k.startswith("mlm")]
    # small step: this probe loss is curved enough that h=1e-3 truncation shows up at 1e-4
    h = 1e-5
    worst = 0.0
    for _ in range(60):
        name = names[int(rng.integers(len(names)))]
        p = enc.params[name]
        if name == "tok_emb":
            idx = (int(ids[0, int(rng.integers(mask[0].sum()))]), int(rng.integers(16)))
        elif name == "pos_emb":
            idx = (int(rng.integers(n)), int(rng.integers(16)))
        else:
            idx = tuple(int(rng.integers(s)) for s in p.shape)
        old = p[idx]
        p[idx] = old + h
        lp, _ = _loss_and_grads(enc, ids, mask, w_emb, w_hid)
        p[idx] = old - h
        lm, _ = _loss_and_grads(enc, ids, mask, w_emb, w_hid)
        p[idx] = old
        num = (lp - lm) / (2 * h)
        ana = G[name][idx]
        worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-4))
    assert worst < 1e-5


def test_gradients_32bit_tolerance():
    rng = np.random.default_rng(12)
    enc64 = Encoder.create(tiny_config(), 0, dtype=np.float64)
    enc32 = enc64.astype(np.float32)
    ids, mask = random_batch(rng, 3, 8, min_len=3)
    n = int(mask.sum(1).max())
    w_emb = rng.standard_normal((3, 16))
    w_hid = np.zeros((3, n, 16))
    _, G64 = _loss_and_grads(enc64, ids, mask, w_emb, w_hid)
    _, G32 = _loss_and_grads(enc32, ids, mask, w_emb.astype(np.float32), w_hid.astype(np.float32))
    for k in G64:
        scale = max(np.abs(G64[k]).max(), 1e-3)
        assert np.abs(G32[k] - G64[k]).max() / scale < 1e-3, k


def test_zero_upstream_gives_zero_grads(rng):
    enc = Encoder.create(tiny_config(), 0)
    ids, mask = random_batch(rng, 2, 8)
    st_ = enc.forward(ids, mask, training=True, rng=rng)
    G = enc.backward(st_, np.zeros_like(st_.embeddings))
    assert all(not np.any(g) for g in G.values())


def test_unused_vocab_rows_have_zero_gradient(rng):
    enc = Encoder.create(tiny_config(), 0, dtype=np.float64)
    ids, mask = random_batch(rng, 2, 8, V=30)
    st_ = enc.forward(ids, mask)
    G = enc.backward(st_, rng.standard_normal(st_.embeddings.shape))
    used = set(ids[mask > 0].tolist())
    unused = [r for r in range(64) if r not in used]
    assert not np.any(G["tok_emb"][unused])


def test_backward_requires_forward():
    enc = Encoder.create(tiny_config(), 0)
    with pytest.raises(RuntimeError):
        enc.backward(None, np.zeros((1, 16)))


def test_checkpoint_roundtrip(tmp_path, rng):
    vocab = build_vocab(["alpha beta gamma"], 64)
    enc = Encoder.create(tiny_config(vocab_size=len(vocab)), 7, vocab)
    enc.save(tmp_path / "e.ezrc")
    back = Encoder.load(tmp_path / "e.ezrc")
    assert back.config == enc.config and back.vocab == vocab
    assert all(back.params[k].tobytes() == enc.params[k].tobytes() for k in enc.params)
    back.save(tmp_path / "e2.ezrc")
    assert (tmp_path / "e.ezrc").read_bytes() == (tmp_path / "e2.ezrc").read_bytes()
    ids, mask = random_batch(rng, 2, 8, V=len(vocab))
    assert np.array_equal(enc.encode(ids, mask), back.encode(ids, mask))
