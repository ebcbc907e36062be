"""Bidirectional transformer encoder with [CLS] pooling, an MLP head and a
hand-written reverse pass.

Everything is plain numpy. Parameters live in an ordered ``dict`` of arrays so
that optimizers, checkpoints and gradient checks can iterate them uniformly.
The compute dtype follows the parameter dtype (float32 for checkpoints,
float64 for gradient checking).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .container import read_container, write_container
from .tokenizer import Vocab

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)

# (layers, hidden, heads); "tiny" exists only for desk-scale runs and tests
PRESETS: dict[str, tuple[int, int, int]] = {
    "tiny": (2, 16, 2),
    "small": (6, 768, 12),
    "base": (12, 768, 12),
    "large": (24, 1024, 16),
}


@dataclass
class EncoderConfig:
    layers: int
    hidden: int
    heads: int
    vocab_size: int
    max_len: int
    ff: int | None = None
    head_hidden: int | None = None
    out_dim: int | None = None
    dropout: float = 0.1
    norm: str = "pre"
    tie_mlm: bool = True

    def __post_init__(self) -> None:
        if self.ff is None:
            self.ff = 4 * self.hidden
        if self.head_hidden is None:
            self.head_hidden = self.hidden
        if self.out_dim is None:
            self.out_dim = self.hidden
        for name in ("layers", "hidden", "heads", "vocab_size", "max_len", "ff", "head_hidden", "out_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.hidden % self.heads:
            raise ValueError(f"hidden size {self.hidden} is not divisible by {self.heads} heads")
        if self.norm not in ("pre", "post"):
            raise ValueError("norm must be 'pre' or 'post'")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @classmethod
    def from_preset(cls, name: str, vocab_size: int, max_len: int, **overrides: Any) -> "EncoderConfig":
        try:
            layers, hidden, heads = PRESETS[name]
        except KeyError:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
        return cls(layers=layers, hidden=hidden, heads=heads, vocab_size=vocab_size, max_len=max_len, **overrides)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        d, V = self.hidden, self.vocab_size
        shapes: dict[str, tuple[int, ...]] = {"tok_emb": (V, d), "pos_emb": (self.max_len, d)}
        for l in range(self.layers):
            p = f"layer{l}."
            shapes.update({
                p + "ln1.g": (d,), p + "ln1.b": (d,),
                p + "wq": (d, d), p + "bq": (d,),
                p + "wk": (d, d), p + "bk": (d,),
                p + "wv": (d, d), p + "bv": (d,),
                p + "wo": (d, d), p + "bo": (d,),
                p + "ln2.g": (d,), p + "ln2.b": (d,),
                p + "w1": (d, self.ff), p + "b1": (self.ff,),
                p + "w2": (self.ff, d), p + "b2": (d,),
            })
        shapes.update({
            "ln_f.g": (d,), "ln_f.b": (d,),
            "head.w1": (d, self.head_hidden), "head.b1": (self.head_hidden,),
            "head.w2": (self.head_hidden, self.out_dim), "head.b2": (self.out_dim,),
            "mlm.bias": (V,),
        })
        if not self.tie_mlm:
            shapes["mlm.w"] = (V, d)
        return shapes


def init_params(config: EncoderConfig, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit LN gains."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in config.param_shapes().items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            arr = np.ones(shape)
        elif len(shape) == 1:
            arr = np.zeros(shape)
        else:
            # embedding tables are scaled by the hidden size, projections by fan-in
            fan_in = shape[1] if name in ("tok_emb", "pos_emb", "mlm.w") else shape[0]
            s = 1.0 / math.sqrt(fan_in)
            arr = rng.uniform(-s, s, size=shape)
        params[name] = arr.astype(dtype)
    return params


def count_params(config: EncoderConfig) -> int:
    return sum(int(np.prod(s)) for s in config.param_shapes().values())


# ---------------------------------------------------------------- primitives

def _layer_norm(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xh = xc * rstd
    return xh * g + b, (xh, rstd)


def _layer_norm_bwd(dy, g, cache):
    xh, rstd = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xh).sum(axes)
    db = dy.sum(axes)
    dxh = dy * g
    dx = rstd * (dxh - dxh.mean(-1, keepdims=True) - xh * (dxh * xh).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    return 0.5 * x * (1.0 + t), t


def _gelu_bwd(dy, x, t):
    dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


def _softmax(s):
    s = s - s.max(-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(-1, keepdims=True)


def _split_heads(x, heads):
    B, n, d = x.shape
    return x.reshape(B, n, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, n, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, n, H * dh)


def _mha(x, key_bias, P, p, heads):
    """Multi-head self-attention over a (B, n, d) batch; returns output and cache."""
    q = _split_heads(x @ P[p + "wq"] + P[p + "bq"], heads)
    k = _split_heads(x @ P[p + "wk"] + P[p + "bk"], heads)
    v = _split_heads(x @ P[p + "wv"] + P[p + "bv"], heads)
    scale = 1.0 / math.sqrt(q.shape[-1])
    probs = _softmax(q @ k.transpose(0, 1, 3, 2) * scale + key_bias)
    o = _merge_heads(probs @ v)
    y = o @ P[p + "wo"] + P[p + "bo"]
    return y, (x, q, k, v, probs, o, scale)


def _mha_bwd(dy, cache, P, p, heads, G):
    x, q, k, v, probs, o, scale = cache
    d = x.shape[-1]
    G[p + "wo"] += o.reshape(-1, d).T @ dy.reshape(-1, d)
    G[p + "bo"] += dy.sum((0, 1))
    do = _split_heads(dy @ P[p + "wo"].T, heads)
    dprobs = do @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ do
    ds = probs * (dprobs - (dprobs * probs).sum(-1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.transpose(0, 1, 3, 2) @ q
    x2 = x.reshape(-1, d)
    dx = np.zeros_like(x)
    for name, dproj in (("q", dq), ("k", dk), ("v", dv)):
        dm = _merge_heads(dproj)
        G[p + "w" + name] += x2.T @ dm.reshape(-1, d)
        G[p + "b" + name] += dm.sum((0, 1))
        dx += dm @ P[p + "w" + name].T
    return dx


def attention(X, mask, wq, wk, wv, wo=None, heads: int = 1):
    """Masked scaled dot-product self-attention for a single (n, d) sequence.

    Pad positions (``mask == 0``) get ``-inf`` logits as keys. Heads are
    concatenated and multiplied by ``wo`` when given.
    """
    X = np.asarray(X)
    d = X.shape[1]
    P = {"wq": wq, "wk": wk, "wv": wv, "bq": 0.0, "bk": 0.0, "bv": 0.0,
         "wo": np.eye(d, dtype=X.dtype) if wo is None else wo, "bo": 0.0}
    bias = np.where(np.asarray(mask)[None, None, None, :] > 0, 0.0, -np.inf).astype(X.dtype)
    y, cache = _mha(X[None], bias, P, "", heads)
    return y[0], cache[4][0]


# ---------------------------------------------------------------- encoder

@dataclass
class ForwardState:
    """Activations recorded by a training-mode forward pass."""

    embeddings: np.ndarray  # (B, out_dim)
    hidden: np.ndarray  # (B, n, d) final token outputs
    ids: np.ndarray
    caches: list = field(default_factory=list)


class Encoder:
    def __init__(self, config: EncoderConfig, params: dict[str, np.ndarray], vocab: Vocab | None = None):
        self.config = config
        self.params = params
        self.vocab = vocab
        expected = config.param_shapes()
        if set(expected) != set(params):
            raise ValueError("parameter names do not match config")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ValueError(f"{name}: shape {params[name].shape} != {shape}")

    @classmethod
    def create(cls, config: EncoderConfig, seed: int, vocab: Vocab | None = None, dtype=np.float32) -> "Encoder":
        return cls(config, init_params(config, seed, dtype), vocab)

    @property
    def dtype(self):
        return self.params["tok_emb"].dtype

    def astype(self, dtype) -> "Encoder":
        return Encoder(self.config, {k: v.astype(dtype) for k, v in self.params.items()}, self.vocab)

    def copy(self) -> "Encoder":
        return Encoder(self.config, {k: v.copy() for k, v in self.params.items()}, self.vocab)

    def mlm_weight_name(self) -> str:
        return "tok_emb" if self.config.tie_mlm else "mlm.w"

    # -- forward ---------------------------------------------------------

    def forward(self, ids, mask, training: bool = False, rng: np.random.Generator | None = None) -> ForwardState:
        cfg, P = self.config, self.params
        ids = np.asarray(ids)
        mask = np.asarray(mask)
        if ids.ndim != 2 or ids.shape != mask.shape:
            raise ValueError("ids and mask must both be (batch, length)")
        if ids.shape[1] > cfg.max_len:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_len {cfg.max_len}")
        # columns past the longest sequence are pure padding and cannot affect valid outputs
        n = max(1, int(mask.sum(1).max())) if len(ids) else 1
        ids, mask = ids[:, :n], mask[:, :n]
        drop = cfg.dropout if training else 0.0
        if drop and rng is None:
            raise ValueError("training with dropout needs an rng")

        def dropout(a):
            if not drop:
                return a, None
            keep = (rng.random(a.shape) >= drop).astype(a.dtype) / (1.0 - drop)
            return a * keep, keep

        key_bias = np.where(mask[:, None, None, :] > 0, 0.0, -np.inf).astype(self.dtype)
        x = P["tok_emb"][ids] + P["pos_emb"][:n]
        caches: list = []
        if cfg.norm == "post":
            x, c = _layer_norm(x, P["ln_f.g"], P["ln_f.b"])
            caches.append(c)
        for l in range(cfg.layers):
            p = f"layer{l}."
            if cfg.norm == "pre":
                a, c_ln1 = _layer_norm(x, P[p + "ln1.g"], P[p + "ln1.b"])
                y, c_att = _mha(a, key_bias, P, p, cfg.heads)
                y, k1 = dropout(y)
                x1 = x + y
                b, c_ln2 = _layer_norm(x1, P[p + "ln2.g"], P[p + "ln2.b"])
                h1 = b @ P[p + "w1"] + P[p + "b1"]
                g, t = _gelu(h1)
                f = g @ P[p + "w2"] + P[p + "b2"]
                f, k2 = dropout(f)
                x = x1 + f
            else:
                y, c_att = _mha(x, key_bias, P, p, cfg.heads)
                y, k1 = dropout(y)
                x1, c_ln1 = _layer_norm(x + y, P[p + "ln1.g"], P[p + "ln1.b"])
                b = x1
                h1 = b @ P[p + "w1"] + P[p + "b1"]
                g, t = _gelu(h1)
                f = g @ P[p + "w2"] + P[p + "b2"]
                f, k2 = dropout(f)
                x, c_ln2 = _layer_norm(x1 + f, P[p + "ln2.g"], P[p + "ln2.b"])
            caches.append((c_ln1, c_att, k1, c_ln2, b, h1, g, t, k2))
        if cfg.norm == "pre":
            x, c = _layer_norm(x, P["ln_f.g"], P["ln_f.b"])
            caches.append(c)
        cls = x[:, 0]
        z = np.tanh(cls @ P["head.w1"] + P["head.b1"])
        emb = z @ P["head.w2"] + P["head.b2"]
        caches.append((cls, z))
        return ForwardState(emb, x, ids, caches)

    def encode(self, ids, mask) -> np.ndarray:
        """Inference-mode embeddings, one row per sequence."""
        return self.forward(ids, mask).embeddings

    # -- backward --------------------------------------------------------

    def backward(self, state: ForwardState, d_emb, d_hidden=None) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss given its gradient w.r.t. the embeddings
        (and optionally w.r.t. the final token outputs)."""
        if state is None or not state.caches:
            raise RuntimeError("backward called without a recorded forward pass")
        cfg, P = self.config, self.params
        G = {k: np.zeros_like(v) for k, v in P.items()}
        caches = list(state.caches)
        B, n, d = state.hidden.shape
        d_emb = np.asarray(d_emb, dtype=self.dtype)

        cls, z = caches.pop()
        G["head.w2"] += z.T @ d_emb
        G["head.b2"] += d_emb.sum(0)
        dz = (d_emb @ P["head.w2"].T) * (1.0 - z * z)
        G["head.w1"] += cls.T @ dz
        G["head.b1"] += dz.sum(0)
        dx = np.zeros((B, n, d), dtype=self.dtype)
        if d_hidden is not None:
            dx += np.asarray(d_hidden, dtype=self.dtype)[:, :n]
        dx[:, 0] += dz @ P["head.w1"].T

        if cfg.norm == "pre":
            dx, dg, db = _layer_norm_bwd(dx, P["ln_f.g"], caches.pop())
            G["ln_f.g"] += dg
            G["ln_f.b"] += db

        for l in reversed(range(cfg.layers)):
            p = f"layer{l}."
            c_ln1, c_att, k1, c_ln2, b, h1, g, t, k2 = caches.pop()
            if cfg.norm == "pre":
                df = dx if k2 is None else dx * k2
                dx1 = dx + self._ffn_bwd(df, p, b, h1, g, t, G, c_ln2)
                dy = dx1 if k1 is None else dx1 * k1
                da = _mha_bwd(dy, c_att, P, p, cfg.heads, G)
                dxa, dg1, db1 = _layer_norm_bwd(da, P[p + "ln1.g"], c_ln1)
                G[p + "ln1.g"] += dg1
                G[p + "ln1.b"] += db1
                dx = dx1 + dxa
            else:
                dz2, dg2, db2 = _layer_norm_bwd(dx, P[p + "ln2.g"], c_ln2)
                G[p + "ln2.g"] += dg2
                G[p + "ln2.b"] += db2
                df = dz2 if k2 is None else dz2 * k2
                dx1 = dz2 + self._ffn_bwd(df, p, b, h1, g, t, G, None)
                dz1, dg1, db1 = _layer_norm_bwd(dx1, P[p + "ln1.g"], c_ln1)
                G[p + "ln1.g"] += dg1
                G[p + "ln1.b"] += db1
                dy = dz1 if k1 is None else dz1 * k1
                dx = dz1 + _mha_bwd(dy, c_att, P, p, cfg.heads, G)

        if cfg.norm == "post":
            dx, dg, db = _layer_norm_bwd(dx, P["ln_f.g"], caches.pop())
            G["ln_f.g"] += dg
            G["ln_f.b"] += db
        np.add.at(G["tok_emb"], state.ids.reshape(-1), dx.reshape(-1, d))
        G["pos_emb"][:n] += dx.sum(0)
        return G

    def _ffn_bwd(self, df, p, b, h1, g, t, G, c_ln2):
        P = self.params
        d = df.shape[-1]
        G[p + "w2"] += g.reshape(-1, g.shape[-1]).T @ df.reshape(-1, d)
        G[p + "b2"] += df.sum((0, 1))
        dh1 = _gelu_bwd(df @ P[p + "w2"].T, h1, t)
        G[p + "w1"] += b.reshape(-1, d).T @ dh1.reshape(-1, dh1.shape[-1])
        G[p + "b1"] += dh1.sum((0, 1))
        db_ = dh1 @ P[p + "w1"].T
        if c_ln2 is None:
            return db_
        dxb, dg, dbb = _layer_norm_bwd(db_, P[p + "ln2.g"], c_ln2)
        G[p + "ln2.g"] += dg
        G[p + "ln2.b"] += dbb
        return dxb

    # -- persistence -----------------------------------------------------

    def save(self, path: str | Path, extra: dict[str, Any] | None = None) -> None:
        cfg: dict[str, Any] = {"kind": "encoder", "encoder": self.config.to_dict()}
        if self.vocab is not None:
            cfg["vocab"] = self.vocab.itos
        if extra:
            cfg.update(extra)
        write_container(path, cfg, self.params)

    @classmethod
    def load(cls, path: str | Path) -> "Encoder":
        cfg, tensors = read_container(path)
        if cfg.get("kind") != "encoder":
            raise ValueError(f"{path} is not an encoder checkpoint")
        config = EncoderConfig(**cfg["encoder"])
        vocab = Vocab(cfg["vocab"]) if "vocab" in cfg else None
        return cls(config, tensors, vocab)
