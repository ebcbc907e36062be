"""LightGCN / GCCF backbones trained with BPR, optionally aligned to frozen text embeddings."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .container import read_container, write_container
from .data import InteractionDataset
from .evaluation import MetricsReport, evaluate_all_rank
from .retrieval import EmbeddingStore
from .training.losses import info_nce_symmetric
from .training.optim import Adam
from .training.sampling import sample_negative

log = logging.getLogger(__name__)

BACKBONES = ("lightgcn", "gccf")


@dataclass
class NormalizedAdjacency:
    """Symmetric D^-1/2 A D^-1/2 over users (rows 0..U-1) then items (U..U+I-1)."""

    matrix: sp.csr_matrix
    n_users: int
    n_items: int


def build_norm_adj(dataset: InteractionDataset, drop_isolated: bool = True) -> NormalizedAdjacency:
    U, I = len(dataset.users), len(dataset.items)
    if not dataset.train:
        raise ValueError("train split is empty")
    rows = np.array([dataset.user_index[u] for u, _ in dataset.train], dtype=np.int64)
    cols = np.array([dataset.item_index[i] for _, i in dataset.train], dtype=np.int64)
    du = np.bincount(rows, minlength=U).astype(np.float64)
    di = np.bincount(cols, minlength=I).astype(np.float64)
    if not drop_isolated and (np.any(du == 0) or np.any(di == 0)):
        who = dataset.users[int(np.flatnonzero(du == 0)[0])] if np.any(du == 0) \
            else dataset.items[int(np.flatnonzero(di == 0)[0])]
        raise ValueError(f"{who!r} has no train interactions")
    vals = 1.0 / np.sqrt(du[rows] * di[cols])
    r = np.concatenate([rows, cols + U])
    c = np.concatenate([cols + U, rows])
    m = sp.csr_matrix((np.concatenate([vals, vals]), (r, c)), shape=(U + I, U + I))
    m.sort_indices()
    return NormalizedAdjacency(m, U, I)


@dataclass
class CFConfig:
    backbone: str = "lightgcn"
    dim: int = 64
    layers: int = 2
    lr: float = 1e-3
    epochs: int = 30
    batch_size: int = 1024
    reg: float = 1e-4
    align_weight: float = 0.0
    align_tau: float = 0.2
    eval_every: int = 1
    ns: tuple[int, ...] = (5, 10, 20)
    selection_metric: str = "recall@20"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}")
        if self.dim < 1 or self.layers < 0:
            raise ValueError("dim must be >= 1 and layers >= 0")
        if self.align_tau <= 0:
            raise ValueError("align_tau must be positive")
        self.ns = tuple(int(n) for n in self.ns)


class CFModel:
    def __init__(self, config: CFConfig, users: list[str], items: list[str], params: dict[str, np.ndarray]):
        self.config = config
        self.users = list(users)
        self.items = list(items)
        self.params = params

    @classmethod
    def create(cls, config: CFConfig, users, items, text_dim: int | None = None) -> "CFModel":
        seeds = np.random.SeedSequence(config.seed).spawn(2)
        rng = np.random.default_rng(seeds[0])
        d = config.dim
        # xavier-normal as in the common backbone implementations
        params = {
            "user_emb": rng.normal(0, math.sqrt(2.0 / (len(users) + d)), (len(users), d)),
            "item_emb": rng.normal(0, math.sqrt(2.0 / (len(items) + d)), (len(items), d)),
        }
        if config.backbone == "gccf":
            k = (config.layers + 1) * d
            params["gccf.proj"] = rng.uniform(-1 / math.sqrt(k), 1 / math.sqrt(k), (k, d))
        if text_dim is not None:
            prng = np.random.default_rng(seeds[1])
            s = 1.0 / math.sqrt(text_dim)
            params["align.proj"] = prng.uniform(-s, s, (text_dim, d))
        return cls(config, users, items, params)

    @property
    def enhanced(self) -> bool:
        return "align.proj" in self.params

    def save(self, path: str | Path) -> None:
        cfg = {"kind": "cf", "cf": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.config).items()},
               "users": self.users, "items": self.items}
        write_container(path, cfg, self.params)

    @classmethod
    def load(cls, path: str | Path) -> "CFModel":
        cfg, tensors = read_container(path)
        if cfg.get("kind") != "cf":
            raise ValueError(f"{path} is not a CF checkpoint")
        return cls(CFConfig(**cfg["cf"]), cfg["users"], cfg["items"],
                   {k: v.astype(np.float64) for k, v in tensors.items()})


def _propagate_layers(E0, adj: NormalizedAdjacency, layers: int):
    out = [E0]
    for _ in range(layers):
        out.append(adj.matrix @ out[-1])
    return out


def propagate(model: CFModel, adj: NormalizedAdjacency):
    """Final (user, item) embeddings and the per-layer stack used by the reverse pass."""
    P = model.params
    E0 = np.concatenate([P["user_emb"], P["item_emb"]])
    layers = _propagate_layers(E0, adj, model.config.layers)
    if model.config.backbone == "lightgcn":
        final = sum(layers[1:], layers[0].copy()) / len(layers)
    else:
        final = np.concatenate(layers, axis=1) @ P["gccf.proj"]
    U = adj.n_users
    return final[:U], final[U:], layers


def propagate_bwd(model: CFModel, adj: NormalizedAdjacency, layers, d_final) -> dict[str, np.ndarray]:
    P = model.params
    L = model.config.layers
    G: dict[str, np.ndarray] = {}
    if model.config.backbone == "lightgcn":
        parts = [d_final / (L + 1)] * (L + 1)
    else:
        G["gccf.proj"] = np.concatenate(layers, axis=1).T @ d_final
        d_cat = d_final @ P["gccf.proj"].T
        parts = np.split(d_cat, L + 1, axis=1)
    # A is symmetric: the adjoint of one propagation step is another propagation step
    dE0 = np.zeros_like(d_final)
    for l in reversed(range(L + 1)):
        dE0 = parts[l] + (adj.matrix @ dE0 if l < L else dE0)
    U = adj.n_users
    G["user_emb"] = dE0[:U]
    G["item_emb"] = dE0[U:]
    return G


def bpr_dot_loss(u, p, n):
    """Mean -log sigmoid(<u,p> - <u,n>) with gradients for (u, p, n)."""
    x = (u * p).sum(1) - (u * n).sum(1)
    B = len(x)
    loss = float(np.mean(np.logaddexp(0.0, -x)))
    dx = (-0.5 * (1.0 - np.tanh(0.5 * x)) / B)[:, None]
    return loss, (dx * (p - n), dx * u, -dx * u)


def alignment_loss(cf_embs, text_embs, projection, tau: float):
    """Symmetric in-batch InfoNCE between CF rows and projected text rows.

    Returns the loss and gradients w.r.t. (cf_embs, projection); text
    embeddings are treated as constants.
    """
    projected = np.asarray(text_embs, dtype=np.float64) @ projection
    loss, (d_cf, d_proj_rows) = info_nce_symmetric(cf_embs, projected, tau)
    return loss, (d_cf, np.asarray(text_embs, dtype=np.float64).T @ d_proj_rows)


@dataclass
class CFResult:
    model: CFModel
    best_epoch: int
    val: dict[str, float]
    test: MetricsReport | None
    history: list[dict] = field(default_factory=list)


def cf_stores(model: CFModel, adj: NormalizedAdjacency) -> tuple[EmbeddingStore, EmbeddingStore]:
    uf, itf, _ = propagate(model, adj)
    return EmbeddingStore("user", model.users, uf), EmbeddingStore("item", model.items, itf)


def train_cf(dataset: InteractionDataset, config: CFConfig, user_text: EmbeddingStore | None = None,
             item_text: EmbeddingStore | None = None) -> CFResult:
    """BPR over propagated dot-product scores, plus ``align_weight`` x alignment when text is given."""
    if not dataset.val:
        raise ValueError("validation split is empty")
    enhanced = config.align_weight > 0 and user_text is not None and item_text is not None
    text_u = text_i = None
    if enhanced:
        text_u = np.stack([user_text.row(u) for u in dataset.users]).astype(np.float64)
        text_i = np.stack([item_text.row(i) for i in dataset.items]).astype(np.float64)
    model = CFModel.create(config, dataset.users, dataset.items, text_u.shape[1] if enhanced else None)
    adj = build_norm_adj(dataset)
    opt = Adam(model.params, config.lr)
    rng = np.random.default_rng(config.seed)
    train = dataset.train
    u_idx = np.array([dataset.user_index[u] for u, _ in train])
    i_idx = np.array([dataset.item_index[i] for _, i in train])
    U = len(dataset.users)
    best_score, best_epoch, best_params, best_val = -math.inf, 0, None, {}
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        losses = []
        for start in range(0, len(order), config.batch_size):
            b = order[start:start + config.batch_size]
            bu, bp = u_idx[b], i_idx[b]
            bn = np.array([dataset.item_index[sample_negative(dataset.users[x], dataset, rng)] for x in bu])
            uf, itf, layers = propagate(model, adj)
            loss, (du, dp, dn) = bpr_dot_loss(uf[bu], itf[bp], itf[bn])
            d_final = np.zeros((U + len(dataset.items), config.dim))
            np.add.at(d_final, bu, du)
            np.add.at(d_final, U + bp, dp)
            np.add.at(d_final, U + bn, dn)
            if enhanced:
                d_align_proj = np.zeros_like(model.params["align.proj"])
                half = 0.5 * config.align_weight
                for rows, feats, final, off in ((np.unique(bu), text_u, uf, 0), (np.unique(bp), text_i, itf, U)):
                    la, (d_cf, d_proj) = alignment_loss(final[rows], feats[rows], model.params["align.proj"],
                                                        config.align_tau)
                    loss += half * la
                    np.add.at(d_final, off + rows, half * d_cf)
                    d_align_proj += half * d_proj
            grads = propagate_bwd(model, adj, layers, d_final)
            if config.reg:
                B = len(b)
                for name, idx in (("user_emb", bu), ("item_emb", bp), ("item_emb", bn)):
                    e = model.params[name][idx]
                    loss += 0.5 * config.reg * float((e * e).sum()) / B
                    np.add.at(grads[name], idx, config.reg * e / B)
            if enhanced:
                grads["align.proj"] = d_align_proj
            if not math.isfinite(loss):
                raise FloatingPointError(f"non-finite CF loss at epoch {epoch}")
            opt.step(grads)
            losses.append(loss)
        if epoch % config.eval_every == 0 or epoch == config.epochs:
            us, its = cf_stores(model, adj)
            val = evaluate_all_rank(us, its, dataset, "val", config.ns, scorer="dot").mean()
            history.append({"epoch": epoch, "loss": float(np.mean(losses)), **val})
            if val[config.selection_metric] > best_score:
                best_score, best_epoch, best_val = val[config.selection_metric], epoch, val
                best_params = {k: v.copy() for k, v in model.params.items()}
    # checkpoints hold float32; round now so the returned model equals its saved form
    model.params = {k: v.astype(np.float32).astype(np.float64) for k, v in best_params.items()}
    test = None
    if dataset.test:
        us, its = cf_stores(model, adj)
        test = MetricsReport.from_rounds(config.ns, [evaluate_all_rank(us, its, dataset, "test", config.ns,
                                                                       scorer="dot").mean()])
    return CFResult(model, best_epoch, best_val, test, history)
