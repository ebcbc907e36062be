"""Contrastive + MLM training loop with validation-based checkpoint selection."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from ..data import InteractionDataset, ProfileSet
from ..encoder import Encoder, ForwardState
from ..evaluation import evaluate_multi_profile
from .losses import CONTRASTIVE_MODES, bpr_loss, contrastive_loss, mlm_loss
from .optim import Adam, clip_by_global_norm
from .sampling import TripletBatch, mlm_mask, sample_batch

log = logging.getLogger(__name__)

OBJECTIVES = CONTRASTIVE_MODES + ("bpr",)


class TrainingDiverged(RuntimeError):
    """Raised on a non-finite loss; carries the last finite-parameter encoder."""

    def __init__(self, step: int, last_good: Encoder):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.last_good = last_good


@dataclass
class TrainConfig:
    tau: float = 0.05
    mlm_weight: float = 0.1
    mask_ratio: float = 0.15
    mask_convention: str = "bert"
    lr: float = 5e-5
    epochs: int = 25
    max_steps: int | None = None
    batch_size: int = 32
    eval_interval: int = 1000
    selection_metric: str = "recall@20"
    eval_ns: tuple[int, ...] = (10, 20)
    eval_split: str = "val"
    eval_t: int = 0
    objective: str = "contrastive-paper"
    profile_t: int | None = 3
    clip_norm: float | None = 5.0
    seed: int = 0

    def __post_init__(self) -> None:
        self.eval_ns = tuple(int(n) for n in self.eval_ns)
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.mlm_weight < 0:
            raise ValueError("mlm_weight must be >= 0")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ValueError("mask_ratio must be in [0, 1)")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.objective in CONTRASTIVE_MODES and self.batch_size < 2:
            raise ValueError("contrastive objectives need batch_size >= 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        metric, _, n = self.selection_metric.partition("@")
        if metric not in ("recall", "ndcg") or not n.isdigit():
            raise ValueError(f"bad selection metric {self.selection_metric!r}")
        if int(n) not in self.eval_ns:
            self.eval_ns = tuple(sorted(set(self.eval_ns) | {int(n)}))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval_ns"] = list(self.eval_ns)
        return d


@dataclass
class TrainingBatchReport:
    step: int
    loss_con: float
    loss_mlm: float
    loss: float
    grad_norm: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class TrainResult:
    best: Encoder
    best_step: int
    best_score: float
    reports: list[TrainingBatchReport] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)


def _accumulate(G: dict, extra: Mapping, scale: float = 1.0) -> None:
    for k, v in extra.items():
        G[k] += scale * v


class Trainer:
    """Single-owner trainer: it mutates ``encoder.params`` in place."""

    def __init__(self, encoder: Encoder, config: TrainConfig, dataset: InteractionDataset,
                 user_profiles: Mapping[str, ProfileSet], item_profiles: Mapping[str, ProfileSet]):
        if encoder.vocab is None:
            raise ValueError("encoder needs a vocabulary")
        self.encoder = encoder
        self.config = config
        self.dataset = dataset
        self.user_profiles = user_profiles
        self.item_profiles = item_profiles
        self.rng = np.random.default_rng(config.seed)
        self.optimizer = Adam(encoder.params, config.lr)
        self.step = 0

    def objective_grads(self, batch: TripletBatch):
        """Ranking loss and its parameter gradients for one triplet batch (training mode)."""
        enc, cfg = self.encoder, self.config
        state = enc.forward(batch.ids, batch.mask, training=True, rng=self.rng)
        B = batch.size
        e = state.embeddings
        if cfg.objective == "bpr":
            loss, (du, dp, dn) = bpr_loss(e[:B], e[B:2 * B], e[2 * B:], cfg.tau)
        else:
            loss, (du, dp, dn) = contrastive_loss(e[:B], e[B:2 * B], e[2 * B:], cfg.tau, cfg.objective)
        grads = enc.backward(state, np.concatenate([du, dp, dn]))
        return loss, grads

    def mlm_grads(self, ids, mask):
        """MLM loss and gradients over one masked copy of the batch sequences."""
        enc, cfg = self.encoder, self.config
        masked, (rows, cols), labels = mlm_mask(ids, mask, cfg.mask_ratio, self.rng,
                                                enc.config.vocab_size, cfg.mask_convention)
        if len(labels) == 0:
            return 0.0, None
        state: ForwardState = enc.forward(masked, mask, training=True, rng=self.rng)
        w_name = enc.mlm_weight_name()
        h = state.hidden[rows, cols]
        loss, (dh, dw, db) = mlm_loss(h, labels, enc.params[w_name], enc.params["mlm.bias"])
        d_hidden = np.zeros_like(state.hidden)
        np.add.at(d_hidden, (rows, cols), dh)
        grads = enc.backward(state, np.zeros_like(state.embeddings), d_hidden)
        grads[w_name] += dw
        grads["mlm.bias"] += db
        return loss, grads

    def train_step(self) -> TrainingBatchReport:
        cfg = self.config
        batch = sample_batch(self.dataset, self.user_profiles, self.item_profiles, cfg.batch_size, self.rng,
                             self.encoder.vocab, self.encoder.config.max_len, cfg.profile_t,
                             min_batch=2 if cfg.objective in CONTRASTIVE_MODES else 1)
        loss_con, grads = self.objective_grads(batch)
        loss_mlm = 0.0
        if cfg.mlm_weight > 0 and cfg.mask_ratio > 0:
            loss_mlm, g_mlm = self.mlm_grads(batch.ids, batch.mask)
            if g_mlm is not None:
                _accumulate(grads, g_mlm, cfg.mlm_weight)
        total = loss_con + cfg.mlm_weight * loss_mlm
        self.step += 1
        if not math.isfinite(total):
            raise FloatingPointError(f"non-finite loss at step {self.step}")
        norm = clip_by_global_norm(grads, cfg.clip_norm)
        self.optimizer.step(grads)
        return TrainingBatchReport(self.step, loss_con, loss_mlm, total, norm)

    def validate(self) -> dict[str, float]:
        cfg = self.config
        report = evaluate_multi_profile(self.encoder, self.user_profiles, self.item_profiles, self.dataset,
                                        cfg.eval_split, cfg.eval_ns, t=cfg.eval_t)
        return report.mean

    def total_steps(self) -> int:
        cfg = self.config
        if cfg.max_steps is not None:
            return cfg.max_steps
        per_epoch = math.ceil(len(self.dataset.train) / cfg.batch_size)
        return cfg.epochs * per_epoch

    def run(self, on_report: Callable[[TrainingBatchReport], None] | None = None) -> TrainResult:
        cfg = self.config
        log.info("training: objective=%s tau=%g lambda=%g mask_ratio=%g lr=%g batch=%d",
                 cfg.objective, cfg.tau, cfg.mlm_weight, cfg.mask_ratio, cfg.lr, cfg.batch_size)
        total = self.total_steps()
        has_val = bool(self.dataset.splits.get(cfg.eval_split))
        best, best_step, best_score = self.encoder.copy(), 0, -math.inf
        result = TrainResult(best, 0, best_score)
        last_good = self.encoder.copy()
        while self.step < total:
            try:
                rep = self.train_step()
            except FloatingPointError:
                raise TrainingDiverged(self.step, last_good) from None
            if not all(np.all(np.isfinite(p)) for p in self.encoder.params.values()):
                raise TrainingDiverged(self.step, last_good)
            result.reports.append(rep)
            if on_report:
                on_report(rep)
            if self.step % cfg.eval_interval == 0 or self.step == total:
                last_good = self.encoder.copy()
                if has_val:
                    metrics = self.validate()
                    score = metrics[cfg.selection_metric]
                    result.evals.append({"step": self.step, **metrics})
                    log.info("step %d: %s", self.step, " ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
                    if score > best_score:
                        best, best_step, best_score = last_good.copy(), self.step, score
                else:
                    best, best_step = last_good, self.step
        if not has_val and total == 0:
            best = self.encoder.copy()
        result.best, result.best_step, result.best_score = best, best_step, best_score
        return result


def train(config: TrainConfig, dataset: InteractionDataset, user_profiles: Mapping[str, ProfileSet],
          item_profiles: Mapping[str, ProfileSet], encoder: Encoder,
          on_report: Callable[[TrainingBatchReport], None] | None = None) -> TrainResult:
    if not dataset.splits.get(config.eval_split):
        raise ValueError(f"{config.eval_split} split is empty; checkpoint selection needs it")
    return Trainer(encoder, config, dataset, user_profiles, item_profiles).run(on_report)
