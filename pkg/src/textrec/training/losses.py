"""Training objectives with analytic gradients.

Each loss returns ``(value, grads)`` where ``grads`` are gradients of the
scalar value w.r.t. the inputs, in the same order.
"""

from __future__ import annotations

import numpy as np

CONTRASTIVE_MODES = ("contrastive-paper", "contrastive-standard")


def _unit(x, what):
    x = np.asarray(x, dtype=np.float64) if not np.issubdtype(np.asarray(x).dtype, np.floating) else np.asarray(x)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if not np.all(np.isfinite(norms)):
        raise FloatingPointError(f"{what} embeddings are not finite")
    if not np.all(norms > 0):
        row = int(np.flatnonzero(norms[:, 0] <= 0)[0])
        raise ValueError(f"{what} row {row} has zero norm; cosine similarity undefined")
    return x / norms, norms


def _cos_bwd(d_cos_rows, a_hat, a_norm, b_hat, cos):
    """Gradient w.r.t. ``a`` of sum_j d_cos[:, j] * cos(a, b_j); b_hat rows are unit vectors.

    ``d_cos_rows`` is (B, M), ``b_hat`` is (M, d) and ``cos`` is (B, M).
    """
    return (d_cos_rows @ b_hat - (d_cos_rows * cos).sum(1, keepdims=True) * a_hat) / a_norm


def _logsumexp_masked(logits, allowed):
    z = np.where(allowed, logits, -np.inf)
    m = z.max(1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(1, keepdims=True)
    return (m + np.log(s))[:, 0], e / s


def contrastive_loss(user_embs, pos_embs, neg_embs, tau: float = 0.05, mode: str = "contrastive-paper"):
    """In-batch contrastive loss over cosine similarities.

    Row b's denominator holds its own explicit negative and the positives of
    every other row. ``contrastive-standard`` also puts the row's own positive
    in the denominator, which makes the loss non-negative.
    """
    if mode not in CONTRASTIVE_MODES:
        raise ValueError(f"mode must be one of {CONTRASTIVE_MODES}")
    if tau <= 0:
        raise ValueError("tau must be positive")
    u_hat, u_norm = _unit(user_embs, "user")
    p_hat, p_norm = _unit(pos_embs, "positive")
    n_hat, n_norm = _unit(neg_embs, "negative")
    B = u_hat.shape[0]
    if p_hat.shape[0] != B or n_hat.shape[0] != B:
        raise ValueError("batch lengths differ")
    cos_p = u_hat @ p_hat.T  # (B, B): user b vs positive of row j
    cos_n = (u_hat * n_hat).sum(1)  # (B,) user b vs own negative
    logits = np.concatenate([cos_p, cos_n[:, None]], axis=1) / tau  # (B, B+1)
    allowed = np.ones_like(logits, dtype=bool)
    if mode == "contrastive-paper":
        allowed[np.arange(B), np.arange(B)] = False
    lse, probs = _logsumexp_masked(logits, allowed)
    diag = np.diag(cos_p)
    loss = float(np.mean(lse - diag / tau))

    d_logits = probs / B  # softmax part of the gradient
    d_logits[np.arange(B), np.arange(B)] -= 1.0 / B
    d_cos = d_logits / tau
    d_cp, d_cn = d_cos[:, :B], d_cos[:, B]
    cos_n_col = cos_n[:, None]
    d_u = _cos_bwd(d_cp, u_hat, u_norm, p_hat, cos_p) + (d_cn[:, None] * (n_hat - cos_n_col * u_hat)) / u_norm
    d_p = _cos_bwd(d_cp.T, p_hat, p_norm, u_hat, cos_p.T)
    d_n = d_cn[:, None] * (u_hat - cos_n_col * n_hat) / n_norm
    return loss, (d_u, d_p, d_n)


def bpr_loss(user_embs, pos_embs, neg_embs, tau: float = 0.05):
    """Mean -log sigmoid((cos(u, pos) - cos(u, neg)) / tau)."""
    u_hat, u_norm = _unit(user_embs, "user")
    p_hat, p_norm = _unit(pos_embs, "positive")
    n_hat, n_norm = _unit(neg_embs, "negative")
    B = u_hat.shape[0]
    cp = (u_hat * p_hat).sum(1)
    cn = (u_hat * n_hat).sum(1)
    x = (cp - cn) / tau
    loss = float(np.mean(np.logaddexp(0.0, -x)))
    dx = -0.5 * (1.0 - np.tanh(0.5 * x)) / B  # d/dx softplus(-x) = -sigmoid(-x)
    dcp, dcn = (dx / tau)[:, None], (-dx / tau)[:, None]
    cp_, cn_ = cp[:, None], cn[:, None]
    d_u = (dcp * (p_hat - cp_ * u_hat) + dcn * (n_hat - cn_ * u_hat)) / u_norm
    d_p = dcp * (u_hat - cp_ * p_hat) / p_norm
    d_n = dcn * (u_hat - cn_ * n_hat) / n_norm
    return loss, (d_u, d_p, d_n)


def mlm_loss(token_outputs, labels, out_weight, out_bias):
    """Mean softmax cross-entropy of ``token_outputs @ out_weight.T + out_bias`` against ``labels``.

    ``token_outputs`` holds only the labeled positions, shape (M, d). Returns
    gradients for (token_outputs, out_weight, out_bias); zero loss when M = 0.
    """
    h = np.asarray(token_outputs)
    labels = np.asarray(labels, dtype=np.int64)
    M = len(labels)
    if M == 0:
        return 0.0, (np.zeros_like(h), np.zeros_like(out_weight), np.zeros_like(out_bias))
    logits = h @ out_weight.T + out_bias
    m = logits.max(1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(1, keepdims=True)
    logp = logits - m - np.log(s)
    loss = float(-logp[np.arange(M), labels].mean())
    d_logits = e / s
    d_logits[np.arange(M), labels] -= 1.0
    d_logits /= M
    return loss, (d_logits @ out_weight, d_logits.T @ h, d_logits.sum(0))


def info_nce_symmetric(a, b, tau: float):
    """Symmetric in-batch InfoNCE between row-aligned ``a`` and ``b`` (cosine / tau logits).

    Matching rows are positives, all other rows are negatives; the result is
    the mean of the a->b and b->a directions.
    """
    a_hat, a_norm = _unit(a, "a")
    b_hat, b_norm = _unit(b, "b")
    B = a_hat.shape[0]
    cos = a_hat @ b_hat.T
    logits = cos / tau
    eye = np.arange(B)
    allowed = np.ones_like(logits, dtype=bool)
    lse_r, p_r = _logsumexp_masked(logits, allowed)
    lse_c, p_c = _logsumexp_masked(logits.T, allowed)
    diag = logits[eye, eye]
    loss = float(0.5 * (np.mean(lse_r - diag) + np.mean(lse_c - diag)))
    d_logits = 0.5 * (p_r + p_c.T) / B
    d_logits[eye, eye] -= 1.0 / B
    d_cos = d_logits / tau
    d_a = _cos_bwd(d_cos, a_hat, a_norm, b_hat, cos)
    d_b = _cos_bwd(d_cos.T, b_hat, b_norm, a_hat, cos.T)
    return loss, (d_a, d_b)
