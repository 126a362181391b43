"""Symmetric batch contrastive loss with analytic gradients.

Matched rows of the two embedding matrices are positives; every other row
in the batch is a negative. The loss averages the image-to-text and
text-to-image cross-entropy terms, each computed from its own logit matrix
so that swapping the two towers swaps the terms and the total is bitwise
unchanged.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def _log_softmax_rows(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def info_nce_loss_and_grads(zv: np.ndarray, zt: np.ndarray, tau: float):
    """Loss plus gradients w.r.t. both embedding matrices and log-temperature.

    Returns ``(loss, d_zv, d_zt, d_log_tau)``. Rows are assumed unit-norm and
    matched: row i of ``zv`` pairs with row i of ``zt``.
    """
    zv = np.asarray(zv, dtype=np.float64)
    zt = np.asarray(zt, dtype=np.float64)
    if tau <= 0:
        raise ValidationError("temperature must be positive")
    if zv.shape != zt.shape or zv.ndim != 2:
        raise ValidationError(f"embedding shapes must match: {zv.shape} vs {zt.shape}")
    if zv.shape[0] < 1:
        raise ValidationError("batch must contain at least one pair")
    if not (np.all(np.isfinite(zv)) and np.all(np.isfinite(zt))):
        raise ValidationError("non-finite embedding input")
    n = zv.shape[0]

    logits_v = (zv @ zt.T) / tau   # image -> text
    logits_t = (zt @ zv.T) / tau   # text -> image
    log_p_v = _log_softmax_rows(logits_v)
    log_p_t = _log_softmax_rows(logits_t)
    diag = np.arange(n)
    loss = -0.5 * (log_p_v[diag, diag] + log_p_t[diag, diag]).sum() / n

    # d loss / d logits = (softmax - I) / (2N), separately per direction
    grad_v = np.exp(log_p_v)
    grad_t = np.exp(log_p_t)
    grad_v[diag, diag] -= 1.0
    grad_t[diag, diag] -= 1.0
    grad_v /= 2.0 * n
    grad_t /= 2.0 * n

    d_zv = (grad_v @ zt + grad_t.T @ zt) / tau
    d_zt = (grad_v.T @ zv + grad_t @ zv) / tau
    # logits scale as 1/tau, so d loss / d log(tau) = -sum(grad * logits)
    d_log_tau = -((grad_v * logits_v).sum() + (grad_t * logits_t).sum())
    return loss, d_zv, d_zt, d_log_tau


def info_nce_loss(zv: np.ndarray, zt: np.ndarray, tau: float) -> float:
    """Loss value only."""
    return info_nce_loss_and_grads(zv, zt, tau)[0]
