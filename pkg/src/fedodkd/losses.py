"""Softmax, cross-entropy and temperature-scaled distillation losses.

All batch losses are means over rows, and the matching gradients are taken
with respect to the (student) logits so they can be fed straight into
:func:`fedodkd.nn_core.backward`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class DistillConfig:
    temperature: float = 3.0
    lambda_max: float = 0.5
    ramp_threshold_epoch: int = 300
    apply_T_squared: bool = True

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.lambda_max < 0:
            raise ValueError("lambda_max must be non-negative")
        if self.ramp_threshold_epoch < 0:
            raise ValueError("ramp_threshold_epoch must be non-negative")


def softmax_t(logits, T: float = 1.0) -> np.ndarray:
    """Softmax of ``logits / T`` along the last axis."""
    if T <= 0:
        raise ValueError(f"temperature must be positive, got {T}")
    z = np.asarray(logits, dtype=np.float64) / T
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _as_batch(logits, labels):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    single = logits.ndim == 1
    if single:
        logits, labels = logits[None, :], labels.reshape(1)
    if labels.shape[0] != logits.shape[0]:
        raise ValueError("number of labels does not match number of rows")
    C = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError(f"label out of range for {C} classes")
    return logits, labels.astype(np.intp)


def cross_entropy(logits, label) -> float:
    """``-log softmax(logits)[label]``, averaged over rows for a batch."""
    logits, labels = _as_batch(logits, label)
    logp = log_softmax(logits)
    return float(-logp[np.arange(len(labels)), labels].mean())


def cross_entropy_with_grad(logits, labels) -> tuple[float, np.ndarray]:
    logits, labels = _as_batch(logits, labels)
    k = len(labels)
    logp = log_softmax(logits)
    rows = np.arange(k)
    loss = float(-logp[rows, labels].mean())
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return loss, grad / k


def kl_div(teacher_probs, student_probs) -> float:
    """``sum t * ln(t / s)`` with ``0 ln 0 = 0``; batch input gives the row mean.

    Student probabilities are floored at 1e-12 before the log. Where the
    teacher entry is itself below 1e-12 the floor drops to the teacher value,
    so that identical underflowing distributions still give exactly zero.
    """
    t = np.asarray(teacher_probs, dtype=np.float64)
    s = np.asarray(student_probs, dtype=np.float64)
    if t.shape != s.shape:
        raise ValueError(f"shape mismatch: {t.shape} vs {s.shape}")
    floor = np.where(t > 0, np.minimum(t, PROB_FLOOR), PROB_FLOOR)
    ratio = np.log(np.where(t > 0, t, 1.0)) - np.log(np.maximum(s, floor))
    terms = np.where(t > 0, t * ratio, 0.0)
    total = terms.sum(axis=-1)
    return float(np.mean(total))


def distill_loss(teacher_logits, student_logits, cfg: DistillConfig) -> tuple[float, np.ndarray]:
    """KL between temperature-softened teacher and student, plus d(loss)/d(student_logits).

    With ``cfg.apply_T_squared`` the loss (and gradient) carry the usual ``T**2``
    factor. Batches are averaged over rows.
    """
    t_logits = np.asarray(teacher_logits, dtype=np.float64)
    s_logits = np.asarray(student_logits, dtype=np.float64)
    if t_logits.shape != s_logits.shape:
        raise ValueError(f"shape mismatch: {t_logits.shape} vs {s_logits.shape}")
    T = cfg.temperature
    pt = softmax_t(t_logits, T)
    ps = softmax_t(s_logits, T)
    scale = T * T if cfg.apply_T_squared else 1.0
    loss = scale * kl_div(pt, ps)
    rows = 1 if s_logits.ndim == 1 else s_logits.shape[0]
    grad = scale * (ps - pt) / (T * rows)
    return loss, grad


def combined_step_loss(ce_batch_loss: float, kl_batch_loss: float, lambda_effective: float) -> float:
    if lambda_effective < 0:
        raise ValueError("lambda_effective must be non-negative")
    return ce_batch_loss + lambda_effective * kl_batch_loss


def lambda_at(epoch: int, cfg: DistillConfig) -> float:
    """Linear ramp from 0 to ``lambda_max`` reached at ``ramp_threshold_epoch``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if cfg.ramp_threshold_epoch == 0:
        return cfg.lambda_max
    return cfg.lambda_max * min(1.0, epoch / cfg.ramp_threshold_epoch)
