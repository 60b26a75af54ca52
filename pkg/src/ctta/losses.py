"""Loss terms and their gradients with respect to student logits.

All losses are batch means. Each returns ``(value, dlogits)`` where ``dlogits``
has the shape of the student probability matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .nn import LOG_FLOOR, safe_log

PROB_TOL = 1e-6


def _as_probs(p: np.ndarray, name: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if p.ndim != 2 or not np.isfinite(p).all():
        raise InputError(f"{name}: expected a finite probability matrix")
    if (p < 0).any() or np.abs(p.sum(axis=1) - 1.0).max() > PROB_TOL:
        raise InputError(f"{name}: rows must be non-negative and sum to 1")
    return p


def _softmax_pullback(p: np.ndarray, pg: np.ndarray) -> np.ndarray:
    # pg holds p * dL/dp elementwise; softmax Jacobian is diag(p) - p p^T
    return pg - p * pg.sum(axis=1, keepdims=True)


def self_training_loss(teacher_probs: np.ndarray, student_probs: np.ndarray) -> tuple[float, np.ndarray]:
    """Symmetric cross-entropy between teacher ``q`` and student ``p``.

    ``-Σ q log p - Σ p log q`` averaged over the batch; ``q`` is a constant.
    """
    q = _as_probs(teacher_probs, "teacher_probs")
    p = _as_probs(student_probs, "student_probs")
    if q.shape != p.shape:
        raise InputError(f"teacher/student shape mismatch {q.shape} vs {p.shape}")
    n = p.shape[0]
    log_p = safe_log(p)
    log_q = safe_log(q)
    per_row = -(q * log_p).sum(axis=1) - (p * log_q).sum(axis=1)
    live = p >= LOG_FLOOR
    pg = -q * live - p * log_q
    return float(per_row.mean()), _softmax_pullback(p, pg) / n


def replay_loss(pseudo_labels: np.ndarray, student_probs: np.ndarray) -> tuple[float, np.ndarray]:
    """Cross-entropy of replayed samples against their stored pseudo-labels.

    ``pseudo_labels`` may be integer class ids or one-hot rows.
    """
    p = _as_probs(student_probs, "student_probs")
    y = np.asarray(pseudo_labels)
    if y.ndim == 1:
        y = one_hot(y, p.shape[1])
    y = y.astype(np.float64)
    if y.shape != p.shape or ((y != 0) & (y != 1)).any() or (y.sum(axis=1) != 1).any():
        raise InputError("pseudo_labels must be one-hot rows matching the probabilities")
    n = p.shape[0]
    per_row = -(y * safe_log(p)).sum(axis=1)
    pg = -y * (p >= LOG_FLOOR)
    return float(per_row.mean()), _softmax_pullback(p, pg) / n


def entropy_loss(student_probs: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean prediction entropy; the entropy-minimisation baseline's objective."""
    p = _as_probs(student_probs, "student_probs")
    n = p.shape[0]
    log_p = safe_log(p)
    per_row = -(p * log_p).sum(axis=1)
    pg = -p * (log_p + (p >= LOG_FLOOR))
    return float(per_row.mean()), _softmax_pullback(p, pg) / n


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InputError(f"labels outside [0, {n_classes})")
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


@dataclass(frozen=True)
class LossBreakdown:
    st: float
    pce: float
    crp: float
    lambda_crp: float
    total: float

    def as_row(self) -> dict[str, float]:
        return {"l_st": self.st, "l_pce": self.pce, "l_crp": self.crp, "lambda_crp": self.lambda_crp, "l_t": self.total}


def total_loss(st: float, pce: float = 0.0, crp: float = 0.0, lambda_crp: float = 0.0) -> LossBreakdown:
    """Weighted sum ``st + pce + lambda_crp * crp``.

    Callers pass ``pce=0`` when the replay batch was empty and ``crp=0`` when no
    target graph could be estimated.
    """
    return LossBreakdown(st=st, pce=pce, crp=crp, lambda_crp=lambda_crp, total=st + pce + lambda_crp * crp)
