"""Training losses: hard cross-entropy, temperature-softened distillation,
and their blend.

The blended objective is

    loss = alpha * soft + (1 - alpha) * hard

where `soft` is T^2 times the batch-mean KL divergence from the student's
temperature-softened distribution to the teacher's, and `hard` is the mean
cross-entropy against the integer labels. The T^2 factor keeps soft-loss
gradient magnitudes comparable across temperatures. Teacher logits are
treated as constants; no gradient flows to them.

All functions return (loss, gradient_wrt_student_logits) so the caller can
feed the gradient straight into `nn.backward`.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError
from .nn import log_softmax, softmax


def _check_logits(logits: np.ndarray, name: str) -> np.ndarray:
    logits = np.asarray(logits)
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise ConfigError(f"{name} must be a non-empty [batch, classes] array")
    return logits


def hard_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(logits) against integer labels.
    Gradient over logits is (softmax - one_hot) / batch."""
    logits = _check_logits(logits, "logits")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ConfigError(f"labels shape {labels.shape} does not match batch {n}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise DataError("labels must be integers")
    if labels.min() < 0 or labels.max() >= c:
        raise DataError(f"label outside [0, {c})")
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def soft_loss(
    student_logits: np.ndarray, teacher_logits: np.ndarray, temperature: float
) -> tuple[float, np.ndarray]:
    """T^2-scaled batch-mean KL(teacher_T || student_T) over temperature-
    softened distributions. Gradient over student logits is T * (q - p) / n
    with q = softmax(student/T), p = softmax(teacher/T); the T^2 and the
    1/T from the chain rule cancel to a single T."""
    student_logits = _check_logits(student_logits, "student logits")
    teacher_logits = _check_logits(teacher_logits, "teacher logits")
    if student_logits.shape != teacher_logits.shape:
        raise ConfigError(
            f"student {student_logits.shape} and teacher {teacher_logits.shape} "
            "logit shapes differ"
        )
    if temperature <= 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    n = student_logits.shape[0]
    t = float(temperature)
    p = softmax(teacher_logits / t)
    log_q = log_softmax(student_logits / t)
    log_p = log_softmax(teacher_logits / t)
    kl_rows = (p * (log_p - log_q)).sum(axis=1)
    loss = t * t * kl_rows.mean()
    q = softmax(student_logits / t)
    grad = t * (q - p) / n
    return float(loss), grad


def distill_loss(
    student_logits: np.ndarray,
    teacher_logits: np.ndarray | None,
    labels: np.ndarray,
    alpha: float,
    temperature: float,
) -> tuple[float, np.ndarray, float, float]:
    """Blend alpha * soft + (1 - alpha) * hard. At alpha == 0 the soft term
    is skipped entirely (teacher_logits may be None) and at alpha == 1 the
    hard term is skipped, so the endpoints are exact, not just approximate.
    Returns (loss, gradient, hard_part, soft_part); skipped parts report 0.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        hard, grad = hard_loss(student_logits, labels)
        return hard, grad, hard, 0.0
    if teacher_logits is None:
        raise ConfigError("teacher logits required when alpha > 0")
    if alpha == 1.0:
        soft, grad = soft_loss(student_logits, teacher_logits, temperature)
        return soft, grad, 0.0, soft
    hard, hard_grad = hard_loss(student_logits, labels)
    soft, soft_grad = soft_loss(student_logits, teacher_logits, temperature)
    loss = alpha * soft + (1.0 - alpha) * hard
    grad = alpha * soft_grad + (1.0 - alpha) * hard_grad
    return float(loss), grad, hard, soft
