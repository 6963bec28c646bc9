"""Training objectives and their gradients.

Three terms are combined:

* categorical cross-entropy over the class head's softmax output,
* mean squared error over pairwise score differences,
* mean squared error over direct score estimates.

The cross-entropy gradient is returned with respect to the logits, with the
softmax Jacobian already folded in: ``(p - onehot(y)) / batch``. That fused
form is both cheaper and better conditioned than chaining through the
softmax layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class LossWeights:
    """Mixing coefficients for the two auxiliary terms.

    The direct regression term always enters with weight one; ``class_weight``
    scales the cross-entropy term and ``pair_weight`` the pairwise term.
    """

    class_weight: float = 1.0
    pair_weight: float = 1.0

    def __post_init__(self) -> None:
        for label, value in (
            ("class_weight", self.class_weight),
            ("pair_weight", self.pair_weight),
        ):
            if not np.isfinite(value) or value < 0.0:
                raise ConfigError(f"{label} must be finite and >= 0, got {value}")


def cross_entropy_loss(
    probs: np.ndarray, classes: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood and its gradient at the logits.

    ``probs`` holds softmax rows, ``classes`` integer labels in
    ``[0, probs.shape[1])``. Probabilities are floored at the smallest
    positive normal float before the log so underflowed rows yield a large
    finite loss instead of infinity.
    """
    probs = np.asarray(probs, dtype=np.float64)
    classes = np.asarray(classes)
    if probs.ndim != 2:
        raise ShapeError(f"probs must be 2-d, got shape {probs.shape}")
    if classes.shape != (probs.shape[0],):
        raise ShapeError(
            f"classes shape {classes.shape} does not match probs shape {probs.shape}"
        )
    if classes.size == 0:
        raise ShapeError("cross entropy needs at least one sample")
    if not np.issubdtype(classes.dtype, np.integer):
        raise ValueError(f"classes must be integers, got dtype {classes.dtype}")
    n, m = probs.shape
    if classes.min() < 0 or classes.max() >= m:
        raise ValueError(f"class labels must lie in [0, {m}), got {classes}")
    picked = probs[np.arange(n), classes]
    loss = float(-np.log(np.maximum(picked, np.finfo(np.float64).tiny)).mean())
    grad_logits = probs.copy()
    grad_logits[np.arange(n), classes] -= 1.0
    grad_logits /= n
    return loss, grad_logits


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient ``2 (pred - target) / n``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape or pred.ndim != 1:
        raise ShapeError(
            f"mse needs equal-length vectors, got shapes {pred.shape} and {target.shape}"
        )
    if pred.size == 0:
        raise ShapeError("mse needs at least one sample")
    diff = pred - target
    loss = float((diff * diff).mean())
    return loss, 2.0 * diff / pred.size


def total_loss(
    class_term: float,
    pair_term: float,
    direct_term: float,
    weights: LossWeights,
    class_enabled: bool = True,
    pair_enabled: bool = True,
) -> float:
    """Weighted sum of the enabled terms.

    A disabled term contributes exactly zero: with both auxiliary heads off
    the total is bit-identical to ``direct_term``.
    """
    total = 0.0
    if class_enabled:
        total += weights.class_weight * class_term
    if pair_enabled:
        total += weights.pair_weight * pair_term
    return total + direct_term
