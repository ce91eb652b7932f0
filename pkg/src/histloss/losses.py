"""Training objectives: temperature softmax, histogram cross-entropy, MAE terms.

Batched inputs put the class axis last. Loss functions return the mean over
the batch so gradients are already scaled by ``1 / batch``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LossConfig",
    "PROB_FLOOR",
    "softmax_with_temperature",
    "cross_entropy",
    "cross_entropy_grad_logits",
    "mae_loss",
    "mae_grad",
    "force_mae_loss",
    "force_mae_grad",
    "combined_loss",
]

# floor applied to predicted probabilities inside the log only
PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 2.0
    energy_weight: float = 0.7
    force_weight: float = 0.3

    def __post_init__(self):
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.energy_weight < 0 or self.force_weight < 0:
            raise ValueError("loss weights must be nonnegative")
        if abs(self.energy_weight + self.force_weight - 1.0) > 1e-12:
            raise ValueError(
                f"loss weights must sum to 1, got {self.energy_weight} + {self.force_weight}"
            )


def softmax_with_temperature(z, temperature: float) -> np.ndarray:
    """``exp(z / T) / sum(exp(z / T))`` along the last axis, max-shifted."""
    z = np.asarray(z, dtype=float)
    if not (temperature > 0 and math.isfinite(temperature)):
        raise ValueError(f"temperature must be positive, got {temperature}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    scaled = z / temperature
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    ex = np.exp(scaled)
    return ex / ex.sum(axis=-1, keepdims=True)


def cross_entropy(target, predicted):
    """``-sum_i target_i * log(predicted_i)``, averaged over any batch axes."""
    target = np.asarray(target, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if target.shape != predicted.shape:
        raise ValueError(f"shape mismatch: target {target.shape} vs predicted {predicted.shape}")
    per_row = -np.sum(target * np.log(np.maximum(predicted, PROB_FLOOR)), axis=-1)
    return float(np.mean(per_row))


def cross_entropy_grad_logits(target, z, temperature: float) -> np.ndarray:
    """Gradient of ``cross_entropy(target, softmax(z / T))`` with respect to ``z``.

    For a batch of shape ``(B, k)`` the result is divided by ``B`` to match the
    batch mean taken by :func:`cross_entropy`.
    """
    target = np.asarray(target, dtype=float)
    z = np.asarray(z, dtype=float)
    if target.shape != z.shape:
        raise ValueError(f"shape mismatch: target {target.shape} vs logits {z.shape}")
    p_hat = softmax_with_temperature(z, temperature)
    n_rows = int(np.prod(z.shape[:-1])) if z.ndim > 1 else 1
    return (p_hat - target) / (temperature * n_rows)


def mae_loss(e, e_hat):
    e, e_hat = np.broadcast_arrays(np.asarray(e, dtype=float), np.asarray(e_hat, dtype=float))
    return float(np.mean(np.abs(e - e_hat)))


def mae_grad(e, e_hat) -> np.ndarray:
    """Subgradient of :func:`mae_loss` with respect to ``e_hat`` (``sign(0) = 0``)."""
    e, e_hat = np.broadcast_arrays(np.asarray(e, dtype=float), np.asarray(e_hat, dtype=float))
    return np.sign(e_hat - e) / max(e.size, 1)


def _force_inputs(f, f_hat, mask):
    f = np.asarray(f, dtype=float)
    f_hat = np.asarray(f_hat, dtype=float)
    if f.shape != f_hat.shape:
        raise ValueError(f"force shape mismatch: {f.shape} vs {f_hat.shape}")
    if mask is None:
        mask = np.ones(f.shape[:-1] if f.ndim > 1 else f.shape, dtype=float)
    mask = np.asarray(mask, dtype=float)
    if f.ndim >= 2 and f.shape[-1] == 3 and mask.shape == f.shape[:-1]:
        mask = mask[..., None] * np.ones(3)
    return f, f_hat, np.broadcast_to(mask, f.shape)


def force_mae_loss(f, f_hat, mask=None):
    """Mean absolute force error per component.

    ``f`` may be a flat 3N vector, an ``(N, 3)`` array, or a padded batch
    ``(B, N_max, 3)`` with a per-atom ``mask``; batches average each sample's
    component mean over the batch.
    """
    f, f_hat, mask = _force_inputs(f, f_hat, mask)
    err = np.abs(f - f_hat) * mask
    if f.ndim <= 2:
        return float(err.sum() / max(mask.sum(), 1.0))
    n = f.shape[0]
    counts = np.maximum(mask.reshape(n, -1).sum(axis=1), 1.0)
    return float(np.mean(err.reshape(n, -1).sum(axis=1) / counts))


def force_mae_grad(f, f_hat, mask=None) -> np.ndarray:
    f, f_hat, mask = _force_inputs(f, f_hat, mask)
    sign = np.sign(f_hat - f) * mask
    if f.ndim <= 2:
        return sign / max(mask.sum(), 1.0)
    n = f.shape[0]
    counts = np.maximum(mask.reshape(n, -1).sum(axis=1), 1.0)
    return sign / (counts * n).reshape((n,) + (1,) * (f.ndim - 1))


def combined_loss(energy_loss: float, force_loss: float, cfg: LossConfig = LossConfig()) -> float:
    return cfg.energy_weight * energy_loss + cfg.force_weight * force_loss
