"""Loss functions."""

import numpy as np

from .ops import ensure_finite, sigmoid


def bce_with_logits(logits, labels):
    """Mean sigmoid binary cross-entropy, log-sum-exp stabilized.

    Returns (loss, dloss/dlogits). Labels are 0/1.
    """
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if z.shape != y.shape:
        raise ValueError(f"logits {z.shape} vs labels {y.shape}")
    ensure_finite("bce_logits", z)
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    grad = (sigmoid(z) - y) / z.size
    return float(per.mean()), grad
