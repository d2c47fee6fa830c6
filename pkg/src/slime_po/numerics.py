"""Overflow-safe scalar/elementwise primitives shared by the objectives."""

import numpy as np

# above this, log1p(exp(z)) == z to within 1e-13
SOFTPLUS_LINEAR_THRESHOLD = 30.0


def softplus(z):
    """ln(1 + e^z) with a linear branch for large z."""
    z = np.asarray(z, dtype=np.float64)
    out = np.log1p(np.exp(np.minimum(z, SOFTPLUS_LINEAR_THRESHOLD)))
    out = np.where(z > SOFTPLUS_LINEAR_THRESHOLD, z, out)
    return out if out.ndim else float(out)


def sigmoid(z):
    """Logistic function, evaluated without overflow on either tail."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return out if out.ndim else float(out)


def neg_log_sigmoid(z):
    """-ln(sigmoid(z)), computed as softplus(-z)."""
    return softplus(-np.asarray(z, dtype=np.float64))


def log_softmax(logits, axis=-1):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
