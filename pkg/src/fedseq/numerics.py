"""Dense float64 helpers shared by the model, optimizer and metrics code.

Everything here accepts plain numpy arrays. Batched variants operate on the
last axis so the same functions serve single vectors and ``(B, k)`` blocks.
"""

import numpy as np

LOG_CLAMP = 1e-12


def matvec(m, v):
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ValueError(f"matvec shape mismatch: matrix {m.shape} vs vector {v.shape}")
    return m @ v


def sigmoid(x):
    """Logistic function evaluated without overflow for large ``|x|``."""
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(under="ignore"):
        e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def tanh(x):
    return np.tanh(np.asarray(x, dtype=np.float64))


def softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0 or logits.shape[-1] == 0:
        raise ValueError("softmax of an empty vector")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    with np.errstate(under="ignore"):
        e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, label):
    """Negative log-probability of ``label``; the probability is clamped at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    label = int(label)
    if not 0 <= label < probs.shape[-1]:
        raise IndexError(f"label {label} out of range for {probs.shape[-1]} classes")
    return float(-np.log(max(probs[label], LOG_CLAMP)))
