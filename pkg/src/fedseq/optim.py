"""Adam with bias correction, operating on flat parameter vectors."""

from dataclasses import dataclass

import numpy as np


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(param_len, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8):
    if param_len < 1:
        raise ValueError(f"param_len must be >= 1, got {param_len}")
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    return AdamState(np.zeros(param_len), np.zeros(param_len), 0, lr, beta1, beta2, eps)


def adam_step(params, grads, state):
    """One Adam update. Returns ``(new_params, new_state)``; inputs are not modified."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValueError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}"
        )
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grads * grads)
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)
