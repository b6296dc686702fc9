import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedseq.optim import adam_init, adam_step


def scalar_adam(theta, grads, lr=0.01, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return theta


def test_first_step_moves_by_lr_times_sign():
    state = adam_init(3)
    new, state = adam_step(np.zeros(3), np.array([2.0, -0.5, 1e-3]), state)
    np.testing.assert_allclose(new, [-0.01, 0.01, -0.01], rtol=1e-4)
    assert state.t == 1


def test_three_step_recursion_matches_scalar_oracle():
    grads = [0.3, -1.2, 0.05]
    state = adam_init(1)
    theta = np.array([0.7])
    for g in grads:
        theta, state = adam_step(theta, np.array([g]), state)
    assert theta[0] == pytest.approx(scalar_adam(0.7, grads), abs=1e-12)


def test_inputs_not_modified():
    params, grads = np.ones(4), np.full(4, 0.5)
    state = adam_init(4)
    m_before = state.m.copy()
    new, new_state = adam_step(params, grads, state)
    assert (params == 1).all() and (grads == 0.5).all()
    np.testing.assert_array_equal(state.m, m_before)
    assert state.t == 0 and new is not params and new_state.m is not state.m


def test_init_errors():
    with pytest.raises(ValueError):
        adam_init(0)
    with pytest.raises(ValueError):
        adam_init(3, lr=0.0)
    with pytest.raises(ValueError, match="shape mismatch"):
        adam_step(np.zeros(3), np.zeros(2), adam_init(3))


@settings(max_examples=100)
@given(st.floats(1e-3, 1e3), st.lists(st.floats(-10, 10).filter(lambda g: abs(g) > 1e-3), min_size=1, max_size=5))
def test_scale_invariance_of_direction(scale, grads):
    """Positive gradient rescaling leaves the update almost unchanged (eps aside)."""
    g = np.array(grads)
    a, _ = adam_step(np.zeros_like(g), g, adam_init(g.size))
    b, _ = adam_step(np.zeros_like(g), scale * g, adam_init(g.size))
    np.testing.assert_array_equal(np.sign(a), -np.sign(g))
    np.testing.assert_allclose(a, b, rtol=1e-4)


def test_constant_gradient_three_steps():
    state = adam_init(1)
    assert state.lr == 0.01
    theta = np.zeros(1)
    for _ in range(3):
        theta, state = adam_step(theta, np.ones(1), state)
    assert theta[0] == pytest.approx(scalar_adam(0.0, [1.0, 1.0, 1.0]), abs=1e-12)
