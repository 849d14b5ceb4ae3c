import numpy as np
import pytest

from library.optimizer_util import AdamState, OptimizerConfig, adam_step


def test_first_step_is_signed_learning_rate():
    params = np.array([0.5, -1.0, 2.0])
    grads = np.array([0.3, -2.0, 1e-3])
    new_params, state = adam_step(params, grads, AdamState.zeros(params.shape), OptimizerConfig())
    # m_hat = g and v_hat = g^2 after bias correction
    expected = params - 0.01 * grads / (np.abs(grads) + 1e-8)
    assert np.allclose(new_params, expected, atol=1e-15)
    assert state.t == 1


def test_moments():
    grads = np.array([1.0, -2.0])
    cfg = OptimizerConfig()
    _, state = adam_step(np.zeros(2), grads, AdamState.zeros((2,)), cfg)
    _, state = adam_step(np.zeros(2), grads, state, cfg)
    assert state.t == 2
    assert np.allclose(state.m, (1 - 0.9**2) * grads)
    assert np.allclose(state.v, (1 - 0.999**2) * grads**2)


def test_zero_learning_rate():
    params = np.random.default_rng(0).normal(size=(2, 6, 3))
    grads = np.random.default_rng(1).normal(size=(2, 6, 3))
    new_params, _ = adam_step(params, grads, AdamState.zeros(params.shape), OptimizerConfig(eta=0.0))
    assert np.array_equal(new_params, params)


def test_zero_gradient():
    params = np.array([1.0, 2.0])
    new_params, state = adam_step(params, np.zeros(2), AdamState.zeros((2,)), OptimizerConfig())
    assert np.array_equal(new_params, params)
    assert state.t == 1


def test_inputs_not_modified():
    params = np.array([1.0, 2.0])
    grads = np.array([0.1, 0.2])
    state = AdamState.zeros((2,))
    adam_step(params, grads, state, OptimizerConfig())
    assert np.array_equal(params, [1.0, 2.0])
    assert np.array_equal(state.m, [0.0, 0.0]) and state.t == 0


def test_non_finite_gradient():
    with pytest.raises(FloatingPointError, match="indices"):
        adam_step(np.zeros(3), np.array([0.0, np.nan, np.inf]), AdamState.zeros((3,)), OptimizerConfig())


def test_shape_mismatch():
    with pytest.raises(AssertionError):
        adam_step(np.zeros(3), np.zeros(2), AdamState.zeros((3,)), OptimizerConfig())


def test_invalid_config():
    with pytest.raises(AssertionError):
        OptimizerConfig(eta=-0.1)
    with pytest.raises(AssertionError):
        OptimizerConfig(beta1=1.0)


def test_converges_on_quadratic():
    target = np.array([0.3, -0.7, 1.2])
    params = np.zeros(3)
    state = AdamState.zeros((3,))
    cfg = OptimizerConfig(eta=0.05)
    for _ in range(2000):
        params, state = adam_step(params, 2 * (params - target), state, cfg)
    assert np.allclose(params, target, atol=0.05)
