import numpy as np
import pytest

from taskpack.nn.arch import Architecture, BnParams, init_params
from taskpack.nn.network import Gradients
from taskpack.nn.optim import OptSpec, OptState, TrainableSet, optimizer_step

from conftest import build_net


def _grads_like(params, fill=1.0):
    return Gradients(
        weights=[np.full_like(w, fill) for w in params.weights],
        biases=[np.full_like(b, fill) for b in params.biases],
        gamma=[], beta=[],
    )


def _all_trainable(params):
    return TrainableSet(
        weights=[np.ones_like(w, dtype=bool) for w in params.weights],
        biases=[np.ones_like(b, dtype=bool) for b in params.biases],
        bn=False,
    )


def test_sgd_moves_only_trainable_coords():
    arch, params, bank = build_net([2, 3, 2], seed=1, bn=False)
    before = params.copy()
    trainable = _all_trainable(params)
    trainable.weights[0][0, 0] = False
    grads = _grads_like(params, 2.0)
    optimizer_step(OptState(OptSpec("sgd")), params, bank, grads, trainable, lr=0.5)
    assert params.weights[0][0, 0] == before.weights[0][0, 0]
    np.testing.assert_allclose(
        params.weights[0].ravel()[1:], before.weights[0].ravel()[1:] - 1.0
    )


def test_all_zero_trainable_mask_leaves_params_bitwise_unchanged():
    arch, params, bank = build_net([2, 3, 2], seed=2, bn=False)
    before = params.copy()
    trainable = TrainableSet(
        weights=[np.zeros_like(w, dtype=bool) for w in params.weights],
        biases=[np.zeros_like(b, dtype=bool) for b in params.biases],
        bn=False,
    )
    state = OptState(OptSpec("rmsprop"))
    for _ in range(3):
        optimizer_step(state, params, bank, _grads_like(params, 3.0), trainable, 0.1)
    for l in range(2):
        np.testing.assert_array_equal(params.weights[l], before.weights[l])
        np.testing.assert_array_equal(params.biases[l], before.biases[l])


def test_adam_one_step_hand_example():
    # f(theta)=theta^2 at theta0=1, grad 2, (b1,b2)=(0,0.999), lr=0.1:
    # m=2, v=0.004, mhat=2, vhat=4 -> theta1 = 1 - 0.1*2/(sqrt(4)+1e-8) = 0.9
    arch = Architecture((1, 1), activation="identity")
    params = init_params(arch, 0, dtype=np.float64)
    params.weights[0][:] = 1.0
    grads = Gradients(weights=[np.array([[2.0]])], biases=[np.array([0.0])],
                      gamma=[], beta=[])
    trainable = _all_trainable(params)
    state = OptState(OptSpec("adam", beta1=0.0, beta2=0.999))
    optimizer_step(state, params, BnParams.fresh(arch, np.float64), grads,
                   trainable, lr=0.1)
    assert params.weights[0][0, 0] == pytest.approx(0.9, abs=1e-8)


def test_rmsprop_matches_reference_formula():
    arch = Architecture((1, 1), activation="identity")
    params = init_params(arch, 0, dtype=np.float64)
    params.weights[0][:] = 0.5
    g = 3.0
    state = OptState(OptSpec("rmsprop"))
    v = 0.0
    theta = 0.5
    for _ in range(4):
        grads = Gradients(weights=[np.array([[g]])], biases=[np.array([0.0])],
                          gamma=[], beta=[])
        optimizer_step(state, params, BnParams.fresh(arch, np.float64), grads,
                       _all_trainable(params), lr=0.01)
        v = 0.9 * v + 0.1 * g * g
        theta -= 0.01 * g / (np.sqrt(v) + 1e-8)
    assert params.weights[0][0, 0] == pytest.approx(theta, rel=1e-12)


def test_nonpositive_lr_rejected():
    arch, params, bank = build_net([2, 3, 2])
    with pytest.raises(ValueError):
        optimizer_step(OptState(OptSpec("sgd")), params, bank,
                       _grads_like(params), _all_trainable(params), lr=0.0)


def test_unknown_optimizer_kind_rejected():
    with pytest.raises(ValueError):
        OptSpec("adagrad")


def test_bn_params_update_only_when_enabled():
    arch, params, bank = build_net([2, 3, 2], seed=3, bn=True)
    grads = _grads_like(params)
    grads.gamma = [np.ones(3, dtype=np.float32)]
    grads.beta = [np.ones(3, dtype=np.float32)]
    trainable = _all_trainable(params)
    trainable.bn = False
    before = bank.gamma[0].copy()
    optimizer_step(OptState(OptSpec("sgd")), params, bank, grads, trainable, 0.1)
    np.testing.assert_array_equal(bank.gamma[0], before)
    trainable.bn = True
    optimizer_step(OptState(OptSpec("sgd")), params, bank, grads, trainable, 0.1)
    np.testing.assert_allclose(bank.gamma[0], before - 0.1)
