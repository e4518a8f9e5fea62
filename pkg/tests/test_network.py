import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskpack.errors import (
    EmptyBatchError,
    EvalCacheError,
    NonFiniteLossError,
    ShapeMismatchError,
)
from taskpack.masks import full_neuron_mask, full_weight_mask
from taskpack.nn import backward, forward, loss
from taskpack.nn.arch import Architecture, BnParams, init_params

from conftest import build_net, random_batch


def test_identity_network_passes_input_through():
    arch, params, bank = build_net([2, 2, 2], bn=False, activation="identity")
    for l in range(2):
        params.weights[l] = np.eye(2, dtype=np.float32)
        params.biases[l] = np.zeros(2, dtype=np.float32)
    out, _ = forward(arch, params, bank, full_neuron_mask(arch),
                     full_weight_mask(arch), np.array([[1.0, 2.0]]), mode="eval")
    np.testing.assert_array_equal(out, [[1.0, 2.0]])


def test_masked_neuron_output_is_invariant_to_its_weights():
    arch, params, bank = build_net([3, 4, 2], seed=5)
    nmask = full_neuron_mask(arch)
    nmask[0][1] = False
    x, _ = random_batch(arch, 6, seed=7)
    out1, _ = forward(arch, params, bank.copy(), nmask, full_weight_mask(arch), x, "eval")
    # perturb every weight into and out of hidden unit 1
    params.weights[0][1, :] += 7.5
    params.weights[1][:, 1] -= 3.25
    out2, _ = forward(arch, params, bank.copy(), nmask, full_weight_mask(arch), x, "eval")
    np.testing.assert_array_equal(out1, out2)


def test_masked_weight_output_is_invariant_to_stored_value():
    arch, params, bank = build_net([3, 4, 2], seed=5)
    wmask = full_weight_mask(arch)
    wmask[0][2, 1] = False
    x, _ = random_batch(arch, 4, seed=9)
    out1, _ = forward(arch, params, bank.copy(), None, wmask, x, "eval")
    params.weights[0][2, 1] = -1e9
    out2, _ = forward(arch, params, bank.copy(), None, wmask, x, "eval")
    np.testing.assert_array_equal(out1, out2)


def test_bn_train_mode_hand_example():
    # one hidden unit, batch pre-BN activations (0, 2): mu=1, population var=1,
    # normalized = +-1/sqrt(1 + 1e-5)
    arch = Architecture((1, 1, 1), activation="identity", has_batchnorm=(True,))
    params = init_params(arch, 0, dtype=np.float64)
    params.weights[0][:] = 1.0
    params.weights[1][:] = 1.0
    params.biases[0][:] = 0.0
    params.biases[1][:] = 0.0
    bank = BnParams.fresh(arch, dtype=np.float64)
    x = np.array([[0.0], [2.0]])
    out, cache = forward(arch, params, bank, None, None, x, "train")
    want = 1.0 / np.sqrt(1.0 + 1e-5)
    np.testing.assert_allclose(cache.xhat[0][:, 0], [-want, want], rtol=1e-12)
    np.testing.assert_allclose(out[:, 0], [-want, want], rtol=1e-12)


def test_bn_running_stats_update_and_eval_mode():
    arch, params, bank = build_net([3, 4, 2], seed=3)
    x, _ = random_batch(arch, 32, seed=1)
    before = bank.running_mean[0].copy()
    forward(arch, params, bank, None, None, x, "train")
    assert not np.array_equal(before, bank.running_mean[0])
    # eval mode must not touch running stats
    rm = bank.running_mean[0].copy()
    forward(arch, params, bank, None, None, x, "eval")
    np.testing.assert_array_equal(rm, bank.running_mean[0])


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 64), seed=st.integers(0, 10_000))
def test_bn_train_mode_normalizes_each_unit(n, seed):
    arch, params, bank = build_net([5, 6, 3], seed=11)
    x = np.random.default_rng(seed).normal(0, 3.0, size=(n, 5)).astype(np.float32)
    _, cache = forward(arch, params, bank, None, None, x, "train")
    xhat = cache.xhat[0]
    assert np.all(np.abs(xhat.mean(axis=0)) <= 1e-5)
    pre = cache.pre_bn[0]
    big = pre.var(axis=0) > 0.05  # only units with variance well above eps
    assert np.all(np.abs(xhat.var(axis=0)[big] - 1.0) <= 1e-3)


def test_forward_errors():
    arch, params, bank = build_net([3, 4, 2])
    with pytest.raises(EmptyBatchError):
        forward(arch, params, bank, None, None, np.zeros((0, 3)), "train")
    with pytest.raises(ShapeMismatchError, match="input layer"):
        forward(arch, params, bank, None, None, np.zeros((2, 5)), "train")
    bad_mask = full_neuron_mask(arch)
    bad_mask[0] = np.ones(9, dtype=bool)
    with pytest.raises(ShapeMismatchError, match="hidden layer 0"):
        forward(arch, params, bank, bad_mask, None, np.zeros((2, 3)), "train")


def test_backward_rejects_eval_cache_and_zero_grad_is_zero():
    arch, params, bank = build_net([3, 4, 2], seed=2)
    x, _ = random_batch(arch, 4)
    _, ecache = forward(arch, params, bank.copy(), None, None, x, "eval")
    with pytest.raises(EvalCacheError):
        backward(ecache, np.zeros((4, 2)))
    out, cache = forward(arch, params, bank.copy(), None, None, x, "train")
    grads = backward(cache, np.zeros_like(out))
    for g in grads.weights + grads.biases + grads.gamma + grads.beta:
        assert not np.any(g)


def test_single_linear_layer_closed_form_gradient():
    arch = Architecture((3, 1), activation="identity")
    params = init_params(arch, 4, dtype=np.float64)
    x = np.array([[0.5, -1.0, 2.0]])
    y = np.array([0.25])
    out, cache = forward(arch, params, BnParams.fresh(arch, np.float64),
                         None, None, x, "train")
    value, lgrad = loss(out, y, "squared")
    grads = backward(cache, lgrad)
    np.testing.assert_allclose(grads.weights[0], 2 * (out[0, 0] - 0.25) * x, rtol=1e-12)


# --- finite-difference oracle -------------------------------------------------

def _net_loss(arch, params, bank, masks, x, y, kind):
    out, _ = forward(arch, params, bank.copy(), masks[0], masks[1], x, "train")
    value, _ = loss(out, y, kind)
    return value


def fd_gradcheck(arch, params, bank, x, y, kind, h=1e-4, masks=(None, None)):
    """Compare analytic gradients to central finite differences (64-bit)."""
    out, cache = forward(arch, params, bank.copy(), masks[0], masks[1], x, "train")
    _, lgrad = loss(out, y, kind)
    grads = backward(cache, lgrad)

    worst = 0.0
    tensors = [(params.weights[l], grads.weights[l]) for l in range(arch.n_layers)]
    tensors += [(params.biases[l], grads.biases[l]) for l in range(arch.n_layers)]
    for hh in range(arch.n_hidden):
        if bank.gamma[hh].size:
            tensors.append((bank.gamma[hh], grads.gamma[hh]))
            tensors.append((bank.beta[hh], grads.beta[hh]))
    for tensor, analytic in tensors:
        flat = tensor.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = _net_loss(arch, params, bank, masks, x, y, kind)
            flat[i] = keep - h
            down = _net_loss(arch, params, bank, masks, x, y, kind)
            flat[i] = keep
            num = (up - down) / (2 * h)
            ana = analytic.ravel()[i]
            rel = abs(num - ana) / max(abs(num), abs(ana), 1e-3)
            worst = max(worst, rel)
    return worst


def _kink_margin(arch, params, bank, x, h):
    """Smallest |pre-activation| feeding a relu; used to dodge kink crossings."""
    if arch.activation == "identity":
        return np.inf
    _, cache = forward(arch, params, bank.copy(), None, None, x, "train")
    return min(float(np.abs(y).min()) for y in cache.post_bn)


def test_gradcheck_tiny_net_seed11():
    # step 1e-3 is fine without batch norm; BN curvature needs the smaller
    # default step used by the other checks
    arch, params, bank = build_net([3, 4, 2], seed=11, bn=False, dtype=np.float64)
    x, y = random_batch(arch, 3, seed=11, dtype=np.float64)
    assert _kink_margin(arch, params, bank, x, 1e-3) > 1e-2
    worst = fd_gradcheck(arch, params, bank, x, y, "softmax_xent", h=1e-3)
    assert worst <= 1e-5, f"max relative error {worst}"


def test_gradcheck_bn_train_mode():
    arch, params, bank = build_net([3, 4, 2], seed=11, dtype=np.float64)
    x, y = random_batch(arch, 3, seed=11, dtype=np.float64)
    assert _kink_margin(arch, params, bank, x, 1e-4) > 2e-2
    worst = fd_gradcheck(arch, params, bank, x, y, "softmax_xent")
    assert worst <= 1e-5, f"max relative error {worst}"


def test_gradcheck_masked_net():
    arch, params, bank = build_net([4, 5, 3], seed=21, dtype=np.float64)
    nmask = full_neuron_mask(arch)
    nmask[0][2] = False
    wmask = full_weight_mask(arch)
    wmask[0][~np.outer(nmask[0], np.ones(4, dtype=bool))] = False
    wmask[1][:, ~nmask[0]] = False
    wmask[0][0, 1] = False
    x, y = random_batch(arch, 4, seed=3, dtype=np.float64)
    worst = fd_gradcheck(arch, params, bank, x, y, "softmax_xent", masks=(nmask, wmask))
    assert worst <= 1e-5


def test_gradcheck_leaky_relu_regression_no_bn():
    arch, params, bank = build_net([3, 5, 1], seed=8, bn=False,
                                   activation="leaky_relu", dtype=np.float64)
    x, y = random_batch(arch, 5, seed=2, dtype=np.float64, classification=False)
    worst = fd_gradcheck(arch, params, bank, x, y, "squared")
    assert worst <= 1e-5


def test_gradcheck_per_task_sigmoid_head():
    arch = Architecture((4, 6, 1), activation="leaky_relu",
                        has_batchnorm=(False,), head_kind="per_task_linear_sigmoid")
    params = init_params(arch, 13, dtype=np.float64)
    head = (params.weights[-1].copy(), params.biases[-1].copy())
    x = np.random.default_rng(0).normal(size=(5, 4))
    y = np.random.default_rng(1).uniform(0, 1, size=5)

    out, cache = forward(arch, params, BnParams.fresh(arch, np.float64),
                         None, None, x, "train", head=head)
    _, lgrad = loss(out, y, "squared")
    grads = backward(cache, lgrad)

    h = 1e-4
    for tensor, analytic in [(head[0], grads.head_w), (head[1], grads.head_b),
                             (params.weights[0], grads.weights[0])]:
        flat = tensor.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            o, _ = forward(arch, params, BnParams.fresh(arch, np.float64),
                           None, None, x, "train", head=head)
            up, _ = loss(o, y, "squared")
            flat[i] = keep - h
            o, _ = forward(arch, params, BnParams.fresh(arch, np.float64),
                           None, None, x, "train", head=head)
            down, _ = loss(o, y, "squared")
            flat[i] = keep
            num = (up - down) / (2 * h)
            ana = analytic.ravel()[i]
            assert abs(num - ana) / max(abs(num), abs(ana), 1e-3) <= 1e-5


# --- losses -------------------------------------------------------------------

def test_loss_squared_examples():
    value, _ = loss(np.array([[1.0], [3.0]]), np.array([0.0, 1.0]), "squared")
    assert value == pytest.approx(2.5)
    value, grad = loss(np.array([[2.0]]), np.array([2.0]), "squared")
    assert value == 0.0 and not grad.any()


def test_loss_uniform_softmax_is_log10():
    logits = np.zeros((4, 10))
    value, _ = loss(logits, np.array([1, 2, 3, 4]), "softmax_xent")
    assert value == pytest.approx(np.log(10.0), rel=1e-9)


def test_loss_rejects_nonfinite_and_unknown_kind():
    with pytest.raises(NonFiniteLossError):
        loss(np.array([[np.nan, 0.0]]), np.array([0]), "softmax_xent")
    with pytest.raises(ValueError):
        loss(np.zeros((1, 2)), np.array([0]), "huber")


@settings(max_examples=30, deadline=None)
@given(shift=st.floats(-50, 50), seed=st.integers(0, 1000))
def test_softmax_xent_is_shift_invariant(shift, seed):
    gen = np.random.default_rng(seed)
    logits = gen.normal(size=(5, 7))
    targets = gen.integers(0, 7, size=5)
    v1, g1 = loss(logits, targets, "softmax_xent")
    v2, g2 = loss(logits + shift, targets, "softmax_xent")
    assert v1 == pytest.approx(v2, abs=1e-9)
    np.testing.assert_allclose(g1, g2, atol=1e-12)
