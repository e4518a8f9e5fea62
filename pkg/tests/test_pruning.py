import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from taskpack.errors import InfeasibleTargetError
from taskpack.flops import total_flops
from taskpack.masks import (
    empty_weight_mask,
    full_neuron_mask,
    full_weight_mask,
    mask_complement,
    mask_diff,
    popcount,
    region_mask,
)
from taskpack.nn.arch import Architecture, init_params
from taskpack.pruning import (
    Budget,
    PruneConfig,
    lambda_weights,
    nnz_budget,
    penalty_grad,
    penalty_value,
    prune_neurons_to_flops,
    prune_weights,
    schedule_targets,
)


# --- allocation budget ----------------------------------------------------

def test_nnz_budget_examples():
    assert nnz_budget(1_861_632, 0, 0.05) == 93_082
    assert nnz_budget(1000, 190, 0.1) == 81
    assert nnz_budget(100, 100, 0.1) == 0


def test_nnz_budget_validation():
    for alpha in (0.0, -0.5, 1.5):
        with pytest.raises(ValueError):
            nnz_budget(100, 0, alpha)
    with pytest.raises(ValueError):
        nnz_budget(100, 101, 0.5)


@settings(max_examples=50, deadline=None)
@given(p=st.integers(1, 10**7), used=st.integers(0, 10**7),
       alpha=st.floats(0.001, 1.0))
def test_nnz_budget_zero_only_at_exhaustion(p, used, alpha):
    used = min(used, p)
    b = nnz_budget(p, used, alpha)
    assert (b == 0) == (used == p)
    assert b <= p - used or used == p


# --- penalty weights --------------------------------------------------------

def test_lambda_weights_normalized_sqrt():
    # per-neuron loads (400, 100): hidden1 sees 380 in + 20 out, hidden2 80 + 20
    arch = Architecture((380, 80, 20, 20))
    lam = lambda_weights(arch, None)
    np.testing.assert_allclose(lam, [2 / 3, 1 / 3], rtol=1e-12)
    assert lam.sum() == pytest.approx(1.0, abs=1e-9)


def test_lambda_weights_single_layer_and_equal_layers():
    np.testing.assert_allclose(lambda_weights(Architecture((5, 3, 2)), None), [1.0])
    lam = lambda_weights(Architecture((4, 4, 4, 4)), None)
    np.testing.assert_allclose(lam, [1 / 2] * 2, rtol=1e-12)


def test_lambda_weights_tracks_the_current_mask():
    arch = Architecture((100, 10, 50, 5), has_batchnorm=(True, True))
    full = full_neuron_mask(arch)
    lam_full = lambda_weights(arch, full)
    pruned = full_neuron_mask(arch)
    pruned[1][25:] = False  # halve hidden-2: hidden-1 out-cost drops
    lam_pruned = lambda_weights(arch, pruned)
    assert lam_pruned[0] < lam_full[0]
    assert lam_pruned[1] > lam_full[1]
    assert lam_pruned.sum() == pytest.approx(1.0, abs=1e-12)


def test_penalty_grad_sign_rule_and_value():
    gammas = [np.array([-2.0, 0.0, 3.0])]
    grads = penalty_grad(gammas, [0.5], None)
    np.testing.assert_allclose(grads[0], [-0.5, 0.0, 0.5])
    active = [np.array([True, True, False])]
    grads = penalty_grad(gammas, [0.5], active)
    np.testing.assert_allclose(grads[0], [-0.5, 0.0, 0.0])
    value = penalty_value([np.array([1.0, -1.0]), np.array([2.0])], [0.6, 0.4], None)
    assert value == pytest.approx(2.0)


# --- schedules ---------------------------------------------------------------

def test_schedule_endpoints_and_geometric_midpoint():
    budget = Budget(target_flops=200_000, target_new_nnz=50)
    assert schedule_targets(0, 2, 1_000_000, budget, 500) == (1_000_000, 500)
    assert schedule_targets(2, 2, 1_000_000, budget, 500) == (200_000, 50)
    flops, nnz = schedule_targets(1, 2, 1_000_000, budget, 500)
    assert flops == 447_213  # floor(1e6 * sqrt(0.2))
    assert nnz == 275  # linear midpoint


def test_schedule_slack_budget_is_a_noop():
    budget = Budget(target_flops=10**7, target_new_nnz=10**6)
    for e in range(3):
        assert schedule_targets(e, 2, 1000, budget, 100) == (1000, 100)


@settings(max_examples=40, deadline=None)
@given(P=st.integers(1, 10), start=st.integers(100, 10**6),
       frac=st.floats(0.01, 0.99))
def test_schedule_is_monotone_and_clamped(P, start, frac):
    target = max(1, int(start * frac))
    budget = Budget(target_flops=target, target_new_nnz=target)
    prev = (start, start)
    for e in range(P + 1):
        cur = schedule_targets(e, P, start, budget, start)
        assert target <= cur[0] <= prev[0]
        assert target <= cur[1] <= prev[1]
        prev = cur
    assert cur == (target, target)


# --- neuron pruning ----------------------------------------------------------

def test_prune_neurons_toy_example():
    arch = Architecture((2, 3, 1), has_batchnorm=(True,))
    gammas = [np.array([0.5, 0.1, 0.9])]
    full = full_neuron_mask(arch)
    assert total_flops(arch, full).total == 9
    pruned = prune_neurons_to_flops(arch, gammas, full, 6)
    np.testing.assert_array_equal(pruned[0], [True, False, True])
    assert total_flops(arch, pruned).total == 6


def test_prune_neurons_target_at_max_is_identity():
    arch = Architecture((2, 3, 1), has_batchnorm=(True,))
    full = full_neuron_mask(arch)
    pruned = prune_neurons_to_flops(arch, [np.array([0.5, 0.1, 0.9])], full, 9)
    np.testing.assert_array_equal(pruned[0], full[0])


def test_prune_neurons_tie_break_is_lexicographic():
    arch = Architecture((3, 4, 4, 2), has_batchnorm=(True, True))
    gammas = [np.full(4, 0.5), np.full(4, 0.5)]
    full = full_neuron_mask(arch)
    start = total_flops(arch, full).total  # 3*4 + 4*4 + 4*2 = 36
    pruned = prune_neurons_to_flops(arch, gammas, full, start - 10)
    # equal scores: (layer 0, idx 0) goes first (-9 MACs), then (layer 0, idx 1)
    np.testing.assert_array_equal(pruned[0], [False, False, True, True])
    np.testing.assert_array_equal(pruned[1], [True, True, True, True])


def test_prune_neurons_never_empties_a_layer_and_raises_when_infeasible():
    arch = Architecture((2, 3, 1), has_batchnorm=(True,))
    gammas = [np.array([0.5, 0.1, 0.9])]
    full = full_neuron_mask(arch)
    pruned = prune_neurons_to_flops(arch, gammas, full, 3)  # floor is 2*1+1*1=3
    assert pruned[0].sum() == 1 and pruned[0][2]
    with pytest.raises(InfeasibleTargetError):
        prune_neurons_to_flops(arch, gammas, full, 2)


def test_prune_neurons_greedy_minimality():
    arch = Architecture((4, 6, 3), has_batchnorm=(True,))
    gen = np.random.default_rng(7)
    gammas = [gen.uniform(0.01, 1.0, size=6)]
    full = full_neuron_mask(arch)
    target = 21  # full is 42; per-neuron cost is 7
    pruned = prune_neurons_to_flops(arch, gammas, full, target)
    assert total_flops(arch, pruned).total <= target
    removed = np.flatnonzero(~pruned[0])
    # re-adding the last-removed (largest-score removed) neuron exceeds target
    last = removed[np.argmax(gammas[0][removed])]
    readd = [pruned[0].copy()]
    readd[0][last] = True
    assert total_flops(arch, readd).total > target


def test_prune_neurons_exhaustive_oracle_single_hidden_layer():
    # uniform per-neuron cost: greedy removes the smallest-score set possible
    arch = Architecture((3, 5, 2), has_batchnorm=(True,))
    gen = np.random.default_rng(3)
    for trial in range(20):
        gammas = [gen.uniform(0, 1, size=5)]
        target = int(gen.integers(5, 26))
        full = full_neuron_mask(arch)
        try:
            greedy = prune_neurons_to_flops(arch, gammas, full, target)
        except InfeasibleTargetError:
            assert target < 5  # one neuron costs 3+2
            continue
        greedy_removed = float(np.abs(gammas[0][~greedy[0]]).sum())
        best = None
        for keep in itertools.product([False, True], repeat=5):
            mask = [np.array(keep)]
            if not mask[0].any():
                continue
            if total_flops(arch, mask).total > target:
                continue
            removed = float(np.abs(gammas[0][~mask[0]]).sum())
            best = removed if best is None else min(best, removed)
        assert best is not None
        assert greedy_removed <= best + 1e-12


# --- weight pruning ----------------------------------------------------------

def _line_setup():
    # single maskable layer, 1x5: free (0.9, 0.5, 0.1), frozen (0.7, 0.05)
    arch = Architecture((5, 1), activation="identity")
    params = init_params(arch, 0)
    params.weights[0][:] = np.array([[0.9, 0.5, 0.1, 0.7, 0.05]], dtype=np.float32)
    frozen = [np.array([[False, False, False, True, True]])]
    free = mask_complement(frozen)
    return arch, params, free, frozen


def test_prune_weights_threshold_example():
    arch, params, free, frozen = _line_setup()
    m = prune_weights(arch, params, free, frozen, None, 2)
    np.testing.assert_array_equal(m[0], [[True, True, False, True, False]])


def test_prune_weights_budget_covers_all_free():
    arch, params, free, frozen = _line_setup()
    m = prune_weights(arch, params, free, frozen, None, 3)
    np.testing.assert_array_equal(m[0], [[True, True, True, True, True]])
    m = prune_weights(arch, params, free, frozen, None, 99)
    np.testing.assert_array_equal(m[0], [[True, True, True, True, True]])


def test_prune_weights_zero_budget_reuses_frozen_only():
    arch, params, free, frozen = _line_setup()
    m = prune_weights(arch, params, free, frozen, None, 0)
    np.testing.assert_array_equal(m[0], frozen[0])


def test_prune_weights_packnet_rule_reuses_all_frozen():
    arch, params, free, frozen = _line_setup()
    m = prune_weights(arch, params, free, frozen, None, 1, frozen_rule="all")
    np.testing.assert_array_equal(m[0], [[True, False, False, True, True]])


def test_prune_weights_tie_break_row_major():
    arch = Architecture((4, 1), activation="identity")
    params = init_params(arch, 0)
    params.weights[0][:] = np.array([[0.5, 0.5, 0.5, 0.5]], dtype=np.float32)
    free = [np.ones((1, 4), dtype=bool)]
    frozen = [np.zeros((1, 4), dtype=bool)]
    m = prune_weights(arch, params, free, frozen, None, 2)
    np.testing.assert_array_equal(m[0], [[True, True, False, False]])


def test_prune_weights_respects_neuron_region_and_budget_cap():
    arch = Architecture((4, 6, 3), has_batchnorm=(True,))
    params = init_params(arch, 5)
    nmask = full_neuron_mask(arch)
    nmask[0][:3] = False
    frozen = empty_weight_mask(arch)
    frozen[0][4, :] = True
    free = mask_complement(frozen)
    budget = 7
    m = prune_weights(arch, params, free, frozen, nmask, budget)
    region = region_mask(arch, nmask)
    for l in range(2):
        assert not np.any(m[l] & ~region[l])
    new = popcount(mask_diff(m, frozen))
    assert new == budget


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), budget=st.integers(0, 40),
       frozen_frac=st.floats(0, 0.8))
def test_prune_weights_new_count_never_exceeds_budget(seed, budget, frozen_frac):
    arch = Architecture((4, 6, 3), has_batchnorm=(True,))
    params = init_params(arch, seed)
    gen = np.random.default_rng(seed)
    frozen = [gen.random(arch.weight_shape(l)) < frozen_frac for l in range(2)]
    free = mask_complement(frozen)
    nmask = [gen.random(6) < 0.7]
    if not nmask[0].any():
        nmask[0][0] = True
    m = prune_weights(arch, params, free, frozen, nmask, budget)
    assert popcount(mask_diff(m, frozen)) <= budget
    region = region_mask(arch, nmask)
    for l in range(2):
        assert not np.any(m[l] & ~region[l])


def test_prune_config_validation():
    with pytest.raises(ValueError):
        PruneConfig(gamma=0.0)
    with pytest.raises(ValueError):
        PruneConfig(alpha=1.5)
    with pytest.raises(ValueError):
        PruneConfig(schedule="cubic")
    with pytest.raises(ValueError):
        PruneConfig(baseline_penalty="l2")
