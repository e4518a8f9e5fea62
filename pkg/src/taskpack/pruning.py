"""FLOP-aware neuron pruning, magnitude weight pruning, budgets, schedules.

Neuron pruning greedily removes the active hidden neuron with the globally
smallest |gamma| score (ties broken by (layer, index) ascending) until the
MAC count fits the target, never emptying a hidden layer.  Weight pruning
ranks free and frozen weights with a single magnitude threshold so a task's
subnetwork mixes newly-trained and reused weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleTargetError
from .masks import active_counts, mask_copy, region_mask
from .nn.arch import Architecture

PENALTY_KINDS = ("flop_aware", "l1_uniform", "none")
SCHEDULE_KINDS = ("geometric", "linear")


@dataclass(frozen=True)
class PruneConfig:
    """Budget levels and pruning-phase behavior for one method."""

    gamma: float = 1.0            # FLOP fraction budget in (0, 1]
    alpha: float = 1.0            # new-weight allocation level in (0, 1]
    schedule: str = "geometric"   # FLOP target interpolation
    baseline_penalty: str = "flop_aware"
    penalty_strength: float = 1e-4

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0,1], got {self.gamma}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0,1], got {self.alpha}")
        if self.schedule not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.baseline_penalty not in PENALTY_KINDS:
            raise ValueError(f"unknown penalty {self.baseline_penalty!r}")


@dataclass(frozen=True)
class Budget:
    target_flops: int
    target_new_nnz: int


def nnz_budget(p: int, p_used: int, alpha: float) -> int:
    """New-weight allowance for the next task: ceil((p - p_used) * alpha)."""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must be in (0,1], got {alpha}")
    if not 0 <= p_used <= p:
        raise ValueError(f"p_used={p_used} outside [0, {p}]")
    if p_used == p:
        return 0
    # round() absorbs binary float error, e.g. 810*0.1 -> 81.00000000000001
    return max(1, math.ceil(round((p - p_used) * alpha, 6)))


def neuron_costs(arch: Architecture, neuron_mask) -> np.ndarray:
    """MACs one active neuron of each hidden layer adds to the subnet.

    In-edges from the previous active layer plus out-edges to the next; this
    is exactly the marginal FLOP saving of pruning that neuron, recomputed on
    the current mask as pruning proceeds.
    """
    counts = active_counts(arch, neuron_mask)
    costs = []
    for h in range(arch.n_hidden):
        in_cost = counts[h]
        out_cost = counts[h + 2] if h + 1 < arch.n_maskable else 0
        costs.append(in_cost + out_cost)
    return np.array(costs, dtype=np.float64)


def lambda_weights(arch: Architecture, neuron_mask) -> np.ndarray:
    """Per-hidden-layer penalty weights: sqrt of per-neuron MAC load,
    normalized to sum 1, so expensive neurons feel the l1 pull hardest."""
    costs = neuron_costs(arch, neuron_mask)
    if not costs.any():
        raise ValueError("all layers have zero FLOPs; no penalty weights exist")
    roots = np.sqrt(costs)
    return roots / roots.sum()


def penalty_value(gammas, lambdas, active) -> float:
    total = 0.0
    for h, g in enumerate(gammas):
        if g.size == 0:
            continue
        mag = np.abs(g)
        if active is not None:
            mag = mag[active[h]]
        total += float(lambdas[h]) * float(mag.sum())
    return total


def penalty_grad(gammas, lambdas, active):
    """Subgradient of the weighted l1 penalty: lambda_l * sign(gamma), active only."""
    out = []
    for h, g in enumerate(gammas):
        if g.size == 0:
            out.append(np.zeros(0, dtype=g.dtype))
            continue
        grad = np.asarray(lambdas[h], dtype=g.dtype) * np.sign(g)
        if active is not None:
            grad = np.where(active[h], grad, np.asarray(0, dtype=g.dtype))
        out.append(grad)
    return out


def schedule_targets(
    epoch_index: int,
    prune_epochs: int,
    start_flops: int,
    budget: Budget,
    start_new_nnz: int,
    flop_schedule: str = "geometric",
) -> tuple[int, int]:
    """Per-epoch (FLOP, new-NNZ) targets; endpoints are hit exactly.

    FLOPs interpolate geometrically (default) because budgets span orders of
    magnitude; the NNZ target interpolates linearly.  Slack budgets (target
    above start) leave the start value untouched.
    """
    if not 0 <= epoch_index <= prune_epochs:
        raise ValueError(f"epoch_index {epoch_index} outside [0, {prune_epochs}]")
    e, P = epoch_index, prune_epochs

    def interp(start, target, geometric):
        if target >= start:
            return start
        if e == 0:
            return start
        if e == P:
            return target
        if geometric:
            return int(math.floor(start * (target / start) ** (e / P)))
        return int(math.floor(start + (target - start) * e / P))

    flops_e = interp(start_flops, budget.target_flops, flop_schedule == "geometric")
    nnz_e = interp(start_new_nnz, budget.target_new_nnz, False)
    if budget.target_flops < start_flops:
        flops_e = max(flops_e, budget.target_flops)
    if budget.target_new_nnz < start_new_nnz:
        nnz_e = max(nnz_e, budget.target_new_nnz)
    return flops_e, nnz_e


def prune_neurons_to_flops(
    arch: Architecture, gammas, current, flops_target: int
):
    """Greedy removal of smallest-|gamma| hidden neurons until MACs fit.

    Layers without scores (no batch norm) are never pruned.  A layer's last
    active neuron is skipped (connectivity guard); if the target is still
    unreachable afterwards the target is infeasible.
    """
    mask = mask_copy(current)
    counts = active_counts(arch, mask)

    def total(counts):
        return sum(
            counts[l] * counts[l + 1] for l in range(arch.n_maskable)
        )

    running = total(counts)
    if running <= flops_target:
        return mask

    candidates = []
    for h, g in enumerate(gammas):
        if g.size == 0:
            continue
        for i in np.flatnonzero(mask[h]):
            candidates.append((abs(float(g[i])), h, int(i)))
    candidates.sort()

    for _, h, i in candidates:
        if counts[h + 1] <= 1:
            continue
        mask[h][i] = False
        counts[h + 1] -= 1
        running = total(counts)
        if running <= flops_target:
            return mask

    raise InfeasibleTargetError(
        f"cannot reach {flops_target} MACs; floor is {running} with one neuron "
        "per prunable layer"
    )


def prune_weights(
    arch: Architecture,
    params,
    free_mask,
    frozen_mask,
    neuron_mask,
    new_nnz_budget: int,
    frozen_rule: str = "threshold",
):
    """Select a task's weight mask inside the active-neuron region.

    Exactly ``new_nnz_budget`` free weights survive (fewer only if the region
    holds fewer), picked by magnitude with (layer, row, col) tie-breaks.  With
    ``frozen_rule="threshold"`` frozen weights join when their magnitude
    clears the same cut; ``"all"`` reuses every frozen weight in the region.
    A zero budget degenerates to reusing the frozen region only.
    """
    if new_nnz_budget < 0:
        raise ValueError("budget must be non-negative")
    if frozen_rule not in ("threshold", "all"):
        raise ValueError(f"unknown frozen_rule {frozen_rule!r}")
    region = region_mask(arch, neuron_mask)
    free_region = [f & r for f, r in zip(free_mask, region)]
    frozen_region = [z & r for z, r in zip(frozen_mask, region)]
    n_free = sum(int(np.count_nonzero(f)) for f in free_region)

    if new_nnz_budget >= n_free:
        return [f | z for f, z in zip(free_region, frozen_region)]
    if new_nnz_budget == 0:
        return [z.copy() for z in frozen_region]

    mags = np.concatenate(
        [np.abs(params.weights[l][free_region[l]]) for l in range(len(free_region))]
    )
    tau = np.partition(mags, n_free - new_nnz_budget)[n_free - new_nnz_budget]

    selected = []
    n_taken = 0
    for l, f in enumerate(free_region):
        sel = f & (np.abs(params.weights[l]) > tau)
        selected.append(sel)
        n_taken += int(np.count_nonzero(sel))
    # fill remaining slots from ties at tau in (layer, row, col) order
    remaining = new_nnz_budget - n_taken
    for l, f in enumerate(free_region):
        if remaining <= 0:
            break
        ties = np.flatnonzero((f & (np.abs(params.weights[l]) == tau)).ravel())
        take = ties[:remaining]
        selected[l].ravel()[take] = True
        remaining -= len(take)

    out = []
    for l, sel in enumerate(selected):
        if frozen_rule == "all":
            frozen_sel = frozen_region[l]
        else:
            frozen_sel = frozen_region[l] & (np.abs(params.weights[l]) >= tau)
        out.append(sel | frozen_sel)
    return out
