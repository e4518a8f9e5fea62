"""Per-task training orchestration and task-routed inference.

Each task runs three phases on the shared supernet:

  pre-train   all free weights, full network visible
  prune       train under the task loss (plus the neuron-score penalty),
              then tighten FLOP/new-weight targets after every epoch
  fine-tune   only the surviving new weights and the task's BN bank

then commits: its masks and BN bank are stored and its weights join the
frozen set.  Frozen coordinates are never written by any phase, which is the
whole zero-forgetting argument; the tests check it bit-exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DataError, UnknownTaskError
from .flops import FlopReport, max_flops, total_flops
from .masks import (
    SupernetState,
    commit_task,
    full_neuron_mask,
    full_weight_mask,
    mask_diff,
    mask_intersect,
    new_supernet,
    popcount,
)
from .nn.arch import Architecture, BnParams
from .nn.losses import loss
from .nn.network import backward, forward
from .nn.optim import OptSpec, OptState, TrainableSet, optimizer_step
from .pruning import (
    Budget,
    PruneConfig,
    lambda_weights,
    nnz_budget,
    penalty_grad,
    prune_neurons_to_flops,
    prune_weights,
    schedule_targets,
)
from .rng import stream, task_key

METHODS = ("espn", "packnet", "individual")


@dataclass(frozen=True)
class TrainConfig:
    method: str = "espn"
    prune: PruneConfig = field(default_factory=PruneConfig)
    epochs: tuple = (3, 4, 3)  # (pre, prune, fine)
    optimizer: OptSpec = field(default_factory=OptSpec)
    lr: float = 1e-3
    lr_schedule: str = "constant"  # constant | cosine (applies to fine-tune)
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if len(self.epochs) != 3:
            raise ValueError("epochs must be (pre, prune, fine)")
        if self.method in ("espn", "packnet") and any(e < 1 for e in self.epochs):
            raise ValueError(f"{self.method} needs at least one epoch per phase")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_json(self) -> dict:
        return {
            "method": self.method,
            "gamma": self.prune.gamma,
            "alpha": self.prune.alpha,
            "schedule": self.prune.schedule,
            "baseline_penalty": self.prune.baseline_penalty,
            "penalty_strength": self.prune.penalty_strength,
            "epochs": list(self.epochs),
            "optimizer": self.optimizer.kind,
            "adam_betas": [self.optimizer.beta1, self.optimizer.beta2],
            "lr": self.lr,
            "lr_schedule": self.lr_schedule,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TrainConfig":
        prune = PruneConfig(
            gamma=obj.get("gamma", 1.0),
            alpha=obj.get("alpha", 1.0),
            schedule=obj.get("schedule", "geometric"),
            baseline_penalty=obj.get("baseline_penalty", "flop_aware"),
            penalty_strength=obj.get("penalty_strength", 1e-4),
        )
        betas = obj.get("adam_betas", [0.9, 0.999])
        return cls(
            method=obj.get("method", "espn"),
            prune=prune,
            epochs=tuple(obj.get("epochs", (3, 4, 3))),
            optimizer=OptSpec(obj.get("optimizer", "rmsprop"), beta1=betas[0], beta2=betas[1]),
            lr=obj.get("lr", 1e-3),
            lr_schedule=obj.get("lr_schedule", "constant"),
            batch_size=obj.get("batch_size", 256),
            seed=obj.get("seed", 0),
        )


@dataclass
class TaskResult:
    task_id: object
    method: str
    new_nnz: int
    shared_nnz: int
    budget_new_nnz: int
    flops: FlopReport
    train_metric: float  # accuracy (classification) or risk (regression)
    test_metric: float
    trace: list
    wall_seconds: float


def _loss_kind(arch: Architecture) -> str:
    return "squared" if arch.head_kind == "per_task_linear_sigmoid" else "softmax_xent"


def _init_head(arch: Architecture, seed: int, tid) -> tuple:
    gen = stream(seed, task_key(tid), "head-init")
    d_out, d_in = arch.weight_shape(arch.n_layers - 1)
    bound = np.sqrt(6.0 / (d_in + d_out))
    w = gen.uniform(-bound, bound, size=(d_out, d_in)).astype(np.float32)
    return w, np.zeros(d_out, dtype=np.float32)


def _train_epoch(
    state, bank, head, data, cfg, kind, neuron_mask, weight_mask,
    trainable, opt, lr, epoch_stream, penalty, penalty_active,
):
    n = data.n_train
    order = epoch_stream.permutation(n)
    total, batches = 0.0, 0
    for lo in range(0, n, cfg.batch_size):
        idx = order[lo : lo + cfg.batch_size]
        out, cache = forward(
            state.arch, state.params, bank, neuron_mask, weight_mask,
            data.train_x[idx], "train", head=head,
        )
        value, lgrad = loss(out, data.train_y[idx], kind)
        grads = backward(cache, lgrad)
        if penalty is not None:
            lam, strength = penalty
            pgrads = penalty_grad(bank.gamma, lam, penalty_active)
            for h in range(len(pgrads)):
                if grads.gamma[h].size:
                    grads.gamma[h] += strength * pgrads[h]
        optimizer_step(opt, state.params, bank, grads, trainable, lr, head=head)
        total += value
        batches += 1
    return total / max(batches, 1)


def evaluate(state: SupernetState, task_id, x, y, batch: int = 8192) -> float:
    """Eval-mode metric: classification accuracy or regression mean risk."""
    outputs = infer(state, task_id, x, batch=batch)
    if state.arch.head_kind == "per_task_linear_sigmoid":
        diff = outputs.reshape(len(y)) - np.asarray(y, dtype=outputs.dtype)
        return float(np.mean(diff * diff))
    return float(np.mean(outputs.argmax(axis=1) == np.asarray(y)))


def infer(state: SupernetState, task_id, inputs, batch: int = 8192) -> np.ndarray:
    """Eval-mode forward through one committed task's subnetwork."""
    if task_id not in state.task_masks:
        raise UnknownTaskError(f"task {task_id!r} was never committed")
    tm = state.task_masks[task_id]
    bank = state.bn_banks[task_id]
    head = state.heads.get(task_id)
    outs = []
    for lo in range(0, len(inputs), batch):
        out, _ = forward(
            state.arch, state.params, bank, tm.neurons, tm.weights,
            inputs[lo : lo + batch], "eval", head=head,
        )
        outs.append(out)
    return np.concatenate(outs, axis=0)


def _learn(state: SupernetState, data, cfg: TrainConfig):
    """Shared phase driver for espn and packnet on an existing supernet."""
    t0 = time.perf_counter()
    arch = state.arch
    if data.n_train == 0:
        raise DataError(f"task {data.task_id!r} has no training samples")
    if data.task_id in state.task_masks:
        raise DataError(f"task {data.task_id!r} already committed")

    method = cfg.method
    train_bn = method != "packnet"
    neuron_pruning = method != "packnet"
    frozen_rule = "all" if method == "packnet" else "threshold"
    kind = _loss_kind(arch)
    tkey = task_key(data.task_id)

    p = arch.total_weights
    budget_nnz = nnz_budget(p, state.used_weights, cfg.prune.alpha)
    full_total = max_flops(arch)
    target_flops = int(np.floor(cfg.prune.gamma * full_total + 1e-9))
    budget = Budget(target_flops=target_flops, target_new_nnz=budget_nnz)

    bank = BnParams.fresh(arch, dtype=state.params.dtype)
    head = None
    if arch.head_kind == "per_task_linear_sigmoid":
        head = _init_head(arch, cfg.seed, data.task_id)

    free = [m.copy() for m in state.free_mask]
    frozen = [m.copy() for m in state.m_all]
    neuron_cur = full_neuron_mask(arch)
    weight_cur = full_weight_mask(arch)
    bias_masks = state.trainable_bias_masks()

    # the l1 neuron-score penalty exists to hit a FLOP target; with a slack
    # budget (gamma covering the full net) no pruning is intended at all
    penalize = (
        train_bn
        and neuron_pruning
        and cfg.prune.baseline_penalty != "none"
        and target_flops < full_total
    )

    def make_trainable(weight_mask):
        weights = [w & f for w, f in zip(weight_mask, free)]
        if arch.head_kind == "per_task_linear_sigmoid":
            # trunk list stays aligned with ParamStore; the head trains separately
            weights.append(np.zeros(arch.weight_shape(arch.n_layers - 1), dtype=bool))
        return TrainableSet(
            weights=weights, biases=bias_masks, bn=train_bn, head=head is not None
        )

    trace = []
    pre_epochs, prune_epochs, fine_epochs = cfg.epochs
    shuffle = stream(cfg.seed, tkey, "shuffle")

    # --- pre-train: full network visible, all free weights trainable
    opt = OptState(cfg.optimizer)
    trainable = make_trainable(full_weight_mask(arch))
    for e in range(pre_epochs):
        mean = _train_epoch(
            state, bank, head, data, cfg, kind, None, None,
            trainable, opt, cfg.lr, shuffle, None, None,
        )
        trace.append({"phase": "pre", "epoch": e, "loss": mean})

    # --- gradual pruning
    start_flops = total_flops(arch, neuron_cur).total
    start_nnz = popcount(mask_intersect(weight_cur, free))
    opt = OptState(cfg.optimizer)
    for e in range(1, prune_epochs + 1):
        penalty = None
        if penalize:
            lam = lambda_weights(arch, neuron_cur)
            if cfg.prune.baseline_penalty == "l1_uniform":
                lam = np.full_like(lam, 1.0 / len(lam))
            penalty = (lam, cfg.prune.penalty_strength)
        trainable = make_trainable(weight_cur)
        mean = _train_epoch(
            state, bank, head, data, cfg, kind, neuron_cur, weight_cur,
            trainable, opt, cfg.lr, shuffle, penalty, neuron_cur,
        )
        flops_e, nnz_e = schedule_targets(
            e, prune_epochs, start_flops, budget, start_nnz, cfg.prune.schedule
        )
        if neuron_pruning:
            neuron_cur = prune_neurons_to_flops(arch, bank.gamma, neuron_cur, flops_e)
        weight_cur = prune_weights(
            arch, state.params, free, frozen, neuron_cur, nnz_e, frozen_rule
        )
        trace.append(
            {
                "phase": "prune", "epoch": e - 1, "loss": mean,
                "flops": total_flops(arch, neuron_cur).total,
                "new_nnz": popcount(mask_intersect(weight_cur, free)),
            }
        )

    # --- fine-tune on the final subnetwork
    opt = OptState(cfg.optimizer)
    trainable = make_trainable(weight_cur)
    for e in range(fine_epochs):
        lr = cfg.lr
        if cfg.lr_schedule == "cosine":
            lr = cfg.lr * 0.5 * (1 + np.cos(np.pi * e / fine_epochs))
        mean = _train_epoch(
            state, bank, head, data, cfg, kind, neuron_cur, weight_cur,
            trainable, opt, lr, shuffle, None, None,
        )
        trace.append({"phase": "fine", "epoch": e, "loss": mean})

    # --- commit and report
    report = total_flops(arch, neuron_cur)
    new_nnz = popcount(mask_diff(weight_cur, frozen))
    shared_nnz = popcount(mask_intersect(weight_cur, frozen))
    if neuron_pruning:
        assert report.total <= cfg.prune.gamma * full_total + 1e-6, "FLOP budget violated"
    assert new_nnz <= budget_nnz, "new-weight budget violated"
    commit_task(
        state, data.task_id, neuron_cur, weight_cur, bank, head=head,
        meta={**data.meta, "method": method, "gamma": cfg.prune.gamma,
              "alpha": cfg.prune.alpha, "n_train": data.n_train},
    )
    result = TaskResult(
        task_id=data.task_id,
        method=method,
        new_nnz=new_nnz,
        shared_nnz=shared_nnz,
        budget_new_nnz=budget_nnz,
        flops=report,
        train_metric=evaluate(state, data.task_id, data.train_x, data.train_y),
        test_metric=evaluate(state, data.task_id, data.test_x, data.test_y),
        trace=trace,
        wall_seconds=time.perf_counter() - t0,
    )
    return state, result


def learn_task_espn(state: SupernetState, data, cfg: TrainConfig):
    """Add one task with joint neuron & weight pruning and a trainable BN bank."""
    if cfg.method != "espn":
        cfg = replace(cfg, method="espn")
    return _learn(state, data, cfg)


def learn_task_packnet(state: SupernetState, data, cfg: TrainConfig):
    """Baseline: weight pruning only, BN affine fixed at (1, 0), frozen fully reused."""
    if cfg.method != "packnet":
        cfg = replace(cfg, method="packnet")
    return _learn(state, data, cfg)


def learn_individual(arch: Architecture, data, cfg: TrainConfig, gamma: float = None):
    """Baseline: a fresh supernet per task, full weight allocation, FLOP budget kept."""
    prune = cfg.prune if gamma is None else replace(cfg.prune, gamma=gamma)
    cfg = replace(cfg, method="individual", prune=replace(prune, alpha=1.0))
    seed = stream(cfg.seed, task_key(data.task_id), "individual-init").integers(2**63)
    state = new_supernet(arch, int(seed))
    state, result = _learn(state, data, cfg)
    return state, result
