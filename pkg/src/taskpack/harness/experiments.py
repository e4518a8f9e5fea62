"""Experiment drivers: sequential CL runs, transfer probes, ordering studies,
pruning comparisons, allocation sweeps.

Every driver is a deterministic function of its config and seeds, emits
MetricRow lines as it goes, and the CL drivers audit zero forgetting by
re-checking every earlier task's probe logits (bit-exact) after each commit.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from ..data.idx import load_mnist_dir
from ..data.planted import make_planted
from ..data.synth import generate_digit_corpus
from ..data.tasks import (
    RawImages,
    TaskDataset,
    permute_task,
    rotate_task,
    sample_size_schedule,
    subsample,
)
from ..engine import (
    TrainConfig,
    evaluate,
    infer,
    learn_individual,
    learn_task_espn,
    learn_task_packnet,
)
from ..masks import new_supernet
from ..nn.arch import Architecture, fc1024
from ..rng import stream
from .checkpoint import save_checkpoint
from .metrics import MetricRow, MetricsWriter
from .svg import line_plot

FAMILIES = ("rotated", "permuted", "planted")

# desk-scale defaults; --full lifts the caps to the real corpus sizes
DESK_TRAIN_CAP = 8000
DESK_TEST_CAP = 2000
DESK_TASKS = 12
DESK_TRIALS = 3
FULL_TASKS = 36
FULL_TRIALS = 5
SYNTH_SEED = 20240501
PROBE_BATCH = 64


@dataclass
class RunSpec:
    """Common knobs shared by the experiment drivers."""

    family: str = "rotated"
    n_tasks: int = DESK_TASKS
    train: TrainConfig = field(default_factory=TrainConfig)
    seeds: tuple = (1, 2, 3)
    out_dir: str = "runs"
    mnist_dir: str | None = None
    train_cap: int | None = DESK_TRAIN_CAP
    test_cap: int | None = DESK_TEST_CAP
    task_order: str = "random"  # rotated-family task ordering

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")


def load_corpus(spec: RunSpec) -> RawImages:
    """Resolve the image corpus: an IDX directory, or the synthetic one."""
    if spec.mnist_dir:
        tr_x, tr_y, te_x, te_y = load_mnist_dir(spec.mnist_dir)
    else:
        tr_x, tr_y, te_x, te_y = generate_digit_corpus(
            spec.train_cap or 60000, spec.test_cap or 10000, SYNTH_SEED
        )
    if spec.train_cap and len(tr_x) > spec.train_cap:
        tr_x, tr_y = tr_x[: spec.train_cap], tr_y[: spec.train_cap]
    if spec.test_cap and len(te_x) > spec.test_cap:
        te_x, te_y = te_x[: spec.test_cap], te_y[: spec.test_cap]
    return RawImages(tr_x, tr_y, te_x, te_y)


def build_tasks(raw: RawImages, family: str, n_tasks: int, seed: int,
                order: str = "random", angle_step: float = 10.0):
    """Materialize one trial's task sequence for an image family."""
    if family == "rotated":
        angles = [angle_step * (i + 1) % 360 for i in range(n_tasks)]
        if order == "random":
            angles = list(stream(seed, 0, "task-order").permutation(angles))
        return [rotate_task(raw, a, f"rot{int(round(a)):03d}") for a in angles]
    if family == "permuted":
        seeds = stream(seed, 0, "perm-seeds").integers(0, 2**62, size=n_tasks)
        return [
            permute_task(raw, int(s), f"perm{i:02d}") for i, s in enumerate(seeds)
        ]
    raise ValueError(f"build_tasks handles image families, not {family!r}")


def _learner(method):
    return {"espn": learn_task_espn, "packnet": learn_task_packnet}[method]


def _arch_for(raw: RawImages) -> Architecture:
    d = int(np.prod(raw.train_images.shape[1:]))
    return fc1024(in_dim=d)


class ForgettingAudit:
    """Bit-exact drift detector: probe logits plus the frozen-weight image."""

    def __init__(self):
        self.probes = {}
        self.reference = {}
        self.frozen_mask = None
        self.frozen_hash = None

    @staticmethod
    def _frozen_bytes(state, mask):
        return b"".join(
            np.where(m, w, np.float32(0)).tobytes()
            for w, m in zip(state.params.weights, mask)
        )

    def register(self, state, task):
        probe = task.test_x[:PROBE_BATCH]
        self.probes[task.task_id] = probe
        self.reference[task.task_id] = infer(state, task.task_id, probe).tobytes()
        self.frozen_mask = [m.copy() for m in state.m_all]
        self.frozen_hash = hash(self._frozen_bytes(state, self.frozen_mask))

    def check_all(self, state):
        if self.frozen_mask is not None:
            now = hash(self._frozen_bytes(state, self.frozen_mask))
            if now != self.frozen_hash:
                raise AssertionError("frozen weight values changed")
        for tid, probe in self.probes.items():
            now = infer(state, tid, probe).tobytes()
            if now != self.reference[tid]:
                raise AssertionError(f"forgetting detected: task {tid!r} logits drifted")
        return True


def run_cl(spec: RunSpec, experiment: str = "cl_run", writer: MetricsWriter = None,
           raw: RawImages = None, checkpoint: bool = True):
    """Sequential CL over the task family; returns per-seed accuracy lists."""
    os.makedirs(spec.out_dir, exist_ok=True)
    own_writer = writer is None
    writer = writer or MetricsWriter(os.path.join(spec.out_dir, "metrics.csv"))
    raw = raw if raw is not None else load_corpus(spec)
    cfg = spec.train
    results = {}
    try:
        for seed in spec.seeds:
            run_cfg = TrainConfig.from_json({**cfg.to_json(), "seed": seed})
            tasks = build_tasks(raw, spec.family, spec.n_tasks, seed, spec.task_order)
            state = new_supernet(_arch_for(raw), seed)
            audit = ForgettingAudit()
            learn = _learner(cfg.method) if cfg.method != "individual" else None
            accs = []
            for t_idx, task in enumerate(tasks, start=1):
                t0 = time.perf_counter()
                if learn is None:
                    _, result = learn_individual(_arch_for(raw), task, run_cfg)
                    accs.append(result.test_metric)
                else:
                    state, result = learn(state, task, run_cfg)
                    audit.check_all(state)  # earlier tasks' logits + frozen image
                    audit.register(state, task)
                    accs.append(result.test_metric)
                writer.write(MetricRow(
                    experiment=experiment, trial_seed=seed, task_id=task.task_id,
                    checkpoint_id=t_idx, method=cfg.method, gamma=cfg.prune.gamma,
                    alpha=cfg.prune.alpha, n_train=task.n_train,
                    accuracy_or_risk=result.test_metric,
                    flop_fraction=result.flops.fraction,
                    new_nnz=result.new_nnz, shared_nnz=result.shared_nnz,
                    wall_ms=1000 * (time.perf_counter() - t0),
                ))
                if learn is not None:
                    # forgetting audit rows: every earlier task re-scored now
                    for earlier in tasks[: t_idx - 1]:
                        acc = evaluate(state, earlier.task_id, earlier.test_x, earlier.test_y)
                        writer.write(MetricRow(
                            experiment=experiment, trial_seed=seed,
                            task_id=earlier.task_id, checkpoint_id=t_idx,
                            method=cfg.method, gamma=cfg.prune.gamma,
                            alpha=cfg.prune.alpha, n_train=earlier.n_train,
                            accuracy_or_risk=acc, flop_fraction=result.flops.fraction,
                            new_nnz=0, shared_nnz=0, wall_ms=0.0,
                        ))
            results[seed] = accs
            if learn is not None and checkpoint:
                save_checkpoint(state, os.path.join(
                    spec.out_dir, f"{experiment.replace(':', '_')}-seed{seed}.espn"))
        line_plot(
            os.path.join(spec.out_dir, f"{experiment.replace(':', '_')}-accuracy.svg"),
            {f"seed {s}": list(enumerate(a, start=1)) for s, a in results.items()},
            title=f"{experiment} {spec.family} {cfg.method}",
            xlabel="task position", ylabel="test accuracy",
        )
    finally:
        if own_writer:
            writer.close()
    return results


def run_data_efficiency(spec: RunSpec, n_cl_tasks: int = 10, n_probes: int = 3,
                        probe_fraction: float = 0.1, writer: MetricsWriter = None,
                        raw: RawImages = None, probe_at=None,
                        probe_epochs=(15, 20, 15), probe_batch=64):
    """Accuracy of small probe tasks trained on top of checkpoints s_0..s_K.

    Probes never mutate the shared state (each trains on a deep copy), so
    every (checkpoint, probe) cell is independent.  ``probe_at`` restricts
    probing to selected checkpoints (default: all of s_0..s_K).  Probe tasks
    hold roughly a tenth of the data, so they train with scaled-up epochs and
    a smaller batch; otherwise they would see only a handful of steps.
    """
    os.makedirs(spec.out_dir, exist_ok=True)
    own_writer = writer is None
    writer = writer or MetricsWriter(os.path.join(spec.out_dir, "metrics.csv"))
    raw = raw if raw is not None else load_corpus(spec)
    cfg = spec.train
    curves = {}
    try:
        for seed in spec.seeds:
            run_cfg = TrainConfig.from_json({**cfg.to_json(), "seed": seed})
            probe_cfg = TrainConfig.from_json({
                **cfg.to_json(), "seed": seed,
                "epochs": list(probe_epochs), "batch_size": probe_batch,
            })
            if spec.family == "rotated":
                cl_tasks = [
                    rotate_task(raw, 10.0 * (i + 1), f"rot{10 * (i + 1):03d}")
                    for i in range(n_cl_tasks)
                ]
                probe_full = [
                    rotate_task(raw, 15.0 + 40.0 * j, f"probe-rot{int(15 + 40 * j):03d}")
                    for j in range(n_probes)
                ]
            else:
                seeds_cl = stream(seed, 0, "perm-seeds").integers(0, 2**62, n_cl_tasks)
                seeds_probe = stream(seed, 1, "probe-perm-seeds").integers(0, 2**62, n_probes)
                cl_tasks = [permute_task(raw, int(s), f"perm{i:02d}")
                            for i, s in enumerate(seeds_cl)]
                probe_full = [permute_task(raw, int(s), f"probe-perm{j}")
                              for j, s in enumerate(seeds_probe)]
            probes = [
                subsample(p, fraction=probe_fraction, seed=seed) for p in probe_full
            ]
            learn = _learner(cfg.method)
            state = new_supernet(_arch_for(raw), seed)
            curve = {}
            checkpoints = tuple(probe_at) if probe_at else tuple(range(n_cl_tasks + 1))
            for ckpt in range(n_cl_tasks + 1):
                t0 = time.perf_counter()
                if ckpt not in checkpoints:
                    if ckpt < n_cl_tasks:
                        state, _ = learn(state, cl_tasks[ckpt], run_cfg)
                    continue
                probe_accs = []
                for probe in probes:
                    trial_state, result = learn(state.copy(), probe, probe_cfg)
                    probe_accs.append(result.test_metric)
                    writer.write(MetricRow(
                        experiment="data_efficiency", trial_seed=seed,
                        task_id=probe.task_id, checkpoint_id=ckpt,
                        method=cfg.method, gamma=cfg.prune.gamma,
                        alpha=cfg.prune.alpha, n_train=probe.n_train,
                        accuracy_or_risk=result.test_metric,
                        flop_fraction=result.flops.fraction,
                        new_nnz=result.new_nnz, shared_nnz=result.shared_nnz,
                        wall_ms=1000 * (time.perf_counter() - t0),
                    ))
                curve[ckpt] = float(np.mean(probe_accs))
                if ckpt < n_cl_tasks:
                    state, _ = learn(state, cl_tasks[ckpt], run_cfg)
            curves[seed] = curve
        line_plot(
            os.path.join(spec.out_dir, "data_efficiency.svg"),
            {f"seed {s}": sorted(c.items()) for s, c in curves.items()},
            title=f"probe accuracy vs checkpoint ({spec.family})",
            xlabel="tasks in supernet", ylabel="probe test accuracy",
        )
    finally:
        if own_writer:
            writer.close()
    return curves


def run_task_order(spec: RunSpec, n_tasks: int = 20, n0: int = 2500,
                   writer: MetricsWriter = None, raw: RawImages = None,
                   step_budget=(120, 160, 120), batch_size=64):
    """Decreasing vs increasing sample-size orders vs the individual baseline.

    Tasks shrink geometrically down to n0/20 samples and draw their training
    images from disjoint slices of the pool, so what transfers between tasks
    is the representation, never shared samples.  Every task gets the same
    optimizer-step budget per phase (epochs scale inversely with task size);
    otherwise small tasks are step-starved and order effects drown in
    optimization noise.
    """
    os.makedirs(spec.out_dir, exist_ok=True)
    own_writer = writer is None
    writer = writer or MetricsWriter(os.path.join(spec.out_dir, "metrics.csv"))
    raw = raw if raw is not None else load_corpus(spec)
    cfg = spec.train
    sizes = sample_size_schedule(n0, n_tasks)
    if sum(sizes) > len(raw.train_images):
        raise ValueError(
            f"pool of {len(raw.train_images)} images cannot give {n_tasks} "
            f"disjoint tasks totalling {sum(sizes)} samples"
        )
    summary = {}

    def cfg_for(n_train, seed):
        steps_per_epoch = max(1, -(-n_train // batch_size))
        epochs = [max(1, -(-target // steps_per_epoch)) for target in step_budget]
        return TrainConfig.from_json({
            **cfg.to_json(), "seed": seed,
            "epochs": epochs, "batch_size": batch_size,
        })

    try:
        for seed in spec.seeds:
            order = stream(seed, 0, "pool-shuffle").permutation(len(raw.train_images))
            tasks, offset = [], 0
            for i, n in enumerate(sizes):
                keep = np.sort(order[offset : offset + n])
                offset += n
                slice_raw = RawImages(
                    raw.train_images[keep], raw.train_labels[keep],
                    raw.test_images, raw.test_labels,
                )
                if spec.family == "rotated":
                    tasks.append(rotate_task(slice_raw, 10.0 * (i + 1),
                                             f"rot{10 * (i + 1):03d}"))
                else:
                    perm_seed = int(stream(seed, i, "order-perm").integers(0, 2**62))
                    tasks.append(permute_task(slice_raw, perm_seed, f"perm{i:02d}"))
            for mode in ("decreasing", "increasing", "individual"):
                ordered = tasks if mode != "increasing" else tasks[::-1]
                state = new_supernet(_arch_for(raw), seed)
                accs = {}
                for pos, task in enumerate(ordered, start=1):
                    t0 = time.perf_counter()
                    run_cfg = cfg_for(task.n_train, seed)
                    if mode == "individual":
                        _, result = learn_individual(_arch_for(raw), task, run_cfg)
                    else:
                        state, result = _learner(cfg.method)(state, task, run_cfg)
                    accs[task.task_id] = result.test_metric
                    writer.write(MetricRow(
                        experiment=f"task_order:{mode}", trial_seed=seed,
                        task_id=task.task_id, checkpoint_id=pos,
                        method=cfg.method if mode != "individual" else "individual",
                        gamma=cfg.prune.gamma, alpha=cfg.prune.alpha,
                        n_train=task.n_train,
                        accuracy_or_risk=result.test_metric,
                        flop_fraction=result.flops.fraction,
                        new_nnz=result.new_nnz, shared_nnz=result.shared_nnz,
                        wall_ms=1000 * (time.perf_counter() - t0),
                    ))
                summary[(seed, mode)] = accs
    finally:
        if own_writer:
            writer.close()
    return summary


def run_pruning_compare(spec: RunSpec, gammas=(0.05, 1.0), writer=None, raw=None):
    """Single-task pruning quality: FLOP-aware vs uniform l1 penalties.

    Emits the standard metric rows plus a neurons.csv with the surviving
    hidden-neuron fraction per run.
    """
    os.makedirs(spec.out_dir, exist_ok=True)
    own_writer = writer is None
    writer = writer or MetricsWriter(os.path.join(spec.out_dir, "metrics.csv"))
    raw = raw if raw is not None else load_corpus(spec)
    cfg = spec.train
    neurons_path = os.path.join(spec.out_dir, "neurons.csv")
    fresh_neurons = not os.path.exists(neurons_path)
    rows = {}
    try:
        with open(neurons_path, "a", encoding="utf-8", newline="") as nf:
            if fresh_neurons:
                nf.write("trial_seed,penalty,gamma,accuracy,neuron_fraction\r\n")
            task_full = rotate_task(raw, 0.0, "rot000")
            for seed in spec.seeds:
                for gamma in gammas:
                    # with a slack budget the penalty is skipped, so the two
                    # penalty variants are the same run; train it once
                    penalties = ("flop_aware", "l1_uniform")
                    shared = None
                    for penalty in penalties:
                        t0 = time.perf_counter()
                        if gamma >= 1.0 and shared is not None:
                            result, frac = shared
                        else:
                            run_cfg = TrainConfig.from_json({
                                **cfg.to_json(), "seed": seed, "method": "individual",
                                "gamma": gamma, "alpha": 1.0,
                                "baseline_penalty": penalty,
                            })
                            state, result = learn_individual(
                                _arch_for(raw), task_full, run_cfg)
                            tm = state.task_masks[task_full.task_id]
                            frac = sum(int(m.sum()) for m in tm.neurons) / sum(
                                m.size for m in tm.neurons)
                            shared = (result, frac)
                        rows[(seed, penalty, gamma)] = (result.test_metric, frac)
                        nf.write(
                            f"{seed},{penalty},{gamma},{result.test_metric},{frac}\r\n")
                        nf.flush()
                        writer.write(MetricRow(
                            experiment=f"pruning_compare:{penalty}", trial_seed=seed,
                            task_id=task_full.task_id, checkpoint_id=1,
                            method="individual", gamma=gamma, alpha=1.0,
                            n_train=task_full.n_train,
                            accuracy_or_risk=result.test_metric,
                            flop_fraction=result.flops.fraction,
                            new_nnz=result.new_nnz, shared_nnz=result.shared_nnz,
                            wall_ms=1000 * (time.perf_counter() - t0),
                        ))
    finally:
        if own_writer:
            writer.close()
    return rows


def run_alpha_sweep(spec: RunSpec, alphas=(0.005, 0.05, 0.1, 1.0),
                    gammas=(0.2,), n_tasks=6, writer=None, raw=None):
    """Task-averaged CL accuracy over the (alpha, gamma) grid."""
    os.makedirs(spec.out_dir, exist_ok=True)
    own_writer = writer is None
    writer = writer or MetricsWriter(os.path.join(spec.out_dir, "metrics.csv"))
    raw = raw if raw is not None else load_corpus(spec)
    surface = {}
    try:
        for gamma in gammas:
            for alpha in alphas:
                sub = RunSpec(
                    family=spec.family, n_tasks=n_tasks,
                    train=TrainConfig.from_json({
                        **spec.train.to_json(), "gamma": gamma, "alpha": alpha}),
                    seeds=spec.seeds, out_dir=spec.out_dir,
                    train_cap=spec.train_cap, test_cap=spec.test_cap,
                    task_order=spec.task_order,
                )
                results = run_cl(
                    sub, experiment=f"alpha_sweep:a{alpha}:g{gamma}",
                    writer=writer, raw=raw, checkpoint=False,
                )
                surface[(alpha, gamma)] = {
                    s: float(np.mean(a)) for s, a in results.items()
                }
    finally:
        if own_writer:
            writer.close()
    return surface


def run_planted_scaling(out_dir, d=30, r=6, r_frz=4, n_tasks=4,
                        n_values=(50, 100, 200, 400, 800, 1600),
                        seeds=(1, 2, 3, 4, 5), noise=0.5, n_mc=8000,
                        steps=600, lr=0.7, writer=None):
    """Excess-risk sweep over sample sizes on the planted generator."""
    from ..theory import fit_scaling_exponent, planted_excess_risk

    os.makedirs(out_dir, exist_ok=True)
    own_writer = writer is None
    writer = writer or MetricsWriter(os.path.join(out_dir, "metrics.csv"))
    points, per_seed = [], {}
    try:
        for n in n_values:
            vals = []
            for seed in seeds:
                t0 = time.perf_counter()
                model = make_planted(
                    d, r, r_frz, n_tasks, seed=100 + seed,
                    psi="leaky_relu", sigma="logistic", noise_halfwidth=noise,
                )
                excess = planted_excess_risk(
                    model, n, seed=seed, n_mc=n_mc, steps=steps, lr=lr)
                vals.append(excess)
                per_seed[(n, seed)] = excess
                writer.write(MetricRow(
                    experiment="planted_scaling", trial_seed=seed,
                    task_id=f"N{n}", checkpoint_id=0, method="erm",
                    gamma=1.0, alpha=1.0, n_train=n,
                    accuracy_or_risk=excess, flop_fraction=0.0,
                    new_nnz=0, shared_nnz=0,
                    wall_ms=1000 * (time.perf_counter() - t0),
                ))
            points.append((n, float(np.mean(vals))))
        slope, intercept, r2 = fit_scaling_exponent(points)
        with open(os.path.join(out_dir, "scaling_fit.json"), "w") as f:
            json.dump({"slope": slope, "intercept": intercept, "r2": r2,
                       "points": points}, f, indent=2)
        line_plot(
            os.path.join(out_dir, "planted_scaling.svg"),
            {"mean excess": [(np.log10(n), np.log10(v)) for n, v in points]},
            title=f"excess risk vs N (slope {slope:.2f})",
            xlabel="log10 N", ylabel="log10 excess risk",
        )
    finally:
        if own_writer:
            writer.close()
    return points, slope, per_seed
