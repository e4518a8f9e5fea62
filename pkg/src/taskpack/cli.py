"""Command-line interface.

Subcommands: train-cl, eval, gen-tasks, experiment <name>, inspect-checkpoint.
Exit codes: 0 success, 1 usage error, 2 runtime error, 3 data error.
Values come from (highest precedence first): command-line flags, --config
JSON, built-in defaults.  ESPN_MNIST_DIR is the fallback for --mnist-dir.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .data.planted import gen_planted, make_planted
from .data.synth import write_digit_corpus
from .engine import TrainConfig, evaluate
from .errors import DataError, TaskpackError
from .nn.arch import Architecture
from .pruning import PruneConfig

EXPERIMENTS = (
    "cl-run",
    "data-efficiency",
    "task-order",
    "pruning-compare",
    "alpha-sweep",
    "planted-scaling",
)

_EPILOG = """precedence: flags override --config values, which override defaults.
data resolution for rotated/permuted families: --mnist-dir, else ESPN_MNIST_DIR;
if neither is set, run `taskpack gen-tasks --out DIR` once and point at DIR.
exit codes: 0 ok, 1 usage, 2 runtime failure, 3 data problem."""


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 on usage errors instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="taskpack", epilog=_EPILOG,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file; flags override it")
        sp.add_argument("--method", choices=("espn", "packnet", "individual"))
        sp.add_argument("--gamma", type=float, help="FLOP fraction budget in (0,1]")
        sp.add_argument("--alpha", type=float, help="new-weight allocation level in (0,1]")
        sp.add_argument("--tasks", type=int, help="number of tasks")
        sp.add_argument("--family", choices=("rotated", "permuted", "planted"))
        sp.add_argument("--seed", type=int, help="base seed (trial i uses seed+i)")
        sp.add_argument("--trials", type=int, help="number of trials")
        sp.add_argument("--epochs", help="pre,prune,fine epoch counts, e.g. 3,4,3")
        sp.add_argument("--lr", type=float, help="learning rate")
        sp.add_argument("--batch-size", type=int)
        sp.add_argument("--optimizer", choices=("sgd", "rmsprop", "adam"))
        sp.add_argument("--penalty", choices=("flop_aware", "l1_uniform", "none"))
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--full", action="store_true",
                        help="full-scale run: 36 tasks, 5 trials, uncapped corpus")
        sp.add_argument("--mnist-dir", help="directory with the four IDX files")
        sp.add_argument("--train-cap", type=int, help="per-task train sample cap")
        sp.add_argument("--test-cap", type=int, help="test sample cap")
        sp.add_argument("--task-order", choices=("random", "natural"))
        sp.add_argument("--parallel", action="store_true",
                        help="run trials as parallel processes")

    sp = sub.add_parser("train-cl", help="sequential continual learning run")
    common(sp)
    sp = sub.add_parser("experiment", help="run a named experiment")
    sp.add_argument("name", choices=EXPERIMENTS)
    common(sp)
    sp = sub.add_parser("eval", help="re-evaluate every task in a checkpoint")
    sp.add_argument("checkpoint")
    sp.add_argument("--mnist-dir")
    sp.add_argument("--train-cap", type=int)
    sp.add_argument("--test-cap", type=int)
    sp = sub.add_parser("gen-tasks", help="write the synthetic IDX corpus (or planted tasks)")
    sp.add_argument("--out", required=True)
    sp.add_argument("--family", choices=("corpus", "planted"), default="corpus")
    sp.add_argument("--train-n", type=int, default=20000)
    sp.add_argument("--test-n", type=int, default=4000)
    sp.add_argument("--tasks", type=int, default=4)
    sp.add_argument("--seed", type=int, default=20240501)
    sp = sub.add_parser("inspect-checkpoint", help="print a checkpoint summary")
    sp.add_argument("checkpoint")
    return p


def _merge_config(args) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            cfg = json.load(f)
    flag_map = {
        "method": "method", "gamma": "gamma", "alpha": "alpha",
        "tasks": "tasks", "family": "family", "seed": "seed",
        "trials": "trials", "epochs": "epochs", "lr": "lr",
        "batch_size": "batch_size", "optimizer": "optimizer",
        "penalty": "baseline_penalty", "out": "out", "full": "full",
        "mnist_dir": "mnist_dir", "train_cap": "train_cap",
        "test_cap": "test_cap", "task_order": "task_order",
        "parallel": "parallel",
    }
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None and value is not False:
            cfg[key] = value
    return cfg


def _train_config(cfg: dict) -> TrainConfig:
    epochs = cfg.get("epochs", (3, 4, 3))
    if isinstance(epochs, str):
        epochs = tuple(int(x) for x in epochs.split(","))
    return TrainConfig.from_json({
        "method": cfg.get("method", "espn"),
        "gamma": cfg.get("gamma", 0.2),
        "alpha": cfg.get("alpha", 0.05),
        "baseline_penalty": cfg.get("baseline_penalty", "flop_aware"),
        "penalty_strength": cfg.get("penalty_strength", 1e-4),
        "epochs": list(epochs),
        "optimizer": cfg.get("optimizer", "rmsprop"),
        "lr": cfg.get("lr", 1e-3),
        "batch_size": cfg.get("batch_size", 256),
        "seed": cfg.get("seed", 1),
    })


def _resolve_mnist_dir(cfg: dict, family: str):
    if family == "planted":
        return None
    path = cfg.get("mnist_dir") or os.environ.get("ESPN_MNIST_DIR")
    if not path:
        raise DataError(
            f"the {family!r} family needs IDX image data: pass --mnist-dir or set "
            "ESPN_MNIST_DIR (run `taskpack gen-tasks --out DIR` to create a "
            "synthetic corpus)"
        )
    if not os.path.isdir(path):
        raise DataError(f"--mnist-dir {path!r} is not a directory")
    return path


def _run_spec(cfg: dict):
    from .harness.experiments import (
        DESK_TASKS,
        DESK_TRIALS,
        FULL_TASKS,
        FULL_TRIALS,
        RunSpec,
    )

    from .harness.experiments import DESK_TEST_CAP, DESK_TRAIN_CAP

    family = cfg.get("family", "rotated")
    full = bool(cfg.get("full"))
    trials = cfg.get("trials", FULL_TRIALS if full else DESK_TRIALS)
    base_seed = cfg.get("seed", 1)
    train_cap = cfg.get("train_cap", None if full else DESK_TRAIN_CAP)
    test_cap = cfg.get("test_cap", None if full else DESK_TEST_CAP)
    spec = RunSpec(
        family=family,
        n_tasks=cfg.get("tasks", FULL_TASKS if full else DESK_TASKS),
        train=_train_config(cfg),
        seeds=tuple(base_seed + i for i in range(trials)),
        out_dir=cfg.get("out", "runs"),
        mnist_dir=_resolve_mnist_dir(cfg, family),
        train_cap=train_cap,
        test_cap=test_cap,
        task_order=cfg.get("task_order", "random"),
    )
    return spec


def _planted_cl(spec, cfg):
    """CL on planted regression tasks with a per-task sigmoid head."""
    from .engine import learn_task_espn, learn_task_packnet, learn_individual
    from .harness.experiments import _learner
    from .harness.metrics import MetricRow, MetricsWriter
    from .masks import new_supernet
    import time

    d = cfg.get("planted_d", 32)
    hidden = cfg.get("planted_hidden", 64)
    arch = Architecture(
        (d, hidden, 1), activation="leaky_relu", leaky_slope=0.2,
        has_batchnorm=(True,), head_kind="per_task_linear_sigmoid",
    )
    os.makedirs(spec.out_dir, exist_ok=True)
    out = {}
    with MetricsWriter(os.path.join(spec.out_dir, "metrics.csv")) as writer:
        for seed in spec.seeds:
            model = make_planted(
                d, cfg.get("planted_r", 6), cfg.get("planted_r_frz", 3),
                spec.n_tasks, seed=seed, psi="leaky_relu", sigma="logistic",
                noise_halfwidth=0.3,
            )
            datasets = gen_planted(model, cfg.get("planted_n", 2000), 1000, seed)
            state = new_supernet(arch, seed)
            run_cfg = TrainConfig.from_json({**spec.train.to_json(), "seed": seed})
            risks = []
            for idx, data in enumerate(datasets, start=1):
                t0 = time.perf_counter()
                if run_cfg.method == "individual":
                    _, result = learn_individual(arch, data, run_cfg)
                else:
                    state, result = _learner(run_cfg.method)(state, data, run_cfg)
                risks.append(result.test_metric)
                writer.write(MetricRow(
                    experiment="cl_run", trial_seed=seed, task_id=data.task_id,
                    checkpoint_id=idx, method=run_cfg.method,
                    gamma=run_cfg.prune.gamma, alpha=run_cfg.prune.alpha,
                    n_train=data.n_train, accuracy_or_risk=result.test_metric,
                    flop_fraction=result.flops.fraction,
                    new_nnz=result.new_nnz, shared_nnz=result.shared_nnz,
                    wall_ms=1000 * (time.perf_counter() - t0),
                ))
            out[seed] = risks
            print(f"seed {seed}: mean test risk {np.mean(risks):.5f}")
    return out


def _parallel_trials(spec, runner):
    """One process per trial seed, each writing its own CSV; then merge."""
    import concurrent.futures as futures
    from dataclasses import replace

    os.makedirs(spec.out_dir, exist_ok=True)
    jobs = []
    with futures.ProcessPoolExecutor(max_workers=min(len(spec.seeds), os.cpu_count())) as pool:
        for seed in spec.seeds:
            sub = replace(spec, seeds=(seed,),
                          out_dir=os.path.join(spec.out_dir, f"trial-{seed}"))
            jobs.append(pool.submit(runner, sub))
        results = [j.result() for j in jobs]
    merged = os.path.join(spec.out_dir, "metrics.csv")
    with open(merged, "w", encoding="utf-8", newline="") as out:
        header_done = False
        for seed in spec.seeds:
            part = os.path.join(spec.out_dir, f"trial-{seed}", "metrics.csv")
            with open(part, encoding="utf-8") as f:
                lines = f.readlines()
            out.writelines(lines if not header_done else lines[1:])
            header_done = True
    return results


def _cmd_train_cl(args) -> int:
    from .harness.experiments import run_cl

    cfg = _merge_config(args)
    spec = _run_spec(cfg)
    if spec.family == "planted":
        _planted_cl(spec, cfg)
        return 0
    if cfg.get("parallel") and len(spec.seeds) > 1:
        results = _parallel_trials(spec, run_cl)
        for res in results:
            for seed, accs in res.items():
                print(f"seed {seed}: mean accuracy {np.mean(accs):.4f} over {len(accs)} tasks")
        return 0
    results = run_cl(spec)
    for seed, accs in results.items():
        print(f"seed {seed}: mean accuracy {np.mean(accs):.4f} over {len(accs)} tasks")
    return 0


def _cmd_experiment(args) -> int:
    from .harness import experiments as E

    cfg = _merge_config(args)
    name = args.name.replace("-", "_")
    if name == "planted_scaling":
        out = cfg.get("out", "runs")
        points, slope, _ = E.run_planted_scaling(out)
        print(f"log-log slope {slope:.3f}; points: {points}")
        return 0
    spec = _run_spec(cfg)
    if name == "cl_run":
        return _cmd_train_cl(args)
    if name == "data_efficiency":
        curves = E.run_data_efficiency(spec)
        for seed, curve in curves.items():
            last = max(curve)
            print(f"seed {seed}: s0 {curve[0]:.4f} -> s{last} {curve[last]:.4f}")
    elif name == "task_order":
        summary = E.run_task_order(spec)
        for (seed, mode), accs in summary.items():
            print(f"seed {seed} {mode}: mean {np.mean(list(accs.values())):.4f}")
    elif name == "pruning_compare":
        gammas = (cfg.get("gamma", 0.05), 1.0)
        rows = E.run_pruning_compare(spec, gammas=gammas)
        for (seed, penalty, gamma), (acc, frac) in sorted(rows.items()):
            print(f"seed {seed} {penalty} gamma={gamma}: acc {acc:.4f}, neurons {frac:.3f}")
    elif name == "alpha_sweep":
        surface = E.run_alpha_sweep(spec)
        for (alpha, gamma), per_seed in sorted(surface.items()):
            mean = np.mean(list(per_seed.values()))
            print(f"alpha={alpha} gamma={gamma}: task-averaged accuracy {mean:.4f}")
    return 0


def _cmd_eval(args) -> int:
    from .harness.checkpoint import load_checkpoint
    from .harness.experiments import RunSpec, load_corpus
    from .data.tasks import permute_task, rotate_task

    state = load_checkpoint(args.checkpoint)
    families = {m.get("family") for m in state.task_meta.values()}
    raw = None
    if families & {"rotated", "permuted"}:
        spec = RunSpec(
            family="rotated",
            mnist_dir=args.mnist_dir or os.environ.get("ESPN_MNIST_DIR"),
            train_cap=args.train_cap, test_cap=args.test_cap,
        )
        if spec.mnist_dir is None:
            raise DataError(
                "checkpoint holds image tasks; pass --mnist-dir (or ESPN_MNIST_DIR)"
            )
        raw = load_corpus(spec)
    for tid in state.task_ids:
        meta = state.task_meta[tid]
        if meta.get("family") == "rotated":
            task = rotate_task(raw, meta["degrees"], tid)
        elif meta.get("family") == "permuted":
            task = permute_task(raw, meta["perm_seed"], tid)
        else:
            print(f"{tid}: no re-evaluable generator metadata; skipped")
            continue
        acc = evaluate(state, tid, task.test_x, task.test_y)
        print(f"{tid}: {acc:.4f}")
    return 0


def _cmd_gen_tasks(args) -> int:
    if args.family == "corpus":
        write_digit_corpus(args.out, args.train_n, args.test_n, args.seed)
        print(f"wrote synthetic IDX corpus ({args.train_n} train / {args.test_n} test) to {args.out}")
        return 0
    os.makedirs(args.out, exist_ok=True)
    model = make_planted(32, 6, 3, args.tasks, seed=args.seed,
                         psi="leaky_relu", sigma="logistic", noise_halfwidth=0.3)
    datasets = gen_planted(model, args.train_n, args.test_n, args.seed)
    for data in datasets:
        np.savez(
            os.path.join(args.out, f"planted-task{data.task_id}.npz"),
            train_x=data.train_x, train_y=data.train_y,
            test_x=data.test_x, test_y=data.test_y,
        )
    np.savez(os.path.join(args.out, "planted-truth.npz"),
             w_star=model.w_star, v_star=np.stack(model.v_star))
    print(f"wrote {len(datasets)} planted tasks to {args.out}")
    return 0


def _cmd_inspect(args) -> int:
    from .flops import total_flops
    from .harness.checkpoint import load_checkpoint
    from .masks import popcount

    state = load_checkpoint(args.checkpoint)
    arch = state.arch
    print(f"architecture: dims {list(arch.layer_dims)}, activation {arch.activation}, "
          f"batchnorm {list(arch.has_batchnorm)}, head {arch.head_kind}")
    print(f"maskable weights: {arch.total_weights}, used: {state.used_weights} "
          f"({state.used_weights / arch.total_weights:.1%})")
    print(f"tasks: {len(state.task_ids)}")
    for tid in state.task_ids:
        tm = state.task_masks[tid]
        report = total_flops(arch, tm.neurons)
        meta = state.task_meta.get(tid, {})
        print(f"  {tid}: weights {popcount(tm.weights)}, flop fraction "
              f"{report.fraction:.3f}, meta {meta}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.command == "train-cl":
            return _cmd_train_cl(args)
        if args.command == "experiment":
            return _cmd_experiment(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "gen-tasks":
            return _cmd_gen_tasks(args)
        if args.command == "inspect-checkpoint":
            return _cmd_inspect(args)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3
    except (TaskpackError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
