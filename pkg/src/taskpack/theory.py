"""Empirical estimators for the planted-model statistics.

Population risks are Monte-Carlo averages over fresh draws from the
generator.  The constrained ERM inside the mismatch and excess-risk
estimators is full-batch projected gradient descent with a fixed step
budget: heads are clipped to their l2 bound and the trainable
representation rows are projected onto the spectral-norm ball (singular
values clipped), which keeps the planted increment itself feasible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data.planted import PlantedModel, sample_task
from .errors import NonFiniteLossError
from .rng import stream


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    n_monte_carlo: int
    std_error: float


@dataclass(frozen=True)
class MismatchEstimate:
    mm: float
    l_frz: float      # best achievable risk when reusing the frozen rows
    l_star: float     # optimal risk, E[Z^2] by construction
    std_error: float


def estimate_population_risk(
    predictor, planted: PlantedModel, task_index: int, n_mc: int, seed: int
) -> RiskEstimate:
    """Monte-Carlo squared-loss risk of ``predictor(x)`` on one task."""
    if n_mc < 100:
        raise ValueError(f"n_mc must be >= 100, got {n_mc}")
    gen = stream(seed, task_index, "risk-mc")
    x, y = sample_task(planted, task_index, n_mc, gen)
    losses = (y - np.asarray(predictor(x)).reshape(-1)) ** 2
    return RiskEstimate(
        value=float(losses.mean()),
        n_monte_carlo=n_mc,
        std_error=float(losses.std(ddof=1) / math.sqrt(n_mc)),
    )


def _sigma_grad(model: PlantedModel, s: np.ndarray, p: np.ndarray) -> np.ndarray:
    if model.sigma == "logistic":
        return p * (1 - p)
    return np.ones_like(s)


def _psi_grad(model: PlantedModel, z: np.ndarray) -> np.ndarray:
    if model.psi == "leaky_relu":
        return np.where(z > 0, 1.0, model.psi_slope)
    return np.ones_like(z)


def fit_planted_erm(
    planted: PlantedModel,
    frz: np.ndarray,
    new_rows_allowed: int,
    train_sets: list,
    lr: float = 0.25,
    steps: int = 600,
    seed: int = 0,
):
    """Constrained ERM surrogate: full-batch GD on heads + trainable rows.

    ``frz`` is the (r, d) frozen representation; only the last
    ``new_rows_allowed`` rows of the learned increment may be nonzero.
    Returns ``(V, W)`` with V stacking per-task heads and W = frz + increment.
    """
    r, d = frz.shape
    t_count = len(train_sets)
    gen = stream(seed, 0, "erm-init")
    v = gen.standard_normal((t_count, r)) * 0.1
    w_new = np.zeros((r, d))
    row_lo = r - new_rows_allowed
    if new_rows_allowed:
        w_new[row_lo:] = gen.standard_normal((new_rows_allowed, d)) * 0.01

    xs = [x for x, _ in train_sets]
    ys = [y for _, y in train_sets]

    for _ in range(steps):
        w = frz + w_new
        grad_v = np.zeros_like(v)
        grad_w = np.zeros_like(w_new)
        for t in range(t_count):
            x, y = xs[t], ys[t]
            z = x @ w.T
            a = planted.apply_psi(z)
            s = a @ v[t]
            p = planted.apply_sigma(s)
            if not np.all(np.isfinite(p)):
                raise NonFiniteLossError("planted ERM diverged")
            e = (2.0 / (len(y) * t_count)) * (p - y) * _sigma_grad(planted, s, p)
            grad_v[t] = a.T @ e
            if new_rows_allowed:
                dz = (e[:, None] * v[t][None, :]) * _psi_grad(planted, z)
                grad_w += dz.T @ x
        v -= lr * grad_v
        if new_rows_allowed:
            grad_w[:row_lo] = 0.0
            w_new -= lr * grad_w
            if np.linalg.norm(w_new, 2) > planted.b_bar:
                u, s, vt = np.linalg.svd(w_new[row_lo:], full_matrices=False)
                w_new[row_lo:] = (u * np.minimum(s, planted.b_bar)) @ vt
        norms = np.linalg.norm(v, axis=1)
        over = norms > planted.b
        if over.any():
            v[over] *= (planted.b / norms[over])[:, None]
    return v, frz + w_new


def _fitted_risk(planted, v, w, n_mc, seed):
    """Task-averaged MC risk of a fitted (V, W) pair, with pooled std error."""
    values, variances = [], []
    for t in range(planted.n_tasks):
        est = estimate_population_risk(
            lambda x, t=t: planted.clean_labels(x, t, w=w, v=v[t]),
            planted, t, n_mc, seed,
        )
        values.append(est.value)
        variances.append(est.std_error**2)
    return float(np.mean(values)), float(math.sqrt(sum(variances)) / planted.n_tasks)


def estimate_mismatch(
    planted: PlantedModel,
    frz: np.ndarray,
    new_rows_allowed: int,
    n_large: int,
    n_mc: int,
    seed: int,
    lr: float = 0.25,
    steps: int = 600,
) -> MismatchEstimate:
    """Gap between the best frozen-representation risk and the optimum.

    The frozen side is estimated by ERM on ``n_large`` samples per task; the
    optimum is E[Z^2], exact by construction of the generator.
    """
    train_sets = []
    for t in range(planted.n_tasks):
        gen = stream(seed, t, "mismatch-train")
        train_sets.append(sample_task(planted, t, n_large, gen))
    v, w = fit_planted_erm(
        planted, frz, new_rows_allowed, train_sets, lr=lr, steps=steps, seed=seed
    )
    l_frz, se = _fitted_risk(planted, v, w, n_mc, seed)
    l_star = planted.optimal_risk
    return MismatchEstimate(mm=l_frz - l_star, l_frz=l_frz, l_star=l_star, std_error=se)


def planted_excess_risk(
    planted: PlantedModel,
    n_train: int,
    seed: int,
    n_mc: int = 20_000,
    lr: float = 0.25,
    steps: int = 600,
) -> float:
    """Excess risk of the ERM solution trained on n_train samples per task."""
    train_sets = []
    for t in range(planted.n_tasks):
        gen = stream(seed, t, "excess-train")
        train_sets.append(sample_task(planted, t, n_train, gen))
    v, w = fit_planted_erm(
        planted,
        planted.w_frozen,
        planted.r - planted.r_frz,
        train_sets,
        lr=lr,
        steps=steps,
        seed=seed,
    )
    value, _ = _fitted_risk(planted, v, w, n_mc, seed)
    return value - planted.optimal_risk


def fit_scaling_exponent(points) -> tuple[float, float, float]:
    """OLS on (log N, log excess): returns (slope, intercept, r2)."""
    points = list(points)
    if len(points) < 4:
        raise ValueError(f"need at least 4 points, got {len(points)}")
    if any(n <= 0 or v <= 0 for n, v in points):
        raise ValueError("all sample sizes and excess risks must be positive")
    logn = np.log(np.array([n for n, _ in points], dtype=np.float64))
    logv = np.log(np.array([v for _, v in points], dtype=np.float64))
    slope, intercept = np.polyfit(logn, logv, 1)
    pred = slope * logn + intercept
    ss_res = float(np.sum((logv - pred) ** 2))
    ss_tot = float(np.sum((logv - logv.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), r2
