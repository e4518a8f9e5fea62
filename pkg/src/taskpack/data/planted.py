"""Planted shallow-network generators for the statistical probes.

Ground truth: y = sigma(v_t' psi(W x)) + Z with Z uniform on [-a, a], one
independent draw per sample.  The first ``r_frz`` rows of W play the role of
a frozen representation that is perfectly compatible with the truth; the
remaining rows are what a learner still has to find.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..rng import stream
from .tasks import TaskDataset

X_DISTS = ("ball", "normal_clip")


@dataclass
class PlantedModel:
    """Ground-truth parameters plus noise and link/activation choices."""

    d: int
    r: int
    r_frz: int
    w_star: np.ndarray               # (r, d), spectral norm <= b_bar
    v_star: list                     # per-task (r,) vectors, l2 norm <= b
    psi: str = "identity"            # "identity" | "leaky_relu"
    psi_slope: float = 0.2
    sigma: str = "identity"          # "identity" | "logistic"
    noise_halfwidth: float = 0.0
    b: float = 1.0
    b_bar: float = 1.0
    x_dist: str = "ball"

    def __post_init__(self):
        if not 0 <= self.r_frz <= self.r <= self.d:
            raise ValueError(f"need r_frz <= r <= d, got {self.r_frz}, {self.r}, {self.d}")
        if self.x_dist not in X_DISTS:
            raise ValueError(f"unknown x_dist {self.x_dist!r}")

    @property
    def n_tasks(self) -> int:
        return len(self.v_star)

    @property
    def w_frozen(self) -> np.ndarray:
        """First r_frz rows of the truth, remaining rows zeroed."""
        w = np.zeros_like(self.w_star)
        w[: self.r_frz] = self.w_star[: self.r_frz]
        return w

    @property
    def optimal_risk(self) -> float:
        """E[Z^2] for Z ~ U[-a, a]."""
        return self.noise_halfwidth ** 2 / 3.0

    def apply_psi(self, z: np.ndarray) -> np.ndarray:
        if self.psi == "leaky_relu":
            return np.where(z > 0, z, self.psi_slope * z)
        return z

    def apply_sigma(self, z: np.ndarray) -> np.ndarray:
        if self.sigma == "logistic":
            return 1.0 / (1.0 + np.exp(-z))
        return z

    def clean_labels(self, x: np.ndarray, task_index: int, w=None, v=None) -> np.ndarray:
        """Noise-free sigma(v' psi(W x)) for one task."""
        w = self.w_star if w is None else w
        v = self.v_star[task_index] if v is None else v
        return self.apply_sigma(self.apply_psi(x @ w.T) @ v)

    def draw_x(self, n: int, gen: np.random.Generator) -> np.ndarray:
        if self.x_dist == "ball":
            g = gen.standard_normal((n, self.d))
            g /= np.linalg.norm(g, axis=1, keepdims=True)
            radius = np.sqrt(self.d) * gen.uniform(0, 1, n) ** (1.0 / self.d)
            return g * radius[:, None]
        x = gen.standard_normal((n, self.d))
        lim = 2.0 * np.sqrt(self.d)
        norms = np.linalg.norm(x, axis=1)
        big = norms > lim
        x[big] *= (lim / norms[big])[:, None]
        return x

    def x_second_moment(self) -> float:
        """E[x_i^2] per coordinate (exact for the ball distribution)."""
        if self.x_dist == "ball":
            return self.d / (self.d + 2.0)
        raise NotImplementedError("closed form only for the ball distribution")


def make_planted(
    d: int,
    r: int,
    r_frz: int,
    n_tasks: int,
    seed: int,
    psi: str = "identity",
    sigma: str = "identity",
    noise_halfwidth: float = 0.3,
    b: float = 1.0,
    b_bar: float = 1.0,
    x_dist: str = "ball",
) -> PlantedModel:
    """Draw a ground truth: Gaussian W rescaled to spectral norm b_bar,
    per-task v uniform on the radius-b sphere."""
    gen = stream(seed, 0, "planted-truth")
    w = gen.standard_normal((r, d))
    w *= b_bar / np.linalg.norm(w, 2)
    vs = []
    for _ in range(n_tasks):
        v = gen.standard_normal(r)
        vs.append(v * (b / np.linalg.norm(v)))
    return PlantedModel(
        d=d, r=r, r_frz=r_frz, w_star=w, v_star=vs, psi=psi, sigma=sigma,
        noise_halfwidth=noise_halfwidth, b=b, b_bar=b_bar, x_dist=x_dist,
    )


def sample_task(model: PlantedModel, task_index: int, n: int,
                gen: np.random.Generator):
    """Draw (x, y) for one task with fresh uniform noise per sample."""
    x = model.draw_x(n, gen)
    y = model.clean_labels(x, task_index)
    if model.noise_halfwidth > 0:
        y = y + gen.uniform(-model.noise_halfwidth, model.noise_halfwidth, n)
    return x.astype(np.float64), y.astype(np.float64)


def gen_planted(
    model: PlantedModel,
    n_train: int,
    n_test: int,
    seed: int,
) -> list[TaskDataset]:
    """Materialize every task's train/test splits; deterministic in the seed."""
    datasets = []
    for t in range(model.n_tasks):
        gen = stream(seed, t, "planted-samples")
        train_x, train_y = sample_task(model, t, n_train, gen)
        test_x, test_y = sample_task(model, t, n_test, gen)
        datasets.append(
            TaskDataset(
                task_id=t,
                kind="regression",
                train_x=train_x.astype(np.float32),
                train_y=train_y.astype(np.float32),
                test_x=test_x.astype(np.float32),
                test_y=test_y.astype(np.float32),
                meta={
                    "family": "planted",
                    "task_index": t,
                    "seed": int(seed),
                    "noise_halfwidth": model.noise_halfwidth,
                },
            )
        )
    return datasets
