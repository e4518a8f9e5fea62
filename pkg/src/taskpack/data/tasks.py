"""Task generation: rotation and permutation families, subsampling, schedules.

A task dataset carries flattened float32 inputs plus provenance metadata so
any generated task can be rebuilt from (family parameters, seed) alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..rng import stream


@dataclass
class TaskDataset:
    """Labeled train/test samples for one task."""

    task_id: object
    kind: str                  # "classification" | "regression"
    train_x: np.ndarray        # (n, d) float32
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_train(self) -> int:
        return len(self.train_x)

    @property
    def n_test(self) -> int:
        return len(self.test_x)


@dataclass
class RawImages:
    """Unsplit source corpus: images kept 2-d for geometric transforms."""

    train_images: np.ndarray   # (n, rows, cols) float32 in [0, 1]
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray


def _rotation_plan(rows, cols, degrees):
    """Bilinear gather plan for a counterclockwise rotation about the center.

    Out-of-bounds source pixels read as zero.  Returns flat source indices
    (4 taps) and weights; index -1 marks a zero tap.
    """
    cy = (rows - 1) / 2.0
    cx = (cols - 1) / 2.0
    theta = np.deg2rad(degrees)
    r_o, c_o = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    # image-plane coords: u right, v up
    u = c_o - cx
    v = cy - r_o
    # inverse map: rotate output coords by -theta to find the source point
    u_s = u * np.cos(theta) + v * np.sin(theta)
    v_s = -u * np.sin(theta) + v * np.cos(theta)
    r_s = cy - v_s
    c_s = cx + u_s

    r0 = np.floor(r_s).astype(np.int64)
    c0 = np.floor(c_s).astype(np.int64)
    fr = (r_s - r0).astype(np.float32)
    fc = (c_s - c0).astype(np.float32)

    taps, weights = [], []
    for dr, dc, w in (
        (0, 0, (1 - fr) * (1 - fc)),
        (0, 1, (1 - fr) * fc),
        (1, 0, fr * (1 - fc)),
        (1, 1, fr * fc),
    ):
        rr, cc = r0 + dr, c0 + dc
        ok = (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols)
        idx = np.where(ok, rr * cols + cc, -1)
        taps.append(idx.ravel())
        weights.append(np.where(ok, w, 0).astype(np.float32).ravel())
    return taps, weights


def rotate_images(images: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate a stack (n, rows, cols) counterclockwise with zero padding."""
    n, rows, cols = images.shape
    taps, weights = _rotation_plan(rows, cols, degrees)
    flat = images.reshape(n, rows * cols)
    padded = np.concatenate([flat, np.zeros((n, 1), dtype=flat.dtype)], axis=1)
    out = np.zeros_like(flat)
    for idx, w in zip(taps, weights):
        out += padded[:, idx] * w
    return out.reshape(n, rows, cols)


def rotate_task(raw: RawImages, degrees: float, task_id) -> TaskDataset:
    """One rotation-family task: every image turned by the same angle."""
    if not 0 <= degrees < 360:
        raise ValueError(f"degrees must be in [0, 360), got {degrees}")
    if degrees == 0:
        train, test = raw.train_images, raw.test_images
    else:
        train = rotate_images(raw.train_images, degrees)
        test = rotate_images(raw.test_images, degrees)
    n = train.shape[0]
    return TaskDataset(
        task_id=task_id,
        kind="classification",
        train_x=train.reshape(n, -1).astype(np.float32),
        train_y=raw.train_labels.copy(),
        test_x=test.reshape(test.shape[0], -1).astype(np.float32),
        test_y=raw.test_labels.copy(),
        meta={"family": "rotated", "degrees": float(degrees)},
    )


def fisher_yates(n: int, gen: np.random.Generator) -> np.ndarray:
    """Seeded Fisher-Yates permutation of range(n)."""
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(gen.integers(0, i + 1))
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def permute_task(raw: RawImages, perm_seed: int, task_id) -> TaskDataset:
    """One permutation-family task: a fixed pixel shuffle of every image."""
    rows, cols = raw.train_images.shape[1:]
    perm = fisher_yates(rows * cols, stream(perm_seed, 0, "pixel-permutation"))
    train = raw.train_images.reshape(len(raw.train_images), -1)[:, perm]
    test = raw.test_images.reshape(len(raw.test_images), -1)[:, perm]
    return TaskDataset(
        task_id=task_id,
        kind="classification",
        train_x=train.astype(np.float32),
        train_y=raw.train_labels.copy(),
        test_x=test.astype(np.float32),
        test_y=raw.test_labels.copy(),
        meta={"family": "permuted", "perm_seed": int(perm_seed)},
    )


def subsample(dataset: TaskDataset, fraction=None, count=None, seed: int = 0) -> TaskDataset:
    """Uniform without-replacement subsample of the train split only."""
    if (fraction is None) == (count is None):
        raise ValueError("give exactly one of fraction or count")
    n = dataset.n_train
    if fraction is not None:
        if not 0 < fraction <= 1:
            raise ValueError(f"fraction must be in (0,1], got {fraction}")
        if fraction == 1.0:
            return dataset
        count = max(1, int(round(n * fraction)))
    if count > n:
        raise ValueError(f"requested {count} of {n} train samples")
    gen = stream(seed, 0, "subsample")
    keep = np.sort(gen.choice(n, size=count, replace=False))
    meta = dict(dataset.meta)
    meta["subsample"] = {"count": int(count), "of": int(n), "seed": int(seed)}
    return TaskDataset(
        task_id=dataset.task_id,
        kind=dataset.kind,
        train_x=dataset.train_x[keep],
        train_y=dataset.train_y[keep],
        test_x=dataset.test_x,
        test_y=dataset.test_y,
        meta=meta,
    )


def sample_size_schedule(n0: int, n_tasks: int, final_fraction: float = 1 / 20):
    """Geometric sample sizes n0 * final_fraction^((t-1)/(T-1)), t = 1..T."""
    if n_tasks < 2:
        return [int(n0)]
    return [
        int(round(n0 * final_fraction ** ((t - 1) / (n_tasks - 1))))
        for t in range(1, n_tasks + 1)
    ]
