"""Deterministic synthetic handwritten-digit corpus.

Ten stroke-template glyphs are rendered once at 4x resolution, then every
sample applies a random affine warp (rotation, per-axis scale, shear,
translation), a low-frequency wobble field, a stroke-intensity draw, and
pixel noise.  The result is a 28x28, 10-class corpus with MNIST-like
difficulty that is generated entirely from a seed and written as standard
IDX files, so the rest of the pipeline is identical whether it reads this
corpus or the real thing.
"""

from __future__ import annotations

import os

import numpy as np

from ..rng import stream
from .idx import (
    TEST_IMAGES,
    TEST_LABELS,
    TRAIN_IMAGES,
    TRAIN_LABELS,
    write_idx_images,
    write_idx_labels,
)

SIZE = 28
SCALE = 4  # template oversampling
_T = SIZE * SCALE


def _circle(cy, cx, ry, rx, n=20, start=0.0, stop=2 * np.pi):
    angles = np.linspace(start, stop, n)
    pts = [(cy + ry * np.sin(a), cx + rx * np.cos(a)) for a in angles]
    return list(zip(pts[:-1], pts[1:]))


def _chain(*pts):
    return list(zip(pts[:-1], pts[1:]))


def _glyph_segments():
    """Digit strokes in (row, col) coordinates of a 28 box.

    Each class maps to a list of handwriting variants; several deliberately
    share strokes with a neighbor class (1/7, 4/9, 3/8, 5/6) so the corpus
    is not linearly separable once jitter is applied.
    """
    g = {}
    g[0] = [
        _circle(14, 13.5, 8.0, 5.2),
        _circle(14, 13.5, 7.2, 4.0),
    ]
    g[1] = [
        _chain((9.5, 10.5), (6, 15), (22, 13.5)),
        _chain((7, 12), (6, 14.5), (22, 14)) + _chain((22, 10.5), (22, 17.5)),
    ]
    g[2] = [
        _circle(9.5, 13.5, 4.0, 4.8, n=12, start=np.pi, stop=2.25 * np.pi)
        + _chain((11.5, 17.3), (22, 9.5), (22, 18.5)),
        _circle(9.8, 13.0, 3.6, 4.4, n=12, start=np.pi, stop=2.2 * np.pi)
        + _chain((12.2, 16.4), (21, 9.0))
        + _circle(20.4, 13.5, 2.0, 4.6, n=8, start=1.15 * np.pi, stop=2.0 * np.pi),
    ]
    g[3] = [
        _circle(9.3, 12.5, 3.8, 4.5, n=10, start=0.75 * np.pi, stop=1.9 * np.pi)
        + _circle(17.6, 13.0, 4.6, 4.9, n=10, start=0.7 * np.pi, stop=2.0 * np.pi),
        _chain((6, 9.5), (6.5, 16.5), (12.5, 12.5))
        + _circle(17.2, 12.8, 4.8, 5.0, n=10, start=0.75 * np.pi, stop=2.0 * np.pi),
    ]
    g[4] = [
        _chain((6, 15.5), (15.5, 7.5), (15.5, 20)) + _chain((6, 17), (22, 16.5)),
        _chain((6, 13.5), (14.5, 9.0), (14.5, 19.5)) + _chain((7, 16.5), (22, 17)),
    ]
    g[5] = [
        _chain((6.5, 18), (6, 9.5), (12.5, 9))
        + _circle(16.8, 12.8, 5.2, 5.0, n=12, start=0.6 * np.pi, stop=1.95 * np.pi),
    ]
    g[6] = [
        _chain((6, 16.5), (11, 10), (16, 8.7)) + _circle(17.6, 13.2, 4.6, 4.6, n=16),
        _chain((6.5, 15), (12, 9.8)) + _circle(17.0, 12.8, 5.2, 4.2, n=16),
    ]
    g[7] = [
        _chain((6.5, 8.5), (6, 18.5), (22, 11.5)),
        _chain((7, 9), (6.5, 18.5), (22, 12)) + _chain((14, 9.5), (13.5, 16.5)),
    ]
    g[8] = [
        _circle(9.4, 13.5, 3.7, 3.6) + _circle(17.9, 13.5, 4.7, 4.5),
        _circle(9.8, 13.0, 3.4, 4.2) + _circle(17.5, 14.0, 4.4, 4.0),
    ]
    g[9] = [
        _circle(10.2, 12.8, 4.2, 4.3, n=16) + _chain((10.2, 17.1), (17, 16.3), (22.5, 13.5)),
        _circle(10.6, 13.2, 4.0, 4.0, n=16) + _chain((10.6, 17.2), (22, 16.8)),
    ]
    return g


def _render_templates(pen_width=1.15):
    """Rasterize every glyph variant at 4x resolution with a Gaussian pen.

    Returns ``(templates, class_of_variant)`` with templates stacked over all
    variants of all classes.
    """
    rows, cols = np.meshgrid(np.arange(_T), np.arange(_T), indexing="ij")
    py = (rows.astype(np.float64) + 0.5) / SCALE
    px = (cols.astype(np.float64) + 0.5) / SCALE
    templates, owners = [], []
    for digit, variants in _glyph_segments().items():
        for segs in variants:
            dist2 = np.full((_T, _T), np.inf)
            for (y1, x1), (y2, x2) in segs:
                vy, vx = y2 - y1, x2 - x1
                norm2 = vy * vy + vx * vx
                if norm2 == 0:
                    t = 0.0
                else:
                    t = np.clip(((py - y1) * vy + (px - x1) * vx) / norm2, 0, 1)
                dy = py - (y1 + t * vy)
                dx = px - (x1 + t * vx)
                dist2 = np.minimum(dist2, dy * dy + dx * dx)
            templates.append(np.exp(-dist2 / (2 * pen_width**2)).astype(np.float32))
            owners.append(digit)
    return np.stack(templates), np.array(owners, dtype=np.int64)


class DigitRenderer:
    """Draws jittered digit images; all randomness comes from the caller's generator."""

    def __init__(
        self,
        rot_deg=13.0,
        scale_range=(0.82, 1.15),
        shear=0.20,
        translate=2.4,
        wobble_amp=1.55,
        wobble_freq=(0.03, 0.10),
        thickness=(0.6, 2.05),
        intensity=(0.68, 1.0),
        noise_sigma=0.085,
    ):
        self.rot_deg = rot_deg
        self.scale_range = scale_range
        self.shear = shear
        self.translate = translate
        self.wobble_amp = wobble_amp
        self.wobble_freq = wobble_freq
        self.thickness = thickness  # gamma exponent: <1 thickens, >1 thins
        self.intensity = intensity
        self.noise_sigma = noise_sigma
        self.templates, self._owners = _render_templates()
        # variant lookup: class -> stacked template indices
        self._variants = [np.flatnonzero(self._owners == d) for d in range(10)]
        r, c = np.meshgrid(np.arange(SIZE), np.arange(SIZE), indexing="ij")
        self._gy = (r - (SIZE - 1) / 2).astype(np.float64).ravel()
        self._gx = (c - (SIZE - 1) / 2).astype(np.float64).ravel()

    def draw(self, labels: np.ndarray, gen: np.random.Generator) -> np.ndarray:
        n = len(labels)
        out = np.empty((n, SIZE, SIZE), dtype=np.float32)
        for lo in range(0, n, 2048):
            hi = min(lo + 2048, n)
            out[lo:hi] = self._draw_chunk(labels[lo:hi], gen)
        return out

    def _draw_chunk(self, labels, gen):
        n = len(labels)
        lab = np.asarray(labels, dtype=np.int64)
        variant = np.empty(n, dtype=np.int64)
        for d in range(10):
            sel = lab == d
            pool = self._variants[d]
            variant[sel] = pool[gen.integers(0, len(pool), int(sel.sum()))]
        theta = np.deg2rad(gen.uniform(-self.rot_deg, self.rot_deg, n))
        sy = gen.uniform(*self.scale_range, n)
        sx = gen.uniform(*self.scale_range, n)
        shear = gen.uniform(-self.shear, self.shear, n)
        ty = gen.uniform(-self.translate, self.translate, n)
        tx = gen.uniform(-self.translate, self.translate, n)
        amp = gen.uniform(0.3, self.wobble_amp, (n, 2))
        freq = gen.uniform(*self.wobble_freq, (n, 2))
        phase = gen.uniform(0, 2 * np.pi, (n, 2))
        thick = gen.uniform(*self.thickness, n)
        gain = gen.uniform(*self.intensity, n)

        # inverse warp: output pixel -> template point
        cos, sin = np.cos(theta), np.sin(theta)
        gy = self._gy[None, :] - ty[:, None]
        gx = self._gx[None, :] - tx[:, None]
        ry = cos[:, None] * gy - sin[:, None] * gx
        rx = sin[:, None] * gy + cos[:, None] * gx
        rx = rx - shear[:, None] * ry
        ry = ry / sy[:, None]
        rx = rx / sx[:, None]
        ry = ry + amp[:, :1] * np.sin(2 * np.pi * freq[:, :1] * gx + phase[:, :1])
        rx = rx + amp[:, 1:] * np.sin(2 * np.pi * freq[:, 1:] * gy + phase[:, 1:])

        # to 4x template coordinates, bilinear with zero padding
        py = (ry + (SIZE - 1) / 2) * SCALE + (SCALE - 1) / 2
        px = (rx + (SIZE - 1) / 2) * SCALE + (SCALE - 1) / 2
        y0 = np.floor(py).astype(np.int64)
        x0 = np.floor(px).astype(np.int64)
        fy = (py - y0).astype(np.float32)
        fx = (px - x0).astype(np.float32)

        n_templates = len(self.templates)
        flat_templates = self.templates.reshape(n_templates, -1)
        padded = np.concatenate(
            [flat_templates, np.zeros((n_templates, 1), dtype=np.float32)], axis=1
        )
        acc = np.zeros((n, SIZE * SIZE), dtype=np.float32)
        var_col = variant[:, None]
        for dy, dx, w in (
            (0, 0, (1 - fy) * (1 - fx)),
            (0, 1, (1 - fy) * fx),
            (1, 0, fy * (1 - fx)),
            (1, 1, fy * fx),
        ):
            yy, xx = y0 + dy, x0 + dx
            ok = (yy >= 0) & (yy < _T) & (xx >= 0) & (xx < _T)
            idx = np.where(ok, yy * _T + xx, _T * _T)
            acc += padded[var_col, idx] * np.where(ok, w, 0)

        acc = acc ** thick[:, None].astype(np.float32)
        acc *= gain[:, None]
        acc += gen.normal(0, self.noise_sigma, acc.shape)
        return np.clip(acc, 0, 1).reshape(n, SIZE, SIZE)


def generate_digit_corpus(n_train: int, n_test: int, seed: int,
                          renderer: DigitRenderer | None = None):
    """Balanced synthetic corpus as float arrays in [0, 1]."""
    renderer = renderer or DigitRenderer()
    gen = stream(seed, 0, "synth-digits")
    train_labels = gen.permuted(np.arange(n_train) % 10).astype(np.int64)
    test_labels = gen.permuted(np.arange(n_test) % 10).astype(np.int64)
    train = renderer.draw(train_labels, gen)
    test = renderer.draw(test_labels, gen)
    return train, train_labels, test, test_labels


def write_digit_corpus(out_dir: str, n_train: int, n_test: int, seed: int):
    """Generate the corpus and write the four standard IDX files."""
    os.makedirs(out_dir, exist_ok=True)
    train, train_labels, test, test_labels = generate_digit_corpus(
        n_train, n_test, seed
    )
    write_idx_images(os.path.join(out_dir, TRAIN_IMAGES), train)
    write_idx_labels(os.path.join(out_dir, TRAIN_LABELS), train_labels)
    write_idx_images(os.path.join(out_dir, TEST_IMAGES), test)
    write_idx_labels(os.path.join(out_dir, TEST_LABELS), test_labels)
    return out_dir
