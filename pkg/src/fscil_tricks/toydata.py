"""Deterministic synthetic image dataset for desk-scale runs.

Ten parametric shape classes rendered onto small RGB images with per-sample
position/scale jitter, random tint, and Gaussian noise. Every pattern is
asymmetric under 180-degree rotation, so hard-transform pseudo-classes and
the rotation pretext remain well posed. Classes 6/7 (ring with a gap at the
top vs. the right) and 8/9 (offset diagonal bands) form confusable pairs
intended for the incremental sessions.
"""

from __future__ import annotations

import numpy as np

from fscil_tricks.errors import DataError
from fscil_tricks.protocol import Dataset, LabeledSample
from fscil_tricks.seeding import numpy_rng

N_PATTERNS = 10


def _pattern_mask(label: int, yy: np.ndarray, xx: np.ndarray, scale: float) -> np.ndarray:
    """Boolean foreground mask on the jittered [0,1]^2 grid."""
    if label == 0:  # disk, upper-left
        return (yy - 0.35) ** 2 + (xx - 0.35) ** 2 < (0.22 * scale) ** 2
    if label == 1:  # square outline, lower-right
        h = 0.24 * scale
        d = np.maximum(np.abs(yy - 0.62), np.abs(xx - 0.62))
        return (d < h) & (d > h - 0.12)
    if label == 2:  # horizontal bar, upper third
        return (yy > 0.15) & (yy < 0.15 + 0.16 * scale) & (xx > 0.1) & (xx < 0.9)
    if label == 3:  # vertical bar, center-right
        return (xx > 0.45) & (xx < 0.45 + 0.16 * scale) & (yy > 0.1) & (yy < 0.9)
    if label == 4:  # triangle, apex up
        return (yy > 0.2) & (yy < 0.8) & (np.abs(xx - 0.5) < (yy - 0.2) * 0.55 * scale)
    if label == 5:  # two dots on the main diagonal, off-center
        r2 = (0.11 * scale) ** 2
        a = (yy - 0.3) ** 2 + (xx - 0.35) ** 2 < r2
        b = (yy - 0.55) ** 2 + (xx - 0.62) ** 2 < r2
        return a | b
    if label in (6, 7):  # ring with a gap toward the top (6) or the right (7)
        r = np.sqrt((yy - 0.5) ** 2 + (xx - 0.5) ** 2)
        ring = np.abs(r - 0.3 * scale) < 0.07
        ang = np.arctan2(yy - 0.5, xx - 0.5)
        gap_at = -np.pi * 0.5 if label == 6 else -np.pi * 0.15
        diff = np.angle(np.exp(1j * (ang - gap_at)))
        return ring & (np.abs(diff) > 0.55)
    if label == 8:  # diagonal band just above the main diagonal
        return np.abs((yy - xx) + 0.13) < 0.085 * scale
    if label == 9:  # diagonal band just below the main diagonal
        return np.abs((yy - xx) - 0.13) < 0.085 * scale
    raise DataError(f"no pattern for class {label}; {N_PATTERNS} available")


def render_sample(
    label: int, image_size: int, noise: float, rng: np.random.Generator
) -> np.ndarray:
    dy, dx = rng.uniform(-0.1, 0.1, size=2)
    scale = rng.uniform(0.85, 1.2)
    grid = (np.arange(image_size) + 0.5) / image_size
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    mask = _pattern_mask(label, yy - dy, xx - dx, scale)

    background = rng.uniform(0.05, 0.25)
    tint = 0.35 + 0.4 * rng.uniform(size=3)
    img = np.full((image_size, image_size, 3), background, dtype=np.float64)
    img[mask] = tint
    img += rng.normal(0.0, noise, size=img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def make_toy_dataset(
    n_classes: int = 10,
    train_per_class: int = 48,
    test_per_class: int = 16,
    image_size: int = 16,
    noise: float = 0.1,
    seed: int = 0,
) -> Dataset:
    """Generate the bundled shape dataset; deterministic given the seed."""
    if not 1 <= n_classes <= N_PATTERNS:
        raise DataError(f"n_classes must be in [1, {N_PATTERNS}], got {n_classes}")
    train: list[LabeledSample] = []
    test: list[LabeledSample] = []
    for split, count, sink in (("train", train_per_class, train), ("test", test_per_class, test)):
        for label in range(n_classes):
            for idx in range(count):
                rng = numpy_rng("toy", seed, split, label, idx)
                img = render_sample(label, image_size, noise, rng)
                sink.append(
                    LabeledSample(img, label, f"toy-{split}-{label:02d}-{idx:04d}")
                )
    return Dataset(tuple(train), tuple(test))
