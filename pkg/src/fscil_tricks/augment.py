"""Augmentation pipelines.

Three distinct uses: light stochastic views for contrastive objectives,
hard deterministic transforms that create pseudo-classes during base
training, and 90-degree rotations for the four-way pretext task. Images
are H x W x C float arrays in [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from fscil_tricks.errors import ConfigError, DataError
from fscil_tricks.seeding import numpy_rng

Transform = Callable[[np.ndarray], np.ndarray]

HARD_TRANSFORMS: dict[str, Transform] = {
    "rot180": lambda img: np.rot90(img, 2, axes=(0, 1)).copy(),
    "flip_h": lambda img: img[:, ::-1].copy(),
    "flip_v": lambda img: img[::-1].copy(),
}


@dataclass(frozen=True)
class PseudoClassScheme:
    """Label-space expansion by M-1 hard transforms of the base classes."""

    C0: int
    transform_names: tuple[str, ...] = ("rot180",)

    def __post_init__(self):
        if self.C0 < 1:
            raise ConfigError("pseudo-class scheme needs at least one base class")
        unknown = [t for t in self.transform_names if t not in HARD_TRANSFORMS]
        if unknown:
            raise ConfigError(f"unknown hard transforms {unknown}; known: {sorted(HARD_TRANSFORMS)}")

    @property
    def M(self) -> int:
        return len(self.transform_names) + 1

    @property
    def n_labels(self) -> int:
        return self.C0 * self.M


def make_pseudo_scheme(C0: int, M: int = 2) -> PseudoClassScheme:
    """Scheme with the first M-1 built-in hard transforms."""
    if M < 1:
        raise ConfigError(f"pseudo multiplier must be >= 1, got {M}")
    names = tuple(HARD_TRANSFORMS)
    if M - 1 > len(names):
        raise ConfigError(f"only {len(names)} built-in hard transforms, need {M - 1}")
    return PseudoClassScheme(C0, names[: M - 1])


def pseudo_label(scheme: PseudoClassScheme, class_id: int, m: int) -> int:
    """Label of class ``class_id`` under transform index ``m``.

    m=0 is the identity (original class); m >= 1 maps into a disjoint block
    of pseudo-labels, for a total label space of C0 * M.
    """
    if not 0 <= class_id < scheme.C0:
        raise DataError(f"class id {class_id} outside [0, {scheme.C0})")
    if not 0 <= m < scheme.M:
        raise DataError(f"transform index {m} outside [0, {scheme.M})")
    return class_id if m == 0 else scheme.C0 * m + class_id


def apply_pseudo_transform(scheme: PseudoClassScheme, image: np.ndarray, m: int) -> np.ndarray:
    """Apply transform index ``m``; m=0 returns the image unchanged."""
    if not 0 <= m < scheme.M:
        raise DataError(f"transform index {m} outside [0, {scheme.M})")
    if m == 0:
        return image
    return HARD_TRANSFORMS[scheme.transform_names[m - 1]](image)


def make_rotation_example(
    image: np.ndarray,
    rotation_index: int | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, int]:
    """Rotate by 0/90/180/270 degrees and return (image, rotation label)."""
    if image.shape[0] != image.shape[1]:
        raise DataError(f"rotation pretext needs square images, got {image.shape[:2]}")
    if rotation_index is None:
        if rng is None:
            raise DataError("need either a rotation index or an rng to sample one")
        rotation_index = int(rng.integers(0, 4))
    if not 0 <= rotation_index <= 3:
        raise DataError(f"rotation index must be in 0..3, got {rotation_index}")
    return np.rot90(image, rotation_index, axes=(0, 1)).copy(), rotation_index


@dataclass(frozen=True)
class AugmentRecipe:
    """Light stochastic view augmentation: crop-resize, flip, color jitter."""

    crop_scale: tuple[float, float] = (0.6, 1.0)
    flip_prob: float = 0.5
    jitter: float = 0.2

    def __post_init__(self):
        lo, hi = self.crop_scale
        if not 0 < lo <= hi <= 1.0:
            raise ConfigError(f"crop_scale must satisfy 0 < lo <= hi <= 1, got {self.crop_scale}")
        if not 0 <= self.flip_prob <= 1:
            raise ConfigError("flip_prob must be in [0, 1]")
        if self.jitter < 0:
            raise ConfigError("jitter must be non-negative")


IDENTITY_RECIPE = AugmentRecipe(crop_scale=(1.0, 1.0), flip_prob=0.0, jitter=0.0)


def augment_view(image: np.ndarray, rng: np.random.Generator, recipe: AugmentRecipe) -> np.ndarray:
    """One stochastic view; all draws come from ``rng`` in a fixed order."""
    img = image
    h, w = img.shape[:2]
    lo, hi = recipe.crop_scale
    if hi < 1.0 or lo < hi:
        scale = float(rng.uniform(lo, hi))
        if scale < 1.0:
            ch = max(1, round(h * scale))
            cw = max(1, round(w * scale))
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            crop = img[top : top + ch, left : left + cw]
            # Nearest-neighbor resize back to (h, w).
            yi = (np.arange(h) * ch // h).astype(np.intp)
            xi = (np.arange(w) * cw // w).astype(np.intp)
            img = crop[yi][:, xi]
    if recipe.flip_prob > 0 and rng.uniform() < recipe.flip_prob:
        img = img[:, ::-1]
    if recipe.jitter > 0:
        gains = 1.0 + rng.uniform(-recipe.jitter, recipe.jitter, size=img.shape[-1])
        shift = rng.uniform(-recipe.jitter, recipe.jitter) * 0.5
        img = np.clip(img * gains + shift, 0.0, 1.0)
    return np.ascontiguousarray(img, dtype=np.float32)


def make_contrastive_views(
    image: np.ndarray, seed: int, recipe: AugmentRecipe
) -> tuple[np.ndarray, np.ndarray]:
    """Two stochastic views of one image, deterministic under the seed."""
    rng = numpy_rng("views", seed)
    return augment_view(image, rng, recipe), augment_view(image, rng, recipe)
