"""Small image augmentations: integer shifts, rotation and horizontal flip."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

__all__ = ["AugmentParams", "augment", "shift_image", "rotate_image", "hflip", "augment_dataset"]


@dataclass(frozen=True)
class AugmentParams:
    """Bounds of the random transforms.

    Shifts are fractions of the image width/height; ``flip_prob`` is the
    chance of a horizontal flip when ``horizontal_flip`` is set.
    """

    shift_x: float = 0.0
    shift_y: float = 0.0
    rotation: float = 0.0
    horizontal_flip: bool = False
    flip_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.shift_x <= 0.5 and 0.0 <= self.shift_y <= 0.5):
            raise ValueError("shift fractions must lie in [0, 0.5]")
        if not 0.0 <= self.rotation <= 45.0:
            raise ValueError("rotation must lie in [0, 45] degrees")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must lie in [0, 1]")

    @property
    def is_identity(self) -> bool:
        return self.shift_x == 0 and self.shift_y == 0 and self.rotation == 0 and not self.horizontal_flip


def shift_image(image: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Move content ``dx`` pixels right and ``dy`` down, filling with zeros."""
    out = np.zeros_like(image)
    h, w = image.shape[:2]
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_y = slice(max(-dy, 0), h - max(dy, 0))
    dst_y = slice(max(dy, 0), h - max(-dy, 0))
    src_x = slice(max(-dx, 0), w - max(dx, 0))
    dst_x = slice(max(dx, 0), w - max(-dx, 0))
    out[dst_y, dst_x] = image[src_y, src_x]
    return out


def rotate_image(image: np.ndarray, degrees: float) -> np.ndarray:
    if degrees == 0:
        return image.copy()
    return ndimage.rotate(image, degrees, axes=(1, 0), reshape=False, order=1, mode="constant", cval=0.0)


def hflip(image: np.ndarray) -> np.ndarray:
    return image[:, ::-1].copy()


def augment(image, params: AugmentParams, rng: np.random.Generator) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if params.is_identity:
        return image.copy()
    h, w = image.shape[:2]
    max_dx = int(round(params.shift_x * w))
    max_dy = int(round(params.shift_y * h))
    dx = int(rng.integers(-max_dx, max_dx + 1)) if max_dx else 0
    dy = int(rng.integers(-max_dy, max_dy + 1)) if max_dy else 0
    angle = float(rng.uniform(-params.rotation, params.rotation)) if params.rotation else 0.0
    out = rotate_image(image, angle)
    out = shift_image(out, dx, dy)
    if params.horizontal_flip and rng.random() < params.flip_prob:
        out = hflip(out)
    return out


def augment_dataset(images, labels, params: AugmentParams, copies: int, rng: Optional[np.random.Generator] = None):
    """Append ``copies`` augmented versions of every image to the set."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    if copies <= 0:
        return images, labels
    rng = rng if rng is not None else np.random.default_rng(params.seed)
    extra = np.stack([augment(img, params, rng) for _ in range(copies) for img in images])
    return np.concatenate([images, extra]), np.concatenate([labels, np.tile(labels, copies)])
