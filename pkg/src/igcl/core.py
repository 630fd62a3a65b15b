"""Domain types, shape conventions and seeded randomness shared across the package.

Images are exposed as ``height x width x channels`` float arrays in ``[0, 1]``;
the torch modules work on ``N x C x H x W`` tensors internally.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

# Human parsing class table (18 parts). Index = label value in a parse map.
PARSE_CLASSES = (
    "Background",
    "Hat",
    "Hair",
    "Sunglasses",
    "Upper-clothes",
    "Skirt",
    "Pants",
    "Dress",
    "Belt",
    "Left-shoe",
    "Right-shoe",
    "Face",
    "Left-leg",
    "Right-leg",
    "Left-arm",
    "Right-arm",
    "Bag",
    "Scarf",
)
NUM_PARSE_CLASSES = len(PARSE_CLASSES)
CLASS_INDEX = {name: i for i, name in enumerate(PARSE_CLASSES)}

FULL_INPUT_SIZE = (384, 128)
TINY_INPUT_SIZE = (64, 32)
FULL_FEATURE_DIM = 768
TINY_FEATURE_DIM = 64


class DataError(ValueError):
    """Raised for malformed images, parse maps or dataset layouts."""


def check_image(image: np.ndarray, name: str = "image") -> np.ndarray:
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise DataError(f"{name}: expected HxWxC with C in (1, 3), got shape {image.shape}")
    if image.shape[0] <= 0 or image.shape[1] <= 0:
        raise DataError(f"{name}: empty spatial size {image.shape[:2]}")
    if image.size and (image.min() < 0.0 or image.max() > 1.0):
        raise DataError(f"{name}: values must lie in [0, 1]")
    return image


def check_parse(parse: np.ndarray, name: str = "parse map") -> np.ndarray:
    if parse.ndim != 2:
        raise DataError(f"{name}: expected HxW label map, got shape {parse.shape}")
    if parse.size and (parse.min() < 0 or parse.max() >= NUM_PARSE_CLASSES):
        bad = int(parse.max()) if parse.max() >= NUM_PARSE_CLASSES else int(parse.min())
        raise DataError(f"{name}: unknown class index {bad} (valid 0..{NUM_PARSE_CLASSES - 1})")
    return parse


@dataclass(frozen=True, eq=False)
class ImageSample:
    image: np.ndarray
    parse: np.ndarray
    identity: int
    camera: int
    clothing: Optional[int] = None
    name: str = ""

    def __post_init__(self):
        check_image(self.image, self.name or "image")
        check_parse(self.parse, self.name or "parse map")
        if self.image.shape[:2] != self.parse.shape:
            raise DataError(
                f"{self.name}: image {self.image.shape[:2]} and parse map {self.parse.shape} differ in size"
            )
        if self.identity < 0 or self.camera < 0:
            raise DataError(f"{self.name}: identity and camera must be >= 0")


@dataclass(frozen=True)
class Batch:
    """P identities x K images, grouped contiguously by identity."""

    indices: tuple[int, ...]
    labels: tuple[int, ...]
    P: int
    K: int
    samples: tuple[ImageSample, ...] = field(default=(), repr=False)

    def __post_init__(self):
        if len(self.indices) != self.P * self.K or len(self.labels) != self.P * self.K:
            raise ValueError(f"batch holds {len(self.indices)} entries, expected P*K={self.P * self.K}")
        groups = [self.labels[i * self.K:(i + 1) * self.K] for i in range(self.P)]
        if any(len(set(g)) != 1 for g in groups):
            raise ValueError("each block of K consecutive entries must share one identity")
        if len({g[0] for g in groups}) != self.P:
            raise ValueError("batch must contain P distinct identities")


def seeded_rng(seed: int) -> np.random.Generator:
    """Deterministic stream for sampling and pairing; one per owner, never shared."""
    if seed < 0 or seed >= 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.random.Generator(np.random.PCG64(seed))


def stack_images(images: Sequence[np.ndarray]):
    """HxWxC arrays -> float32 NCHW tensor."""
    import torch

    arr = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))
