"""Mask derivation and image composition from human parse maps."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from igcl import kernels
from igcl.core import CLASS_INDEX, NUM_PARSE_CLASSES, DataError, check_image, check_parse


@dataclass(frozen=True)
class ClassPartition:
    clothes_classes: frozenset
    upper_classes: frozenset
    foreground_classes: frozenset

    def __post_init__(self):
        if not (self.upper_classes <= self.clothes_classes <= self.foreground_classes):
            raise ValueError("class partition must satisfy upper <= clothes <= foreground")
        if 0 in self.foreground_classes:
            raise ValueError("background (0) cannot be a foreground class")

    @classmethod
    def from_names(cls, clothes: Iterable[str], upper: Iterable[str], foreground: Iterable[str] | None = None):
        fg = range(1, NUM_PARSE_CLASSES) if foreground is None else (CLASS_INDEX[n] for n in foreground)
        return cls(
            clothes_classes=frozenset(CLASS_INDEX[n] for n in clothes),
            upper_classes=frozenset(CLASS_INDEX[n] for n in upper),
            foreground_classes=frozenset(fg),
        )

    def lut(self) -> np.ndarray:
        table = np.zeros(256, dtype=np.uint8)
        for c in self.foreground_classes:
            table[c] |= 1
        for c in self.clothes_classes:
            table[c] |= 2
        for c in self.upper_classes:
            table[c] |= 4
        return table


DEFAULT_PARTITION = ClassPartition.from_names(
    clothes=("Upper-clothes", "Skirt", "Pants", "Dress"),
    upper=("Upper-clothes", "Dress"),
)


@dataclass(frozen=True)
class MaskSet:
    clothes: np.ndarray
    foreground: np.ndarray
    upper: np.ndarray


def derive_masks(parse: np.ndarray, partition: ClassPartition = DEFAULT_PARTITION) -> MaskSet:
    check_parse(parse)
    fg, clothes, upper = kernels.label_masks(parse, partition.lut())
    return MaskSet(clothes=clothes, foreground=fg, upper=upper)


def _same_size(image: np.ndarray, mask: np.ndarray):
    if image.shape[:2] != mask.shape:
        raise DataError(f"image {image.shape[:2]} and mask {mask.shape} differ in size")


def compose_foreground(image: np.ndarray, masks: MaskSet) -> np.ndarray:
    _same_size(image, masks.foreground)
    return image * masks.foreground[..., None].astype(image.dtype)


def compose_shielding(foreground_image: np.ndarray, masks: MaskSet) -> np.ndarray:
    """Foreground image with every upper-clothes pixel overwritten by 1."""
    _same_size(foreground_image, masks.upper)
    out = foreground_image.copy()
    out[masks.upper.astype(bool)] = 1.0
    return out


def degrade_clothing(image: np.ndarray, masks: MaskSet, alpha: float = 0.1) -> np.ndarray:
    """Replace clothes pixels (all channels) by the weight ``alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    _same_size(image, masks.clothes)
    out = image.copy()
    out[masks.clothes.astype(bool)] = alpha
    return out


def target_scales(input_size: tuple[int, int]) -> list[tuple[int, int]]:
    """Spatial sizes of the three distillation targets (strides 4, 8, 16)."""
    h, w = input_size
    return [(h // s, w // s) for s in (4, 8, 16)]


def multiscale_targets(degraded: np.ndarray, input_size: tuple[int, int] = (384, 128)) -> list[np.ndarray]:
    """Grayscale block means of the degraded image at strides 4, 8 and 16."""
    check_image(degraded, "degraded image")
    h, w = input_size
    if degraded.shape[:2] != (h, w) or h % 16 or w % 16:
        raise DataError(f"degraded image must be {h}x{w} (multiple of 16), got {degraded.shape[:2]}")
    gray = degraded.mean(axis=2)
    out = []
    for th, tw in target_scales(input_size):
        s = h // th
        out.append(gray.reshape(th, s, tw, s).mean(axis=(1, 3)))
    return out


def encode_sample(image: np.ndarray, parse: np.ndarray, alpha: float = 0.1,
                  partition: ClassPartition = DEFAULT_PARTITION, shielding_mode: str = "fg_shield") -> dict:
    """All encoder products for one image.

    ``shielding_mode`` selects the PIE input: ``orig`` (raw image),
    ``orig_shield`` (raw image, upper clothes set to 1) or ``fg_shield``.
    """
    masks = derive_masks(parse, partition)
    fg = compose_foreground(image, masks)
    if shielding_mode == "fg_shield":
        pie_input = compose_shielding(fg, masks)
    elif shielding_mode == "orig_shield":
        pie_input = compose_shielding(image, masks)
    elif shielding_mode == "orig":
        pie_input = image
    else:
        raise ValueError(f"unknown shielding mode {shielding_mode!r}")
    degraded = degrade_clothing(image, masks, alpha)
    return {
        "masks": masks,
        "foreground": fg,
        "pie_input": pie_input,
        "degraded": degraded,
        "targets": multiscale_targets(degraded, image.shape[:2]),
    }
