"""Semantic attention and body jigsaw stream.

The stream has no weights of its own: jigsawed foreground images go through
the very same backbone module as the original images.
"""
from __future__ import annotations

from dataclasses import dataclass

from igcl.backbone import Backbone, BackboneOutput
from igcl.core import Batch


@dataclass(frozen=True)
class JigsawPlan:
    pairs: tuple[tuple[int, int], ...]
    split_row: int

    def check(self, labels):
        used = [i for p in self.pairs for i in p]
        if len(used) != len(set(used)):
            raise ValueError("jigsaw pairs must not reuse an index")
        for a, b in self.pairs:
            if labels[a] != labels[b]:
                raise ValueError(f"jigsaw pair ({a}, {b}) mixes identities")


def plan_jigsaw(batch: Batch, height: int) -> JigsawPlan:
    """Pair the first two images of every identity block in the batch."""
    pairs = tuple((p * batch.K, p * batch.K + 1) for p in range(batch.P)) if batch.K >= 2 else ()
    plan = JigsawPlan(pairs=pairs, split_row=(height + 1) // 2)
    plan.check(batch.labels)
    return plan


def apply_jigsaw(images, plan: JigsawPlan, height_axis: int = 1):
    """Swap lower halves within each pair.

    ``images`` is a stacked array or tensor with the sample axis first;
    ``height_axis`` is 1 for NHWC numpy arrays and 2 for NCHW tensors.
    """
    n = len(images)
    out = images.clone() if hasattr(images, "clone") else images.copy()
    lower = [slice(None)] * (images.ndim - 1)
    lower[height_axis - 1] = slice(plan.split_row, None)
    lower = tuple(lower)
    for a, b in plan.pairs:
        if not (0 <= a < n and 0 <= b < n):
            raise IndexError(f"jigsaw pair ({a}, {b}) out of range for {n} images")
        out[a][lower] = images[b][lower]
        out[b][lower] = images[a][lower]
    return out


def saj_forward(images, backbone: Backbone) -> BackboneOutput:
    return backbone(images)
