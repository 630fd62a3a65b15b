"""Classification, triplet, mid-level and high-level collaborative losses.

Every function is dtype-generic so the same code serves float32 training and
float64 gradient checks.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class LossWeights:
    cls: float = 1.0
    tri: float = 1.0
    mcl: float = 1.0
    hcl: float = 1.0
    margin: float = 0.3

    def __post_init__(self):
        for name in ("cls", "tri", "mcl", "hcl", "margin"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {name}={v} must be finite and >= 0")


@dataclass
class LossReport:
    cls: float
    tri: float
    mcl: float
    hcl: float
    total: float
    cls_heads: dict = field(default_factory=dict)
    tri_heads: dict = field(default_factory=dict)
    hcl_heads: dict = field(default_factory=dict)
    tensor: Optional[torch.Tensor] = field(default=None, repr=False, compare=False)

    def terms(self) -> dict:
        return {"cls": self.cls, "tri": self.tri, "mcl": self.mcl, "hcl": self.hcl}


def classification_loss(logits: Mapping[str, torch.Tensor], labels: torch.Tensor):
    """Sum over heads of the mean softmax cross-entropy; returns (total, per-head)."""
    heads = {}
    for name, z in logits.items():
        if labels.min() < 0 or labels.max() >= z.shape[1]:
            raise ValueError(f"label out of range for head {name!r} with {z.shape[1]} classes")
        heads[name] = F.cross_entropy(z, labels)
    return _sum(heads), heads


def sample_triplets(labels: Sequence[int], rng: np.random.Generator) -> np.ndarray:
    """One random positive and negative per anchor, rows (anchor, pos, neg).

    Anchors without a positive or a negative are skipped.
    """
    labels = np.asarray(labels)
    rows = []
    for i, y in enumerate(labels):
        pos = np.flatnonzero(labels == y)
        pos = pos[pos != i]
        neg = np.flatnonzero(labels != y)
        if len(pos) == 0 or len(neg) == 0:
            continue
        rows.append((i, pos[rng.integers(len(pos))], neg[rng.integers(len(neg))]))
    return np.asarray(rows, dtype=np.int64).reshape(-1, 3)


def triplet_loss(features: Mapping[str, torch.Tensor], labels, margin: float = 0.3,
                 rng: Optional[np.random.Generator] = None, triplets: Optional[np.ndarray] = None):
    """Hinge on Euclidean distances over randomly sampled triplets.

    The same (anchor, positive, negative) indices serve every feature set;
    returns (sum over feature sets, per-set means).
    """
    if triplets is None:
        if rng is None:
            raise ValueError("triplet_loss needs an rng or precomputed triplets")
        triplets = sample_triplets(np.asarray(labels), rng)
    heads = {}
    for name, x in features.items():
        if len(triplets) == 0:
            heads[name] = x.sum() * 0.0
            continue
        a, p, n = (torch.as_tensor(triplets[:, k]) for k in range(3))
        d_ap = torch.linalg.vector_norm(x[a] - x[p], dim=1)
        d_an = torch.linalg.vector_norm(x[a] - x[n], dim=1)
        heads[name] = F.relu(margin + d_ap - d_an).mean()
    return _sum(heads), heads


def midlevel_collab_loss(attention: Sequence[torch.Tensor], targets: Sequence[torch.Tensor]) -> torch.Tensor:
    """Sum over scales of the per-pixel mean squared difference (averaged over the batch)."""
    if len(attention) != len(targets):
        raise ValueError("attention maps and targets differ in number of scales")
    total = None
    for f, t in zip(attention, targets):
        if f.shape != t.shape:
            raise ValueError(f"attention map {tuple(f.shape)} and target {tuple(t.shape)} differ in shape")
        term = ((f - t) ** 2).mean()
        total = term if total is None else total + term
    return total


def _moments(x: torch.Tensor, use_std: bool):
    mu = x.mean(dim=0)
    var = x.var(dim=0, unbiased=False)
    return mu, (var.clamp_min(1e-12).sqrt() if use_std else var)


def highlevel_collab_loss(x_sem: Optional[torch.Tensor], x_deg: Optional[torch.Tensor], x_ori: torch.Tensor,
                          use_std: bool = False):
    """Match per-dimension batch mean and (population) variance of sem/deg to ori.

    Returns (total, per-stream). ``use_std`` swaps variance for standard
    deviation.
    """
    if x_ori.shape[0] < 2:
        raise ValueError("high-level loss needs a batch of at least 2")
    mu_o, s_o = _moments(x_ori, use_std)
    heads = {}
    for name, x in (("sem", x_sem), ("deg", x_deg)):
        if x is None:
            continue
        if x.shape != x_ori.shape:
            raise ValueError(f"x_{name} {tuple(x.shape)} does not match x_ori {tuple(x_ori.shape)}")
        mu, s = _moments(x, use_std)
        heads[name] = ((mu - mu_o) ** 2).sum() + ((s - s_o) ** 2).sum()
    return _sum(heads, like=x_ori), heads


def total_loss(terms: Mapping[str, Optional[torch.Tensor]], weights: LossWeights = LossWeights(),
               cls_heads=None, tri_heads=None, hcl_heads=None) -> LossReport:
    """Weighted sum; missing (disabled) terms count as 0."""
    lam = {"cls": weights.cls, "tri": weights.tri, "mcl": weights.mcl, "hcl": weights.hcl}
    tensor = None
    values = {}
    for name, w in lam.items():
        t = terms.get(name)
        values[name] = 0.0 if t is None else float(t.detach())
        if t is not None and w != 0.0:
            tensor = w * t if tensor is None else tensor + w * t
    total = sum(lam[k] * values[k] for k in lam)
    return LossReport(
        total=total,
        cls_heads=_floats(cls_heads),
        tri_heads=_floats(tri_heads),
        hcl_heads=_floats(hcl_heads),
        tensor=tensor,
        **values,
    )


def check_finite(report: LossReport) -> None:
    for name, v in report.terms().items():
        if not np.isfinite(v):
            raise FloatingPointError(f"non-finite {name} loss ({v})")


def _sum(heads: dict, like: Optional[torch.Tensor] = None):
    if not heads:
        return None if like is None else like.sum() * 0.0
    vals = list(heads.values())
    out = vals[0]
    for v in vals[1:]:
        out = out + v
    return out


def _floats(d) -> dict:
    return {k: float(v.detach()) for k, v in (d or {}).items()}
