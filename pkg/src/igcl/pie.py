"""Pedestrian identity enhancement stream: affine head-shoulder crop + separate backbone."""
from __future__ import annotations

from typing import NamedTuple, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from igcl.backbone import Backbone, BackboneConfig, BackboneOutput, init_backbone

CROP_FRACTION = 0.3


def crop_prior(fraction: float = CROP_FRACTION) -> torch.Tensor:
    """Affine matrix sampling the top ``fraction`` of the height, full width."""
    return torch.tensor([[1.0, 0.0, 0.0], [0.0, fraction, fraction - 1.0]])


def stn_sample(image: torch.Tensor, theta: torch.Tensor, out_size: Optional[tuple[int, int]] = None) -> torch.Tensor:
    """Bilinear sampling of ``image`` (N x C x H x W) on the grid induced by ``theta`` (N x 2 x 3).

    Normalised coordinates in [-1, 1] address pixel edges; samples outside
    the image read as 0.
    """
    n, c, h, w = image.shape
    oh, ow = out_size or (h, w)
    grid = F.affine_grid(theta, [n, c, oh, ow], align_corners=False)
    return F.grid_sample(image, grid, mode="bilinear", padding_mode="zeros", align_corners=False)


class Localization(nn.Module):
    """Small conv + fc regressor; final layer zero-initialised with the crop prior as bias."""

    def __init__(self, hidden: int = 32):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, 8, 5, stride=2, padding=2),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(2),
            nn.Conv2d(8, 16, 3, stride=1, padding=1),
            nn.ReLU(inplace=True),
            nn.AdaptiveAvgPool2d((4, 2)),
        )
        self.fc = nn.Sequential(nn.Linear(16 * 4 * 2, hidden), nn.ReLU(inplace=True))
        self.regressor = nn.Linear(hidden, 6)
        nn.init.zeros_(self.regressor.weight)
        with torch.no_grad():
            self.regressor.bias.copy_(crop_prior().flatten())

    def forward(self, x):
        return self.regressor(self.fc(self.features(x).flatten(1))).view(-1, 2, 3)


class PieOutput(NamedTuple):
    theta: torch.Tensor
    crop: torch.Tensor
    out: BackboneOutput


class PieStream(nn.Module):
    def __init__(self, backbone: Backbone):
        super().__init__()
        self.localization = Localization()
        self.backbone = backbone

    def stn_localize(self, shielding: torch.Tensor) -> torch.Tensor:
        return self.localization(shielding)

    def forward(self, shielding: torch.Tensor) -> PieOutput:
        theta = self.stn_localize(shielding)
        crop = stn_sample(shielding, theta)
        return PieOutput(theta, crop, self.backbone(crop))


def init_pie(config: BackboneConfig, seed: int, pretrained: Optional[str] = None) -> PieStream:
    """Separate-weight backbone (seeded differently from the main one) + localisation net."""
    backbone = init_backbone(config, seed, pretrained)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed + 1)
        return PieStream(backbone)


def sampled_box(theta: torch.Tensor, size: tuple[int, int]) -> tuple[float, float, float, float]:
    """Pixel bounding box (y0, x0, y1, x1) of the region read by ``theta``."""
    h, w = size
    corners = torch.tensor([[-1.0, -1.0, 1.0], [1.0, -1.0, 1.0], [-1.0, 1.0, 1.0], [1.0, 1.0, 1.0]], dtype=theta.dtype)
    pts = corners @ theta.T  # (x, y) in normalised coords
    xs = ((pts[:, 0] + 1) * w / 2).clamp(0, w)
    ys = ((pts[:, 1] + 1) * h / 2).clamp(0, h)
    return float(ys.min()), float(xs.min()), float(ys.max()), float(xs.max())


def box_iou(a, b) -> float:
    y0, x0 = max(a[0], b[0]), max(a[1], b[1])
    y1, x1 = min(a[2], b[2]), min(a[3], b[3])
    inter = max(y1 - y0, 0.0) * max(x1 - x0, 0.0)
    area = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / area if area > 0 else 0.0
