"""Clothing attention degradation stream.

A five-stage residual trunk in which each of stages 1-3 is followed by a
spatial attention head (two 1x1 convolutions, ReLU then sigmoid); the next
stage consumes the attention-weighted map. The final map is pooled (max +
average) and projected to the degradation feature.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from igcl.core import FULL_FEATURE_DIM, FULL_INPUT_SIZE, TINY_FEATURE_DIM, TINY_INPUT_SIZE


@dataclass(frozen=True)
class TrunkConfig:
    num_classes: int
    input_size: tuple[int, int] = FULL_INPUT_SIZE
    base_width: int = 64
    blocks: tuple[int, int, int, int] = (3, 4, 6, 3)
    feature_dim: int = FULL_FEATURE_DIM
    attention_reduction: int = 16

    def __post_init__(self):
        h, w = self.input_size
        if h % 16 or w % 16:
            raise ValueError(f"trunk input {self.input_size} must be a multiple of 16")

    @classmethod
    def full(cls, num_classes: int, **kw) -> "TrunkConfig":
        return cls(num_classes=num_classes, **kw)

    @classmethod
    def tiny(cls, num_classes: int, **kw) -> "TrunkConfig":
        base = dict(input_size=TINY_INPUT_SIZE, base_width=8, blocks=(1, 1, 1, 1), feature_dim=TINY_FEATURE_DIM)
        base.update(kw)
        return cls(num_classes=num_classes, **base)

    @property
    def stage_channels(self) -> tuple[int, int, int, int]:
        return tuple(self.base_width * 4 * 2**i for i in range(4))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        d["blocks"] = list(self.blocks)
        return d


class Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, in_ch: int, width: int, stride: int = 1):
        super().__init__()
        out_ch = width * self.expansion
        self.conv1 = nn.Conv2d(in_ch, width, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, stride=stride, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(width)
        self.conv3 = nn.Conv2d(width, out_ch, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(out_ch)
        self.downsample = None
        if stride != 1 or in_ch != out_ch:
            self.downsample = nn.Sequential(nn.Conv2d(in_ch, out_ch, 1, stride=stride, bias=False), nn.BatchNorm2d(out_ch))

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = F.relu(self.bn2(self.conv2(out)))
        return F.relu(self.bn3(self.conv3(out)) + identity)


def _layer(in_ch: int, width: int, n: int, stride: int) -> nn.Sequential:
    layers = [Bottleneck(in_ch, width, stride)]
    layers += [Bottleneck(width * Bottleneck.expansion, width) for _ in range(n - 1)]
    return nn.Sequential(*layers)


class SpatialAttention(nn.Module):
    """sigmoid(CV2 * relu(CV1 * phi + b1) + b2), one map per image."""

    def __init__(self, channels: int, reduction: int):
        super().__init__()
        hidden = max(channels // reduction, 4)
        self.cv1 = nn.Conv2d(channels, hidden, 1)
        self.cv2 = nn.Conv2d(hidden, 1, 1)

    def forward(self, phi):
        return torch.sigmoid(self.cv2(F.relu(self.cv1(phi))))


class CadOutput(NamedTuple):
    attention: list  # three N x H_k x W_k maps in (0, 1)
    phis: list  # intermediate maps that produced each attention map
    final_map: torch.Tensor  # N x C_final x H/16 x W/16
    global_feature: torch.Tensor  # x_deg
    logits: torch.Tensor


class CadStream(nn.Module):
    def __init__(self, config: TrunkConfig):
        super().__init__()
        self.config = config
        bw = config.base_width
        c1, c2, c3, c4 = config.stage_channels
        self.stem = nn.Sequential(
            nn.Conv2d(3, bw, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(bw),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, stride=2, padding=1),
        )
        self.layer1 = _layer(bw, bw, config.blocks[0], 1)
        self.layer2 = _layer(c1, bw * 2, config.blocks[1], 2)
        self.layer3 = _layer(c2, bw * 4, config.blocks[2], 2)
        # last stride 1 keeps the final map at the third target scale
        self.layer4 = _layer(c3, bw * 8, config.blocks[3], 1)
        self.attention = nn.ModuleList(SpatialAttention(c, config.attention_reduction) for c in (c1, c2, c3))
        self.proj = nn.Linear(c4, config.feature_dim)
        self.bottleneck = nn.BatchNorm1d(config.feature_dim)
        self.bottleneck.bias.requires_grad_(False)
        self.classifier = nn.Linear(config.feature_dim, config.num_classes, bias=False)
        self._init_weights()

    def _init_weights(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, (nn.BatchNorm2d, nn.BatchNorm1d)):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
        for att in self.attention:
            nn.init.normal_(att.cv1.weight, std=0.01)
            nn.init.normal_(att.cv2.weight, std=0.01)
        nn.init.normal_(self.proj.weight, std=0.01)
        nn.init.zeros_(self.proj.bias)
        nn.init.normal_(self.classifier.weight, std=0.001)

    def forward(self, x: torch.Tensor, attention_override: Optional[dict] = None) -> CadOutput:
        h, w = self.config.input_size
        if x.dim() != 4 or x.shape[1] != 3 or tuple(x.shape[2:]) != (h, w):
            raise ValueError(f"CAD stream expects Nx3x{h}x{w} input, got {tuple(x.shape)}")
        phi = self.layer1(self.stem(x))
        maps, phis = [], []
        for k, layer in enumerate((self.layer2, self.layer3, self.layer4)):
            att = self.attention[k](phi)
            if attention_override is not None and k in attention_override:
                att = attention_override[k].expand_as(att)
            maps.append(att[:, 0])
            phis.append(phi)
            phi = layer(att * phi)
        x_deg = self.proj(cad_pool(phi))
        return CadOutput(maps, phis, phi, x_deg, self.classifier(self.bottleneck(x_deg)))


def cad_pool(final_map: torch.Tensor) -> torch.Tensor:
    """Global max pool + global average pool, summed per channel."""
    return final_map.amax(dim=(2, 3)) + final_map.mean(dim=(2, 3))


def init_cad(config: TrunkConfig, seed: int, pretrained: Optional[str] = None) -> CadStream:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = CadStream(config)
        if pretrained is not None:
            from igcl.backbone import load_matching
            from igcl.checkpoint import read_tensors

            load_matching(model, read_tensors(pretrained, group="cad"), head_keys=("classifier.weight",))
            nn.init.normal_(model.classifier.weight, std=0.001)
    return model
