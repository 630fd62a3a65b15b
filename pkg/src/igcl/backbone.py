"""Patch-transformer backbone with a batch-norm bottleneck and identity classifier."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import torch
import torch.nn as nn

from igcl.core import FULL_FEATURE_DIM, FULL_INPUT_SIZE, TINY_FEATURE_DIM, TINY_INPUT_SIZE


@dataclass(frozen=True)
class BackboneConfig:
    num_classes: int
    input_size: tuple[int, int] = FULL_INPUT_SIZE
    patch_size: int = 16
    depth: int = 12
    feature_dim: int = FULL_FEATURE_DIM
    num_heads: int = 12
    mlp_ratio: float = 4.0
    variant: str = "full"

    def __post_init__(self):
        h, w = self.input_size
        if h % self.patch_size or w % self.patch_size:
            raise ValueError(f"input {self.input_size} not divisible by patch size {self.patch_size}")
        if self.feature_dim % self.num_heads:
            raise ValueError("feature_dim must be divisible by num_heads")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")

    @classmethod
    def full(cls, num_classes: int, **kw) -> "BackboneConfig":
        return cls(num_classes=num_classes, **kw)

    @classmethod
    def tiny(cls, num_classes: int, **kw) -> "BackboneConfig":
        base = dict(input_size=TINY_INPUT_SIZE, depth=2, feature_dim=TINY_FEATURE_DIM, num_heads=4, variant="tiny")
        base.update(kw)
        return cls(num_classes=num_classes, **base)

    @property
    def num_patches(self) -> int:
        h, w = self.input_size
        return (h // self.patch_size) * (w // self.patch_size)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return d


class BackboneOutput(NamedTuple):
    global_feature: torch.Tensor  # before the bottleneck: triplet / alignment losses
    feature: torch.Tensor  # after the bottleneck: retrieval
    logits: torch.Tensor


class PatchEmbed(nn.Module):
    def __init__(self, patch_size: int, dim: int, in_chans: int = 3):
        super().__init__()
        self.proj = nn.Conv2d(in_chans, dim, kernel_size=patch_size, stride=patch_size)

    def forward(self, x):
        return self.proj(x).flatten(2).transpose(1, 2)


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, c // self.num_heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        x = (attn.softmax(dim=-1) @ v).transpose(1, 2).reshape(b, n, c)
        return self.proj(x)


class Block(nn.Module):
    def __init__(self, dim: int, num_heads: int, mlp_ratio: float):
        super().__init__()
        hidden = int(dim * mlp_ratio)
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class Backbone(nn.Module):
    """Class-token transformer; BN bottleneck between feature and classifier."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        dim = config.feature_dim
        self.patch_embed = PatchEmbed(config.patch_size, dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, dim))
        self.pos_embed = nn.Parameter(torch.zeros(1, config.num_patches + 1, dim))
        self.blocks = nn.ModuleList(Block(dim, config.num_heads, config.mlp_ratio) for _ in range(config.depth))
        self.norm = nn.LayerNorm(dim, eps=1e-6)
        self.bottleneck = nn.BatchNorm1d(dim)
        self.bottleneck.bias.requires_grad_(False)
        self.classifier = nn.Linear(dim, config.num_classes, bias=False)
        self._init_weights()

    def _init_weights(self):
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        nn.init.trunc_normal_(self.cls_token, std=0.02)
        for m in self.modules():
            if isinstance(m, nn.Linear):
                nn.init.trunc_normal_(m.weight, std=0.02)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.LayerNorm):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
        self.reset_head()

    def reset_head(self):
        nn.init.normal_(self.classifier.weight, std=0.001)
        nn.init.ones_(self.bottleneck.weight)
        nn.init.zeros_(self.bottleneck.bias)

    def tokens(self, x: torch.Tensor) -> torch.Tensor:
        h, w = self.config.input_size
        if x.dim() != 4 or x.shape[1] != 3 or tuple(x.shape[2:]) != (h, w):
            raise ValueError(f"backbone expects Nx3x{h}x{w} input, got {tuple(x.shape)}")
        return self.patch_embed(x)

    def forward(self, x: torch.Tensor) -> BackboneOutput:
        t = self.tokens(x)
        t = torch.cat([self.cls_token.expand(t.shape[0], -1, -1), t], dim=1) + self.pos_embed
        for blk in self.blocks:
            t = blk(t)
        global_feat = self.norm(t)[:, 0]
        feat = self.bottleneck(global_feat)
        return BackboneOutput(global_feat, feat, self.classifier(feat))


HEAD_KEYS = ("classifier.weight",)


def init_backbone(config: BackboneConfig, seed: int, pretrained: Optional[str] = None) -> Backbone:
    """Seeded initialisation; optional pretrained tensors with the head re-initialised."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = Backbone(config)
        if pretrained is not None:
            from igcl.checkpoint import read_tensors

            load_matching(model, read_tensors(pretrained, group="backbone"), head_keys=HEAD_KEYS)
            model.reset_head()
    return model


def load_matching(module: nn.Module, tensors: dict, head_keys=()) -> list[str]:
    """Copy named tensors into ``module``; shape mismatches outside the head are errors."""
    own = module.state_dict()
    loaded = []
    for name, value in tensors.items():
        if name not in own or name in head_keys:
            continue
        if tuple(own[name].shape) != tuple(value.shape):
            raise ValueError(
                f"pretrained tensor {name!r} has shape {tuple(value.shape)}, model expects {tuple(own[name].shape)}"
            )
        own[name] = value.to(own[name].dtype)
        loaded.append(name)
    module.load_state_dict(own)
    return loaded


def extract_features(model: Backbone, images: torch.Tensor, batch_size: int = 64) -> torch.Tensor:
    """Inference-mode retrieval features (post-bottleneck)."""
    was_training = model.training
    model.eval()
    out = []
    with torch.no_grad():
        for i in range(0, images.shape[0], batch_size):
            out.append(model(images[i:i + batch_size]).feature)
    model.train(was_training)
    return torch.cat(out) if out else torch.zeros(0, model.config.feature_dim)

