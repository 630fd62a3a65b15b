"""Flat key=value run configuration shared by the trainer and the CLI."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from igcl.losses import LossWeights

SHIELDING_MODES = ("orig", "orig_shield", "fg_shield")


@dataclass
class TrainConfig:
    variant: str = "tiny"
    epochs: int = 60
    steps: Optional[int] = None  # overrides epochs when set
    P: int = 8
    K: int = 4
    base_lr: float = 7e-4
    min_lr: float = 0.0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    alpha: float = 0.1
    lambda_cls: float = 1.0
    lambda_tri: float = 1.0
    lambda_mcl: float = 1.0
    lambda_hcl: float = 1.0
    margin: float = 0.3
    cad: bool = True
    saj: bool = True
    pie: bool = True
    jigsaw: bool = True
    shielding_mode: str = "fg_shield"
    pie_triplet: bool = False
    hcl_use_std: bool = False
    hcl_normalize: bool = True
    clothes_classes: str = "Upper-clothes,Skirt,Pants,Dress"
    upper_classes: str = "Upper-clothes,Dress"
    seed: int = 0
    threads: int = 1
    pretrained_backbone: Optional[str] = None
    pretrained_trunk: Optional[str] = None
    keep_checkpoints: bool = False
    exclude_same_camera: bool = True
    exclude_same_clothes: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.variant not in ("tiny", "full"):
            raise ValueError(f"variant must be tiny or full, got {self.variant!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.steps is not None and self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be > 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.P < 1 or self.K < 1:
            raise ValueError("P and K must be >= 1")
        if self.shielding_mode not in SHIELDING_MODES:
            raise ValueError(f"shielding_mode must be one of {SHIELDING_MODES}")
        self.loss_weights  # validates the lambdas

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_cls, self.lambda_tri, self.lambda_mcl, self.lambda_hcl, self.margin)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_kv(self) -> dict[str, str]:
        return {f.name: _fmt(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_kv(cls, values: dict[str, str]) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(values) - set(types))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**{k: _parse(v, types[k]) for k, v in values.items()})


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse(text: str, typ: str):
    text = str(text).strip()
    optional = typ.startswith("Optional")
    if optional and text.lower() in ("none", ""):
        return None
    base = typ.removeprefix("Optional[").removesuffix("]")
    if base == "bool":
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if base == "int":
        return int(text)
    if base == "float":
        return float(text)
    return text


def read_kv(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def write_kv(path, values: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in values.items()))
