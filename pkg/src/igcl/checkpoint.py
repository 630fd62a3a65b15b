"""Versioned checkpoint container: config header plus named tensor groups."""
from __future__ import annotations

from pathlib import Path
from typing import Optional

import torch

FORMAT = "igcl-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_container(path, groups: dict[str, dict], config: dict, extra: Optional[dict] = None) -> None:
    """``groups`` maps a group name (``backbone``, ``cad``, ...) to a state dict."""
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "config": config,
        "groups": {g: {k: v.detach().cpu().clone() for k, v in sd.items()} for g, sd in groups.items()},
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def load_container(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} not found")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not an igcl checkpoint")
    if payload.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    return payload


def read_tensors(path, group: str) -> dict:
    """Tensors of one group; a plain ``{name: tensor}`` file is accepted too."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"weight file {path} not found")
    try:
        return load_container(path)["groups"][group]
    except KeyError as exc:
        raise CheckpointError(f"{path} has no {group!r} tensors") from exc
    except CheckpointError:
        raw = torch.load(path, map_location="cpu", weights_only=True)
        if not isinstance(raw, dict) or not all(isinstance(v, torch.Tensor) for v in raw.values()):
            raise
        return raw


def load_group(module: torch.nn.Module, tensors: dict, group: str) -> None:
    """Strict load with shape validation that names the offending tensor."""
    own = module.state_dict()
    missing = sorted(set(own) - set(tensors))
    if missing:
        raise CheckpointError(f"{group}: missing tensors {missing[:5]}")
    for name, value in tensors.items():
        if name not in own:
            raise CheckpointError(f"{group}: unexpected tensor {name!r}")
        if tuple(own[name].shape) != tuple(value.shape):
            raise CheckpointError(
                f"{group}: tensor {name!r} has shape {tuple(value.shape)}, expected {tuple(own[name].shape)}"
            )
    module.load_state_dict(tensors)
