"""Joint optimisation of the backbone and the three auxiliary streams."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from PIL import Image

from igcl.backbone import Backbone, BackboneConfig, init_backbone
from igcl.cad import CadStream, TrunkConfig, init_cad
from igcl.checkpoint import load_container, load_group, save_container
from igcl.config import TrainConfig
from igcl.core import stack_images
from igcl.dataio import DatasetSplit, batches_per_epoch, pk_sample
from igcl.encoder import ClassPartition, encode_sample
from igcl.losses import (
    LossReport,
    check_finite,
    classification_loss,
    highlevel_collab_loss,
    midlevel_collab_loss,
    sample_triplets,
    total_loss,
    triplet_loss,
)
from igcl.pie import PieStream, init_pie
from igcl.saj import apply_jigsaw, plan_jigsaw, saj_forward

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "epoch", "lr", "cls", "tri", "mcl", "hcl", "total")


def cosine_lr(step: int, total_steps: int, base_lr: float, min_lr: float = 0.0) -> float:
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return base_lr
    return min_lr + (base_lr - min_lr) * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


def input_size(config: TrainConfig) -> tuple[int, int]:
    return (64, 32) if config.variant == "tiny" else (384, 128)


def backbone_config(config: TrainConfig, num_classes: int) -> BackboneConfig:
    return BackboneConfig.tiny(num_classes) if config.variant == "tiny" else BackboneConfig.full(num_classes)


def trunk_config(config: TrainConfig, num_classes: int) -> TrunkConfig:
    return TrunkConfig.tiny(num_classes) if config.variant == "tiny" else TrunkConfig.full(num_classes)


class IGCLModel(nn.Module):
    """Backbone plus whichever auxiliary streams are enabled."""

    def __init__(self, backbone: Backbone, cad: Optional[CadStream] = None, pie: Optional[PieStream] = None):
        super().__init__()
        self.backbone = backbone
        self.cad = cad
        self.pie = pie

    def groups(self) -> dict[str, nn.Module]:
        out = {"backbone": self.backbone}
        if self.cad is not None:
            out["cad"] = self.cad
        if self.pie is not None:
            out["pie_backbone"] = self.pie.backbone
            out["pie_localization"] = self.pie.localization
        return out


def build_model(config: TrainConfig, num_classes: int) -> IGCLModel:
    bcfg = backbone_config(config, num_classes)
    backbone = init_backbone(bcfg, config.seed, config.pretrained_backbone)
    cad = init_cad(trunk_config(config, num_classes), config.seed + 100, config.pretrained_trunk) if config.cad else None
    pie = init_pie(bcfg, config.seed + 200, config.pretrained_backbone) if config.pie else None
    return IGCLModel(backbone, cad, pie)


def build_optimizer(model: nn.Module, config: TrainConfig) -> torch.optim.SGD:
    params = [p for p in model.parameters() if p.requires_grad]
    return torch.optim.SGD(params, lr=config.base_lr, momentum=config.momentum, weight_decay=config.weight_decay)


@dataclass
class PreparedSplit:
    """Encoder products for every sample, stacked as NCHW tensors."""

    original: torch.Tensor
    foreground: torch.Tensor
    pie_input: torch.Tensor
    targets: list
    labels: torch.Tensor


def _resize(sample, size):
    h, w = size
    if sample.image.shape[:2] == (h, w):
        return sample.image, sample.parse
    img = Image.fromarray(np.round(sample.image * 255).astype(np.uint8)).resize((w, h), Image.BILINEAR)
    parse = Image.fromarray(sample.parse.astype(np.uint8)).resize((w, h), Image.NEAREST)
    return np.asarray(img, dtype=np.float32) / 255.0, np.asarray(parse)


def prepare_split(split: DatasetSplit, config: TrainConfig) -> PreparedSplit:
    size = input_size(config)
    partition = ClassPartition.from_names(config.clothes_classes.split(","), config.upper_classes.split(","))
    orig, fg, pie_in, tgt = [], [], [], [[], [], []]
    for s in split.samples:
        image, parse = _resize(s, size)
        enc = encode_sample(image, parse, config.alpha, partition, config.shielding_mode)
        orig.append(image)
        fg.append(enc["foreground"])
        pie_in.append(enc["pie_input"])
        for k in range(3):
            tgt[k].append(enc["targets"][k])
    return PreparedSplit(
        original=stack_images(orig),
        foreground=stack_images(fg),
        pie_input=stack_images(pie_in),
        targets=[torch.from_numpy(np.stack(t).astype(np.float32)) for t in tgt],
        labels=torch.tensor([s.identity for s in split.samples], dtype=torch.long),
    )


def compute_losses(model: IGCLModel, batch, data: PreparedSplit, config: TrainConfig,
                   rng: np.random.Generator) -> LossReport:
    """Forward every enabled stream on one batch and assemble the report."""
    idx = torch.tensor(batch.indices, dtype=torch.long)
    labels = data.labels[idx]
    x = data.original[idx]

    ori = model.backbone(x)
    logits = {"ori": ori.logits}
    tri_feats = {"ori": ori.global_feature}
    x_sem = x_deg = None
    mcl = None

    if config.saj:
        fg = data.foreground[idx]
        if config.jigsaw:
            fg = apply_jigsaw(fg, plan_jigsaw(batch, fg.shape[2]), height_axis=2)
        sem = saj_forward(fg, model.backbone)
        logits["sem"] = sem.logits
        tri_feats["sem"] = sem.global_feature
        x_sem = sem.global_feature
    if config.pie:
        pie = model.pie(data.pie_input[idx])
        logits["pie"] = pie.out.logits
        if config.pie_triplet:
            tri_feats["pie"] = pie.out.global_feature
    if config.cad:
        cad = model.cad(x)
        logits["deg"] = cad.logits
        x_deg = cad.global_feature
        mcl = midlevel_collab_loss(cad.attention, [t[idx] for t in data.targets])

    cls, cls_heads = classification_loss(logits, labels)
    triplets = sample_triplets(np.asarray(batch.labels), rng)
    tri, tri_heads = triplet_loss(tri_feats, labels, config.margin, triplets=triplets)
    hcl, hcl_heads = (None, {})
    if x_sem is not None or x_deg is not None:
        # unit-normalised features: on raw features the moment match is minimised
        # by collapsing every feature to its batch mean
        feats = [x_sem, x_deg, ori.global_feature]
        if config.hcl_normalize:
            feats = [None if f is None else F.normalize(f, dim=1) for f in feats]
        hcl, hcl_heads = highlevel_collab_loss(*feats, use_std=config.hcl_use_std)
    return total_loss({"cls": cls, "tri": tri, "mcl": mcl, "hcl": hcl}, config.loss_weights,
                      cls_heads=cls_heads, tri_heads=tri_heads, hcl_heads=hcl_heads)


def train_step(model: IGCLModel, optimizer: torch.optim.Optimizer, batch, data: PreparedSplit,
               config: TrainConfig, rng: np.random.Generator, lr: Optional[float] = None) -> LossReport:
    """One SGD-with-momentum update on the weighted sum of enabled losses."""
    model.train()
    if lr is not None:
        for g in optimizer.param_groups:
            g["lr"] = lr
    report = compute_losses(model, batch, data, config, rng)
    check_finite(report)
    optimizer.zero_grad(set_to_none=True)
    report.tensor.backward()
    optimizer.step()
    return report


@dataclass
class TrainState:
    model: IGCLModel
    optimizer: torch.optim.SGD
    sampler_rng: np.random.Generator
    triplet_rng: np.random.Generator
    epoch: int = 0  # epochs completed
    step: int = 0  # steps completed


def new_state(config: TrainConfig, num_classes: int) -> TrainState:
    model = build_model(config, num_classes)
    return TrainState(
        model=model,
        optimizer=build_optimizer(model, config),
        sampler_rng=np.random.default_rng([config.seed, 10]),
        triplet_rng=np.random.default_rng([config.seed, 11]),
    )


def save_checkpoint(path, state: TrainState, config: TrainConfig, num_classes: int) -> None:
    groups = {name: m.state_dict() for name, m in state.model.groups().items()}
    extra = {
        "epoch": state.epoch,
        "step": state.step,
        "num_classes": num_classes,
        "optimizer": state.optimizer.state_dict(),
        "sampler_rng": state.sampler_rng.bit_generator.state,
        "triplet_rng": state.triplet_rng.bit_generator.state,
    }
    save_container(path, groups, config.to_kv(), extra)


def load_state(path, config: Optional[TrainConfig] = None) -> tuple[TrainState, TrainConfig]:
    """Rebuild the full training state from a checkpoint."""
    payload = load_container(path)
    config = config or TrainConfig.from_kv(payload["config"])
    extra = payload["extra"]
    state = new_state(config, extra["num_classes"])
    for name, module in state.model.groups().items():
        if name not in payload["groups"]:
            raise ValueError(f"checkpoint {path} lacks the {name!r} weights required by this config")
        load_group(module, payload["groups"][name], name)
    state.optimizer.load_state_dict(extra["optimizer"])
    state.sampler_rng.bit_generator.state = extra["sampler_rng"]
    state.triplet_rng.bit_generator.state = extra["triplet_rng"]
    state.epoch = extra["epoch"]
    state.step = extra["step"]
    return state, config


def load_inference_backbone(path) -> Backbone:
    """Backbone alone; every other weight group in the file is ignored."""
    payload = load_container(path)
    cfg = payload["config"]
    variant = cfg.get("variant", "tiny")
    num_classes = int(payload["extra"]["num_classes"])
    bcfg = BackboneConfig.tiny(num_classes) if variant == "tiny" else BackboneConfig.full(num_classes)
    model = Backbone(bcfg)
    if "backbone" not in payload["groups"]:
        raise ValueError(f"checkpoint {path} has no backbone weights")
    load_group(model, payload["groups"]["backbone"], "backbone")
    model.eval()
    return model


def _format_row(values) -> str:
    return "\t".join(v if isinstance(v, str) else (str(v) if isinstance(v, int) else repr(float(v))) for v in values)


def run_training(config: TrainConfig, train: DatasetSplit, out_dir, resume: Optional[str] = None,
                 on_step: Optional[Callable[[int, LossReport], None]] = None) -> TrainState:
    """Train, logging one record per step and checkpointing after every epoch.

    Writes ``train_log.tsv``, ``checkpoints/last.pt`` (plus
    ``checkpoints/epoch_NNN.pt`` when ``keep_checkpoints``) and
    ``model_inference.pt`` holding only the backbone.
    """
    torch.set_num_threads(config.threads)
    torch.use_deterministic_algorithms(True)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    num_classes = train.num_classes
    data = prepare_split(train, config)

    if resume is not None:
        state, _ = load_state(resume, config)
    else:
        state = new_state(config, num_classes)

    spe = batches_per_epoch(train, config.P, config.K)
    total_steps = config.steps if config.steps is not None else config.epochs * spe
    num_epochs = math.ceil(total_steps / spe)

    log_path = out / "train_log.tsv"
    mode = "a" if resume is not None and log_path.exists() else "w"
    with open(log_path, mode) as fh:
        if mode == "w":
            fh.write("\t".join(LOG_FIELDS) + "\n")
        while state.epoch < num_epochs and state.step < total_steps:
            n = min(spe, total_steps - state.step)
            for batch in pk_sample(train, config.P, config.K, state.sampler_rng, num_batches=n):
                lr = cosine_lr(state.step, total_steps, config.base_lr, config.min_lr)
                report = train_step(state.model, state.optimizer, batch, data, config, state.triplet_rng, lr)
                state.step += 1
                fh.write(_format_row([state.step, state.epoch + 1, lr, report.cls, report.tri,
                                      report.mcl, report.hcl, report.total]) + "\n")
                if on_step is not None:
                    on_step(state.step, report)
            fh.flush()
            state.epoch += 1
            save_checkpoint(out / "checkpoints" / "last.pt", state, config, num_classes)
            if config.keep_checkpoints:
                save_checkpoint(out / "checkpoints" / f"epoch_{state.epoch:03d}.pt", state, config, num_classes)
            log.info("epoch %d done (step %d/%d, total loss %.4f)", state.epoch, state.step, total_steps, report.total)

    save_container(out / "model_inference.pt", {"backbone": state.model.backbone.state_dict()}, config.to_kv(),
                   {"num_classes": num_classes, "epoch": state.epoch, "step": state.step})
    return state


def read_log(path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split("\t")
    rows = []
    for line in lines[1:]:
        vals = line.split("\t")
        rows.append({k: (int(v) if k in ("step", "epoch") else float(v)) for k, v in zip(header, vals)})
    return rows
