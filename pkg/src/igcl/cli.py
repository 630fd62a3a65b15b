"""Command-line entry points: synth, train, eval, extract.

Exit codes: 0 success, 1 runtime failure, 2 usage error. ``IGCL_DATA_ROOT``
and ``IGCL_OUTPUT_ROOT`` supply defaults for ``--data`` and ``--out``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from igcl.config import SHIELDING_MODES, TrainConfig, read_kv, write_kv

log = logging.getLogger("igcl")

# flag dest -> TrainConfig field, for flags that map one-to-one
TRAIN_FLAGS = {
    "epochs": "epochs",
    "steps": "steps",
    "P": "P",
    "K": "K",
    "lr": "base_lr",
    "alpha": "alpha",
    "margin": "margin",
    "lambda_cls": "lambda_cls",
    "lambda_tri": "lambda_tri",
    "lambda_mcl": "lambda_mcl",
    "lambda_hcl": "lambda_hcl",
    "shielding": "shielding_mode",
    "seed": "seed",
    "threads": "threads",
    "pretrained_backbone": "pretrained_backbone",
    "pretrained_trunk": "pretrained_trunk",
}


class UsageError(Exception):
    pass


def _data_root(args) -> Path:
    root = args.data or os.environ.get("IGCL_DATA_ROOT")
    if not root:
        raise UsageError("--data is required (or set IGCL_DATA_ROOT)")
    return Path(root)


def _out_dir(args, name: str) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("IGCL_OUTPUT_ROOT", "runs")) / name


def cmd_synth(args) -> int:
    from igcl.dataio import SynthSpec, synth_generate

    if args.ids < 1 or args.per_id < 1 or args.clothes < 1:
        raise UsageError("--ids, --per-id and --clothes must all be >= 1")
    if args.per_id < args.clothes:
        raise UsageError("--per-id must be >= --clothes")
    spec = SynthSpec(args.ids, args.per_id, args.clothes, (args.height, args.width), args.seed)
    out = _data_root(argparse.Namespace(data=args.out))
    splits = synth_generate(spec, out)
    write_kv(out / "synth_config.txt", {
        "command": "synth", "ids": args.ids, "per_id": args.per_id, "clothes": args.clothes,
        "height": args.height, "width": args.width, "seed": args.seed,
    })
    for name, split in splits.items():
        print(f"{name}: {len(split.samples)} images, {split.num_classes} identities")
    print(f"written to {out}")
    return 0


def resolve_train_config(args) -> TrainConfig:
    """Defaults < config file < --set overrides < explicit flags."""
    values = read_kv(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        values[k.strip()] = v.strip()
    try:
        cfg = TrainConfig.from_kv(values)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    overrides = {field: getattr(args, dest) for dest, field in TRAIN_FLAGS.items() if getattr(args, dest) is not None}
    if args.tiny:
        overrides["variant"] = "tiny"
    if args.full:
        overrides["variant"] = "full"
    for stream in ("cad", "saj", "pie", "jigsaw"):
        if getattr(args, f"no_{stream}"):
            overrides[stream] = False
    if args.pie_triplet:
        overrides["pie_triplet"] = True
    if args.keep_checkpoints:
        overrides["keep_checkpoints"] = True
    try:
        return cfg.replace(**overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_train(args) -> int:
    from igcl.dataio import load_dataset
    from igcl.trainer import run_training

    cfg = resolve_train_config(args)
    data = _data_root(args)
    out = _out_dir(args, "train")
    splits = load_dataset(data)
    snapshot = {"command": "train", "data": str(data), "out": str(out)}
    snapshot.update(cfg.to_kv())
    write_kv(out / "config.txt", snapshot)
    state = run_training(cfg, splits["train"], out, resume=args.resume)
    print(f"trained {state.step} steps ({state.epoch} epochs); checkpoint {out / 'checkpoints' / 'last.pt'}")
    return 0


def _split_images(splits, name: str, size):
    from igcl.core import stack_images
    from igcl.trainer import _resize

    if name not in splits or not splits[name].samples:
        raise FileNotFoundError(f"split {name!r} is empty or missing")
    split = splits[name]
    return split, stack_images([_resize(s, size)[0] for s in split.samples])


def _features(checkpoint, splits, name: str):
    from igcl.backbone import extract_features
    from igcl.trainer import load_inference_backbone

    model = load_inference_backbone(checkpoint)
    split, images = _split_images(splits, name, model.config.input_size)
    return split, extract_features(model, images).double().numpy()


def cmd_eval(args) -> int:
    from igcl.dataio import load_dataset
    from igcl.evaluation import (
        Meta,
        ProtocolConfig,
        compute_cmc_map,
        export_similarity_matrix,
        l2_normalize,
        pairwise_euclidean,
        write_metrics,
    )

    splits = load_dataset(_data_root(args))
    out = _out_dir(args, "eval")
    q_split, qf = _features(args.checkpoint, splits, args.query_split)
    g_split, gf = _features(args.checkpoint, splits, args.gallery_split)
    qf, gf = l2_normalize(qf), l2_normalize(gf)
    protocol = ProtocolConfig(exclude_same_camera=not args.keep_same_camera,
                              exclude_same_clothes=args.exclude_same_clothes)
    result = compute_cmc_map(pairwise_euclidean(qf, gf), Meta.from_samples(q_split.samples),
                             Meta.from_samples(g_split.samples), protocol)
    snapshot = {"command": "eval", "checkpoint": args.checkpoint, "query_split": args.query_split,
                "gallery_split": args.gallery_split, "exclude_same_camera": protocol.exclude_same_camera,
                "exclude_same_clothes": protocol.exclude_same_clothes}
    write_kv(out / "config.txt", snapshot)
    record = write_metrics(result, out)
    print(f"mAP: {record['mAP']:.4f}")
    for k in (1, 5, 10, 20):
        print(f"CMC@{k}: {record[f'rank{k}']:.4f}")
    if result.num_invalid:
        print(f"{result.num_invalid} queries had no valid match and were excluded")
    if args.export_similarity:
        n = args.export_similarity
        if n < 2 or n > len(gf):
            raise UsageError(f"--export-similarity needs 2 <= N <= {len(gf)}")
        names = [Path(s.name).stem for s in g_split.samples[:n]]
        sim = export_similarity_matrix(gf[:n], out / f"similarity_{n}x{n}.png", names)
        np.savetxt(out / f"similarity_{n}x{n}.tsv", sim, delimiter="\t", fmt="%.6f")
        print(f"similarity matrix written to {out / f'similarity_{n}x{n}.png'}")
    return 0


def cmd_extract(args) -> int:
    from igcl.dataio import load_dataset
    from igcl.evaluation import l2_normalize

    splits = load_dataset(_data_root(args))
    split, feats = _features(args.checkpoint, splits, args.split)
    if args.normalize:
        feats = l2_normalize(feats)
    out = _out_dir(args, "extract")
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "features.tsv", feats, delimiter="\t", fmt="%.9g")
    (out / "manifest.txt").write_text("".join(
        f"{s.name}\t{s.identity}\t{s.camera}\t{'' if s.clothing is None else s.clothing}\n" for s in split.samples
    ))
    write_kv(out / "config.txt", {"command": "extract", "checkpoint": args.checkpoint, "split": args.split,
                                  "normalize": args.normalize})
    print(f"{len(feats)} feature rows written to {out / 'features.tsv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="igcl", description="Cloth-changing person re-identification")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--ids", type=int, default=4)
    s.add_argument("--per-id", type=int, default=8)
    s.add_argument("--clothes", type=int, default=2)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--width", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", default=None)
    t.add_argument("--out", default=None)
    t.add_argument("--config", default=None, help="key=value config file")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    variant = t.add_mutually_exclusive_group()
    variant.add_argument("--tiny", action="store_true")
    variant.add_argument("--full", action="store_true")
    t.add_argument("--epochs", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--P", type=int)
    t.add_argument("--K", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--alpha", type=float)
    t.add_argument("--margin", type=float)
    for term in ("cls", "tri", "mcl", "hcl"):
        t.add_argument(f"--lambda-{term}", type=float)
    t.add_argument("--shielding", choices=SHIELDING_MODES)
    t.add_argument("--seed", type=int)
    t.add_argument("--threads", type=int)
    t.add_argument("--pretrained-backbone")
    t.add_argument("--pretrained-trunk")
    for stream in ("cad", "saj", "pie", "jigsaw"):
        t.add_argument(f"--no-{stream}", action="store_true")
    t.add_argument("--pie-triplet", action="store_true")
    t.add_argument("--keep-checkpoints", action="store_true")
    t.add_argument("--resume", default=None, help="checkpoint to resume from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="retrieval metrics for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", default=None)
    e.add_argument("--out", default=None)
    e.add_argument("--query-split", default="query")
    e.add_argument("--gallery-split", default="gallery")
    e.add_argument("--keep-same-camera", action="store_true", help="do not drop same-camera true matches")
    e.add_argument("--exclude-same-clothes", action="store_true", help="cloth-changing setting")
    e.add_argument("--export-similarity", type=int, default=0, metavar="N")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("extract", help="backbone features for one split")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--data", default=None)
    x.add_argument("--out", default=None)
    x.add_argument("--split", default="query")
    x.add_argument("--normalize", action="store_true")
    x.set_defaults(func=cmd_extract)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"igcl {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"igcl {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
