"""Dataset ingestion, PK batch sampling and the synthetic pedestrian generator.

On-disk layout::

    root/{train,query,gallery}/<identity>_<camera>_<clothing>_<index>.png
    root/parse/{train,query,gallery}/<same name>.png   (8-bit class indices 0..17)
"""
from __future__ import annotations

import colorsys
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np
from PIL import Image

from igcl.core import CLASS_INDEX, Batch, DataError, ImageSample, check_parse

SPLITS = ("train", "query", "gallery")


@dataclass
class DatasetSplit:
    name: str
    samples: list[ImageSample]
    # dense label -> identity id as written in the file names
    raw_ids: list[int] = field(default_factory=list)

    @property
    def num_classes(self) -> int:
        return len({s.identity for s in self.samples})

    def by_identity(self) -> dict[int, list[int]]:
        groups: dict[int, list[int]] = defaultdict(list)
        for i, s in enumerate(self.samples):
            groups[s.identity].append(i)
        return dict(groups)


@dataclass(frozen=True)
class Layout:
    splits: tuple[str, ...] = SPLITS
    parse_dir: str = "parse"
    suffix: str = ".png"


@dataclass(frozen=True)
class SynthSpec:
    num_identities: int = 4
    images_per_identity: int = 8
    clothes_per_identity: int = 2
    image_size: tuple[int, int] = (64, 32)
    seed: int = 0

    def __post_init__(self):
        if min(self.num_identities, self.images_per_identity, self.clothes_per_identity) < 1:
            raise ValueError("synthetic dataset counts must all be >= 1")
        if self.images_per_identity < self.clothes_per_identity:
            raise ValueError("images_per_identity must be >= clothes_per_identity")
        h, w = self.image_size
        if h < 16 or w < 8:
            raise ValueError(f"image size {self.image_size} too small to draw a figure")


def parse_name(name: str) -> tuple[int, int, Optional[int], int]:
    stem = Path(name).stem
    parts = stem.split("_")
    if len(parts) != 4:
        raise DataError(f"{name}: expected <identity>_<camera>_<clothing>_<index>")
    try:
        pid, cam, idx = int(parts[0]), int(parts[1]), int(parts[3])
    except ValueError as exc:
        raise DataError(f"{name}: non-integer field in file name") from exc
    clothing = None if parts[2] in ("", "x", "-1") else int(parts[2])
    return pid, cam, clothing, idx


def format_name(pid: int, cam: int, clothing: Optional[int], idx: int, suffix: str = ".png") -> str:
    c = "x" if clothing is None else str(clothing)
    return f"{pid:04d}_{cam}_{c}_{idx:03d}{suffix}"


def _remap(records, raw_ids: list[int]) -> list[ImageSample]:
    dense = {pid: i for i, pid in enumerate(raw_ids)}
    return [
        ImageSample(image=im, parse=pm, identity=dense[pid], camera=cam, clothing=clo, name=name)
        for name, im, pm, pid, cam, clo in records
    ]


def _build_splits(records: dict[str, list]) -> dict[str, DatasetSplit]:
    # file-name order, so generated and loaded splits agree
    records = {k: sorted(v, key=lambda r: r[0]) for k, v in records.items()}
    out = {}
    train = records.get("train", [])
    train_ids = sorted({r[3] for r in train})
    out["train"] = DatasetSplit("train", _remap(train, train_ids), train_ids)
    test_ids = sorted({r[3] for name in ("query", "gallery") for r in records.get(name, [])})
    for name in ("query", "gallery"):
        out[name] = DatasetSplit(name, _remap(records.get(name, []), test_ids), test_ids)
    missing = {s.identity for s in out["query"].samples} - {s.identity for s in out["gallery"].samples}
    if missing:
        raise DataError(f"query identities absent from gallery: {sorted(test_ids[i] for i in missing)}")
    return out


def read_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def read_parse(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "P"):
            raise DataError(f"{path}: parse map must be a single-channel 8-bit image, got mode {im.mode}")
        arr = np.asarray(im, dtype=np.uint8)
    return check_parse(arr, str(path))


def load_dataset(root, layout: Layout = Layout()) -> dict[str, DatasetSplit]:
    """Load train/query/gallery with identities remapped to dense labels.

    Train labels are dense over the train split; query and gallery share one
    dense mapping.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    records: dict[str, list] = {}
    for split in layout.splits:
        split_dir = root / split
        if not split_dir.is_dir():
            records[split] = []
            continue
        rows = []
        for path in sorted(split_dir.glob(f"*{layout.suffix}")):
            parse_path = root / layout.parse_dir / split / path.name
            if not parse_path.is_file():
                raise DataError(f"missing parse map for {path}: expected {parse_path}")
            pid, cam, clothing, _ = parse_name(path.name)
            image = read_image(path)
            parse = read_parse(parse_path)
            rows.append((f"{split}/{path.name}", image, parse, pid, cam, clothing))
        records[split] = rows
    if not records.get("train") and not records.get("query"):
        raise DataError(f"{root}: no images found under {', '.join(layout.splits)}")
    return _build_splits(records)


def pk_sample(split: DatasetSplit, P: int, K: int, rng: np.random.Generator,
              num_batches: Optional[int] = None) -> Iterator[Batch]:
    """Yield one epoch of P x K batches.

    Identities are visited in a fresh random order (every identity at least
    once per epoch); identities with fewer than K images are drawn with
    replacement.
    """
    if P * K <= 0:
        raise ValueError(f"P*K must be positive, got P={P}, K={K}")
    if not split.samples:
        raise ValueError(f"split {split.name!r} is empty")
    groups = split.by_identity()
    ids = sorted(groups)
    if len(ids) < P:
        raise ValueError(f"split has {len(ids)} identities, fewer than P={P}")
    if num_batches is None:
        num_batches = batches_per_epoch(split, P, K)

    queue: list[int] = []
    for _ in range(num_batches):
        chosen: list[int] = []
        while len(chosen) < P:
            if not queue:
                queue = [ids[i] for i in rng.permutation(len(ids))]
            pid = queue.pop(0)
            if pid not in chosen:
                chosen.append(pid)
        indices: list[int] = []
        for pid in chosen:
            members = groups[pid]
            picks = rng.choice(len(members), size=K, replace=len(members) < K)
            indices.extend(members[j] for j in picks)
        yield Batch(
            indices=tuple(indices),
            labels=tuple(split.samples[i].identity for i in indices),
            P=P,
            K=K,
            samples=tuple(split.samples[i] for i in indices),
        )


def batches_per_epoch(split: DatasetSplit, P: int, K: int) -> int:
    n_ids = len({s.identity for s in split.samples})
    return max(math.ceil(n_ids / P), len(split.samples) // (P * K), 1)


# ---------------------------------------------------------------- synthetic data

def _color(hue: float, sat: float, val: float) -> np.ndarray:
    return np.array(colorsys.hsv_to_rgb(hue % 1.0, sat, val)) * 255.0


def _ellipse(h, w, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy + 0.5 - cy) / ry) ** 2 + ((xx + 0.5 - cx) / rx) ** 2 <= 1.0


def _rect(h, w, y0, y1, x0, x1):
    m = np.zeros((h, w), dtype=bool)
    m[max(int(round(y0)), 0):min(int(round(y1)), h), max(int(round(x0)), 0):min(int(round(x1)), w)] = True
    return m


def draw_person(size: tuple[int, int], identity: int, clothing: int, index: int, seed: int):
    """Render one synthetic pedestrian; returns (uint8 HxWx3 image, uint8 HxW parse map).

    Head geometry and colors depend only on the identity; torso and pants
    colors on (identity, clothing); leg pose and background on the image.
    """
    h, w = size
    id_rng = np.random.default_rng([seed, 1, identity])
    cl_rng = np.random.default_rng([seed, 2, identity, clothing])
    im_rng = np.random.default_rng([seed, 3, identity, clothing, index])

    cx = w / 2.0
    body = 0.85 + 0.3 * id_rng.random()
    parse = np.zeros((h, w), dtype=np.uint8)

    def paint(mask, name):
        parse[mask] = CLASS_INDEX[name]

    torso_half = 0.21 * w * body
    arm_w = max(0.09 * w, 1.5)
    spread = (0.02 + 0.05 * im_rng.random()) * w
    leg_w = max(0.13 * w, 2.0)
    paint(_rect(h, w, 0.56 * h, 0.80 * h, cx - 0.19 * w, cx + 0.19 * w), "Pants")
    paint(_rect(h, w, 0.80 * h, 0.92 * h, cx - spread - leg_w, cx - spread), "Right-leg")
    paint(_rect(h, w, 0.80 * h, 0.92 * h, cx + spread, cx + spread + leg_w), "Left-leg")
    paint(_rect(h, w, 0.92 * h, 0.97 * h, cx - spread - leg_w - 1, cx - spread), "Right-shoe")
    paint(_rect(h, w, 0.92 * h, 0.97 * h, cx + spread, cx + spread + leg_w + 1), "Left-shoe")
    paint(_rect(h, w, 0.27 * h, 0.54 * h, cx - torso_half - arm_w, cx - torso_half), "Right-arm")
    paint(_rect(h, w, 0.27 * h, 0.54 * h, cx + torso_half, cx + torso_half + arm_w), "Left-arm")
    paint(_rect(h, w, 0.25 * h, 0.56 * h, cx - torso_half, cx + torso_half), "Upper-clothes")
    head = _ellipse(h, w, 0.145 * h, cx, 0.095 * h, 0.15 * w * body)
    hair = head & (np.mgrid[0:h, 0:w][0] < (0.09 + 0.03 * id_rng.random()) * h)
    paint(head & ~hair, "Face")
    paint(hair, "Hair")

    yy, xx = np.mgrid[0:h, 0:w]
    phase = im_rng.random(3) * 2 * np.pi
    freq = 0.2 + 0.6 * im_rng.random(2)
    texture = (0.5 + 0.25 * np.sin(freq[0] * yy + phase[0]) * np.cos(freq[1] * xx + phase[1]))[..., None]
    bg_col = _color(im_rng.random(), 0.25, 0.7)
    image = texture * bg_col + im_rng.normal(0.0, 8.0, size=(h, w, 3))

    id_hue = identity * 0.61803398875
    colors = {
        "Face": _color(id_hue, 0.45, 0.95),
        "Hair": _color(id_hue + 0.5, 0.8, 0.35),
        "Upper-clothes": _color(cl_rng.random(), 0.9, 0.4 + 0.5 * cl_rng.random()),
        "Pants": _color(cl_rng.random(), 0.6, 0.25 + 0.4 * cl_rng.random()),
        "Left-arm": _color(id_hue, 0.35, 0.85),
        "Right-arm": _color(id_hue, 0.35, 0.85),
        "Left-leg": _color(id_hue, 0.35, 0.8),
        "Right-leg": _color(id_hue, 0.35, 0.8),
        "Left-shoe": _color(0.0, 0.0, 0.1),
        "Right-shoe": _color(0.0, 0.0, 0.1),
    }
    for name, col in colors.items():
        image[parse == CLASS_INDEX[name]] = col
    return np.clip(np.round(image), 0, 255).astype(np.uint8), parse


def _layout_for(spec: SynthSpec):
    """(split, raw identity, camera, clothing, index) for every synthetic image."""
    n, m, c = spec.num_identities, spec.images_per_identity, spec.clothes_per_identity
    rows = []
    for pid in range(n):
        for idx in range(m):
            rows.append(("train", pid, (idx // c) % 2, idx % c, idx))
    for pid in range(n, 2 * n):
        for idx in range(m):
            cam, clo = (idx // c) % 2, idx % c
            split = "query" if idx < c and m > c else "gallery"
            rows.append((split, pid, cam, clo, idx))
    return rows


def synth_generate(spec: SynthSpec, out_dir=None) -> dict[str, DatasetSplit]:
    """Generate train (ids 0..n-1) and query/gallery (ids n..2n-1) splits.

    When ``out_dir`` is given the dataset is written in the standard layout.
    """
    records: dict[str, list] = {s: [] for s in SPLITS}
    out = Path(out_dir) if out_dir is not None else None
    for split, pid, cam, clo, idx in _layout_for(spec):
        rgb, parse = draw_person(spec.image_size, pid, clo, idx, spec.seed)
        name = format_name(pid, cam, clo, idx)
        if out is not None:
            (out / split).mkdir(parents=True, exist_ok=True)
            (out / "parse" / split).mkdir(parents=True, exist_ok=True)
            Image.fromarray(rgb, mode="RGB").save(out / split / name, optimize=False)
            Image.fromarray(parse, mode="L").save(out / "parse" / split / name, optimize=False)
        records[split].append((f"{split}/{name}", rgb.astype(np.float32) / 255.0, parse, pid, cam, clo))
    return _build_splits(records)
