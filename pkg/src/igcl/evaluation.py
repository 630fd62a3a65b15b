"""Retrieval evaluation: L2-normalised Euclidean ranking, CMC and mAP."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from igcl import kernels


@dataclass(frozen=True)
class ProtocolConfig:
    """Gallery filtering per query.

    ``exclude_same_camera`` drops same-identity entries shot by the query's
    camera; ``exclude_same_clothes`` drops same-identity entries wearing the
    query's clothes (cloth-changing setting).
    """

    exclude_same_camera: bool = True
    exclude_same_clothes: bool = False


@dataclass
class RankingResult:
    distance_matrix: np.ndarray
    ranked: np.ndarray
    mAP: float
    cmc: np.ndarray
    num_valid: int
    num_invalid: int
    ap: np.ndarray  # per query; NaN where no valid match

    def rank(self, k: int) -> float:
        return float(self.cmc[min(k, len(self.cmc)) - 1]) if len(self.cmc) else 0.0


@dataclass(frozen=True)
class Meta:
    pids: np.ndarray
    cams: np.ndarray
    clothes: np.ndarray  # -1 where unknown

    @classmethod
    def from_samples(cls, samples) -> "Meta":
        return cls(
            pids=np.array([s.identity for s in samples], dtype=np.int64),
            cams=np.array([s.camera for s in samples], dtype=np.int64),
            clothes=np.array([-1 if s.clothing is None else s.clothing for s in samples], dtype=np.int64),
        )

    @classmethod
    def of(cls, pids, cams=None, clothes=None) -> "Meta":
        pids = np.asarray(pids, dtype=np.int64)
        n = len(pids)
        return cls(
            pids=pids,
            cams=np.zeros(n, np.int64) if cams is None else np.asarray(cams, dtype=np.int64),
            clothes=np.full(n, -1, np.int64) if clothes is None else np.asarray(clothes, dtype=np.int64),
        )


def l2_normalize(features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    norms = np.linalg.norm(features, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot L2-normalise a zero feature vector")
    return features / norms


def pairwise_euclidean(query: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    """sqrt(2 - 2 <q, g>) for unit vectors, clipped at 0."""
    query = np.asarray(query, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    if query.shape[1] != gallery.shape[1]:
        raise ValueError(f"feature dims differ: {query.shape[1]} vs {gallery.shape[1]}")
    sq = (query**2).sum(1)[:, None] + (gallery**2).sum(1)[None, :] - 2.0 * query @ gallery.T
    return np.sqrt(np.clip(sq, 0.0, None))


def compute_cmc_map(dist: np.ndarray, query: Meta, gallery: Meta,
                    protocol: ProtocolConfig = ProtocolConfig(), backend: Optional[str] = None) -> RankingResult:
    """Rank gallery per query (stable in gallery order on ties) and score it.

    Queries without any valid match after filtering are excluded from both
    metrics and counted in ``num_invalid``.
    """
    dist = np.asarray(dist, dtype=np.float64)
    if dist.shape != (len(query.pids), len(gallery.pids)):
        raise ValueError(f"distance matrix {dist.shape} does not match {len(query.pids)}x{len(gallery.pids)} metadata")
    order = np.argsort(dist, axis=1, kind="stable")
    cmc_all, ap, valid = kernels.eval_ranks(
        order, query.pids, gallery.pids, query.cams, gallery.cams, query.clothes, gallery.clothes,
        protocol.exclude_same_camera, protocol.exclude_same_clothes, backend=backend,
    )
    valid = valid.astype(bool)
    n_valid = int(valid.sum())
    if n_valid:
        cmc = cmc_all[valid].sum(axis=0) / n_valid
        mAP = sum(ap[valid].tolist()) / n_valid
    else:
        cmc = np.zeros(dist.shape[1])
        mAP = 0.0
    ap = np.where(valid, ap, np.nan)
    return RankingResult(dist, order, mAP, cmc, n_valid, int((~valid).sum()), ap)


def cosine_similarity_matrix(features: np.ndarray) -> np.ndarray:
    f = l2_normalize(features)
    sim = np.clip(f @ f.T, -1.0, 1.0)
    sim = (sim + sim.T) / 2.0
    np.fill_diagonal(sim, 1.0)
    return sim


def export_similarity_matrix(features: np.ndarray, path, labels: Optional[Sequence[str]] = None) -> np.ndarray:
    """Cosine similarity heatmap written as a PNG; returns the matrix."""
    if len(features) < 2:
        raise ValueError("similarity matrix needs at least 2 samples")
    sim = cosine_similarity_matrix(features)
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    n = len(sim)
    fig, ax = plt.subplots(figsize=(1.0 + 0.4 * n, 0.8 + 0.4 * n))
    im = ax.imshow(sim, vmin=-1, vmax=1, cmap="viridis")
    if labels is not None:
        ax.set_xticks(range(n), labels, rotation=90, fontsize=6)
        ax.set_yticks(range(n), labels, fontsize=6)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return sim


CMC_RANKS = (1, 5, 10, 20)


def write_metrics(result: RankingResult, out_dir, extra: Optional[dict] = None) -> dict:
    """``metrics.txt`` (key=value record) and ``cmc.tsv`` (rank, accuracy)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record = {"mAP": result.mAP}
    record.update({f"rank{k}": result.rank(k) for k in CMC_RANKS})
    record.update({"num_query": len(result.ap), "num_valid": result.num_valid, "num_invalid": result.num_invalid,
                   "num_gallery": result.distance_matrix.shape[1]})
    record.update(extra or {})
    (out / "metrics.txt").write_text("".join(f"{k}={v}\n" for k, v in record.items()))
    lines = ["rank\taccuracy"] + [f"{i + 1}\t{v:.6f}" for i, v in enumerate(result.cmc)]
    (out / "cmc.tsv").write_text("\n".join(lines) + "\n")
    return record
