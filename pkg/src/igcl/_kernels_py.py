"""Numpy fallback for the compiled kernels; same signatures and results."""
import numpy as np


def label_masks(parse, lut):
    code = np.asarray(lut, dtype=np.uint8)[parse]
    return np.stack([code & 1, (code >> 1) & 1, (code >> 2) & 1]).astype(np.uint8)


def eval_ranks(order, q_pids, g_pids, q_cams, g_cams, q_clothes, g_clothes,
               exclude_same_camera, exclude_same_clothes):
    nq, ng = order.shape
    cmc = np.zeros((nq, ng), dtype=np.float64)
    ap = np.zeros(nq, dtype=np.float64)
    valid = np.zeros(nq, dtype=np.uint8)
    for q in range(nq):
        g = order[q]
        same = g_pids[g] == q_pids[q]
        drop = np.zeros(ng, dtype=bool)
        if exclude_same_camera:
            drop |= same & (g_cams[g] == q_cams[q])
        if exclude_same_clothes and q_clothes[q] >= 0:
            drop |= same & (g_clothes[g] == q_clothes[q])
        matches = same[~drop]
        if not matches.any():
            continue
        valid[q] = 1
        hits = np.cumsum(matches)
        ranks = np.flatnonzero(matches)
        ap[q] = sum((hits[ranks] / (ranks + 1.0)).tolist()) / len(ranks)
        cmc[q, ranks[0]:] = 1.0
    return cmc, ap, valid
