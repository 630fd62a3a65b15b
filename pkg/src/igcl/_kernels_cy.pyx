# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: parse-map labelling and per-query ranking metrics."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def label_masks(const unsigned char[:, ::1] parse, const unsigned char[::1] lut):
    """One pass over the parse map; lut bit 0/1/2 = foreground/clothes/upper."""
    cdef Py_ssize_t h = parse.shape[0], w = parse.shape[1], i, j
    cdef unsigned char code
    out = np.zeros((3, h, w), dtype=np.uint8)
    cdef unsigned char[:, :, ::1] o = out
    for i in range(h):
        for j in range(w):
            code = lut[parse[i, j]]
            o[0, i, j] = code & 1
            o[1, i, j] = (code >> 1) & 1
            o[2, i, j] = (code >> 2) & 1
    return out


def eval_ranks(
    const long[:, ::1] order,
    const long[::1] q_pids,
    const long[::1] g_pids,
    const long[::1] q_cams,
    const long[::1] g_cams,
    const long[::1] q_clothes,
    const long[::1] g_clothes,
    bint exclude_same_camera,
    bint exclude_same_clothes,
):
    cdef Py_ssize_t nq = order.shape[0], ng = order.shape[1]
    cdef Py_ssize_t q, r, g, kept, first
    cdef long qp, qc, ql
    cdef double hits, prec_sum
    cmc = np.zeros((nq, ng), dtype=np.float64)
    ap = np.zeros(nq, dtype=np.float64)
    valid = np.zeros(nq, dtype=np.uint8)
    cdef double[:, ::1] cmc_v = cmc
    cdef double[::1] ap_v = ap
    cdef unsigned char[::1] valid_v = valid
    for q in range(nq):
        qp = q_pids[q]
        qc = q_cams[q]
        ql = q_clothes[q]
        kept = 0
        hits = 0.0
        prec_sum = 0.0
        first = -1
        for r in range(ng):
            g = order[q, r]
            if g_pids[g] == qp:
                if exclude_same_camera and g_cams[g] == qc:
                    continue
                if exclude_same_clothes and ql >= 0 and g_clothes[g] == ql:
                    continue
                kept += 1
                hits += 1.0
                prec_sum += hits / kept
                if first < 0:
                    first = kept - 1
            else:
                kept += 1
        if first < 0:
            continue
        valid_v[q] = 1
        ap_v[q] = prec_sum / hits
        for r in range(first, ng):
            cmc_v[q, r] = 1.0
    return cmc, ap, valid
