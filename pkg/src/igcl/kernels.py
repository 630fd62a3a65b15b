"""Kernel backend selection.

The Cython build is used when importable; set ``IGCL_PURE_PYTHON=1`` to force
the numpy fallback.
"""
import os

import numpy as np

from igcl import _kernels_py

_impl = _kernels_py
BACKEND = "python"
if os.environ.get("IGCL_PURE_PYTHON") != "1":
    try:
        from igcl import _kernels_cy as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        pass


def label_masks(parse: np.ndarray, lut: np.ndarray, backend=None) -> np.ndarray:
    impl = _pick(backend)
    return impl.label_masks(np.ascontiguousarray(parse, dtype=np.uint8), np.ascontiguousarray(lut, dtype=np.uint8))


def eval_ranks(order, q_pids, g_pids, q_cams, g_cams, q_clothes, g_clothes,
               exclude_same_camera: bool, exclude_same_clothes: bool, backend=None):
    impl = _pick(backend)

    def as_long(a):
        return np.ascontiguousarray(a, dtype=np.int_)

    return impl.eval_ranks(
        as_long(order), as_long(q_pids), as_long(g_pids), as_long(q_cams), as_long(g_cams),
        as_long(q_clothes), as_long(g_clothes), bool(exclude_same_camera), bool(exclude_same_clothes),
    )


def _pick(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _kernels_py
    if backend == "cython":
        from igcl import _kernels_cy

        return _kernels_cy
    raise ValueError(f"unknown kernel backend {backend!r}")
