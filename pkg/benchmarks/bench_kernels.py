"""Compare the compiled and numpy kernels on parse labelling and ranking evaluation.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from igcl import kernels
from igcl.encoder import DEFAULT_PARTITION


def cases(rng):
    parse = rng.integers(0, 18, size=(384, 128)).astype(np.uint8)
    lut = DEFAULT_PARTITION.lut()
    yield "label_masks 384x128", lambda b: kernels.label_masks(parse, lut, backend=b)

    q, g = 500, 5000
    order = np.argsort(rng.random((q, g)), axis=1, kind="stable")
    meta = [rng.integers(0, 300, q), rng.integers(0, 300, g), rng.integers(0, 6, q), rng.integers(0, 6, g),
            rng.integers(0, 3, q), rng.integers(0, 3, g), True, True]
    yield f"eval_ranks {q}x{g}", lambda b: kernels.eval_ranks(order, *meta, backend=b)


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    if kernels.BACKEND != "cython":
        print("compiled extension not available; only the python backend is timed")
    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, fn in cases(rng):
        times = [min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) for b in backends]
        row = f"{name:<26}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
