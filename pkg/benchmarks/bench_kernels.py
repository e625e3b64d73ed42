"""Compiled kernels versus the numpy/scipy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Each row is the best of ``--repeat`` runs. The last rows time whole network
passes, where the kernels share the work with BLAS.
"""
import argparse
import time

import numpy as np

from clusternet import kernels
from clusternet.models import Model, foveanet_spec


def best_of(fn, repeat):
    t = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        t.append(time.perf_counter() - t0)
    return min(t)


def cases(rng):
    x = rng.standard_normal((8, 16, 130, 130)).astype(np.float32)
    cols = kernels.fallback.im2col(x, 3, 3, 1, 128, 128)
    pooled, arg = kernels.fallback.maxpool2x2_forward(x)
    mask = (rng.random((1024, 1024)) < 0.3).astype(np.uint8)
    fovea = Model(foveanet_spec(5, width=16), 4.0)
    chips = rng.standard_normal((8, 5, 128, 128)).astype(np.float32)
    return [
        ("im2col 8x16x130x130 k3", lambda: kernels.im2col(x, 3, 3, 1, 128, 128)),
        ("col2im 8x16x130x130 k3", lambda: kernels.col2im(cols, 8, 16, 130, 130, 3, 3, 1, 128, 128)),
        ("maxpool fwd 8x16x130x130", lambda: kernels.maxpool2x2_forward(x)),
        ("maxpool bwd 8x16x130x130", lambda: kernels.maxpool2x2_backward(pooled, arg)),
        ("label8 1024x1024 p=0.3", lambda: kernels.label8(mask)),
        ("FoveaNet fwd 8 chips", lambda: fovea.forward_raw(chips, 8)),
        ("FoveaNet fwd+bwd 8 chips", lambda: fovea.backward(fovea.forward(chips, train=True))),
    ]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if kernels.compiled is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    rows = cases(np.random.default_rng(0))
    print(f"{'case':<28}{'numpy ms':>10}{'compiled ms':>13}{'speedup':>9}")
    for name, fn in rows:
        res = {}
        for b in ("numpy", "compiled"):
            kernels.use(b)
            fn()  # warm up
            res[b] = best_of(fn, args.repeat)
        print(f"{name:<28}{res['numpy'] * 1e3:>10.1f}{res['compiled'] * 1e3:>13.1f}"
              f"{res['numpy'] / res['compiled']:>8.1f}x")


if __name__ == "__main__":
    main()
