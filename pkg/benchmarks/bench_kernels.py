"""Compiled kernels vs the numpy/pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 20]

Prints one row per kernel with the median time of each backend and the
speedup, after checking the two backends agree on the benchmark inputs.
"""
import argparse
import statistics
import time

import numpy as np

from fbzero import kernels
from fbzero.kernels import _pure


def _time(fn, repeat):
    fn()
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts)


def cases(rng):
    x = rng.standard_normal((512, 256)).astype(np.float32)
    g = rng.standard_normal((512, 256)).astype(np.float32)
    gamma = (1 + 0.1 * rng.standard_normal(256)).astype(np.float32)
    beta = (0.1 * rng.standard_normal(256)).astype(np.float32)
    _, xhat, rstd = _pure.layernorm_fwd(x, gamma, beta, 1e-6)
    cost = rng.random((64, 64))
    return [
        ("mish_fwd 512x256", lambda m: m.mish_fwd(x)),
        ("mish_bwd 512x256", lambda m: m.mish_bwd(x, g)),
        ("layernorm_fwd 512x256", lambda m: m.layernorm_fwd(x, gamma, beta, 1e-6)),
        ("layernorm_bwd 512x256", lambda m: m.layernorm_bwd(g, xhat, rstd, gamma)),
        ("assign 64x64", lambda m: m.assign(cost)),
    ]


def _agree(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(u, v, rtol=1e-4, atol=1e-5) for u, v in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if kernels.BACKEND != "cython":
        print("compiled extension not built; only the fallback is available")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':24s} {'compiled ms':>12s} {'fallback ms':>12s} {'speedup':>8s}")
    for name, fn in cases(rng):
        if not _agree(fn(kernels._ext), fn(_pure)):
            print(f"{name}: backends disagree")
            return 1
        tc = _time(lambda: fn(kernels._ext), args.repeat)
        tp = _time(lambda: fn(_pure), args.repeat)
        print(f"{name:24s} {tc * 1e3:12.3f} {tp * 1e3:12.3f} {tp / tc:8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
