"""Benchmark the hot kernels: active backend versus the pure-numpy fallback.

Each compiled kernel keeps its original Python source on .py_func, so both
paths run in one process. Shapes mirror a real desk run (batch 128, an
8-32-32-3 scratch net, a 16-32-16-3 embedding net, 900-sample GMM fits).

Usage:
    python benchmarks/bench_kernels.py [--repeats 2000]

Run with COFORGET_DISABLE_NUMBA=1 to confirm the fallback is the only path;
the two columns then match.
"""

import argparse
import time

import numpy as np

from coforget import kernels
from coforget.net import Architecture, init_params


def timeit(fn, args, repeats):
    fn(*args)  # warm up (JIT compile on the accelerated path)
    start = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - start) / repeats


def bench_case(name, fn, args, repeats):
    fast = timeit(fn, args, repeats)
    slow = timeit(fn.py_func, args, max(repeats // 20, 5))
    ratio = slow / fast if fast > 0 else float("inf")
    print(f"{name:<38} {fast * 1e6:>10.1f} {slow * 1e6:>10.1f} {ratio:>8.1f}x")
    return fast, slow


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=2000)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"backend: {kernels.BACKEND}")
    print(f"{'kernel':<38} {'jit us':>10} {'python us':>10} {'speedup':>9}")

    for label, widths, batch in (
        ("scratch net fwd (128x8 -> 32-32-3)", (8, 32, 32, 3), 128),
        ("embed net fwd (128x16 -> 32-16-3)", (16, 32, 16, 3), 128),
    ):
        arch = Architecture(widths)
        theta = init_params(arch, 0)
        x = rng.normal(size=(batch, widths[0]))
        w = arch.widths_array()
        bench_case(label, kernels.mlp_forward, (theta, w, kernels.ACT_RELU, x), args.repeats)

        logits, acts = kernels.mlp_forward_acts(theta, w, kernels.ACT_RELU, x)
        dlogits = rng.normal(size=logits.shape)
        bench_case(
            label.replace("fwd", "fwd+acts"),
            kernels.mlp_forward_acts,
            (theta, w, kernels.ACT_RELU, x),
            args.repeats,
        )
        bench_case(
            label.replace("fwd", "backward"),
            kernels.mlp_backward,
            (theta, w, kernels.ACT_RELU, acts, dlogits),
            args.repeats,
        )

    losses = np.concatenate([rng.normal(0.2, 0.05, 600), rng.normal(0.8, 0.1, 300)])
    losses = (losses - losses.min()) / (losses.max() - losses.min())
    gmm_args = (
        losses,
        np.array([0.5, 0.5]),
        np.percentile(losses, [10.0, 90.0]),
        np.full(2, max(losses.var(), 1e-4)),
        100,
        1e-6,
        1e-4,
    )
    bench_case("gmm em, 900 losses", kernels.gmm_em_1d, gmm_args, max(args.repeats // 10, 20))


if __name__ == "__main__":
    main()
