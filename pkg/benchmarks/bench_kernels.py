"""Compare the numba and pure-numpy kernel backends.

Run:  python benchmarks/bench_kernels.py
The same comparison can be forced package-wide with DPP_NO_NUMBA=1.
"""

import time

import numpy as np

from stagediff import kernels
from stagediff.orchestrator import PipelineConfig, run
from stagediff.prompts import plan_from_text


def bench(fn, *args, repeat=200):
    fn(*args)  # warm (includes JIT compilation on the numba path)
    best = float("inf")
    for _ in range(5):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn(*args)
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best


def main():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(256, 256))
    z_prev = rng.normal(size=(64, 64, 3))
    z_hat = rng.normal(size=(64, 64, 3))
    mask = (rng.random((64, 64)) > 0.5).astype(np.uint8)
    small = rng.random((32, 32))

    cases = [
        ("softmax_rows 256x256", kernels.softmax_rows, (logits,)),
        ("masked_blend 64x64x3", kernels.masked_blend, (z_prev, z_hat, mask)),
        ("minmax_binarize 32x32", kernels.minmax_binarize, (small, 0.5)),
        ("block_upsample 32->256", kernels.block_upsample, (small, 8, 8)),
    ]

    print(f"{'kernel':28s} {'numpy':>12s} {'numba':>12s} {'speedup':>9s}")
    for name, fn, args in cases:
        kernels.use_numba(False)
        t_np = bench(fn, *args)
        t_nb = None
        if kernels.HAVE_NUMBA:
            kernels.use_numba(True)
            t_nb = bench(fn, *args)
        if t_nb is None:
            print(f"{name:28s} {t_np*1e6:10.2f}us        (no numba)")
        else:
            print(
                f"{name:28s} {t_np*1e6:10.2f}us {t_nb*1e6:10.2f}us "
                f"{t_np/t_nb:8.2f}x"
            )

    plan = plan_from_text(
        "a red dog with sunglasses and a blue cat with a necklace", "B"
    )
    cfg = PipelineConfig()
    for backend, flag in (("numpy", False), ("numba", True)):
        if flag and not kernels.HAVE_NUMBA:
            continue
        kernels.use_numba(flag)
        run(plan, cfg, 1)  # warm
        t0 = time.perf_counter()
        run(plan, cfg, 1)
        print(f"full pipeline (6 branches, T=50) [{backend}]: "
              f"{time.perf_counter() - t0:.3f}s")


if __name__ == "__main__":
    main()
