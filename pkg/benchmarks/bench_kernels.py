#!/usr/bin/env python3
"""Compare the compiled kernel core against the NumPy fallback.

Times each kernel on training-shaped inputs and one full training epoch
under both backends.  The dense products delegate to NumPy's BLAS in both
backends, so their row is expected to sit at about 1.0x; the wins come
from the fused rowwise loops and the sequential EMA updates.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

from mopro import _kernels as K
from mopro._kernels import _numpy as np_impl

try:
    from mopro._kernels import _fast as cy_impl
except ImportError:
    cy_impl = None

KERNEL_NAMES = (
    "matmul_fwd", "matmul_bwd_a", "matmul_bwd_b",
    "relu_fwd", "relu_bwd", "l2norm_fwd", "l2norm_bwd",
    "softmax_fwd", "softmax_bwd", "xent_fwd", "xent_bwd",
    "ema_update", "proto_ema_update",
)


def activate(impl):
    """Point the shared kernel namespace at one implementation."""
    for name in KERNEL_NAMES:
        setattr(K, name, getattr(impl, name))


def timeit(fn, repeats):
    fn()  # warm-up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def timeit_interleaved(fn, impls, repeats, rounds=5):
    """Best-of-rounds per implementation, alternating to cancel drift."""
    best = {id(impl): float("inf") for impl in impls}
    for impl in impls:
        activate(impl)
        fn()  # warm both paths up front
    for _ in range(rounds):
        for impl in impls:
            activate(impl)
            best[id(impl)] = min(best[id(impl)], timeit(fn, repeats))
    return [best[id(impl)] for impl in impls]


def kernel_cases(rng):
    b, d_h, d_p, k, r = 64, 128, 16, 10, 1024
    x_h = rng.standard_normal((b, d_h))
    g_h = rng.standard_normal((b, d_h))
    w = rng.standard_normal((d_h, d_h))
    z = rng.standard_normal((b, d_p))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    gz = rng.standard_normal((b, d_p))
    inst_logits = rng.standard_normal((b, r + 1))
    inst_targets = np.zeros(b, dtype=np.int64)
    glosses = rng.standard_normal(b)
    protos = rng.standard_normal((k, d_p))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    labels = rng.integers(-1, k, size=b).astype(np.int64)
    ema_dst = rng.standard_normal((d_h, d_h))
    ema_src = rng.standard_normal((d_h, d_h))

    y_relu = np.abs(x_h)
    norm_y, norm_inv = np_impl.l2norm_fwd(z)
    soft_p = np_impl.softmax_fwd(inst_logits)
    _, xent_p = np_impl.xent_fwd(inst_logits, inst_targets)

    return [
        ("matmul 64x128 @ 128x128", lambda: K.matmul_fwd(x_h, w)),
        ("relu fwd 64x128", lambda: K.relu_fwd(x_h)),
        ("relu bwd 64x128", lambda: K.relu_bwd(y_relu, g_h)),
        ("l2norm fwd 64x16", lambda: K.l2norm_fwd(z)),
        ("l2norm bwd 64x16", lambda: K.l2norm_bwd(norm_y, norm_inv, gz)),
        ("softmax fwd 64x1025", lambda: K.softmax_fwd(inst_logits)),
        ("softmax bwd 64x1025", lambda: K.softmax_bwd(soft_p, soft_p)),
        ("xent fwd 64x1025", lambda: K.xent_fwd(inst_logits, inst_targets)),
        ("xent bwd 64x1025", lambda: K.xent_bwd(xent_p, inst_targets, glosses)),
        ("ema update 128x128", lambda: K.ema_update(ema_dst, ema_src, 0.999)),
        ("proto ema batch 64", lambda: K.proto_ema_update(protos, z, labels, 0.999)),
    ]


def bench_kernels(repeats):
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    print(f"{'kernel':28s} {'numpy':>12s} {'cython':>12s} {'speedup':>8s}")
    for label, fn in cases:
        if cy_impl is None:
            activate(np_impl)
            t_np = timeit(fn, repeats)
            print(f"{label:28s} {t_np * 1e6:10.1f} us {'-':>12s} {'-':>8s}")
            continue
        t_np, t_cy = timeit_interleaved(fn, (np_impl, cy_impl), repeats)
        print(f"{label:28s} {t_np * 1e6:10.1f} us {t_cy * 1e6:10.1f} us "
              f"{t_np / t_cy:7.2f}x")


def bench_epoch():
    from mopro import datagen, trainer

    gen = datagen.GenConfig(per_class=100)  # 1000 samples keeps this quick
    ds = datagen.generate(gen)
    cfg = trainer.TrainConfig(epochs=8, warmup_epochs=1, queue_size=1024)

    def one_epoch():
        # one warm-up epoch fills the queue, so the timed portion is
        # dominated by main-phase steps with the full negative set
        t = trainer.Trainer(cfg, ds)
        for _ in range(8):
            t.train_epoch()

    print(f"\n{'training (8 epochs, n=1000)':28s}", end=" ")
    if cy_impl is None:
        activate(np_impl)
        print(f"{timeit(one_epoch, 3):10.2f} s  (numpy only)")
        return
    t_np, t_cy = timeit_interleaved(one_epoch, (np_impl, cy_impl), 2, rounds=3)
    print(f"{t_np:10.3f} s {t_cy:10.3f} s {t_np / t_cy:7.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()
    if cy_impl is None:
        print("compiled kernels not built; timing the NumPy backend only\n")
    bench_kernels(args.repeats)
    bench_epoch()
    activate(np_impl if cy_impl is None else cy_impl)


if __name__ == "__main__":
    main()
