"""Compare the compiled kernels against the NumPy fallback.

Run:  python benchmarks/bench_kernels.py [--batch N]

Times the 3x3 convolution forward pass and weight-gradient pass over the
layer shapes of the default architecture and of the small architecture the
end-to-end tests use, then one full training step of each network. The
active backend for the full-step rows follows CANPHYS_KERNELS.
"""

import argparse
import time

import numpy as np

from canphys import kernels
from canphys.kernels import numpy_backend
from canphys.model import CanArch, backward_batch, forward_batch, init_params

DEFAULT_LAYERS = [
    ("conv1 36x36  3->32", (36, 3, 32)),
    ("conv2 36x36 32->32", (36, 32, 32)),
    ("conv3 18x18 32->64", (18, 32, 64)),
    ("conv4 18x18 64->64", (18, 64, 64)),
]
SMALL_LAYERS = [
    ("conv1 36x36  3-> 8", (36, 3, 8)),
    ("conv2 36x36  8-> 8", (36, 8, 8)),
    ("conv3 18x18  8->16", (18, 8, 16)),
    ("conv4 18x18 16->16", (18, 16, 16)),
]


def timeit(fn, min_time=0.3):
    fn()
    start = time.perf_counter()
    calls = 0
    while time.perf_counter() - start < min_time:
        fn()
        calls += 1
    return (time.perf_counter() - start) / calls


def bench_conv(batch):
    rng = np.random.default_rng(0)
    have_core = kernels.BACKEND == "cython"
    print(f"\n3x3 convolution kernels, batch {batch} "
          f"(compiled core {'available' if have_core else 'NOT built'})")
    header = f"{'layer':22s} {'numpy fwd':>11s} {'cython fwd':>11s} " \
             f"{'numpy gw':>11s} {'cython gw':>11s}"
    print(header)
    for name, (side, ci, co) in DEFAULT_LAYERS + SMALL_LAYERS:
        x = rng.standard_normal((batch, side, side, ci)).astype(np.float32)
        w = rng.standard_normal((3, 3, ci, co)).astype(np.float32) * 0.1
        b = np.zeros(co, dtype=np.float32)
        gy = rng.standard_normal((batch, side, side, co)).astype(np.float32)
        t_np_f = timeit(lambda: numpy_backend.conv2d_same(x, w, b))
        t_np_g = timeit(lambda: numpy_backend.conv2d_param_grad(x, gy))
        if have_core:
            nt = kernels.num_threads()
            t_cy_f = timeit(lambda: kernels._core.conv2d_same(x, w, b, nt))
            t_cy_g = timeit(
                lambda: kernels._core.conv2d_param_grad(x, gy, nt))
            cy_f, cy_g = f"{t_cy_f * 1e3:8.1f} ms", f"{t_cy_g * 1e3:8.1f} ms"
        else:
            cy_f = cy_g = "       --"
        print(f"{name:22s} {t_np_f * 1e3:8.1f} ms {cy_f:>11s} "
              f"{t_np_g * 1e3:8.1f} ms {cy_g:>11s}")


def bench_full_step(batch):
    rng = np.random.default_rng(1)
    print(f"\nfull forward+backward, batch {batch} "
          f"(backend: {kernels.BACKEND}; set CANPHYS_KERNELS to switch)")
    for label, arch in (
            ("default arch 32/32/64/64 n8=128",
             CanArch(input_side=36)),
            ("small arch    8/ 8/16/16 n8=32",
             CanArch(input_side=36, channels=(8, 8, 16, 16), n8=32))):
        params = init_params(arch, 0)
        xm = rng.standard_normal(
            (batch, 36, 36, 3)).astype(np.float32)
        xa = rng.standard_normal(
            (batch, 36, 36, 3)).astype(np.float32)
        labels = rng.standard_normal(batch).astype(np.float32)

        def step():
            _, _, trace = forward_batch(xm, xa, params, train=True,
                                        dropout_seed=0)
            backward_batch(trace, labels)

        t = timeit(step, min_time=1.0)
        print(f"  {label}: {t * 1e3:7.1f} ms/step "
              f"({batch / t:,.0f} samples/s)")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=128)
    args = parser.parse_args()
    bench_conv(args.batch)
    bench_full_step(args.batch)


if __name__ == "__main__":
    main()
