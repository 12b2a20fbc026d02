"""Numba vs numpy timings for the hot kernels, plus one training step under each backend.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The kernel table calls both twins in one process. The training-step rows run
in subprocesses so that ``CDSP_DISABLE_NUMBA`` takes effect at import time.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from cdsp import kernels
from cdsp.distmap import squared_edt

STEP_SNIPPET = """
import time, numpy as np
from cdsp import backend
from cdsp.harness.config import ExperimentConfig
from cdsp.harness.data import gen_synthetic_dataset
from cdsp.harness.train import train_segmentation
cfg = ExperimentConfig(epochs=1, warmup_epochs=0, batch=8, losses="segs")
samples = gen_synthetic_dataset(16, 3, 0)
train_segmentation(cfg, samples[:8])  # warm-up, triggers any compilation
t = time.perf_counter()
train_segmentation(cfg, samples)
print(backend(), time.perf_counter() - t)
"""


def cases():
    rng = np.random.default_rng(0)
    mask = rng.random((64, 64)) < 0.02
    f = np.where(mask, 0.0, np.inf)
    xp = rng.standard_normal((8, 32, 34, 34)).astype(np.float32)
    cols = kernels.im2col_np(xp, 3, 3, 1)
    a = rng.standard_normal((64, 288))
    b = rng.standard_normal((288, 256))
    yield "dt1d_lines 64x64", (f,), kernels.dt1d_lines_nb, kernels.dt1d_lines_np
    yield "im2col 8x32x32x32 k3", (xp, 3, 3, 1), kernels.im2col_nb, kernels.im2col_np
    yield "col2im 8x32x32x32 k3", (cols, 8, 32, 34, 34, 3, 3, 1), kernels.col2im_nb, kernels.col2im_np
    yield "matmul_ordered 64x288x256", (a, b), kernels.matmul_ordered_nb, kernels.matmul_ordered_np
    yield "squared_edt 64x64", (mask, 64, 64), (lambda m, h, w: squared_edt(m, h, w, kernels.dt1d_lines_nb)) if kernels.dt1d_lines_nb else None, (
        lambda m, h, w: squared_edt(m, h, w, kernels.dt1d_lines_np)
    )


def best(fn, args, repeat):
    fn(*args)
    number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-6)))
    return min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-step", action="store_true", help="only time the kernels")
    args = ap.parse_args()

    print(f"{'kernel':32s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, inputs, nb, npy in cases():
        t_np = best(npy, inputs, args.repeat)
        if nb is None:
            print(f"{name:32s} {'n/a':>10s} {t_np * 1e3:10.3f} {'':>8s}")
            continue
        t_nb = best(nb, inputs, args.repeat)
        print(f"{name:32s} {t_nb * 1e3:10.3f} {t_np * 1e3:10.3f} {t_np / t_nb:7.2f}x")

    if args.skip_step:
        return
    print()
    print(f"{'training epoch, 16 images':32s} {'seconds':>10s}")
    for disable in ("0", "1"):
        env = dict(os.environ, CDSP_DISABLE_NUMBA=disable)
        out = subprocess.run([sys.executable, "-c", STEP_SNIPPET], env=env, capture_output=True, text=True, check=True)
        backend, secs = out.stdout.split()
        print(f"{backend:32s} {float(secs):10.3f}")


if __name__ == "__main__":
    main()
