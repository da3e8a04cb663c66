"""Compare the compiled and pure-python conv kernels on model-sized work.

Runs forward and backward passes for conv shapes that actually occur in
the estimators (desk-scale 16x16 packed images) and reports median
wall-clock per call plus the speedup of the compiled kernel. Exits
nonzero if only one backend is importable, since then there is nothing to
compare.

Usage: python benchmarks/kernel_bench.py [--reps N] [--batch B]
"""
import argparse
import statistics
import sys
import time

import numpy as np

from riscade.nn import backend


CASES = [
    # (name, in_ch, out_ch, height, width, kernel, stride)
    ("input 1->16", 1, 16, 16, 16, 3, 1),
    ("trunk 16->16", 16, 16, 16, 16, 3, 1),
    ("dense 32->16", 32, 16, 16, 16, 3, 1),
    ("fusion 1x1 32->16", 32, 16, 16, 16, 1, 1),
    ("disc stride2 32->32", 32, 32, 16, 16, 3, 2),
]


def _median_time(fn, reps):
    times = []
    fn()  # warmup
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def run_case(kernels, name, c_in, c_out, h, w, k, stride, batch, reps):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((batch, c_in, h, w))
    wgt = rng.standard_normal((c_out, c_in, k, k)) * 0.1
    pad = (k - 1) // 2
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    d_out = rng.standard_normal((batch, c_out, ho, wo))

    row = {"case": name}
    for bname, mod in kernels.items():
        fwd = _median_time(
            lambda: mod.conv2d_forward_kernel(x, wgt, stride, pad), reps)
        bwd = _median_time(
            lambda: mod.conv2d_backward_kernel(x, wgt, d_out, stride, pad),
            reps)
        row[bname] = (fwd, bwd)
    return row


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--batch", type=int, default=20)
    args = ap.parse_args(argv)

    names = backend.available_backends()
    if len(names) < 2:
        print(f"only {names} available; build the extension first "
              f"(pip install -e .)", file=sys.stderr)
        return 1
    kernels = {n: backend.get_kernel(n) for n in names}

    print(f"batch={args.batch}, reps={args.reps}, median seconds per call")
    header = f"{'case':24s}" + "".join(
        f"{n + ' fwd':>14s}{n + ' bwd':>14s}" for n in names)
    print(header)
    speed_f, speed_b = [], []
    for case in CASES:
        row = run_case(kernels, *case, batch=args.batch, reps=args.reps)
        line = f"{row['case']:24s}"
        for n in names:
            fwd, bwd = row[n]
            line += f"{fwd:14.6f}{bwd:14.6f}"
        print(line)
        if "python" in row and "cython" in row:
            speed_f.append(row["python"][0] / row["cython"][0])
            speed_b.append(row["python"][1] / row["cython"][1])
    if speed_f:
        print(f"\ncython speedup: forward x{statistics.median(speed_f):.2f}"
              f", backward x{statistics.median(speed_b):.2f} (median)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
