"""Compare the pure-numpy and compiled scan kernels.

Times the forward sequential kernel, the chunked parallel scan, and the
adjoint for each available backend, and reports agreement between them.

    python benchmarks/compare_backends.py [--lengths 1024 8192 65536]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from rawburst import kernels
from rawburst.scan import BurstSequence, SelectiveScanParams, scan_parallel, scan_sequential


def best_time(fn, repeats):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return out, best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--lengths", type=int, nargs="+", default=[1024, 8192, 65536])
    parser.add_argument("--d-inner", type=int, default=32)
    parser.add_argument("--state", type=int, default=8)
    parser.add_argument("--chunk", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    backends = kernels.available_backends()
    print(f"available backends: {backends}")
    rng = np.random.default_rng(args.seed)
    params = SelectiveScanParams.random(args.d_inner, args.state, rng, dtype=np.float32)

    header = f"{'L':>8} {'backend':>9} {'kernel':>6} {'tokens/s':>12} {'max diff':>10}"
    print(header)
    print("-" * len(header))
    for length in args.lengths:
        tokens = rng.standard_normal((length, args.d_inner)).astype(np.float32)
        seq = BurstSequence(tokens, length, 1, 1)
        reference = None
        for backend in backends:
            kernels.set_backend(backend)
            y_seq, dt_seq = best_time(lambda: scan_sequential(seq, params), args.repeats)
            y_par, dt_par = best_time(
                lambda: scan_parallel(seq, params, chunk=args.chunk), args.repeats
            )
            if reference is None:
                reference = y_seq
            for kernel, y, dt in (("seq", y_seq, dt_seq), ("par", y_par, dt_par)):
                diff = float(np.max(np.abs(y - reference)))
                print(f"{length:>8} {backend:>9} {kernel:>6} {length / dt:>12.0f} {diff:>10.2e}")
    kernels.set_backend("auto")


if __name__ == "__main__":
    main()
