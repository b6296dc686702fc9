"""Time one loss-and-gradient pass on the numpy and numba kernels.

    python benchmarks/bench_kernels.py [--hidden 64] [--batch 32] [--lengths 196 784]
"""

import argparse
import time

import numpy as np

from fedseq import gru
from fedseq.batching import collate
from fedseq.sequence_data import LabeledSequence


def bench(backend, batch, p, repeats):
    ws = gru.Workspace()
    gru.loss_and_grads(batch, p, backend=backend, workspace=ws)  # compile / warm caches
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        gru.loss_and_grads(batch, p, backend=backend, workspace=ws)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hidden", type=int, default=64)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--lengths", type=int, nargs="+", default=[196, 441, 784])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    p = gru.init_params(1, args.hidden, 10, seed=1)
    print(f"{'T':>5} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'numba us/step':>14}")
    for t in args.lengths:
        seqs = [LabeledSequence(rng.random((t, 1)), int(rng.integers(10))) for _ in range(args.batch)]
        batch = collate(seqs)
        a = bench("numpy", batch, p, args.repeats)
        b = bench("numba", batch, p, args.repeats)
        print(f"{t:>5} {a * 1e3:>10.1f} {b * 1e3:>10.1f} {a / b:>8.2f} {b / t * 1e6:>14.1f}")


if __name__ == "__main__":
    main()
