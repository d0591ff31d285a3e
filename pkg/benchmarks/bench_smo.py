"""Time the SMO solver with the numba kernel against the pure-numpy one.

    python benchmarks/bench_smo.py [--sizes 500x50,2000x600] [--repeat 3]

Both backends run on the same standardized data; the script also checks that
they produce the same model digest.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from sendguard import _accel
from sendguard.classifier import TrainingSet, train_smo


def dataset(n: int, d: int, seed: int) -> TrainingSet:
    rng = np.random.default_rng(seed)
    shift = np.zeros(d)
    shift[: max(1, d // 10)] = 0.8
    pos = rng.normal(size=(n, d)) + shift
    neg = rng.normal(size=(n, d)) - shift
    return TrainingSet(pos, neg)


def timed(ts: TrainingSet, use_numba: bool, repeat: int):
    best, model = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        model = train_smo(ts, use_numba=use_numba)
        best = min(best, time.perf_counter() - t0)
    return best, model


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="200x50,1000x200,2000x600")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _accel.HAVE_NUMBA:
        timed(dataset(10, 3, 0), True, 1)  # JIT warm-up
    print(f"{'n/class x d':>14} {'iters':>8} {'numpy s':>9} {'numba s':>9} {'speedup':>8} same")
    for size in args.sizes.split(","):
        n, d = (int(x) for x in size.split("x"))
        ts = dataset(n, d, seed=n + d)
        t_np, m_np = timed(ts, False, args.repeat)
        if _accel.HAVE_NUMBA:
            t_nb, m_nb = timed(ts, True, args.repeat)
            same = m_nb.digest() == m_np.digest()
            print(f"{size:>14} {m_np.iterations:>8} {t_np:>9.3f} {t_nb:>9.3f} {t_np / t_nb:>8.2f} {same}")
        else:
            print(f"{size:>14} {m_np.iterations:>8} {t_np:>9.3f} {'-':>9} {'-':>8} -")


if __name__ == "__main__":
    main()
