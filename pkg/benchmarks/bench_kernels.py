"""Compare the compiled and pure-Python kernel backends.

    python benchmarks/bench_kernels.py --n 1000000 --repeat 3
"""
import argparse
import time

import numpy as np

from fedzip import _backend
from fedzip.codec import ENCODERS, decode, encode
from fedzip.quantize import QuantizedTensor


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def sparse_tensor(n: int, infrequent: float, rng) -> QuantizedTensor:
    labels = np.zeros(n, dtype=np.uint8)
    r = max(1, int(infrequent * n))
    labels[rng.choice(n, r, replace=False)] = rng.integers(1, 3, r)
    return QuantizedTensor("bench", (n,), "weight", labels, np.float32([0.0, -0.1, 0.1]))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=1_000_000, help="elements per tensor")
    parser.add_argument("--infrequent", type=float, default=0.01, help="fraction of non-dominant labels")
    parser.add_argument("--dp-points", type=int, default=2000, help="sorted values for the k-means DP")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    q = sparse_tensor(args.n, args.infrequent, rng)
    vals = np.sort(rng.normal(size=args.dp_points))
    prefix = np.concatenate([[0.0], np.cumsum(vals)])
    prefix_sq = np.concatenate([[0.0], np.cumsum(vals * vals)])

    backends = _backend.available()
    rows = []
    for encoder in ENCODERS:
        encoded = encode(q, encoder)
        rows.append((f"{encoder} encode", {b: best_of(lambda: encode(q, encoder, _backend.get(b)), args.repeat)
                                           for b in backends}))
        rows.append((f"{encoder} decode", {b: best_of(lambda: decode(encoded, _backend.get(b)), args.repeat)
                                           for b in backends}))
    rows.append(("kmeans dp k=3", {b: best_of(lambda: _backend.get(b).kmeans_dp_bounds(prefix, prefix_sq, 3),
                                              args.repeat) for b in backends}))

    print(f"n={args.n} infrequent={args.infrequent} dp_points={args.dp_points} best of {args.repeat}")
    print(f"{'kernel':<16}" + "".join(f"{b + ' ms':>14}" for b in backends) + f"{'speedup':>10}")
    for name, times in rows:
        cells = "".join(f"{1e3 * times[b]:>14.2f}" for b in backends)
        speedup = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:<16}{cells}{speedup:>9.1f}x")


if __name__ == "__main__":
    main()
