"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Inputs are sized like one epoch of the default synthetic run: ~2k series of
52 weeks for the rolling statistics, 512-row batches for the convolution and
embedding kernels, ~100k scored rows for the threshold search.
"""

import argparse
import timeit

import numpy as np

from nextbuy import kernels
from nextbuy.nncore import causal_taps


def make_cases(scale, rng):
    n_series = max(1, int(2000 * scale))
    values = rng.poisson(1.0, (n_series, 52)).astype(np.float64)

    batch = max(1, int(512 * scale))
    in_pos, taps = causal_taps(np.arange(16), 3, 2)
    x = rng.normal(size=(batch, len(in_pos), 32))
    dcols = rng.normal(size=(batch, taps.shape[0], 3 * 32))

    codes = rng.integers(0, 500, batch)
    dout = rng.normal(size=(batch, 50))

    n_rows = max(1, int(100_000 * scale))
    groups = np.sort(rng.integers(0, max(1, int(500 * scale)), n_rows))
    probs = rng.random(n_rows)
    actual = (rng.random(n_rows) < probs).astype(np.int64)
    order = np.lexsort((-probs, groups))
    _, starts = np.unique(groups[order], return_index=True)
    offsets = np.append(starts, n_rows).astype(np.int64)

    return {
        "rolling_stats (w=12)": lambda k: k.rolling_stats(values, 12),
        "im2col": lambda k: k.im2col(x, taps),
        "col2im": lambda k: k.col2im(dcols, taps, len(in_pos)),
        "embedding_backward": lambda k: k.embedding_backward(500, codes, dout),
        "grouped_best_thresholds": lambda k: k.grouped_best_thresholds(probs[order], actual[order], offsets,
                                                                       np.nextafter(1.0, 2.0)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--scale", type=float, default=1.0, help="multiply every input size")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    cases = make_cases(args.scale, np.random.default_rng(args.seed))
    print(f"selected backend: {kernels.BACKEND}; available: {', '.join(backends)}")
    header = f"{'kernel':<26}" + "".join(f"{name + ' ms':>14}" for name in backends)
    if "cython" in backends:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, fn in cases.items():
        best = {}
        for bname, impl in backends.items():
            fn(impl)  # warm up
            best[bname] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat)) * 1e3
        line = f"{name:<26}" + "".join(f"{best[b]:>14.3f}" for b in backends)
        if "cython" in best:
            line += f"{best['python'] / best['cython']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()
