"""Time the compiled kernels against the numpy fallback and check they agree bit for bit.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from spectre import _kernels_py

try:
    from spectre import _kernels as _compiled
except ImportError:
    _compiled = None


def cases(rng):
    # pseudo-labelling one desk pre-training set: 64 segments x 240 patches, K = 32, D_s = 66
    x = rng.standard_normal((64 * 240, 66))
    cents = rng.standard_normal((32, 66))
    labels = rng.integers(0, 32, len(x))
    # rotating every head vector of one desk batch: 8 x 4 heads x 240 tokens, d_h = 16
    v = rng.standard_normal((8 * 4 * 240, 16))
    ang = rng.uniform(-50, 50, (len(v), 8))
    cos, sin = np.cos(ang), np.sin(ang)
    return {
        "nearest_centroid": (x, cents),
        "accumulate_centroids": (x, labels, 32),
        "rotate_pairs": (v, cos, sin),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(p, q) for p, q in zip(a, b))
    return np.asarray(a).tobytes() == np.asarray(b).tobytes()


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'numpy ms':>10}{'cython ms':>11}{'speedup':>9}  identical")
    for name, inputs in cases(rng).items():
        py_fn = getattr(_kernels_py, name)
        t_py = min(timeit.repeat(lambda: py_fn(*inputs), number=1, repeat=args.repeat)) * 1e3
        if _compiled is None:
            print(f"{name:<22}{t_py:>10.2f}{'n/a':>11}{'':>9}  extension not built")
            continue
        c_fn = getattr(_compiled, name)
        t_c = min(timeit.repeat(lambda: c_fn(*inputs), number=1, repeat=args.repeat)) * 1e3
        ok = same(py_fn(*inputs), c_fn(*inputs))
        print(f"{name:<22}{t_py:>10.2f}{t_c:>11.2f}{t_py / t_c:>8.1f}x  {ok}")


if __name__ == "__main__":
    main()
