"""Compare the compiled and pure-Python kernel backends.

Times the forest kernel at the largest grid settings and a full 322-model
matrix row, and checks that both backends return identical numbers.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import statistics
import time

import numpy as np

from tsselect import _pykernels

try:
    from tsselect import _ckernels
except ImportError:
    _ckernels = None


def timeit(fn, repeat):
    samples = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def _flat(result):
    if isinstance(result, float):
        return [result]
    return [v for item in result for v in _flat(item)]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; only the Python backend is available")
        return 1

    rng = np.random.default_rng(0)
    series = rng.normal(size=15).tolist()
    cases = [
        ("forest n=1000 depth=None", lambda k: k.forest_predict(series, 3, 1000, -1, 42)),
        ("forest n=250 depth=5", lambda k: k.forest_predict(series, 3, 250, 5, 42)),
        ("exp_smooth len=16 x1000", lambda k: [k.exp_smooth(series, 0.3) for _ in range(1000)]),
    ]
    print(f"{'case':<28}{'python (ms)':>14}{'cython (ms)':>14}{'speedup':>10}  identical")
    for name, fn in cases:
        py = timeit(lambda: fn(_pykernels), args.repeat)
        cy = timeit(lambda: fn(_ckernels), args.repeat)
        same = _flat(fn(_pykernels)) == _flat(fn(_ckernels))
        print(f"{name:<28}{py * 1e3:>14.2f}{cy * 1e3:>14.2f}{py / cy:>9.1f}x  {same}")

    grid = [(n, d) for n in (10, 50, 100, 250, 500, 1000) for d in (2, 5, 10, 25, 50, -1)]
    row = lambda k: [k.forest_predict(series, 3, n, d, 7) for n, d in grid for _ in (0, 1)]  # noqa: E731
    py = timeit(lambda: row(_pykernels), max(1, args.repeat // 2))
    cy = timeit(lambda: row(_ckernels), max(1, args.repeat // 2))
    same = row(_pykernels) == row(_ckernels)
    print(f"{'72 RandomForest columns':<28}{py * 1e3:>14.2f}{cy * 1e3:>14.2f}{py / cy:>9.1f}x  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
