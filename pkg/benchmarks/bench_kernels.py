"""Compare the compiled kernels with the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``. Each case reports the best
of several repeats and checks that both backends return identical arrays.
"""
import argparse
import timeit

import numpy as np

from clvda import _pykernels
from clvda.models import ModelSpec

try:
    from clvda import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases():
    rng = np.random.default_rng(0)
    l63, l96 = ModelSpec.lorenz63(), ModelSpec.lorenz96(40)
    x96 = 8.0 + rng.standard_normal(40)
    yield ("L96-40 tangent, 40 columns, 500 steps", "tangent_rk4",
           (l96.code, l96.param_array, x96, np.eye(40), 500, 0.01))
    yield ("L63 tangent, 3 columns, 5000 steps", "tangent_rk4",
           (l63.code, l63.param_array, np.array([1.0, 1.0, 20.0]), np.eye(3), 5000, 0.002))
    yield ("L96-40 ensemble of 25, 500 steps", "rk4",
           (l96.code, l96.param_array, x96 + rng.standard_normal((25, 40)), 500, 0.01))
    yield ("L63 trajectory, 2000 saves x 5 steps", "integrate",
           (l63.code, l63.param_array, np.array([1.0, 1.0, 20.0]), 2000, 5, 0.002))


def best_time(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels unavailable; only the numpy fallback is installed")
    print(f"{'case':<40s} {'numpy [s]':>10s} {'cython [s]':>11s} {'speedup':>8s}  identical")
    for label, name, fargs in cases():
        t_py = best_time(getattr(_pykernels, name), fargs, args.repeat)
        if _ckernels is None:
            print(f"{label:<40s} {t_py:10.4f} {'-':>11s} {'-':>8s}")
            continue
        t_c = best_time(getattr(_ckernels, name), fargs, args.repeat)
        a, b = getattr(_pykernels, name)(*fargs), getattr(_ckernels, name)(*fargs)
        same = all(np.array_equal(u, v) for u, v in zip(a, b)) if isinstance(a, tuple) \
            else np.array_equal(a, b)
        print(f"{label:<40s} {t_py:10.4f} {t_c:11.4f} {t_py / t_c:7.1f}x  {same}")


if __name__ == "__main__":
    main()
