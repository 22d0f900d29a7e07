"""Time the compiled and pure-Python selection kernels side by side.

    python3 benchmarks/bench_kernels.py --sizes 20 50 200 --repeat 5

Both backends are imported directly, so the script needs the extension to be
built (``python3 setup.py build_ext --inplace`` or an editable install).
"""
import argparse
import sys
import timeit

import numpy as np

from uadet import _kernels_py as py_backend

try:
    from uadet import _kernels as cy_backend
except ImportError:
    cy_backend = None


def random_inputs(rng, n):
    w = rng.uniform(0.05, 0.4, n)
    h = rng.uniform(0.05, 0.4, n)
    boxes = np.stack([rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h], axis=1)
    scores = rng.uniform(0.0, 1.0, n)
    unc = rng.uniform(0.0, 1.0, n)
    return np.ascontiguousarray(boxes), scores, unc


def cases(mod, boxes, scores, unc):
    return {
        "iou_matrix": lambda: mod.iou_matrix(boxes, boxes),
        "soft_nms_select": lambda: mod.soft_nms_select(boxes, scores, scores, unc, 0.3, 0.001, 0.4),
        "hard_nms": lambda: mod.hard_nms(boxes, scores, 0.3),
    }


def best_time(fn, repeat):
    number, _ = timeit.Timer(fn).autorange()
    return min(timeit.Timer(fn).repeat(repeat=repeat, number=number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[20, 50, 200, 1000])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if cy_backend is None:
        print("compiled extension not built; run `python3 setup.py build_ext --inplace`",
              file=sys.stderr)
        return 1

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':16s} {'n':>6s} {'python (us)':>12s} {'cython (us)':>12s} {'speedup':>8s}")
    for n in args.sizes:
        boxes, scores, unc = random_inputs(rng, n)
        py_cases = cases(py_backend, boxes, scores, unc)
        cy_cases = cases(cy_backend, boxes, scores, unc)
        for name in py_cases:
            a, b = py_cases[name](), cy_cases[name]()
            same = all(np.array_equal(x, y) for x, y in zip(a, b)) if isinstance(a, tuple) \
                else np.array_equal(a, b)
            if not same:
                print(f"{name} n={n}: backends disagree", file=sys.stderr)
                return 1
            tp = best_time(py_cases[name], args.repeat) * 1e6
            tc = best_time(cy_cases[name], args.repeat) * 1e6
            print(f"{name:16s} {n:6d} {tp:12.1f} {tc:12.1f} {tp / tc:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
