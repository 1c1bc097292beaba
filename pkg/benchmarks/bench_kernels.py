"""Benchmark the compiled assembly kernel against the numpy fallback.

Shapes mirror real assembly calls: ne elements with nq quadrature points and
nr x nc local matrices (Q1/Q1 same level, broken-Q2 rows, inter-level
offsets).  Run as:  python benchmarks/bench_kernels.py
"""

import time

import numpy as np

from mlsgfem._kernels import _assembly_py

try:
    from mlsgfem._kernels import _assembly_cy
except ImportError:
    _assembly_cy = None

CASES = [
    ("level 6 same-level Q1", 4096, 16, 4, 4),
    ("level 8 same-level Q1", 65536, 16, 4, 4),
    ("level 8 broken-Q2 rows", 65536, 16, 5, 4),
    ("inter-level offset slab", 1024, 16, 4, 4),
    ("q=8 rule", 16384, 64, 4, 4),
]


def timeit(fn, coef, smat, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(coef, smat)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    print(f"{'case':28s} {'ne':>7s} {'numpy':>10s} {'cython':>10s} {'ratio':>7s}")
    for name, ne, nq, nr, nc in CASES:
        coef = rng.standard_normal((ne, nq))
        smat = rng.standard_normal((nq, nr, nc))
        t_py = timeit(_assembly_py.element_matrices, coef, smat)
        if _assembly_cy is None:
            print(f"{name:28s} {ne:7d} {t_py * 1e3:9.3f}ms {'-':>10s} {'-':>7s}")
            continue
        t_cy = timeit(_assembly_cy.element_matrices, coef, smat)
        ratio = t_py / t_cy if t_cy > 0 else float("inf")
        print(
            f"{name:28s} {ne:7d} {t_py * 1e3:9.3f}ms {t_cy * 1e3:9.3f}ms "
            f"{ratio:6.2f}x"
        )


if __name__ == "__main__":
    main()
