"""Benchmark the compiled agglomeration kernel against the Python twin.

Builds planted-partition graphs of growing size, runs both backends on the
same edge lists, checks the traces are bit-identical, and prints a timing
table.  Usage:

    python benchmarks/bench_cnm.py             # quick sizes
    python benchmarks/bench_cnm.py --large     # adds a slow large case
"""
import argparse
import time

import numpy as np

from csfm import _cnm_py

try:
    from csfm import _cnm_fast
except ImportError:
    _cnm_fast = None


def planted_graph(rng, n, cluster_size=40, p_in=0.3, bridges=2):
    """Random clustered graph: dense blocks plus sparse inter-block edges."""
    edges = set()
    k = max(n // cluster_size, 1)
    bounds = np.linspace(0, n, k + 1).astype(int)
    for c in range(k):
        lo, hi = bounds[c], bounds[c + 1]
        for i in range(lo, hi):
            for j in range(i + 1, hi):
                if rng.random() < p_in:
                    edges.add((i, j))
    for c in range(k):  # ring of bridges keeps it connected
        lo_a, hi_a = bounds[c], bounds[c + 1]
        lo_b, hi_b = bounds[(c + 1) % k], bounds[(c + 1) % k + 1]
        for _ in range(bridges):
            a = int(rng.integers(lo_a, hi_a))
            b = int(rng.integers(lo_b, hi_b))
            if a != b:
                edges.add((min(a, b), max(a, b)))
    # attach any isolated node to its neighbor so the graph is connected
    degree = np.zeros(n, dtype=int)
    for a, b in edges:
        degree[a] += 1
        degree[b] += 1
    for v in np.flatnonzero(degree == 0):
        w = (v + 1) % n
        edges.add((min(v, w), max(v, w)))
    arr = np.array(sorted(edges), dtype=np.int64)
    return arr[:, 0].tolist(), arr[:, 1].tolist()


def run(kernel, n, u, v, repeats):
    best = np.inf
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = kernel(n, u, v)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--large", action="store_true", help="include a 3000-node case")
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    sizes = [200, 400, 800, 1600]
    if args.large:
        sizes.append(3000)

    if _cnm_fast is None:
        print("compiled kernel not built; benchmarking the Python backend only")

    rng = np.random.default_rng(0)
    header = f"{'nodes':>7} {'edges':>8} {'python':>10} {'cython':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for n in sizes:
        u, v = planted_graph(rng, n)
        t_py, out_py = run(_cnm_py.merge_trace, n, u, v, args.repeats)
        if _cnm_fast is not None:
            t_cy, out_cy = run(_cnm_fast.merge_trace, n, u, v, args.repeats)
            assert out_py == out_cy, "backends disagree"
            print(f"{n:>7} {len(u):>8} {t_py:>9.3f}s {t_cy:>9.3f}s {t_py / t_cy:>7.1f}x")
        else:
            print(f"{n:>7} {len(u):>8} {t_py:>9.3f}s {'-':>10} {'-':>8}")


if __name__ == "__main__":
    main()
