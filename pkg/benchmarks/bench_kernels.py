"""Time the numba kernels against their pure-numpy twins.

Usage: python3 benchmarks/bench_kernels.py [--depth 12] [--batch 8] [--repeat 5]

Every kernel is run once per backend before timing so JIT compilation is not
counted; outputs of both backends are compared bit for bit.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from fracbump import kernels
from fracbump._accel import HAVE_NUMBA
from fracbump.dyadic import build_tree
from fracbump.operators import cube_factors, lattice_factors


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cases(depth, batch, rng):
    tree1 = build_tree(1, depth)
    tree2 = build_tree(2, depth // 2 + 1)
    for name, tree in (("1d", tree1), ("2d", tree2)):
        vals = rng.random((batch, tree.n_cubes)) * cube_factors(tree, 0.5)
        args = (vals, tree.level_offsets, tree.dimension, tree.depth)
        yield f"chain_sum[{name}, L={tree.depth}]", lambda b, a=args: kernels.chain_sum(*a, backend=b)
        yield f"chain_max[{name}, L={tree.depth}]", lambda b, a=args: kernels.chain_max(*a, backend=b)
    m1 = 1 << min(depth, 11)
    blocks1 = rng.random((batch, m1))
    f1 = lattice_factors(m1, 1.0 / m1, 1, 0.5)
    yield f"local_lattice_max[1d, m={m1}]", lambda b: kernels.local_lattice_max(blocks1, f1, backend=b)
    m2 = 24
    blocks2 = rng.random((batch, m2, m2))
    f2 = lattice_factors(m2, 1.0 / m2, 2, 0.5)
    yield f"local_lattice_max[2d, m={m2}]", lambda b: kernels.local_lattice_max(blocks2, f2, backend=b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--depth", type=int, default=12)
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} " + " ".join(f"{b:>12s}" for b in backends) + "   speedup  identical")
    for name, run in cases(args.depth, args.batch, rng):
        outs = {b: run(b) for b in backends}
        times = {b: _best(lambda b=b: run(b), args.repeat) for b in backends}
        same = all(np.array_equal(outs[b], outs["numpy"]) for b in backends)
        speed = times["numpy"] / times["numba"] if "numba" in times else float("nan")
        cols = " ".join(f"{times[b] * 1e3:10.2f}ms" for b in backends)
        print(f"{name:34s} {cols}   {speed:6.1f}x  {same}")


if __name__ == "__main__":
    main()
