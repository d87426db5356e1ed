"""Hot loops, each with a numba kernel and a pure-numpy twin.

The public names (``chain_sum``, ``chain_max``, ``local_lattice_max``,
``restricted_chain_sum``) dispatch on :data:`fracbump._accel.BACKEND`. Both
variants perform the same floating-point operations in the same order, so
results agree bit for bit (the 2-d lattice kernel included).

Conventions: cube values arrive as ``(B, n_cubes)`` arrays in global cube-id
order, cells are flattened row-major, and all level factors are computed by
the caller so kernels never call ``pow``.
"""
from __future__ import annotations

import numpy as np

from ._accel import BACKEND, njit

# ---------------------------------------------------------------------------
# aggregation (vectorized numpy in both backends)


def aggregate(leaf, dimension: int) -> list[np.ndarray]:
    """Per-level masses from finest-cell masses, leaf to root, pairwise.

    ``leaf`` has shape ``(B,) + (2**L,)*n``. Returns ``[level0, ..., levelL]``.
    """
    levels = [leaf]
    cur = leaf
    while cur.shape[-1] > 1:
        if dimension == 1:
            cur = cur[..., 0::2] + cur[..., 1::2]
        else:
            cur = (cur[..., 0::2, 0::2] + cur[..., 0::2, 1::2]) + (cur[..., 1::2, 0::2] + cur[..., 1::2, 1::2])
        levels.append(cur)
    return levels[::-1]


def flatten_levels(levels: list[np.ndarray]) -> np.ndarray:
    b = levels[0].shape[0]
    return np.concatenate([lv.reshape(b, -1) for lv in levels], axis=1)


# ---------------------------------------------------------------------------
# chain passes: per finest cell, reduce over the root-to-leaf chain


@njit
def _parent_index(c, k, dimension):
    # row-major index at level k-1 of the parent of cell c at level k
    if dimension == 1:
        return c >> 1
    side = 1 << k
    return (c // side >> 1) * (side >> 1) + ((c % side) >> 1)


@njit
def _chain_sum_nb(vals, offsets, dimension, depth):
    # top-down: running sums for each level, root first, as in the numpy twin
    nb = vals.shape[0]
    acc = np.empty(vals.shape[1])
    out = np.empty((nb, offsets[depth + 1] - offsets[depth]))
    for b in range(nb):
        acc[0] = 0.0 + vals[b, 0]
        for k in range(1, depth + 1):
            o, po = offsets[k], offsets[k - 1]
            if dimension == 1:
                for c in range(offsets[k + 1] - o):
                    acc[o + c] = acc[po + (c >> 1)] + vals[b, o + c]
            else:
                side = 1 << k
                for i in range(side):
                    prow = po + (i >> 1) * (side >> 1)
                    row = o + i * side
                    for j in range(side):
                        acc[row + j] = acc[prow + (j >> 1)] + vals[b, row + j]
        o = offsets[depth]
        for c in range(out.shape[1]):
            out[b, c] = acc[o + c]
    return out


@njit
def _chain_max_nb(vals, offsets, dimension, depth):
    nb = vals.shape[0]
    best = np.empty(vals.shape[1])
    arg = np.empty(vals.shape[1], dtype=np.int64)
    ncell = offsets[depth + 1] - offsets[depth]
    out = np.empty((nb, ncell))
    outarg = np.empty((nb, ncell), dtype=np.int64)
    for b in range(nb):
        best[0] = -np.inf
        arg[0] = -1
        if vals[b, 0] > best[0]:
            best[0] = vals[b, 0]
            arg[0] = 0
        for k in range(1, depth + 1):
            o, po = offsets[k], offsets[k - 1]
            for c in range(offsets[k + 1] - o):
                p = po + _parent_index(c, k, dimension)
                v = vals[b, o + c]
                if v > best[p]:
                    best[o + c] = v
                    arg[o + c] = o + c
                else:
                    best[o + c] = best[p]
                    arg[o + c] = arg[p]
        o = offsets[depth]
        for c in range(ncell):
            out[b, c] = best[o + c]
            outarg[b, c] = arg[o + c]
    return out, outarg


def _upsample(a, dimension):
    a = np.repeat(a, 2, axis=-1)
    if dimension == 2:
        a = np.repeat(a, 2, axis=-2)
    return a


def _level_views(vals, offsets, dimension, depth):
    nb = vals.shape[0]
    return [vals[:, offsets[k]:offsets[k + 1]].reshape((nb,) + (1 << k,) * dimension)
            for k in range(depth + 1)]


def _chain_sum_np(vals, offsets, dimension, depth):
    views = _level_views(vals, offsets, dimension, depth)
    acc = np.zeros_like(views[0]) + views[0]
    for k in range(1, depth + 1):
        acc = _upsample(acc, dimension) + views[k]
    return acc.reshape(vals.shape[0], -1)


def _chain_max_np(vals, offsets, dimension, depth):
    views = _level_views(vals, offsets, dimension, depth)
    nb = vals.shape[0]
    best = np.full_like(views[0], -np.inf)
    arg = np.full(best.shape, -1, dtype=np.int64)
    for k in range(depth + 1):
        if k:
            best = _upsample(best, dimension)
            arg = _upsample(arg, dimension)
        ids = offsets[k] + np.arange(1 << (dimension * k)).reshape((1 << k,) * dimension)
        better = views[k] > best
        best = np.where(better, views[k], best)
        arg = np.where(better, ids, arg)
    return best.reshape(nb, -1), arg.reshape(nb, -1)


# ---------------------------------------------------------------------------
# chain sums restricted to the subtree of one cube, for many cubes at once


@njit
def _restricted_chain_sum_nb(vals, offsets, dimension, depth, roots, root_levels):
    side = 1 << depth
    ncell = side ** dimension
    out = np.zeros((roots.shape[0], ncell))
    for r in range(roots.shape[0]):
        kr = root_levels[r]
        local = roots[r] - offsets[kr]
        width = 1 << (depth - kr)
        if dimension == 1:
            i0 = local * width
            j0 = 0
            ni = width
            nj = 1
        else:
            i0 = (local // (1 << kr)) * width
            j0 = (local % (1 << kr)) * width
            ni = width
            nj = width
        for di in range(ni):
            for dj in range(nj):
                i = i0 + di
                j = j0 + dj
                acc = 0.0
                for k in range(kr, depth + 1):
                    s = depth - k
                    if dimension == 1:
                        idx = offsets[k] + (i >> s)
                    else:
                        idx = offsets[k] + (i >> s) * (1 << k) + (j >> s)
                    acc += vals[idx]
                if dimension == 1:
                    out[r, i] = acc
                else:
                    out[r, i * side + j] = acc
    return out


def _restricted_chain_sum_np(vals, offsets, dimension, depth, roots, root_levels):
    side = 1 << depth
    out = np.zeros((len(roots), side ** dimension))
    views = _level_views(vals[None, :], offsets, dimension, depth)
    for r, (cid, kr) in enumerate(zip(roots, root_levels)):
        local = int(cid - offsets[kr])
        coords = (local,) if dimension == 1 else divmod(local, 1 << kr)
        acc = np.zeros((1,) * dimension)
        for k in range(kr, depth + 1):
            span = 1 << (k - kr)
            sl = tuple(slice(c * span, (c + 1) * span) for c in coords)
            if k > kr:
                acc = _upsample(acc, dimension)
            acc = acc + views[k][0][sl]
        width = 1 << (depth - kr)
        grid = np.zeros((side,) * dimension)
        grid[tuple(slice(c * width, (c + 1) * width) for c in coords)] = acc
        out[r] = grid.ravel()
    return out


# ---------------------------------------------------------------------------
# exact lattice-cube maximal function of data supported in one block
#
# For a block of m cells per axis and cube side s (in cells) the value of the
# cube is factors[s] * mass. The result at a cell is the max over all lattice
# cubes inside the block that contain it. Masses are accumulated by growing s,
# so no prefix-sum cancellation occurs.


@njit
def _local_lattice_max_1d_nb(blocks, factors):
    nb, m = blocks.shape
    out = np.full((nb, m), -np.inf)
    mass = np.empty(m)
    vals = np.empty(m)
    dq = np.empty(m, dtype=np.int64)
    for b in range(nb):
        for a in range(m):
            mass[a] = 0.0
        for s in range(1, m + 1):
            na = m - s + 1
            f = factors[s]
            for a in range(na):
                mass[a] += blocks[b, a + s - 1]
                vals[a] = f * mass[a]
            # sliding max over starts a in [i-s+1, i] ∩ [0, na-1], monotone deque
            head = 0
            tail = 0
            nxt = 0
            for i in range(m):
                while nxt < na and nxt <= i:
                    while tail > head and vals[dq[tail - 1]] <= vals[nxt]:
                        tail -= 1
                    dq[tail] = nxt
                    tail += 1
                    nxt += 1
                while dq[head] < i - s + 1:
                    head += 1
                v = vals[dq[head]]
                if v > out[b, i]:
                    out[b, i] = v
    return out


@njit
def _local_lattice_max_2d_nb(blocks, factors):
    nb, m = blocks.shape[0], blocks.shape[1]
    out = np.full((nb, m, m), -np.inf)
    mass = np.empty((m, m))
    rowmax = np.empty((m, m))
    for b in range(nb):
        for a1 in range(m):
            for a2 in range(m):
                mass[a1, a2] = 0.0
        for s in range(1, m + 1):
            na = m - s + 1
            for a1 in range(na):
                for a2 in range(na):
                    acc = mass[a1, a2]
                    for t in range(s):
                        acc += blocks[b, a1 + s - 1, a2 + t]
                    for t in range(s - 1):
                        acc += blocks[b, a1 + t, a2 + s - 1]
                    mass[a1, a2] = acc
            f = factors[s]
            # max over a2-window for each (a1, j)
            for a1 in range(na):
                for j in range(m):
                    lo = j - s + 1 if j - s + 1 > 0 else 0
                    hi = j if j < na - 1 else na - 1
                    best = -np.inf
                    for a2 in range(lo, hi + 1):
                        v = f * mass[a1, a2]
                        if v > best:
                            best = v
                    rowmax[a1, j] = best
            for i in range(m):
                lo = i - s + 1 if i - s + 1 > 0 else 0
                hi = i if i < na - 1 else na - 1
                for j in range(m):
                    best = out[b, i, j]
                    for a1 in range(lo, hi + 1):
                        if rowmax[a1, j] > best:
                            best = rowmax[a1, j]
                    out[b, i, j] = best
    return out


def _window_max(x, s, axis=-1):
    """``out[..., j] = max(x[..., j:j+s])`` along ``axis`` (sparse-table doubling)."""
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    width = 1
    table = x
    while 2 * width <= s:
        table = np.maximum(table[..., :-width], table[..., width:])
        width *= 2
    out = np.maximum(table[..., :n - s + 1], table[..., s - width:s - width + n - s + 1])
    return np.moveaxis(out, -1, axis)


def _local_lattice_max_1d_np(blocks, factors):
    nb, m = blocks.shape
    out = np.full((nb, m), -np.inf)
    mass = np.zeros((nb, m))
    for s in range(1, m + 1):
        na = m - s + 1
        mass[:, :na] += blocks[:, s - 1:]
        vals = factors[s] * mass[:, :na]
        # cell i sees starts a in [i-s+1, i] ∩ [0, na-1]
        padded = np.full((nb, na + 2 * (s - 1)), -np.inf)
        padded[:, s - 1:s - 1 + na] = vals
        out = np.maximum(out, _window_max(padded, s)[:, :m])
    return out


def _local_lattice_max_2d_np(blocks, factors):
    nb, m = blocks.shape[0], blocks.shape[1]
    out = np.full((nb, m, m), -np.inf)
    mass = np.zeros((nb, m, m))
    for s in range(1, m + 1):
        na = m - s + 1
        acc = mass[:, :na, :na]
        for t in range(s):
            acc += blocks[:, s - 1:s - 1 + na, t:t + na]
        for t in range(s - 1):
            acc += blocks[:, t:t + na, s - 1:s - 1 + na]
        vals = factors[s] * acc
        padded = np.full((nb, na + 2 * (s - 1), na + 2 * (s - 1)), -np.inf)
        padded[:, s - 1:s - 1 + na, s - 1:s - 1 + na] = vals
        rows = _window_max(padded, s, axis=2)[:, :, :m]
        out = np.maximum(out, _window_max(rows, s, axis=1)[:, :m, :])
    return out


# ---------------------------------------------------------------------------
# dispatch


def _as_c(a, dtype=np.float64):
    return np.ascontiguousarray(a, dtype=dtype)


def chain_sum(vals, offsets, dimension, depth, backend=None):
    fn = _chain_sum_nb if (backend or BACKEND) == "numba" else _chain_sum_np
    return fn(_as_c(vals), _as_c(offsets, np.int64), int(dimension), int(depth))


def chain_max(vals, offsets, dimension, depth, backend=None):
    fn = _chain_max_nb if (backend or BACKEND) == "numba" else _chain_max_np
    return fn(_as_c(vals), _as_c(offsets, np.int64), int(dimension), int(depth))


def restricted_chain_sum(vals, offsets, dimension, depth, roots, root_levels, backend=None):
    fn = _restricted_chain_sum_nb if (backend or BACKEND) == "numba" else _restricted_chain_sum_np
    return fn(_as_c(vals), _as_c(offsets, np.int64), int(dimension), int(depth),
              _as_c(roots, np.int64), _as_c(root_levels, np.int64))


def local_lattice_max(blocks, factors, backend=None):
    """Exact lattice-cube maximal function for each block of ``blocks``.

    ``blocks``: ``(B, m)`` or ``(B, m, m)`` cell masses; ``factors[s]`` is the
    value per unit mass of a cube of side ``s`` cells (``factors[0]`` unused).
    """
    blocks = _as_c(blocks)
    factors = _as_c(factors)
    numba_path = (backend or BACKEND) == "numba"
    if blocks.ndim == 2:
        fn = _local_lattice_max_1d_nb if numba_path else _local_lattice_max_1d_np
    elif blocks.ndim == 3:
        fn = _local_lattice_max_2d_nb if numba_path else _local_lattice_max_2d_np
    else:
        raise ValueError("blocks must be (B, m) or (B, m, m)")
    return fn(blocks, factors)
