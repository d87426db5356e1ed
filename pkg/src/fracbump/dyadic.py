"""Truncated dyadic trees and the one-third shifted grid family.

Cubes are addressed by ``(level, coords)`` with integer coordinates; all
containment tests are integer arithmetic. Each tree also knows where its
finest cells sit on the ``2**-L`` lattice of the unit cube, which is how the
shifted grids exchange data with functions living on ``[0, 1)^n``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from .errors import CapacityError, DomainError, ParameterError

MAX_LOG2_CELLS = 24
# shifted grids are rooted at [-2, 2)^n; only cubes inside the window count
WINDOW = (-1.0, 2.0)


@dataclass(frozen=True, order=True)
class DyadicCube:
    grid_id: int
    level: int
    coords: tuple[int, ...]


class DyadicTree:
    """All dyadic subcubes of a root cube down to a fixed depth.

    Cube ids are global: ``level_offsets[k]`` plus the row-major index of the
    coordinates at level ``k``. Immutable after construction.
    """

    def __init__(self, dimension: int, depth: int, root_lo: Sequence[float],
                 root_side: float, shift: Sequence[float] | None = None,
                 grid_id: int = 0):
        self.dimension = int(dimension)
        self.depth = int(depth)
        self.root_side = float(root_side)
        self.shift = tuple(float(s) for s in (shift if shift is not None else [0.0] * dimension))
        self.root_lo = tuple(float(a) + s for a, s in zip(root_lo, self.shift))
        self.grid_id = int(grid_id)
        self.cell_size = self.root_side / 2 ** self.depth
        self.cell_volume = self.cell_size ** self.dimension
        self.side_cells = 1 << self.depth
        self.n_cells = self.side_cells ** self.dimension
        counts = [1 << (self.dimension * k) for k in range(self.depth + 1)]
        self.level_offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.n_cubes = int(self.level_offsets[-1])

    def __repr__(self):
        return (f"DyadicTree(n={self.dimension}, depth={self.depth}, lo={self.root_lo}, "
                f"side={self.root_side}, grid={self.grid_id})")

    # geometry -----------------------------------------------------------
    def level_shape(self, level: int) -> tuple[int, ...]:
        return (1 << level,) * self.dimension

    def level_volume(self, level: int) -> float:
        return self.cell_volume * float(2 ** (self.dimension * (self.depth - level)))

    def volume(self, cube: DyadicCube) -> float:
        return self.level_volume(cube.level)

    @property
    def root_volume(self) -> float:
        return self.root_side ** self.dimension

    def lattice_offset(self) -> tuple[int, ...]:
        """Root corner in units of the finest cell (must be integral)."""
        out = []
        for a in self.root_lo:
            v = a / self.cell_size
            if v != round(v):
                raise DomainError(f"root corner {a} is not on the 2^-L lattice")
            out.append(int(round(v)))
        return tuple(out)

    def bounds(self, cube: DyadicCube) -> tuple[tuple[float, ...], tuple[float, ...]]:
        side = self.root_side / 2 ** cube.level
        lo = tuple(a + c * side for a, c in zip(self.root_lo, cube.coords))
        return lo, tuple(x + side for x in lo)

    def cell_range(self, cube: DyadicCube) -> tuple[slice, ...]:
        m = 1 << (self.depth - cube.level)
        return tuple(slice(c * m, (c + 1) * m) for c in cube.coords)

    # indexing -----------------------------------------------------------
    def _check(self, cube: DyadicCube) -> None:
        if not 0 <= cube.level <= self.depth or len(cube.coords) != self.dimension:
            raise DomainError(f"{cube} is not a cube of {self!r}")
        lim = 1 << cube.level
        if any(not 0 <= c < lim for c in cube.coords):
            raise DomainError(f"{cube} is not a cube of {self!r}")

    def cube(self, level: int, coords: Sequence[int] | int) -> DyadicCube:
        if isinstance(coords, (int, np.integer)):
            coords = (int(coords),)
        c = DyadicCube(self.grid_id, int(level), tuple(int(x) for x in coords))
        self._check(c)
        return c

    @property
    def root(self) -> DyadicCube:
        return DyadicCube(self.grid_id, 0, (0,) * self.dimension)

    def cube_id(self, cube: DyadicCube) -> int:
        self._check(cube)
        idx = 0
        for c in cube.coords:
            idx = idx * (1 << cube.level) + c
        return int(self.level_offsets[cube.level]) + idx

    def cube_from_id(self, cid: int) -> DyadicCube:
        level = int(np.searchsorted(self.level_offsets, cid, side="right")) - 1
        if not 0 <= level <= self.depth:
            raise DomainError(f"cube id {cid} out of range")
        idx = int(cid - self.level_offsets[level])
        side = 1 << level
        coords = []
        for _ in range(self.dimension):
            coords.append(idx % side)
            idx //= side
        return DyadicCube(self.grid_id, level, tuple(reversed(coords)))

    def id_levels(self) -> np.ndarray:
        """Level of every cube id."""
        return np.repeat(np.arange(self.depth + 1), np.diff(self.level_offsets))

    def parent(self, cube: DyadicCube) -> DyadicCube | None:
        if cube.level == 0:
            return None
        return DyadicCube(self.grid_id, cube.level - 1, tuple(c >> 1 for c in cube.coords))

    def children(self, cube: DyadicCube) -> list[DyadicCube]:
        if cube.level >= self.depth:
            return []
        return [DyadicCube(self.grid_id, cube.level + 1, tuple(2 * c + d for c, d in zip(cube.coords, ds)))
                for ds in itertools.product((0, 1), repeat=self.dimension)]

    def contains(self, outer: DyadicCube, inner: DyadicCube) -> bool:
        if outer.grid_id != inner.grid_id or inner.level < outer.level:
            return False
        s = inner.level - outer.level
        return all((c >> s) == o for c, o in zip(inner.coords, outer.coords))

    def iter_cubes(self, level: int | None = None) -> Iterator[DyadicCube]:
        levels = range(self.depth + 1) if level is None else [level]
        for k in levels:
            for coords in itertools.product(range(1 << k), repeat=self.dimension):
                yield DyadicCube(self.grid_id, k, coords)

    def cubes_containing(self, x: Sequence[float] | float) -> list[DyadicCube]:
        return cubes_containing(self, x)


def build_tree(dimension: int, depth: int, root_box=None, shift=None, grid_id: int = 0) -> DyadicTree:
    """Tree on ``root_box`` (default ``[0, 1)^n``) with levels ``0..depth``.

    ``root_box`` is ``(lo, hi)`` with scalars or per-axis sequences; it must be
    a cube.
    """
    if dimension not in (1, 2):
        raise ParameterError(f"dimension must be 1 or 2, got {dimension}")
    if depth < 0:
        raise ParameterError("depth must be nonnegative")
    if depth > MAX_LOG2_CELLS // dimension:
        raise CapacityError(f"depth {depth} exceeds guard {MAX_LOG2_CELLS // dimension} for n={dimension}")
    if root_box is None:
        root_box = (0.0, 1.0)
    lo, hi = root_box
    lo = [float(lo)] * dimension if np.isscalar(lo) else [float(v) for v in lo]
    hi = [float(hi)] * dimension if np.isscalar(hi) else [float(v) for v in hi]
    sides = {h - a for a, h in zip(lo, hi)}
    if len(sides) != 1 or min(sides) <= 0:
        raise ParameterError(f"root box {root_box} is not a nondegenerate cube")
    return DyadicTree(dimension, depth, lo, sides.pop(), shift, grid_id)


def cubes_containing(tree: DyadicTree, x) -> list[DyadicCube]:
    """Nested chain root ⊇ ... ⊇ leaf of cubes containing ``x`` (half-open)."""
    x = (float(x),) if np.isscalar(x) else tuple(float(v) for v in x)
    if len(x) != tree.dimension:
        raise DomainError("point dimension does not match tree")
    idx = []
    for xi, lo in zip(x, tree.root_lo):
        if not lo <= xi < lo + tree.root_side:
            raise DomainError(f"{x} outside root box of {tree!r}")
        i = int(np.floor((xi - lo) / tree.cell_size))
        idx.append(min(i, tree.side_cells - 1))
    return [DyadicCube(tree.grid_id, k, tuple(i >> (tree.depth - k) for i in idx))
            for k in range(tree.depth + 1)]


def one_third_offset(depth: int, t: int) -> int:
    """``t/3`` rounded to the nearest multiple of ``2**-depth``, in cell units."""
    return (t * (1 << depth) + 1) // 3


def shifted_grid_family(dimension: int, depth: int) -> list[DyadicTree]:
    """The ``3**n`` one-third shifted grids at resolution ``2**-depth``.

    Grid ``t`` (for ``t`` in ``{0,1,2}^n``, lexicographic; grid ids start at 1)
    is the dyadic tree on ``[-2, 2)^n + s_t`` of depth ``depth + 2`` with
    ``s_t = t/3`` rounded to the lattice. Grid 1 is unshifted and contains
    ``[0, 1)^n`` and all its dyadic subcubes.
    """
    if dimension not in (1, 2):
        raise ParameterError(f"dimension must be 1 or 2, got {dimension}")
    if depth > MAX_LOG2_CELLS // dimension:
        raise CapacityError(f"depth {depth} exceeds guard {MAX_LOG2_CELLS // dimension} for n={dimension}")
    h = 2.0 ** -depth
    trees = []
    for gid, t in enumerate(itertools.product(range(3), repeat=dimension), start=1):
        shift = [one_third_offset(depth, ti) * h for ti in t]
        trees.append(DyadicTree(dimension, depth + 2, [-2.0] * dimension, 4.0, shift, grid_id=gid))
    return trees


class ShiftedFamily:
    """Per-resolution bookkeeping shared by the shifted-grid operators."""

    def __init__(self, dimension: int, depth: int):
        self.dimension = dimension
        self.depth = depth
        self.trees = shifted_grid_family(dimension, depth)
        base_cells = 1 << depth
        self.q0_start = []      # first tree cell of [0,1)^n, per axis
        self.window_masks = []  # per tree: bool per cube id, cube inside the window
        wlo, whi = (int(WINDOW[0] * base_cells), int(WINDOW[1] * base_cells))
        for tree in self.trees:
            off = tree.lattice_offset()
            self.q0_start.append(tuple(-o for o in off))
            mask = np.zeros(tree.n_cubes, dtype=bool)
            for k in range(tree.depth + 1):
                m = 1 << (tree.depth - k)
                ok = None
                for o in off:
                    lo = o + m * np.arange(1 << k)
                    axis_ok = (lo >= wlo) & (lo + m <= whi)
                    ok = axis_ok if ok is None else np.logical_and.outer(ok, axis_ok)
                mask[tree.level_offsets[k]:tree.level_offsets[k + 1]] = np.asarray(ok).ravel()
            self.window_masks.append(mask)

    def q0_slice(self, g: int) -> tuple[slice, ...]:
        return tuple(slice(s, s + (1 << self.depth)) for s in self.q0_start[g])


@lru_cache(maxsize=16)
def shifted_family(dimension: int, depth: int) -> ShiftedFamily:
    return ShiftedFamily(dimension, depth)
