"""Cellwise-constant functions and weights on a dyadic tree."""
from __future__ import annotations

import json
import math
from typing import Any, Mapping

import numpy as np

from .dyadic import DyadicCube, DyadicTree, build_tree
from .errors import MismatchError, ParameterError, ZeroMassError
from .kernels import aggregate

SCHEMA_VERSION = 1


class GridFunction:
    """Density that is constant on each finest cell of ``tree``.

    Cube masses are aggregated eagerly, leaf to root by pairwise summation, so
    ``mass(Q)`` equals the sum of its children's masses exactly.
    """

    def __init__(self, tree: DyadicTree, cell_values):
        values = np.array(cell_values, dtype=np.float64)
        shape = tree.level_shape(tree.depth)
        if values.shape != shape:
            if values.size != tree.n_cells:
                raise MismatchError(f"expected {tree.n_cells} cell values, got {values.size}")
            values = values.reshape(shape)
        values.setflags(write=False)
        self.tree = tree
        self.cell_values = values
        leaf = values * tree.cell_volume
        self._levels = [lv[0] for lv in aggregate(leaf[None], tree.dimension)]
        for lv in self._levels:
            lv.setflags(write=False)

    def __repr__(self):
        return f"{type(self).__name__}({self.tree!r}, total={self.total:.6g})"

    @property
    def dimension(self) -> int:
        return self.tree.dimension

    @property
    def flat(self) -> np.ndarray:
        return self.cell_values.ravel()

    def level_masses(self, level: int) -> np.ndarray:
        return self._levels[level]

    def cube_masses(self) -> np.ndarray:
        """Masses of all cubes in global cube-id order."""
        return np.concatenate([lv.ravel() for lv in self._levels])

    @property
    def total(self) -> float:
        return float(self._levels[0].flat[0])

    def mass(self, cube: DyadicCube) -> float:
        return mass(self, cube)

    def scaled(self, c: float) -> "GridFunction":
        return type(self)(self.tree, c * self.cell_values)

    def __mul__(self, other):
        if isinstance(other, GridFunction):
            _same_tree(self, other)
            return GridFunction(self.tree, self.cell_values * other.cell_values)
        return GridFunction(self.tree, self.cell_values * float(other))

    __rmul__ = __mul__

    def to_dict(self) -> dict[str, Any]:
        t = self.tree
        return {
            "schema_version": SCHEMA_VERSION,
            "dimension": t.dimension,
            "depth": t.depth,
            "root_box": [t.root_lo[0] - t.shift[0], t.root_lo[0] - t.shift[0] + t.root_side],
            "shift": list(t.shift),
            "cell_values": [float(v) for v in self.flat],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


class Weight(GridFunction):
    """Nonnegative :class:`GridFunction`."""

    def __init__(self, tree: DyadicTree, cell_values):
        super().__init__(tree, cell_values)
        if not np.all(np.isfinite(self.cell_values)) or np.any(self.cell_values < 0):
            raise ParameterError("weight values must be finite and nonnegative")


def lebesgue(tree: DyadicTree) -> Weight:
    return Weight(tree, np.ones(tree.level_shape(tree.depth)))


def from_dict(data: Mapping[str, Any], weight: bool = True) -> GridFunction:
    n, depth = int(data["dimension"]), int(data["depth"])
    box = data.get("root_box", [0.0, 1.0])
    tree = build_tree(n, depth, tuple(box), data.get("shift"))
    cls = Weight if weight else GridFunction
    return cls(tree, np.asarray(data["cell_values"], dtype=np.float64))


def from_json(text: str, weight: bool = True) -> GridFunction:
    return from_dict(json.loads(text), weight)


def _same_tree(u: GridFunction, v: GridFunction) -> None:
    a, b = u.tree, v.tree
    if a is b:
        return
    if (a.dimension, a.depth, a.root_lo, a.root_side, a.grid_id) != (b.dimension, b.depth, b.root_lo, b.root_side, b.grid_id):
        raise MismatchError("functions live on different trees")


def _check_cube(u: GridFunction, cube: DyadicCube) -> None:
    t = u.tree
    if cube.grid_id != t.grid_id or not 0 <= cube.level <= t.depth or len(cube.coords) != t.dimension \
            or any(not 0 <= c < (1 << cube.level) for c in cube.coords):
        raise MismatchError(f"{cube} does not belong to {t!r}")


def mass(u: GridFunction, cube: DyadicCube) -> float:
    _check_cube(u, cube)
    return float(u.level_masses(cube.level)[cube.coords])


def average(u: GridFunction, cube: DyadicCube) -> float:
    return mass(u, cube) / u.tree.volume(cube)


def weighted_average(f: GridFunction, cube: DyadicCube, sigma: GridFunction) -> float:
    """``(1/σ(Q)) ∫_Q f σ``."""
    _same_tree(f, sigma)
    s = mass(sigma, cube)
    if s <= 0:
        raise ZeroMassError(f"σ({cube}) = 0")
    return mass(f * sigma, cube) / s


def integrate(density, tree: DyadicTree, level: int = 0) -> np.ndarray:
    """Masses at ``level`` of a density (cell-shaped or flat) or of a batch
    ``(B, n_cells)`` of flat densities, aggregated exactly like tree masses."""
    d = np.asarray(density, dtype=np.float64)
    cells = tree.level_shape(tree.depth)
    single = d.shape == cells or d.ndim == 1
    leaf = d.reshape((-1,) + cells) * tree.cell_volume
    out = aggregate(leaf, tree.dimension)[level].reshape(leaf.shape[0], -1)
    return out[0] if single else out


def lp_norm(f: GridFunction, mu: GridFunction | None, p: float) -> float:
    """``(∫ |f|^p dμ)^{1/p}``; ``mu=None`` means Lebesgue measure."""
    if not p >= 1 or not math.isfinite(p):
        raise ParameterError(f"p must be finite and >= 1, got {p}")
    dens = np.abs(f.cell_values) ** p
    if mu is not None:
        _same_tree(f, mu)
        dens = dens * mu.cell_values
    return float(integrate(dens.ravel(), f.tree)[0]) ** (1.0 / p)


# ---------------------------------------------------------------------------
# generators

WEIGHT_KINDS = ("constant", "power", "indicator", "dyadic_cascade", "cellwise_random")


def _cell_edges(tree: DyadicTree, axis: int) -> np.ndarray:
    return tree.root_lo[axis] + tree.cell_size * np.arange(tree.side_cells + 1)


def _power_moments_1d(edges, a, x0):
    # exact antiderivative of |x - x0|^a
    d = edges - x0
    F = np.sign(d) * np.abs(d) ** (a + 1) / (a + 1)
    return np.diff(F)


def _power_density(tree: DyadicTree, a: float, x0) -> np.ndarray:
    n = tree.dimension
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (n,))
    if n == 1:
        return _power_moments_1d(_cell_edges(tree, 0), a, x0[0]) / tree.cell_size
    # 4x4 Gauss-Legendre per cell
    g, gw = np.polynomial.legendre.leggauss(4)
    h = tree.cell_size
    ex, ey = _cell_edges(tree, 0)[:-1], _cell_edges(tree, 1)[:-1]
    px = (ex[:, None] + h * (g[None, :] + 1) / 2)  # (cells, 4)
    py = (ey[:, None] + h * (g[None, :] + 1) / 2)
    dx = px[:, None, :, None] - x0[0]
    dy = py[None, :, None, :] - x0[1]
    r = np.sqrt(dx ** 2 + dy ** 2)
    return np.einsum("ijab,a,b->ij", r ** a, gw, gw) / 4.0


def _cascade_masses(tree: DyadicTree, total: float, spread: float, seed, levels=None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    m = np.array([total], dtype=np.float64).reshape((1,) * tree.dimension)
    for k in range(tree.depth):
        for axis in range(tree.dimension):
            if levels is None or k < levels:
                u = rng.uniform(1.0 - spread, 1.0 + spread, size=m.shape)
            else:
                u = np.ones(m.shape)
            # larger share first so that m - big is exact and big + small == m
            big = m * np.maximum(u, 2.0 - u) / 2.0
            small = m - big
            left = np.where(u >= 1.0, big, small)
            right = np.where(u >= 1.0, small, big)
            m = np.stack([left, right], axis=axis + 1).reshape(
                tuple(s * 2 if i == axis else s for i, s in enumerate(m.shape)))
    return m


def generate_weight(kind: str, params: Mapping[str, Any] | None, tree: DyadicTree) -> Weight:
    """Build a test weight.

    kinds and their params:

    * ``constant``: ``c`` (default 1)
    * ``power``: ``a`` > -1, ``x0`` (default origin), ``scale`` (default 1);
      density ``scale*|x - x0|^a`` via exact cell moments in 1-d, 4x4
      Gauss-Legendre per cell in 2-d
    * ``indicator``: ``lo``, ``hi`` (box corners), ``c``; exact overlap fractions
    * ``dyadic_cascade``: ``seed``, ``total`` (default 1), ``spread`` in (0, 1)
      (default 0.6): children get ``(u, 2-u)/2`` of the parent mass with
      ``u ~ U(1-spread, 1+spread)``, one split per axis per level; ``levels``
      (default: all) caps the random levels, finer splits are even so the
      weight is the same function at every depth beyond ``levels``
    * ``cellwise_random``: ``seed``, ``low``, ``high``; i.i.d. uniform densities
    """
    params = dict(params or {})
    shape = tree.level_shape(tree.depth)
    if kind == "constant":
        dens = np.full(shape, float(params.get("c", 1.0)))
    elif kind == "power":
        a = float(params.get("a", 0.0))
        if a <= -1:
            raise ParameterError(f"power exponent a={a} is not locally integrable (need a > -1)")
        dens = float(params.get("scale", 1.0)) * _power_density(tree, a, params.get("x0", 0.0))
    elif kind == "indicator":
        lo = np.broadcast_to(np.asarray(params.get("lo", 0.0), dtype=float), (tree.dimension,))
        hi = np.broadcast_to(np.asarray(params.get("hi", 0.5), dtype=float), (tree.dimension,))
        dens = np.full(shape, float(params.get("c", 1.0)))
        for axis in range(tree.dimension):
            e = _cell_edges(tree, axis)
            frac = np.clip(np.minimum(e[1:], hi[axis]) - np.maximum(e[:-1], lo[axis]), 0, None) / tree.cell_size
            idx = [None] * tree.dimension
            idx[axis] = slice(None)
            dens = dens * frac[tuple(idx)]
    elif kind == "dyadic_cascade":
        spread = float(params.get("spread", 0.6))
        if not 0 <= spread < 1:
            raise ParameterError("cascade spread must lie in [0, 1)")
        levels = params.get("levels")
        if levels is not None and (not isinstance(levels, int) or levels < 0):
            raise ParameterError(f"cascade levels must be a nonnegative integer, got {levels!r}")
        m = _cascade_masses(tree, float(params.get("total", 1.0)), spread, params.get("seed", 0), levels)
        dens = m / tree.cell_volume
    elif kind == "cellwise_random":
        rng = np.random.default_rng(params.get("seed", 0))
        dens = rng.uniform(float(params.get("low", 0.0)), float(params.get("high", 1.0)), size=shape)
    else:
        raise ParameterError(f"unknown weight kind {kind!r}; expected one of {WEIGHT_KINDS}")
    return Weight(tree, dens)
