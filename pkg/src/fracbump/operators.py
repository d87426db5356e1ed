"""Fractional maximal and integral operators on cellwise-constant data.

Dyadic versions run one root-to-leaf pass over a tree. The "full" operators
are realized on the ``3**n`` one-third shifted grids, restricted to cubes
inside the window ``[-1, 2)^n``; ``method="lattice"`` instead takes the exact
supremum over all lattice-aligned cubes. Inputs are taken in absolute value.

Besides the functional API every operator has an :class:`Operator` object
working on batches of flat densities, which is what the norm estimators use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .dyadic import DyadicTree, shifted_family
from .errors import CapacityError, MismatchError, ParameterError
from .weights import GridFunction

_CHUNK_FLOATS = 1 << 23


@dataclass(frozen=True)
class ExponentConfig:
    n: int
    alpha: float
    p: float
    q: float

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ParameterError(f"dimension must be 1 or 2, got {self.n}")
        if not 0 <= self.alpha < self.n:
            raise ParameterError(f"alpha must lie in [0, n), got {self.alpha}")
        if not (1 <= self.p <= self.q < math.inf):
            raise ParameterError(f"need 1 <= p <= q < inf, got p={self.p}, q={self.q}")

    @property
    def p_conj(self) -> float:
        return math.inf if self.p == 1 else self.p / (self.p - 1)

    @property
    def q_conj(self) -> float:
        return math.inf if self.q == 1 else self.q / (self.q - 1)

    def dual(self) -> "ExponentConfig":
        """Exponents of the adjoint problem, ``(p, q) -> (q', p')``."""
        return ExponentConfig(self.n, self.alpha, self.q_conj, self.p_conj)


def _check_alpha(alpha: float, n: int, allow_zero: bool) -> None:
    if not (0 <= alpha < n) or (alpha == 0 and not allow_zero):
        what = "[0, n)" if allow_zero else "(0, n)"
        raise ParameterError(f"alpha must lie in {what}, got {alpha}")


def level_factors(tree: DyadicTree, alpha: float) -> np.ndarray:
    """``|Q|^{α/n} / |Q|`` per level: the value of a cube per unit mass."""
    n = tree.dimension
    vols = [tree.level_volume(k) for k in range(tree.depth + 1)]
    return np.array([v ** (alpha / n) / v for v in vols])


def cube_factors(tree: DyadicTree, alpha: float) -> np.ndarray:
    return level_factors(tree, alpha)[tree.id_levels()]


def _unit_tree(tree: DyadicTree) -> None:
    if tree.root_lo != (0.0,) * tree.dimension or tree.root_side != 1.0:
        raise MismatchError("shifted-grid operators need functions on the unit cube [0,1)^n")


def _masses_flat(tree: DyadicTree, dens: np.ndarray) -> np.ndarray:
    leaf = np.abs(dens).reshape((-1,) + tree.level_shape(tree.depth)) * tree.cell_volume
    return kernels.flatten_levels(kernels.aggregate(leaf, tree.dimension))


def _batch(dens, tree):
    d = np.asarray(dens, dtype=np.float64)
    return d.reshape(-1, tree.n_cells)


# ---------------------------------------------------------------------------
# batched primitives on flat densities (B, n_cells)


def _dyadic_pass(tree, dens, alpha, mode, member=None):
    vals = _masses_flat(tree, dens) * cube_factors(tree, alpha)
    if member is not None:
        vals = np.where(member, vals, -np.inf if mode == "max" else 0.0)
    if mode == "max":
        return kernels.chain_max(vals, tree.level_offsets, tree.dimension, tree.depth)
    return kernels.chain_sum(vals, tree.level_offsets, tree.dimension, tree.depth), None


def _shifted_pass(tree, dens, alpha, mode):
    """Max or sum over the shifted family. Returns values and, for max, the
    (grid index, cube id) of the winning cube per cell."""
    _unit_tree(tree)
    fam = shifted_family(tree.dimension, tree.depth)
    dens = np.abs(dens)
    nb = dens.shape[0]
    out = np.full((nb, tree.n_cells), -np.inf if mode == "max" else 0.0)
    win_grid = np.zeros((nb, tree.n_cells), dtype=np.int64)
    win_cube = np.zeros((nb, tree.n_cells), dtype=np.int64)
    cells = dens.reshape((nb,) + tree.level_shape(tree.depth))
    for g, gt in enumerate(fam.trees):
        fac = np.where(fam.window_masks[g], cube_factors(gt, alpha), -np.inf if mode == "max" else 0.0)
        chunk = max(1, _CHUNK_FLOATS // gt.n_cubes)
        for s in range(0, nb, chunk):
            part = cells[s:s + chunk]
            leaf = np.zeros((part.shape[0],) + gt.level_shape(gt.depth))
            leaf[(slice(None),) + fam.q0_slice(g)] = part * gt.cell_volume
            masses = kernels.flatten_levels(kernels.aggregate(leaf, gt.dimension))
            with np.errstate(invalid="ignore"):
                vals = np.where(np.isinf(fac), fac, masses * fac)
            if mode == "max":
                v, a = kernels.chain_max(vals, gt.level_offsets, gt.dimension, gt.depth)
            else:
                v, a = kernels.chain_sum(vals, gt.level_offsets, gt.dimension, gt.depth), None
            v = v.reshape((v.shape[0],) + gt.level_shape(gt.depth))[(slice(None),) + fam.q0_slice(g)]
            v = v.reshape(v.shape[0], -1)
            if mode == "max":
                a = a.reshape((a.shape[0],) + gt.level_shape(gt.depth))[(slice(None),) + fam.q0_slice(g)]
                a = a.reshape(a.shape[0], -1)
                better = v > out[s:s + chunk]
                out[s:s + chunk] = np.where(better, v, out[s:s + chunk])
                win_grid[s:s + chunk] = np.where(better, g, win_grid[s:s + chunk])
                win_cube[s:s + chunk] = np.where(better, a, win_cube[s:s + chunk])
            else:
                out[s:s + chunk] += v
    if mode == "max":
        return out, (win_grid, win_cube)
    return out, None


def lattice_factors(m: int, cell_size: float, dimension: int, alpha: float) -> np.ndarray:
    vols = [(s * cell_size) ** dimension for s in range(1, m + 1)]
    return np.array([0.0] + [v ** (alpha / dimension) / v for v in vols])


def _lattice_pass(tree, dens, alpha):
    _unit_tree(tree)
    nb = dens.shape[0]
    blocks = np.abs(dens).reshape((nb,) + tree.level_shape(tree.depth)) * tree.cell_volume
    fac = lattice_factors(tree.side_cells, tree.cell_size, tree.dimension, alpha)
    return kernels.local_lattice_max(blocks, fac).reshape(nb, -1)


# ---------------------------------------------------------------------------
# functional API


def dyadic_frac_maximal(f: GridFunction, alpha: float, return_argmax: bool = False):
    """``sup_{Q∋x} |Q|^{α/n} <|f|>_Q`` over the cubes of ``f.tree``."""
    _check_alpha(alpha, f.dimension, allow_zero=True)
    v, arg = _dyadic_pass(f.tree, _batch(f.flat, f.tree), alpha, "max")
    out = GridFunction(f.tree, v[0])
    return (out, arg[0]) if return_argmax else out


def frac_maximal(f: GridFunction, alpha: float, method: str = "shifted") -> GridFunction:
    """Fractional maximal function on ``[0,1)^n``.

    ``shifted``: max over the one-third shifted grids (window cubes).
    ``lattice``: exact sup over all cubes with corners on the ``2^-L`` lattice.
    For data supported in ``[0,1)^n`` cubes leaving the unit cube never win
    (shrinking to the intersection keeps the mass and lowers the volume), so
    the lattice sup is computed on the unit cube alone.
    """
    _check_alpha(alpha, f.dimension, allow_zero=True)
    d = _batch(f.flat, f.tree)
    if method == "shifted":
        v, _ = _shifted_pass(f.tree, d, alpha, "max")
    elif method == "lattice":
        v = _lattice_pass(f.tree, d, alpha)
    else:
        raise ParameterError(f"unknown method {method!r}")
    return GridFunction(f.tree, v[0])


def hl_maximal(f: GridFunction, method: str = "shifted") -> GridFunction:
    return frac_maximal(f, 0.0, method)


def dyadic_frac_integral(f: GridFunction, alpha: float) -> GridFunction:
    """``Σ_{Q∋x} |Q|^{α/n} <|f|>_Q`` over the cubes of ``f.tree``, summed root to leaf."""
    _check_alpha(alpha, f.dimension, allow_zero=False)
    v, _ = _dyadic_pass(f.tree, _batch(f.flat, f.tree), alpha, "sum")
    return GridFunction(f.tree, v[0])


def frac_integral(f: GridFunction, alpha: float) -> GridFunction:
    """Sum of the dyadic fractional integrals of the shifted grids."""
    _check_alpha(alpha, f.dimension, allow_zero=False)
    v, _ = _shifted_pass(f.tree, _batch(f.flat, f.tree), alpha, "sum")
    return GridFunction(f.tree, v[0])


def _self_interaction_2d(alpha: float) -> float:
    # (1/|C|) ∫_C ∫_C |x-y|^{α-2} for the unit square; polar coordinates on
    # the octant 0 <= θ <= π/4 (8-fold symmetry), radial part in closed form
    g, gw = np.polynomial.legendre.leggauss(64)
    th = (g + 1) * np.pi / 8
    c, s = np.cos(th), np.sin(th)
    R = 1 / c
    a = alpha
    radial = R ** a / a - (c + s) * R ** (a + 1) / (a + 1) + c * s * R ** (a + 2) / (a + 2)
    return float(8 * np.pi / 8 * np.dot(gw, radial))


def kernel_diagonal(alpha: float, h: float, dimension: int) -> float:
    """Cell-averaged self-interaction ``(1/|C|) ∫_C∫_C |x-y|^{α-n}``, side ``h``."""
    if dimension == 1:
        return 2.0 * h ** alpha / (alpha * (alpha + 1.0))
    return h ** alpha * _self_interaction_2d(alpha)


@lru_cache(maxsize=8)
def _kernel_matrix(dimension: int, depth: int, alpha: float) -> np.ndarray:
    if (dimension == 2 and depth > 7) or (dimension == 1 and depth > 12):
        raise CapacityError(f"kernel matrix too large for n={dimension}, L={depth}")
    h = 2.0 ** -depth
    centers = (np.arange(1 << depth) + 0.5) * h
    if dimension == 1:
        pts = centers[:, None]
    else:
        X, Y = np.meshgrid(centers, centers, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    np.fill_diagonal(dist, 1.0)
    K = dist ** (alpha - dimension) * h ** dimension
    np.fill_diagonal(K, kernel_diagonal(alpha, h, dimension))
    K.setflags(write=False)
    return K


def kernel_matrix(tree: DyadicTree, alpha: float) -> np.ndarray:
    _unit_tree(tree)
    _check_alpha(alpha, tree.dimension, allow_zero=False)
    return _kernel_matrix(tree.dimension, tree.depth, float(alpha))


def kernel_frac_integral(f: GridFunction, alpha: float) -> GridFunction:
    """Riesz potential ``∫ |f(y)| |x-y|^{α-n} dy`` of data on ``[0,1)^n``."""
    K = kernel_matrix(f.tree, alpha)
    return GridFunction(f.tree, K @ np.abs(f.flat))


def sparse_apply(family, f: GridFunction, alpha: float) -> GridFunction:
    """``Σ_{Q∈S} |Q|^{α/n} <|f|>_Q 1_Q`` for a family ``S`` on ``f.tree``."""
    if family.tree is not f.tree:
        raise MismatchError("family and function live on different trees")
    _check_alpha(alpha, f.dimension, allow_zero=True)
    v, _ = _dyadic_pass(f.tree, _batch(f.flat, f.tree), alpha, "sum", member=family.member_mask)
    return GridFunction(f.tree, v[0])


def geometric_chain_constant(alpha: float, n: int) -> float:
    """Bound ``C`` with ``Σ_{Q∋x, Q⊆S} |Q|^{α/n} <= C |S|^{α/n}``: the ratio of
    consecutive terms is ``2^{-α}`` (side halves, ``|Q|^{α/n}`` = side^α)."""
    if not alpha > 0 or not math.isfinite(alpha):
        raise ParameterError("chain sums diverge for alpha <= 0")
    return 1.0 / (1.0 - 2.0 ** (-alpha))


# ---------------------------------------------------------------------------
# operator objects for norm estimation


class Operator:
    """Positive operator on batches of flat densities ``(B, n_cells)``.

    ``apply`` returns ``(values, state)``; ``adjoint(g, state)`` applies the
    Lebesgue adjoint of the operator linearized at that state (exact adjoint
    for linear operators). ``adjoint`` is None-able via ``has_adjoint``.
    """

    linear = True
    has_adjoint = True
    name = "operator"

    def __init__(self, tree: DyadicTree, alpha: float):
        self.tree = tree
        self.alpha = float(alpha)

    def apply(self, dens):
        raise NotImplementedError

    def adjoint(self, g, state):
        raise NotImplementedError

    def __call__(self, f: GridFunction) -> GridFunction:
        v, _ = self.apply(f.flat[None])
        return GridFunction(self.tree, v[0])


def subcell_tail(cell_size: float, alpha: float) -> float:
    """``Σ_{j>=1} (cell_size 2^{-j})^α``: the chain below a finest cell, on
    which cellwise-constant data has average equal to its cell value."""
    return cell_size ** alpha * 2.0 ** -alpha / (1.0 - 2.0 ** -alpha)


class _SumOp(Operator):
    def adjoint(self, g, state):
        v, _ = self.apply(g)
        return v


class DyadicIntegralOp(_SumOp):
    """Dyadic fractional integral on one grid. With ``subcell=True`` the chain
    continues below the finest level (exact for cellwise-constant input)."""

    name = "integral_single_grid"

    def __init__(self, tree, alpha, subcell: bool = False):
        _check_alpha(alpha, tree.dimension, allow_zero=False)
        super().__init__(tree, alpha)
        self.tail = subcell_tail(tree.cell_size, alpha) if subcell else 0.0

    def apply(self, dens):
        d = _batch(dens, self.tree)
        v, _ = _dyadic_pass(self.tree, d, self.alpha, "sum")
        return (v + self.tail * np.abs(d) if self.tail else v), None


class ShiftedIntegralOp(_SumOp):
    """Sum of the dyadic fractional integrals of the shifted grids; ``subcell``
    as for :class:`DyadicIntegralOp` (every grid shares the finest cells)."""

    name = "integral_dyadic"

    def __init__(self, tree, alpha, subcell: bool = False):
        _check_alpha(alpha, tree.dimension, allow_zero=False)
        _unit_tree(tree)
        super().__init__(tree, alpha)
        grids = 3 ** tree.dimension
        self.tail = grids * subcell_tail(tree.cell_size, alpha) if subcell else 0.0

    def apply(self, dens):
        d = _batch(dens, self.tree)
        v, _ = _shifted_pass(self.tree, d, self.alpha, "sum")
        return (v + self.tail * np.abs(d) if self.tail else v), None


class KernelIntegralOp(_SumOp):
    name = "integral_kernel"

    def __init__(self, tree, alpha):
        super().__init__(tree, alpha)
        self.K = kernel_matrix(tree, alpha)

    def apply(self, dens):
        return np.abs(_batch(dens, self.tree)) @ self.K.T, None

    def adjoint(self, g, state):
        return _batch(g, self.tree) @ self.K


class SparseOp(_SumOp):
    name = "sparse"

    def __init__(self, family, alpha):
        super().__init__(family.tree, alpha)
        self.family = family

    def apply(self, dens):
        return _dyadic_pass(self.tree, _batch(dens, self.tree), self.alpha, "sum", member=self.family.member_mask)


class DyadicMaximalOp(Operator):
    name = "maximal_single_grid"
    linear = False

    def apply(self, dens):
        return _dyadic_pass(self.tree, _batch(dens, self.tree), self.alpha, "max")

    def adjoint(self, g, state):
        return _max_adjoint(self.tree, _batch(g, self.tree), state, self.alpha)


class ShiftedMaximalOp(Operator):
    name = "maximal"
    linear = False

    def __init__(self, tree, alpha):
        _unit_tree(tree)
        super().__init__(tree, alpha)

    def apply(self, dens):
        return _shifted_pass(self.tree, _batch(dens, self.tree), self.alpha, "max")

    def adjoint(self, g, state):
        grid_of, cube_of = state
        fam = shifted_family(self.tree.dimension, self.tree.depth)
        g = _batch(g, self.tree)
        out = np.zeros_like(g)
        for gi, gt in enumerate(fam.trees):
            sel = grid_of == gi
            if not sel.any():
                continue
            contrib = _max_adjoint(gt, np.where(sel, g, 0.0), np.where(sel, cube_of, 0),
                                   self.alpha, src_cell_volume=self.tree.cell_volume,
                                   embed=fam.q0_slice(gi), base=self.tree)
            out += contrib
        return out


class LatticeMaximalOp(Operator):
    """Exact lattice-cube maximal operator (no linearization available)."""

    name = "maximal_lattice"
    linear = False
    has_adjoint = False

    def __init__(self, tree, alpha):
        _unit_tree(tree)
        super().__init__(tree, alpha)

    def apply(self, dens):
        return _lattice_pass(self.tree, _batch(dens, self.tree), self.alpha), None


def _max_adjoint(tree, g, arg, alpha, src_cell_volume=None, embed=None, base=None):
    """Adjoint of ``u -> Σ_x 1_x |Q_x|^{α/n} <u>_{Q_x}`` for fixed winners ``Q_x``."""
    vol = tree.cell_volume if src_cell_volume is None else src_cell_volume
    fac = cube_factors(tree, alpha)
    nb = g.shape[0]
    coef = np.zeros((nb, tree.n_cubes))
    for b in range(nb):
        np.add.at(coef[b], arg[b], g[b] * vol * fac[arg[b]])
    dens = kernels.chain_sum(coef, tree.level_offsets, tree.dimension, tree.depth)
    if embed is None:
        return dens
    dens = dens.reshape((nb,) + tree.level_shape(tree.depth))[(slice(None),) + embed]
    return dens.reshape(nb, -1)


OPERATORS = {
    "maximal": ShiftedMaximalOp,
    "maximal_lattice": LatticeMaximalOp,
    "maximal_single_grid": DyadicMaximalOp,
    "integral_dyadic": ShiftedIntegralOp,
    "integral_single_grid": DyadicIntegralOp,
    "integral_kernel": KernelIntegralOp,
}


def make_operator(kind: str, tree: DyadicTree, alpha: float, family=None, subcell: bool = False) -> Operator:
    """Operator by name. ``subcell`` extends the dyadic integral chains below
    the finest level."""
    if kind == "sparse":
        if family is None:
            raise ParameterError("sparse operator needs a family")
        return SparseOp(family, alpha)
    if kind not in OPERATORS:
        raise ParameterError(f"unknown operator {kind!r}")
    if kind in ("integral_dyadic", "integral_single_grid"):
        return OPERATORS[kind](tree, alpha, subcell=subcell)
    return OPERATORS[kind](tree, alpha)
