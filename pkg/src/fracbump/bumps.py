"""Entropy functionals and bump constants.

Every supremum runs over the cubes of all ``3**n`` shifted grids that lie
inside the unit cube ``Q0 = [0,1)^n`` at the resolution of the input weights.
The local maximal functions inside ``rho`` and ``varrho`` use the exact
lattice-cube supremum: for data supported in ``Q`` a cube meeting ``Q`` can be
shrunk into ``Q`` without losing mass, so cubes inside ``Q`` suffice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np

from . import kernels
from .dyadic import DyadicCube, one_third_offset
from .errors import MismatchError, ParameterError, ZeroMassError
from .operators import ExponentConfig, _unit_tree, lattice_factors
from .weights import GridFunction, _same_tree

VARIANTS = ("onebump", "separated")


@dataclass(frozen=True)
class EpsilonSpec:
    """Log-power entropy function ``ε_r``.

    ``onebump``:   ``ε_r(t) = (δ^{-1}(1+ln t)^{1+δ})^{1/r}`` for ``t > 1``, and
    ``ε_r(1)`` for ``t <= 1``. ``∫_1^∞ dt/(t ε_r(t)^r) = 1``.

    ``separated``: ``ε_r(t) = (1+|ln t|)^{r(1+δ)}``. ``∫_0^∞ dt/(t ε_r(t)^{1/r}) = 2/δ``.
    """

    variant: str
    slot: float
    delta: float

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown epsilon variant {self.variant!r}")
        if not self.delta > 0 or not math.isfinite(self.delta):
            raise ParameterError(f"delta must be positive and finite, got {self.delta}")
        if not self.slot >= 1:
            raise ParameterError(f"exponent slot must be >= 1, got {self.slot}")
        if self.variant == "separated" and math.isinf(self.slot):
            raise ParameterError("separated epsilon needs a finite exponent slot")


def epsilon_eval(spec: EpsilonSpec, t):
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0):
        raise ParameterError("epsilon is defined for t > 0")
    d, r = spec.delta, spec.slot
    if spec.variant == "onebump":
        if math.isinf(r):
            return np.ones_like(t)[()]
        u = np.log(np.maximum(t, 1.0))
        return ((1.0 + u) ** (1.0 + d) / d) ** (1.0 / r)
    return (1.0 + np.abs(np.log(t))) ** (r * (1.0 + d))


def epsilon_normalization_check(spec: EpsilonSpec, upper: float = math.inf) -> float:
    """Closed-form value of the normalizing integral, truncated at ``t = upper``
    (and symmetrically at ``1/upper`` for the separated family)."""
    d = spec.delta
    tail = 0.0 if math.isinf(upper) else (1.0 + math.log(upper)) ** -d
    if spec.variant == "onebump":
        return 1.0 - tail
    return 2.0 * (1.0 - tail) / d


def epsilon_quadrature(spec: EpsilonSpec, upper: float) -> float:
    """Numerical value of the same integral, integrating ``epsilon_eval``
    directly in the variable ``u = ln t``."""
    from scipy.integrate import quad

    r = spec.slot
    top = math.log(upper)
    if spec.variant == "onebump":
        def integrand(u):
            return 1.0 / float(epsilon_eval(spec, math.exp(u))) ** r
        # split at integer u so the slowly decaying tail is resolved
        pieces = np.unique(np.r_[0.0, np.arange(1.0, top), top])
        return math.fsum(quad(integrand, a, b, epsabs=1e-14, epsrel=1e-13)[0]
                         for a, b in zip(pieces[:-1], pieces[1:]))

    def integrand(u):
        return 1.0 / float(epsilon_eval(spec, math.exp(u))) ** (1.0 / r)
    pieces = np.unique(np.r_[0.0, np.arange(1.0, top), top])
    half = math.fsum(quad(integrand, a, b, epsabs=1e-14, epsrel=1e-13)[0]
                     for a, b in zip(pieces[:-1], pieces[1:]))
    return 2.0 * half


# ---------------------------------------------------------------------------
# cube geometry


@dataclass(frozen=True)
class _Group:
    grid_id: int
    level: int            # unit level: side 2**-level
    starts: np.ndarray    # (B, n) first base cell per axis
    coords: np.ndarray    # (B, n) coords in the shifted grid's own lattice


@lru_cache(maxsize=16)
def sweep_groups(dimension: int, depth: int) -> tuple[_Group, ...]:
    """Cubes of every shifted grid inside ``[0,1)^n``, in tie-break order:
    grid id, then level, then coords."""
    cells = 1 << depth
    groups = []
    for gid, t in enumerate(product(range(3), repeat=dimension), start=1):
        offs = [one_third_offset(depth, ti) for ti in t]
        for k in range(depth + 1):
            m = 1 << (depth - k)
            axes = []
            for off in offs:
                # smallest j with off + j*m >= 0
                j0 = -(off // m)
                js = np.arange(j0, (cells - off) // m)
                axes.append(js[(off + js * m >= 0) & (off + (js + 1) * m <= cells)])
            if any(len(a) == 0 for a in axes):
                continue
            grids = np.meshgrid(*axes, indexing="ij")
            coords = np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)
            starts = coords * m + np.asarray(offs, dtype=np.int64)
            groups.append(_Group(gid, k, starts, coords))
    return tuple(groups)


def _blocks(cells: np.ndarray, starts: np.ndarray, m: int) -> np.ndarray:
    ar = np.arange(m)
    if cells.ndim == 1:
        return cells[starts[:, 0, None] + ar[None, :]]
    return cells[starts[:, 0, None, None] + ar[None, :, None], starts[:, 1, None, None] + ar[None, None, :]]


def _block_total(blocks: np.ndarray, dimension: int) -> np.ndarray:
    return kernels.aggregate(blocks, dimension)[0].reshape(len(blocks))


class CubeSweep:
    """Per-cube masses and local maximal integrals of one weight, over the
    swept cubes. Results are cached per (alpha, power)."""

    def __init__(self, weight: GridFunction):
        _unit_tree(weight.tree)
        self.weight = weight
        tree = weight.tree
        self.dimension = tree.dimension
        self.depth = tree.depth
        self.groups = sweep_groups(tree.dimension, tree.depth)
        self._cells = weight.cell_values.reshape(tree.level_shape(tree.depth)) * tree.cell_volume
        self._masses = None
        self._local = {}

    def _side(self, g: _Group) -> int:
        return 1 << (self.depth - g.level)

    @property
    def grid_ids(self) -> np.ndarray:
        return np.concatenate([np.full(len(g.starts), g.grid_id) for g in self.groups])

    @property
    def levels(self) -> np.ndarray:
        return np.concatenate([np.full(len(g.starts), g.level) for g in self.groups])

    @property
    def coords(self) -> np.ndarray:
        return np.concatenate([g.coords for g in self.groups])

    @property
    def volumes(self) -> np.ndarray:
        return (2.0 ** -self.levels.astype(np.float64)) ** self.dimension

    def masses(self) -> np.ndarray:
        if self._masses is None:
            out = [_block_total(_blocks(self._cells, g.starts, self._side(g)), self.dimension)
                   for g in self.groups]
            self._masses = np.concatenate(out)
        return self._masses

    def local_integral(self, alpha: float, power: float) -> np.ndarray:
        """``∫_Q M_α(1_Q weight)^power dx`` for every swept cube."""
        key = (float(alpha), float(power))
        if key not in self._local:
            h = 2.0 ** -self.depth
            cell_vol = h ** self.dimension
            out = []
            for g in self.groups:
                m = self._side(g)
                blocks = _blocks(self._cells, g.starts, m)
                fac = lattice_factors(m, h, self.dimension, alpha)
                vals = kernels.local_lattice_max(blocks, fac)
                out.append(_block_total(vals ** power * cell_vol, self.dimension))
            self._local[key] = np.concatenate(out)
        return self._local[key]

    def rho(self) -> np.ndarray:
        """``ρ(Q)`` per cube; NaN where the mass vanishes."""
        m = self.masses()
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(m > 0, self.local_integral(0.0, 1.0) / m, np.nan)

    def varrho(self, alpha: float, p: float, q: float) -> np.ndarray:
        e = q / p
        m = self.masses()
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(m > 0, self.local_integral(alpha, e) / m ** e, np.nan)

    def cube(self, i: int) -> DyadicCube:
        for g in self.groups:
            if i < len(g.starts):
                return DyadicCube(g.grid_id, g.level, tuple(int(c) for c in g.coords[i]))
            i -= len(g.starts)
        raise IndexError(i)


def _cube_block(weight: GridFunction, cube: DyadicCube | None):
    tree = weight.tree
    if cube is None:
        cube = tree.root
    if not 0 <= cube.level <= tree.depth or len(cube.coords) != tree.dimension:
        raise MismatchError(f"{cube} is not a cube of this tree")
    m = 1 << (tree.depth - cube.level)
    cells = weight.cell_values.reshape(tree.level_shape(tree.depth)) * tree.cell_volume
    starts = np.asarray([cube.coords], dtype=np.int64) * m
    if np.any(starts < 0) or np.any(starts + m > tree.side_cells):
        raise MismatchError(f"{cube} is not a cube of this tree")
    return _blocks(cells, starts, m), m


def _local_value(weight, cube, alpha, power):
    tree = weight.tree
    blocks, m = _cube_block(weight, cube)
    mass = float(_block_total(blocks, tree.dimension)[0])
    if not mass > 0:
        raise ZeroMassError("weight has zero mass on the cube")
    vals = kernels.local_lattice_max(blocks, lattice_factors(m, tree.cell_size, tree.dimension, alpha))
    integral = float(_block_total(vals ** power * tree.cell_volume, tree.dimension)[0])
    return integral, mass


def rho(sigma: GridFunction, cube: DyadicCube | None = None) -> float:
    """``(1/σ(Q)) ∫_Q M(σ 1_Q)`` for a cube of ``sigma.tree`` (default: root)."""
    integral, mass = _local_value(sigma, cube, 0.0, 1.0)
    return integral / mass


def varrho(sigma: GridFunction, cube: DyadicCube | None, alpha: float, p: float, q: float) -> float:
    """``∫_Q M_α(1_Q σ)^{q/p} / σ(Q)^{q/p}``."""
    if not 0 <= alpha < sigma.dimension:
        raise ParameterError(f"alpha must lie in [0, n), got {alpha}")
    integral, mass = _local_value(sigma, cube, alpha, q / p)
    return integral / mass ** (q / p)


# ---------------------------------------------------------------------------
# bump constants


@dataclass
class BumpReport:
    name: str
    constant: float
    argmax: DyadicCube | None
    skipped: int
    evaluated: int
    table: dict | None = field(default=None, repr=False)

    def to_dict(self, with_table: bool = False) -> dict:
        out = {
            "schema_version": 1,
            "name": self.name,
            "constant": self.constant,
            "argmax": None if self.argmax is None else {
                "grid": self.argmax.grid_id, "level": self.argmax.level, "coords": list(self.argmax.coords)},
            "skipped": self.skipped,
            "evaluated": self.evaluated,
        }
        if with_table and self.table is not None:
            out["table"] = {k: np.asarray(v).tolist() for k, v in self.table.items()}
        return out


def _inv(x: float) -> float:
    return 0.0 if math.isinf(x) else 1.0 / x


def _require(spec: EpsilonSpec, variant: str, slot: float, what: str) -> None:
    if spec.variant != variant:
        raise ParameterError(f"{what} needs the {variant} epsilon variant")
    if spec.slot != slot:
        raise ParameterError(f"{what} needs epsilon slot {slot}, got {spec.slot}")


class BumpSweep:
    """Shared per-cube data for one weight pair; every bump constant of the
    pair reuses the same masses and local maximal integrals."""

    def __init__(self, sigma: GridFunction, w: GridFunction, subcell: bool = True):
        _same_tree(sigma, w)
        self.sigma = CubeSweep(sigma)
        self.w = CubeSweep(w)
        self.subcell = subcell

    def _cells(self):
        return self.sigma.weight.cell_values.ravel(), self.w.weight.cell_values.ravel()

    @staticmethod
    def _weak_exponent(config: ExponentConfig) -> float:
        return config.alpha / config.n - 1.0 / config.p + 1.0 / config.q

    def _weak_pref(self, config: ExponentConfig) -> np.ndarray:
        s, w = self._cells()
        return s ** _inv(config.p_conj) * w ** (1.0 / config.q)

    def _check(self, config: ExponentConfig) -> None:
        if config.n != self.sigma.dimension:
            raise MismatchError(f"config dimension {config.n} != weight dimension {self.sigma.dimension}")

    def _report(self, name, beta, skipped, table, tail=None):
        beta = np.where(np.isnan(beta), 0.0, beta)
        i = int(np.argmax(beta))
        best, cube = float(beta[i]), self.sigma.cube(i)
        evaluated = len(beta)
        if tail is not None:
            tval, tcube = tail
            evaluated += self.sigma.weight.tree.n_cells
            if tval > best or (tval == best and tcube < cube):
                best, cube = tval, tcube
        tab = None
        if table:
            tab = {"grid": self.sigma.grid_ids, "level": self.sigma.levels,
                   "coords": self.sigma.coords, "beta": beta}
        return BumpReport(name, best, cube, int(skipped), evaluated, tab)

    def _tail(self, pref: np.ndarray, e: float, P: float = 0.0, c: float = 0.0):
        """Best cube strictly inside a finest cell, where both weights are
        constant: ``β = pref * 2^{-n k e} (1 + c k)^P`` at unit level ``k``."""
        if not self.subcell:
            return None
        n, L = self.sigma.dimension, self.sigma.depth
        pref = np.where(np.isnan(pref), 0.0, pref).ravel()
        live = pref > 0
        if not live.any():
            return None
        j = int(np.argmax(pref))
        if e < 0 or (e == 0 and P > 0 and c > 0):
            k = L + 1
            return math.inf, _subcell_cube(n, L, j, k)
        ks = {L + 1}
        if e > 0 and P > 0 and c > 0:
            kstar = P / (n * e * math.log(2.0)) - 1.0 / c
            ks.update(max(L + 1, int(math.floor(kstar))) + d for d in (0, 1))

        def logphi(k):
            return -n * k * e * math.log(2.0) + P * math.log1p(c * k)
        k = min(ks, key=lambda k: (-logphi(k), k))
        return float(pref[j] * math.exp(logphi(k))), _subcell_cube(n, L, j, k)

    def _weak_beta(self, config: ExponentConfig) -> np.ndarray:
        vol = self.sigma.volumes
        return (self.sigma.masses() ** _inv(config.p_conj) * self.w.masses() ** (1.0 / config.q)
                * vol ** (config.alpha / config.n - 1.0))

    def weak(self, config: ExponentConfig, table: bool = False) -> BumpReport:
        self._check(config)
        beta = self._weak_beta(config)
        skipped = int(np.count_nonzero((self.sigma.masses() <= 0) | (self.w.masses() <= 0)))
        tail = self._tail(self._weak_pref(config), self._weak_exponent(config))
        return self._report("weak", beta, skipped, table, tail)

    def onebump_max(self, config: ExponentConfig, eps_q: EpsilonSpec, table: bool = False) -> BumpReport:
        self._check(config)
        _require(eps_q, "onebump", config.q, "onebump_max_constant")
        r = self.sigma.rho()
        skip = np.isnan(r) | (self.w.masses() <= 0)
        rs = np.where(skip, 1.0, r)
        beta = self._weak_beta(config) * rs ** (1.0 / config.p) * epsilon_eval(eps_q, rs)
        # inside a cell rho = 1
        tail = self._tail(self._weak_pref(config) * float(epsilon_eval(eps_q, 1.0)), self._weak_exponent(config))
        return self._report("onebump_max", np.where(skip, 0.0, beta), np.count_nonzero(skip), table, tail)

    def onebump_int(self, config: ExponentConfig, eps_p: EpsilonSpec, eps_qc: EpsilonSpec,
                    table: bool = False) -> BumpReport:
        self._check(config)
        _require(eps_p, "onebump", config.p, "onebump_int_constant")
        _require(eps_qc, "onebump", config.q_conj, "onebump_int_constant")
        rs, rw = self.sigma.rho(), self.w.rho()
        skip = np.isnan(rs) | np.isnan(rw)
        rs = np.where(skip, 1.0, rs)
        rw = np.where(skip, 1.0, rw)
        beta = (self._weak_beta(config)
                * rs ** (1.0 / config.p) * epsilon_eval(eps_p, rs)
                * rw ** _inv(config.q_conj) * epsilon_eval(eps_qc, rw))
        const = float(epsilon_eval(eps_p, 1.0) * epsilon_eval(eps_qc, 1.0))
        tail = self._tail(self._weak_pref(config) * const, self._weak_exponent(config))
        return self._report("onebump_int", np.where(skip, 0.0, beta), np.count_nonzero(skip), table, tail)

    def _separated(self, src: CubeSweep, other: CubeSweep, config: ExponentConfig, eps: EpsilonSpec,
                   name: str, table: bool) -> BumpReport:
        p, q, a, n = config.p, config.q, config.alpha, config.n
        vol = src.volumes
        vr = src.varrho(a, p, q)
        skip = np.isnan(vr) | (other.masses() <= 0)
        vr = np.where(skip, 1.0, vr)
        frac_avg = vol ** (a / n) * src.masses() / vol
        beta = frac_avg ** (q * _inv(config.p_conj)) * (other.masses() / vol) * vr * epsilon_eval(eps, vr)
        # inside a cell: varrho = |Q|^{e2}, beta = pref |Q|^{e} (1 + |e2| n k ln 2)^{q(1+δ)}
        sc = src.weight.cell_values.ravel()
        oc = other.weight.cell_values.ravel()
        e2 = 1.0 + (a / n) * (q / p) - q / p
        e = 1.0 + q * a / n - q / p
        tail = self._tail(sc ** (q * _inv(config.p_conj)) * oc, e, eps.slot * (1.0 + eps.delta),
                          n * abs(e2) * math.log(2.0))
        return self._report(name, np.where(skip, 0.0, beta), np.count_nonzero(skip), table, tail)

    def separated(self, config: ExponentConfig, eps_q: EpsilonSpec, table: bool = False) -> BumpReport:
        """``[[σ,w]]_{α,p,q}``."""
        self._check(config)
        _require(eps_q, "separated", config.q, "sep_bump_constant")
        return self._separated(self.sigma, self.w, config, eps_q, "separated", table)

    def separated_dual(self, config: ExponentConfig, eps_pc: EpsilonSpec, table: bool = False) -> BumpReport:
        """``[[w,σ]]_{α,q',p'}``: roles of the weights and exponents swapped."""
        self._check(config)
        dual = config.dual()
        _require(eps_pc, "separated", dual.q, "sep_bump_constant (dual)")
        return self._separated(self.w, self.sigma, dual, eps_pc, "separated_dual", table)


def _subcell_cube(n: int, depth: int, cell: int, level: int) -> DyadicCube:
    """Corner subcube at ``level`` of finest cell ``cell`` (unshifted grid)."""
    idx = np.unravel_index(cell, (1 << depth,) * n)
    return DyadicCube(1, level, tuple(int(i) << (level - depth) for i in idx))


def weak_constant(sigma, w, config, table=False) -> BumpReport:
    return BumpSweep(sigma, w).weak(config, table)


def onebump_max_constant(sigma, w, config, eps_q, table=False) -> BumpReport:
    return BumpSweep(sigma, w).onebump_max(config, eps_q, table)


def onebump_int_constant(sigma, w, config, eps_p, eps_qc, table=False) -> BumpReport:
    return BumpSweep(sigma, w).onebump_int(config, eps_p, eps_qc, table)


def sep_bump_constant(sigma, w, config, eps_q, dual=False, table=False) -> BumpReport:
    """``[[σ,w]]_{α,p,q}``; with ``dual=True`` the slot of ``eps_q`` must be
    ``p'`` and the result is ``[[w,σ]]_{α,q',p'}``."""
    sweep = BumpSweep(sigma, w)
    return sweep.separated_dual(config, eps_q, table) if dual else sweep.separated(config, eps_q, table)


def separated_denominator(sep: BumpReport, dual: BumpReport, config: ExponentConfig) -> float:
    """``[[σ,w]]^{1/q} + [[w,σ]]^{1/p'}``."""
    return sep.constant ** (1.0 / config.q) + dual.constant ** _inv(config.p_conj)
