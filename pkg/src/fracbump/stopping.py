"""Stopping-time families: construction, sparseness certificates and the
two pointwise reductions (linearized maximal function, sparse integral bound)."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dyadic import DyadicCube, DyadicTree
from .errors import DegenerateInputError, MismatchError
from .operators import _check_alpha, level_factors, sparse_apply
from .weights import GridFunction

DEFAULT_FACTOR = 4.0


def _fingerprint(f: GridFunction) -> str:
    return hashlib.sha1(np.ascontiguousarray(f.cell_values).tobytes()).hexdigest()


def parent_id(tree: DyadicTree, cid: int) -> int:
    k = int(np.searchsorted(tree.level_offsets, cid, side="right")) - 1
    if k == 0:
        return -1
    local = cid - int(tree.level_offsets[k])
    if tree.dimension == 1:
        pl = local >> 1
    else:
        i, j = divmod(local, 1 << k)
        pl = (i >> 1) * (1 << (k - 1)) + (j >> 1)
    return int(tree.level_offsets[k - 1]) + pl


def child_ids(tree: DyadicTree, cid: int) -> list[int]:
    k = int(np.searchsorted(tree.level_offsets, cid, side="right")) - 1
    if k >= tree.depth:
        return []
    local = cid - int(tree.level_offsets[k])
    base = int(tree.level_offsets[k + 1])
    if tree.dimension == 1:
        return [base + 2 * local, base + 2 * local + 1]
    i, j = divmod(local, 1 << k)
    w = 1 << (k + 1)
    return [base + (2 * i + a) * w + (2 * j + b) for a in (0, 1) for b in (0, 1)]


@dataclass(eq=False)
class SparseFamily:
    """A set of cubes of one tree with family-parent links.

    ``parent[i]`` is the index of the smallest member strictly containing
    member ``i`` (``-1`` for maximal members). ``owner[c]`` is the index of the
    smallest member containing finest cell ``c`` (``-1`` if none), so the
    exceptional set ``E_S`` is ``{c : owner[c] == S}``.
    """

    tree: DyadicTree
    members: np.ndarray
    parent: np.ndarray
    owner: np.ndarray
    kind: str = "custom"
    alpha: float | None = None
    factor: float | None = None
    source: str | None = field(default=None, repr=False)

    @classmethod
    def from_ids(cls, tree: DyadicTree, ids, **meta) -> "SparseFamily":
        members = np.unique(np.asarray(list(ids), dtype=np.int64))
        index = {int(c): i for i, c in enumerate(members)}
        parent = np.full(len(members), -1, dtype=np.int64)
        for i, c in enumerate(members):
            a = parent_id(tree, int(c))
            while a >= 0:
                if a in index:
                    parent[i] = index[a]
                    break
                a = parent_id(tree, a)
        levels = tree.id_levels()
        vals = np.full(tree.n_cubes, -np.inf)
        vals[members] = levels[members]
        _, arg = kernels.chain_max(vals[None], tree.level_offsets, tree.dimension, tree.depth)
        arg = arg[0]
        owner = np.where(arg >= 0, np.searchsorted(members, np.maximum(arg, 0)), -1)
        return cls(tree, members, parent, owner.astype(np.int64), **meta)

    @classmethod
    def from_cubes(cls, tree: DyadicTree, cubes, **meta) -> "SparseFamily":
        return cls.from_ids(tree, [tree.cube_id(c) for c in cubes], **meta)

    def __len__(self):
        return len(self.members)

    def __contains__(self, cube: DyadicCube) -> bool:
        try:
            cid = self.tree.cube_id(cube)
        except ValueError:
            return False
        return bool(self.member_mask[cid])

    @property
    def member_mask(self) -> np.ndarray:
        mask = np.zeros(self.tree.n_cubes, dtype=bool)
        mask[self.members] = True
        return mask

    def index_of(self, cube: DyadicCube) -> int:
        cid = self.tree.cube_id(cube)
        i = int(np.searchsorted(self.members, cid))
        if i >= len(self.members) or self.members[i] != cid:
            raise MismatchError(f"{cube} is not in the family")
        return i

    def cubes(self) -> list[DyadicCube]:
        return [self.tree.cube_from_id(int(c)) for c in self.members]

    def levels(self) -> np.ndarray:
        return self.tree.id_levels()[self.members]

    def volumes(self) -> np.ndarray:
        return np.array([self.tree.level_volume(int(k)) for k in self.levels()])

    def children(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.parent == i)

    def exceptional_cells(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.owner == i)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "dimension": self.tree.dimension,
            "depth": self.tree.depth,
            "kind": self.kind,
            "cubes": [[c.level, list(c.coords)] for c in self.cubes()],
            "parents": [int(p) for p in self.parent],
        }


# ---------------------------------------------------------------------------
# construction


def _build(f: GridFunction, vals: np.ndarray, root: DyadicCube | None, factor: float, **meta) -> SparseFamily:
    tree = f.tree
    rid = tree.cube_id(root) if root is not None else 0
    if not vals[rid] > 0:
        raise DegenerateInputError("f vanishes identically on the root cube")
    members = [rid]
    stack = [rid]
    while stack:
        p = stack.pop()
        thr = factor * vals[p]
        frontier = child_ids(tree, p)
        while frontier:
            q = frontier.pop()
            if vals[q] > thr:  # strict: ties do not stop
                members.append(q)
                stack.append(q)
            else:
                frontier.extend(child_ids(tree, q))
    return SparseFamily.from_ids(tree, members, factor=factor, source=_fingerprint(f), **meta)


def build_stopping_fractional(f: GridFunction, alpha: float, factor: float = DEFAULT_FACTOR,
                              root: DyadicCube | None = None) -> SparseFamily:
    """Stop on fractional averages: from each minimal member ``P`` add the
    maximal ``Q ⊂ P`` with ``|Q|^{α/n}<f>_Q > factor |P|^{α/n}<f>_P``."""
    # alpha = n is allowed here: the functional is then ∫_Q f
    if not 0 <= alpha <= f.dimension:
        _check_alpha(alpha, f.dimension, allow_zero=True)
    vals = np.abs(f.cube_masses()) * level_factors(f.tree, alpha)[f.tree.id_levels()]
    return _build(f, vals, root, factor, kind="fractional", alpha=alpha)


def build_stopping_plain(f: GridFunction, factor: float = DEFAULT_FACTOR,
                         root: DyadicCube | None = None) -> SparseFamily:
    """Stop on plain averages ``<f>_Q > factor <f>_P``."""
    vals = np.abs(f.cube_masses()) * level_factors(f.tree, 0.0)[f.tree.id_levels()]
    return _build(f, vals, root, factor, kind="plain", alpha=0.0)


# ---------------------------------------------------------------------------
# certificates and reductions


@dataclass(frozen=True)
class SparsenessCertificate:
    ok: bool
    worst_child_ratio: float
    worst_ES_ratio: float


def sparseness_check(family: SparseFamily) -> SparsenessCertificate:
    """``Σ_{ch(S)} |Q| <= |S|/2`` and ``|S| <= 2|E_S|`` for every member."""
    vols = family.volumes()
    child_vol = np.zeros(len(family))
    has_parent = family.parent >= 0
    np.add.at(child_vol, family.parent[has_parent], vols[has_parent])
    es_cells = np.bincount(family.owner[family.owner >= 0], minlength=len(family))
    es_vol = es_cells * family.tree.cell_volume
    child_ratio = child_vol / vols
    with np.errstate(divide="ignore"):
        es_ratio = np.where(es_vol > 0, vols / np.where(es_vol > 0, es_vol, 1.0), np.inf)
    wc = float(child_ratio.max()) if len(family) else 0.0
    we = float(es_ratio.max()) if len(family) else 0.0
    return SparsenessCertificate(bool(wc <= 0.5 and we <= 2.0), wc, we)


def _check_family(f: GridFunction, family: SparseFamily) -> None:
    if family.tree is not f.tree:
        raise MismatchError("family and function live on different trees")
    if family.source is not None and family.source != _fingerprint(f):
        raise MismatchError("family was built from a different function")


def linearize_maximal(f: GridFunction, family: SparseFamily, alpha: float) -> GridFunction:
    """``Σ_S |S|^{α/n} <f>_S 1_{E_S}``; cells not covered by the family get 0."""
    _check_family(f, family)
    vals = np.abs(f.cube_masses()) * level_factors(f.tree, alpha)[f.tree.id_levels()]
    per_member = vals[family.members]
    out = np.where(family.owner >= 0, per_member[np.maximum(family.owner, 0)], 0.0)
    return GridFunction(f.tree, out)


def reduce_integral(f: GridFunction, family: SparseFamily, alpha: float) -> GridFunction:
    """Sparse bound ``Σ_S |S|^{α/n} <f>_S 1_S`` dominating ``I^D_α f`` up to
    ``factor * geometric_chain_constant``."""
    _check_family(f, family)
    return sparse_apply(family, f, alpha)


def random_sparse_family(tree: DyadicTree, rng: np.random.Generator, keep: float = 0.7,
                         max_gap: int = 3) -> SparseFamily:
    """Random sparse family rooted at the tree root.

    Each member picks a random depth gap ``d`` and keeps a random subset of at
    most half of its level-``d`` descendants.
    """
    members = [0]
    stack = [0]
    while stack:
        p = stack.pop()
        k = int(np.searchsorted(tree.level_offsets, p, side="right")) - 1
        if k >= tree.depth or rng.random() > keep:
            continue
        d = int(rng.integers(1, min(max_gap, tree.depth - k) + 1))
        desc = [p]
        for _ in range(d):
            desc = [c for q in desc for c in child_ids(tree, q)]
        count = int(rng.integers(1, len(desc) // 2 + 1))
        for c in rng.choice(desc, size=count, replace=False):
            members.append(int(c))
            stack.append(int(c))
    return SparseFamily.from_ids(tree, members, kind="random")
