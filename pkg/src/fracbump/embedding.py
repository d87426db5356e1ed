"""Carleson embeddings, testing constants, norm brackets, weak-type norms
and the distributional diagnostic for sparse sums."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .dyadic import DyadicCube, DyadicTree
from .errors import DegenerateInputError, MismatchError, ParameterError
from .operators import ExponentConfig, Operator, cube_factors
from .stopping import SparseFamily, build_stopping_fractional
from .weights import GridFunction, _same_tree, integrate

ASCENT_THETA = 0.5
ASCENT_TOL = 1e-4
LEVEL_SET_RTOL = 1e-12


def _inv(x: float) -> float:
    return 0.0 if math.isinf(x) else 1.0 / x


def _subtree_sums(tree: DyadicTree, a: np.ndarray) -> np.ndarray:
    """``Σ_{Q ⊆ P} a_Q`` for every cube ``P`` (flat cube-id order)."""
    levels = [a[tree.level_offsets[k]:tree.level_offsets[k + 1]].reshape(tree.level_shape(k)).copy()
              for k in range(tree.depth + 1)]
    for k in range(tree.depth - 1, -1, -1):
        below = kernels.aggregate(levels[k + 1][None], tree.dimension)
        levels[k] += below[-2][0]
    return np.concatenate([lv.ravel() for lv in levels])


# ---------------------------------------------------------------------------
# Carleson sequences


@dataclass
class CarlesonSequence:
    """Nonnegative numbers ``a_Q`` on the cubes of ``mu.tree`` (flat cube-id
    order) with exponents ``p <= q``."""

    a: np.ndarray
    mu: GridFunction
    p: float
    q: float

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        if self.a.shape != (self.tree.n_cubes,):
            raise MismatchError(f"a must have one entry per cube ({self.tree.n_cubes})")
        if np.any(self.a < 0) or not np.all(np.isfinite(self.a)):
            raise ParameterError("Carleson coefficients must be finite and nonnegative")
        if not 1 <= self.p <= self.q < math.inf:
            raise ParameterError(f"need 1 <= p <= q < inf, got p={self.p}, q={self.q}")

    @property
    def tree(self) -> DyadicTree:
        return self.mu.tree

    @classmethod
    def from_cubes(cls, mu: GridFunction, values: dict, p: float, q: float) -> "CarlesonSequence":
        a = np.zeros(mu.tree.n_cubes)
        for cube, v in values.items():
            a[mu.tree.cube_id(cube)] = v
        return cls(a, mu, p, q)

    def scaled(self, c: float) -> "CarlesonSequence":
        return CarlesonSequence(self.a * c, self.mu, self.p, self.q)


def carleson_ratios(seq: CarlesonSequence) -> np.ndarray:
    sub = _subtree_sums(seq.tree, seq.a)
    mass = seq.mu.cube_masses()
    with np.errstate(divide="ignore", invalid="ignore"):
        r = sub / mass ** (seq.q / seq.p)
    r[(mass <= 0) & (sub > 0)] = np.inf
    r[sub == 0] = 0.0
    return r


def carleson_constant(seq: CarlesonSequence) -> float:
    """``max_P μ(P)^{-q/p} Σ_{Q⊆P} a_Q``; ``inf`` if some ``P`` has zero
    ``μ``-mass but carries coefficients."""
    return float(carleson_ratios(seq).max())


def normalize_carleson(seq: CarlesonSequence) -> CarlesonSequence:
    c = carleson_constant(seq)
    if not 0 < c < math.inf:
        raise DegenerateInputError(f"cannot normalize a sequence with Carleson constant {c}")
    return seq.scaled(1.0 / c)


@dataclass(frozen=True)
class LevelSetCheck:
    ok: bool
    worst_ratio: float   # max over λ of lhs / rhs
    levels: int


def _mu_averages(seq: CarlesonSequence, f: GridFunction) -> tuple[np.ndarray, np.ndarray]:
    _same_tree(f, seq.mu)
    mass = seq.mu.cube_masses()
    fmu = GridFunction(seq.tree, np.abs(f.cell_values) * seq.mu.cell_values).cube_masses()
    with np.errstate(divide="ignore", invalid="ignore"):
        avg = np.where(mass > 0, fmu / np.where(mass > 0, mass, 1.0), np.nan)
    return avg, mass


def embedding_ratio(seq: CarlesonSequence, f: GridFunction, with_levels: bool = False):
    """``Σ_Q a_Q (<f>^μ_Q)^q / ||f||_{L^p(μ)}^q``; terms with ``μ(Q) = 0`` skipped.

    With ``with_levels`` also returns the level-set comparison
    ``λ^q ν({Tf > λ}) <= C (λ^p μ({Mf > λ}))^{q/p}`` (``C`` the Carleson
    constant) at every attained ``λ``, where ``ν(Q) = a_Q``, ``Tf(Q) = <f>^μ_Q``
    and ``M`` is the dyadic ``μ``-maximal function.
    """
    if seq.p <= 1:
        raise ParameterError("embedding needs p > 1")
    avg, mass = _mu_averages(seq, f)
    norm_p = float(integrate(np.abs(f.flat) ** seq.p * seq.mu.flat, seq.tree)[0])
    if not norm_p > 0:
        raise DegenerateInputError("f has zero L^p(mu) norm")
    live = mass > 0
    total = float(np.sum(seq.a[live] * avg[live] ** seq.q))
    ratio = total / norm_p ** (seq.q / seq.p)
    if not with_levels:
        return ratio
    return ratio, level_set_check(seq, avg, mass)


def level_set_check(seq: CarlesonSequence, avg: np.ndarray, mass: np.ndarray) -> LevelSetCheck:
    tree = seq.tree
    p, q = seq.p, seq.q
    c = carleson_constant(seq)
    vals = np.where(mass > 0, avg, -np.inf)
    mf, _ = kernels.chain_max(vals[None], tree.level_offsets, tree.dimension, tree.depth)
    mf = mf[0]
    cell_mu = seq.mu.flat * tree.cell_volume
    lams = np.unique(avg[(mass > 0) & (avg > 0)])
    # ν({T > λ}) and μ({M > λ}) via sorted cumulative sums
    order = np.argsort(vals)
    a_sorted = np.where(mass > 0, seq.a, 0.0)[order]
    v_sorted = vals[order]
    nu_tail = np.cumsum(a_sorted[::-1])[::-1]
    c_order = np.argsort(mf)
    m_sorted = mf[c_order]
    mu_tail = np.cumsum(cell_mu[c_order][::-1])[::-1]
    worst = 0.0
    for lam in lams:
        for strict in (True, False):  # λ itself and λ -> λ⁻
            side = "right" if strict else "left"
            i = np.searchsorted(v_sorted, lam, side=side)
            nu = nu_tail[i] if i < len(nu_tail) else 0.0
            j = np.searchsorted(m_sorted, lam, side=side)
            mu = mu_tail[j] if j < len(mu_tail) else 0.0
            lhs = lam ** q * nu
            rhs = c * (lam ** p * mu) ** (q / p) if mu > 0 else 0.0
            if lhs > 0:
                worst = max(worst, lhs / rhs if rhs > 0 else math.inf)
    return LevelSetCheck(bool(worst <= 1.0 + LEVEL_SET_RTOL), worst, len(lams))


def random_carleson_instance(tree: DyadicTree, rng: np.random.Generator, p: float = 2.0, q: float = 2.0,
                             density: float = 0.3) -> tuple[CarlesonSequence, GridFunction]:
    """Cascade ``μ``, random coefficients normalized to Carleson constant 1,
    and a random positive ``f``."""
    from .weights import generate_weight

    mu = generate_weight("dyadic_cascade", {"seed": int(rng.integers(2**31))}, tree)
    mass = mu.cube_masses()
    keep = rng.random(tree.n_cubes) < density
    a = np.where(keep, rng.random(tree.n_cubes) * mass ** (q / p), 0.0)
    a[0] = max(a[0], 1e-3 * mass[0] ** (q / p))
    seq = normalize_carleson(CarlesonSequence(a, mu, p, q))
    f = GridFunction(tree, rng.lognormal(0.0, 1.0, tree.level_shape(tree.depth)))
    return seq, f


# ---------------------------------------------------------------------------
# testing constants


@dataclass(frozen=True)
class TestingConstants:
    beta1: float
    beta2: float
    argmax1: DyadicCube | None
    argmax2: DyadicCube | None
    skipped: int

    def bracket(self, config: ExponentConfig) -> float:
        """``β₁^{1/q} + β₂^{1/p'}``."""
        return self.beta1 ** (1.0 / config.q) + self.beta2 ** _inv(config.p_conj)


def testing_table(family: SparseFamily, sigma: GridFunction, w: GridFunction, alpha: float,
                  r: float, p_over: float) -> tuple[np.ndarray, np.ndarray]:
    """Per member ``P``: ``∫_P (Σ_{Q⊆P} |Q|^{α/n}<σ>_Q 1_Q)^r w`` and
    ``σ(P)^{p_over}``."""
    tree = family.tree
    vals = np.zeros(tree.n_cubes)
    vals[family.members] = (sigma.cube_masses() * cube_factors(tree, alpha))[family.members]
    sums = kernels.restricted_chain_sum(vals, tree.level_offsets, tree.dimension, tree.depth,
                                       family.members, family.levels())
    integrals = integrate(sums ** r * w.flat[None], tree)[:, 0]
    return integrals, sigma.cube_masses()[family.members] ** p_over


def testing_constants(family: SparseFamily, sigma: GridFunction, w: GridFunction,
                      config: ExponentConfig) -> TestingConstants:
    """Sawyer testing constants of the sparse operator of ``family``."""
    _same_tree(sigma, w)
    if family.tree.n_cells != sigma.tree.n_cells or family.tree.dimension != sigma.dimension:
        raise MismatchError("family and weights live on different trees")
    if config.p <= 1:
        raise ParameterError("testing constants need p > 1")
    p, q, pc, qc = config.p, config.q, config.p_conj, config.q_conj
    i1, d1 = testing_table(family, sigma, w, config.alpha, q, q / p)
    i2, d2 = testing_table(family, w, sigma, config.alpha, pc, pc / qc)
    cubes = family.cubes()
    out, skipped = [], 0
    for num, den in ((i1, d1), (i2, d2)):
        live = den > 0
        skipped += int(np.count_nonzero(~live))
        r = np.where(live, num / np.where(live, den, 1.0), 0.0)
        k = int(np.argmax(r)) if len(r) else 0
        out.append((float(r[k]) if len(r) else 0.0, cubes[k] if len(r) else None))
    return TestingConstants(out[0][0], out[1][0], out[0][1], out[1][1], skipped)


# ---------------------------------------------------------------------------
# norm brackets


@dataclass
class NormBracket:
    lower: float
    witness: GridFunction | None = field(repr=False)
    witness_kind: str
    history: list = field(default_factory=list, repr=False)
    testing: TestingConstants | None = None

    def testing_upper(self, config: ExponentConfig) -> float | None:
        return None if self.testing is None else self.testing.bracket(config)

    def to_dict(self, config: ExponentConfig | None = None) -> dict:
        out = {"schema_version": 1, "lower": self.lower, "witness_kind": self.witness_kind,
               "ascent_steps": len(self.history)}
        if self.testing is not None:
            out.update(beta1=self.testing.beta1, beta2=self.testing.beta2)
            if config is not None:
                out["testing_upper"] = self.testing.bracket(config)
        return out


def _check_pair(op: Operator, sigma: GridFunction, w: GridFunction, config: ExponentConfig) -> None:
    _same_tree(sigma, w)
    if op.tree.n_cells != sigma.tree.n_cells or op.tree.dimension != sigma.dimension:
        raise MismatchError("operator and weights live on different trees")
    if config.n != sigma.dimension:
        raise MismatchError("config dimension does not match the weights")


def indicator_candidates(tree: DyadicTree) -> np.ndarray:
    """Rows: ``1_P`` for every cube ``P`` (cube-id order), then ``f ≡ 1``
    (duplicate of the root, kept so the constant witness is explicit)."""
    ids = tree.id_levels()
    out = np.zeros((tree.n_cubes + 1, tree.n_cells))
    side = tree.side_cells
    for cid in range(tree.n_cubes):
        k = ids[cid]
        m = 1 << (tree.depth - k)
        local = cid - tree.level_offsets[k]
        if tree.dimension == 1:
            out[cid, local * m:(local + 1) * m] = 1.0
        else:
            i, j = divmod(int(local), 1 << k)
            blk = np.zeros((side, side))
            blk[i * m:(i + 1) * m, j * m:(j + 1) * m] = 1.0
            out[cid] = blk.ravel()
    out[-1] = 1.0
    return out


class _Evaluator:
    """``(∫ T(fσ)^q w / (∫|f|^p σ)^{q/p})^{1/q}`` for batches of ``f``."""

    def __init__(self, op, sigma, w, config):
        self.op, self.tree = op, sigma.tree
        self.s, self.w = sigma.flat, w.flat
        self.p, self.q = config.p, config.q

    def norms_p(self, f):
        return integrate(np.abs(f) ** self.p * self.s, self.tree)[:, 0]

    def __call__(self, f):
        tf, state = self.op.apply(f * self.s)
        num = integrate(tf ** self.q * self.w, self.tree)[:, 0]
        den = self.norms_p(f)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(den > 0, (num / den ** (self.q / self.p)) ** (1.0 / self.q), 0.0)
        return r, tf, state


def _chunks(n, size):
    for s in range(0, n, size):
        yield slice(s, min(n, s + size))


def strong_norm_lower(op: Operator, sigma: GridFunction, w: GridFunction, config: ExponentConfig,
                      candidates: np.ndarray | None = None, ascent_steps: int = 30,
                      family: SparseFamily | None = None) -> NormBracket:
    """Best ratio ``||T(fσ)||_{L^q(w)} / ||f||_{L^p(σ)}`` over candidates,
    improved by damped multiplicative ascent.

    The candidate set always contains every cube indicator and ``f ≡ 1``;
    for linear operators it also contains ``(T*(1_P w))^{p'-1}``. When
    ``family`` is given the testing constants of its sparse operator are
    attached.
    """
    _check_pair(op, sigma, w, config)
    tree = sigma.tree
    ev = _Evaluator(op, sigma, w, config)
    base = indicator_candidates(tree)
    cands = base if candidates is None else np.vstack([base, np.asarray(candidates, dtype=np.float64)
                                                       .reshape(-1, tree.n_cells)])
    best, best_f, kind = -1.0, None, "indicator"
    chunk = max(1, (1 << 22) // max(tree.n_cells, 1) // 8)
    for sl in _chunks(len(cands), chunk):
        r, _, _ = ev(cands[sl])
        i = int(np.argmax(r))
        if r[i] > best:
            best, best_f = float(r[i]), cands[sl][i]
            kind = "constant" if sl.start + i == len(base) - 1 else (
                "indicator" if sl.start + i < len(base) else "supplied")
    if op.linear and op.has_adjoint and config.p > 1:
        pc = config.p_conj
        for sl in _chunks(len(base) - 1, chunk):
            dual = op.adjoint(base[sl] * w.flat, None)
            f = np.abs(dual) ** (pc - 1.0)
            r, _, _ = ev(f)
            i = int(np.argmax(r))
            if r[i] > best:
                best, best_f, kind = float(r[i]), f[i], "dual_indicator"
    if not best > 0:
        if np.all(ev.norms_p(cands) <= 0):
            raise DegenerateInputError("every candidate has zero L^p(sigma) norm")
    history = [best]
    if op.has_adjoint and config.p > 1 and ascent_steps > 0:
        floor = 1e-3
        starts = [np.ones(tree.n_cells), best_f + floor * float(np.max(best_f))]
        for f0 in starts:
            f = f0.copy()
            last = ev(f[None])[0][0]
            for _ in range(ascent_steps):
                f = _ascent_step(ev, f, config)
                r = ev(f[None])[0][0]
                if r > best:
                    best, best_f, kind = float(r), f.copy(), "ascent"
                history.append(best)
                if not r > last * (1 + ASCENT_TOL):
                    break
                last = r
    testing = testing_constants(family, sigma, w, config) if family is not None else None
    return NormBracket(best, GridFunction(tree, best_f.reshape(tree.level_shape(tree.depth))),
                       kind, history, testing)


def _ascent_step(ev: _Evaluator, f: np.ndarray, config: ExponentConfig) -> np.ndarray:
    tf, state = ev.op.apply((f * ev.s)[None])
    g = ev.w * tf[0] ** (config.q - 1.0)
    grad = np.abs(np.asarray(ev.op.adjoint(g[None], state)).reshape(-1))
    target = grad ** (config.p_conj - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        new = f ** (1 - ASCENT_THETA) * target ** ASCENT_THETA
    new = np.where(np.isfinite(new), new, 0.0)
    n = float(ev.norms_p(new[None])[0])
    return new / n ** (1.0 / config.p) if n > 0 else f


def weak_norm(op: Operator, sigma: GridFunction, w: GridFunction, config: ExponentConfig,
              candidates: np.ndarray | None = None, include_indicators: bool = True) -> float:
    """``max_f sup_λ λ w({T(fσ) > λ})^{1/q} / ||f||_{L^p(σ)}`` over candidates,
    with ``λ`` running through the attained values (exact for cellwise data)."""
    _check_pair(op, sigma, w, config)
    tree = sigma.tree
    parts = [indicator_candidates(tree)] if include_indicators else []
    if candidates is not None:
        parts.append(np.asarray(candidates, dtype=np.float64).reshape(-1, tree.n_cells))
    if not parts:
        raise ParameterError("no candidates to evaluate")
    cands = np.vstack(parts)
    ev = _Evaluator(op, sigma, w, config)
    wcell = w.flat * tree.cell_volume
    best = 0.0
    chunk = max(1, (1 << 22) // max(tree.n_cells, 1) // 8)
    for sl in _chunks(len(cands), chunk):
        f = cands[sl]
        tf, _ = op.apply(f * sigma.flat)
        norms = ev.norms_p(f) ** (1.0 / config.p)
        order = np.argsort(-tf, axis=1, kind="stable")
        vals = np.take_along_axis(tf, order, axis=1)
        cum = np.cumsum(wcell[order], axis=1)
        # last position of each run of equal values: w({T >= v})
        last = np.ones_like(vals, dtype=bool)
        last[:, :-1] = vals[:, :-1] != vals[:, 1:]
        score = np.where(last, vals * cum ** (1.0 / config.q), 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(norms > 0, score.max(axis=1) / norms, 0.0)
        best = max(best, float(r.max()))
    return best


# ---------------------------------------------------------------------------
# distributional diagnostic


@dataclass
class PhiTable:
    lambdas: np.ndarray
    fractions: np.ndarray   # w({Φ_S > λ |S|^{α/n}<σ>_S}) / w(S)
    decay_base: float       # least-squares exp(slope) of log fractions, λ in [2, 8]
    envelope_base: float    # smallest b with fractions <= 2 b^{λ-1}, λ in [2, 8]

    def to_dict(self) -> dict:
        return {"schema_version": 1, "lambda": self.lambdas.tolist(), "fraction": self.fractions.tolist(),
                "decay_base": self.decay_base, "envelope_base": self.envelope_base}


def phi_distribution_check(family: SparseFamily, sigma: GridFunction, w: GridFunction,
                           config: ExponentConfig, S: DyadicCube, lambdas=range(1, 13)) -> PhiTable:
    """Distribution of ``Φ_S = Σ |Q|^{α/n}<σ>_Q 1_Q`` over members ``Q ⊆ S``
    whose parent in the fractional ``σ``-stopping subfamily seeded at ``S``
    is ``S``."""
    _same_tree(sigma, w)
    tree = family.tree
    if S not in family:
        raise MismatchError(f"{S} is not a member of the family")
    alpha = config.alpha
    sid = tree.cube_id(S)
    inside = _inside_mask(tree, family.members, sid)
    sub_ids = family.members[inside]
    fac = cube_factors(tree, alpha)
    val = sigma.cube_masses() * fac
    # stopping subfamily of the members inside S, seeded at S
    stop_parent = _stopping_parents(tree, family, sub_ids, sid, val)
    keep = sub_ids[stop_parent == sid]
    vals = np.zeros(tree.n_cubes)
    vals[keep] = val[keep]
    phi = kernels.chain_sum(vals[None], tree.level_offsets, tree.dimension, tree.depth)[0]
    wS = float(w.cube_masses()[sid])
    if not wS > 0:
        raise DegenerateInputError("w has zero mass on S")
    lam = np.asarray(list(lambdas), dtype=np.float64)
    wcell = w.flat * tree.cell_volume
    thr = val[sid]
    frac = np.array([float(np.sum(wcell[phi > l * thr])) / wS for l in lam])
    sel = (lam >= 2) & (lam <= 8)
    pos = sel & (frac > 0)
    if np.count_nonzero(pos) >= 2:
        slope = np.polyfit(lam[pos], np.log(frac[pos]), 1)[0]
        decay = float(np.exp(slope))
    else:
        decay = 0.0
    env = float(np.max((frac[pos] / 2.0) ** (1.0 / (lam[pos] - 1.0)))) if pos.any() else 0.0
    return PhiTable(lam, frac, decay, env)


def _inside_mask(tree: DyadicTree, ids: np.ndarray, sid: int) -> np.ndarray:
    S = tree.cube_from_id(sid)
    out = np.zeros(len(ids), dtype=bool)
    for i, c in enumerate(ids):
        Q = tree.cube_from_id(int(c))
        if Q.level < S.level:
            continue
        shift = Q.level - S.level
        out[i] = all((qc >> shift) == sc for qc, sc in zip(Q.coords, S.coords))
    return out


def _stopping_parents(tree, family, sub_ids, sid, val):
    """Smallest cube of the stopping subfamily containing each id in
    ``sub_ids`` (possibly the cube itself). The subfamily starts at ``S`` and
    admits a member when its fractional average exceeds four times that of
    the stopping cube governing its family parent."""
    index = {int(c): i for i, c in enumerate(family.members)}
    levels = family.levels()
    order = sorted(range(len(sub_ids)), key=lambda j: levels[index[int(sub_ids[j])]])
    governing = {}
    out = np.empty(len(sub_ids), dtype=np.int64)
    for j in order:
        c = int(sub_ids[j])
        if c == sid:
            governing[c] = sid
        else:
            anchor = governing.get(int(family.members[family.parent[index[c]]]), sid)
            governing[c] = c if val[c] > 4.0 * val[anchor] else anchor
        out[j] = governing[c]
    return out
