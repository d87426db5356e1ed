import math

import numpy as np
import pytest

from conftest import indicator, ones, unit
from fracbump import embedding as E
from fracbump import operators as O
from fracbump import stopping as S
from fracbump.errors import DegenerateInputError, MismatchError, ParameterError
from fracbump.weights import GridFunction, generate_weight

CFG = O.ExponentConfig(1, 0.5, 2.0, 2.0)
R2 = 2 ** -0.5
CHAIN_BETA1 = (1 + R2) ** 2 / 2 + 0.5


# --- Carleson sequences -----------------------------------------------------

def test_carleson_root_only():
    t = unit(4)
    seq = E.CarlesonSequence.from_cubes(ones(t), {t.root: 1.0}, 2, 2)
    assert E.carleson_constant(seq) == 1.0
    assert E.embedding_ratio(seq, ones(t)) == 1.0


def test_carleson_two_cubes():
    t = unit(4)
    seq = E.CarlesonSequence.from_cubes(ones(t), {t.root: 0.5, t.cube(1, 0): 0.25}, 2, 2)
    assert E.carleson_constant(seq) == 0.75
    assert E.embedding_ratio(seq, ones(t)) == 0.75


def test_carleson_sparse_exceptional_sets_bounded(rng):
    t = unit(6)
    fam = S.random_sparse_family(t, rng)
    mu = ones(t)
    a = np.zeros(t.n_cubes)
    for i, c in enumerate(fam.members):
        a[c] = len(fam.exceptional_cells(i)) * t.cell_volume
    assert E.carleson_constant(E.CarlesonSequence(a, mu, 2, 2)) <= 1.0 + 1e-15


def test_carleson_zero_mass_flag():
    t = unit(2)
    mu = indicator(t, 0, 0.5)
    seq = E.CarlesonSequence.from_cubes(mu, {t.cube(1, 1): 1.0}, 2, 2)
    assert E.carleson_constant(seq) == math.inf
    with pytest.raises(DegenerateInputError):
        E.normalize_carleson(seq)


def test_carleson_validation():
    t = unit(2)
    with pytest.raises(MismatchError):
        E.CarlesonSequence(np.zeros(3), ones(t), 2, 2)
    with pytest.raises(ParameterError):
        E.CarlesonSequence(-np.ones(t.n_cubes), ones(t), 2, 2)
    with pytest.raises(ParameterError):
        E.embedding_ratio(E.CarlesonSequence(np.ones(t.n_cubes), ones(t), 1, 2), ones(t))


def test_subtree_sums_against_loop(rng):
    t = unit(4, 2)
    a = rng.random(t.n_cubes)
    sums = E._subtree_sums(t, a)
    for cube in list(t.iter_cubes())[::9]:
        want = sum(a[t.cube_id(q)] for q in t.iter_cubes() if t.contains(cube, q))
        assert sums[t.cube_id(cube)] == pytest.approx(want, rel=1e-13)


def test_random_instances_embed(rng):
    for _ in range(20):
        seq, f = E.random_carleson_instance(unit(int(rng.integers(2, 8))), rng)
        assert E.carleson_constant(seq) == pytest.approx(1.0, rel=1e-12)
        r, lv = E.embedding_ratio(seq, f, with_levels=True)
        assert r <= 4.0  # (p')^q for p = q = 2
        assert lv.ok and lv.levels > 0


def test_level_set_check_flags_violation():
    t = unit(3)
    seq = E.CarlesonSequence.from_cubes(ones(t), {t.root: 1.0}, 2, 2)
    avg = np.full(t.n_cubes, 1.0)
    mass = np.zeros(t.n_cubes)
    mass[0] = 1.0
    # with mu({Mf > λ}) forced to zero the inequality cannot hold
    bogus = E.CarlesonSequence(seq.a, GridFunction(t, np.zeros(t.n_cells)), 2, 2)
    out = E.level_set_check(bogus, avg, mass)
    assert not out.ok


# --- testing constants ------------------------------------------------------

def test_testing_constants_root_family():
    t = unit(5)
    tc = E.testing_constants(S.SparseFamily.from_cubes(t, [t.root]), ones(t), ones(t), CFG)
    assert tc.beta1 == pytest.approx(1.0, rel=1e-14) and tc.beta2 == pytest.approx(1.0, rel=1e-14)


def test_testing_constants_chain():
    t = unit(6)
    fam = S.SparseFamily.from_cubes(t, [t.root, t.cube(1, 0)])
    tc = E.testing_constants(fam, ones(t), ones(t), CFG)
    assert abs(tc.beta1 - CHAIN_BETA1) <= 1e-9
    assert tc.argmax1 == t.root
    assert tc.bracket(CFG) == pytest.approx(math.sqrt(tc.beta1) + math.sqrt(tc.beta2))


def test_testing_homogeneity(rng):
    t = unit(5)
    fam = S.random_sparse_family(t, rng)
    s = GridFunction(t, rng.random(t.n_cells) + 0.2)
    w = GridFunction(t, rng.random(t.n_cells) + 0.2)
    cfg = O.ExponentConfig(1, 0.5, 1.5, 3.0)
    a = E.testing_constants(fam, s, w, cfg)
    b = E.testing_constants(fam, s.scaled(2.0), w, cfg)
    assert b.beta1 == pytest.approx(a.beta1 * 2.0 ** (cfg.q / cfg.p_conj), rel=1e-12)


# --- norm brackets ----------------------------------------------------------

def test_rank_one_lower_is_one():
    t = unit(5)
    op = O.SparseOp(S.SparseFamily.from_cubes(t, [t.root]), 0.5)
    nb = E.strong_norm_lower(op, ones(t), ones(t), CFG)
    assert nb.lower == pytest.approx(1.0, rel=1e-12)


def test_chain_lower_bound_and_testing():
    t = unit(6)
    fam = S.SparseFamily.from_cubes(t, [t.root, t.cube(1, 0)])
    nb = E.strong_norm_lower(O.SparseOp(fam, 0.5), ones(t), ones(t), CFG, family=fam)
    assert nb.lower >= math.sqrt(CHAIN_BETA1) >= 1.39896
    assert nb.lower >= nb.testing.beta1 ** 0.5
    assert nb.to_dict(CFG)["testing_upper"] == pytest.approx(nb.testing.bracket(CFG))


def test_lower_is_monotone_in_ascent():
    t = unit(5)
    op = O.make_operator("integral_dyadic", t, 0.5)
    s = generate_weight("power", {"a": -0.3}, t)
    nb = E.strong_norm_lower(op, s, ones(t), CFG, ascent_steps=10)
    assert all(b >= a for a, b in zip(nb.history, nb.history[1:]))
    no_ascent = E.strong_norm_lower(op, s, ones(t), CFG, ascent_steps=0)
    assert nb.lower >= no_ascent.lower


def test_lower_witness_reproduces_value():
    t = unit(5)
    op = O.make_operator("maximal", t, 0.5)
    s = generate_weight("dyadic_cascade", {"seed": 3}, t)
    w = generate_weight("dyadic_cascade", {"seed": 4}, t)
    nb = E.strong_norm_lower(op, s, w, CFG)
    f = nb.witness.flat
    tf = op(GridFunction(t, f * s.flat)).flat
    num = np.sum(tf ** 2 * w.flat) * t.cell_volume
    den = np.sum(f ** 2 * s.flat) * t.cell_volume
    assert math.sqrt(num / den) == pytest.approx(nb.lower, rel=1e-10)


def test_weak_norm_half_indicator():
    t = unit(6)
    f = indicator(t, 0, 0.5).flat
    r = E.weak_norm(O.DyadicMaximalOp(t, 0.5), ones(t), ones(t), CFG, candidates=f[None],
                    include_indicators=False)
    assert abs(r - R2) <= 1e-9


def test_weak_norm_of_one():
    t = unit(6)
    r = E.weak_norm(O.DyadicMaximalOp(t, 0.5), ones(t), ones(t), CFG, candidates=np.ones((1, t.n_cells)),
                    include_indicators=False)
    assert r == pytest.approx(1.0, rel=1e-14)


def test_weak_norm_is_below_strong():
    t = unit(5)
    op = O.make_operator("maximal", t, 0.5)
    s = generate_weight("dyadic_cascade", {"seed": 8}, t)
    assert E.weak_norm(op, s, ones(t), CFG) <= E.strong_norm_lower(op, s, ones(t), CFG).lower * (1 + 1e-12)


def test_norm_errors():
    t = unit(3)
    op = O.make_operator("maximal", t, 0.5)
    with pytest.raises(MismatchError):
        E.strong_norm_lower(op, ones(unit(4)), ones(unit(4)), CFG)
    with pytest.raises(ParameterError):
        E.weak_norm(op, ones(t), ones(t), CFG, include_indicators=False)
    with pytest.raises(DegenerateInputError):
        z = GridFunction(t, np.zeros(t.n_cells))
        E.strong_norm_lower(op, z, ones(t), CFG)


# --- Φ diagnostic -----------------------------------------------------------

def test_phi_root_family_only_small_lambda():
    t = unit(5)
    fam = S.SparseFamily.from_cubes(t, [t.root])
    tab = E.phi_distribution_check(fam, ones(t), ones(t), CFG, t.root)
    assert np.all(tab.fractions[tab.lambdas >= 1] == 0)


def test_phi_decay_random_families(rng):
    t = unit(8)
    for _ in range(10):
        fam = S.random_sparse_family(t, rng)
        tab = E.phi_distribution_check(fam, ones(t), ones(t), CFG, t.root, lambdas=range(1, 9))
        assert np.all(tab.fractions <= 2.0 ** (1 - tab.lambdas))


def test_phi_requires_member():
    t = unit(3)
    with pytest.raises(MismatchError):
        E.phi_distribution_check(S.SparseFamily.from_cubes(t, [t.root]), ones(t), ones(t), CFG, t.cube(1, 0))


def test_phi_stopping_subfamily_drops_cubes_below_new_stopping_cube():
    # chain Q0 ⊃ [0,1/2) ⊃ ... with σ concentrated at 0: the deep chain members
    # leave S's stopping generation once the fractional average jumps by 4
    t = unit(8)
    fam = S.SparseFamily.from_cubes(t, [t.cube(k, 0) for k in range(9)])
    sigma = GridFunction(t, np.where(np.arange(t.n_cells) == 0, float(t.n_cells), 1e-9))
    tab = E.phi_distribution_check(fam, sigma, ones(t), CFG, t.root)
    parents = E._stopping_parents(t, fam, fam.members, 0, sigma.cube_masses() * O.cube_factors(t, 0.5))
    assert parents[0] == 0 and np.any(parents != 0)
    assert tab.fractions[0] <= 1.0
