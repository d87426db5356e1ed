import math

import numpy as np
import pytest

from conftest import centers, indicator, ones, unit
from fracbump import bumps as B
from fracbump.errors import MismatchError, ParameterError, ZeroMassError
from fracbump.operators import ExponentConfig
from fracbump.weights import GridFunction, generate_weight

LN2 = math.log(2.0)
CFG = ExponentConfig(1, 0.5, 2.0, 2.0)


def rho_half_oracle(N=1 << 20):
    # ∫_0^1 min(1, 1/(2x)) dx / (1/2) by midpoint rule on a fine grid
    x = (np.arange(N) + 0.5) / N
    return float(np.minimum(1.0, 1.0 / (2 * x)).mean() / 0.5)


# --- epsilon functions -------------------------------------------------------

def test_epsilon_onebump_value():
    assert B.epsilon_eval(B.EpsilonSpec("onebump", 2.0, 1.0), math.e) == pytest.approx(2.0, rel=1e-15)


def test_epsilon_onebump_flat_below_one():
    s = B.EpsilonSpec("onebump", 3.0, 0.5)
    assert B.epsilon_eval(s, 0.2) == B.epsilon_eval(s, 1.0) == pytest.approx(2.0 ** (1 / 3))


def test_epsilon_separated_at_one():
    assert B.epsilon_eval(B.EpsilonSpec("separated", 2.0, 1.0), 1.0) == 1.0


@pytest.mark.parametrize("delta", [0.25, 1.0, 3.0])
def test_epsilon_normalizations(delta):
    assert B.epsilon_normalization_check(B.EpsilonSpec("onebump", 2.0, delta)) == 1.0
    assert B.epsilon_normalization_check(B.EpsilonSpec("separated", 2.0, delta)) == pytest.approx(2 / delta,
                                                                                                   rel=1e-15)


def test_epsilon_quadrature_truncated():
    s = B.EpsilonSpec("onebump", 2.0, 1.0)
    assert abs(B.epsilon_quadrature(s, math.exp(40)) - (1 - 1 / 41)) <= 1e-9


def test_epsilon_quadrature_separated_matches_closed_form():
    s = B.EpsilonSpec("separated", 2.0, 1.0)
    T = math.exp(20)
    assert B.epsilon_quadrature(s, T) == pytest.approx(B.epsilon_normalization_check(s, T), rel=1e-9)


@pytest.mark.parametrize("args", [("onebump", 2.0, 0.0), ("onebump", 2.0, -1.0), ("weird", 2.0, 1.0),
                                  ("separated", math.inf, 1.0), ("onebump", 0.5, 1.0)])
def test_epsilon_spec_errors(args):
    with pytest.raises(ParameterError):
        B.EpsilonSpec(*args)


# --- rho / varrho -----------------------------------------------------------

def test_rho_of_lebesgue_is_one():
    assert B.rho(ones(unit(6))) == pytest.approx(1.0, rel=1e-14)


def test_rho_half_indicator():
    r = B.rho(indicator(unit(12), 0, 0.5))
    assert abs(r - (1 + LN2)) < 1e-3
    assert abs(rho_half_oracle() - (1 + LN2)) < 1e-6


def test_rho_refinement_error_halves():
    errs = [abs(B.rho(indicator(unit(L), 0, 0.5)) - (1 + LN2)) for L in (6, 8, 10)]
    assert errs[0] > errs[1] > errs[2]
    assert 3 < errs[0] / errs[1] < 5 and 3 < errs[1] / errs[2] < 5  # ~2^-L per level


def test_varrho_alpha_zero_matches_rho():
    s = indicator(unit(10), 0, 0.5)
    assert B.varrho(s, None, 0.0, 2.0, 2.0) == pytest.approx(B.rho(s), rel=1e-14)


def test_rho_scale_invariant(rng):
    t = unit(7)
    s = GridFunction(t, rng.random(t.n_cells))
    assert B.rho(s) == pytest.approx(B.rho(s.scaled(17.0)), rel=1e-13)
    assert B.rho(s) >= 1.0


def test_rho_zero_mass():
    with pytest.raises(ZeroMassError):
        B.rho(indicator(unit(4), 0, 0.5), unit(4).cube(1, 1))


def test_sweep_matches_single_cube_evaluation():
    t = unit(6)
    s = generate_weight("dyadic_cascade", {"seed": 4}, t)
    sweep = B.CubeSweep(s)
    r = sweep.rho()
    for i in range(0, len(r), 7):
        cube = sweep.cube(i)
        if cube.grid_id == 1:
            local = t.cube(cube.level, cube.coords)
            assert r[i] == pytest.approx(B.rho(s, local), rel=1e-13)


def test_sweep_covers_cubes_inside_unit_cube():
    sweep = B.CubeSweep(ones(unit(3)))
    vols = sweep.volumes
    # every swept cube lies in [0,1): grid 1 contributes the 15 dyadic cubes
    assert np.count_nonzero(sweep.grid_ids == 1) == 15
    assert np.all(vols <= 1.0)
    assert np.allclose(sweep.masses(), vols)


# --- bump constants --------------------------------------------------------

def test_weak_constant_lebesgue():
    t = unit(8)
    rep = B.weak_constant(ones(t), ones(t), CFG)
    assert rep.constant == pytest.approx(1.0, rel=1e-14)
    assert rep.argmax.level == 0


def test_weak_constant_refines():
    a = B.weak_constant(*(2 * [generate_weight("power", {"a": 1.0}, unit(8))]), CFG).constant
    b = B.weak_constant(*(2 * [generate_weight("power", {"a": 1.0}, unit(10))]), CFG).constant
    assert abs(a - b) <= 0.02 * b


def test_onebump_constants_lebesgue():
    t = unit(7)
    e2 = B.EpsilonSpec("onebump", 2.0, 1.0)
    assert B.onebump_max_constant(ones(t), ones(t), CFG, e2).constant == pytest.approx(1.0, rel=1e-13)
    assert B.onebump_int_constant(ones(t), ones(t), CFG, e2, e2).constant == pytest.approx(1.0, rel=1e-13)


def test_onebump_root_entry_half_indicator():
    t = unit(8)
    rep = B.onebump_max_constant(indicator(t, 0, 0.5), ones(t), CFG, B.EpsilonSpec("onebump", 2.0, 1.0),
                                 table=True)
    tab = rep.table
    i = int(np.flatnonzero((tab["grid"] == 1) & (tab["level"] == 0))[0])
    r = B.rho(indicator(t, 0, 0.5))
    assert tab["beta"][i] == pytest.approx(2 ** -0.5 * math.sqrt(r) * (1 + math.log(r)), rel=1e-13)
    assert tab["beta"][i] == pytest.approx(1.404, abs=2e-3)
    assert rep.constant >= tab["beta"][i]


def _separated_oracle(kmax=200):
    vals = [2.0 ** -k * (1 + k / 2 * LN2) ** 4 for k in range(kmax)]
    k = int(np.argmax(vals))
    return vals[k], k


@pytest.mark.parametrize("L", [3, 6, 9])
def test_separated_bump_lebesgue(L):
    t = unit(L)
    want, k = _separated_oracle()
    assert k == 3 and want == pytest.approx(2.1636792824603504, rel=1e-15)
    eps = B.EpsilonSpec("separated", 2.0, 1.0)
    rep = B.sep_bump_constant(ones(t), ones(t), CFG, eps)
    dual = B.sep_bump_constant(ones(t), ones(t), CFG, eps, dual=True)
    assert abs(rep.constant - want) <= 1e-6 and rep.argmax.level == 3
    assert dual.constant == pytest.approx(rep.constant, rel=1e-13)
    assert B.separated_denominator(rep, dual, CFG) == pytest.approx(2 * math.sqrt(want), rel=1e-12)


def test_separated_root_term_is_one():
    t = unit(6)
    rep = B.sep_bump_constant(ones(t), ones(t), CFG, B.EpsilonSpec("separated", 2.0, 1.0), table=True)
    tab = rep.table
    i = int(np.flatnonzero((tab["grid"] == 1) & (tab["level"] == 0))[0])
    assert tab["beta"][i] == pytest.approx(1.0, rel=1e-14)


def test_subcell_argmax_reported_below_finest_level():
    t = unit(2)
    rep = B.sep_bump_constant(ones(t), ones(t), CFG, B.EpsilonSpec("separated", 2.0, 1.0))
    assert rep.argmax.level == 3 and rep.argmax.grid_id == 1
    off = B.BumpSweep(ones(t), ones(t), subcell=False).separated(CFG, B.EpsilonSpec("separated", 2.0, 1.0))
    assert off.constant < rep.constant and off.argmax.level <= 2


def test_negative_exponent_tail_is_infinite():
    # p < q with small alpha: |Q|^{α/n-1/p+1/q} blows up on small cubes
    t = unit(4)
    cfg = ExponentConfig(1, 0.1, 1.5, 2.0)
    assert B.weak_constant(ones(t), ones(t), cfg).constant == math.inf


def test_bumps_homogeneity(rng):
    t = unit(6)
    s = GridFunction(t, rng.random(t.n_cells) + 0.1)
    w = GridFunction(t, rng.random(t.n_cells) + 0.1)
    c = 3.0
    a = B.weak_constant(s, w, CFG).constant
    assert B.weak_constant(s.scaled(c), w, CFG).constant == pytest.approx(c ** 0.5 * a, rel=1e-12)
    assert B.weak_constant(s, w.scaled(c), CFG).constant == pytest.approx(c ** 0.5 * a, rel=1e-12)


def test_slot_checks():
    t = unit(3)
    with pytest.raises(ParameterError):
        B.onebump_max_constant(ones(t), ones(t), CFG, B.EpsilonSpec("onebump", 3.0, 1.0))
    with pytest.raises(ParameterError):
        B.sep_bump_constant(ones(t), ones(t), CFG, B.EpsilonSpec("onebump", 2.0, 1.0))
    with pytest.raises(MismatchError):
        B.weak_constant(ones(unit(3, 2)), ones(unit(3, 2)), CFG)


def test_report_to_dict():
    t = unit(3)
    d = B.weak_constant(ones(t), ones(t), CFG).to_dict()
    assert d["constant"] == pytest.approx(1.0) and d["argmax"]["level"] == 0 and d["skipped"] == 0


def test_cascade_skips_nothing_and_is_finite():
    t = unit(6)
    s = generate_weight("dyadic_cascade", {"seed": 1}, t)
    w = generate_weight("dyadic_cascade", {"seed": 2}, t)
    sw = B.BumpSweep(s, w)
    for rep in (sw.weak(CFG), sw.separated(CFG, B.EpsilonSpec("separated", 2.0, 0.5))):
        assert math.isfinite(rep.constant) and rep.skipped == 0


def test_two_dimensional_lebesgue():
    t = unit(4, 2)
    cfg = ExponentConfig(2, 1.0, 2.0, 2.0)
    assert B.weak_constant(ones(t), ones(t), cfg).constant == pytest.approx(1.0, rel=1e-13)
    assert B.rho(ones(t)) == pytest.approx(1.0, rel=1e-13)


def test_centers_helper_sane():
    assert centers(unit(1)).tolist() == [0.25, 0.75]
