"""Invariant suite behind ``fracbump verify``."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import bumps, embedding, operators, stopping
from .dyadic import build_tree
from .errors import FracbumpError
from .weights import GridFunction, generate_weight


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str

    def __post_init__(self):
        object.__setattr__(self, "ok", bool(self.ok))


def _brute_dyadic(f: GridFunction, alpha: float):
    """All-cubes loop: explicit max and sum per cube, coarse to fine."""
    tree = f.tree
    mx = np.zeros(tree.n_cells)
    sm = np.zeros(tree.n_cells)
    masses = f.cube_masses()
    fac = operators.cube_factors(tree, alpha)
    for cid in range(tree.n_cubes):
        cube = tree.cube_from_id(cid)
        m = 1 << (tree.depth - cube.level)
        sl = slice(cube.coords[0] * m, (cube.coords[0] + 1) * m)
        v = masses[cid] * fac[cid]
        mx[sl] = np.maximum(mx[sl], v)
        sm[sl] = sm[sl] + v
    return mx, sm


def check_operators(depth, rng):
    tree = build_tree(1, min(depth, 10))
    worst = 0
    for _ in range(10):
        f = GridFunction(tree, rng.random(tree.n_cells))
        for a in (0.25, 0.5, 0.75):
            mx, sm = _brute_dyadic(f, a)
            worst += int(np.count_nonzero(mx != operators.dyadic_frac_maximal(f, a).flat))
            worst += int(np.count_nonzero(sm != operators.dyadic_frac_integral(f, a).flat))
    return CheckResult("operator_oracle", worst == 0, f"{worst} mismatching cells")


def _cascades(depth, rng, count):
    for _ in range(count):
        L = int(rng.integers(2, min(depth, 8) + 1))
        yield generate_weight("dyadic_cascade", {"seed": int(rng.integers(1 << 31)), "spread": 0.95},
                              build_tree(1, L))


def check_stopping(depth, rng):
    bad_sparse = bad_cover = bad_sandwich = 0
    n = 0
    for f in _cascades(depth, rng, 40):
        for fam in (stopping.build_stopping_fractional(f, 0.5), stopping.build_stopping_plain(f)):
            n += 1
            bad_sparse += not stopping.sparseness_check(fam).ok
            bad_cover += bool(np.any(fam.owner < 0))
        fam = stopping.build_stopping_fractional(f, 0.5)
        lin = stopping.linearize_maximal(f, fam, 0.5).flat
        M = operators.dyadic_frac_maximal(f, 0.5).flat
        bad_sandwich += bool(np.any(lin > M) or np.any(M > 4 * lin))
    ok = bad_sparse == bad_cover == bad_sandwich == 0
    return CheckResult("stopping", ok, f"{n} families; sparse failures {bad_sparse}, "
                                       f"cover failures {bad_cover}, sandwich failures {bad_sandwich}")


def check_chain():
    tree = build_tree(1, 12)
    one = GridFunction(tree, np.ones(tree.n_cells))
    c = operators.geometric_chain_constant(0.5, 1)
    top = float(operators.dyadic_frac_integral(one, 0.5).flat.max())
    return CheckResult("chain_constant", top <= c * (1 + 1e-12), f"max chain sum {top:.10f} <= {c:.10f}")


def check_epsilon():
    errs = []
    for d in (0.5, 1.0, 2.0):
        errs.append(abs(bumps.epsilon_normalization_check(bumps.EpsilonSpec("onebump", 2.0, d)) - 1.0))
        errs.append(abs(bumps.epsilon_normalization_check(bumps.EpsilonSpec("separated", 2.0, d)) - 2.0 / d))
    quad = bumps.epsilon_quadrature(bumps.EpsilonSpec("onebump", 2.0, 1.0), math.exp(40.0))
    qerr = abs(quad - (1.0 - 1.0 / 41.0))
    return CheckResult("epsilon_normalization", max(errs) <= 1e-12 and qerr <= 1e-9,
                       f"closed-form error {max(errs):.1e}, quadrature error {qerr:.1e}")


def check_rho():
    tree = build_tree(1, 12)
    x = (np.arange(tree.n_cells) + 0.5) / tree.n_cells
    r = bumps.rho(GridFunction(tree, (x < 0.5).astype(float)))
    err = abs(r - (1.0 + math.log(2.0)))
    return CheckResult("rho_benchmark", err <= 1e-3, f"rho = {r:.7f}, error {err:.1e}")


def check_separated(depth):
    L = max(depth, 6)
    tree = build_tree(1, L)
    one = GridFunction(tree, np.ones(tree.n_cells))
    rep = bumps.sep_bump_constant(one, one, operators.ExponentConfig(1, 0.5, 2, 2),
                                  bumps.EpsilonSpec("separated", 2.0, 1.0))
    ref = max(2.0 ** -k * (1 + k / 2 * math.log(2.0)) ** 4 for k in range(64))
    ok = abs(rep.constant - ref) <= 1e-6 and rep.argmax.level == 3
    return CheckResult("separated_benchmark", ok, f"{rep.constant:.7f} vs {ref:.7f} at level {rep.argmax.level}")


def check_weak_example():
    tree = build_tree(1, 6)
    one = GridFunction(tree, np.ones(tree.n_cells))
    f = (np.arange(tree.n_cells) < tree.n_cells // 2).astype(float)
    r = embedding.weak_norm(operators.DyadicMaximalOp(tree, 0.5), one, one, operators.ExponentConfig(1, 0.5, 2, 2),
                            candidates=f[None], include_indicators=False)
    return CheckResult("weak_example", abs(r - 2 ** -0.5) <= 1e-9, f"ratio {r:.10f}")


def check_testing_example():
    tree = build_tree(1, 6)
    one = GridFunction(tree, np.ones(tree.n_cells))
    chain = stopping.SparseFamily.from_cubes(tree, [tree.root, tree.cube(1, (0,))])
    cfg = operators.ExponentConfig(1, 0.5, 2, 2)
    nb = embedding.strong_norm_lower(operators.SparseOp(chain, 0.5), one, one, cfg, family=chain)
    b1 = nb.testing.beta1
    ok = abs(b1 - ((1 + 2 ** -0.5) ** 2 / 2 + 0.5)) <= 1e-9 and nb.lower >= 1.39896
    return CheckResult("testing_example", ok, f"beta1 {b1:.10f}, lower {nb.lower:.6f}")


def check_carleson(depth, rng, threshold):
    worst = worst_level = 0.0
    for _ in range(40):
        seq, f = embedding.random_carleson_instance(build_tree(1, int(rng.integers(2, min(depth, 8) + 1))), rng)
        r, lv = embedding.embedding_ratio(seq, f, with_levels=True)
        worst = max(worst, r)
        worst_level = max(worst_level, lv.worst_ratio)
    ok = worst <= threshold and worst_level <= 1 + embedding.LEVEL_SET_RTOL
    return CheckResult("carleson_embedding", ok, f"max ratio {worst:.4f}, max level-set ratio {worst_level:.15f}")


def check_phi(depth, rng):
    bad = 0
    tree = build_tree(1, min(depth, 8))
    one = GridFunction(tree, np.ones(tree.n_cells))
    cfg = operators.ExponentConfig(1, 0.5, 2, 2)
    for _ in range(20):
        fam = stopping.random_sparse_family(tree, rng)
        S = fam.cubes()[0]
        t = embedding.phi_distribution_check(fam, one, one, cfg, S)
        lam = t.lambdas
        sel = lam <= 8
        bad += int(np.any(t.fractions[sel] > 2.0 ** (1 - lam[sel])))
    return CheckResult("phi_decay", bad == 0, f"{bad} of 20 tables above 2^(1-lambda)")


def check_suite(depth, seed, threads):
    from .harness import run_suite, standard_suite, summarize

    rows = run_suite(standard_suite(depth=depth, seed=seed), threads=threads)
    s = summarize(rows)
    ok = s["failed_flags"] == 0 and s["annotated"] == 0
    return CheckResult("standard_suite", ok, ", ".join(f"{k}={v}" for k, v in s.items()))


def check_determinism(seed):
    from .harness import ExperimentConfig, rows_to_jsonl, run_suite

    cfg = ExperimentConfig(depths=[4], weights=[{"name": "c", "cascade_seeds": [1, 2]}], seed=seed)
    a, b = rows_to_jsonl(run_suite(cfg)), rows_to_jsonl(run_suite(cfg))
    return CheckResult("determinism", a == b, f"{len(a)} bytes compared")


def run_checks(depth: int = 6, seed: int = 0, threads: int = 1) -> list[CheckResult]:
    from .harness import DEFAULT_THRESHOLDS

    rng = np.random.default_rng(seed)
    steps = [
        lambda: check_operators(depth, rng),
        lambda: check_stopping(depth, rng),
        check_chain,
        check_epsilon,
        check_rho,
        lambda: check_separated(depth),
        check_weak_example,
        check_testing_example,
        lambda: check_carleson(depth, rng, DEFAULT_THRESHOLDS["C_emb"]),
        lambda: check_phi(depth, rng),
        lambda: check_suite(depth, seed, threads),
        lambda: check_determinism(seed),
    ]
    out = []
    for step in steps:
        try:
            out.append(step())
        except FracbumpError as exc:
            name = getattr(step, "__name__", "check")
            out.append(CheckResult(name, False, f"raised {type(exc).__name__}: {exc}"))
    return out
