"""Acceptance criteria, one test each, at the stated tolerances.

Every test records a PASS/FAIL line (printed in the terminal summary) before
asserting, so a failing criterion still leaves its measurement behind.
"""
import json
import math
import time

import numpy as np
import pytest

from fracbump import bumps as B
from fracbump import embedding as E
from fracbump import kernels
from fracbump import operators as O
from fracbump import stopping as S
from fracbump.cli import main as cli_main
from fracbump.dyadic import build_tree
from fracbump.harness import DEFAULT_THRESHOLDS, STABILITY_TOL, refinement_study, run_suite, standard_suite
from fracbump.weights import GridFunction, generate_weight

RESULTS = []
LN2 = math.log(2.0)


def record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def ones(tree):
    return GridFunction(tree, np.ones(tree.n_cells))


@pytest.fixture(scope="session")
def suites():
    return {L: run_suite(standard_suite(depth=L)) for L in (6, 8)}


# ---------------------------------------------------------------------------

def _oracle_levels(cells):
    levels = [cells]
    while levels[-1].shape[1] > 1:
        x = levels[-1]
        levels.append(x[:, 0::2] + x[:, 1::2])
    return levels[::-1]


def _oracle_operators(F, alpha, L):
    """Loop over every cube: explicit max and root-to-leaf sum per cell."""
    h = 2.0 ** -L
    levels = _oracle_levels(F * h)
    mx = np.zeros_like(F)
    sm = np.zeros_like(F)
    for k in range(L + 1):
        vol = h * 2.0 ** (L - k)
        fac = vol ** alpha / vol
        m = 1 << (L - k)
        for j in range(1 << k):
            v = levels[k][:, j:j + 1] * fac
            mx[:, j * m:(j + 1) * m] = np.maximum(mx[:, j * m:(j + 1) * m], v)
            sm[:, j * m:(j + 1) * m] = sm[:, j * m:(j + 1) * m] + v
    return mx, sm


def test_c01_operator_oracle_equivalence():
    L = 10
    tree = build_tree(1, L)
    rng = np.random.default_rng(1)
    F = rng.random((100, tree.n_cells))
    fs = [GridFunction(tree, row) for row in F]
    O.dyadic_frac_maximal(fs[0], 0.5), O.dyadic_frac_integral(fs[0], 0.5)  # warm-up
    mismatches = 0
    elapsed = 0.0
    for alpha in (0.25, 0.5, 0.75):
        t0 = time.perf_counter()
        got_max = np.stack([O.dyadic_frac_maximal(f, alpha).flat for f in fs])
        got_sum = np.stack([O.dyadic_frac_integral(f, alpha).flat for f in fs])
        elapsed += time.perf_counter() - t0
        want_max, want_sum = _oracle_operators(F, alpha, L)
        mismatches += int(np.count_nonzero(got_max != want_max) + np.count_nonzero(got_sum != want_sum))
    record(1, "operator oracle equivalence", mismatches == 0 and elapsed < 10.0,
           f"{mismatches} differing cells over 300 (f, alpha) pairs, tree passes {elapsed:.2f}s (< 10s)")


def _stopping_instances():
    rng = np.random.default_rng(2)
    out = []
    for i in range(100):
        L = int(rng.integers(1, 9))
        f = generate_weight("dyadic_cascade", {"seed": int(rng.integers(1 << 31)), "spread": 0.95},
                            build_tree(1, L))
        out.append((f, S.build_stopping_fractional(f, 0.5), 0.5))
        out.append((f, S.build_stopping_plain(f), 0.0))
    return out


def test_c02_sparseness():
    bad_sparse = bad_cover = 0
    worst_child = worst_es = 0.0
    inst = _stopping_instances()
    for f, fam, _ in inst:
        cert = S.sparseness_check(fam)
        bad_sparse += not cert.ok
        worst_child = max(worst_child, cert.worst_child_ratio)
        worst_es = max(worst_es, cert.worst_ES_ratio)
        counts = np.bincount(fam.owner[fam.owner >= 0], minlength=len(fam))
        bad_cover += bool(np.any(fam.owner < 0) or counts.sum() != f.tree.n_cells)
    record(2, "sparseness", bad_sparse == 0 and bad_cover == 0 and len(inst) == 200,
           f"{len(inst)} families, {bad_sparse} sparse violations, {bad_cover} cover failures; "
           f"max child ratio {worst_child:.4f}, max |S|/|E_S| {worst_es:.4f}")


def test_c03_linearization_sandwich():
    bad = 0
    worst = 1.0
    for f, fam, alpha in _stopping_instances():
        lin = S.linearize_maximal(f, fam, alpha).flat
        M = O.dyadic_frac_maximal(f, alpha).flat
        bad += bool(np.any(lin > M) or np.any(M > 4 * lin))
        worst = max(worst, float(np.max(M / lin)))
    f1 = ones(build_tree(1, 8))
    fam1 = S.build_stopping_fractional(f1, 0.5)
    lin1 = S.linearize_maximal(f1, fam1, 0.5).flat
    M1 = O.dyadic_frac_maximal(f1, 0.5).flat
    ulps = int(np.max(np.abs(lin1 - M1) / np.spacing(M1)))
    record(3, "linearization sandwich", bad == 0 and ulps <= 1,
           f"{bad} violations over 200 instances, max M/lin {worst:.4f} (<= 4); f=1 off by {ulps} ulp")


def test_c04_chain_constant():
    L = 12
    tree = build_tree(1, L)
    C = O.geometric_chain_constant(0.5, 1)
    vals = np.array([tree.level_volume(int(k)) ** 0.5 for k in tree.id_levels()])
    roots = np.array([int(tree.level_offsets[k]) for k in range(L + 1)])
    sums = kernels.restricted_chain_sum(vals, tree.level_offsets, 1, L, roots, np.arange(L + 1))
    worst = 0.0
    for k, row in enumerate(sums):
        m = 1 << (L - k)
        worst = max(worst, float(np.max(row[:m])) / (C * tree.level_volume(k) ** 0.5))
    record(4, "chain constant", worst <= 1 + 1e-12,
           f"max chain sum / (C |S|^(1/2)) = {worst:.12f} over all levels, C = {C:.7f}")


def test_c05_epsilon_normalization():
    errs = []
    for d in (0.25, 0.5, 1.0, 2.0):
        errs.append(abs(B.epsilon_normalization_check(B.EpsilonSpec("onebump", 2.0, d)) - 1.0))
        errs.append(abs(B.epsilon_normalization_check(B.EpsilonSpec("separated", 2.0, d)) - 2.0 / d))
    q = B.epsilon_quadrature(B.EpsilonSpec("onebump", 2.0, 1.0), math.exp(40.0))
    qerr = abs(q - (1 - 1 / 41))
    record(5, "epsilon normalization", max(errs) <= 1e-12 and qerr <= 1e-9,
           f"closed-form error {max(errs):.1e}, quadrature {q:.12f} error {qerr:.1e}")


def test_c06_rho_benchmark():
    exact = 1 + LN2
    x = (np.arange(1 << 22) + 0.5) / (1 << 22)
    oracle = float(np.minimum(1.0, 1.0 / (2 * x)).mean() * 2)
    tree = build_tree(1, 12)
    xc = (np.arange(tree.n_cells) + 0.5) / tree.n_cells
    r12 = B.rho(GridFunction(tree, (xc < 0.5).astype(float)))
    half = {"kind": "indicator", "params": {"lo": 0.0, "hi": 0.5}}
    const = {"kind": "constant", "params": {}}
    cfg = standard_suite(depth=4)
    cfg.weights = [{"name": "half", "sigma": half, "w": const}]
    cfg.alphas, cfg.exponents, cfg.deltas, cfg.operators, cfg.ascent_steps = [0.5], [[2.0, 2.0]], [1.0], ["maximal"], 0
    entry = next(e for e in refinement_study(cfg, depths=[4, 6, 8, 10]) if e.quantity == "rho_sigma")
    errs = [abs(v - exact) for v in entry.values] + [abs(r12 - exact)]
    rates = [a / b for a, b in zip(errs[:-1], errs[1:])]  # two levels per step: ~4 for 2^-L
    ok = abs(r12 - exact) <= 1e-3 and abs(oracle - exact) < 1e-6 and all(3.0 < r < 5.0 for r in rates)
    record(6, "rho benchmark", ok,
           f"rho(L=12) = {r12:.7f} vs {exact:.7f} (error {abs(r12 - exact):.1e}); errors at L=4..12 "
           f"{', '.join(f'{e:.1e}' for e in errs)}; ratios per 2 levels {', '.join(f'{r:.2f}' for r in rates)}")


def test_c07_separated_benchmark():
    vals = [2.0 ** -k * (1 + k / 2 * LN2) ** 4 for k in range(100)]
    want, kstar = max(vals), int(np.argmax(vals))
    eps = B.EpsilonSpec("separated", 2.0, 1.0)
    cfg = O.ExponentConfig(1, 0.5, 2.0, 2.0)
    details, ok = [], kstar == 3
    for L in (6, 8, 10):
        tree = build_tree(1, L)
        rep = B.sep_bump_constant(ones(tree), ones(tree), cfg, eps)
        ok &= abs(rep.constant - want) <= 1e-6 and rep.argmax.level == 3
        details.append(f"L={L}: {rep.constant:.10f} at level {rep.argmax.level}")
    record(7, "separated bump benchmark", ok, f"oracle {want:.10f} at level {kstar}; " + "; ".join(details))


def test_c08_weak_type(suites):
    C = DEFAULT_THRESHOLDS["C_weak"]
    worst = max(r.r11 for rows in suites.values() for r in rows if r.r11 is not None)
    count = sum(r.r11 is not None for rows in suites.values() for r in rows)
    tree = build_tree(1, 6)
    f = (np.arange(tree.n_cells) < 32).astype(float)
    inst = E.weak_norm(O.DyadicMaximalOp(tree, 0.5), ones(tree), ones(tree), O.ExponentConfig(1, 0.5, 2, 2),
                       candidates=f[None], include_indicators=False)
    ok = worst <= C and abs(inst - 2 ** -0.5) <= 1e-9
    record(8, "weak-type ratio", ok,
           f"max r11 = {worst:.6f} over {count} rows (<= {C}); hand instance {inst:.10f}")


def test_c09_strong_theorems(suites):
    th = DEFAULT_THRESHOLDS
    caps = {"r12": th["C_thm12"], "r13": th["C_thm13"], "r14": th["C_thm14"]}
    worst = {k: 0.0 for k in caps}
    by_key = {}
    for L, rows in suites.items():
        for r in rows:
            for k in caps:
                v = getattr(r, k)
                if v is not None:
                    worst[k] = max(worst[k], v)
                    by_key.setdefault((r.key(), k), {})[L] = v
    drifts = []
    for (key, k), vals in by_key.items():
        a, b = vals.get(6), vals.get(8)
        if a is None or b is None:
            continue
        rel = abs(b - a) / max(abs(a), abs(b)) if max(abs(a), abs(b)) > 0 else 0.0
        drifts.append((rel, k, key))
    drifts.sort(reverse=True)
    unstable = [d for d in drifts if d[0] > STABILITY_TOL]
    bounded = all(worst[k] <= caps[k] for k in caps)
    pairs = sorted({(d[2][0], d[2][1], d[1]) for d in unstable})
    detail = (f"max r12 {worst['r12']:.3f}, r13 {worst['r13']:.3f}, r14 {worst['r14']:.3f} (<= 32); "
              f"{len(unstable)} of {len(drifts)} ratios drift > 10% between L=6 and L=8"
              + (f", max {drifts[0][0]:.1%} ({', '.join('/'.join(p) for p in pairs)})" if unstable else ""))
    record(9, "strong-type ratios bounded and stable", bounded and not unstable, detail)


def test_c10_testing_bracket(suites):
    violations = checked = 0
    for rows in suites.values():
        for r in rows:
            if r.beta1 is not None:
                checked += 1
                violations += not (r.lower >= r.beta1 ** (1.0 / r.q))
    tree = build_tree(1, 6)
    chain = S.SparseFamily.from_cubes(tree, [tree.root, tree.cube(1, (0,))])
    cfg = O.ExponentConfig(1, 0.5, 2, 2)
    nb = E.strong_norm_lower(O.SparseOp(chain, 0.5), ones(tree), ones(tree), cfg, family=chain)
    b1 = nb.testing.beta1
    want = (1 + 2 ** -0.5) ** 2 / 2 + 0.5
    ok = violations == 0 and checked > 0 and abs(b1 - want) <= 1e-9 and nb.lower >= 1.39896
    record(10, "testing bracket", ok,
           f"lower >= beta1^(1/q) on {checked - violations}/{checked} sparse rows; chain beta1 {b1:.10f}, "
           f"lower {nb.lower:.6f}")


def test_c11_carleson_embedding():
    rng = np.random.default_rng(11)
    C = DEFAULT_THRESHOLDS["C_emb"]
    worst = worst_level = 0.0
    levels = 0
    for _ in range(200):
        seq, f = E.random_carleson_instance(build_tree(1, int(rng.integers(1, 9))), rng)
        r, lv = E.embedding_ratio(seq, f, with_levels=True)
        worst = max(worst, r)
        worst_level = max(worst_level, lv.worst_ratio)
        levels += lv.levels
    ok = worst <= C and worst_level <= 1 + E.LEVEL_SET_RTOL
    record(11, "Carleson embedding", ok,
           f"max ratio {worst:.4f} (<= {C}) over 200 instances; level-set max lhs/rhs {worst_level:.15f} "
           f"at {levels} attained levels")


def test_c12_phi_decay():
    rng = np.random.default_rng(12)
    cfg = O.ExponentConfig(1, 0.5, 2, 2)
    bad = 0
    slack = np.inf
    for _ in range(50):
        tree = build_tree(1, int(rng.integers(4, 10)))
        fam = S.random_sparse_family(tree, rng)
        tab = E.phi_distribution_check(fam, ones(tree), ones(tree), cfg, tree.root, lambdas=range(1, 9))
        bound = 2.0 ** (1 - tab.lambdas)
        bad += int(np.any(tab.fractions > bound))
        slack = min(slack, float(np.min(bound - tab.fractions)))
    record(12, "Phi decay", bad == 0, f"{bad} of 50 families exceed 2^(1-lambda); min slack {slack:.4f}")


def test_c13_sweep_determinism(tmp_path):
    outs = []
    for i in range(2):
        path = tmp_path / f"sweep{i}.jsonl"
        code = cli_main(["sweep", "--depth", "4", "--seed", "3", "--out", str(path)])
        outs.append((code, path.read_bytes()))
    same = outs[0][1] == outs[1][1]
    rows = outs[0][1].decode().splitlines()
    ok = same and outs[0][0] == outs[1][0] == 0 and len(rows) > 0 and json.loads(rows[0])["schema_version"] == 1
    record(13, "sweep determinism", ok, f"{len(rows)} rows, {len(outs[0][1])} bytes, identical={same}")
