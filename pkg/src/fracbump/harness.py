"""Experiment runner: weight-pair sweeps, theorem ratio checks and
refinement studies."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from .bumps import BumpSweep, EpsilonSpec, separated_denominator
from .dyadic import build_tree
from .embedding import strong_norm_lower, weak_norm
from .errors import CapacityError, ConfigError, FracbumpError
from .operators import ExponentConfig, make_operator
from .stopping import random_sparse_family
from .weights import generate_weight

SCHEMA_VERSION = 1
OPERATOR_CHOICES = ("maximal", "integral_dyadic", "integral_kernel", "sparse")
MAXIMAL_KINDS = {"maximal"}
INTEGRAL_KINDS = {"integral_dyadic", "integral_kernel"}
STANDARD_CASCADE_LEVELS = 4
DEFAULT_THRESHOLDS = {"C_weak": 8.0, "C_emb": 64.0, "C_test": 16.0,
                      "C_thm12": 32.0, "C_thm13": 32.0, "C_thm14": 32.0}
CASCADE_W_OFFSET = 10000
STABILITY_TOL = 0.10


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class WeightPair:
    name: str
    sigma: dict
    w: dict

    def build(self, tree):
        return (generate_weight(self.sigma["kind"], self.sigma.get("params"), tree),
                generate_weight(self.w["kind"], self.w.get("params"), tree))


@dataclass
class ExperimentConfig:
    """Sweep description.

    JSON keys match the field names. ``weights`` entries are either explicit
    pairs ``{"name", "sigma": {"kind", "params"}, "w": {...}}`` or cascade
    families ``{"name", "cascade_seeds": [...], "spread"?}`` expanding to pairs
    with ``sigma`` seed ``s + seed`` and ``w`` seed ``s + seed + 10000``.
    """

    dimension: int = 1
    depths: list = field(default_factory=lambda: [6])
    alphas: list = field(default_factory=lambda: [0.5])
    exponents: list = field(default_factory=lambda: [[2.0, 2.0]])
    deltas: list = field(default_factory=lambda: [1.0])
    weights: list = field(default_factory=list)
    operators: list = field(default_factory=lambda: ["maximal", "integral_dyadic"])
    ascent_steps: int = 30
    thresholds: dict = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("depths", "alphas", "exponents", "deltas", "weights", "operators"):
            v = getattr(self, name)
            if not isinstance(v, list) or not v:
                raise ConfigError(f"'{name}' must be a nonempty list")
        if self.dimension not in (1, 2):
            raise ConfigError(f"'dimension' must be 1 or 2, got {self.dimension}")
        for d in self.depths:
            if not isinstance(d, int) or d < 0:
                raise ConfigError(f"'depths' entries must be nonnegative integers, got {d!r}")
        for a in self.alphas:
            for pq in self.exponents:
                if not (isinstance(pq, (list, tuple)) and len(pq) == 2):
                    raise ConfigError(f"'exponents' entries must be [p, q] pairs, got {pq!r}")
                try:
                    ExponentConfig(self.dimension, float(a), float(pq[0]), float(pq[1]))
                except FracbumpError as exc:
                    raise ConfigError(f"'alphas'/'exponents': {exc}") from None
        for dl in self.deltas:
            if not (isinstance(dl, (int, float)) and dl > 0):
                raise ConfigError(f"'deltas' entries must be positive, got {dl!r}")
        for op in self.operators:
            if op not in OPERATOR_CHOICES:
                raise ConfigError(f"'operators': unknown operator {op!r}; choose from {OPERATOR_CHOICES}")
        for k, v in self.thresholds.items():
            if k not in DEFAULT_THRESHOLDS:
                raise ConfigError(f"'thresholds': unknown key {k!r}")
            if not (isinstance(v, (int, float)) and v > 0):
                raise ConfigError(f"'thresholds': {k} must be positive, got {v!r}")
        self.thresholds = {**DEFAULT_THRESHOLDS, **self.thresholds}
        if not isinstance(self.ascent_steps, int) or self.ascent_steps < 0:
            raise ConfigError("'ascent_steps' must be a nonnegative integer")
        self.pairs()

    def pairs(self) -> list[WeightPair]:
        out = []
        for i, spec in enumerate(self.weights):
            if not isinstance(spec, dict):
                raise ConfigError(f"'weights'[{i}] must be an object")
            name = spec.get("name", f"pair{i}")
            if "cascade_seeds" in spec:
                extra = {k: spec[k] for k in ("spread", "levels") if k in spec}
                for s in spec["cascade_seeds"]:
                    s = int(s) + int(self.seed)
                    out.append(WeightPair(f"{name}[{s}]",
                                          {"kind": "dyadic_cascade", "params": {"seed": s, **extra}},
                                          {"kind": "dyadic_cascade",
                                           "params": {"seed": s + CASCADE_W_OFFSET, **extra}}))
            elif "sigma" in spec and "w" in spec:
                for role in ("sigma", "w"):
                    if not isinstance(spec[role], dict) or "kind" not in spec[role]:
                        raise ConfigError(f"'weights'[{i}].{role} needs a 'kind'")
                out.append(WeightPair(name, spec["sigma"], spec["w"]))
            else:
                raise ConfigError(f"'weights'[{i}] needs 'sigma' and 'w' or 'cascade_seeds'")
        return out

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        data = dict(data)
        data.pop("schema_version", None)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key {unknown[0]!r}")
        return cls(**data)


def standard_suite(depth: int = 6, dimension: int = 1, seed: int = 0, cascades: int = 20) -> ExperimentConfig:
    """The regression suite the shipped thresholds are calibrated on."""
    const = {"kind": "constant", "params": {}}
    weights = [{"name": "constant", "sigma": const, "w": const}]
    for a in (-0.5, 0.0, 0.5, 1.0):
        weights.append({"name": f"power{a:+g}",
                        "sigma": {"kind": "power", "params": {"a": a}},
                        "w": const})
    half = {"kind": "indicator", "params": {"lo": [0.0] * dimension, "hi": [0.5] + [1.0] * (dimension - 1)}}
    weights.append({"name": "indicator_sigma", "sigma": half, "w": const})
    mid = {"kind": "indicator", "params": {"lo": [0.25] * dimension, "hi": [0.75] * dimension}}
    weights.append({"name": "indicator_w", "sigma": const, "w": mid})
    weights.append({"name": "cascade", "cascade_seeds": list(range(1, cascades + 1)),
                    "levels": STANDARD_CASCADE_LEVELS})
    return ExperimentConfig(
        dimension=dimension, depths=[depth],
        alphas=[r * dimension for r in (0.25, 0.5, 0.75)],
        exponents=[[2.0, 2.0], [2.0, 3.0], [1.5, 2.0]],
        deltas=[0.5, 1.0], weights=weights,
        operators=["maximal", "integral_dyadic", "sparse"], seed=seed)


# ---------------------------------------------------------------------------
# rows


@dataclass
class ResultRow:
    row: int
    pair: str
    sigma: str
    w: str
    dimension: int
    depth: int
    operator: str
    alpha: float
    p: float
    q: float
    delta: float
    status: str = "ok"
    note: str = ""
    rho_sigma: float | None = None
    weak_constant: float | None = None
    onebump_max: float | None = None
    onebump_int: float | None = None
    separated: float | None = None
    separated_dual: float | None = None
    lower: float | None = None
    witness: str | None = None
    weak_norm: float | None = None
    beta1: float | None = None
    beta2: float | None = None
    testing_upper: float | None = None
    r11: float | None = None
    r12: float | None = None
    r13: float | None = None
    r14: float | None = None
    r_test: float | None = None
    pass_weak: bool | None = None
    pass_thm12: bool | None = None
    pass_thm13: bool | None = None
    pass_thm14: bool | None = None
    pass_test: bool | None = None
    seconds: float | None = None

    FLAG_FIELDS = ("pass_weak", "pass_thm12", "pass_thm13", "pass_thm14", "pass_test")

    @property
    def passed(self) -> bool:
        return self.status == "ok" and all(getattr(self, f) is not False for f in self.FLAG_FIELDS)

    def key(self) -> tuple:
        return (self.pair, self.operator, self.alpha, self.p, self.q, self.delta)

    def to_dict(self, timing: bool = False) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("seconds")
        return d


CSV_COLUMNS = [f.name for f in fields(ResultRow) if f.name != "seconds"]


def _spec_str(spec: dict) -> str:
    return json.dumps(spec, sort_keys=True, separators=(",", ":"))


def _ratio(num, den):
    if num is None or den is None:
        return None
    if den > 0:
        return num / den
    return 0.0 if num == 0 else math.inf


def _flag(r, threshold):
    return None if r is None else bool(r <= threshold)


def _unit_rows(config: ExperimentConfig, pair: WeightPair, depth: int, start: int):
    """All rows for one (pair, depth); row indices start at ``start``."""
    th = config.thresholds
    combos = [(pq, a, d, op) for pq in config.exponents for a in config.alphas
              for d in config.deltas for op in config.operators]
    base = [ResultRow(start + i, pair.name, _spec_str(pair.sigma), _spec_str(pair.w), config.dimension,
                      depth, op, float(a), float(pq[0]), float(pq[1]), float(d))
            for i, (pq, a, d, op) in enumerate(combos)]
    try:
        tree = build_tree(config.dimension, depth)
        sigma, w = pair.build(tree)
        sweep = BumpSweep(sigma, w)
    except CapacityError as exc:
        for r in base:
            r.status, r.note = "capacity", str(exc)
        return base
    except FracbumpError as exc:
        for r in base:
            r.status, r.note = "degenerate", str(exc)
        return base

    norm_cache, bump_cache = {}, {}
    family = None
    for row, (pq, a, d, op) in zip(base, combos):
        t0 = time.perf_counter()
        try:
            cfg = ExponentConfig(config.dimension, float(a), float(pq[0]), float(pq[1]))
            bkey = (cfg, float(d))
            if bkey not in bump_cache:
                bump_cache[bkey] = _bumps(sweep, cfg, float(d))
            b = bump_cache[bkey]
            row.rho_sigma = b["rho_sigma"]
            row.weak_constant, row.onebump_max = b["weak"], b["onebump_max"]
            row.onebump_int, row.separated, row.separated_dual = b["onebump_int"], b["separated"], b["separated_dual"]
            nkey = (cfg, op)
            if nkey not in norm_cache:
                if op == "sparse" and family is None:
                    family = random_sparse_family(tree, np.random.default_rng(
                        [int(config.seed), depth, _stable_hash(pair.name)]))
                operator = make_operator(op, tree, cfg.alpha, family=family, subcell=True)
                nb = strong_norm_lower(operator, sigma, w, cfg, ascent_steps=config.ascent_steps,
                                       family=family if op == "sparse" else None)
                wn = weak_norm(operator, sigma, w, cfg) if op in MAXIMAL_KINDS else None
                norm_cache[nkey] = (nb, wn)
            nb, wn = norm_cache[nkey]
            row.lower, row.witness, row.weak_norm = nb.lower, nb.witness_kind, wn
            if op in MAXIMAL_KINDS:
                row.r11 = _ratio(wn, b["weak"])
                row.r12 = _ratio(nb.lower, b["onebump_max"])
            elif op in INTEGRAL_KINDS:
                row.r13 = _ratio(nb.lower, b["onebump_int"])
                row.r14 = _ratio(nb.lower, b["sep_denominator"])
            if nb.testing is not None:
                row.beta1, row.beta2 = nb.testing.beta1, nb.testing.beta2
                row.testing_upper = nb.testing.bracket(cfg)
                row.r_test = _ratio(nb.lower, row.testing_upper)
            row.pass_weak = _flag(row.r11, th["C_weak"])
            row.pass_thm12 = _flag(row.r12, th["C_thm12"])
            row.pass_thm13 = _flag(row.r13, th["C_thm13"])
            row.pass_thm14 = _flag(row.r14, th["C_thm14"])
            row.pass_test = _flag(row.r_test, th["C_test"])
        except CapacityError as exc:
            row.status, row.note = "capacity", str(exc)
        except FracbumpError as exc:
            row.status, row.note = "degenerate", str(exc)
        row.seconds = time.perf_counter() - t0
    return base


def _stable_hash(text: str) -> int:
    h = 0
    for ch in text.encode():
        h = (h * 131 + ch) % (1 << 31)
    return h


def _bumps(sweep: BumpSweep, cfg: ExponentConfig, delta: float) -> dict:
    eq = EpsilonSpec("onebump", cfg.q, delta)
    ep = EpsilonSpec("onebump", cfg.p, delta)
    eqc = EpsilonSpec("onebump", cfg.q_conj, delta)
    sq = EpsilonSpec("separated", cfg.q, delta)
    spc = EpsilonSpec("separated", cfg.p_conj, delta)
    sep = sweep.separated(cfg, sq)
    dual = sweep.separated_dual(cfg, spc)
    masses = sweep.sigma.masses()
    i0 = int(np.argmax(sweep.sigma.levels == 0))  # grid 1, level 0: Q0 itself
    rho0 = sweep.sigma.rho()[i0] if masses[i0] > 0 else math.nan
    return {
        "rho_sigma": None if math.isnan(rho0) else float(rho0),
        "weak": sweep.weak(cfg).constant,
        "onebump_max": sweep.onebump_max(cfg, eq).constant,
        "onebump_int": sweep.onebump_int(cfg, ep, eqc).constant,
        "separated": sep.constant,
        "separated_dual": dual.constant,
        "sep_denominator": separated_denominator(sep, dual, cfg),
    }


def run_suite(config: ExperimentConfig, threads: int = 1) -> list[ResultRow]:
    """Rows for every (pair, depth, exponents, alpha, delta, operator), ordered
    by row index regardless of completion order."""
    config.validate()
    pairs = config.pairs()
    per_unit = len(config.exponents) * len(config.alphas) * len(config.deltas) * len(config.operators)
    units = [(pair, depth) for depth in config.depths for pair in pairs]
    jobs = [(pair, depth, i * per_unit) for i, (pair, depth) in enumerate(units)]
    if threads <= 1:
        chunks = [_unit_rows(config, p, d, s) for p, d, s in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(lambda j: _unit_rows(config, *j), jobs))
    rows = [r for c in chunks for r in c]
    rows.sort(key=lambda r: r.row)
    return rows


# ---------------------------------------------------------------------------
# refinement


REFINE_FIELDS = ("rho_sigma", "weak_constant", "onebump_max", "onebump_int", "separated", "separated_dual",
                 "lower", "weak_norm", "r11", "r12", "r13", "r14", "r_test")


@dataclass
class RefinementEntry:
    pair: str
    operator: str
    alpha: float
    p: float
    q: float
    delta: float
    quantity: str
    depths: list
    values: list
    rel_deltas: list
    stable: bool

    def to_dict(self) -> dict:
        return {"schema_version": SCHEMA_VERSION, **asdict(self)}


def _rel(a, b):
    if a is None or b is None:
        return None
    if a == b:
        return 0.0
    scale = max(abs(a), abs(b))
    return abs(b - a) / scale if math.isfinite(scale) else math.inf


def refinement_study(config: ExperimentConfig, depths=None, threads: int = 1) -> list[RefinementEntry]:
    """Every reported quantity across depths with relative deltas between
    consecutive depths; ``stable`` is False when the delta at the two largest
    depths exceeds 10%."""
    depths = sorted(depths if depths is not None else config.depths)
    if len(depths) < 2:
        raise ConfigError("refinement needs at least two depths")
    cfg = ExperimentConfig(**{**asdict(config), "depths": list(depths)})
    rows = run_suite(cfg, threads)
    by_key: dict = {}
    for r in rows:
        by_key.setdefault(r.key(), {})[r.depth] = r
    out = []
    for key, per_depth in by_key.items():
        for qty in REFINE_FIELDS:
            vals = [getattr(per_depth[d], qty) if d in per_depth and per_depth[d].status == "ok" else None
                    for d in depths]
            if all(v is None for v in vals):
                continue
            rel = [_rel(a, b) for a, b in zip(vals[:-1], vals[1:])]
            stable = rel[-1] is not None and rel[-1] <= STABILITY_TOL
            out.append(RefinementEntry(*key, qty, list(depths), vals, rel, bool(stable)))
    return out


# ---------------------------------------------------------------------------
# output


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _json_default(v):
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    raise TypeError(type(v))


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None if math.isnan(v) else ("inf" if v > 0 else "-inf")
    return v


def rows_to_jsonl(rows: list[ResultRow], timing: bool = False) -> str:
    lines = []
    for r in rows:
        d = {"schema_version": SCHEMA_VERSION, **{k: _clean(v) for k, v in r.to_dict(timing).items()}}
        lines.append(json.dumps(d, sort_keys=False, default=_json_default))
    return "\n".join(lines) + ("\n" if lines else "")


def rows_to_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["schema_version"] + CSV_COLUMNS)
    for r in rows:
        d = r.to_dict()
        wr.writerow([str(SCHEMA_VERSION)] + [_fmt(d[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def summarize(rows: list[ResultRow]) -> dict:
    ok = [r for r in rows if r.status == "ok"]
    out = {"rows": len(rows), "ok": len(ok), "failed_flags": sum(not r.passed for r in ok),
           "annotated": len(rows) - len(ok)}
    for name in ("r11", "r12", "r13", "r14", "r_test"):
        vals = [getattr(r, name) for r in ok if getattr(r, name) is not None]
        out[f"max_{name}"] = max(vals) if vals else None
    return out
