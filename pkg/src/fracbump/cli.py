"""Command line entry point: ``fracbump {verify,bumps,norms,sweep,refine}``."""
from __future__ import annotations

import argparse
import json
import re
import sys
from dataclasses import asdict

from .errors import CapacityError, ConfigError, FracbumpError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_CAPACITY = 0, 1, 2, 3


def _line_of(text: str, key: str) -> int:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else 1


def load_config(path: str, depth: int | None = None, seed: int | None = None):
    from .harness import ExperimentConfig

    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}:1: cannot read config ({exc.strerror})") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if isinstance(data, dict):
        if depth is not None:
            data["depths"] = [depth]
        if seed is not None:
            data["seed"] = seed
    try:
        return ExperimentConfig.from_dict(data)
    except (ConfigError, TypeError) as exc:
        msg = str(exc)
        m = re.search(r"'(\w+)'", msg)
        line = _line_of(text, m.group(1)) if m else 1
        raise ConfigError(f"{path}:{line}: {msg}") from None


def _default_config(args):
    from .harness import standard_suite

    return standard_suite(depth=args.depth if args.depth is not None else 6,
                          seed=args.seed if args.seed is not None else 0)


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _jsonl(items) -> str:
    return "".join(json.dumps(i) + "\n" for i in items)


def _config_for(args):
    if args.config:
        return load_config(args.config, args.depth, args.seed)
    return _default_config(args)


def cmd_verify(args) -> int:
    from .checks import run_checks

    results = run_checks(depth=args.depth if args.depth is not None else 6,
                         seed=args.seed if args.seed is not None else 0, threads=args.threads)
    if args.format == "csv":
        text = "check,ok,detail\n" + "".join(f"{r.name},{str(r.ok).lower()},\"{r.detail}\"\n" for r in results)
    else:
        text = _jsonl({"schema_version": 1, **asdict(r)} for r in results)
    _emit(text, args.out)
    if args.out:
        for r in results:
            print(f"{'PASS' if r.ok else 'FAIL'} {r.name}: {r.detail}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_FAIL


def _combos(config):
    from .operators import ExponentConfig

    for pq in config.exponents:
        for a in config.alphas:
            yield ExponentConfig(config.dimension, float(a), float(pq[0]), float(pq[1]))


def cmd_bumps(args) -> int:
    from .bumps import BumpSweep, EpsilonSpec
    from .dyadic import build_tree

    config = _config_for(args)
    items = []
    for depth in config.depths:
        tree = build_tree(config.dimension, depth)
        for pair in config.pairs():
            sweep = BumpSweep(*pair.build(tree))
            for cfg in _combos(config):
                for d in config.deltas:
                    reports = [
                        sweep.weak(cfg),
                        sweep.onebump_max(cfg, EpsilonSpec("onebump", cfg.q, d)),
                        sweep.onebump_int(cfg, EpsilonSpec("onebump", cfg.p, d), EpsilonSpec("onebump", cfg.q_conj, d)),
                        sweep.separated(cfg, EpsilonSpec("separated", cfg.q, d)),
                        sweep.separated_dual(cfg, EpsilonSpec("separated", cfg.p_conj, d)),
                    ]
                    for rep in reports:
                        items.append({"pair": pair.name, "depth": depth, "alpha": cfg.alpha, "p": cfg.p,
                                      "q": cfg.q, "delta": d, **rep.to_dict()})
    _emit(_render(items, args.format), args.out)
    return EXIT_OK


def cmd_norms(args) -> int:
    from .dyadic import build_tree
    from .embedding import strong_norm_lower
    from .operators import make_operator
    from .stopping import random_sparse_family
    import numpy as np

    config = _config_for(args)
    items = []
    for depth in config.depths:
        tree = build_tree(config.dimension, depth)
        family = random_sparse_family(tree, np.random.default_rng(config.seed))
        for pair in config.pairs():
            sigma, w = pair.build(tree)
            for cfg in _combos(config):
                for op in config.operators:
                    fam = family if op == "sparse" else None
                    nb = strong_norm_lower(make_operator(op, tree, cfg.alpha, family=fam, subcell=True), sigma, w, cfg,
                                           ascent_steps=config.ascent_steps, family=fam)
                    items.append({"pair": pair.name, "depth": depth, "operator": op, "alpha": cfg.alpha,
                                  "p": cfg.p, "q": cfg.q, **nb.to_dict(cfg)})
    _emit(_render(items, args.format), args.out)
    return EXIT_OK


def _render(items, fmt) -> str:
    if fmt == "json":
        return _jsonl(items)
    import csv
    import io

    buf = io.StringIO()
    keys = list(dict.fromkeys(k for it in items for k in it))
    wr = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    wr.writeheader()
    for it in items:
        wr.writerow({k: (f"{v:.17g}" if isinstance(v, float) else json.dumps(v) if isinstance(v, (dict, list)) else v)
                     for k, v in it.items()})
    return buf.getvalue()


def cmd_sweep(args) -> int:
    from .harness import rows_to_csv, rows_to_jsonl, run_suite, summarize

    config = _config_for(args)
    rows = run_suite(config, threads=args.threads)
    _emit(rows_to_csv(rows) if args.format == "csv" else rows_to_jsonl(rows), args.out)
    if args.out:
        print(json.dumps(summarize(rows)))
    if any(r.status == "capacity" for r in rows):
        return EXIT_CAPACITY
    return EXIT_OK


def cmd_refine(args) -> int:
    from .harness import refinement_study

    config = _config_for(args)
    depths = [int(d) for d in args.depths.split(",")] if args.depths else config.depths
    if args.depths is None and args.depth is not None:
        raise ConfigError("refine needs --depths with at least two values")
    entries = refinement_study(config, depths, threads=args.threads)
    _emit(_render([e.to_dict() for e in entries], args.format), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracbump", description="Two-weight bump diagnostics on dyadic grids.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config (JSON)")
        p.add_argument("--out", help="output file (default: stdout)")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        p.add_argument("--seed", type=int, help="seed offset for random weights and families")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--depth", type=int, help="override the tree depth L")
        return p

    common(sub.add_parser("verify", help="run the invariant suite"))
    common(sub.add_parser("bumps", help="bump constants for a config"))
    common(sub.add_parser("norms", help="norm brackets for a config"))
    common(sub.add_parser("sweep", help="run the experiment suite"))
    refine = common(sub.add_parser("refine", help="refinement study across depths"))
    refine.add_argument("--depths", help="comma separated depths, e.g. 4,6,8")
    return parser


COMMANDS = {"verify": cmd_verify, "bumps": cmd_bumps, "norms": cmd_norms, "sweep": cmd_sweep, "refine": cmd_refine}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be nonnegative", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except FracbumpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
