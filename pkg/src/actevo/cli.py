"""Command-line entry point: ``actevo <command> [options]``."""

import argparse
import datetime as _dt
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .autoinit.network import NetworkSpec, propagate
from .errors import ActevoError, ConfigError
from .nnet.mlp import TrainConfig, TrainingEvaluator
from .search import (CafeConfig, RegEvoConfig, cache_from_log, cafe_evolve, exhaustive_search,
                     random_search, regularized_evolve, rerank)
from .space import cafe_space_size, enumerate_and_dedup, format_size_table, size_table
from .stats import compare_runs, format_comparison

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("actevo")

EXIT_OK, EXIT_CONFIG, EXIT_MISMATCH, EXIT_RUNTIME = 0, 1, 2, 3

# per-tier totals for U=27, B=7, E=3 under the default counting convention
EXPECTED_TIERS = {
    1: 108,
    2: 5_832,
    3: 427_923,
    4: 31_177_872,
    5: 2_210_558_364,
    6: 152_059_087_566,
    7: 10_015_741_690_785,
}
EXPECTED_TOTAL = 10_170_042_948_450
EXPECTED_CAFE = {1: 3_456, 2: 41_278_242_816}
DEDUP_TARGET = 2_913

MODES = ("regularized", "cafe", "random", "exhaustive")
TASK_KEYS = ("dataset", "n", "noise", "data_seed", "hidden", "init", "path", "granularity")
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig) if f.name != "seed")


# ----------------------------------------------------------------- config
def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from None


def _section(cfg, name):
    sec = cfg.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be a table")
    return sec


def _check_keys(section, allowed, prefix):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{prefix}.{key}", f"unknown field; expected one of {sorted(allowed)}")


def _build(cls, section, prefix):
    allowed = {f.name for f in fields(cls)}
    _check_keys(section, allowed, prefix)
    try:
        return cls(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix, str(exc)) from None


def _train_config(section, prefix, overrides=None):
    train = {k: v for k, v in section.items() if k in TRAIN_KEYS}
    train.update(overrides or {})
    try:
        return TrainConfig(**train)
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix, str(exc)) from None


def build_evaluators(cfg):
    """(search evaluator, rerank evaluator) from the ``task`` and ``rerank`` tables."""
    task = _section(cfg, "task")
    _check_keys(task, set(TASK_KEYS) | set(TRAIN_KEYS), "task")
    rr = _section(cfg, "rerank")
    _check_keys(rr, {"top", "runs", "enabled", *TRAIN_KEYS}, "rerank")
    kwargs = {k: task[k] for k in TASK_KEYS if k in task}
    if "hidden" in kwargs:
        kwargs["hidden"] = tuple(kwargs["hidden"])
    kwargs.setdefault("init", "he-normal")
    table = cfg.get("table", "pangaea" if cfg["mode"] == "regularized" else "cafe")
    metric = cfg.get("metric", "accuracy")
    base = _train_config(task, "task")
    full = _train_config(task, "rerank", {k: rr[k] for k in TRAIN_KEYS if k in rr})
    try:
        search_eval = TrainingEvaluator(cfg=base, metric=metric, table=table, **kwargs)
        rerank_eval = TrainingEvaluator(cfg=full, metric=metric, table=table, **kwargs)
    except TypeError as exc:
        raise ConfigError("task", str(exc)) from None
    return search_eval, rerank_eval


def validate(cfg):
    if not isinstance(cfg, dict):
        raise ConfigError("config", "top level must be a table")
    if "mode" not in cfg:
        raise ConfigError("mode", "missing required field")
    if cfg["mode"] not in MODES:
        raise ConfigError("mode", f"unknown mode {cfg['mode']!r}; choose from {MODES}")
    _check_keys(cfg, {"mode", "table", "metric", "seed", "workers", "name", "task", "search",
                      "rerank"}, "config")
    if cfg.get("metric", "accuracy") not in ("accuracy", "neg_loss"):
        raise ConfigError("metric", "must be 'accuracy' or 'neg_loss'")
    if str(cfg.get("table", "cafe")).lower() not in ("cafe", "pangaea"):
        raise ConfigError("table", "must be 'cafe' or 'pangaea'")
    search = _section(cfg, "search")
    mode = cfg["mode"]
    if mode == "regularized":
        _build(RegEvoConfig, search, "search")
    elif mode == "cafe":
        _build(CafeConfig, search, "search")
    elif mode == "random":
        _check_keys(search, {"budget", "depth", "group"}, "search")
    else:
        _check_keys(search, {"space"}, "search")
    build_evaluators(cfg)
    return cfg


# -------------------------------------------------------------- run dirs
def output_root(flag):
    """ACTEVO_OUT wins over --out; the default is ./runs."""
    return Path(os.environ.get("ACTEVO_OUT") or flag or "runs")


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def append_manifest(run_dir, entry):
    """Add one entry to ``run_dir/manifest.json``; earlier entries are kept as they are."""
    path = Path(run_dir) / "manifest.json"
    runs = json.loads(path.read_text())["runs"] if path.exists() else []
    runs.append(entry)
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps({"runs": runs}, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def _manifest_entry(command, config, seeds, start, artifacts):
    return {"command": command, "config": config, "seeds": seeds, "version": __version__,
            "start": start, "end": _now(), "artifacts": sorted(artifacts)}


def _read_jsonl(path):
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError:
                    break  # a torn final line from an interrupted run
    return records


# ---------------------------------------------------------------- evolve
def run_search(cfg, seed, workers, sink=None, cache=None):
    mode = cfg["mode"]
    table = cfg.get("table", "pangaea" if mode == "regularized" else "cafe")
    metric = cfg.get("metric", "accuracy")
    search = dict(_section(cfg, "search"))
    evaluator, _ = build_evaluators(cfg)
    common = dict(rng=seed, metric=metric, workers=workers, cache=cache, sink=sink)
    if mode == "regularized":
        return regularized_evolve(_build(RegEvoConfig, search, "search"), table, evaluator, **common)
    if mode == "cafe":
        return cafe_evolve(_build(CafeConfig, search, "search"), table, evaluator, **common)
    if mode == "random":
        return random_search(evaluator, table=table, **search, **common)
    return exhaustive_search(evaluator, table=table, **search, **common)


def cmd_evolve(args):
    start = _now()
    cfg = validate(load_config(args.config))
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    workers = args.workers or int(cfg.get("workers", 0)) or os.cpu_count() or 1
    name = args.name or cfg.get("name") or f"{cfg['mode']}-seed{seed}"
    run_dir = output_root(args.out) / name
    (run_dir / "reports").mkdir(parents=True, exist_ok=True)
    log_path = run_dir / "candidates.jsonl"

    cache = None
    if log_path.exists():
        cache = cache_from_log(_read_jsonl(log_path))
        log.info("resuming %s with %d cached evaluations", run_dir, len(cache))
    with open(log_path, "w") as fh:
        def sink(record):
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()

        report = run_search(cfg, seed, workers, sink, cache)
        rr = _section(cfg, "rerank")
        reranked = []
        if rr.get("enabled", True):
            _, full = build_evaluators(cfg)
            reranked = rerank(report.top[:int(rr.get("top", 3))], full, rng=seed,
                              runs=int(rr.get("runs", 2)))
            for c in reranked:
                for s, v in c.eval_log[-int(rr.get("runs", 2)):]:
                    sink({"birth_index": c.birth_index, "function": c.function, "fitness": v,
                          "seed": s, "status": "rerank", "origin": c.origin,
                          "parent": c.parent, "generation": None})

    final = reranked or report.top
    summary = report.summary()
    summary["rerank_evaluations"] = len(reranked) * int(rr.get("runs", 2)) if reranked else 0
    summary["logged"] += summary["rerank_evaluations"]
    summary["final_fitness"] = [c.fitness for c in final[:3]]
    summary["top3"] = [{"function": c.function, "fitness": c.fitness,
                        "birth_index": c.birth_index} for c in final[:3]]
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    lines = ["| rank | function | fitness |", "|---|---|---|"]
    lines += [f"| {i + 1} | `{c.function}` | {c.fitness:.6g} |" for i, c in enumerate(final[:3])]
    (run_dir / "reports" / "top3.md").write_text("\n".join(lines) + "\n")
    append_manifest(run_dir, _manifest_entry(
        "evolve", cfg, {"seed": seed, "search_seed": report.seed}, start,
        ["candidates.jsonl", "summary.json", "reports/top3.md"]))
    print(f"{run_dir}")
    for i, c in enumerate(final[:3]):
        print(f"{i + 1}. {c.fitness:.6g}  {c.function}")
    return EXIT_OK


# ------------------------------------------------------------ count-space
def cmd_count_space(args):
    ok = True
    if args.cafe:
        for depth in (1, 2):
            size = cafe_space_size(depth)
            print(f"S{depth} {size:,}")
            ok &= size == EXPECTED_CAFE[depth]
    else:
        print(format_size_table(args.max_nodes, convention=args.convention, fmt=args.format), end="")
        if args.convention == "capped":
            _, tiers = size_table(args.max_nodes, convention=args.convention)
            for j, n in tiers.items():
                if j in EXPECTED_TIERS and n != EXPECTED_TIERS[j]:
                    log.error("tier %d: %d != expected %d", j, n, EXPECTED_TIERS[j])
                    ok = False
            if args.max_nodes == 7 and sum(tiers.values()) != EXPECTED_TOTAL:
                ok = False
    return EXIT_OK if ok else EXIT_MISMATCH


# ------------------------------------------------------------------ dedup
def cmd_dedup(args):
    start = _now()
    res = enumerate_and_dedup("three_node", args.table)
    print(f"total {res.total:,}")
    print(f"unique {res.unique:,}")
    if args.table == "pangaea":
        dev = (res.unique - DEDUP_TARGET) / DEDUP_TARGET
        print(f"target {DEDUP_TARGET:,} deviation {dev:+.2%}")
    run_dir = output_root(args.out) / f"dedup-{args.table}"
    (run_dir / "reports").mkdir(parents=True, exist_ok=True)
    (run_dir / "reports" / "representatives.txt").write_text("\n".join(res.representatives) + "\n")
    append_manifest(run_dir, _manifest_entry("dedup", {"table": args.table}, {}, start,
                                             ["reports/representatives.txt"]))
    return EXIT_OK


# ------------------------------------------------------------ analyze-init
def cmd_analyze_init(args):
    start = _now()
    try:
        net = NetworkSpec.from_json(Path(args.network).read_text())
    except OSError as exc:
        raise ConfigError("network", f"cannot read {args.network}: {exc.strerror}") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError("network", str(exc)) from None
    plan = propagate(net, args.distribution, args.seed or 0, convention=args.convention)
    print(plan.table(), end="")
    run_dir = output_root(args.out) / f"analyze-init-{Path(args.network).stem}"
    (run_dir / "reports").mkdir(parents=True, exist_ok=True)
    (run_dir / "reports" / "init_plan.json").write_text(plan.to_json() + "\n")
    append_manifest(run_dir, _manifest_entry(
        "analyze-init", {"network": json.loads(net.to_json()), "distribution": args.distribution,
                         "convention": args.convention}, {"seed": args.seed or 0}, start,
        ["reports/init_plan.json"]))
    return EXIT_OK


# ---------------------------------------------------------------- compare
def _final_fitness(run_dir):
    path = Path(run_dir) / "summary.json"
    try:
        data = json.loads(path.read_text())
    except OSError:
        raise ConfigError("runs", f"{path} not found") from None
    return [float(v) for v in data.get("final_fitness", [])]


def cmd_compare(args):
    base = _final_fitness(args.runs[0])
    rows = [(args.runs[0], other, compare_runs(base, _final_fitness(other)))
            for other in args.runs[1:]]
    print(format_comparison(rows), end="")
    return EXIT_OK


# ------------------------------------------------------------------- main
def build_parser():
    p = argparse.ArgumentParser(prog="actevo", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--out", default=None, help="output root (ACTEVO_OUT overrides)")

    e = sub.add_parser("evolve", help="run an activation search from a config")
    e.add_argument("--config", required=True)
    e.add_argument("--name", default=None, help="run directory name")
    common(e)
    e.set_defaults(fn=cmd_evolve)

    c = sub.add_parser("count-space", help="print and verify search-space sizes")
    c.add_argument("--max-nodes", type=int, default=7)
    c.add_argument("--cafe", action="store_true")
    c.add_argument("--convention", default="capped", choices=("capped", "ordered", "unordered"))
    c.add_argument("--format", default="text", choices=("text", "csv"))
    common(c)
    c.set_defaults(fn=cmd_count_space)

    d = sub.add_parser("dedup", help="deduplicate the three-node space by fingerprint")
    d.add_argument("--table", default="pangaea", choices=("pangaea", "cafe"))
    common(d)
    d.set_defaults(fn=cmd_dedup)

    a = sub.add_parser("analyze-init", help="propagate moments through a layer graph")
    a.add_argument("network", help="network JSON")
    a.add_argument("--distribution", default="normal", choices=("normal", "uniform"))
    a.add_argument("--convention", default="exact", choices=("exact", "zero-mean"))
    common(a)
    a.set_defaults(fn=cmd_analyze_init)

    m = sub.add_parser("compare", help="Welch t-tests between run directories")
    m.add_argument("runs", nargs="+")
    common(m)
    m.set_defaults(fn=cmd_compare)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ActevoError, ArithmeticError, OSError, ValueError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
