"""Command line front end.

Every subcommand builds an in-memory store first, from a generated dataset
(``--dataset``) and/or NDJSON bulk files (``--load``), then acts on it::

    fedl load    --dataset finbench --out data/
    fedl query   --name TCR12 --param PERSON_ID=60
    fedl explain --name FOLD
    fedl paths   --name TCR3
    fedl bench   --users 10 --runs 100 --cache bypass
    fedl stats   --name TCR12

Query text comes from ``--q``, ``--name`` (a bundled listing) or stdin
(``--q -``). Parameters default to the first planted set of the generated
dataset; ``--param K=V`` overrides single entries.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Sequence

from ..planner import PlannerConfig
from ..querylang import QueryError, parse_params
from ..storage import Store, StorageError
from .bench import run_benchmark
from .engine import Engine
from .generators import (CdrConfig, Dataset, FinbenchConfig, gen_cdr_dataset, gen_finbench_mini,
                         load_ndjson, write_ndjson)
from .tcr import ALL, FOLD_EXAMPLE, SUPPORTED

LISTINGS = {**ALL, "FOLD": FOLD_EXAMPLE}


class UsageError(Exception):
    pass


def read_config(path: str) -> dict[str, str]:
    """Flat ``key=value`` file; keys mirror the long flag names."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().lstrip("-").replace("-", "_")] = v.strip()
    return out


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="flat key=value file mirroring the flags")
    p.add_argument("--nodes", type=int, default=1)
    p.add_argument("--shards", type=int, default=2)
    p.add_argument("--workers", type=int, default=2)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--cache", choices=("on", "off", "bypass"), default="on")
    p.add_argument("--planner", choices=("adaptive", "static"), default="adaptive")
    p.add_argument("--explain", action="store_true", help="also print the plan explanation")
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.add_argument("--dataset", choices=("finbench", "cdr", "none"), default="finbench")
    p.add_argument("--scale", choices=("mini", "desk"), default="mini")
    p.add_argument("--load", action="append", default=[], metavar="FILE", help="NDJSON bulk file")
    return p


def _query_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--q", help="query text, or - for stdin")
    p.add_argument("--name", choices=sorted(LISTINGS), help="bundled listing")
    p.add_argument("--param", action="append", default=[], metavar="K=V")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="fedl", description="Join-planning search engine harness")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("load", parents=[common], help="build the store and summarize it")
    p.add_argument("--out", help="directory to write NDJSON bulk files into")
    for name in ("query", "explain", "paths", "stats"):
        _query_args(sub.add_parser(name, parents=[common]))
    p = sub.add_parser("bench", parents=[common], help="closed-loop benchmark")
    p.add_argument("--queries", default=",".join(SUPPORTED), help="comma separated listing names")
    p.add_argument("--users", type=int, default=1)
    p.add_argument("--runs", type=int, default=100)
    return parser


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = read_config(args.config)
        explicit = {a.split("=", 1)[0].lstrip("-").replace("-", "_") for a in argv if a.startswith("--")}
        for key, raw in cfg.items():
            if not hasattr(args, key):
                raise UsageError(f"unknown config key {key!r}")
            if key in explicit:
                continue
            # re-parse through the subparser so choices and types apply
            flag = f"--{key.replace('_', '-')}"
            if isinstance(getattr(args, key), bool):
                value = raw.lower() in ("1", "true", "yes", "on")
            else:
                value = getattr(parser.parse_args([args.command, flag, raw]), key)
            setattr(args, key, value)
    for name in ("nodes", "shards", "workers"):
        if getattr(args, name) < 1:
            raise UsageError(f"--{name} must be >= 1")
    return args


def build_dataset(args) -> Dataset:
    if args.dataset == "finbench":
        cfg = FinbenchConfig.desk_scale() if args.scale == "desk" else FinbenchConfig()
        cfg.shards = args.shards
        if args.seed is not None:
            cfg.seed = args.seed
        ds = gen_finbench_mini(cfg)
    elif args.dataset == "cdr":
        cfg = CdrConfig(shards=args.shards) if args.scale == "desk" else CdrConfig(
            docs_per_day=5000, unique_phones=2000, shards=args.shards)
        if args.seed is not None:
            cfg.seed = args.seed
        ds = gen_cdr_dataset(cfg)
    else:
        ds = Dataset(Store(), {})
    for path in args.load:
        load_ndjson(ds.store, path)
    return ds


def _engine(args, ds: Dataset) -> Engine:
    return Engine(ds.store, nodes=args.nodes, cache_mode=args.cache, planner=args.planner,
                  config=PlannerConfig(workers=args.workers))


def _query_text(args) -> str:
    if args.q and args.name:
        raise UsageError("give either --q or --name, not both")
    if args.name:
        return LISTINGS[args.name]
    if args.q == "-":
        return sys.stdin.read()
    if args.q:
        return args.q
    raise UsageError("a query is required (--q TEXT, --q - or --name)")


def _params(args, ds: Dataset) -> dict:
    base = dict(ds.params[0]) if ds.params else {}
    try:
        base.update(parse_params(args.param))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return base


def _emit(rows: list[dict], fmt: str, out) -> None:
    if fmt == "json":
        for r in rows:
            out.write(json.dumps(r, sort_keys=False, default=str) + "\n")
        return
    if not rows:
        out.write("(no rows)\n")
        return
    cols = list(rows[0])
    cells = [[str(r.get(c, "")) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    out.write("  ".join(c.ljust(w) for c, w in zip(cols, widths)) + "\n")
    for row in cells:
        out.write("  ".join(v.ljust(w) for v, w in zip(row, widths)) + "\n")


def _cmd_load(args, ds: Dataset, out) -> None:
    summary = {name: ds.store.open_snapshot([name]).doc_count(name) for name in ds.store.index_names}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        for name, docs in ds.docs.items():
            write_ndjson(os.path.join(args.out, f"{name}.ndjson"), name, docs,
                         shards=args.shards, routing=ds.routing.get(name, "id"))
    out.write(json.dumps({"indices": summary, "params": ds.params, "fingerprint": ds.fingerprint()},
                         default=str) + "\n")


def _cmd_query(args, ds: Dataset, out, want_paths: bool) -> None:
    engine = _engine(args, ds)
    text, params = _query_text(args), _params(args, ds)
    result = engine.query(text, params)
    if want_paths and result.kind != "paths":
        raise UsageError("`paths` needs a path query (MATCH name = ...)")
    if result.kind == "paths":
        rows = [{"length": len(p) - 1, "path": p} for p in result.paths] if args.format == "json" else \
            [{"length": len(p) - 1, "path": " ".join(f"{s['index']}:{s['id']}" for s in p)} for p in result.paths]
        _emit(rows, args.format, out)
        out.write(json.dumps({"answer_length": result.path_length, "counters": result.counters.as_dict(),
                              "timings": result.timings}) + "\n")
    else:
        _emit(result.rows, args.format, out)
    if args.explain:
        out.write(engine.explain(text, params) + "\n")


def _cmd_explain(args, ds: Dataset, out) -> None:
    engine = _engine(args, ds)
    text = engine.explain(_query_text(args), _params(args, ds))
    if args.format == "json":
        out.write(json.dumps({"explain": text.splitlines()}) + "\n")
    else:
        out.write(text + "\n")


def _cmd_stats(args, ds: Dataset, out) -> None:
    engine = _engine(args, ds)
    report: dict = {"indices": {n: ds.store.open_snapshot([n]).doc_count(n) for n in ds.store.index_names},
                    "epochs": ds.store.epochs()}
    if args.q or args.name:
        result = engine.query(_query_text(args), _params(args, ds))
        report["timings"] = result.timings
        if result.execution is not None:
            s = result.execution.stats
            report["execution"] = {"semi_joins_executed": s.semi_joins_executed,
                                   "inner_joins_executed": s.inner_joins_executed,
                                   "cache_hits": s.cache_hits, "short_circuits": s.short_circuits,
                                   "bytes_exchanged": s.bytes_exchanged, "strategies": result.strategies()}
        if result.counters is not None:
            report["sjd"] = result.counters.as_dict()
    report["cache"] = engine.cache.stats.as_dict()
    report["network"] = engine.topology.network_stats()
    out.write(json.dumps(report, default=str) + "\n")


def _cmd_bench(args, ds: Dataset, out) -> None:
    names = [n.strip() for n in args.queries.split(",") if n.strip()]
    unknown = [n for n in names if n not in LISTINGS]
    if unknown:
        raise UsageError(f"unknown queries: {', '.join(unknown)}")
    engine = _engine(args, ds)
    report = run_benchmark(engine, {n: LISTINGS[n] for n in names}, users=args.users, mode=args.planner,
                           cache=args.cache, runs=args.runs, param_pool=ds.params,
                           seed=args.seed or 0)
    out.write(json.dumps(report.as_dict(), default=str) + "\n")


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        ds = build_dataset(args)
        if args.command == "load":
            _cmd_load(args, ds, out)
        elif args.command in ("query", "paths"):
            _cmd_query(args, ds, out, want_paths=args.command == "paths")
        elif args.command == "explain":
            _cmd_explain(args, ds, out)
        elif args.command == "stats":
            _cmd_stats(args, ds, out)
        else:
            _cmd_bench(args, ds, out)
    except SystemExit as exc:  # argparse already printed its message
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"fedl: error: {exc}", file=sys.stderr)
        return 2
    except QueryError as exc:
        print(json.dumps({"error": exc.as_record()}), file=sys.stderr)
        return 1
    except (StorageError, ValueError, OSError) as exc:
        print(f"fedl: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
