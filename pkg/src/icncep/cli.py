"""Command-line front end: parse, explain, run-sim, replay, inspect, metrics.

Exit codes: 0 success, 1 syntax error in a query, 2 semantic rejection,
3 configuration or I/O failure. Commands validate their inputs fully before
writing anything.
"""

from __future__ import annotations

import argparse
import json
import math
import statistics
import sys
from pathlib import Path

from .placement import NoPath, assign_operators, build_path, discover_delays, plan_dump
from .query import (
    LexError,
    OperatorNode,
    ParseError,
    QueryError,
    _render_param,
    canonical_text,
    create_operator_graph,
)
from .sim import (
    ConfigError,
    SchemaMismatch,
    StreamDef,
    emit_metrics,
    load_scenario,
    override_scenario,
    replay_dataset,
    run_scenario,
)

EXIT_OK = 0
EXIT_SYNTAX = 1
EXIT_SEMANTIC = 2
EXIT_CONFIG = 3


def _tree_lines(node: OperatorNode, depth: int = 0, out: list[str] | None = None) -> list[str]:
    if out is None:
        out = []
    params = ",".join(_render_param(p) for p in node.params)
    suffix = " [%s]" % params if params else ""
    out.append("%s%d %s%s" % ("  " * depth, node.index, node.kind, suffix))
    for child in node.children:
        _tree_lines(child, depth + 1, out)
    return out


def _cmd_parse(args) -> int:
    text = args.query
    if text is None or text == "-":
        text = sys.stdin.read()
    text = text.strip()
    if not text:
        print("error: empty query", file=sys.stderr)
        return EXIT_SYNTAX
    try:
        tree = create_operator_graph(text)
    except (LexError, ParseError) as err:
        print("syntax error: %s" % err, file=sys.stderr)
        return EXIT_SYNTAX
    except QueryError as err:
        print("semantic error: %s" % err, file=sys.stderr)
        return EXIT_SEMANTIC
    print("canonical: %s" % canonical_text(tree))
    for line in _tree_lines(tree):
        print(line)
    print("nfn: %s" % tree.nfn)
    return EXIT_OK


def _coordinator_for(spec, consumer: str) -> str:
    brokers = set(spec.topology.broker_ids())
    attached = [p for p in spec.topology.neighbors(consumer) if p in brokers]
    return attached[0] if attached else sorted(brokers)[0]


def _cmd_explain(args) -> int:
    try:
        spec = load_scenario(args.scenario)
    except ConfigError as err:
        print("error: %s" % err, file=sys.stderr)
        return EXIT_CONFIG
    q = next((q for q in spec.queries if q.query_id == args.query_id), None)
    if q is None:
        known = ",".join(sorted(x.query_id for x in spec.queries))
        print("error: no query %r in scenario (have %s)" % (args.query_id, known), file=sys.stderr)
        return EXIT_SEMANTIC
    bindings = spec.bindings()
    tree = create_operator_graph(q.text, bindings or None)
    coordinator = _coordinator_for(spec, q.consumer)
    try:
        if q.mode == "centralized":
            plan = assign_operators(tree, [coordinator], "centralized")
        else:
            topo = spec.topology
            dm = discover_delays(coordinator, topo)
            brokers = set(topo.broker_ids())
            ingress = {}
            producers = []
            for alias in sorted(tree.stream_aliases()):
                producer = bindings[alias].name.components[1]
                producers.append(producer)
                adj = [p for p in topo.neighbors(producer) if p in brokers]
                if adj:
                    ingress[alias] = adj[0]
            path = build_path(dm, producers or [coordinator], coordinator)
            plan = assign_operators(tree, path, "distributed", ingress=ingress)
    except NoPath as err:
        print("error: %s" % err, file=sys.stderr)
        return EXIT_SEMANTIC
    print(plan_dump(plan, tree))
    return EXIT_OK


def _cmd_run_sim(args) -> int:
    try:
        spec = load_scenario(args.scenario)
        if args.topology or args.mode:
            spec = override_scenario(spec, topology=args.topology, mode=args.mode)
        if args.seed is not None:
            spec.seed = args.seed
        metrics = run_scenario(spec)
    except (ConfigError, SchemaMismatch) as err:
        print("error: %s" % err, file=sys.stderr)
        return EXIT_CONFIG
    if args.metrics:
        emit_metrics(metrics, args.metrics)
    if args.trace:
        Path(args.trace).write_text("\n".join(metrics.trace) + "\n")
    for qid in sorted(metrics.queries):
        q = metrics.queries[qid]
        print(
            "%s mode=%s notifications=%d control=%d total_ms=%.3f"
            " graph_ms=%.3f placement_ms=%.3f communication_ms=%.3f"
            % (
                qid, q.mode, q.notifications, q.control_packets,
                q.total_ms, q.graph_ms, q.placement_ms, q.communication_ms,
            )
        )
    drops = sum(metrics.link_drops.values())
    print("trace_hash=%s events=%d drops=%d" % (metrics.trace_hash, len(metrics.trace), drops))
    return EXIT_OK


def _cmd_replay(args) -> int:
    stream = StreamDef("REPLAY", args.uri, args.schema, args.csv, args.rate)
    try:
        schedule, warnings = replay_dataset(stream)
    except SchemaMismatch as err:
        print("error: %s" % err, file=sys.stderr)
        return EXIT_CONFIG
    limit = args.limit if args.limit is not None else len(schedule)
    for t, packet in schedule[:limit]:
        print("%.3f %s ts=%d" % (t, packet.stream_name.to_uri(), packet.tuple.ts))
    if warnings:
        print("reordered rows: %d" % warnings, file=sys.stderr)
    return EXIT_OK


def _cmd_inspect(args) -> int:
    path = Path(args.dump)
    if not path.is_file():
        print("error: no dump file %s" % args.dump, file=sys.stderr)
        return EXIT_CONFIG
    lines = [line for line in path.read_text().splitlines() if line.strip()]
    if not lines:
        print("(empty)")
        return EXIT_OK
    # keys may contain commas; only the header is comma-clean, so split
    # data rows from the right with the header's column count
    ncols = len(lines[0].split(","))
    rows = [lines[0].split(",")] + [line.rsplit(",", ncols - 1) for line in lines[1:]]
    widths = [0] * max(len(r) for r in rows)
    for r in rows:
        for i, cell in enumerate(r):
            widths[i] = max(widths[i], len(cell))
    for r in rows:
        print("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip())
    return EXIT_OK


def _cmd_metrics(args) -> int:
    path = Path(args.csv)
    if not path.is_file():
        print("error: no metrics file %s" % args.csv, file=sys.stderr)
        return EXIT_CONFIG
    lines = [l for l in path.read_text().splitlines() if l and not l.startswith("#")]
    if not lines:
        print("error: empty metrics file", file=sys.stderr)
        return EXIT_CONFIG
    header = lines[0].split(",")
    columns = header[1:]
    groups: dict[str, list[list[float]]] = {}
    for line in lines[1:]:
        cells = line.split(",")
        try:
            groups.setdefault(cells[0], []).append([float(v) for v in cells[1:]])
        except ValueError:
            print("error: bad row %r" % line, file=sys.stderr)
            return EXIT_CONFIG
    for qid in sorted(groups):
        samples = groups[qid]
        parts = ["%s n=%d" % (qid, len(samples))]
        for i, col in enumerate(columns):
            vals = [row[i] for row in samples]
            mean = statistics.fmean(vals)
            # normal-approximation 95% interval over the runs
            ci = 1.96 * statistics.stdev(vals) / math.sqrt(len(vals)) if len(vals) > 1 else 0.0
            parts.append("%s=%.3f±%.3f" % (col, mean, ci))
        print(" ".join(parts))
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icncep")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="parse a query and print its operator tree")
    p.add_argument("query", nargs="?", help="query text; omit or use - for stdin")
    p.set_defaults(fn=_cmd_parse)

    p = sub.add_parser("explain", help="show the placement plan for a scenario query")
    p.add_argument("--placement", action="store_true", help="accepted for symmetry; plans are always shown")
    p.add_argument("scenario")
    p.add_argument("query_id")
    p.set_defaults(fn=_cmd_explain)

    p = sub.add_parser("run-sim", help="execute a scenario file")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--metrics", help="write the per-query delay CSV here")
    p.add_argument("--trace", help="write the event trace here")
    p.add_argument("--topology", help="re-target onto another topology preset")
    p.add_argument("--mode", choices=("centralized", "distributed"))
    p.set_defaults(fn=_cmd_run_sim)

    p = sub.add_parser("replay", help="print the packet schedule for a dataset")
    p.add_argument("csv")
    p.add_argument("--schema", required=True, choices=("gps", "plug"))
    p.add_argument("--uri", default="/node/p1/gps")
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(fn=_cmd_replay)

    p = sub.add_parser("inspect", help="pretty-print a node table dump")
    p.add_argument("dump")
    p.set_defaults(fn=_cmd_inspect)

    p = sub.add_parser("metrics", help="summarize metric CSV rows per query")
    p.add_argument("csv")
    p.set_defaults(fn=_cmd_metrics)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
