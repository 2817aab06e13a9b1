"""Deterministic multi-node simulation harness.

Builds a broker overlay from a line-oriented topology file, wires one engine
per node, replays CSV datasets as timed DataStream injections, and drives
everything from a single (time, seq) event heap. Every packet send, receive,
drop, and engine event lands in an ordered trace whose hash is the
determinism contract: same scenario, same trace bytes.

Times are logical milliseconds. Node handlers run serially per node: a
packet's processing starts when the node is idle, and its outputs leave at
start + processing delay + any compute charged during evaluation. Real
(wall-clock) parse and planning times are kept out of the trace and surface
only in the metrics, marked as real in the CSV header.
"""

from __future__ import annotations

import csv
import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Optional

from .engine import APP_FACE, Engine, FaceDef, NodeConfig
from .packet import (
    AddQueryInterest,
    Data,
    DataStream,
    Interest,
    Packet,
    RemoveQueryInterest,
    Tuple,
)
from .query import (
    GPS_SCHEMA,
    PLUG_SCHEMA,
    Name,
    StreamBinding,
    canonical_text,
    create_operator_graph,
    query_hash,
)

_SCHEMA_BY_NAME = {"gps": GPS_SCHEMA, "plug": PLUG_SCHEMA}

__all__ = [
    "ConfigError",
    "SchemaMismatch",
    "TopologyConfig",
    "ScenarioSpec",
    "StreamDef",
    "QueryDef",
    "QueryMetrics",
    "Metrics",
    "load_topology",
    "load_scenario",
    "override_scenario",
    "replay_dataset",
    "run_scenario",
    "emit_metrics",
    "generate_gps_csv",
    "generate_plug_csv",
    "data_path",
]

DEFAULT_LINK_CAPACITY = 64

SCHEMA_COLUMNS = {
    "gps": ["ts", "s_id", "latitude", "longitude", "altitude", "accuracy", "distance", "speed"],
    "plug": ["ts", "id", "value", "property", "plug_id", "household_id", "house_id"],
}


class ConfigError(Exception):
    """Bad topology or scenario input; message carries a line diagnostic."""


class SchemaMismatch(Exception):
    """Dataset file missing or its header disagrees with the declared schema."""


# ---------------------------------------------------------------------------
# topology


@dataclass(frozen=True)
class TopoNode:
    node_id: str
    role: str
    proc_delay_ms: float


@dataclass(frozen=True)
class TopoLink:
    a: str
    b: str
    delay_ms: float
    capacity: int = DEFAULT_LINK_CAPACITY


@dataclass
class TopologyConfig:
    name: str
    nodes: dict[str, TopoNode]
    link_list: list[TopoLink]

    def broker_ids(self) -> list[str]:
        return sorted(n.node_id for n in self.nodes.values() if n.role == "broker")

    def node_delay(self, node_id: str) -> float:
        return self.nodes[node_id].proc_delay_ms

    def links(self) -> list[tuple[str, str, float]]:
        return [(l.a, l.b, l.delay_ms) for l in self.link_list]

    def neighbors(self, node_id: str) -> list[str]:
        out = set()
        for l in self.link_list:
            if l.a == node_id:
                out.add(l.b)
            elif l.b == node_id:
                out.add(l.a)
        return sorted(out)


def data_path(filename: str) -> Path:
    """Resolve a file shipped in the package data directory."""
    root = resources.files("icncep").joinpath("data")
    for sub in ("topologies", "scenarios", "datasets"):
        candidate = root.joinpath(sub, filename)
        if candidate.is_file():
            return Path(str(candidate))
    return Path(str(root.joinpath(filename)))


def load_topology(path: str) -> TopologyConfig:
    """Parse a topology file; bare preset names resolve to shipped files."""
    src = Path(path)
    if not src.exists() and "/" not in path and not path.endswith(".topo"):
        src = data_path(path + ".topo")
    if not src.exists():
        raise ConfigError("topology not found: %s" % path)

    nodes: dict[str, TopoNode] = {}
    links: list[TopoLink] = []
    for lineno, raw in enumerate(src.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "node":
            if len(parts) != 4:
                raise ConfigError("line %d: node takes <id> <role> <delay_ms>" % lineno)
            _, nid, role, delay = parts
            if role not in ("producer", "broker", "consumer"):
                raise ConfigError("line %d: unknown role %r" % (lineno, role))
            if nid in nodes:
                raise ConfigError("line %d: duplicate node %r" % (lineno, nid))
            try:
                d = float(delay)
            except ValueError:
                raise ConfigError("line %d: bad delay %r" % (lineno, delay))
            if d < 0:
                raise ConfigError("line %d: negative delay" % lineno)
            nodes[nid] = TopoNode(nid, role, d)
        elif parts[0] == "link":
            if len(parts) not in (4, 5):
                raise ConfigError(
                    "line %d: link takes <a> <b> <delay_ms> [capacity]" % lineno
                )
            a, b, delay = parts[1], parts[2], parts[3]
            for end in (a, b):
                if end not in nodes:
                    raise ConfigError("line %d: unknown endpoint %r" % (lineno, end))
            try:
                d = float(delay)
            except ValueError:
                raise ConfigError("line %d: bad delay %r" % (lineno, delay))
            if d < 0:
                raise ConfigError("line %d: negative delay" % lineno)
            cap = DEFAULT_LINK_CAPACITY
            if len(parts) == 5:
                try:
                    cap = int(parts[4])
                except ValueError:
                    raise ConfigError("line %d: bad capacity %r" % (lineno, parts[4]))
                if cap < 1:
                    raise ConfigError("line %d: capacity must be positive" % lineno)
            links.append(TopoLink(a, b, d, cap))
        else:
            raise ConfigError("line %d: unknown directive %r" % (lineno, parts[0]))

    if not nodes:
        raise ConfigError("topology %s defines no nodes" % path)
    topo = TopologyConfig(name=src.stem, nodes=nodes, link_list=links)
    _check_connected(topo, path)
    return topo


def _check_connected(topo: TopologyConfig, origin: str) -> None:
    ids = sorted(topo.nodes)
    seen = {ids[0]}
    frontier = [ids[0]]
    while frontier:
        nxt = []
        for n in frontier:
            for peer in topo.neighbors(n):
                if peer not in seen:
                    seen.add(peer)
                    nxt.append(peer)
        frontier = nxt
    if seen != set(ids):
        missing = sorted(set(ids) - seen)
        raise ConfigError("%s: disconnected nodes %s" % (origin, ",".join(missing)))


# ---------------------------------------------------------------------------
# scenario


@dataclass(frozen=True)
class StreamDef:
    alias: str
    uri: str
    schema: str
    csv_path: str
    rate: float = 1.0


@dataclass(frozen=True)
class QueryDef:
    query_id: str
    consumer: str
    start_ms: int
    stop_ms: Optional[int]
    mode: str
    text: str
    poll_ms: Optional[int] = None


@dataclass
class ScenarioSpec:
    topology: TopologyConfig
    streams: list[StreamDef]
    queries: list[QueryDef]
    seed: int = 0

    def bindings(self) -> dict[str, StreamBinding]:
        return {
            s.alias: StreamBinding(s.alias, Name.from_uri(s.uri), _SCHEMA_BY_NAME[s.schema])
            for s in self.streams
        }


def load_scenario(path: str) -> ScenarioSpec:
    src = Path(path)
    if not src.exists() and "/" not in path:
        src = data_path(path if path.endswith(".scn") else path + ".scn")
    if not src.exists():
        raise ConfigError("scenario not found: %s" % path)

    topology: Optional[TopologyConfig] = None
    streams: list[StreamDef] = []
    queries: list[QueryDef] = []
    seed = 0
    base = src.parent

    for lineno, raw in enumerate(src.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "topology":
            if len(parts) != 2:
                raise ConfigError("line %d: topology takes one name or path" % lineno)
            candidate = base / parts[1]
            topology = load_topology(str(candidate) if candidate.exists() else parts[1])
        elif parts[0] == "seed":
            if len(parts) != 2:
                raise ConfigError("line %d: seed takes one integer" % lineno)
            try:
                seed = int(parts[1])
            except ValueError:
                raise ConfigError("line %d: bad seed %r" % (lineno, parts[1]))
        elif parts[0] == "stream":
            if len(parts) != 6:
                raise ConfigError(
                    "line %d: stream takes <alias> <uri> <schema> <csv> <rate>" % lineno
                )
            _, alias, uri, schema, csv_path, rate = parts
            if schema not in SCHEMA_COLUMNS:
                raise ConfigError("line %d: unknown schema %r" % (lineno, schema))
            if any(s.alias == alias for s in streams):
                raise ConfigError("line %d: duplicate stream alias %r" % (lineno, alias))
            try:
                r = float(rate)
            except ValueError:
                raise ConfigError("line %d: bad rate %r" % (lineno, rate))
            if r <= 0:
                raise ConfigError("line %d: rate must be positive" % lineno)
            resolved = csv_path if Path(csv_path).is_absolute() else str(base / csv_path)
            streams.append(StreamDef(alias, uri, schema, resolved, r))
        elif parts[0] == "query":
            if len(parts) < 7:
                raise ConfigError(
                    "line %d: query takes <id> <consumer> <start> <stop> <mode>"
                    " [poll=<ms>] <text>" % lineno
                )
            qid, consumer, start_s, stop_s, mode = parts[1:6]
            rest = parts[6:]
            poll = None
            if rest and rest[0].startswith("poll="):
                try:
                    poll = int(rest[0][5:])
                except ValueError:
                    raise ConfigError("line %d: bad poll interval" % lineno)
                rest = rest[1:]
            if not rest:
                raise ConfigError("line %d: query text missing" % lineno)
            if mode not in ("centralized", "distributed"):
                raise ConfigError("line %d: unknown mode %r" % (lineno, mode))
            if any(q.query_id == qid for q in queries):
                raise ConfigError("line %d: duplicate query id %r" % (lineno, qid))
            try:
                start = int(start_s)
                stop = None if stop_s == "-" else int(stop_s)
            except ValueError:
                raise ConfigError("line %d: bad start/stop" % lineno)
            if stop is not None and stop <= start:
                raise ConfigError("line %d: stop must follow start" % lineno)
            queries.append(QueryDef(qid, consumer, start, stop, mode, " ".join(rest), poll))
        else:
            raise ConfigError("line %d: unknown directive %r" % (lineno, parts[0]))

    if topology is None:
        raise ConfigError("%s: no topology line" % path)
    if not queries:
        raise ConfigError("%s: no query line" % path)
    spec = ScenarioSpec(topology=topology, streams=streams, queries=queries, seed=seed)
    _validate_scenario(spec, path)
    return spec


def _validate_scenario(spec: ScenarioSpec, origin: str) -> None:
    known_aliases = {s.alias for s in spec.streams}
    bindings = spec.bindings()
    for q in spec.queries:
        try:
            tree = create_operator_graph(q.text, bindings or None)
        except Exception as err:
            raise ConfigError("%s: query %s does not parse: %s" % (origin, q.query_id, err))
        for alias in tree.stream_aliases():
            if alias not in known_aliases:
                raise ConfigError(
                    "%s: query %s references unbound stream %s" % (origin, q.query_id, alias)
                )
        if q.consumer not in spec.topology.nodes:
            raise ConfigError(
                "%s: query %s names unknown consumer %s" % (origin, q.query_id, q.consumer)
            )
    modes = {q.mode for q in spec.queries}
    if len(modes) > 1:
        raise ConfigError("%s: queries mix deployment modes %s" % (origin, sorted(modes)))
    for s in spec.streams:
        producer = Name.from_uri(s.uri).components[1]
        if producer not in spec.topology.nodes:
            raise ConfigError("%s: stream %s names unknown producer %s" % (origin, s.alias, producer))


def override_scenario(
    spec: ScenarioSpec, topology: Optional[str] = None, mode: Optional[str] = None
) -> ScenarioSpec:
    """Re-target a scenario at another preset topology and/or deployment mode."""
    topo = load_topology(topology) if topology else spec.topology
    queries = [replace(q, mode=mode) if mode else q for q in spec.queries]
    out = ScenarioSpec(topology=topo, streams=spec.streams, queries=queries, seed=spec.seed)
    _validate_scenario(out, "override")
    return out


# ---------------------------------------------------------------------------
# dataset replay and generation


def replay_dataset(stream: StreamDef) -> tuple[list[tuple[float, DataStream]], int]:
    """Turn a CSV into (emission time, packet) pairs, earliest first.

    Rows that arrive with a timestamp below their predecessor are sorted back
    into place and counted as reorder warnings rather than rejected.
    """
    columns = SCHEMA_COLUMNS.get(stream.schema)
    if columns is None:
        raise SchemaMismatch("unknown schema %r" % stream.schema)
    path = Path(stream.csv_path)
    if not path.exists():
        raise SchemaMismatch("dataset not found: %s" % stream.csv_path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != columns:
            raise SchemaMismatch(
                "%s: header %s does not match %s schema %s"
                % (stream.csv_path, header, stream.schema, columns)
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(columns):
                raise SchemaMismatch(
                    "%s: line %d has %d fields, expected %d"
                    % (stream.csv_path, lineno, len(row), len(columns))
                )
            try:
                values = (int(row[0]),) + tuple(float(v) for v in row[1:])
            except ValueError as err:
                raise SchemaMismatch("%s: line %d: %s" % (stream.csv_path, lineno, err))
            rows.append(values)

    warnings = 0
    high = None
    for values in rows:
        if high is not None and values[0] < high:
            warnings += 1
        else:
            high = values[0]
    rows.sort(key=lambda v: v[0])
    name = Name.from_uri(stream.uri)
    schedule = [
        (v[0] / stream.rate, DataStream(stream_name=name, tuple=Tuple.from_values(stream.schema, v)))
        for v in rows
    ]
    return schedule, warnings


def generate_gps_csv(
    path: str, seed: int = 42, s_id: int = 1, rows: int = 600,
    start_ts: int = 1000, step_ms: int = 1000,
) -> None:
    """Seeded position trace: a bounded random walk over a small urban box."""
    rng = random.Random("gps:%d:%d" % (seed, s_id))
    lat, lon = 49.87 + 0.02 * rng.random(), 8.63 + 0.02 * rng.random()
    distance = 0.0
    lines = [",".join(SCHEMA_COLUMNS["gps"])]
    for k in range(rows):
        ts = start_ts + k * step_ms
        lat = min(49.9199, max(49.8601, lat + rng.uniform(-8e-4, 8e-4)))
        lon = min(8.6899, max(8.6101, lon + rng.uniform(-8e-4, 8e-4)))
        altitude = 120.0 + 40.0 * rng.random()
        accuracy = 1.0 + 9.0 * rng.random()
        speed = 30.0 * rng.random()
        distance += speed * step_ms / 3600000.0
        lines.append(
            "%d,%d,%.6f,%.6f,%.2f,%.2f,%.4f,%.2f"
            % (ts, s_id, lat, lon, altitude, accuracy, distance, speed)
        )
    Path(path).write_text("\n".join(lines) + "\n")


def generate_plug_csv(
    path: str, seed: int = 42, plug_id: int = 1, rows: int = 360,
    start_ts: int = 10000, step_ms: int = 10000,
) -> None:
    """Seeded load trace that ramps upward so forecasts cross round thresholds."""
    rng = random.Random("plug:%d:%d" % (seed, plug_id))
    lines = [",".join(SCHEMA_COLUMNS["plug"])]
    for k in range(rows):
        ts = start_ts + k * step_ms
        ramp = 10.0 + 20.0 * k / max(rows - 1, 1)
        value = min(40.0, max(0.0, ramp + rng.uniform(-3.0, 3.0)))
        lines.append(
            "%d,%d,%.3f,1,%d,1,%d" % (ts, plug_id, value, plug_id, plug_id)
        )
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# metrics


@dataclass
class QueryMetrics:
    query_id: str
    mode: str
    graph_ms: float = 0.0        # real (wall-clock) parse time
    placement_ms: float = 0.0    # simulated coordination + real planning
    communication_ms: float = 0.0  # simulated delivery of the first result
    notifications: int = 0
    control_packets: int = 0
    issued_t: float = 0.0
    deployed_t: float = 0.0
    first_result_t: Optional[float] = None

    @property
    def total_ms(self) -> float:
        return self.graph_ms + self.placement_ms + self.communication_ms


@dataclass
class Metrics:
    queries: dict[str, QueryMetrics] = field(default_factory=dict)
    nodes: dict[str, dict[str, int]] = field(default_factory=dict)
    link_drops: dict[str, int] = field(default_factory=dict)
    reorder_warnings: int = 0
    events: list[tuple[str, str, dict]] = field(default_factory=list)
    app_deliveries: dict[str, list[tuple[float, Packet]]] = field(default_factory=dict)
    trace: list[str] = field(default_factory=list)
    trace_hash: str = ""
    end_time: float = 0.0


def emit_metrics(metrics: Metrics, path: str) -> None:
    """Write the per-query delay breakdown; totals equal the summed parts."""
    lines = [
        "# total_ms = graph_ms + placement_ms + communication_ms",
        "# graph_ms is real parse time; placement_ms mixes simulated coordination"
        " with real planning; communication_ms is simulated delivery",
        "query,total_ms,graph_ms,placement_ms,communication_ms",
    ]
    for qid in sorted(metrics.queries):
        q = metrics.queries[qid]
        g = round(q.graph_ms, 3)
        p = round(q.placement_ms, 3)
        c = round(q.communication_ms, 3)
        lines.append("%s,%.3f,%.3f,%.3f,%.3f" % (qid, g + p + c, g, p, c))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# the simulator proper


def _summary(p: Packet) -> str:
    if isinstance(p, AddQueryInterest):
        return "AddQueryInterest nonce=%s q=%s" % (p.nonce, p.query)
    if isinstance(p, RemoveQueryInterest):
        return "RemoveQueryInterest nonce=%s q=%s" % (p.nonce, p.query)
    if isinstance(p, DataStream):
        return "DataStream %s ts=%d" % (p.stream_name.to_uri(), p.tuple.ts)
    if isinstance(p, Data):
        return "Data %s ts=%d" % (p.name.to_uri(), p.ts)
    if isinstance(p, Interest):
        return "Interest %s" % p.name.to_uri()
    return type(p).__name__


class Simulator:
    """Event loop, links, and per-node serial processing around the engines."""

    def __init__(self, spec: ScenarioSpec, collect_trace: bool = True):
        self.spec = spec
        self.topo = spec.topology
        self.collect_trace = collect_trace
        self.t = 0.0
        self._seq = 0
        self._heap: list[tuple[float, int, Callable[[], None]]] = []
        self.trace: list[str] = []
        self.events: list[tuple[str, str, dict]] = []
        self.app: dict[str, list[tuple[float, Packet]]] = {}
        self.link_drops: dict[str, int] = {}
        self.busy_until: dict[str, float] = {n: 0.0 for n in self.topo.nodes}
        self._ctx_node: Optional[str] = None
        self._ctx_charges = 0.0
        self._ctx_out: list[tuple[int, Packet]] = []
        # (node, query text) -> query-interest packets sent on network faces
        self.control_sends: dict[tuple[str, str], int] = {}
        # directed link -> list of live packet uids awaiting delivery
        self._in_flight: dict[tuple[str, str], list[tuple[int, Packet]]] = {}
        self._dead: set[int] = set()
        self._link_by_pair: dict[tuple[str, str], TopoLink] = {}
        for l in self.topo.link_list:
            self._link_by_pair[(l.a, l.b)] = l
            self._link_by_pair[(l.b, l.a)] = l

        mode = spec.queries[0].mode if spec.queries else "centralized"
        bindings = spec.bindings()
        self.engines: dict[str, Engine] = {}
        for nid, tnode in sorted(self.topo.nodes.items()):
            faces = [
                FaceDef(i + 1, peer) for i, peer in enumerate(self.topo.neighbors(nid))
            ]
            cfg = NodeConfig(
                node_id=nid,
                role=tnode.role,
                faces=faces,
                streams=bindings,
                fib_routes=self._routes_for(nid, faces),
                proc_delay_ms=tnode.proc_delay_ms,
                mode=mode,
                topology=self.topo if tnode.role == "broker" else None,
            )
            self.engines[nid] = Engine(cfg, self)

    # routing: fewest-hop next-hop toward every other node, plus each
    # producer pushing its own stream toward its lowest-id broker neighbor
    def _routes_for(self, nid: str, faces: list[FaceDef]) -> list[tuple[str, int]]:
        face_of = {f.peer: f.face_id for f in faces}
        routes = []
        for target in sorted(self.topo.nodes):
            if target == nid:
                continue
            hop = self._next_hop(nid, target)
            if hop is not None:
                routes.append(("/node/%s" % target, face_of[hop]))
        if self.topo.nodes[nid].role == "producer":
            brokers = [
                p for p in self.topo.neighbors(nid)
                if self.topo.nodes[p].role == "broker"
            ]
            if brokers:
                for s in self.spec.streams:
                    if Name.from_uri(s.uri).components[1] == nid:
                        routes.append((s.uri, face_of[brokers[0]]))
        return routes

    def _next_hop(self, src: str, dst: str) -> Optional[str]:
        if src == dst:
            return None
        parents: dict[str, Optional[str]] = {src: None}
        order = [src]
        i = 0
        while i < len(order):
            n = order[i]
            i += 1
            for peer in self.topo.neighbors(n):
                if peer not in parents:
                    parents[peer] = n
                    order.append(peer)
                    if peer == dst:
                        node = peer
                        while parents[node] != src:
                            node = parents[node]
                        return node
        return None

    # -- Services protocol ---------------------------------------------------

    def send(self, node_id: str, face_id: int, packet: Packet) -> None:
        self._ctx_out.append((face_id, packet))

    def now(self) -> int:
        return int(self.t)

    def schedule(self, delay_ms: float, fn: Callable[[], None]) -> None:
        node = self._ctx_node
        self._at(self.t + delay_ms, lambda: self._exec(node, fn))

    def local_delay_ms(self, node_id: str) -> float:
        return self.topo.node_delay(node_id)

    def charge(self, node_id: str, ms: float) -> None:
        self._ctx_charges += ms

    def event(self, node_id: str, kind: str, payload: dict) -> None:
        self.events.append((node_id, kind, payload))
        clean = {k: v for k, v in payload.items() if not k.endswith("_real_ms")}
        self._trace("%s event %s %s" % (node_id, kind, json.dumps(clean, sort_keys=True)))

    # -- internals -------------------------------------------------------------

    def _trace(self, text: str) -> None:
        if self.collect_trace:
            self.trace.append("%.3f %s" % (self.t, text))

    def _at(self, t: float, fn: Callable[[], None]) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (max(t, self.t), self._seq, fn))

    def _exec(self, node: str, thunk: Callable[[], None]) -> None:
        """Run a handler in a serial processing slot on `node`."""
        if self.busy_until[node] > self.t:
            self._at(self.busy_until[node], lambda: self._exec(node, thunk))
            return
        self._ctx_node, self._ctx_charges, self._ctx_out = node, 0.0, []
        try:
            thunk()
        except Exception as err:  # keep the run alive, surface in the trace
            self.engines[node]._bump("errors")
            self._trace("%s error %s: %s" % (node, type(err).__name__, err))
        out = self._ctx_out
        end = self.t + self.topo.node_delay(node) + self._ctx_charges
        self.busy_until[node] = end
        self._ctx_node, self._ctx_out = None, []
        for face_id, packet in out:
            self._dispatch(node, face_id, packet, end)

    def _dispatch(self, node: str, face_id: int, packet: Packet, at: float) -> None:
        if face_id == APP_FACE:
            self.app.setdefault(node, []).append((at, packet))
            if self.collect_trace:
                self.trace.append("%.3f %s app %s" % (at, node, _summary(packet)))
            return
        if isinstance(packet, (AddQueryInterest, RemoveQueryInterest)):
            ck = (node, packet.query)
            self.control_sends[ck] = self.control_sends.get(ck, 0) + 1
        peer = self.engines[node].faces[face_id].peer
        link = self._link_by_pair[(node, peer)]
        key = (node, peer)
        flight = self._in_flight.setdefault(key, [])
        self._seq += 1
        uid = self._seq
        if len(flight) >= link.capacity:
            tag = "%s->%s" % (node, peer)
            victim = next((e for e in flight if isinstance(e[1], DataStream)), None)
            if victim is not None:
                flight.remove(victim)
                self._dead.add(victim[0])
                self.link_drops[tag] = self.link_drops.get(tag, 0) + 1
                if self.collect_trace:
                    self.trace.append(
                        "%.3f %s drop uid=%d %s link=%s reason=capacity"
                        % (at, node, victim[0], _summary(victim[1]), tag)
                    )
            elif isinstance(packet, DataStream):
                # nothing older to shed: the overflowing stream packet is lost
                self.link_drops[tag] = self.link_drops.get(tag, 0) + 1
                if self.collect_trace:
                    self.trace.append(
                        "%.3f %s drop uid=%d %s link=%s reason=capacity"
                        % (at, node, uid, _summary(packet), tag)
                    )
                return
        flight.append((uid, packet))
        if self.collect_trace:
            self.trace.append(
                "%.3f %s send uid=%d %s -> %s" % (at, node, uid, _summary(packet), peer)
            )
        self._at(at + link.delay_ms, lambda: self._deliver(key, uid, packet))

    def _deliver(self, key: tuple[str, str], uid: int, packet: Packet) -> None:
        if uid in self._dead:
            self._dead.discard(uid)
            return
        flight = self._in_flight.get(key, [])
        entry = next((e for e in flight if e[0] == uid), None)
        if entry is not None:
            flight.remove(entry)
        src, dst = key
        self._trace("%s recv uid=%d %s <- %s" % (dst, uid, _summary(packet), src))
        face = next(
            f.face_id for f in self.engines[dst].faces.values() if f.peer == src
        )
        self._exec(dst, lambda: self.engines[dst].handle_packet(packet, face))

    def inject(self, t: float, node: str, packet: Packet) -> None:
        """Schedule an application-originated packet at `node`."""

        def fire() -> None:
            self._trace("%s recv uid=0 %s <- app" % (node, _summary(packet)))
            self._exec(node, lambda: self.engines[node].handle_packet(packet, APP_FACE))

        self._at(t, fire)

    def run(self) -> None:
        while self._heap:
            t, _, fn = heapq.heappop(self._heap)
            self.t = t
            fn()


def run_scenario(spec: ScenarioSpec, collect_trace: bool = True) -> Metrics:
    sim = Simulator(spec, collect_trace=collect_trace)
    bindings = spec.bindings()
    reorder = 0
    for stream in spec.streams:
        schedule, warnings = replay_dataset(stream)
        reorder += warnings
        producer = Name.from_uri(stream.uri).components[1]
        for emit_t, packet in schedule:
            sim.inject(emit_t, producer, packet)

    canon: dict[str, str] = {}
    for q in spec.queries:
        tree = create_operator_graph(q.text, bindings or None)
        canon[q.query_id] = canonical_text(tree)
        sim.inject(q.start_ms, q.consumer, AddQueryInterest(query=q.text, nonce="%s:1" % q.query_id))
        if q.poll_ms:
            k = 1
            t = q.start_ms + q.poll_ms
            stop = q.stop_ms if q.stop_ms is not None else t - 1
            while t < stop:
                k += 1
                sim.inject(t, q.consumer, RemoveQueryInterest(query=q.text, nonce="%s:%dr" % (q.query_id, k)))
                sim.inject(t, q.consumer, AddQueryInterest(query=q.text, nonce="%s:%d" % (q.query_id, k)))
                t += q.poll_ms
        if q.stop_ms is not None:
            sim.inject(
                q.stop_ms, q.consumer, RemoveQueryInterest(query=q.text, nonce="%s:end" % q.query_id)
            )
    sim.run()

    metrics = Metrics(
        nodes={n: dict(e.counters) for n, e in sim.engines.items()},
        link_drops=dict(sim.link_drops),
        reorder_warnings=reorder,
        events=sim.events,
        app_deliveries=sim.app,
        trace=sim.trace,
        end_time=sim.t,
    )
    metrics.trace_hash = hashlib.sha256("\n".join(sim.trace).encode("utf-8")).hexdigest()

    for q in spec.queries:
        qm = QueryMetrics(query_id=q.query_id, mode=q.mode, issued_t=float(q.start_ms))
        unsalted = query_hash(canon[q.query_id])
        prefix = "%s:" % q.query_id
        for node, kind, payload in sim.events:
            if not str(payload.get("nonce", "")).startswith(prefix):
                continue
            if kind == "query_accepted" and qm.graph_ms == 0.0:
                qm.graph_ms = payload["graph_real_ms"]
            elif kind == "query_deployed" and qm.deployed_t == 0.0:
                qm.deployed_t = float(payload["t1"])
                qm.placement_ms = payload["placement_sim_ms"] + payload["plan_real_ms"]
        for at, packet in sim.app.get(q.consumer, []):
            if isinstance(packet, Data) and packet.name.components[:2] == ("ce", unsalted):
                qm.notifications += 1
                if qm.first_result_t is None:
                    qm.first_result_t = at
        base = qm.deployed_t or qm.issued_t
        if qm.first_result_t is not None:
            qm.communication_ms = max(qm.first_result_t - base, 0.0)
        else:
            qm.communication_ms = max(sim.t - base, 0.0)
        metrics.queries[q.query_id] = qm

    # consumer-originated control traffic, attributed by query text
    for q in spec.queries:
        metrics.queries[q.query_id].control_packets = sim.control_sends.get(
            (q.consumer, q.text), 0
        )
    return metrics
