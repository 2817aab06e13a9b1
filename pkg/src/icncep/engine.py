"""Per-node data plane: packet classification and query coordination.

A node runs one logical event loop. Every packet enters through
`handle_packet(packet, in_face)`; handlers run to completion and never block
on remote responses. Remote round-trips (delay probes, operator deployment)
are driven by reply hooks keyed on the Interest name plus scheduled timeouts.

Name conventions produced locally:
  /node/<id>/delay            advertised processing + queueing delay
  /node/<id>/deploy/<blob>    operator deployment order (base64url JSON)
  /state/<qhash>/<idx>        persisted window state (content store)
  /state/<qhash>/<idx>/out    intermediate result stream between brokers
  /ce/<qhash>/<ts>            consumer notification
  /nack/<nonce>               rejection of a malformed query
"""

from __future__ import annotations

import base64
import json
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

from .operators import (
    EmptyWindow,
    OutOfOrderTuple,
    PredictState,
    WindowState,
    aggregate_eval,
    filter_eval,
    heatmap_eval,
    join_eval,
    predict_eval,
    sequence_eval,
    window_insert,
)
from .packet import (
    AddQueryInterest,
    Data,
    DataStream,
    Interest,
    Name,
    Packet,
    RemoveQueryInterest,
    Tuple,
)
from .placement import DelayEntry, DelayMap, NoPath, assign_operators, build_path
from .query import (
    OperatorNode,
    QueryError,
    StreamBinding,
    canonical_text,
    create_operator_graph,
    query_hash,
)
from .tables import ContentStore, ForwardingInformationBase, PendingInterestTable

__all__ = [
    "APP_FACE",
    "Face",
    "FaceDef",
    "NodeConfig",
    "Services",
    "Engine",
    "PROBE_TIMEOUT_MS",
    "DEPLOY_TIMEOUT_MS",
    "EVAL_COST_MS",
]

APP_FACE = 0
PROBE_TIMEOUT_MS = 200.0
DEPLOY_TIMEOUT_MS = 400.0

# simulated per-evaluation compute charge, by operator kind
EVAL_COST_MS = {
    "WINDOW": 0.05,
    "FILTER": 0.05,
    "JOIN": 0.2,
    "SEQUENCE": 0.1,
    "SUM": 0.1,
    "MIN": 0.1,
    "MAX": 0.1,
    "AVG": 0.1,
    "COUNT": 0.1,
    "HEATMAP": 40.0,
    "PREDICT": 30.0,
}


@dataclass(frozen=True)
class FaceDef:
    face_id: int
    peer: str
    outstanding_cap: int = 64


@dataclass
class Face:
    face_id: int
    peer: str
    outstanding_cap: int = 64


@dataclass
class NodeConfig:
    node_id: str
    role: str  # broker | producer | consumer
    faces: list[FaceDef] = field(default_factory=list)
    streams: dict[str, StreamBinding] = field(default_factory=dict)
    fib_routes: list[tuple[str, int]] = field(default_factory=list)
    proc_delay_ms: float = 1.0
    mode: str = "centralized"
    topology: object = None  # handle for planning; brokers only


class Services(Protocol):
    """What the engine needs from its host (the simulator or a test double)."""

    def send(self, node_id: str, face_id: int, packet: Packet) -> None: ...

    def now(self) -> int: ...

    def schedule(self, delay_ms: float, fn: Callable[[], None]) -> None: ...

    def local_delay_ms(self, node_id: str) -> float: ...

    def charge(self, node_id: str, ms: float) -> None: ...

    def event(self, node_id: str, kind: str, payload: dict) -> None: ...


@dataclass
class OpInstance:
    salted: str
    unsalted: str
    key: str  # canonical query text, the PIT/CS key
    node: OperatorNode
    parent_idx: Optional[int]
    parent_host: Optional[str]
    win_state: Optional[WindowState] = None
    predict_state: Optional[PredictState] = None
    left_rows: Optional[list] = None
    left_wm: int = -1
    right_rows: Optional[list] = None
    right_wm: int = -1
    last_emit: int = -1


@dataclass
class _PendingPlan:
    token: int
    nonce: str
    key: str
    canonical: str
    tree: OperatorNode
    unsalted: str
    salted: str
    mode: str
    t0: int
    graph_real_ms: float
    stage: str = "probe"
    awaiting: dict[str, str] = field(default_factory=dict)  # uri -> broker id
    delays: dict[str, float] = field(default_factory=dict)
    plan_real_ms: float = 0.0
    assignments: dict[int, str] = field(default_factory=dict)
    path: list[str] = field(default_factory=list)
    pinned: list[int] = field(default_factory=list)


class Engine:
    def __init__(self, config: NodeConfig, services: Services):
        self.config = config
        self.node_id = config.node_id
        self.role = config.role
        self.services = services

        self.cs = ContentStore()
        self.pit = PendingInterestTable()
        self.fib = ForwardingInformationBase()
        self.faces: dict[int, Face] = {
            APP_FACE: Face(APP_FACE, "app", outstanding_cap=2 ** 30)
        }
        self._face_of_peer: dict[str, int] = {}
        for fd in config.faces:
            self.faces[fd.face_id] = Face(fd.face_id, fd.peer, fd.outstanding_cap)
            self._face_of_peer[fd.peer] = fd.face_id
        for prefix, face_id in config.fib_routes:
            self.fib.add_route(Name.from_uri(prefix), face_id)

        self.instances: dict[tuple[str, int], OpInstance] = {}
        self._known_streams = {b.name.to_uri() for b in config.streams.values()}
        self._stream_feeds: dict[str, list[tuple[str, int]]] = {}
        self._child_feeds: dict[tuple[str, int], tuple[str, int]] = {}
        self._trees: dict[str, OperatorNode] = {}  # salted hash -> local parse
        self.qmap: dict[str, set[str]] = {}  # unsalted hash -> PIT keys
        self.high_water: dict[str, int] = {}  # stream uri -> newest tuple ts
        self._reply_hooks: dict[str, Callable[[Data], None]] = {}
        self._pending: dict[int, _PendingPlan] = {}
        self._next_token = 1
        self.counters: dict[str, int] = {}

    # -- small helpers ------------------------------------------------------

    def _bump(self, key: str, n: int = 1) -> None:
        self.counters[key] = self.counters.get(key, 0) + n

    def _send(self, face_id: int, packet: Packet) -> None:
        self._bump("sent")
        self.services.send(self.node_id, face_id, packet)

    def _event(self, kind: str, **payload) -> None:
        self.services.event(self.node_id, kind, payload)

    def _now(self) -> int:
        return self.services.now()

    def _fib_faces(self, name: Name, exclude: Optional[int] = None) -> list[int]:
        entry = self.fib.longest_prefix(name)
        if entry is None:
            return []
        return sorted(f for f in entry.faces if f != exclude and f != APP_FACE)

    def _flood_faces(self, exclude: int) -> list[int]:
        return sorted(
            f for f in self.faces if f not in (APP_FACE, exclude)
        )

    # -- dispatch -----------------------------------------------------------

    def handle_packet(self, packet: Packet, in_face: int) -> None:
        self._bump("received")
        if isinstance(packet, AddQueryInterest):
            self.handle_add_query_interest(packet, in_face)
        elif isinstance(packet, RemoveQueryInterest):
            self.handle_remove_query_interest(packet, in_face)
        elif isinstance(packet, DataStream):
            self.handle_data_stream(packet, in_face)
        elif isinstance(packet, Interest):
            self.handle_interest(packet, in_face)
        elif isinstance(packet, Data):
            self.handle_data(packet, in_face)
        else:
            self._bump("dropped")

    # -- query interests ----------------------------------------------------

    def handle_add_query_interest(self, p: AddQueryInterest, in_face: int) -> None:
        started = time.perf_counter()
        try:
            tree = create_operator_graph(p.query, self.config.streams or None)
        except QueryError as err:
            nack = Data(
                name=Name(("nack", p.nonce)),
                payload=str(err).encode("utf-8"),
                ts=self._now(),
            )
            self._bump("nacks")
            self._bump("consumed")
            self._send(in_face, nack)
            return
        graph_real_ms = (time.perf_counter() - started) * 1000.0
        key = canonical_text(tree)
        unsalted = query_hash(key)
        self.qmap.setdefault(unsalted, set()).add(key)

        # (a) fresh content store hit answers immediately, no state change
        min_ts = 0
        for alias in tree.stream_aliases():
            binding = self.config.streams.get(alias)
            if binding is not None:
                min_ts = max(min_ts, self.high_water.get(binding.name.to_uri(), 0))
        hit = self.cs.lookup(key, min_ts=min_ts)
        if hit is not None:
            reply = Data(
                name=Name(("ce", unsalted, str(hit.logical_ts))),
                payload=hit.payload,
                ts=hit.logical_ts,
            )
            self._bump("cs_replies")
            self._bump("consumed")
            self._send(in_face, reply)
            return

        # (b) already pending: record the extra face and stop
        if self.pit.lookup(key) is not None:
            self.pit.add_face(key, in_face, self._now())
            self._bump("consumed")
            return

        # (c) take the query: brokers coordinate it, endpoints forward it
        self.pit.add_face(key, in_face, self._now())
        if self.role == "broker":
            self._bump("consumed")
            self._coordinate(p.nonce, key, tree, unsalted, graph_real_ms)
        else:
            flood = self._flood_faces(exclude=in_face)
            for f in flood:
                self._send(f, p)
            self._bump("forwarded" if flood else "consumed")

    def handle_remove_query_interest(self, p: RemoveQueryInterest, in_face: int) -> None:
        try:
            key = canonical_text(create_operator_graph(p.query, self.config.streams or None))
        except QueryError:
            self._bump("dropped")
            return
        if self.pit.lookup(key) is None:
            self._bump("dropped")
            return
        self.pit.remove_face(key, in_face)
        flood = self._flood_faces(exclude=in_face)
        for f in flood:
            self._send(f, p)
        self._bump("forwarded" if flood else "consumed")

    # -- coordination -------------------------------------------------------

    def _coordinate(
        self, nonce: str, key: str, tree: OperatorNode, unsalted: str, graph_real_ms: float
    ) -> None:
        salted = query_hash(key, salt=self.node_id)
        self._trees.setdefault(salted, tree)
        token = self._next_token
        self._next_token += 1
        pending = _PendingPlan(
            token=token,
            nonce=nonce,
            key=key,
            canonical=key,
            tree=tree,
            unsalted=unsalted,
            salted=salted,
            mode=self.config.mode,
            t0=self._now(),
            graph_real_ms=graph_real_ms,
        )
        self._pending[token] = pending
        self._event(
            "query_accepted",
            nonce=nonce,
            key=key,
            unsalted=unsalted,
            salted=salted,
            t0=pending.t0,
            graph_real_ms=graph_real_ms,
            mode=pending.mode,
        )
        if pending.mode == "centralized" or self.config.topology is None:
            self._plan_and_deploy(pending, delays=None)
            return
        # probe every other broker's advertised delay
        pending.stage = "probe"
        for broker in self.config.topology.broker_ids():
            if broker == self.node_id:
                pending.delays[broker] = self.services.local_delay_ms(self.node_id)
                continue
            name = Name(("node", broker, "delay"))
            pending.awaiting[name.to_uri()] = broker
            self._originate_interest(name, self._probe_reply(token))
        if not pending.awaiting:
            self._plan_and_deploy(pending, delays=pending.delays)
        else:
            self.services.schedule(PROBE_TIMEOUT_MS, self._probe_timeout(token))

    def _probe_reply(self, token: int) -> Callable[[Data], None]:
        def on_reply(data: Data) -> None:
            pending = self._pending.get(token)
            if pending is None or pending.stage != "probe":
                return
            uri = data.name.to_uri()
            broker = pending.awaiting.pop(uri, None)
            if broker is not None:
                try:
                    pending.delays[broker] = float(data.payload.decode("utf-8"))
                except ValueError:
                    pending.delays[broker] = float("inf")
            if not pending.awaiting:
                self._plan_and_deploy(pending, delays=pending.delays)

        return on_reply

    def _probe_timeout(self, token: int) -> Callable[[], None]:
        def fire() -> None:
            pending = self._pending.get(token)
            if pending is None or pending.stage != "probe":
                return
            for uri, broker in pending.awaiting.items():
                pending.delays[broker] = float("inf")
                self._reply_hooks.pop(uri, None)
            pending.awaiting.clear()
            self._plan_and_deploy(pending, delays=pending.delays)

        return fire

    def _ingress_broker(self, producer: str) -> Optional[str]:
        topo = self.config.topology
        if topo is None:
            return self.node_id
        brokers = set(topo.broker_ids())
        if producer in brokers:
            return producer
        best = None
        for a, b, _ in topo.links():
            if a == producer and b in brokers:
                best = b if best is None else min(best, b)
            elif b == producer and a in brokers:
                best = a if best is None else min(best, a)
        return best

    def _plan_and_deploy(self, pending: _PendingPlan, delays: Optional[dict]) -> None:
        pending.stage = "deploy"
        tree = pending.tree
        started = time.perf_counter()
        try:
            if pending.mode == "centralized" or delays is None:
                plan = assign_operators(tree, [self.node_id], "centralized")
                ingress = {}
            else:
                topo = self.config.topology
                dm = DelayMap(
                    nodes={b: DelayEntry(d, self._now()) for b, d in delays.items()},
                    links={
                        tuple(sorted((a, b))): float(d) for a, b, d in topo.links()
                    },
                )
                producers = []
                ingress = {}
                for alias in sorted(tree.stream_aliases()):
                    binding = self.config.streams.get(alias)
                    if binding is None:
                        continue
                    producer = binding.name.components[1]
                    producers.append(producer)
                    home = self._ingress_broker(producer)
                    if home is not None:
                        ingress[alias] = home
                path = build_path(dm, producers or [self.node_id], self.node_id)
                plan = assign_operators(tree, path, "distributed", ingress=ingress)
        except NoPath as err:
            self._pending.pop(pending.token, None)
            self._event("plan_failed", nonce=pending.nonce, reason=str(err))
            return
        pending.plan_real_ms = (time.perf_counter() - started) * 1000.0
        if pending.mode == "centralized":
            pending.plan_real_ms = 0.0
        pending.assignments = dict(plan.assignments)
        pending.path = list(plan.path)
        pending.pinned = sorted(plan.pinned)

        orders = self._deployment_orders(pending, plan, ingress)
        self._install_assignment(
            pending.salted,
            pending.unsalted,
            pending.key,
            pending.canonical,
            plan.assignments,
            orders.pop(self.node_id, {}).get("routes", []),
        )
        if not orders:
            self._finish_deploy(pending)
            return
        for target, doc in sorted(orders.items()):
            blob = base64.urlsafe_b64encode(
                json.dumps(doc, sort_keys=True).encode("utf-8")
            ).decode("ascii")
            name = Name(("node", target, "deploy", blob))
            pending.awaiting[name.to_uri()] = target
            self._originate_interest(name, self._deploy_ack(pending.token))
        self.services.schedule(DEPLOY_TIMEOUT_MS, self._deploy_timeout(pending.token))

    def _deployment_orders(self, pending, plan, ingress) -> dict[str, dict]:
        """Per-node deployment documents: assigned indices plus hop routes."""
        tree = pending.tree
        assign = plan.assignments
        routes: dict[str, list[tuple[str, str]]] = {}

        def add_route_path(src: str, dst: str, prefix: str) -> None:
            for a, b in zip(self._hops(src, dst), self._hops(src, dst)[1:]):
                routes.setdefault(a, []).append((prefix, b))

        for node in tree.walk():
            host = assign[node.index]
            if node.is_leaf:
                binding = self.config.streams.get(node.stream_alias)
                if binding is None:
                    continue
                home = ingress.get(node.stream_alias) if ingress else None
                if home and home != host:
                    add_route_path(home, host, binding.name.to_uri())
            for child in node.children:
                child_host = assign[child.index]
                if child_host != host:
                    prefix = "/state/%s/%d" % (pending.salted, child.index)
                    add_route_path(child_host, host, prefix)

        targets = set(assign.values()) | set(routes)
        orders: dict[str, dict] = {}
        for target in targets:
            mine = sorted(i for i, h in assign.items() if h == target)
            if target != self.node_id and not mine and target not in routes:
                continue
            orders[target] = {
                "q": pending.canonical,
                "salted": pending.salted,
                "unsalted": pending.unsalted,
                "assign": {str(i): h for i, h in assign.items()},
                "mine": mine,
                "routes": sorted(set(routes.get(target, []))),
            }
        return orders

    def _hops(self, src: str, dst: str) -> list[str]:
        """Fewest-hop node path over the static topology, smallest ids first."""
        if src == dst:
            return [src]
        topo = self.config.topology
        adj: dict[str, list[str]] = {}
        for a, b, _ in topo.links():
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
        seen = {src}
        frontier = [[src]]
        while frontier:
            nxt = []
            for path in frontier:
                for peer in sorted(adj.get(path[-1], [])):
                    if peer in seen:
                        continue
                    if peer == dst:
                        return path + [peer]
                    seen.add(peer)
                    nxt.append(path + [peer])
            frontier = nxt
        raise NoPath("%s cannot reach %s" % (src, dst))

    def _deploy_ack(self, token: int) -> Callable[[Data], None]:
        def on_ack(data: Data) -> None:
            pending = self._pending.get(token)
            if pending is None or pending.stage != "deploy":
                return
            pending.awaiting.pop(data.name.to_uri(), None)
            if not pending.awaiting:
                self._finish_deploy(pending)

        return on_ack

    def _deploy_timeout(self, token: int) -> Callable[[], None]:
        def fire() -> None:
            pending = self._pending.get(token)
            if pending is None or pending.stage != "deploy":
                return
            self._pending.pop(token, None)
            self._event(
                "deploy_timeout",
                nonce=pending.nonce,
                missing=sorted(pending.awaiting.values()),
            )

        return fire

    def _finish_deploy(self, pending: _PendingPlan) -> None:
        self._pending.pop(pending.token, None)
        pending.stage = "done"
        t1 = self._now()
        self._event(
            "query_deployed",
            nonce=pending.nonce,
            salted=pending.salted,
            unsalted=pending.unsalted,
            t1=t1,
            placement_sim_ms=float(t1 - pending.t0),
            plan_real_ms=pending.plan_real_ms,
            graph_real_ms=pending.graph_real_ms,
            mode=pending.mode,
            assignments={str(i): h for i, h in sorted(pending.assignments.items())},
            path=pending.path,
            pinned=pending.pinned,
        )

    # -- deployment intake ---------------------------------------------------

    def _install_deploy_blob(self, blob: str) -> None:
        doc = json.loads(base64.urlsafe_b64decode(blob.encode("ascii")))
        assignments = {int(i): h for i, h in doc["assign"].items()}
        self._install_assignment(
            doc["salted"],
            doc["unsalted"],
            doc["q"],
            doc["q"],
            assignments,
            [tuple(r) for r in doc.get("routes", [])],
        )

    def _install_assignment(
        self,
        salted: str,
        unsalted: str,
        key: str,
        canonical: str,
        assignments: dict[int, str],
        routes: list[tuple[str, str]],
    ) -> None:
        for prefix, next_hop in routes:
            face = self._face_of_peer.get(next_hop)
            if face is not None:
                self.fib.add_route(Name.from_uri(prefix), face)
        tree = self._trees.get(salted)
        if tree is None:
            tree = create_operator_graph(canonical, self.config.streams or None)
            self._trees[salted] = tree
        parent_of: dict[int, Optional[int]] = {tree.index: None}
        for node in tree.walk():
            for child in node.children:
                parent_of[child.index] = node.index
        by_index = {node.index: node for node in tree.walk()}
        for idx, host in assignments.items():
            if host != self.node_id or (salted, idx) in self.instances:
                continue
            node = by_index[idx]
            pidx = parent_of[idx]
            inst = OpInstance(
                salted=salted,
                unsalted=unsalted,
                key=key,
                node=node,
                parent_idx=pidx,
                parent_host=assignments[pidx] if pidx is not None else None,
            )
            if node.kind == "WINDOW":
                inst.win_state = WindowState(salted, idx, (), node.params[1])
                binding = self.config.streams.get(node.stream_alias)
                if binding is not None:
                    self._stream_feeds.setdefault(binding.name.to_uri(), []).append(
                        (salted, idx)
                    )
            elif node.kind == "PREDICT":
                inst.predict_state = PredictState()
            self.instances[(salted, idx)] = inst
            for child in node.children:
                self._child_feeds[(salted, child.index)] = (salted, idx)

    # -- data streams and evaluation ----------------------------------------

    def handle_data_stream(self, p: DataStream, in_face: int) -> None:
        uri = p.stream_name.to_uri()
        comps = p.stream_name.components
        consumed = False
        if uri in self._known_streams:
            self.high_water[uri] = max(self.high_water.get(uri, 0), p.tuple.ts)

        feeds = self._stream_feeds.get(uri, ())
        if feeds:
            for inst_key in list(feeds):
                inst = self.instances.get(inst_key)
                if inst is None:
                    continue
                entry = self.pit.lookup(inst.key)
                if entry is not None and p.tuple.ts <= entry.last_result_ts:
                    self._bump("out_of_order")
                    continue  # already folded into a delivered result
                self._feed_window(inst, p.tuple)
            consumed = True
        elif len(comps) == 4 and comps[0] == "state" and comps[3] == "out":
            parent_key = self._child_feeds.get((comps[1], int(comps[2])))
            if parent_key is not None:
                parent = self.instances.get(parent_key)
                if parent is not None:
                    rows, wm, schema = self._decode_snapshot(p.tuple)
                    self._feed_child_output(parent, int(comps[2]), rows, wm)
                    consumed = True

        out_faces = self._fib_faces(p.stream_name, exclude=in_face)
        for f in out_faces:
            self._send(f, p)
        if out_faces:
            self._bump("forwarded")
        elif consumed:
            self._bump("consumed")
        else:
            self._bump("dropped")

    def _feed_window(self, inst: OpInstance, t: Tuple) -> None:
        self.services.charge(self.node_id, EVAL_COST_MS["WINDOW"])
        try:
            inst.win_state, _evicted = window_insert(inst.win_state, t)
        except OutOfOrderTuple:
            self._bump("out_of_order")
            return
        rows = list(inst.win_state.buffer)
        wm = rows[-1].ts
        self.cs.insert(
            "/state/%s/%d" % (inst.salted, inst.node.index),
            json.dumps([list(r.values) for r in rows]).encode("utf-8"),
            wm,
        )
        self._emit(inst, rows, wm)

    def _decode_snapshot(self, t: Tuple) -> tuple[list[Tuple], int, str]:
        doc = json.loads(t.values[1])
        schema = doc.get("schema", "snapshot")
        rows = [
            Tuple(ts=int(r[0]), schema_id=schema, values=tuple(r)) for r in doc["rows"]
        ]
        return rows, int(doc["wm"]), schema

    def _encode_snapshot(self, rows: list[Tuple], wm: int, schema: str) -> Tuple:
        doc = {"schema": schema, "wm": wm, "rows": [list(r.values) for r in rows]}
        return Tuple(ts=wm, schema_id="snapshot", values=(wm, json.dumps(doc)))

    def _emit(self, inst: OpInstance, rows: list[Tuple], wm: int) -> None:
        if not rows or wm <= inst.last_emit:
            return
        inst.last_emit = wm
        if inst.parent_idx is None:
            self._notify(inst, rows, wm)
            return
        if inst.parent_host == self.node_id:
            parent = self.instances.get((inst.salted, inst.parent_idx))
            if parent is not None:
                self._feed_child_output(parent, inst.node.index, rows, wm)
            return
        schema = rows[0].schema_id if rows else "snapshot"
        name = Name(("state", inst.salted, str(inst.node.index), "out"))
        packet = DataStream(stream_name=name, tuple=self._encode_snapshot(rows, wm, schema))
        faces = self._fib_faces(name)
        for f in faces:
            self._send(f, packet)
        if faces:
            self._bump("results_shipped")

    def _feed_child_output(
        self, inst: OpInstance, child_idx: int, rows: list[Tuple], wm: int
    ) -> None:
        node = inst.node
        self.services.charge(self.node_id, EVAL_COST_MS.get(node.kind, 0.1))
        if node.kind in ("JOIN", "SEQUENCE"):
            if node.left is not None and child_idx == node.left.index:
                inst.left_rows, inst.left_wm = rows, wm
            else:
                inst.right_rows, inst.right_wm = rows, wm
            if inst.left_rows is None or inst.right_rows is None:
                return
            out_wm = min(inst.left_wm, inst.right_wm)
            if node.kind == "JOIN":
                out = join_eval(
                    inst.left_rows,
                    inst.right_rows,
                    node.params[0],
                    node.left.ctx,
                    node.right.ctx,
                )
            else:
                out = [sequence_eval(inst.left_rows, inst.right_rows)]
            self._emit(inst, out, out_wm)
            return
        if node.kind == "FILTER":
            out = filter_eval(rows, node.params[0], node.left.ctx)
            self._emit(inst, out, wm)
            return
        if node.kind in ("SUM", "MIN", "MAX", "AVG", "COUNT"):
            try:
                out = [aggregate_eval(node.kind, node.params[0], rows, node.left.ctx)]
            except EmptyWindow:
                return
            self._emit(inst, out, wm)
            return
        if node.kind == "HEATMAP":
            cell, lat_min, lat_max, long_min, long_max = node.params[:5]
            grid = heatmap_eval(
                rows, cell, (lat_min, lat_max, long_min, long_max), node.left.ctx
            )
            payload = json.dumps({"grid": grid.grid, "skipped": grid.skipped})
            out = [Tuple(ts=wm, schema_id="grid", values=(wm, payload))]
            self._emit(inst, out, wm)
            return
        if node.kind == "PREDICT":
            slot = node.left.params[1] if node.left is not None else None
            inst.predict_state, pred = predict_eval(
                rows, node.params[0], inst.predict_state, slot
            )
            if pred is None:
                return
            out = [
                Tuple.from_values(
                    "prediction",
                    (pred.ts, pred.plug_id, pred.household_id, pred.house_id, pred.predicted_load),
                )
            ]
            self._emit(inst, out, pred.ts)
            return
        # unknown kinds pass their input through unchanged
        self._emit(inst, rows, wm)

    def _notify(self, inst: OpInstance, rows: list[Tuple], wm: int) -> None:
        entry = self.pit.lookup(inst.key)
        if entry is None or not entry.faces:
            return
        if wm <= entry.last_result_ts:
            return
        payload = json.dumps(
            {
                "hash": inst.unsalted,
                "ts": wm,
                "schema": rows[0].schema_id,
                "rows": [list(r.values) for r in rows],
            }
        ).encode("utf-8")
        packet = Data(name=Name(("ce", inst.unsalted, str(wm))), payload=payload, ts=wm)
        for f in sorted(entry.faces):
            self._send(f, packet)
        entry.last_result_ts = wm
        self.cs.insert(inst.key, payload, wm)
        self._event(
            "notification", salted=inst.salted, unsalted=inst.unsalted, ts=wm, rows=len(rows)
        )

    # -- classic interests and data -----------------------------------------

    def _originate_interest(self, name: Name, on_reply: Callable[[Data], None]) -> None:
        self._reply_hooks[name.to_uri()] = on_reply
        self.pit.add_face(name, APP_FACE, self._now())
        for f in self._fib_faces(name):
            self._send(f, Interest(name=name))

    def handle_interest(self, p: Interest, in_face: int) -> None:
        comps = p.name.components
        if len(comps) == 3 and comps[:2] == ("node", self.node_id) and comps[2] == "delay":
            delay = self.services.local_delay_ms(self.node_id)
            self._bump("consumed")
            self._send(
                in_face,
                Data(name=p.name, payload=repr(delay).encode("ascii"), ts=self._now()),
            )
            return
        if len(comps) == 4 and comps[:2] == ("node", self.node_id) and comps[2] == "deploy":
            self._install_deploy_blob(comps[3])
            self._bump("consumed")
            self._send(in_face, Data(name=p.name, payload=b"ok", ts=self._now()))
            return
        hit = self.cs.lookup(p.name)
        if hit is not None:
            self._bump("consumed")
            self._send(in_face, Data(name=p.name, payload=hit.payload, ts=hit.logical_ts))
            return
        if self.pit.lookup(p.name) is not None:
            self.pit.add_face(p.name, in_face, self._now())
            self._bump("consumed")
            return
        out_faces = self._fib_faces(p.name, exclude=in_face)
        if not out_faces:
            self._bump("dropped")
            return
        self.pit.add_face(p.name, in_face, self._now())
        self._bump("forwarded")
        for f in out_faces:
            self._send(f, p)

    def handle_data(self, p: Data, in_face: int) -> None:
        uri = p.name.to_uri()
        hook = self._reply_hooks.pop(uri, None)
        if hook is not None:
            self.pit.remove(p.name)
            self.cs.insert(p.name, p.payload, p.ts)
            self._bump("consumed")
            hook(p)
            return
        comps = p.name.components
        if comps and comps[0] == "ce" and len(comps) >= 2:
            delivered = False
            for key in sorted(self.qmap.get(comps[1], ())):
                entry = self.pit.lookup(key)
                if entry is None:
                    continue
                for f in sorted(entry.faces):
                    if f != in_face:
                        self._send(f, p)
                        delivered = True
                if entry.faces:
                    entry.last_result_ts = max(entry.last_result_ts, p.ts)
            if delivered:
                self._bump("forwarded")
            else:
                self._bump("dropped")
            return
        if comps and comps[0] == "nack":
            # surface rejections to the local application
            self._bump("consumed")
            self._send(APP_FACE, p)
            return
        entry = self.pit.lookup(p.name)
        if entry is None:
            self._bump("dropped")  # unsolicited
            return
        faces = sorted(entry.faces)
        self.pit.remove(p.name)
        self.cs.insert(p.name, p.payload, p.ts)
        for f in faces:
            if f != in_face:
                self._send(f, p)
        self._bump("forwarded")
