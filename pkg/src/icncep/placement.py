"""Delay discovery and operator placement.

The first broker that receives a query coordinates it: it probes the other
brokers' advertised delays, builds the cheapest broker path from the stream
ingress points to itself, and spreads the operator tree along that path with
the deepest operators closest to the producers and the root on itself.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

from .query import OperatorNode, to_nfn_expression

__all__ = [
    "PlacementError",
    "UnreachableNode",
    "NoPath",
    "DeployTimeout",
    "DelayEntry",
    "DelayMap",
    "PlacementPlan",
    "discover_delays",
    "build_path",
    "assign_operators",
    "plan_dump",
]


class PlacementError(Exception):
    pass


class UnreachableNode(PlacementError):
    pass


class NoPath(PlacementError):
    pass


class DeployTimeout(PlacementError):
    pass


@dataclass(frozen=True)
class DelayEntry:
    delay_ms: float
    measured_ts: int = 0

    def __post_init__(self):
        if not (self.delay_ms >= 0 or math.isinf(self.delay_ms)):
            raise ValueError("negative delay")


@dataclass
class DelayMap:
    # broker id -> advertised processing delay; link -> configured delay
    nodes: dict[str, DelayEntry]
    links: dict[tuple[str, str], float]


def _link_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


def discover_delays(
    coordinator: str,
    topology,
    probe: Optional[Callable[[str], float]] = None,
    now: int = 0,
) -> DelayMap:
    """Collect one delay entry per broker; unreachable brokers become infinite.

    `probe` fetches a node's advertised delay (the engine answers it over an
    Interest round-trip); the default reads the topology's configured value.
    """
    if probe is None:
        probe = topology.node_delay
    nodes = {}
    for node_id in topology.broker_ids():
        try:
            nodes[node_id] = DelayEntry(float(probe(node_id)), now)
        except UnreachableNode:
            nodes[node_id] = DelayEntry(float("inf"), now)
    links = {}
    for a, b, delay in topology.links():
        links[_link_key(a, b)] = float(delay)
    return DelayMap(nodes=nodes, links=links)


def _adjacency(delays: DelayMap) -> dict[str, list[tuple[str, float]]]:
    adj: dict[str, list[tuple[str, float]]] = {}
    for (a, b), d in delays.links.items():
        adj.setdefault(a, []).append((b, d))
        adj.setdefault(b, []).append((a, d))
    return adj


def _endpoint_brokers(node_id, brokers, adj) -> set:
    if node_id in brokers:
        return {node_id}
    return {b for b, _ in adj.get(node_id, []) if b in brokers}


def build_path(delays: DelayMap, producers, consumer: str) -> list[str]:
    """Cheapest broker path (summed link + node delay) from ingress to egress.

    Ties break toward the lexicographically smallest node-id sequence, which
    makes planning deterministic across runs.
    """
    brokers = {
        n for n, e in delays.nodes.items() if not math.isinf(e.delay_ms)
    }
    adj = _adjacency(delays)
    starts: set = set()
    for p in producers:
        starts |= _endpoint_brokers(p, brokers, adj)
    goals = _endpoint_brokers(consumer, brokers, adj)
    if not starts or not goals:
        raise NoPath("no broker adjacent to producers or consumer")

    heap = [
        (delays.nodes[s].delay_ms, (s,)) for s in sorted(starts)
    ]
    heapq.heapify(heap)
    while heap:
        cost, path = heapq.heappop(heap)
        here = path[-1]
        if here in goals:
            return list(path)
        for nxt, link_delay in adj.get(here, []):
            if nxt in brokers and nxt not in path:
                heapq.heappush(
                    heap,
                    (cost + link_delay + delays.nodes[nxt].delay_ms, path + (nxt,)),
                )
    raise NoPath("producers and consumer are not connected through brokers")


def _depths(tree: OperatorNode) -> dict[int, int]:
    out = {}

    def walk(node, d):
        out[node.index] = d
        for child in node.children:
            walk(child, d + 1)

    walk(tree, 0)
    return out


@dataclass
class PlacementPlan:
    assignments: dict[int, str]
    path: list[str]
    coordinator: str
    mode: str
    pinned: frozenset = field(default_factory=frozenset)


def assign_operators(
    tree: OperatorNode,
    path,
    mode: str,
    ingress: Optional[dict[str, str]] = None,
) -> PlacementPlan:
    """Map every operator to a path node and rewrite its lambda expression.

    Centralized mode parks the whole tree on the coordinator. Distributed
    mode orders operators deepest-first and splits them contiguously along
    the path producer-side first, keeping per-node counts within one of each
    other; window leaves are then pinned back to their stream's ingress
    broker. The root always lands on the coordinator (the planning broker).
    """
    path = list(path)
    if not path:
        raise PlacementError("empty path")
    coordinator = path[-1]
    ops = list(tree.walk())
    assignments: dict[int, str] = {}
    pinned = set()

    if mode == "centralized":
        for node in ops:
            assignments[node.index] = coordinator
    elif mode == "distributed":
        depth = _depths(tree)
        ordered = sorted(ops, key=lambda n: (-depth[n.index], n.index))
        k, l = len(ordered), len(path)
        if k >= l:
            base, rem = divmod(k, l)
            sizes = [base + 1] * rem + [base] * (l - rem)
        else:
            sizes = [0] * (l - k) + [1] * k
        it = iter(ordered)
        for node_id, size in zip(path, sizes):
            for _ in range(size):
                assignments[next(it).index] = node_id
        for node in ops:
            if node.is_leaf and node.index != tree.index and ingress:
                home = ingress.get(node.stream_alias)
                if home is not None and home != assignments[node.index]:
                    assignments[node.index] = home
                    pinned.add(node.index)
    else:
        raise PlacementError("unknown mode %r" % mode)

    assert assignments[tree.index] == coordinator, "root operator must sit on the coordinator"
    for node in ops:
        node.assigned_node = assignments[node.index]
    for node in ops:
        node.nfn = to_nfn_expression(node)
    return PlacementPlan(
        assignments=assignments,
        path=path,
        coordinator=coordinator,
        mode=mode,
        pinned=frozenset(pinned),
    )


def plan_dump(plan: PlacementPlan, tree: OperatorNode) -> str:
    """JSON rendering of a plan, consumed by the command line `explain`."""
    operators = [
        {
            "index": node.index,
            "kind": node.kind,
            "node": plan.assignments[node.index],
            "pinned": node.index in plan.pinned,
            "nfn": node.nfn,
        }
        for node in tree.walk()
    ]
    return json.dumps(
        {
            "mode": plan.mode,
            "coordinator": plan.coordinator,
            "path": plan.path,
            "operators": operators,
        },
        indent=2,
    )
