"""Runtime semantics of the event-processing operators.

Every function here is pure: it takes explicit state plus input and returns
new state plus output, which is what makes node-local evaluation replayable.
The engine owns the state objects and persists window buffers in its content
store between evaluations.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Optional, Union

from .packet import Tuple
from .query import (
    AttrRef,
    BoolExpr,
    BoolOp,
    Comparison,
    Duration,
    NumberLit,
    SchemaCtx,
    SemanticError,
    TimeLit,
)

__all__ = [
    "OperatorError",
    "OutOfOrderTuple",
    "UnknownAttribute",
    "EmptyWindow",
    "DegenerateBounds",
    "WindowState",
    "HeatGrid",
    "PredictionTuple",
    "PredictState",
    "window_insert",
    "filter_eval",
    "join_eval",
    "aggregate_eval",
    "sequence_eval",
    "heatmap_eval",
    "predict_eval",
]


class OperatorError(Exception):
    """Base class for runtime evaluation failures."""


class OutOfOrderTuple(OperatorError):
    pass


class UnknownAttribute(OperatorError):
    pass


class EmptyWindow(OperatorError):
    pass


class DegenerateBounds(OperatorError):
    pass


# ---------------------------------------------------------------------------
# boolean expression evaluation over positional rows


def _time_ms(text: str) -> int:
    hh, mm, rest = text.split(":")
    ss, mmm = rest.split(".")
    return ((int(hh) * 60 + int(mm)) * 60 + int(ss)) * 1000 + int(mmm)


def _operand(ref, values, ctx: SchemaCtx):
    if isinstance(ref, AttrRef):
        try:
            return values[ctx.resolve(ref)]
        except SemanticError as err:
            raise UnknownAttribute(str(err)) from err
    if isinstance(ref, NumberLit):
        return ref.value
    if isinstance(ref, TimeLit):
        return _time_ms(ref.text)
    raise UnknownAttribute("unsupported operand %r" % (ref,))


def _compare(lhs, op: str, rhs) -> bool:
    # text never orders against numbers; keep the evaluator total
    if isinstance(lhs, str) != isinstance(rhs, str):
        return False
    if op == "=":
        return lhs == rhs
    if op == "<":
        return lhs < rhs
    if op == ">":
        return lhs > rhs
    if op == "<=":
        return lhs <= rhs
    return lhs >= rhs


def eval_bool(expr: BoolExpr, values, ctx: SchemaCtx) -> bool:
    """Evaluate a validated condition against one positional value row."""
    if isinstance(expr, Comparison):
        return _compare(
            _operand(expr.left, values, ctx), expr.op, _operand(expr.right, values, ctx)
        )
    if isinstance(expr, BoolOp):
        left = eval_bool(expr.left, values, ctx)
        right = eval_bool(expr.right, values, ctx)
        return (left and right) if expr.op == "&" else (left or right)
    raise UnknownAttribute("unsupported expression %r" % (expr,))


# ---------------------------------------------------------------------------
# window


@dataclass(frozen=True)
class WindowState:
    query_hash: str
    operator_index: int
    buffer: tuple[Tuple, ...]
    extent: Union[Duration, int]


def window_insert(state: WindowState, t: Tuple) -> tuple[WindowState, list[Tuple]]:
    """Append an in-order tuple and drop everything that left the window."""
    if state.buffer and t.ts < state.buffer[-1].ts:
        raise OutOfOrderTuple(
            "tuple ts %d precedes buffered ts %d" % (t.ts, state.buffer[-1].ts)
        )
    buffered = state.buffer + (t,)
    if isinstance(state.extent, Duration):
        horizon = state.extent.ms
        keep = tuple(x for x in buffered if t.ts - x.ts < horizon)
        evicted = [x for x in buffered if t.ts - x.ts >= horizon]
    else:
        keep = buffered[-state.extent :] if state.extent > 0 else ()
        evicted = list(buffered[: len(buffered) - len(keep)])
    new_state = WindowState(state.query_hash, state.operator_index, keep, state.extent)
    return new_state, evicted


# ---------------------------------------------------------------------------
# filter / join


def filter_eval(tuples, expr: BoolExpr, ctx: SchemaCtx) -> list[Tuple]:
    return [t for t in tuples if eval_bool(expr, t.values, ctx)]


def join_eval(left, right, cond: BoolExpr, left_ctx: SchemaCtx, right_ctx: SchemaCtx) -> list[Tuple]:
    """Concatenating join; output rows ordered by (left index, right index).

    The joined tuple keeps the left timestamp, which equals the matched
    timestamp under the usual timestamp-equality conditions.
    """
    joined = left_ctx.join(right_ctx)
    out = []
    for l in left:
        for r in right:
            row = l.values + r.values
            if eval_bool(cond, row, joined):
                out.append(Tuple(ts=l.ts, schema_id=joined.schema_id, values=row))
    return out


# ---------------------------------------------------------------------------
# aggregation


_AGG_FUNS = {
    "SUM": sum,
    "MIN": min,
    "MAX": max,
    "AVG": lambda vs: sum(vs) / len(vs),
    "COUNT": len,
}


def aggregate_eval(kind: str, attr, tuples, ctx: SchemaCtx) -> Tuple:
    if kind not in _AGG_FUNS:
        raise UnknownAttribute("unknown aggregate %r" % kind)
    ref = attr if isinstance(attr, AttrRef) else AttrRef(str(attr))
    try:
        idx = ctx.resolve(ref)
    except SemanticError as err:
        raise UnknownAttribute(str(err)) from err
    rows = list(tuples)
    if not rows and kind in ("MIN", "MAX", "AVG"):
        raise EmptyWindow("%s over an empty window" % kind)
    values = []
    for t in rows:
        v = t.values[idx]
        if isinstance(v, str):
            raise UnknownAttribute("attribute %s is not numeric" % ref)
        values.append(v)
    result = float(_AGG_FUNS[kind](values)) if (values or kind in ("SUM", "COUNT")) else 0.0
    newest = max((t.ts for t in rows), default=0)
    return Tuple.from_values("agg", (newest, result))


# ---------------------------------------------------------------------------
# sequence


def sequence_eval(a, b) -> Tuple:
    """True iff some tuple of `a` happened strictly before some tuple of `b`."""
    matched = any(x.ts < y.ts for x in a for y in b)
    newest = max((t.ts for t in list(a) + list(b)), default=0)
    return Tuple.from_values("bool", (newest, 1.0 if matched else 0.0))


# ---------------------------------------------------------------------------
# heat map


@dataclass
class HeatGrid:
    lat_min: float
    lat_max: float
    long_min: float
    long_max: float
    cell_size: float
    HC: int
    VC: int
    grid: list[list[int]]
    skipped: int = 0

    def to_rows(self) -> list[list[int]]:
        return [list(r) for r in self.grid]


def heatmap_eval(tuples, cell_size: float, bounds, ctx: SchemaCtx) -> HeatGrid:
    """Bin coordinates into a grid of counts; rows index latitude."""
    lat_min, lat_max, long_min, long_max = bounds
    if cell_size <= 0 or lat_max <= lat_min or long_max <= long_min:
        raise DegenerateBounds(
            "cell %r over lat[%r,%r] long[%r,%r]"
            % (cell_size, lat_min, lat_max, long_min, long_max)
        )
    try:
        lat_idx = ctx.resolve(AttrRef("latitude"))
        long_idx = ctx.resolve(AttrRef("longitude"))
    except SemanticError as err:
        raise UnknownAttribute(str(err)) from err
    hc = math.floor((long_max - long_min) / cell_size)
    vc = math.floor((lat_max - lat_min) / cell_size)
    grid = [[0] * hc for _ in range(vc)]
    skipped = 0
    for t in tuples:
        abs_lat = t.values[lat_idx] - lat_min
        abs_long = t.values[long_idx] - long_min
        if abs_lat < 0 or abs_long < 0:
            skipped += 1
            continue
        row = math.floor(abs_lat / cell_size)
        col = math.floor(abs_long / cell_size)
        if row >= vc or col >= hc:
            skipped += 1
            continue
        grid[row][col] += 1
    return HeatGrid(lat_min, lat_max, long_min, long_max, cell_size, hc, vc, grid, skipped)


# ---------------------------------------------------------------------------
# load prediction


@dataclass(frozen=True)
class PredictionTuple:
    ts: int
    plug_id: float
    household_id: float
    house_id: float
    predicted_load: float


@dataclass
class PredictState:
    # slot-of-day index -> past average loads seen in that slot
    history: dict[int, list[float]] = field(default_factory=dict)
    last_ts: int = -1


def predict_eval(
    window,
    horizon: Duration,
    state: PredictState,
    slot_extent: Union[Duration, int],
    combine: str = "literal",
) -> tuple[PredictState, Optional[PredictionTuple]]:
    """Emit a forecast when the newest tuple crosses a horizon boundary.

    The forecast combines the current slot's average load with the median of
    past same-slot-of-day averages; with no history it falls back to the
    current average alone. `combine` picks the printed sum ("literal") or its
    halved variant.
    """
    rows = list(window)
    if not rows:
        return state, None
    newest = max(t.ts for t in rows)
    horizon_ms = horizon.ms
    slot_ms = slot_extent.ms if isinstance(slot_extent, Duration) else 60000
    new_state = PredictState(
        history={k: list(v) for k, v in state.history.items()}, last_ts=newest
    )
    if newest // horizon_ms <= state.last_ts // horizon_ms:
        return new_state, None

    epoch_ts = (newest // horizon_ms) * horizon_ms
    slot = (epoch_ts // slot_ms) % max(86400000 // slot_ms, 1)
    values = [t.values[2] for t in rows]  # plug layout: value at index 2
    current = sum(values) / len(values)
    past = state.history.get(slot, [])
    if past:
        predicted = current + statistics.median(past)
        if combine == "halved":
            predicted = predicted / 2.0
    else:
        predicted = current  # fallback when the slot has no history yet
    new_state.history.setdefault(slot, []).append(current)

    latest = max(rows, key=lambda t: t.ts)
    out = PredictionTuple(
        ts=epoch_ts,
        plug_id=latest.values[4],
        household_id=latest.values[5],
        house_id=latest.values[6],
        predicted_load=predicted,
    )
    return new_state, out
