"""Wake scheduling and action dispatch for trading agents.

Agents are called on a fixed timer every ``period`` seconds and, when
subscribed to event-driven wakes, immediately after any market order or
any change of the best quotes. Wakes at identical times are ordered
timer-first, then by agent registration order.

Returned actions use the book-side convention of the event taxonomy:
``market(Side.ASK)`` hits the ask (an aggressive buy), ``market(Side.BID)``
hits the bid (an aggressive sell).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .events import Side
from .lob import Fill, Lob, LogRecord, QuoteState, Slot, fills_to_tuples


class WakeReason(str, Enum):
    TIMER = "timer"
    MARKET_ORDER_OBSERVED = "market_order_observed"
    SPREAD_CHANGED = "spread_changed"


class ActionKind(str, Enum):
    LIMIT = "limit"
    MARKET = "market"
    CANCEL = "cancel"
    SKIP = "skip"


@dataclass(frozen=True)
class AgentAction:
    """One of the 12 order-flow actions, or skip."""

    kind: ActionKind
    side: Side | None = None
    slot: Slot | None = None
    size: int | None = None

    @classmethod
    def limit(cls, side: Side, slot: Slot, size: int) -> "AgentAction":
        return cls(ActionKind.LIMIT, side=side, slot=slot, size=size)

    @classmethod
    def market(cls, hit_side: Side, size: int) -> "AgentAction":
        return cls(ActionKind.MARKET, side=hit_side, size=size)

    @classmethod
    def cancel(cls, side: Side, level: Slot) -> "AgentAction":
        return cls(ActionKind.CANCEL, side=side, slot=level)

    @classmethod
    def skip(cls) -> "AgentAction":
        return cls(ActionKind.SKIP)


@dataclass(frozen=True)
class OwnOrder:
    side: Side
    price: int
    size: int


@dataclass(frozen=True)
class MarketView:
    """Agent-facing snapshot; carries no other agent's private state."""

    time: float
    reason: WakeReason
    quote: QuoteState
    inventory: int
    cash: float
    own_orders: tuple[OwnOrder, ...]
    trading_start: float
    trading_end: float
    last_event_name: str | None = None

    def own_size_at(self, side: Side, price: int | None) -> int:
        if price is None:
            return 0
        return sum(o.size for o in self.own_orders
                   if o.side is side and o.price == price)


class Agent:
    """Base class. Subclasses implement ``wake``; ``on_fill`` is optional."""

    agent_id: str = "agent"
    period: float = 1.0
    event_driven: bool = False

    def wake(self, view: MarketView) -> AgentAction:
        raise NotImplementedError

    def on_fill(self, side: Side, price: int, size: int, time: float,
                is_maker: bool) -> None:
        pass


@dataclass(frozen=True)
class Wake:
    time: float
    reason: WakeReason
    agent_id: str


def timer_wakes(period: float, start: float, horizon: float) -> list[float]:
    """Timer wake times start + k*period, k >= 1, up to the horizon."""
    if period <= 0:
        raise ValueError("wake period must be positive")
    out = []
    k = 1
    while True:
        t = start + k * period
        if t > horizon + 1e-12:
            break
        out.append(t)
        k += 1
    return out


def schedule_wakes(agent_specs: list[tuple[str, float, bool]],
                   events: list[tuple[float, bool, bool]],
                   start: float, horizon: float) -> list[Wake]:
    """Interleave timer and event-driven wakes for a static event stream.

    ``agent_specs`` rows are (agent_id, period, event_driven); ``events``
    rows are (time, is_market_order, quotes_changed). Event-driven wakes
    land immediately after the triggering event, at most one per
    (event, agent); a market order that also moves the quotes wakes with
    reason ``market_order_observed``. Ties order as (time, timer-first,
    registration order).
    """
    entries: list[tuple[float, int, int, Wake]] = []
    for order_idx, (agent_id, period, event_driven) in enumerate(agent_specs):
        for t in timer_wakes(period, start, horizon):
            entries.append((t, 0, order_idx, Wake(t, WakeReason.TIMER, agent_id)))
        if not event_driven:
            continue
        for t, is_mo, changed in events:
            if t > horizon or not (is_mo or changed):
                continue
            reason = (WakeReason.MARKET_ORDER_OBSERVED if is_mo
                      else WakeReason.SPREAD_CHANGED)
            entries.append((t, 1, order_idx, Wake(t, reason, agent_id)))
    entries.sort(key=lambda e: (e[0], e[1], e[2]))
    return [e[3] for e in entries]


@dataclass
class ActionResult:
    """Outcome of applying one agent action to the book."""

    action: AgentAction
    fills: list[Fill] = field(default_factory=list)
    applied: bool = True
    downgraded: bool = False
    resolved_price: int | None = None
    cancelled_size: int | None = None


def apply_action(lob: Lob, owner: str, action: AgentAction,
                 time: float) -> ActionResult:
    """Validate and apply an action; infeasible ones downgrade to skip."""
    if action.kind is ActionKind.SKIP:
        return ActionResult(action, applied=False)
    if action.kind in (ActionKind.LIMIT, ActionKind.MARKET):
        if action.size is None or action.size < 1:
            return ActionResult(action, applied=False, downgraded=True)
    if action.kind is ActionKind.LIMIT:
        order, status = lob.submit_limit(owner, action.side, action.slot,
                                         action.size, time)
        if order is None:
            return ActionResult(action, applied=False, downgraded=True)
        return ActionResult(action, resolved_price=order.price)
    if action.kind is ActionKind.MARKET:
        fills = lob.submit_market(owner, action.side, action.size, time)
        if not fills:
            return ActionResult(action, applied=False, downgraded=True)
        return ActionResult(action, fills=fills)
    # cancel: absence is a signal, not a failure
    cancelled = lob.cancel_order(owner, action.slot, action.side, time)
    if cancelled is None:
        return ActionResult(action, applied=False)
    return ActionResult(action, resolved_price=cancelled.price,
                        cancelled_size=cancelled.size)


def action_log_record(seq: int, time: float, owner: str,
                      result: ActionResult) -> LogRecord:
    a = result.action
    kind = {ActionKind.LIMIT: "lo", ActionKind.MARKET: "mo",
            ActionKind.CANCEL: "co", ActionKind.SKIP: "skip"}[a.kind]
    size = a.size if result.cancelled_size is None else result.cancelled_size
    return LogRecord(
        seq=seq, time=time, actor=owner, kind=kind,
        side=a.side.value if a.side else None,
        slot=a.slot.value if a.slot else None,
        price_ticks=result.resolved_price,
        size=size,
        fills=fills_to_tuples(result.fills),
        dropped=not result.applied,
    )
