"""Price-time-priority limit order book with a replayable event log.

Prices live on an integer tick grid (``tick_size`` price units per tick,
0.01 by default; the book is usually seeded around 1000 ticks = 10.00).
Levels are FIFO queues; "top" means the current best price, "deep" one
tick behind it, "inspread" one tick inside the spread. Market orders walk
the named side in price priority and discard any residual beyond resting
volume.

Exogenous cancel events only ever remove exogenous orders; agent cancels
only remove that agent's own orders.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from bisect import bisect_left, insort

from .events import Kind, MarketEvent, Side

EXO = "exo"


class Slot(str, Enum):
    DEEP = "deep"
    TOP = "top"
    INSPREAD = "inspread"


class SubmitStatus(str, Enum):
    OK = "ok"
    NO_ROOM = "no_room"         # inspread with a one-tick spread
    NO_ANCHOR = "no_anchor"     # no reference price on either side


class Order:
    __slots__ = ("id", "owner", "side", "price", "size", "entry_time")

    def __init__(self, id: int, owner: str, side: Side, price: int,
                 size: int, entry_time: float):
        self.id = id
        self.owner = owner
        self.side = side
        self.price = price
        self.size = size
        self.entry_time = entry_time

    def __repr__(self) -> str:
        return (f"Order(id={self.id}, owner={self.owner!r}, side={self.side.value}, "
                f"price={self.price}, size={self.size})")


@dataclass(frozen=True)
class Fill:
    taker_owner: str
    maker_owner: str
    maker_order_id: int
    price: int                  # maker's price, in ticks
    size: int
    time: float


@dataclass
class EventOutcome:
    fills: list["Fill"]
    applied: bool
    price: int | None


@dataclass(frozen=True)
class QuoteState:
    best_bid: int | None
    best_ask: int | None
    bid_top_size: int
    ask_top_size: int
    bid_deep_size: int
    ask_deep_size: int

    @property
    def one_sided(self) -> bool:
        return self.best_bid is None or self.best_ask is None

    @property
    def mid(self) -> float | None:
        if self.one_sided:
            return None
        return (self.best_bid + self.best_ask) / 2.0

    @property
    def spread(self) -> int | None:
        if self.one_sided:
            return None
        return self.best_ask - self.best_bid


class Lob:
    """One book per episode worker; not thread-safe."""

    def __init__(self, tick_size: float = 0.01):
        self.tick_size = tick_size
        self.bids: dict[int, deque[Order]] = {}
        self.asks: dict[int, deque[Order]] = {}
        self._bid_prices: list[int] = []     # ascending; best bid = [-1]
        self._ask_prices: list[int] = []     # ascending; best ask = [0]
        self._by_owner: dict[str, dict[int, Order]] = {}
        self._next_order_id = 1
        self.last_best_bid: int | None = None
        self.last_best_ask: int | None = None
        self.resting_volume = {Side.BID: 0, Side.ASK: 0}
        self.dropped_events = 0
        self.empty_side_markets = 0

    # -- queries ------------------------------------------------------------

    def best_bid(self) -> int | None:
        return self._bid_prices[-1] if self._bid_prices else None

    def best_ask(self) -> int | None:
        return self._ask_prices[0] if self._ask_prices else None

    def level_size(self, side: Side, price: int) -> int:
        book = self.bids if side is Side.BID else self.asks
        q = book.get(price)
        return sum(o.size for o in q) if q else 0

    def quote_state(self) -> QuoteState:
        bb, ba = self.best_bid(), self.best_ask()
        return QuoteState(
            best_bid=bb,
            best_ask=ba,
            bid_top_size=self.level_size(Side.BID, bb) if bb is not None else 0,
            ask_top_size=self.level_size(Side.ASK, ba) if ba is not None else 0,
            bid_deep_size=self.level_size(Side.BID, bb - 1) if bb is not None else 0,
            ask_deep_size=self.level_size(Side.ASK, ba + 1) if ba is not None else 0,
        )

    def orders_of(self, owner: str) -> list[Order]:
        return list(self._by_owner.get(owner, {}).values())

    def owner_size_at(self, owner: str, side: Side, price: int | None) -> int:
        if price is None:
            return 0
        return sum(o.size for o in self._by_owner.get(owner, {}).values()
                   if o.side is side and o.price == price)

    # -- internal plumbing ---------------------------------------------------

    def _book(self, side: Side) -> tuple[dict[int, deque[Order]], list[int]]:
        if side is Side.BID:
            return self.bids, self._bid_prices
        return self.asks, self._ask_prices

    def _rest(self, owner: str, side: Side, price: int, size: int,
              time: float) -> Order:
        book, prices = self._book(side)
        order = Order(self._next_order_id, owner, side, price, size, time)
        self._next_order_id += 1
        q = book.get(price)
        if q is None:
            book[price] = deque([order])
            insort(prices, price)
        else:
            q.append(order)
        self._by_owner.setdefault(owner, {})[order.id] = order
        self.resting_volume[side] += size
        self._note_bests()
        return order

    def _remove(self, order: Order) -> None:
        book, prices = self._book(order.side)
        q = book[order.price]
        q.remove(order)
        if not q:
            del book[order.price]
            idx = bisect_left(prices, order.price)
            prices.pop(idx)
        del self._by_owner[order.owner][order.id]
        self.resting_volume[order.side] -= order.size
        self._note_bests()

    def _note_bests(self) -> None:
        if self._bid_prices:
            self.last_best_bid = self._bid_prices[-1]
        if self._ask_prices:
            self.last_best_ask = self._ask_prices[0]

    def _anchor(self, side: Side) -> int | None:
        """Reference best price for relative placement, falling back to the
        last known best when the side is currently empty."""
        if side is Side.BID:
            return self.best_bid() if self._bid_prices else self.last_best_bid
        return self.best_ask() if self._ask_prices else self.last_best_ask

    # -- operations ----------------------------------------------------------

    def place_at(self, owner: str, side: Side, price: int, size: int,
                 time: float) -> Order:
        """Rest an order at an explicit price (book seeding and log replay)."""
        if size < 1:
            raise ValueError("order size must be >= 1")
        return self._rest(owner, side, price, size, time)

    def submit_limit(self, owner: str, side: Side, slot: Slot, size: int,
                     time: float) -> tuple[Order | None, SubmitStatus]:
        """Rest a limit order at the slot-resolved price; never crosses."""
        if size < 1:
            raise ValueError("order size must be >= 1")
        anchor = self._anchor(side)
        if slot is Slot.INSPREAD:
            bb, ba = self.best_bid(), self.best_ask()
            if bb is None or ba is None or ba - bb < 2:
                return None, SubmitStatus.NO_ROOM
            price = bb + 1 if side is Side.BID else ba - 1
        else:
            if anchor is None:
                opp = self._anchor(side.opposite)
                if opp is None:
                    return None, SubmitStatus.NO_ANCHOR
                anchor = opp - 1 if side is Side.BID else opp + 1
            if slot is Slot.TOP:
                price = anchor
            else:  # deep: one tick behind the best
                price = anchor - 1 if side is Side.BID else anchor + 1
        # Clamp so resting orders never cross the current opposite best.
        if side is Side.BID:
            ba = self.best_ask()
            if ba is not None and price >= ba:
                price = ba - 1
        else:
            bb = self.best_bid()
            if bb is not None and price <= bb:
                price = bb + 1
        return self._rest(owner, side, price, size, time), SubmitStatus.OK

    def submit_market(self, owner: str, hit_side: Side, size: int,
                      time: float) -> list[Fill]:
        """Consume resting volume on ``hit_side`` in price-time priority.

        ``hit_side`` names the book side being consumed: hitting the bid is
        an aggressive sell, hitting the ask an aggressive buy. Residual
        size beyond available volume is discarded.
        """
        if size < 1:
            raise ValueError("market order size must be >= 1")
        book, prices = self._book(hit_side)
        if not prices:
            self.empty_side_markets += 1
            return []
        fills: list[Fill] = []
        remaining = size
        while remaining > 0 and prices:
            price = prices[-1] if hit_side is Side.BID else prices[0]
            q = book[price]
            while q and remaining > 0:
                maker = q[0]
                traded = min(remaining, maker.size)
                fills.append(Fill(owner, maker.owner, maker.id, price, traded, time))
                maker.size -= traded
                remaining -= traded
                self.resting_volume[hit_side] -= traded
                if maker.size == 0:
                    q.popleft()
                    del self._by_owner[maker.owner][maker.id]
            if not q:
                del book[price]
                idx = bisect_left(prices, price)
                prices.pop(idx)
        self._note_bests()
        return fills

    def cancel_order(self, owner: str, level: Slot, side: Side,
                     time: float) -> Order | None:
        """Cancel the owner's oldest resting order at the named level slot.

        Returns the removed order, or None ("nothing to cancel") when the
        owner has no order there.
        """
        if level not in (Slot.TOP, Slot.DEEP):
            raise ValueError(f"cancel level must be top or deep, got {level}")
        best = self.best_bid() if side is Side.BID else self.best_ask()
        if best is None:
            return None
        if level is Slot.TOP:
            price = best
        else:
            price = best - 1 if side is Side.BID else best + 1
        book, _ = self._book(side)
        q = book.get(price)
        if not q:
            return None
        for order in q:
            if order.owner == owner:
                self._remove(order)
                return order
        return None

    def cancel_at(self, owner: str, side: Side, price: int) -> Order | None:
        """Remove the owner's oldest resting order at an explicit price
        (meta-order retirement; not part of the per-wake action set)."""
        book, _ = self._book(side)
        q = book.get(price)
        if not q:
            return None
        for order in q:
            if order.owner == owner:
                self._remove(order)
                return order
        return None

    def apply_market_event(self, event: MarketEvent) -> "EventOutcome":
        """Route an exogenous event.

        Infeasible events (inspread with no room, cancel with nothing
        exogenous to cancel, market order into an empty side) are dropped
        and counted, not errors.
        """
        kind, side, t = event.kind, event.side, event.time
        if kind is Kind.MO:
            fills = self.submit_market(EXO, side, event.size, t)
            if not fills:
                self.dropped_events += 1
                return EventOutcome([], False, None)
            return EventOutcome(fills, True, None)
        if kind in (Kind.CO_TOP, Kind.CO_DEEP):
            level = Slot.TOP if kind is Kind.CO_TOP else Slot.DEEP
            cancelled = self.cancel_order(EXO, level, side, t)
            if cancelled is None:
                self.dropped_events += 1
                return EventOutcome([], False, None)
            return EventOutcome([], True, cancelled.price)
        slot = {Kind.LO_DEEP: Slot.DEEP, Kind.LO_TOP: Slot.TOP,
                Kind.LO_INSPREAD: Slot.INSPREAD}[kind]
        order, status = self.submit_limit(EXO, side, slot, event.size, t)
        if order is None:
            self.dropped_events += 1
            return EventOutcome([], False, None)
        return EventOutcome([], True, order.price)

    # -- integrity -----------------------------------------------------------

    def book_hash(self) -> str:
        """Stable digest of the full book state (prices, queues, owners)."""
        h = hashlib.sha256()
        for side_name, prices, book in (("B", self._bid_prices, self.bids),
                                        ("A", self._ask_prices, self.asks)):
            for p in prices:
                for o in book[p]:
                    h.update(f"{side_name}|{p}|{o.id}|{o.owner}|{o.size};".encode())
        return h.hexdigest()

    def total_resting_volume(self) -> int:
        return self.resting_volume[Side.BID] + self.resting_volume[Side.ASK]


# -- event log -----------------------------------------------------------

@dataclass
class LogRecord:
    """One applied (or dropped) event/action; the log replays bit-exactly."""

    seq: int
    time: float
    actor: str
    kind: str                    # lo | mo | co | seed | purge | skip
    side: str | None = None
    slot: str | None = None
    price_ticks: int | None = None
    size: int | None = None
    fills: list = field(default_factory=list)   # [(price_ticks, size, maker), ...]
    dropped: bool = False

    def to_json(self) -> str:
        payload = {
            "seq": self.seq,
            "time": self.time,
            "actor": self.actor,
            "kind": self.kind,
            "side": self.side,
            "slot": self.slot,
            "price_ticks": self.price_ticks,
            "size": self.size,
            "fills": [{"price_ticks": p, "size": s, "maker": m}
                      for (p, s, m) in self.fills],
            "dropped": self.dropped,
        }
        return json.dumps(payload, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "LogRecord":
        d = json.loads(line)
        return cls(
            seq=d["seq"], time=d["time"], actor=d["actor"], kind=d["kind"],
            side=d["side"], slot=d["slot"], price_ticks=d["price_ticks"],
            size=d["size"],
            fills=[(f["price_ticks"], f["size"], f["maker"]) for f in d["fills"]],
            dropped=d["dropped"],
        )


def fills_to_tuples(fills: list[Fill]) -> list[tuple[int, int, str]]:
    return [(f.price, f.size, f.maker_owner) for f in fills]


def replay_log(records: list[LogRecord], tick_size: float = 0.01) -> Lob:
    """Re-apply a log to a fresh book, asserting identical outcomes.

    Raises ValueError on any divergence; returns the reconstructed book so
    callers can compare ``book_hash()`` against the original.
    """
    lob = Lob(tick_size=tick_size)
    for rec in records:
        if rec.kind == "skip":
            continue
        side = Side(rec.side) if rec.side else None
        if rec.kind == "seed":
            lob.place_at(rec.actor, side, rec.price_ticks, rec.size, rec.time)
            got: list = []
            applied = True
        elif rec.kind == "lo":
            got = []
            if rec.size is None or rec.size < 1:
                applied = False   # size-invalid action was downgraded untouched
            else:
                order, status = lob.submit_limit(rec.actor, side, Slot(rec.slot),
                                                 rec.size, rec.time)
                applied = order is not None
                if applied and order.price != rec.price_ticks:
                    raise ValueError(f"replay divergence at seq {rec.seq}: price "
                                     f"{order.price} != {rec.price_ticks}")
        elif rec.kind == "mo":
            if rec.size is None or rec.size < 1:
                got = []
                applied = False
            else:
                fills = lob.submit_market(rec.actor, side, rec.size, rec.time)
                got = fills_to_tuples(fills)
                applied = bool(fills)
        elif rec.kind == "co":
            cancelled = lob.cancel_order(rec.actor, Slot(rec.slot), side, rec.time)
            got = []
            applied = cancelled is not None
        elif rec.kind == "purge":
            cancelled = lob.cancel_at(rec.actor, side, rec.price_ticks)
            got = []
            applied = cancelled is not None
        else:
            raise ValueError(f"unknown log record kind: {rec.kind}")
        if applied == rec.dropped:
            raise ValueError(f"replay divergence at seq {rec.seq}: "
                             f"applied={applied} but dropped={rec.dropped}")
        if got != rec.fills:
            raise ValueError(f"replay divergence at seq {rec.seq}: fills differ")
    return lob
