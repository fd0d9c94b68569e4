"""Event taxonomy shared by the order-flow engine, the book, and the agents.

Twelve event types: six order-flow kinds on each side of the book. The
same taxonomy describes both exogenous flow and agent actions, so agent
orders can be fed back into the flow model as first-class events.

Conventions (see also the event-log schema in ``lob.py``):

* ``side`` is the book side the event acts on. A market order carries the
  side it *hits*: ``mo_bid`` is an aggressive sell consuming bid liquidity,
  ``mo_ask`` an aggressive buy consuming ask liquidity.
* ``lo_top`` joins the current best price, ``lo_deep`` rests one tick
  behind it, ``lo_inspread`` improves the best by one tick (needs a spread
  of at least two ticks).
* ``co_top`` / ``co_deep`` cancel the oldest resting order at the
  corresponding level.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class Side(str, Enum):
    BID = "bid"
    ASK = "ask"

    @property
    def opposite(self) -> "Side":
        return Side.ASK if self is Side.BID else Side.BID


class Kind(str, Enum):
    LO_DEEP = "lo_deep"
    CO_DEEP = "co_deep"
    LO_TOP = "lo_top"
    CO_TOP = "co_top"
    MO = "mo"
    LO_INSPREAD = "lo_inspread"


# Canonical index order of the 12 types: bid kinds outward-in, then the
# ask-side mirror. Parameter files (baseline[12], alpha[12][12], ...) use
# this ordering.
EVENT_TYPES: tuple[tuple[Kind, Side], ...] = (
    (Kind.LO_DEEP, Side.BID),
    (Kind.CO_DEEP, Side.BID),
    (Kind.LO_TOP, Side.BID),
    (Kind.CO_TOP, Side.BID),
    (Kind.MO, Side.BID),
    (Kind.LO_INSPREAD, Side.BID),
    (Kind.LO_INSPREAD, Side.ASK),
    (Kind.MO, Side.ASK),
    (Kind.CO_TOP, Side.ASK),
    (Kind.LO_TOP, Side.ASK),
    (Kind.CO_DEEP, Side.ASK),
    (Kind.LO_DEEP, Side.ASK),
)

N_EVENT_TYPES = len(EVENT_TYPES)

EVENT_NAMES: tuple[str, ...] = tuple(f"{k.value}_{s.value}" for k, s in EVENT_TYPES)

_INDEX = {ks: i for i, ks in enumerate(EVENT_TYPES)}
_INDEX_BY_NAME = {name: i for i, name in enumerate(EVENT_NAMES)}


def event_index(kind: Kind, side: Side) -> int:
    return _INDEX[(kind, side)]


def event_index_by_name(name: str) -> int:
    return _INDEX_BY_NAME[name]


@dataclass(frozen=True)
class MarketEvent:
    """One atom of simulated order flow.

    ``time`` is seconds since episode start and is strictly increasing
    within a stream; ``size`` is a positive integer number of units.
    """

    time: float
    type_index: int
    size: int

    def __post_init__(self) -> None:
        if not 0 <= self.type_index < N_EVENT_TYPES:
            raise ValueError(f"type_index out of range: {self.type_index}")
        if self.size < 1:
            raise ValueError(f"event size must be >= 1, got {self.size}")

    @property
    def kind(self) -> Kind:
        return EVENT_TYPES[self.type_index][0]

    @property
    def side(self) -> Side:
        return EVENT_TYPES[self.type_index][1]

    @property
    def name(self) -> str:
        return EVENT_NAMES[self.type_index]
