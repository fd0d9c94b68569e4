"""Time-sliced meta-order executor.

A meta-order of Q units is worked over horizon T in windows of W seconds,
acting every f seconds. On-schedule wakes place top-of-book limit orders
of size ceil(q_rem / a_rem); when a window is running late (>= 75% of the
window elapsed with < 90% of its volume done) the shortfall is bought or
sold with a market order; over-execution versus the linear schedule
triggers cancels/skips; the final scheduled action sweeps any remainder
with a market order so the meta-order always completes when the horizon
fits inside the episode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

from .agents import Agent, AgentAction, MarketView
from .events import Side
from .lob import Slot

_EPS = 1e-9


class MetaSide(str, Enum):
    BUY = "buy"
    SELL = "sell"

    @property
    def book_side(self) -> Side:
        """Side on which this meta-order rests limit orders."""
        return Side.BID if self is MetaSide.BUY else Side.ASK

    @property
    def hit_side(self) -> Side:
        """Side its market orders consume."""
        return Side.ASK if self is MetaSide.BUY else Side.BID


@dataclass
class TwapConfig:
    side: MetaSide
    total_quantity: int            # Q
    horizon: float                 # T seconds
    window: float                  # W seconds
    period: float                  # f seconds between actions
    start_time: float = 0.0
    urgency_time_frac: float = 0.75
    urgency_fill_frac: float = 0.90

    def __post_init__(self) -> None:
        if isinstance(self.side, str):
            self.side = MetaSide(self.side)
        if self.total_quantity < 1:
            raise ValueError("total_quantity must be >= 1")
        if not 0 < self.window <= self.horizon:
            raise ValueError("need 0 < window <= horizon")
        if self.period > self.window:
            raise ValueError("period must not exceed the window")
        for frac in (self.urgency_time_frac, self.urgency_fill_frac):
            if not 0 < frac < 1:
                raise ValueError("urgency thresholds must lie in (0, 1)")


def expected_child_size(config: TwapConfig) -> float:
    """Average units per scheduled action: Q * f / T."""
    return config.total_quantity * config.period / config.horizon


@dataclass
class TwapState:
    q_executed: int = 0
    window_index: int = 0
    window_executed: int = 0
    window_lo_placed: int = 0
    window_lo_filled: int = 0
    actions_taken: int = 0
    urgent: bool = False
    done: bool = False
    placed_orders: int = 0
    placed_volume: int = 0

    def q_rem(self, config: TwapConfig) -> int:
        return config.total_quantity - self.q_executed


def _window_index(config: TwapConfig, t_rel: float) -> int:
    n_windows = max(1, math.ceil(config.horizon / config.window - _EPS))
    return min(int((t_rel + _EPS) // config.window), n_windows - 1)


def _window_span(config: TwapConfig, w: int) -> tuple[float, float]:
    start = w * config.window
    end = min(start + config.window, config.horizon)
    return start, end


def window_target(config: TwapConfig, w: int) -> float:
    start, end = _window_span(config, w)
    return config.total_quantity * (end - start) / config.horizon


def is_urgent(state: TwapState, config: TwapConfig, time: float,
              live_volume: int = 0) -> bool:
    """Late-window test: >= 75% of the window has elapsed while the window's
    limit orders have filled less than 90% of their placed volume, or the
    window volume cannot complete from live orders alone."""
    t_rel = time - config.start_time
    w = _window_index(config, t_rel)
    w_start, w_end = _window_span(config, w)
    elapsed_frac = (t_rel - w_start) / (w_end - w_start)
    if elapsed_frac < config.urgency_time_frac - _EPS:
        return False
    if state.window_lo_placed > 0:
        fill_frac = state.window_lo_filled / state.window_lo_placed
    else:
        fill_frac = 1.0
    # Safety catch: stale fills can hold fill_frac high while the window
    # volume itself has stopped progressing (placement paused on resting
    # strands); compare against the elapsed-prorated target as well.
    behind = (state.window_executed + live_volume
              < window_target(config, w) * elapsed_frac - _EPS)
    return fill_frac < config.urgency_fill_frac or behind


class TwapAgent(Agent):
    """Purely schedule-driven: timer wakes only."""

    event_driven = False
    sweep_wakes = 8

    def __init__(self, config: TwapConfig, agent_id: str = "twap"):
        self.config = config
        self.state = TwapState()
        self.agent_id = agent_id
        self.period = config.period
        self.fills: list[tuple[float, int, int]] = []   # (time, price_ticks, size)

    # -- bookkeeping ---------------------------------------------------------

    def is_active(self, time: float) -> bool:
        cfg = self.config
        return cfg.start_time - _EPS <= time < cfg.start_time + cfg.horizon - _EPS

    def on_fill(self, side: Side, price: int, size: int, time: float,
                is_maker: bool) -> None:
        st = self.state
        self._roll_window(time)
        st.q_executed += size
        st.window_executed += size
        if is_maker:
            st.window_lo_filled += size
        self.fills.append((time, price, size))

    def _roll_window(self, time: float) -> None:
        w = _window_index(self.config, time - self.config.start_time)
        if w > self.state.window_index:
            self.state.window_index = w
            self.state.window_executed = 0
            self.state.window_lo_placed = 0
            self.state.window_lo_filled = 0
            self.state.urgent = False

    # -- policy ---------------------------------------------------------------

    def decide(self, view: MarketView) -> AgentAction:
        cfg, st = self.config, self.state
        t = view.time
        if st.done or t < cfg.start_time - _EPS:
            return AgentAction.skip()
        t_rel = t - cfg.start_time
        self._roll_window(t)
        st.actions_taken += 1
        q_rem = st.q_rem(cfg)

        a_rem = max(1, int(round((cfg.horizon - t_rel) / cfg.period)) + 1)
        if a_rem <= 1 or t_rel >= cfg.horizon - _EPS:
            # Last scheduled action: sweep whatever remains, then retire.
            st.done = True
            if q_rem > 0:
                st.placed_orders += 1
                st.placed_volume += q_rem
                return AgentAction.market(cfg.side.hit_side, q_rem)
            return AgentAction.skip()

        if q_rem > 0 and a_rem <= self.sweep_wakes:
            # End-game: stop quoting and convert the remainder with market
            # slices; one market order against the instantaneous book can
            # fail on depth, several slices let refills arrive in between.
            # Pace to finish two wakes early so thin-book misses get retried.
            if self._near_touch_volume(view) > 0:
                return self._cancel_or_skip(view)
            pace = max(1, a_rem - 2)
            size = min(q_rem, max(1, math.ceil(q_rem / pace - _EPS)))
            size = self._nibble(size, q_rem, view, final=a_rem <= 2)
            if size < 1:
                return AgentAction.skip()
            st.placed_orders += 1
            st.placed_volume += size
            return AgentAction.market(cfg.side.hit_side, size)

        if q_rem <= 0:
            return self._cancel_or_skip(view)

        schedule = cfg.total_quantity * t_rel / cfg.horizon
        if st.q_executed > schedule + expected_child_size(cfg):
            return self._cancel_or_skip(view)

        # Deficit paydown: stranded volume puts the global schedule behind;
        # deferring the backlog to per-window urgency overloads the horizon
        # end, where the book cannot physically supply it. Nibble the excess
        # down whenever the deficit exceeds a quarter window.
        window_vol = cfg.total_quantity * cfg.window / cfg.horizon
        debt = schedule - st.q_executed - self._near_touch_volume(view)
        if debt > 0.25 * window_vol:
            size = min(q_rem, 2, math.ceil((debt - 0.125 * window_vol) / 8.0))
            size = self._nibble(size, q_rem, view, final=False)
            if size >= 1:
                st.placed_orders += 1
                st.placed_volume += size
                return AgentAction.market(cfg.side.hit_side, size)

        if is_urgent(st, cfg, t, self._near_touch_volume(view)):
            st.urgent = True
            shortfall = (window_target(cfg, st.window_index)
                         - st.window_executed)
            size = self._urgent_mo_size(shortfall, q_rem, t_rel)
            size = self._nibble(size, q_rem, view, final=False)
            if size < 1:
                return AgentAction.skip()
            st.placed_orders += 1
            st.placed_volume += size
            return AgentAction.market(cfg.side.hit_side, size)

        st.urgent = False
        # Size net of all resting volume: sizing on fills alone would lock
        # q_lim at 2 under any fill latency (the ratio exceeds 1, so the
        # ceil rounds up), driving a place/overshoot/cancel churn that
        # doubles realized child sizes. Stranded volume is not re-placed as
        # limit orders; the urgency market orders cover each window's gap.
        open_volume = sum(o.size for o in view.own_orders)
        effective_rem = max(q_rem - open_volume, 0)
        size = min(q_rem, math.ceil(effective_rem / a_rem - _EPS))
        if size < 1:
            return AgentAction.skip()
        st.placed_orders += 1
        st.placed_volume += size
        st.window_lo_placed += size
        return AgentAction.limit(cfg.side.book_side, Slot.TOP, size)

    def _urgent_mo_size(self, shortfall: float, q_rem: int, t_rel: float) -> int:
        """Spread the window shortfall over the wakes left in the window.

        Sending the whole shortfall at once walks deep into the book; per-
        wake slices complete the same window volume at child-order scale.
        Outside the final window, slices are capped near the expected child
        size and any residue rolls into the next window's urgency.
        """
        cfg = self.config
        w = _window_index(cfg, t_rel)
        _, w_end = _window_span(cfg, w)
        wakes_left = max(1, int((w_end - t_rel) / cfg.period + _EPS))
        size = math.ceil(shortfall / wakes_left - _EPS)
        last_window = w >= _window_index(cfg, cfg.horizon - _EPS)
        if not last_window:
            # Slices stay near the expected child size while the global
            # schedule deficit is small, escalating when debt builds so
            # completion never defers to the terminal sweep alone.
            child = expected_child_size(cfg)
            debt = cfg.total_quantity * t_rel / cfg.horizon - self.state.q_executed
            window_vol = cfg.total_quantity * cfg.window / cfg.horizon
            if debt <= 0.5 * window_vol:
                tier = 1.0
            elif debt <= window_vol:
                tier = 2.0
            else:
                tier = 4.0
            size = min(size, max(1, math.ceil(tier * child)))
        return min(q_rem, max(0, size))

    def _nibble(self, size: int, q_rem: int, view: MarketView,
                final: bool) -> int:
        """Trim a market slice to the visible opposite-side depth.

        Sizing past the visible book only discards the residual (wasted
        placed volume) instead of filling it; retries on later wakes do
        better. The final wakes send the full remainder regardless.
        """
        if final:
            return min(size, q_rem)
        hit = self.config.side.hit_side
        q = view.quote
        if hit is Side.ASK:
            visible = q.ask_top_size + q.ask_deep_size
        else:
            visible = q.bid_top_size + q.bid_deep_size
        return min(size, max(visible, 0))

    def _near_touch_volume(self, view: MarketView) -> int:
        """Resting volume at the two cancellable levels (top and deep)."""
        side = self.config.side.book_side
        best = (view.quote.best_bid if side is Side.BID
                else view.quote.best_ask)
        if best is None:
            return sum(o.size for o in view.own_orders)
        deep = best - 1 if side is Side.BID else best + 1
        return (view.own_size_at(side, best) + view.own_size_at(side, deep))

    def _cancel_or_skip(self, view: MarketView) -> AgentAction:
        """Over-executed (or finished): pull resting orders reachable at the
        two cancellable levels, else skip. Deep orders go first; cancelling
        at the top burns queue position that costs twice to rebuild."""
        side = self.config.side.book_side
        best = (view.quote.best_bid if side is Side.BID else view.quote.best_ask)
        if best is None:
            return AgentAction.skip()
        deep = best - 1 if side is Side.BID else best + 1
        if view.own_size_at(side, deep) > 0:
            return AgentAction.cancel(side, Slot.DEEP)
        if view.own_size_at(side, best) > 0:
            return AgentAction.cancel(side, Slot.TOP)
        return AgentAction.skip()

    wake = decide
