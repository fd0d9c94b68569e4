"""Scenario wiring: seeded episodes, experiment registry, training loops.

An episode interleaves one exogenous Hawkes stream with agent wakes over a
single book. Applied agent actions are recorded into the Hawkes history,
so agent flow excites subsequent exogenous flow (endogenous impact); the
pending exogenous event is re-drawn whenever that history changes.

Timeline: warm-up runs exogenous flow only on [0, warmup); agents trade on
[warmup, warmup + trading]. The TWAP meta-order starts at warmup plus its
configured offset.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import yaml

from .agents import (ActionKind, Agent, ActionResult, MarketView, OwnOrder,
                     WakeReason, action_log_record, apply_action)
from .events import Kind, Side, event_index
from .hawkes import HawkesEngine, HawkesParams, load_default_params, load_params
from .lob import EXO, Lob, LogRecord, QuoteState, Slot, fills_to_tuples
from .metrics import sharpe_ratio, slippage_target_arrival
from .nets import Adam
from .policy import (PolicyParams, PpoConfig, RlMmAgent, SilBuffer, Trajectory,
                     init_policy_params, load_checkpoint, ppo_update,
                     save_checkpoint, sil_update)
from .twap import MetaSide, TwapAgent, TwapConfig


# -- configuration -----------------------------------------------------------

@dataclass
class TwapSpec:
    side: str | None            # buy | sell | None (drawn per episode)
    total_quantity: int
    horizon: float
    window: float
    period: float
    start: float = 0.0          # offset from trading start, seconds
    start_sigma: float = 0.0    # > 0: start ~ Normal(start, sigma), clipped


@dataclass
class RlSpec:
    mode: str                   # "url" | "frl"
    period: float = 0.213
    checkpoint: str | None = None

    def __post_init__(self) -> None:
        if self.mode not in ("url", "frl"):
            raise ValueError(f"rl mode must be url or frl, got {self.mode!r}")


@dataclass
class ScenarioConfig:
    name: str
    trading_seconds: float
    warmup_seconds: float = 100.0
    volume_scale: float = 1.0
    hawkes_params_path: str | None = None
    twap: TwapSpec | None = None
    rl: RlSpec | None = None
    tick_size: float = 0.01
    initial_mid_ticks: int = 1000
    seed_order_size: int = 5

    def __post_init__(self) -> None:
        if self.warmup_seconds < 0:
            raise ValueError("warmup_seconds must be >= 0")
        if self.trading_seconds <= 0:
            raise ValueError("trading_seconds must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ScenarioConfig":
        raw = dict(raw)
        if raw.get("twap"):
            raw["twap"] = TwapSpec(**raw["twap"])
        if raw.get("rl"):
            raw["rl"] = RlSpec(**raw["rl"])
        return cls(**raw)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def load_scenario(path: str | Path) -> ScenarioConfig:
    with open(path) as fh:
        return ScenarioConfig.from_dict(yaml.safe_load(fh))


def save_scenario(config: ScenarioConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)


HPOV_TWAP = dict(total_quantity=300, horizon=300.0, window=50.0, period=1.0,
                 start=0.0)
RPOV1_TWAP = dict(total_quantity=300, horizon=300.0, window=50.0, period=1.0,
                  start=150.0)


def scenario_registry() -> dict[str, ScenarioConfig]:
    """The published experiment scenarios."""
    reg = {
        "twap_alone_hpov": ScenarioConfig(
            name="twap_alone_hpov", trading_seconds=300.0,
            twap=TwapSpec(side="buy", **HPOV_TWAP)),
        "twap_alone_rpov1": ScenarioConfig(
            name="twap_alone_rpov1", trading_seconds=300.0, volume_scale=40.0,
            twap=TwapSpec(side="buy", **HPOV_TWAP)),
        "twap_impact": ScenarioConfig(
            name="twap_impact", trading_seconds=2400.0,
            twap=TwapSpec(side="buy", total_quantity=1200, horizon=1200.0,
                          window=50.0, period=1.0, start=0.0)),
        "url_solo": ScenarioConfig(
            name="url_solo", trading_seconds=300.0,
            rl=RlSpec(mode="url")),
        "url_vs_rpov2": ScenarioConfig(
            name="url_vs_rpov2", trading_seconds=320.0,
            twap=TwapSpec(side="buy", total_quantity=8, horizon=320.0,
                          window=160.0, period=40.0, start=0.0),
            rl=RlSpec(mode="url")),
        "url_vs_hpov": ScenarioConfig(
            name="url_vs_hpov", trading_seconds=300.0,
            twap=TwapSpec(side="buy", **HPOV_TWAP),
            rl=RlSpec(mode="url")),
        "frl_train": ScenarioConfig(
            name="frl_train", trading_seconds=300.0, volume_scale=40.0,
            twap=TwapSpec(side=None, start_sigma=30.0, **RPOV1_TWAP),
            rl=RlSpec(mode="frl")),
        "frl_eval_buy": ScenarioConfig(
            name="frl_eval_buy", trading_seconds=300.0, volume_scale=40.0,
            twap=TwapSpec(side="buy", **RPOV1_TWAP),
            rl=RlSpec(mode="frl")),
        "frl_eval_sell": ScenarioConfig(
            name="frl_eval_sell", trading_seconds=300.0, volume_scale=40.0,
            twap=TwapSpec(side="sell", **RPOV1_TWAP),
            rl=RlSpec(mode="frl")),
    }
    return reg


def resolve_scenario(name_or_path: str) -> ScenarioConfig:
    reg = scenario_registry()
    if name_or_path in reg:
        return reg[name_or_path]
    path = Path(name_or_path)
    if path.exists():
        return load_scenario(path)
    raise KeyError(f"unknown scenario {name_or_path!r}; registry names: "
                   f"{sorted(reg)}")


# Mix of meta-order sides during fRL training episodes.
TRAIN_SIDE_MIX = (("buy", 0.4), ("sell", 0.4), (None, 0.2))


class EpisodeAbort(RuntimeError):
    """An agent fault aborted the episode; carries the partial log."""

    def __init__(self, message: str, log: list[LogRecord]):
        super().__init__(message)
        self.log = log


# -- episode state ------------------------------------------------------------

@dataclass
class Account:
    inventory: int = 0
    cash: float = 0.0


@dataclass
class EpisodeStats:
    scenario: str
    seed: int
    horizon: float
    warmup: float
    book_hash: str = ""
    exo_mo_volume: int = 0           # units traded by exogenous market orders
    total_mo_volume: int = 0
    dropped_exo_events: int = 0
    downgraded_actions: int = 0
    reseeds: int = 0
    n_exo_events: int = 0
    # TWAP
    twap_side: str | None = None
    twap_start: float | None = None  # absolute seconds
    twap_horizon: float | None = None
    arrival_mid: float | None = None
    twap_executed: int = 0
    twap_target: int = 0
    twap_fills: list = field(default_factory=list)       # (time, price, size)
    twap_orders: list = field(default_factory=list)      # (kind, size) placed
    slippage_bps: float | None = None
    # RL
    rl_mode: str | None = None
    rl_final_inventory: int = 0
    rl_final_mark: float | None = None
    rl_episode_return: float | None = None
    rl_interventions: int = 0
    rl_wakes: int = 0
    rl_fallbacks: int = 0
    sharpe_before: float | None = None
    sharpe_during: float | None = None
    sharpe_overall: float | None = None
    # 1-second sample paths
    sample_times: np.ndarray | None = None
    mid_path: np.ndarray | None = None
    rl_mark_path: np.ndarray | None = None
    rl_inventory_path: np.ndarray | None = None
    twap_exec_path: np.ndarray | None = None
    rho_path: np.ndarray | None = None

    def mean_child_size(self) -> float | None:
        if not self.twap_orders:
            return None
        return sum(s for _, s in self.twap_orders) / len(self.twap_orders)


@dataclass
class EpisodeResult:
    stats: EpisodeStats
    log: list[LogRecord]
    trajectory: Trajectory | None = None


_ACTION_EVENT = {
    (ActionKind.LIMIT, Slot.TOP): Kind.LO_TOP,
    (ActionKind.LIMIT, Slot.DEEP): Kind.LO_DEEP,
    (ActionKind.LIMIT, Slot.INSPREAD): Kind.LO_INSPREAD,
    (ActionKind.CANCEL, Slot.TOP): Kind.CO_TOP,
    (ActionKind.CANCEL, Slot.DEEP): Kind.CO_DEEP,
}


def _action_event_index(result: ActionResult) -> int | None:
    a = result.action
    if not result.applied:
        return None
    if a.kind is ActionKind.MARKET:
        return event_index(Kind.MO, a.side)
    if a.kind is ActionKind.SKIP:
        return None
    return event_index(_ACTION_EVENT[(a.kind, a.slot)], a.side)


_params_cache: dict[tuple[str, float], HawkesParams] = {}


def _load_hawkes(config: ScenarioConfig) -> HawkesParams:
    key = (config.hawkes_params_path or "<default>", config.volume_scale)
    if key not in _params_cache:
        base = (load_params(config.hawkes_params_path)
                if config.hawkes_params_path else load_default_params())
        _params_cache[key] = base.scaled(config.volume_scale)
    return _params_cache[key]


def _draw_twap(config: ScenarioConfig, rng: np.random.Generator,
               side_override: str | None = None) -> TwapConfig | None:
    spec = config.twap
    if spec is None:
        return None
    side = side_override if side_override is not None else spec.side
    if side is None:
        sides, probs = zip(*TRAIN_SIDE_MIX)
        side = sides[int(rng.choice(len(sides), p=np.array(probs)))]
        if side is None:
            return None
    start_rel = spec.start
    if spec.start_sigma > 0:
        start_rel = float(np.clip(rng.normal(spec.start, spec.start_sigma),
                                  0.0, config.trading_seconds - spec.window))
    return TwapConfig(
        side=MetaSide(side), total_quantity=spec.total_quantity,
        horizon=spec.horizon, window=spec.window, period=spec.period,
        start_time=config.warmup_seconds + start_rel,
    )


# -- the episode loop ----------------------------------------------------------

class _Episode:
    """Single seeded episode; builds everything from (config, seed)."""

    def __init__(self, config: ScenarioConfig, seed: int,
                 policy: PolicyParams | None = None,
                 ppo_cfg: PpoConfig | None = None,
                 collect: bool = False,
                 twap_side_override: str | None = None,
                 force_rho_blind: bool = False):
        self.config = config
        self.seed = seed
        ss = np.random.SeedSequence(seed)
        market_ss, agent_ss, policy_ss = ss.spawn(3)
        self.market_rng = np.random.default_rng(market_ss)
        self.agent_rng = np.random.default_rng(agent_ss)
        self.policy_rng = np.random.default_rng(policy_ss)

        self.params = _load_hawkes(config)
        self.engine = HawkesEngine(self.params)
        self.lob = Lob(tick_size=config.tick_size)
        self.horizon = config.warmup_seconds + config.trading_seconds
        self.log: list[LogRecord] = []
        self.seq = 0

        self.twap_cfg = _draw_twap(config, self.agent_rng, twap_side_override)
        self.twap: TwapAgent | None = None
        if self.twap_cfg is not None:
            self.twap = TwapAgent(self.twap_cfg)

        self.rl: RlMmAgent | None = None
        self.ppo_cfg = ppo_cfg or PpoConfig()
        if config.rl is not None:
            if policy is None:
                if config.rl.checkpoint:
                    policy = load_checkpoint(config.rl.checkpoint)
                else:
                    policy = init_policy_params(
                        np.random.default_rng(0), hidden=self.ppo_cfg.hidden,
                        rho_aware=(config.rl.mode == "frl"))
            want_rho = config.rl.mode == "frl" and not force_rho_blind
            if policy.rho_aware != want_rho:
                raise ValueError(
                    f"checkpoint rho_aware={policy.rho_aware} does not match "
                    f"scenario rl mode {config.rl.mode!r}")
            self.rl = RlMmAgent(
                policy, self.ppo_cfg, self.policy_rng, period=config.rl.period,
                tick_size=config.tick_size, rho_fn=self._rho, collect=collect)

        self.accounts: dict[str, Account] = {}
        self.agents: dict[str, Agent] = {}
        for agent in (self.twap, self.rl):
            if agent is not None:
                self.agents[agent.agent_id] = agent
                self.accounts[agent.agent_id] = Account()
        self._agent_order = {aid: i for i, aid in enumerate(self.agents)}

        self.stats = EpisodeStats(
            scenario=config.name, seed=seed, horizon=self.horizon,
            warmup=config.warmup_seconds,
            twap_side=(self.twap_cfg.side.value if self.twap_cfg else None),
            twap_start=(self.twap_cfg.start_time if self.twap_cfg else None),
            twap_horizon=(self.twap_cfg.horizon if self.twap_cfg else None),
            twap_target=(self.twap_cfg.total_quantity if self.twap_cfg else 0),
            rl_mode=config.rl.mode if config.rl else None,
        )

        # 1-second sampling
        self._samples: list[tuple[float, float, float, int, int, int]] = []
        self._next_sample = 1.0
        self._last_mid: float | None = None

        self._wake_heap: list[tuple[float, int, int, int, WakeReason]] = []
        self._wake_counter = 0

    # -- helpers ---------------------------------------------------------------

    def _rho(self, t: float) -> int:
        cfg = self.twap_cfg
        if cfg is None:
            return 0
        if cfg.start_time <= t < cfg.start_time + cfg.horizon:
            return 1 if cfg.side is MetaSide.BUY else -1
        return 0

    def _record(self, rec: LogRecord) -> None:
        self.log.append(rec)

    def _next_seq(self) -> int:
        self.seq += 1
        return self.seq

    def _seed_book_side(self, side: Side, t: float) -> None:
        anchor = (self.lob.last_best_bid if side is Side.BID
                  else self.lob.last_best_ask)
        if anchor is None:
            mid = self.config.initial_mid_ticks
            anchor = mid - 1 if side is Side.BID else mid + 1
        price = anchor
        opp = self.lob.best_ask() if side is Side.BID else self.lob.best_bid()
        if opp is not None:
            if side is Side.BID and price >= opp:
                price = opp - 1
            elif side is Side.ASK and price <= opp:
                price = opp + 1
        order = self.lob.place_at(EXO, side, price, self.config.seed_order_size, t)
        self.stats.reseeds += 1
        self._record(LogRecord(self._next_seq(), t, EXO, "seed",
                               side=side.value, price_ticks=order.price,
                               size=order.size))

    def _ensure_two_sided(self, t: float) -> None:
        if self.lob.best_bid() is None:
            self._seed_book_side(Side.BID, t)
        if self.lob.best_ask() is None:
            self._seed_book_side(Side.ASK, t)

    def _mid(self) -> float | None:
        q = self.lob.quote_state()
        if q.one_sided:
            return self._last_mid
        self._last_mid = q.mid
        return q.mid

    def _sample_to(self, t: float) -> None:
        """Record 1-second state samples strictly before time t."""
        while self._next_sample <= t and self._next_sample <= self.horizon:
            mid = self._mid()
            rl_acct = self.accounts.get("rl")
            mark = 0.0
            inv = 0
            if rl_acct is not None and mid is not None:
                mark = rl_acct.cash + rl_acct.inventory * mid * self.config.tick_size
                inv = rl_acct.inventory
            q_exec = self.twap.state.q_executed if self.twap else 0
            self._samples.append((self._next_sample, mid if mid is not None else np.nan,
                                  mark, inv, q_exec, self._rho(self._next_sample)))
            self._next_sample += 1.0

    def _settle_fills(self, fills, hit_side: Side, taker_owner: str,
                      t: float) -> None:
        ts = self.config.tick_size
        for f in fills:
            notional = f.price * ts * f.size
            if taker_owner in self.accounts:
                acct = self.accounts[taker_owner]
                if hit_side is Side.ASK:     # taker bought
                    acct.inventory += f.size
                    acct.cash -= notional
                else:
                    acct.inventory -= f.size
                    acct.cash += notional
                self.agents[taker_owner].on_fill(hit_side.opposite, f.price,
                                                 f.size, t, is_maker=False)
            if f.maker_owner in self.accounts:
                acct = self.accounts[f.maker_owner]
                if hit_side is Side.BID:     # maker's bid was hit: maker bought
                    acct.inventory += f.size
                    acct.cash -= notional
                else:
                    acct.inventory -= f.size
                    acct.cash += notional
                self.agents[f.maker_owner].on_fill(hit_side, f.price, f.size,
                                                   t, is_maker=True)
            if taker_owner == EXO:
                self.stats.exo_mo_volume += f.size
            self.stats.total_mo_volume += f.size

    def _push_timer(self, agent_id: str, t: float) -> None:
        agent = self.agents[agent_id]
        nxt = t + agent.period
        if nxt <= self._agent_end(agent_id) + 1e-9:
            heapq.heappush(self._wake_heap,
                           (nxt, 0, self._agent_order[agent_id],
                            self._bump(), WakeReason.TIMER))

    def _bump(self) -> int:
        self._wake_counter += 1
        return self._wake_counter

    def _agent_start(self, agent_id: str) -> float:
        if agent_id == "twap":
            return self.twap_cfg.start_time
        return self.config.warmup_seconds

    def _agent_end(self, agent_id: str) -> float:
        if agent_id == "twap":
            return min(self.twap_cfg.start_time + self.twap_cfg.horizon,
                       self.horizon)
        return self.horizon

    def _push_event_wakes(self, t: float, reason: WakeReason,
                          exclude: str | None) -> None:
        for aid, agent in self.agents.items():
            if not agent.event_driven or aid == exclude:
                continue
            if not (self._agent_start(aid) <= t <= self._agent_end(aid)):
                continue
            heapq.heappush(self._wake_heap,
                           (t, 1, self._agent_order[aid], self._bump(), reason))

    def _make_view(self, agent_id: str, t: float, reason: WakeReason) -> MarketView:
        acct = self.accounts[agent_id]
        own = tuple(OwnOrder(o.side, o.price, o.size)
                    for o in self.lob.orders_of(agent_id))
        return MarketView(
            time=t, reason=reason, quote=self.lob.quote_state(),
            inventory=acct.inventory, cash=acct.cash, own_orders=own,
            trading_start=self._agent_start(agent_id),
            trading_end=self._agent_end(agent_id),
        )

    # -- main loop ---------------------------------------------------------------

    def run(self) -> EpisodeResult:
        self._ensure_two_sided(0.0)
        pending = self.engine.peek_next_event(0.0, self.market_rng)
        agent_ids = list(self.agents)

        for aid in self.agents:
            start = self._agent_start(aid)
            heapq.heappush(self._wake_heap,
                           (start + self.agents[aid].period, 0,
                            self._agent_order[aid], self._bump(),
                            WakeReason.TIMER))

        while True:
            ev_time = pending.time if pending is not None else math.inf
            wake_time = self._wake_heap[0][0] if self._wake_heap else math.inf
            t_next = min(ev_time, wake_time)
            if t_next > self.horizon:
                break
            self._sample_to(t_next)

            if ev_time <= wake_time:
                self.engine.record_event(pending.type_index, pending.time)
                self._process_event(pending)
                pending = self.engine.peek_next_event(pending.time,
                                                      self.market_rng)
            else:
                entry = heapq.heappop(self._wake_heap)
                t, _, order_idx, _, reason = entry
                history_changed = self._process_wake(agent_ids[order_idx], t,
                                                     reason)
                if history_changed:
                    # The pending exogenous draw predates this action's
                    # excitation; re-draw from the updated history.
                    pending = self.engine.peek_next_event(t, self.market_rng)

        self._sample_to(self.horizon + 1e-9)
        return self._finish()

    def _process_event(self, ev) -> None:
        quote_before = self.lob.quote_state()
        outcome = self.lob.apply_market_event(ev)
        self.stats.n_exo_events += 1
        self._record(LogRecord(
            self._next_seq(), ev.time, EXO,
            "mo" if ev.kind is Kind.MO else
            ("co" if ev.kind in (Kind.CO_TOP, Kind.CO_DEEP) else "lo"),
            side=ev.side.value,
            slot=(None if ev.kind is Kind.MO else
                  {Kind.LO_DEEP: "deep", Kind.CO_DEEP: "deep",
                   Kind.LO_TOP: "top", Kind.CO_TOP: "top",
                   Kind.LO_INSPREAD: "inspread"}[ev.kind]),
            price_ticks=outcome.price,
            size=ev.size,
            fills=fills_to_tuples(outcome.fills),
            dropped=not outcome.applied,
        ))
        if outcome.fills:
            self._settle_fills(outcome.fills, ev.side, EXO, ev.time)
        self._ensure_two_sided(ev.time)
        quote_after = self.lob.quote_state()
        if ev.kind is Kind.MO and outcome.applied:
            self._push_event_wakes(ev.time, WakeReason.MARKET_ORDER_OBSERVED, None)
        elif (quote_after.best_bid != quote_before.best_bid
              or quote_after.best_ask != quote_before.best_ask):
            self._push_event_wakes(ev.time, WakeReason.SPREAD_CHANGED, None)

    def _purge_agent_orders(self, agent_id: str, t: float) -> bool:
        """Remove an agent's remaining resting orders (meta-order retired)."""
        removed = False
        for order in self.lob.orders_of(agent_id):
            cancelled = self.lob.cancel_at(agent_id, order.side, order.price)
            if cancelled is not None:
                removed = True
                self._record(LogRecord(self._next_seq(), t, agent_id, "purge",
                                       side=cancelled.side.value,
                                       price_ticks=cancelled.price,
                                       size=cancelled.size))
        return removed

    def _process_wake(self, agent_id: str, t: float, reason: WakeReason) -> bool:
        agent = self.agents[agent_id]
        if reason is WakeReason.TIMER:
            self._push_timer(agent_id, t)
        view = self._make_view(agent_id, t, reason)
        try:
            action = agent.wake(view)
        except Exception as exc:
            raise EpisodeAbort(f"agent {agent_id!r} failed at t={t:.3f}: {exc}",
                               self.log) from exc
        quote_before = self.lob.quote_state()
        result = apply_action(self.lob, agent_id, action, t)
        if result.downgraded:
            self.stats.downgraded_actions += 1
        self._record(action_log_record(self._next_seq(), t, agent_id, result))
        if agent_id == "twap" and result.applied and result.action.kind in (
                ActionKind.LIMIT, ActionKind.MARKET):
            self.stats.twap_orders.append((result.action.kind.value,
                                           result.action.size))
        if result.fills:
            self._settle_fills(result.fills, result.action.side, agent_id, t)
        if agent_id == "twap" and self.twap.state.done:
            # Meta-order horizon reached: retire whatever still rests so the
            # executed quantity is final (stray fills after the horizon
            # would overshoot Q and contaminate the post-execution paths).
            self._purge_agent_orders(agent_id, t)
        self._ensure_two_sided(t)
        quote_after = self.lob.quote_state()
        if result.applied and result.action.kind is ActionKind.MARKET:
            self._push_event_wakes(t, WakeReason.MARKET_ORDER_OBSERVED, agent_id)
        elif (quote_after.best_bid != quote_before.best_bid
              or quote_after.best_ask != quote_before.best_ask):
            self._push_event_wakes(t, WakeReason.SPREAD_CHANGED, agent_id)
        idx = _action_event_index(result)
        if idx is not None:
            self.engine.record_event(idx, t)
            return True
        return False

    # -- wrap-up --------------------------------------------------------------------

    def _finish(self) -> EpisodeResult:
        st = self.stats
        st.book_hash = self.lob.book_hash()
        st.dropped_exo_events = self.lob.dropped_events

        samples = np.array(self._samples) if self._samples else np.zeros((0, 6))
        st.sample_times = samples[:, 0]
        st.mid_path = samples[:, 1]
        st.rl_mark_path = samples[:, 2]
        st.rl_inventory_path = samples[:, 3].astype(int)
        st.twap_exec_path = samples[:, 4].astype(int)
        st.rho_path = samples[:, 5].astype(int)

        trajectory = None
        if self.twap is not None:
            st.twap_executed = self.twap.state.q_executed
            st.twap_fills = list(self.twap.fills)
            arrival = self._arrival_mid()
            st.arrival_mid = arrival
            if arrival is not None and self.twap.fills:
                ts = self.config.tick_size
                st.slippage_bps = slippage_target_arrival(
                    [(p * ts, s) for (_, p, s) in self.twap.fills],
                    arrival * ts, self.twap_cfg.side.value)

        if self.rl is not None:
            acct = self.accounts["rl"]
            mid = self._mid()
            if mid is None:
                mid = float(self.config.initial_mid_ticks)
            ts = self.config.tick_size
            liq_notional = abs(acct.inventory) * mid * ts
            acct.cash += acct.inventory * mid * ts
            final_mark = acct.cash
            acct.inventory = 0
            st.rl_final_inventory = int(samples[-1, 3]) if len(samples) else 0
            st.rl_final_mark = final_mark
            st.rl_interventions = self.rl.interventions
            st.rl_wakes = self.rl.wakes
            st.rl_fallbacks = self.rl.fallback_count
            trajectory = self.rl.finalize(final_mark, liq_notional)
            if trajectory is not None:
                st.rl_episode_return = trajectory.episode_return
            self._compute_sharpes(st)

        return EpisodeResult(stats=st, log=self.log, trajectory=trajectory)

    def _arrival_mid(self) -> float | None:
        """Midprice recorded at the TWAP start (the arrival price)."""
        start = self.twap_cfg.start_time
        marks = [(t, m) for (t, m, *_rest) in self._samples if t <= start + 1e-9]
        before = [m for t, m in marks if np.isfinite(m)]
        if before:
            return before[-1]
        mid = self._mid()
        return mid

    def _compute_sharpes(self, st: EpisodeStats) -> None:
        t = st.sample_times
        marks = st.rl_mark_path
        active = (t > self.config.warmup_seconds - 1e-9)
        if active.sum() < 3:
            return
        increments = np.diff(marks[active])
        inc_times = t[active][1:]
        st.sharpe_overall = sharpe_ratio(increments)
        if self.twap_cfg is not None:
            start = self.twap_cfg.start_time
            end = min(start + self.twap_cfg.horizon, self.horizon)
            before = increments[inc_times <= start]
            during = increments[(inc_times > start) & (inc_times <= end)]
            if len(before) >= 2:
                st.sharpe_before = sharpe_ratio(before)
            if len(during) >= 2:
                st.sharpe_during = sharpe_ratio(during)


def run_episode(config: ScenarioConfig, seed: int,
                policy: PolicyParams | None = None,
                ppo_cfg: PpoConfig | None = None,
                collect: bool = False,
                twap_side_override: str | None = None,
                force_rho_blind: bool = False) -> EpisodeResult:
    return _Episode(config, seed, policy=policy, ppo_cfg=ppo_cfg,
                    collect=collect, twap_side_override=twap_side_override,
                    force_rho_blind=force_rho_blind).run()


# -- scenario runs -----------------------------------------------------------------

STATS_COLUMNS = ["scenario", "episode", "seed", "side", "slippage_bps",
                 "sharpe_before", "sharpe_during", "pov_pct", "beta",
                 "sql_delta", "twap_executed", "mean_child_size",
                 "rl_return", "exo_volume_per_s"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def stats_row(config: ScenarioConfig, episode: int, st: EpisodeStats,
              baseline_volume: float | None = None) -> dict:
    pov = None
    if (st.twap_side is not None and baseline_volume
            and st.twap_horizon and st.twap_target):
        q_rate = st.twap_target / st.twap_horizon
        pov = 100.0 * q_rate / baseline_volume
    exo_rate = st.exo_mo_volume / st.horizon if st.horizon else None
    return {
        "scenario": config.name,
        "episode": episode,
        "seed": st.seed,
        "side": st.twap_side,
        "slippage_bps": st.slippage_bps,
        "sharpe_before": st.sharpe_before,
        "sharpe_during": st.sharpe_during,
        "pov_pct": pov,
        "beta": None,
        "sql_delta": None,
        "twap_executed": st.twap_executed,
        "mean_child_size": st.mean_child_size(),
        "rl_return": st.rl_episode_return,
        "exo_volume_per_s": exo_rate,
    }


def write_stats(rows: list[dict], path: str | Path) -> None:
    """Delimited stats table; header documents the Sharpe convention."""
    from .metrics import SECONDS_PER_YEAR
    lines = [f"# annualization_seconds_per_year={SECONDS_PER_YEAR}",
             ",".join(STATS_COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt(row.get(c)) for c in STATS_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n")


def read_stats(path: str | Path) -> list[dict]:
    lines = Path(path).read_text().splitlines()
    lines = [ln for ln in lines if not ln.startswith("#")]
    header = lines[0].split(",")
    rows = []
    for ln in lines[1:]:
        vals = ln.split(",")
        row = {}
        for key, val in zip(header, vals):
            if val == "":
                row[key] = None
            else:
                try:
                    row[key] = float(val) if key not in ("scenario", "side") else val
                except ValueError:
                    row[key] = val
        rows.append(row)
    return rows


def write_event_log(records: list[LogRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json())
            fh.write("\n")


def read_event_log(path: str | Path) -> list[LogRecord]:
    with open(path) as fh:
        return [LogRecord.from_json(line) for line in fh if line.strip()]


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    stats: list[EpisodeStats]
    rows: list[dict]
    failures: list[tuple[int, str]] = field(default_factory=list)


def run_scenario(config: ScenarioConfig, seeds: list[int],
                 out_dir: str | Path | None = None,
                 policy: PolicyParams | None = None,
                 write_logs: bool = False,
                 baseline_volume: float | None = None) -> ScenarioResult:
    """Run every seed, aggregate stats, and optionally persist artifacts."""
    if not seeds:
        raise ValueError("run_scenario needs at least one seed")
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    all_stats: list[EpisodeStats] = []
    rows: list[dict] = []
    failures: list[tuple[int, str]] = []
    for episode, seed in enumerate(seeds):
        try:
            result = run_episode(config, seed, policy=policy)
        except EpisodeAbort as exc:
            failures.append((seed, str(exc)))
            if out:
                partial = list(exc.log)
                partial.append(LogRecord(len(partial) + 1, -1.0, "system",
                                         "skip", dropped=True))
                write_event_log(partial, out / f"episode_{seed}.log.aborted")
            continue
        all_stats.append(result.stats)
        rows.append(stats_row(config, episode, result.stats, baseline_volume))
        if out and write_logs:
            write_event_log(result.log, out / f"episode_{seed}.log")
    if out:
        write_stats(rows, out / "stats.csv")
        manifest = {
            "scenario": config.name,
            "config_hash": config.config_hash(),
            "seeds": list(seeds),
            "failures": failures,
            "artifacts": ["stats.csv"],
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                      sort_keys=True))
    return ScenarioResult(config=config, stats=all_stats, rows=rows,
                          failures=failures)


# -- impact study -------------------------------------------------------------------

@dataclass
class ImpactStudy:
    curve_quantity: np.ndarray
    curve_impact: np.ndarray
    decay_z: np.ndarray
    decay_impact: np.ndarray
    sql_fit: object
    decay_fit: object
    n_episodes: int


def run_impact_study(config: ScenarioConfig, seeds: list[int],
                     z_max: float = 2.0) -> ImpactStudy:
    """Average in-execution impact curves and post-execution decay paths
    over seeded episodes, then fit the power-law exponent and the
    relaxation exponent."""
    from .metrics import (average_decay_path, bin_impact_curve, fit_decay_beta,
                          fit_impact_exponent)
    sign = 1.0
    exec_paths = []
    decay_paths = []
    for seed in seeds:
        result = run_episode(config, seed)
        st = result.stats
        if st.arrival_mid is None or not st.arrival_mid > 0:
            continue
        sign = 1.0 if st.twap_side == "buy" else -1.0
        t = st.sample_times
        rel = sign * (st.mid_path - st.arrival_mid) / st.arrival_mid
        start = st.twap_start
        horizon = st.twap_horizon
        in_exec = (t > start) & (t <= start + horizon)
        exec_paths.append((st.twap_exec_path[in_exec].astype(float), rel[in_exec]))
        z = (t - start) / horizon
        post = z >= 1.0
        if post.sum() >= 10:
            decay_paths.append((z[post], rel[post]))
    curve = bin_impact_curve(exec_paths)
    sql_fit = fit_impact_exponent(curve)
    z_grid = np.arange(1.0, z_max + 1e-9, 0.01)
    decay = average_decay_path(decay_paths, z_grid)
    decay_fit = fit_decay_beta(decay)
    return ImpactStudy(
        curve_quantity=curve.quantity, curve_impact=curve.impact,
        decay_z=decay.z, decay_impact=decay.impact,
        sql_fit=sql_fit, decay_fit=decay_fit, n_episodes=len(exec_paths),
    )


# -- training ------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: PolicyParams
    checkpoints: list[Path]
    log_rows: list[dict]
    halted: bool = False


def train_policy(config: ScenarioConfig, ppo_cfg: PpoConfig, episodes: int,
                 seed: int, out_dir: str | Path | None = None,
                 checkpoint_every: int = 50,
                 force_rho_blind: bool = False,
                 initial_policy: PolicyParams | None = None) -> TrainResult:
    """PPO + SIL training over seeded episodes of the given scenario.

    Episode seeds derive from the training seed; the TWAP side (when the
    scenario leaves it open) is drawn inside each episode. Divergence
    (non-finite loss) halts training, keeping the last good parameters.
    """
    if config.rl is None:
        raise ValueError("scenario has no RL agent to train")
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0FFEE]))
    rho_aware = config.rl.mode == "frl" and not force_rho_blind
    params = (initial_policy.copy() if initial_policy is not None
              else init_policy_params(
                  np.random.default_rng(np.random.SeedSequence([seed, 1])),
                  hidden=ppo_cfg.hidden, rho_aware=rho_aware))
    optimizer = Adam(params.decision + params.action, lr=ppo_cfg.learning_rate)
    buffer = SilBuffer(ppo_cfg.sil_capacity)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    checkpoints: list[Path] = []
    log_rows: list[dict] = []
    last_good = params.copy()
    halted = False

    for ep in range(episodes):
        ep_seed = int(np.random.SeedSequence([seed, 2, ep]).generate_state(1)[0])
        result = run_episode(config, ep_seed, policy=params, ppo_cfg=ppo_cfg,
                             collect=True, force_rho_blind=force_rho_blind)
        traj = result.trajectory
        if traj is None or len(traj.obs) < 2:
            continue
        # Monte-Carlo discounted returns feed the SIL buffer.
        mc = np.zeros(len(traj.rewards))
        acc = 0.0
        for i in range(len(traj.rewards) - 1, -1, -1):
            acc = traj.rewards[i] + ppo_cfg.gamma * acc * (1.0 - traj.dones[i])
            mc[i] = acc
        try:
            stats = ppo_update(params, [traj], ppo_cfg, optimizer, rng)
            for i in range(len(mc)):
                buffer.insert(traj.obs[i], traj.intervened[i], traj.actions[i],
                              mc[i], traj.values[i])
            sil_count = 0
            for _ in range(ppo_cfg.sil_updates):
                sil_count += sil_update(params, buffer, ppo_cfg, optimizer, rng)
        except FloatingPointError as exc:
            halted = True
            params = last_good
            log_rows.append({"update": ep, "halted": str(exc)})
            break
        last_good = params.copy()
        log_rows.append({
            "update": ep,
            "episode_return": traj.episode_return,
            "clip_fraction": stats.get("clip_fraction"),
            "value_loss": stats.get("value_loss"),
            "entropy": stats.get("entropy"),
            "sil_contributions": sil_count,
            "buffer_size": len(buffer),
            "rho": {None: 0, "buy": 1, "sell": -1}[result.stats.twap_side],
            "final_inventory": result.stats.rl_final_inventory,
        })
        if out and (ep + 1) % checkpoint_every == 0:
            path = out / f"checkpoint_{ep + 1:05d}.bin"
            save_checkpoint(params, path)
            checkpoints.append(path)

    if out:
        path = out / "checkpoint_final.bin"
        save_checkpoint(params, path)
        checkpoints.append(path)
        with open(out / "training_log.jsonl", "w") as fh:
            for row in log_rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    return TrainResult(params=params, checkpoints=checkpoints,
                       log_rows=log_rows, halted=halted)


def train_frl(ppo_cfg: PpoConfig, episodes: int, seed: int,
              out_dir: str | Path | None = None,
              checkpoint_every: int = 50) -> TrainResult:
    """Train the meta-order-aware policy on the published frl_train scenario."""
    return train_policy(scenario_registry()["frl_train"], ppo_cfg, episodes,
                        seed, out_dir, checkpoint_every)


def inventory_by_rho(log_rows: list[dict]) -> dict[int, float]:
    """Median end-of-episode inventory per meta-order regime (diagnostic)."""
    out: dict[int, float] = {}
    for rho in (-1, 0, 1):
        vals = [r["final_inventory"] for r in log_rows
                if r.get("rho") == rho and "final_inventory" in r]
        if vals:
            out[rho] = float(np.median(vals))
    return out


# -- evaluation ----------------------------------------------------------------------

@dataclass
class EvalReport:
    """Before/during Sharpe cells and TWAP slippage, buy and sell columns."""

    sharpe: dict                 # {"before": {"buy": x, "sell": y}, "during": ...}
    slippage: dict               # {"buy": x, "sell": y}
    mean_during_return: dict     # {"buy": x, "sell": y}
    episodes: int

    def cells(self) -> dict:
        return {"sharpe": self.sharpe, "slippage": self.slippage}


def evaluate_policy(policy: PolicyParams | str | Path, episodes: int = 20,
                    seed: int = 7070, ppo_cfg: PpoConfig | None = None,
                    force_rho_blind: bool = False) -> EvalReport:
    """Buy- and sell-side evaluation against the fixed mid-session TWAP."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if not isinstance(policy, PolicyParams):
        policy = load_checkpoint(policy)
    reg = scenario_registry()
    sharpe = {"before": {}, "during": {}}
    slippage = {}
    mean_ret = {}
    for side, scen_name in (("buy", "frl_eval_buy"), ("sell", "frl_eval_sell")):
        config = reg[scen_name]
        if policy.rho_aware != (config.rl.mode == "frl" and not force_rho_blind):
            raise ValueError(
                f"checkpoint rho_aware={policy.rho_aware} does not match "
                f"evaluation mode for {scen_name}")
        before, during, slips, rets = [], [], [], []
        for ep in range(episodes):
            ep_seed = int(np.random.SeedSequence([seed, 3, ep]).generate_state(1)[0])
            result = run_episode(config, ep_seed, policy=policy, ppo_cfg=ppo_cfg,
                                 collect=True, force_rho_blind=force_rho_blind)
            st = result.stats
            if st.sharpe_before is not None:
                before.append(st.sharpe_before)
            if st.sharpe_during is not None:
                during.append(st.sharpe_during)
            if st.slippage_bps is not None:
                slips.append(st.slippage_bps)
            rets.append(_during_return(result))
        sharpe["before"][side] = float(np.mean(before)) if before else None
        sharpe["during"][side] = float(np.mean(during)) if during else None
        slippage[side] = float(np.mean(slips)) if slips else None
        mean_ret[side] = float(np.mean(rets)) if rets else None
    return EvalReport(sharpe=sharpe, slippage=slippage,
                      mean_during_return=mean_ret, episodes=episodes)


def _during_return(result: EpisodeResult) -> float:
    """Mark-to-market P&L of the RL agent over the TWAP-active window."""
    st = result.stats
    t = st.sample_times
    marks = st.rl_mark_path
    start = st.twap_start
    end = min(start + st.twap_horizon, st.horizon)
    sel = (t >= start) & (t <= end)
    if sel.sum() < 2:
        return 0.0
    window = marks[sel]
    return float(window[-1] - window[0])
