"""Seeded multi-agent limit order book simulator.

Compound-Hawkes exogenous order flow over a price-time-priority book,
hosting a TWAP meta-order executor and an impulse-control RL market maker,
with execution-quality and market-impact measurement built in.
"""

from .events import EVENT_NAMES, EVENT_TYPES, Kind, MarketEvent, Side
from .hawkes import (EventHistory, HawkesEngine, HawkesParams, intensity_at,
                     load_default_params, load_params, sample_order_size,
                     save_params, stationarity_check)
from .lob import EXO, Fill, Lob, LogRecord, Order, QuoteState, Slot, replay_log
from .agents import (AgentAction, ActionKind, MarketView, WakeReason,
                     apply_action, schedule_wakes, timer_wakes)
from .twap import MetaSide, TwapAgent, TwapConfig, TwapState, expected_child_size, is_urgent
from .policy import (ObsNorm, PolicyParams, PpoConfig, RlMmAgent, SilBuffer,
                     Trajectory, build_observation, decision_forward,
                     action_forward, init_policy_params, load_checkpoint,
                     ppo_update, save_checkpoint, sil_update, step_reward)
from .metrics import (DecayPath, ImpactCurve, fit_decay_beta,
                      fit_impact_exponent, participation_rate, sharpe_ratio,
                      slippage_target_arrival)
from .runner import (EpisodeStats, ScenarioConfig, evaluate_policy,
                     run_episode, run_impact_study, run_scenario,
                     scenario_registry, train_frl, train_policy)

__version__ = "0.1.0"
