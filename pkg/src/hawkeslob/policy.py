"""Impulse-control market-making policy and its training machinery.

Two nets act in sequence each wake: a decision net emits the probability
of intervening at all; when intervention is sampled, an action net picks
among top-of-book quote placements/cancels and skip. The behavioural
policy is the product P(intervene) * P(action | intervene), and PPO ratios
use that joint log-probability. A value head shares the action-net trunk.

Training is PPO (clipped surrogate + GAE) with a self-imitation buffer
that replays transitions whose realised return beat the value estimate.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .agents import Agent, AgentAction, MarketView
from .events import Side
from .lob import QuoteState, Slot
from .nets import Adam, init_mlp, mlp_backward, mlp_forward

# Restricted action set: top-of-book placements and cancels, plus skip.
A_PLACE_BID = 0
A_PLACE_ASK = 1
A_CANCEL_BID = 2
A_CANCEL_ASK = 3
A_SKIP = 4
N_ACTIONS = 5

OBS_DIM = 13

CHECKPOINT_MAGIC = b"HLOBPOL1"
CHECKPOINT_VERSION = 1

# Transaction fee charged once inventory is liquidated: one basis point.
FEE_RATE = 1e-4


@dataclass(frozen=True)
class ObsNorm:
    """Fixed normalization constants, stored in every checkpoint header."""

    inventory: float = 20.0
    price_offset_ticks: float = 10.0
    spread_ticks: float = 5.0
    level_size: float = 10.0
    own_size: float = 5.0


@dataclass
class PpoConfig:
    clip_eps: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    learning_rate: float = 3e-4
    epochs: int = 4
    minibatch_size: int = 512
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    sil_weight: float = 1.0
    sil_batch_size: int = 64
    sil_updates: int = 2
    sil_capacity: int = 4096
    intervention_cost: float = 1e-4
    inventory_cap: int = 20
    hidden: int = 64

    def __post_init__(self) -> None:
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must lie in (0, 1)")
        if not 0 < self.gamma <= 1 or not 0 < self.gae_lambda <= 1:
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")


@dataclass
class PolicyParams:
    """Versioned parameter container for the two nets.

    ``decision`` is [W0, b0, W1, b1, W2, b2] (scalar intervene logit);
    ``action`` is [W0, b0, W1, b1, Wa, ba, Wv, bv] (action logits + value
    head sharing the trunk).
    """

    obs_dim: int
    hidden: int
    n_actions: int
    decision: list[np.ndarray]
    action: list[np.ndarray]
    norm: ObsNorm
    rho_aware: bool

    def groups(self) -> list[list[np.ndarray]]:
        return [self.decision, self.action]

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            obs_dim=self.obs_dim, hidden=self.hidden, n_actions=self.n_actions,
            decision=[p.copy() for p in self.decision],
            action=[p.copy() for p in self.action],
            norm=self.norm, rho_aware=self.rho_aware,
        )


def init_policy_params(rng: np.random.Generator, obs_dim: int = OBS_DIM,
                       hidden: int = 64, n_actions: int = N_ACTIONS,
                       norm: ObsNorm | None = None,
                       rho_aware: bool = False) -> PolicyParams:
    decision = init_mlp([obs_dim, hidden, hidden, 1], rng)
    action = init_mlp([obs_dim, hidden, hidden], rng, zero_head=False)
    head_rng_a = np.zeros((hidden, n_actions))
    head_rng_v = np.zeros((hidden, 1))
    action = action + [head_rng_a, np.zeros(n_actions), head_rng_v, np.zeros(1)]
    return PolicyParams(
        obs_dim=obs_dim, hidden=hidden, n_actions=n_actions,
        decision=decision, action=action,
        norm=norm or ObsNorm(), rho_aware=rho_aware,
    )


def zero_policy_params(obs_dim: int = OBS_DIM, hidden: int = 64,
                       n_actions: int = N_ACTIONS,
                       rho_aware: bool = False) -> PolicyParams:
    rng = np.random.default_rng(0)
    p = init_policy_params(rng, obs_dim, hidden, n_actions, rho_aware=rho_aware)
    for arr in p.decision + p.action:
        arr[...] = 0.0
    return p


# -- observations ----------------------------------------------------------

def build_observation(view: MarketView, rho: int, norm: ObsNorm,
                      ref_mid: float, quote: QuoteState) -> np.ndarray:
    """Feature vector from a (two-sided) quote snapshot.

    ``quote`` may be a fallback snapshot when the live book is one-sided;
    the caller tracks and counts that substitution. ``ref_mid`` is the
    midprice (in ticks) recorded when the agent started trading.
    """
    if quote.one_sided:
        raise ValueError("build_observation requires a two-sided quote")
    if rho not in (-1, 0, 1):
        raise ValueError(f"rho must be in {{-1, 0, 1}}, got {rho}")
    bb, ba = quote.best_bid, quote.best_ask
    top_b, top_a = quote.bid_top_size, quote.ask_top_size
    total_top = top_b + top_a
    span = view.trading_end - view.trading_start
    t_frac = (view.time - view.trading_start) / span if span > 0 else 0.0
    obs = np.array([
        view.inventory / norm.inventory,
        (bb - ref_mid) / norm.price_offset_ticks,
        (ba - ref_mid) / norm.price_offset_ticks,
        (ba - bb) / norm.spread_ticks,
        top_b / norm.level_size,
        top_a / norm.level_size,
        (top_b - top_a) / total_top if total_top > 0 else 0.0,
        view.own_size_at(Side.BID, bb) / norm.own_size,
        view.own_size_at(Side.ASK, ba) / norm.own_size,
        1.0 if view.own_size_at(Side.BID, bb) > 0 else 0.0,
        1.0 if view.own_size_at(Side.ASK, ba) > 0 else 0.0,
        min(max(t_frac, 0.0), 1.0),
        float(rho),
    ])
    if not np.all(np.isfinite(obs)):
        raise ValueError("non-finite observation features")
    return obs


def feasibility_mask(view: MarketView, quote: QuoteState,
                     inventory_cap: int) -> np.ndarray:
    """Boolean mask over the restricted action set.

    Placements that could push |inventory| (including resting exposure)
    past the cap are masked, as are cancels with nothing to cancel at the
    current best. Skip is always available.
    """
    resting_bid = sum(o.size for o in view.own_orders if o.side is Side.BID)
    resting_ask = sum(o.size for o in view.own_orders if o.side is Side.ASK)
    mask = np.ones(N_ACTIONS, dtype=bool)
    mask[A_PLACE_BID] = view.inventory + resting_bid < inventory_cap
    mask[A_PLACE_ASK] = view.inventory - resting_ask > -inventory_cap
    mask[A_CANCEL_BID] = view.own_size_at(Side.BID, quote.best_bid) > 0
    mask[A_CANCEL_ASK] = view.own_size_at(Side.ASK, quote.best_ask) > 0
    return mask


def action_to_agent_action(action_idx: int) -> AgentAction:
    if action_idx == A_PLACE_BID:
        return AgentAction.limit(Side.BID, Slot.TOP, 1)
    if action_idx == A_PLACE_ASK:
        return AgentAction.limit(Side.ASK, Slot.TOP, 1)
    if action_idx == A_CANCEL_BID:
        return AgentAction.cancel(Side.BID, Slot.TOP)
    if action_idx == A_CANCEL_ASK:
        return AgentAction.cancel(Side.ASK, Slot.TOP)
    return AgentAction.skip()


# -- forward passes ---------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def decision_logits(params: PolicyParams, x: np.ndarray):
    out, cache = mlp_forward(params.decision, x)
    return out[:, 0], cache


def decision_forward(params: PolicyParams, obs: np.ndarray) -> float:
    """Probability of intervening at this wake."""
    if not np.all(np.isfinite(obs)):
        raise ValueError("non-finite observation")
    z, _ = decision_logits(params, obs[None, :])
    return float(_sigmoid(z)[0])


def action_net_forward(params: PolicyParams, x: np.ndarray):
    w0, b0, w1, b1, wa, ba, wv, bv = params.action
    z1 = x @ w0 + b0
    a1 = np.tanh(z1)
    z2 = a1 @ w1 + b1
    a2 = np.tanh(z2)
    logits = a2 @ wa + ba
    value = (a2 @ wv + bv)[:, 0]
    return logits, value, (x, a1, a2)


def action_net_backward(params: PolicyParams, cache,
                        d_logits: np.ndarray, d_value: np.ndarray) -> list[np.ndarray]:
    w0, b0, w1, b1, wa, ba, wv, bv = params.action
    x, a1, a2 = cache
    dv = d_value[:, None]
    g_wa = a2.T @ d_logits
    g_ba = d_logits.sum(axis=0)
    g_wv = a2.T @ dv
    g_bv = dv.sum(axis=0)
    d_a2 = d_logits @ wa.T + dv @ wv.T
    d_z2 = d_a2 * (1.0 - a2 ** 2)
    g_w1 = a1.T @ d_z2
    g_b1 = d_z2.sum(axis=0)
    d_a1 = d_z2 @ w1.T
    d_z1 = d_a1 * (1.0 - a1 ** 2)
    g_w0 = x.T @ d_z1
    g_b0 = d_z1.sum(axis=0)
    return [g_w0, g_b0, g_w1, g_b1, g_wa, g_ba, g_wv, g_bv]


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise softmax with hard zeros on masked entries."""
    shifted = np.where(mask, logits, -np.inf)
    shifted = shifted - shifted.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(shifted), 0.0)
    total = e.sum(axis=1, keepdims=True)
    return e / total


def action_forward(params: PolicyParams, obs: np.ndarray,
                   mask: np.ndarray | None = None) -> np.ndarray:
    """Categorical distribution over the restricted action set."""
    if not np.all(np.isfinite(obs)):
        raise ValueError("non-finite observation")
    if mask is None:
        mask = np.ones(params.n_actions, dtype=bool)
    logits, _, _ = action_net_forward(params, obs[None, :])
    return masked_softmax(logits, mask[None, :])[0]


def value_forward(params: PolicyParams, obs: np.ndarray) -> float:
    _, value, _ = action_net_forward(params, obs[None, :])
    return float(value[0])


def joint_log_prob(p_intervene: np.ndarray, probs: np.ndarray,
                   intervened: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """log P(intervene) + intervened * log P(action | intervene)."""
    eps = 1e-300
    lp = np.where(intervened > 0.5, np.log(p_intervene + eps),
                  np.log1p(-np.clip(p_intervene, 0.0, 1.0 - 1e-16)))
    pa = probs[np.arange(len(actions)), actions]
    return lp + intervened * np.log(np.maximum(pa, eps))


# -- rewards ----------------------------------------------------------------

def step_reward(prev_mark: float, new_mark: float, liquidated_notional: float,
                intervened: bool, config: PpoConfig) -> float:
    """Mark-to-market P&L net of the liquidation fee and intervention cost."""
    if not (np.isfinite(prev_mark) and np.isfinite(new_mark)):
        raise ValueError("marks must be finite")
    reward = new_mark - prev_mark
    reward -= FEE_RATE * liquidated_notional
    if intervened:
        reward -= config.intervention_cost
    return reward


# -- trajectories and GAE -----------------------------------------------------

@dataclass
class Trajectory:
    obs: np.ndarray          # (T, D)
    intervened: np.ndarray   # (T,) float 0/1
    actions: np.ndarray      # (T,) int, 0 where not intervened
    masks: np.ndarray        # (T, K) bool
    log_probs: np.ndarray    # (T,)
    rewards: np.ndarray      # (T,)
    values: np.ndarray       # (T,)
    dones: np.ndarray        # (T,) float 0/1

    def __post_init__(self) -> None:
        n = len(self.obs)
        for name in ("intervened", "actions", "masks", "log_probs",
                     "rewards", "values", "dones"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"trajectory field {name} misaligned")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("non-finite rewards in trajectory")

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())


def gae_advantages(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                   gamma: float, lam: float,
                   last_value: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and discounted returns."""
    n = len(rewards)
    adv = np.zeros(n)
    next_value = last_value
    next_adv = 0.0
    for t in range(n - 1, -1, -1):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * not_done - values[t]
        next_adv = delta + gamma * lam * not_done * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


# -- PPO loss -----------------------------------------------------------------

@dataclass
class PpoBatch:
    obs: np.ndarray
    intervened: np.ndarray
    actions: np.ndarray
    masks: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray


def ppo_loss_and_grads(params: PolicyParams, batch: PpoBatch, cfg: PpoConfig):
    """Clipped-surrogate loss with entropy bonus and value regression.

    Returns (loss, decision grads, action grads, stats).
    """
    x = batch.obs
    n = len(x)
    i = batch.intervened
    a = batch.actions
    adv = batch.advantages

    z, dec_cache = decision_logits(params, x)
    p_int = _sigmoid(z)
    logits, values, act_cache = action_net_forward(params, x)
    probs = masked_softmax(logits, batch.masks)
    logp = joint_log_prob(p_int, probs, i, a)

    ratio = np.exp(logp - batch.old_log_probs)
    surr1 = ratio * adv
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    surr2 = clipped * adv
    use1 = surr1 <= surr2
    policy_loss = -np.minimum(surr1, surr2).mean()

    v_err = values - batch.returns
    value_loss = 0.5 * np.mean(v_err ** 2)

    # Joint entropy: Bernoulli gate plus gated categorical.
    softplus = np.logaddexp(0.0, z)        # log(1 + e^z)
    h_bern = p_int * (softplus - z) + (1.0 - p_int) * softplus
    safe_log = np.where(probs > 0, np.log(np.maximum(probs, 1e-300)), 0.0)
    h_cat = -(probs * safe_log).sum(axis=1)
    entropy = h_bern + p_int * h_cat

    loss = (policy_loss + cfg.value_coef * value_loss
            - cfg.entropy_coef * entropy.mean())

    # Gradients.
    d_logp = -(adv * ratio * use1) / n
    d_z = d_logp * (i - p_int)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), a] = 1.0
    d_logits = (d_logp * i)[:, None] * (onehot - probs)
    d_values = cfg.value_coef * v_err / n

    coef = -cfg.entropy_coef / n
    sig_grad = p_int * (1.0 - p_int)
    d_z += coef * (-z * sig_grad + sig_grad * h_cat)
    d_logits += coef * p_int[:, None] * (-probs * (safe_log + h_cat[:, None]))

    dec_grads, _ = mlp_backward(params.decision, dec_cache, d_z[:, None])
    act_grads = action_net_backward(params, act_cache, d_logits, d_values)

    stats = {
        "policy_loss": float(policy_loss),
        "value_loss": float(value_loss),
        "entropy": float(entropy.mean()),
        "mean_ratio": float(ratio.mean()),
        "clip_fraction": float(np.mean(~use1)),
    }
    return loss, dec_grads, act_grads, stats


def ppo_update(params: PolicyParams, trajectories: list[Trajectory],
               cfg: PpoConfig, optimizer: Adam,
               rng: np.random.Generator) -> dict:
    """Run the configured epochs of minibatched PPO over the trajectories."""
    if not trajectories:
        raise ValueError("ppo_update needs at least one trajectory")
    obs = np.concatenate([t.obs for t in trajectories])
    intervened = np.concatenate([t.intervened for t in trajectories])
    actions = np.concatenate([t.actions for t in trajectories])
    masks = np.concatenate([t.masks for t in trajectories])
    old_logp = np.concatenate([t.log_probs for t in trajectories])
    adv_parts, ret_parts = [], []
    for t in trajectories:
        adv, ret = gae_advantages(t.rewards, t.values, t.dones,
                                  cfg.gamma, cfg.gae_lambda)
        adv_parts.append(adv)
        ret_parts.append(ret)
    advantages = np.concatenate(adv_parts)
    returns = np.concatenate(ret_parts)
    std = advantages.std()
    if std > 1e-12:
        advantages = (advantages - advantages.mean()) / std

    n = len(obs)
    all_params = params.decision + params.action
    last_stats: dict = {}
    for _ in range(cfg.epochs):
        perm = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch_size):
            idx = perm[lo:lo + cfg.minibatch_size]
            batch = PpoBatch(obs[idx], intervened[idx], actions[idx],
                             masks[idx], old_logp[idx], advantages[idx],
                             returns[idx])
            loss, dec_g, act_g, stats = ppo_loss_and_grads(params, batch, cfg)
            if not np.isfinite(loss):
                raise FloatingPointError("non-finite PPO loss")
            optimizer.step(all_params, dec_g + act_g)
            last_stats = stats
    last_stats["n_samples"] = n
    return last_stats


# -- self-imitation -----------------------------------------------------------

@dataclass(order=True)
class _SilEntry:
    priority: float
    seq: int
    obs: np.ndarray = field(compare=False)
    intervened: float = field(compare=False)
    action: int = field(compare=False)
    ret: float = field(compare=False)


class SilBuffer:
    """Bounded store of transitions whose return beat the value estimate.

    Admission requires R > V(obs) at insertion; at capacity, a higher
    priority insert evicts the current minimum.
    """

    def __init__(self, capacity: int):
        import heapq
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._heap: list[_SilEntry] = []
        self._heapq = heapq
        self._seq = 0

    def __len__(self) -> int:
        return len(self._heap)

    def insert(self, obs: np.ndarray, intervened: float, action: int,
               ret: float, value_estimate: float) -> bool:
        gap = ret - value_estimate
        if gap <= 0:
            return False
        entry = _SilEntry(gap, self._seq, np.asarray(obs, dtype=float),
                          float(intervened), int(action), float(ret))
        self._seq += 1
        if len(self._heap) >= self.capacity:
            if gap <= self._heap[0].priority:
                return False
            self._heapq.heapreplace(self._heap, entry)
        else:
            self._heapq.heappush(self._heap, entry)
        return True

    def min_priority(self) -> float | None:
        return self._heap[0].priority if self._heap else None

    def sample(self, batch_size: int, rng: np.random.Generator) -> list[_SilEntry]:
        if not self._heap:
            return []
        k = min(batch_size, len(self._heap))
        prios = np.array([e.priority for e in self._heap])
        weights = prios / prios.sum()
        idx = rng.choice(len(self._heap), size=k, replace=False, p=weights)
        return [self._heap[j] for j in idx]


def sil_loss_and_grads(params: PolicyParams, obs: np.ndarray,
                       intervened: np.ndarray, actions: np.ndarray,
                       returns: np.ndarray, weights: np.ndarray,
                       cfg: PpoConfig):
    """(R - V)+-weighted log-likelihood plus 0.5 * (R - V)+^2 value regression.

    ``weights`` carries the advantage gaps computed before the update (the
    policy term treats them as constants).
    """
    n = len(obs)
    z, dec_cache = decision_logits(params, obs)
    p_int = _sigmoid(z)
    logits, values, act_cache = action_net_forward(params, obs)
    full_mask = np.ones_like(logits, dtype=bool)
    probs = masked_softmax(logits, full_mask)
    logp = joint_log_prob(p_int, probs, intervened, actions)

    gap = np.maximum(returns - values, 0.0)
    policy_loss = -(weights * logp).mean()
    value_loss = 0.5 * np.mean(gap ** 2)
    loss = cfg.sil_weight * (policy_loss + cfg.value_coef * value_loss)

    scale = cfg.sil_weight / n
    d_logp = -scale * weights
    d_z = d_logp * (intervened - p_int)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), actions] = 1.0
    d_logits = (d_logp * intervened)[:, None] * (onehot - probs)
    d_values = -scale * cfg.value_coef * gap

    dec_grads, _ = mlp_backward(params.decision, dec_cache, d_z[:, None])
    act_grads = action_net_backward(params, act_cache, d_logits, d_values)
    return loss, dec_grads, act_grads


def sil_update(params: PolicyParams, buffer: SilBuffer, cfg: PpoConfig,
               optimizer: Adam, rng: np.random.Generator) -> int:
    """One SIL pass; returns the number of contributing samples."""
    if len(buffer) == 0:
        return 0
    entries = buffer.sample(cfg.sil_batch_size, rng)
    obs = np.stack([e.obs for e in entries])
    intervened = np.array([e.intervened for e in entries])
    actions = np.array([e.action for e in entries], dtype=int)
    returns = np.array([e.ret for e in entries])
    _, values, _ = action_net_forward(params, obs)
    weights = np.maximum(returns - values, 0.0)
    if not np.any(weights > 0):
        return 0
    loss, dec_g, act_g = sil_loss_and_grads(params, obs, intervened, actions,
                                            returns, weights, cfg)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite SIL loss")
    optimizer.step(params.decision + params.action, dec_g + act_g)
    return int(np.count_nonzero(weights > 0))


# -- checkpoints ---------------------------------------------------------------

def save_checkpoint(params: PolicyParams, path: str | Path) -> None:
    """Write header (format version, shapes, norm constants, rho flag) plus
    flat little-endian float64 parameter blocks."""
    header = {
        "format_version": CHECKPOINT_VERSION,
        "obs_dim": params.obs_dim,
        "hidden": params.hidden,
        "n_actions": params.n_actions,
        "rho_aware": params.rho_aware,
        "norm": asdict(params.norm),
        "shapes": {
            "decision": [list(p.shape) for p in params.decision],
            "action": [list(p.shape) for p in params.action],
        },
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in params.decision + params.action:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


class CheckpointError(ValueError):
    pass


def load_checkpoint(path: str | Path) -> PolicyParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    off = len(CHECKPOINT_MAGIC)
    if len(data) < off + 4:
        raise CheckpointError("truncated checkpoint header")
    (hlen,) = struct.unpack_from("<I", data, off)
    off += 4
    try:
        header = json.loads(data[off:off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    off += hlen
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version "
                              f"{header.get('format_version')}")
    arrays: dict[str, list[np.ndarray]] = {}
    for group in ("decision", "action"):
        out = []
        for shape in header["shapes"][group]:
            n = int(np.prod(shape)) if shape else 1
            nbytes = n * 8
            if off + nbytes > len(data):
                raise CheckpointError("truncated checkpoint body")
            arr = np.frombuffer(data[off:off + nbytes], dtype="<f8").reshape(shape)
            out.append(arr.astype(float).copy())
            off += nbytes
        arrays[group] = out
    if off != len(data):
        raise CheckpointError("trailing bytes in checkpoint")
    params = PolicyParams(
        obs_dim=header["obs_dim"], hidden=header["hidden"],
        n_actions=header["n_actions"],
        decision=arrays["decision"], action=arrays["action"],
        norm=ObsNorm(**header["norm"]), rho_aware=header["rho_aware"],
    )
    d, h, k = params.obs_dim, params.hidden, params.n_actions
    expect_dec = [(d, h), (h,), (h, h), (h,), (h, 1), (1,)]
    expect_act = [(d, h), (h,), (h, h), (h,), (h, k), (k,), (h, 1), (1,)]
    got_dec = [p.shape for p in params.decision]
    got_act = [p.shape for p in params.action]
    if got_dec != expect_dec or got_act != expect_act:
        raise CheckpointError("checkpoint shapes do not match the configured "
                              f"architecture: {got_dec} / {got_act}")
    return params


# -- live agent -----------------------------------------------------------------

class RlMmAgent(Agent):
    """Market-making agent driving the impulse policy inside an episode.

    Wakes on its timer and on market orders / quote changes; quotes are
    one unit, top-of-book only. ``rho_fn`` maps a time to the meta-order
    presence signal; rho-blind policies always observe zero.
    """

    event_driven = True

    def __init__(self, params: PolicyParams, cfg: PpoConfig,
                 rng: np.random.Generator, period: float,
                 tick_size: float, rho_fn=None, agent_id: str = "rl",
                 collect: bool = False):
        self.params = params
        self.cfg = cfg
        self.rng = rng
        self.period = period
        self.tick_size = tick_size
        self.rho_fn = rho_fn or (lambda t: 0)
        self.agent_id = agent_id
        self.collect = collect
        self.ref_mid: float | None = None
        self.last_two_sided: QuoteState | None = None
        self.fallback_count = 0
        self.interventions = 0
        self.wakes = 0
        self._prev_mark: float | None = None
        self._prev_intervened = False
        self._obs: list[np.ndarray] = []
        self._intervened: list[float] = []
        self._actions: list[int] = []
        self._masks: list[np.ndarray] = []
        self._log_probs: list[float] = []
        self._values: list[float] = []
        self._rewards: list[float] = []

    def _usable_quote(self, quote: QuoteState) -> QuoteState:
        if not quote.one_sided:
            self.last_two_sided = quote
            return quote
        self.fallback_count += 1
        if self.last_two_sided is None:
            raise RuntimeError("no two-sided quote has been observed yet")
        return self.last_two_sided

    def mark_to_market(self, view: MarketView, quote: QuoteState) -> float:
        return view.cash + view.inventory * quote.mid * self.tick_size

    def wake(self, view: MarketView) -> AgentAction:
        quote = self._usable_quote(view.quote)
        if self.ref_mid is None:
            self.ref_mid = quote.mid
        self.wakes += 1
        rho = self.rho_fn(view.time) if self.params.rho_aware else 0
        obs = build_observation(view, rho, self.params.norm, self.ref_mid, quote)
        mark = self.mark_to_market(view, quote)
        if self.collect and self._prev_mark is not None:
            self._rewards.append(step_reward(self._prev_mark, mark, 0.0,
                                             self._prev_intervened, self.cfg))

        mask = feasibility_mask(view, quote, self.cfg.inventory_cap)
        p_int = decision_forward(self.params, obs)
        intervene = self.rng.uniform() < p_int
        probs = action_forward(self.params, obs, mask)
        if intervene:
            action_idx = int(self.rng.choice(N_ACTIONS, p=probs))
            self.interventions += 1
        else:
            action_idx = 0
        logp = float(joint_log_prob(np.array([p_int]), probs[None, :],
                                    np.array([1.0 if intervene else 0.0]),
                                    np.array([action_idx]))[0])
        if self.collect:
            self._obs.append(obs)
            self._intervened.append(1.0 if intervene else 0.0)
            self._actions.append(action_idx)
            self._masks.append(mask)
            self._log_probs.append(logp)
            self._values.append(value_forward(self.params, obs))
        self._prev_mark = mark
        self._prev_intervened = intervene
        if not intervene:
            return AgentAction.skip()
        return action_to_agent_action(action_idx)

    def finalize(self, final_mark: float,
                 liquidated_notional: float) -> Trajectory | None:
        """Close the last transition with the terminal reward (including the
        liquidation fee) and assemble the trajectory."""
        if not self.collect or not self._obs:
            return None
        if self._prev_mark is not None:
            self._rewards.append(step_reward(self._prev_mark, final_mark,
                                             liquidated_notional,
                                             self._prev_intervened, self.cfg))
        dones = np.zeros(len(self._obs))
        dones[-1] = 1.0
        return Trajectory(
            obs=np.array(self._obs),
            intervened=np.array(self._intervened),
            actions=np.array(self._actions, dtype=int),
            masks=np.array(self._masks, dtype=bool),
            log_probs=np.array(self._log_probs),
            rewards=np.array(self._rewards),
            values=np.array(self._values),
            dones=dones,
        )
