"""Multivariate compound Hawkes engine for exogenous order flow.

The 12 event types excite each other through exponential kernels:

    lambda_i(t) = mu_i * volume_scale
                  + sum_j sum_{t_k^j < t} alpha_ij * exp(-kappa_ij * (t - t_k^j))

Exponential kernels admit an O(1) recursion: the engine keeps a 12x12
accumulator S with S[i, j] = sum_k exp(-kappa_ij * (t - t_k^j)), decayed
lazily between events. With all alpha >= 0 the total intensity is
non-increasing between events, so Ogata thinning with a piecewise-constant
dominating rate (re-evaluated after every candidate) is exact.

Event marks (order sizes) are geometric on {1, 2, ...} with a per-type
configurable mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .events import EVENT_NAMES, MarketEvent, N_EVENT_TYPES


class HawkesConfigError(ValueError):
    """Raised for malformed or non-stationary parameter sets."""


@dataclass
class HawkesParams:
    """Baseline rates, excitation jumps, kernel decays and mark means.

    ``volume_scale`` multiplies the baseline only; excitation is left
    untouched so the branching structure (and therefore the flow's shape)
    is regime independent while throughput scales linearly.
    """

    baseline: np.ndarray          # (12,) events/second, >= 0
    alpha: np.ndarray             # (12, 12) intensity jump of type i per type-j event, >= 0
    kappa: np.ndarray             # (12, 12) kernel decay rates, > 0
    size_mean: np.ndarray         # (12,) mean order size per type, >= 1
    volume_scale: float = 1.0

    def __post_init__(self) -> None:
        self.baseline = np.asarray(self.baseline, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float)
        self.kappa = np.asarray(self.kappa, dtype=float)
        self.size_mean = np.asarray(self.size_mean, dtype=float)
        self.validate()

    def validate(self) -> None:
        n = N_EVENT_TYPES
        if self.baseline.shape != (n,):
            raise HawkesConfigError(f"baseline must have shape ({n},)")
        if self.alpha.shape != (n, n) or self.kappa.shape != (n, n):
            raise HawkesConfigError(f"alpha and kappa must have shape ({n}, {n})")
        if self.size_mean.shape != (n,):
            raise HawkesConfigError(f"size_mean must have shape ({n},)")
        if np.any(self.baseline < 0):
            raise HawkesConfigError("baseline rates must be non-negative")
        if np.any(self.alpha < 0):
            raise HawkesConfigError("alpha entries must be non-negative")
        if np.any(self.kappa <= 0):
            raise HawkesConfigError("kappa entries must be strictly positive")
        if np.any(self.size_mean < 1):
            raise HawkesConfigError("size_mean entries must be >= 1")
        if not self.volume_scale > 0:
            raise HawkesConfigError("volume_scale must be positive")

    @property
    def branching_matrix(self) -> np.ndarray:
        """Expected number of type-i children per type-j event."""
        return self.alpha / self.kappa

    def scaled(self, volume_scale: float) -> "HawkesParams":
        return HawkesParams(
            baseline=self.baseline.copy(),
            alpha=self.alpha.copy(),
            kappa=self.kappa.copy(),
            size_mean=self.size_mean.copy(),
            volume_scale=volume_scale,
        )

    def stationary_rates(self) -> np.ndarray:
        """Long-run event rates (I - B)^-1 mu, valid when stationary."""
        n = N_EVENT_TYPES
        return np.linalg.solve(np.eye(n) - self.branching_matrix,
                               self.baseline * self.volume_scale)


def stationarity_check(params: HawkesParams) -> tuple[bool, float]:
    """Spectral radius of alpha/kappa; the process is stationary iff < 1."""
    radius = float(np.max(np.abs(np.linalg.eigvals(params.branching_matrix))))
    return radius < 1.0, radius


def load_params(path: str | Path) -> HawkesParams:
    """Load a parameter file (YAML with baseline/alpha/kappa/size_mean keys)."""
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    missing = {"baseline", "alpha", "kappa", "size_mean"} - set(raw)
    if missing:
        raise HawkesConfigError(f"parameter file missing keys: {sorted(missing)}")
    return HawkesParams(
        baseline=np.array(raw["baseline"], dtype=float),
        alpha=np.array(raw["alpha"], dtype=float),
        kappa=np.array(raw["kappa"], dtype=float),
        size_mean=np.array(raw["size_mean"], dtype=float),
        volume_scale=float(raw.get("volume_scale", 1.0)),
    )


def save_params(params: HawkesParams, path: str | Path) -> None:
    payload = {
        "event_types": list(EVENT_NAMES),
        "baseline": [float(x) for x in params.baseline],
        "alpha": [[float(x) for x in row] for row in params.alpha],
        "kappa": [[float(x) for x in row] for row in params.kappa],
        "size_mean": [float(x) for x in params.size_mean],
        "volume_scale": float(params.volume_scale),
    }
    with open(path, "w") as fh:
        yaml.safe_dump(payload, fh, sort_keys=False)


def default_params_path() -> Path:
    return Path(__file__).parent / "data" / "hawkes_default.yaml"


def load_default_params() -> HawkesParams:
    return load_params(default_params_path())


@dataclass
class EventHistory:
    """Recursive exponential-kernel state: accumulators plus last event time.

    ``accum[i, j]`` carries sum_k exp(-kappa_ij * (t - t_k^j)) over past
    type-j events, valid at ``last_time``. Accumulators are non-negative
    and decay monotonically between events.
    """

    kappa: np.ndarray
    accum: np.ndarray = field(init=False)
    last_time: float = 0.0

    def __post_init__(self) -> None:
        self.accum = np.zeros_like(self.kappa)

    def advance(self, t: float) -> None:
        """Decay accumulators forward to time t (t >= last_time)."""
        if t < self.last_time:
            raise ValueError(f"cannot advance history backwards: {t} < {self.last_time}")
        if t > self.last_time:
            self.accum *= np.exp(-self.kappa * (t - self.last_time))
            self.last_time = t

    def record(self, type_index: int, t: float) -> None:
        """Register an event of the given type at time t."""
        self.advance(t)
        self.accum[:, type_index] += 1.0


def intensity_at(params: HawkesParams, history: EventHistory, t: float) -> np.ndarray:
    """Per-type intensity vector at time t (t >= history.last_time)."""
    if t < history.last_time:
        raise ValueError(f"intensity query at t={t} precedes last event time "
                         f"{history.last_time}")
    dt = t - history.last_time
    if dt > 0:
        accum = history.accum * np.exp(-params.kappa * dt)
    else:
        accum = history.accum
    return params.baseline * params.volume_scale + (params.alpha * accum).sum(axis=1)


def sample_order_size(params: HawkesParams, type_index: int,
                      rng: np.random.Generator) -> int:
    """Geometric order size on {1, 2, ...} with the configured per-type mean."""
    mean = params.size_mean[type_index]
    if mean < 1:
        raise HawkesConfigError(f"size_mean[{type_index}] must be >= 1, got {mean}")
    if mean == 1.0:
        return 1
    return int(rng.geometric(1.0 / mean))


class HawkesEngine:
    """Stateful per-episode generator of exogenous market events.

    Confined to a single episode worker; not thread-safe. Agent actions can
    be injected through :meth:`record_event` so that they excite subsequent
    flow exactly like exogenous events (endogenous impact).
    """

    def __init__(self, params: HawkesParams):
        stationary, radius = stationarity_check(params)
        if not stationary:
            raise HawkesConfigError(
                f"non-stationary parameters: spectral radius {radius:.4f} >= 1")
        self.params = params
        self.history = EventHistory(kappa=params.kappa)
        self._mu_scaled = params.baseline * params.volume_scale

    def intensity(self, t: float) -> np.ndarray:
        return intensity_at(self.params, self.history, t)

    def record_event(self, type_index: int, t: float) -> None:
        self.history.record(type_index, t)

    def peek_next_event(self, t_now: float,
                        rng: np.random.Generator) -> MarketEvent | None:
        """Ogata thinning from t_now without committing to the history.

        Callers that interleave other flow sources hold the returned event
        as pending, commit it with :meth:`record_event` when it is actually
        processed, and re-draw whenever the history changes first.
        Returns None if the flow is dead (zero bound).
        """
        if t_now < self.history.last_time:
            raise ValueError(f"t_now={t_now} precedes last event time "
                             f"{self.history.last_time}")
        alpha = self.params.alpha
        kappa = self.params.kappa
        accum = self.history.accum * np.exp(
            -kappa * (t_now - self.history.last_time))
        t = t_now
        bound = (self._mu_scaled + (alpha * accum).sum(axis=1)).sum()
        while True:
            if bound <= 0.0:
                return None
            dt = rng.exponential(1.0 / bound)
            t += dt
            accum = accum * np.exp(-kappa * dt)
            lam = self._mu_scaled + (alpha * accum).sum(axis=1)
            total = lam.sum()
            u = rng.uniform(0.0, bound)
            if u <= total:
                # Reuse the acceptance draw for the type selection: given
                # acceptance, u is uniform on [0, total).
                type_index = int(np.searchsorted(np.cumsum(lam), u, side="right"))
                type_index = min(type_index, len(lam) - 1)
                size = sample_order_size(self.params, type_index, rng)
                return MarketEvent(time=t, type_index=type_index, size=size)
            # Rejected: the decayed total is the dominating rate for the
            # next leg (intensity only decreases between events).
            bound = total

    def simulate_next_event(self, t_now: float,
                            rng: np.random.Generator) -> MarketEvent | None:
        """Draw and commit the next event; None if the flow is dead."""
        event = self.peek_next_event(t_now, rng)
        if event is not None:
            self.history.record(event.type_index, event.time)
        return event
