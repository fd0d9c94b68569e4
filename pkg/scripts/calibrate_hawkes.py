#!/usr/bin/env python3
"""Calibrate the default Hawkes parameter file by simulation sweep.

The flow model needs defaults that deliver, at volume_scale = 1:

  * exogenous traded volume of about 0.55 units/second (x40 under the
    high-volume regime),
  * a stable two-sided book with a spread of a few ticks,
  * high limit-order fill rates for a meta-order working one unit/second
    (so scheduled child orders stay near size one),
  * concave in-execution impact and partial post-execution relaxation.

The parameter matrices are built from a small set of structural couplings
(same-type clustering, liquidity-begets-trading, market-order momentum,
and a slow opposite-refill channel that mean-reverts impact), the
baselines are solved from target stationary rates, and the knobs are
tuned by measuring simulated episodes. Run with --write to freeze the
result into src/hawkeslob/data/hawkes_default.yaml.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from hawkeslob.events import EVENT_NAMES, N_EVENT_TYPES, event_index_by_name
from hawkeslob.hawkes import (HawkesEngine, HawkesParams, save_params,
                              stationarity_check)
from hawkeslob.lob import Lob


IDX = {name: event_index_by_name(name) for name in EVENT_NAMES}


def mirror(i: int) -> int:
    return N_EVENT_TYPES - 1 - i


def build_params(
    # target stationary event rates per side (events/second)
    rate_mo: float = 0.14,
    rate_lo_top: float = 0.25,
    rate_lo_deep: float = 0.15,
    rate_lo_inspread: float = 0.25,
    rate_co_top: float = 0.30,
    rate_co_deep: float = 0.18,
    # mark means
    size_mo: float = 2.0,
    size_lo_top: float = 1.5,
    size_lo_deep: float = 3.0,
    size_inspread: float = 1.5,
    # structural couplings (expected children per parent event)
    self_cluster: float = 0.10,
    mo_momentum: float = 0.20,
    liquidity_to_mo: float = 0.40,     # lo_top -> same-side mo
    mo_to_refill_li: float = 0.45,     # mo -> same-side lo_inspread (slow: relaxation)
    mo_to_refill_lt: float = 0.20,     # mo -> same-side lo_top
    mo_to_refill_ld: float = 0.30,     # mo -> same-side lo_deep (rebuild depth)
    improve_to_join: float = 0.15,     # lo_inspread -> same-side lo_top
    cancel_to_refill: float = 0.15,    # co_top -> same-side lo_inspread (fast)
    join_to_improve: float = 0.15,     # lo_top -> same-side lo_inspread (fast)
    # kernel decay rates (1/s)
    kappa_fast: float = 0.8,
    kappa_momentum: float = 0.15,
    kappa_refill: float = 0.02,
) -> HawkesParams:
    n = N_EVENT_TYPES
    branching = np.zeros((n, n))
    kappa = np.full((n, n), kappa_fast)

    def couple(child: str, parent: str, b: float, k: float) -> None:
        i, j = IDX[child], IDX[parent]
        branching[i, j] = b
        kappa[i, j] = k
        branching[mirror(i), mirror(j)] = b
        kappa[mirror(i), mirror(j)] = k

    for name in ("lo_deep_bid", "co_deep_bid", "lo_top_bid", "co_top_bid",
                 "mo_bid", "lo_inspread_bid"):
        couple(name, name, self_cluster, kappa_fast)
    couple("mo_bid", "mo_bid", mo_momentum, kappa_momentum)
    couple("mo_bid", "lo_top_bid", liquidity_to_mo, kappa_fast)
    couple("lo_inspread_bid", "mo_bid", mo_to_refill_li, kappa_refill)
    couple("lo_top_bid", "mo_bid", mo_to_refill_lt, kappa_fast)
    couple("lo_deep_bid", "mo_bid", mo_to_refill_ld, kappa_fast)
    couple("lo_top_bid", "lo_inspread_bid", improve_to_join, kappa_fast)
    couple("lo_inspread_bid", "co_top_bid", cancel_to_refill, kappa_fast)
    couple("lo_inspread_bid", "lo_top_bid", join_to_improve, kappa_fast)

    target = np.zeros(n)
    per_side = {
        "lo_deep": rate_lo_deep, "co_deep": rate_co_deep,
        "lo_top": rate_lo_top, "co_top": rate_co_top,
        "mo": rate_mo, "lo_inspread": rate_lo_inspread,
    }
    for key, rate in per_side.items():
        target[IDX[f"{key}_bid"]] = rate
        target[IDX[f"{key}_ask"]] = rate

    baseline = (np.eye(n) - branching) @ target
    if np.any(baseline < -1e-12):
        bad = [EVENT_NAMES[i] for i in np.where(baseline < -1e-12)[0]]
        raise ValueError(f"negative baseline for {bad}: excitation already "
                         f"exceeds the target stationary rates")
    baseline = np.maximum(baseline, 0.0)

    size_mean = np.ones(n)
    for key, mean in (("lo_deep", size_lo_deep), ("lo_top", size_lo_top),
                      ("lo_inspread", size_inspread), ("mo", size_mo),
                      ("co_deep", 1.0), ("co_top", 1.0)):
        size_mean[IDX[f"{key}_bid"]] = mean
        size_mean[IDX[f"{key}_ask"]] = mean

    return HawkesParams(baseline=baseline, alpha=branching * kappa,
                        kappa=kappa, size_mean=size_mean)


def measure_flow(params: HawkesParams, seeds: range, horizon: float = 400.0,
                 warmup: float = 100.0) -> dict:
    """Simulate exogenous-only episodes and measure flow statistics."""
    vols, spreads, mids, drops, top_sizes, events = [], [], [], [], [], []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        engine = HawkesEngine(params)
        lob = Lob()
        lob.place_at("exo", lob_side_bid(), 999, 5, 0.0)
        lob.place_at("exo", lob_side_ask(), 1001, 5, 0.0)
        t = 0.0
        vol = 0
        n_ev = 0
        spread_samples, mid_samples, top_samples = [], [], []
        next_sample = warmup
        while True:
            ev = engine.simulate_next_event(t, rng)
            if ev is None or ev.time > horizon:
                break
            t = ev.time
            while next_sample <= t and next_sample <= horizon:
                q = lob.quote_state()
                if not q.one_sided:
                    spread_samples.append(q.spread)
                    mid_samples.append(q.mid)
                    top_samples.append((q.bid_top_size + q.ask_top_size) / 2)
                next_sample += 1.0
            outcome = lob.apply_market_event(ev)
            n_ev += 1
            if t >= warmup:
                vol += sum(f.size for f in outcome.fills)
            if lob.best_bid() is None:
                lob.place_at("exo", lob_side_bid(), (lob.last_best_bid or 999), 5, t)
            if lob.best_ask() is None:
                lob.place_at("exo", lob_side_ask(), (lob.last_best_ask or 1001), 5, t)
        vols.append(vol / (horizon - warmup))
        spreads.append(np.mean(spread_samples) if spread_samples else np.nan)
        mids.append(np.std(mid_samples) if mid_samples else np.nan)
        top_sizes.append(np.mean(top_samples) if top_samples else np.nan)
        drops.append(lob.dropped_events / max(n_ev, 1))
        events.append(n_ev / horizon)
    return {
        "volume_per_s": float(np.mean(vols)),
        "volume_sd": float(np.std(vols)),
        "mean_spread": float(np.nanmean(spreads)),
        "mid_sd": float(np.nanmean(mids)),
        "mean_top_size": float(np.nanmean(top_sizes)),
        "drop_frac": float(np.mean(drops)),
        "events_per_s": float(np.mean(events)),
    }


def lob_side_bid():
    from hawkeslob.events import Side
    return Side.BID


def lob_side_ask():
    from hawkeslob.events import Side
    return Side.ASK


def measure_twap(params_path: Path | None, seeds: range) -> dict:
    """Run the high-participation TWAP scenario and report execution stats."""
    from hawkeslob.runner import run_episode, scenario_registry
    config = scenario_registry()["twap_alone_hpov"]
    if params_path is not None:
        config.hawkes_params_path = str(params_path)
    slips, childs, execs, mo_frac = [], [], [], []
    for seed in seeds:
        st = run_episode(config, seed).stats
        slips.append(st.slippage_bps)
        childs.append(st.mean_child_size())
        execs.append(st.twap_executed)
        mo_vol = sum(s for k, s in st.twap_orders if k == "market")
        tot = sum(s for _, s in st.twap_orders)
        mo_frac.append(mo_vol / tot if tot else 0.0)
    return {
        "mean_slippage_bps": float(np.mean([s for s in slips if s is not None])),
        "mean_child_size": float(np.mean(childs)),
        "min_exec": int(np.min(execs)),
        "complete_frac": float(np.mean([e == 300 for e in execs])),
        "mo_volume_frac": float(np.mean(mo_frac)),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=8)
    ap.add_argument("--write", action="store_true",
                    help="freeze the tuned parameters into the package data file")
    ap.add_argument("--twap", action="store_true", help="also run TWAP checks")
    args = ap.parse_args()

    params = build_params()
    ok, radius = stationarity_check(params)
    print(f"spectral radius: {radius:.4f} (stationary: {ok})")
    print("stationary event rates:")
    for name, rate in zip(EVENT_NAMES, params.stationary_rates()):
        print(f"  {name:18s} {rate:8.4f} /s")

    flow = measure_flow(params, range(args.seeds))
    for k, v in flow.items():
        print(f"  {k:18s} {v:.4f}")

    out = Path(__file__).resolve().parents[1] / "src" / "hawkeslob" / "data" / "hawkes_default.yaml"
    if args.write:
        out.parent.mkdir(parents=True, exist_ok=True)
        save_params(params, out)
        print(f"wrote {out}")

    if args.twap:
        twap = measure_twap(out if out.exists() else None, range(args.seeds))
        for k, v in twap.items():
            print(f"  twap {k:18s} {v:.4f}")


if __name__ == "__main__":
    main()
