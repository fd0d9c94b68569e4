"""Execution-quality and impact measures.

All functions are pure. Undefined results (no fills, zero variance, zero
denominator, failed fits) come back as ``None`` rather than infinities or
exceptions, so callers can report them distinctly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

# Annualization for "annual" Sharpe from per-second increments:
# 252 trading days x 6.5 hours. Documented in all stats output headers.
SECONDS_PER_YEAR = 252 * 6.5 * 3600.0


def slippage_target_arrival(fills: list[tuple[float, int]], arrival_mid: float,
                            side: str) -> float | None:
    """Target-arrival slippage in bps: positive = cost, negative = improvement.

    ``fills`` are (price, size) pairs in any consistent price unit;
    ``arrival_mid`` is the midprice recorded at meta-order start.
    """
    if arrival_mid <= 0:
        raise ValueError("arrival_mid must be positive")
    if side not in ("buy", "sell"):
        raise ValueError(f"side must be buy or sell, got {side!r}")
    total = sum(s for _, s in fills)
    if total == 0:
        return None
    vwap = sum(p * s for p, s in fills) / total
    signed = (vwap - arrival_mid) if side == "buy" else (arrival_mid - vwap)
    return signed / arrival_mid * 1e4


def participation_rate(q: float, v: float) -> float | None:
    """Participation rate 100*q/v in percent; None when v is not positive."""
    if v <= 0:
        return None
    return 100.0 * q / v


def sharpe_ratio(pnl_increments: np.ndarray, dt: float = 1.0,
                 annualization: float = SECONDS_PER_YEAR) -> float | None:
    """Annualized mean/std of P&L increments; None when variance is zero."""
    x = np.asarray(pnl_increments, dtype=float)
    if len(x) < 2:
        return None
    std = x.std(ddof=0)
    if std < 1e-15:
        return None
    return float(x.mean() / std * math.sqrt(annualization / dt))


@dataclass
class ImpactCurve:
    """Averaged in-execution impact: executed quantity vs relative price move.

    Sell-side paths are sign-flipped before averaging so impact is positive
    for a well-behaved meta-order on either side.
    """

    quantity: np.ndarray
    impact: np.ndarray

    def __post_init__(self) -> None:
        self.quantity = np.asarray(self.quantity, dtype=float)
        self.impact = np.asarray(self.impact, dtype=float)
        if len(self.quantity) != len(self.impact):
            raise ValueError("quantity and impact must align")
        if np.any(np.diff(self.quantity) < 0):
            raise ValueError("executed quantity must be non-decreasing")


@dataclass
class DecayPath:
    """Post-execution relaxation: z = t/T >= 1 vs impact relative to its
    value at z = 1 (the execution end)."""

    z: np.ndarray
    impact: np.ndarray

    def __post_init__(self) -> None:
        self.z = np.asarray(self.z, dtype=float)
        self.impact = np.asarray(self.impact, dtype=float)
        if len(self.z) != len(self.impact):
            raise ValueError("z and impact must align")
        if np.any(self.z < 1.0 - 1e-12):
            raise ValueError("decay path is defined for z >= 1")
        if np.any(np.diff(self.z) <= 0):
            raise ValueError("z must be strictly increasing")


@dataclass
class ImpactFit:
    exponent: float
    coefficient: float
    r_squared: float


def fit_impact_exponent(curve: ImpactCurve) -> ImpactFit | None:
    """Log-log least squares of impact against executed quantity.

    Points with non-positive impact or quantity are excluded; if more than
    half the points are unusable the fit fails (None).
    """
    q, imp = curve.quantity, curve.impact
    if len(q) < 10:
        raise ValueError("need at least 10 points to fit an impact exponent")
    usable = (q > 0) & (imp > 0)
    if usable.sum() < 0.5 * len(q):
        return None
    lq, li = np.log(q[usable]), np.log(imp[usable])
    delta, logc = np.polyfit(lq, li, 1)
    pred = logc + delta * lq
    ss_res = float(np.sum((li - pred) ** 2))
    ss_tot = float(np.sum((li - li.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ImpactFit(exponent=float(delta), coefficient=float(np.exp(logc)),
                     r_squared=r2)


def decay_model(z: np.ndarray, beta: float) -> np.ndarray:
    """Normalized relaxation z^(1-beta) - (z-1)^(1-beta); equals 1 at z=1."""
    zm1 = np.maximum(z - 1.0, 0.0)
    return np.power(z, 1.0 - beta) - np.power(zm1, 1.0 - beta)


@dataclass
class DecayFit:
    beta: float
    rmse: float
    converged: bool = True


def fit_decay_beta(path: DecayPath, grid_step: float = 0.005) -> DecayFit:
    """Fit the relaxation exponent over beta in (0, 1), grid then refine.

    The path is assumed normalized to its value at z = 1. If refinement
    fails the best grid point is returned with ``converged=False``.
    """
    z, y = path.z, path.impact
    inside = z > 1.0 + 1e-12
    if inside.sum() < 10:
        raise ValueError("need at least 10 points with z > 1")
    if not np.any(y > 0):
        raise ValueError("decay path has no positive impact values")
    z_in, y_in = z[inside], y[inside]

    def rmse(beta: float) -> float:
        return float(np.sqrt(np.mean((decay_model(z_in, beta) - y_in) ** 2)))

    grid = np.arange(grid_step, 1.0, grid_step)
    errs = np.array([rmse(b) for b in grid])
    best_idx = int(np.argmin(errs))
    b0 = float(grid[best_idx])
    lo = max(grid_step / 10, b0 - 2 * grid_step)
    hi = min(1.0 - 1e-9, b0 + 2 * grid_step)
    try:
        res = minimize_scalar(rmse, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-7})
        if res.success and res.fun <= errs[best_idx] + 1e-15:
            return DecayFit(beta=float(res.x), rmse=float(res.fun))
    except (ValueError, FloatingPointError):
        pass
    return DecayFit(beta=b0, rmse=float(errs[best_idx]), converged=False)


def bin_impact_curve(paths: list[tuple[np.ndarray, np.ndarray]],
                     n_bins: int = 10) -> ImpactCurve:
    """Average per-episode (quantity, impact) paths into quantity-quantile bins.

    Pools all samples and bins by executed-quantity quantiles, so each bin
    averages a comparable mass of observations across episodes.
    """
    q_all = np.concatenate([q for q, _ in paths])
    i_all = np.concatenate([i for _, i in paths])
    pos = q_all > 0
    q_all, i_all = q_all[pos], i_all[pos]
    if len(q_all) < n_bins:
        raise ValueError("not enough samples to bin the impact curve")
    edges = np.quantile(q_all, np.linspace(0.0, 1.0, n_bins + 1))
    edges = np.unique(edges)
    which = np.clip(np.searchsorted(edges, q_all, side="right") - 1,
                    0, len(edges) - 2)
    qs, imps = [], []
    for b in range(len(edges) - 1):
        sel = which == b
        if sel.any():
            qs.append(q_all[sel].mean())
            imps.append(i_all[sel].mean())
    return ImpactCurve(quantity=np.array(qs), impact=np.array(imps))


def average_decay_path(paths: list[tuple[np.ndarray, np.ndarray]],
                       z_grid: np.ndarray) -> DecayPath:
    """Average raw post-execution impact paths on a common z grid, then
    normalize by the averaged value at z = 1."""
    stacked = []
    for z, imp in paths:
        stacked.append(np.interp(z_grid, z, imp))
    mean_path = np.mean(stacked, axis=0)
    peak = mean_path[0]
    if peak <= 0:
        raise ValueError("averaged path has non-positive impact at z = 1")
    return DecayPath(z=z_grid, impact=mean_path / peak)
