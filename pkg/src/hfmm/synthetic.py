"""Synthetic event-stream day generator with known ground truth.

Each interval the book is rebuilt just before the action time with a fresh
ladder on both sides; the per-level volume on a side equals that side's
drawn demand slope c, and market-order volumes are c * (p - l_1), where
l_1 is the distance of the touch from the mid. With this construction the
measured demand at any deeper placement is exactly c * (p - l): the full
calibration pipeline can be validated against exact parameter values.

The midprice performs a persistent-regime random walk on the tick grid, so
the trailing-increment drift forecast carries real predictive signal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lob import EVENT_DTYPE
from .model import (ArrivalSchedule, DemandMoments, MarketParams, SideMoments,
                    TimeGrid)

__all__ = ["SyntheticDayConfig", "SyntheticTruth", "generate_day",
           "true_market_params"]


@dataclass(frozen=True)
class SyntheticDayConfig:
    n_steps: int = 19800
    step_seconds: float = 1.0
    tick_size: float = 1.0
    pi_plus: float = 0.2
    pi_minus: float = 0.2
    pi_joint: float = 0.05
    c_values: tuple = (80.0, 120.0)
    p_values: tuple = (4.0, 6.0)
    depth: int = 12           # ladder levels per side
    default_volume: int = 100  # level volume when no MO arrives on a side
    start_price_ticks: int = 10000
    regime_switch_prob: float = 0.02
    move_prob: float = 0.3
    lam: float = 0.0005


@dataclass
class SyntheticTruth:
    config: SyntheticDayConfig
    params: MarketParams
    mid_ticks: np.ndarray   # best-bid tick X_k per action time
    regimes: np.ndarray
    ind_plus: np.ndarray
    ind_minus: np.ndarray
    c_plus: np.ndarray
    p_plus: np.ndarray
    c_minus: np.ndarray
    p_minus: np.ndarray


def _true_side_moments(cfg: SyntheticDayConfig) -> SideMoments:
    c = np.asarray(cfg.c_values, dtype=float)
    p = np.asarray(cfg.p_values, dtype=float)
    ec, ec2 = np.mean(c), np.mean(c ** 2)
    ep, ep2 = np.mean(p), np.mean(p ** 2)
    return SideMoments(mu_c=ec, mu_c2=ec2, mu_cp=ec * ep, mu_c2p=ec2 * ep,
                       mu_c2p2=ec2 * ep2, mu_p=ep, mu_p2=ep2)


def true_market_params(cfg: SyntheticDayConfig) -> MarketParams:
    side = _true_side_moments(cfg)
    return MarketParams(
        grid=TimeGrid(n_steps=cfg.n_steps, step_seconds=cfg.step_seconds,
                      session_start_ns=10 ** 9),
        arrivals=ArrivalSchedule.constant(cfg.pi_plus, cfg.pi_minus,
                                          cfg.pi_joint, cfg.n_steps),
        moments=DemandMoments(plus=side, minus=side),
        lam=cfg.lam,
        tick_size=cfg.tick_size,
    )


def generate_day(cfg: SyntheticDayConfig, seed: int):
    """Build one day of events. Returns (events array, SyntheticTruth)."""
    rng = np.random.default_rng(seed)
    n = cfg.n_steps
    params = true_market_params(cfg)
    grid = params.grid
    step_ns = int(round(cfg.step_seconds * 1e9))

    # price regimes and moves
    switches = rng.random(n) < cfg.regime_switch_prob
    regimes = np.empty(n, dtype=np.int8)
    r = 1 if rng.random() < 0.5 else -1
    for k in range(n):
        if switches[k]:
            r = -r
        regimes[k] = r
    moves = (rng.random(n) < cfg.move_prob).astype(np.int64) * regimes
    X = cfg.start_price_ticks + np.concatenate([[0], np.cumsum(moves[:-1])])

    # arrivals and demand draws
    u = rng.random(n)
    pj, pp, pm = cfg.pi_joint, cfg.pi_plus, cfg.pi_minus
    ind_p = (u < pj) | ((u >= pj) & (u < pp))
    ind_m = (u < pj) | ((u >= pp) & (u < pp + pm - pj))
    c_p = rng.choice(cfg.c_values, size=n)
    p_p = rng.choice(cfg.p_values, size=n)
    c_m = rng.choice(cfg.c_values, size=n)
    p_m = rng.choice(cfg.p_values, size=n)

    events = []
    add = events.append
    live = {}          # ref -> remaining size
    next_ref = 1
    depth = cfg.depth

    for k in range(n):
        t_k = grid.action_time_ns(k)
        rebuild_ts = t_k - 100_000
        # clear the previous ladder
        for ref, (side_code, price, remaining) in live.items():
            if remaining > 0:
                add((rebuild_ts, 1, side_code, 0, price, remaining, ref, 0))
        live = {}
        x = int(X[k])
        vol_ask = int(round(c_p[k])) if ind_p[k] else cfg.default_volume
        vol_bid = int(round(c_m[k])) if ind_m[k] else cfg.default_volume
        ask_refs = []
        bid_refs = []
        for j in range(depth):
            ref = next_ref
            next_ref += 1
            add((rebuild_ts, 0, 1, 0, x + 1 + j, vol_ask, ref, 0))
            live[ref] = (1, x + 1 + j, vol_ask)
            ask_refs.append(ref)
            ref = next_ref
            next_ref += 1
            add((rebuild_ts, 0, 0, 0, x - j, vol_bid, ref, 0))
            live[ref] = (0, x - j, vol_bid)
            bid_refs.append(ref)

        # market orders: volume c*(p - l_1) with l_1 = 0.5 ticks
        if ind_p[k]:
            vol = int(round(c_p[k] * (p_p[k] - 0.5)))
            ts = t_k + step_ns // 3
            add((ts, 3, 1, 0, x + 1, vol, 0, 0))
            left = vol
            for ref in ask_refs:
                if left <= 0:
                    break
                side_code, price, remaining = live[ref]
                take = min(remaining, left)
                add((ts, 2, 1, 0, price, take, ref, 0))
                live[ref] = (side_code, price, remaining - take)
                left -= take
        if ind_m[k]:
            vol = int(round(c_m[k] * (p_m[k] - 0.5)))
            ts = t_k + 2 * step_ns // 3
            add((ts, 3, 0, 0, x, vol, 0, 0))
            left = vol
            for ref in bid_refs:
                if left <= 0:
                    break
                side_code, price, remaining = live[ref]
                take = min(remaining, left)
                add((ts, 2, 0, 0, price, take, ref, 0))
                live[ref] = (side_code, price, remaining - take)
                left -= take

    arr = np.array(events, dtype=EVENT_DTYPE)
    truth = SyntheticTruth(config=cfg, params=params, mid_ticks=X,
                           regimes=regimes,
                           ind_plus=ind_p.astype(np.int8),
                           ind_minus=ind_m.astype(np.int8),
                           c_plus=c_p, p_plus=p_p, c_minus=c_m, p_minus=p_m)
    return arr, truth
