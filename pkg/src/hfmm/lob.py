"""Normalized LOB event ingestion, book reconstruction, and fill measurement.

Event schema (CSV header ``ts_ns,kind,side,price_ticks,size,order_ref`` or
fixed 32-byte little-endian binary records in the same field order):

* ``add``     — a limit order joins the book at ``price_ticks``.
* ``cancel``  — shares of a standing order are withdrawn.
* ``execute`` — shares of a standing order trade against an incoming MO.
* ``trade``   — marker for an incoming market order; ``side`` names the book
  side being consumed and ``size`` the MO volume. The ladder profile of that
  side is captured at this instant so that hypothetical fills at any
  placement price can be measured later.

Prices are integer ticks internally; conversion to currency happens only at
the interface (midprice, liquidation proceeds).
"""

from __future__ import annotations

import csv as _csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BookEvent",
    "Book",
    "BookState",
    "MORecord",
    "IntervalFlow",
    "LiquidationResult",
    "ReplayResult",
    "EVENT_DTYPE",
    "apply_event",
    "midprice",
    "fill_quantity",
    "liquidate",
    "snapshots_at",
    "replay",
    "read_events_csv",
    "write_events_csv",
    "read_events_binary",
    "write_events_binary",
]

KIND_CODES = {"add": 0, "cancel": 1, "execute": 2, "trade": 3}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}
SIDE_CODES = {"bid": 0, "ask": 1}
SIDE_NAMES = {0: "bid", 1: "ask"}

EVENT_DTYPE = np.dtype([
    ("ts_ns", "<i8"),
    ("kind", "u1"),
    ("side", "u1"),
    ("pad", "<u2"),
    ("price_ticks", "<i4"),
    ("size", "<i4"),
    ("order_ref", "<i8"),
    ("pad2", "<i4"),
])
assert EVENT_DTYPE.itemsize == 32


@dataclass(frozen=True)
class BookEvent:
    ts_ns: int
    kind: str
    side: str
    price_ticks: int
    size: int
    order_ref: int


class BookError(ValueError):
    """Inconsistent event; carries the offending event index when known."""

    def __init__(self, msg, event_index=None):
        super().__init__(msg if event_index is None
                         else f"event {event_index}: {msg}")
        self.event_index = event_index


class Book:
    """Mutable order book: order registry plus per-side price aggregates."""

    __slots__ = ("orders", "bid_levels", "ask_levels")

    def __init__(self):
        self.orders = {}      # order_ref -> [side_code, price, remaining]
        self.bid_levels = {}  # price -> aggregate size
        self.ask_levels = {}

    def levels(self, side_code):
        return self.ask_levels if side_code else self.bid_levels

    def best_bid(self):
        return max(self.bid_levels) if self.bid_levels else None

    def best_ask(self):
        return min(self.ask_levels) if self.ask_levels else None

    def snapshot(self, K=20) -> "BookState":
        bids = sorted(self.bid_levels.items(), reverse=True)[:K]
        asks = sorted(self.ask_levels.items())[:K]
        return BookState(bids=tuple(bids), asks=tuple(asks))


@dataclass(frozen=True)
class BookState:
    """Immutable top-K ladder: bids best-first (descending prices), asks
    best-first (ascending prices); entries are (price_ticks, size)."""

    bids: tuple
    asks: tuple

    def occupied_price(self, side: str, level: int):
        """Price at the level-th best occupied price (1-based); falls back
        to the deepest available level. Returns (price, fell_back)."""
        ladder = self.bids if side == "bid" else self.asks
        if not ladder:
            raise BookError(f"one-sided book: no {side} levels")
        idx = min(level, len(ladder)) - 1
        return ladder[idx][0], level > len(ladder)


@dataclass(frozen=True)
class MORecord:
    """One market order plus the consumed side's ladder profile at arrival:
    prices best-first with the cumulative standing volume."""

    side: str
    volume: int
    prices: np.ndarray    # best-first
    cum_sizes: np.ndarray

    def better_priced_volume(self, placed_price_ticks: int) -> int:
        """Standing volume at strictly better prices than the placement."""
        if len(self.prices) == 0:
            return 0
        if self.side == "ask":
            # better = lower price; prices ascending
            i = int(np.searchsorted(self.prices, placed_price_ticks, "left"))
        else:
            # better = higher price; prices descending
            i = int(np.searchsorted(-self.prices, -placed_price_ticks, "left"))
        return int(self.cum_sizes[i - 1]) if i > 0 else 0


@dataclass
class IntervalFlow:
    mos: list = field(default_factory=list)


@dataclass(frozen=True)
class LiquidationResult:
    avg_price: float
    proceeds: float
    insufficient_depth: bool = False


@dataclass
class ReplayResult:
    snapshots: list          # BookState per action time
    midprices: np.ndarray    # currency midprice per action time
    flows: list              # IntervalFlow per interval [t_k, t_{k+1})
    terminal_book: BookState # as-of the end of the session


def apply_event(book: Book, ev: BookEvent, event_index=None) -> Book:
    """Apply one event in place; returns the book for chaining."""
    kind = ev.kind
    side_code = SIDE_CODES.get(ev.side)
    if side_code is None:
        raise BookError(f"unknown side {ev.side!r}", event_index)
    if ev.size <= 0 or ev.price_ticks <= 0:
        raise BookError("size and price must be positive", event_index)
    if kind == "add":
        if ev.order_ref in book.orders:
            raise BookError(f"duplicate order_ref {ev.order_ref}", event_index)
        book.orders[ev.order_ref] = [side_code, ev.price_ticks, ev.size]
        lv = book.levels(side_code)
        lv[ev.price_ticks] = lv.get(ev.price_ticks, 0) + ev.size
    elif kind in ("cancel", "execute"):
        order = book.orders.get(ev.order_ref)
        if order is None:
            raise BookError(f"unknown order_ref {ev.order_ref}", event_index)
        if ev.size > order[2]:
            raise BookError(f"{kind} of {ev.size} exceeds remaining "
                            f"{order[2]} on order {ev.order_ref}", event_index)
        order[2] -= ev.size
        lv = book.levels(order[0])
        left = lv[order[1]] - ev.size
        if left:
            lv[order[1]] = left
        else:
            del lv[order[1]]
        if order[2] == 0:
            del book.orders[ev.order_ref]
    elif kind == "trade":
        pass  # marker only; surrounding execute events move the book
    else:
        raise BookError(f"unknown event kind {kind!r}", event_index)
    return book


def midprice(book, tick_size: float = 1.0) -> float:
    """(best bid + best ask) / 2 in currency units."""
    if isinstance(book, BookState):
        if not book.bids or not book.asks:
            raise BookError("one-sided book")
        bb, ba = book.bids[0][0], book.asks[0][0]
    else:
        bb, ba = book.best_bid(), book.best_ask()
        if bb is None or ba is None:
            raise BookError("one-sided book")
    return (bb + ba) / 2 * tick_size


def fill_quantity(placed_price_ticks: int, placed_size: int, side: str,
                  flow: IntervalFlow) -> int:
    """Shares of a resting order at ``placed_price_ticks`` filled by the
    interval's MOs, assuming the order is first in queue at its price:
    each matching MO contributes max(V_MO - V_better, 0), cumulatively
    capped at the placed size."""
    remaining = placed_size
    total = 0
    for mo in flow.mos:
        if mo.side != side or remaining <= 0:
            continue
        q = mo.volume - mo.better_priced_volume(placed_price_ticks)
        if q > 0:
            take = min(q, remaining)
            total += take
            remaining -= take
    return total


def liquidate(book: BookState, inventory: float,
              tick_size: float = 1.0) -> LiquidationResult:
    """Unwind the inventory against the opposite side, best price first.

    Positive inventory sells into the bids, negative buys from the asks.
    If the visible depth runs out, the remainder is priced at the deepest
    available level and the result is flagged.
    """
    if inventory == 0:
        return LiquidationResult(avg_price=0.0, proceeds=0.0)
    ladder = book.bids if inventory > 0 else book.asks
    if not ladder:
        raise BookError("one-sided book: cannot liquidate")
    need = abs(inventory)
    got = 0.0
    cost = 0.0
    for price, size in ladder:
        take = min(size, need - got)
        cost += take * price
        got += take
        if got >= need:
            break
    insufficient = got < need
    if insufficient:
        cost += (need - got) * ladder[-1][0]
    avg = cost / need * tick_size
    return LiquidationResult(avg_price=avg, proceeds=avg * inventory,
                             insufficient_depth=insufficient)


# ---------------------------------------------------------------------------
# Stream replay
# ---------------------------------------------------------------------------

def _as_records(events):
    """Normalize input into plain tuples (ts, kind_code, side_code, price,
    size, ref) for the hot loop."""
    if isinstance(events, np.ndarray) and events.dtype == EVENT_DTYPE:
        return [(int(r[0]), int(r[1]), int(r[2]), int(r[4]), int(r[5]),
                 int(r[6])) for r in events.tolist()]
    out = []
    for ev in events:
        out.append((ev.ts_ns, KIND_CODES[ev.kind], SIDE_CODES[ev.side],
                    ev.price_ticks, ev.size, ev.order_ref))
    return out


def replay(events, grid, K: int = 20, tick_size: float = 1.0) -> ReplayResult:
    """One pass over a time-sorted stream producing the as-of-t_k snapshots
    (last event strictly before t_k applied) and the per-interval MO flow.

    ``grid`` is the model TimeGrid; the session covers [t_0, t_N + step).
    """
    records = _as_records(events)
    n = grid.n_steps
    times = [grid.action_time_ns(k) for k in range(n + 1)]

    orders = {}
    bid_levels = {}
    ask_levels = {}
    snapshots = [None] * n
    mids = np.empty(n)
    flows = [IntervalFlow() for _ in range(n)]
    next_k = 0
    last_ts = None

    def take_snapshot(k):
        bids = sorted(bid_levels.items(), reverse=True)[:K]
        asks = sorted(ask_levels.items())[:K]
        state = BookState(bids=tuple(bids), asks=tuple(asks))
        snapshots[k] = state
        mids[k] = midprice(state, tick_size)

    for idx, (ts, kind, side, price, size, ref) in enumerate(records):
        if last_ts is not None and ts < last_ts:
            raise BookError("events out of order", idx)
        last_ts = ts
        while next_k < n and ts >= times[next_k]:
            take_snapshot(next_k)
            next_k += 1
        if kind == 0:  # add
            if ref in orders:
                raise BookError(f"duplicate order_ref {ref}", idx)
            orders[ref] = [side, price, size]
            lv = ask_levels if side else bid_levels
            lv[price] = lv.get(price, 0) + size
        elif kind == 1 or kind == 2:  # cancel / execute
            order = orders.get(ref)
            if order is None:
                raise BookError(f"unknown order_ref {ref}", idx)
            if size > order[2]:
                raise BookError("size exceeds remaining", idx)
            order[2] -= size
            lv = ask_levels if order[0] else bid_levels
            left = lv[order[1]] - size
            if left:
                lv[order[1]] = left
            else:
                del lv[order[1]]
            if order[2] == 0:
                del orders[ref]
        elif kind == 3:  # trade marker
            if next_k == 0 or ts >= times[n]:
                continue  # outside the session's intervals
            lv = ask_levels if side else bid_levels
            if side:
                prices = np.fromiter(sorted(lv), dtype=np.int64, count=len(lv))
            else:
                prices = np.fromiter(sorted(lv, reverse=True), dtype=np.int64,
                                     count=len(lv))
            cum = np.cumsum([lv[p] for p in prices.tolist()]) if len(lv) \
                else np.empty(0, dtype=np.int64)
            flows[next_k - 1].mos.append(
                MORecord(side=SIDE_NAMES[side], volume=size,
                         prices=prices, cum_sizes=cum))
        else:
            raise BookError(f"unknown kind code {kind}", idx)

    while next_k < n:
        take_snapshot(next_k)
        next_k += 1
    bids = sorted(bid_levels.items(), reverse=True)[:K]
    asks = sorted(ask_levels.items())[:K]
    terminal = BookState(bids=tuple(bids), asks=tuple(asks))
    return ReplayResult(snapshots=snapshots, midprices=mids, flows=flows,
                        terminal_book=terminal)


def snapshots_at(events, grid, K: int = 20, tick_size: float = 1.0):
    """Book states and midprices as-of each action time."""
    res = replay(events, grid, K=K, tick_size=tick_size)
    return [(grid.action_time_ns(k), res.snapshots[k], float(res.midprices[k]))
            for k in range(grid.n_steps)]


# ---------------------------------------------------------------------------
# Event file I/O
# ---------------------------------------------------------------------------

def write_events_csv(events, path) -> None:
    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["ts_ns", "kind", "side", "price_ticks", "size",
                    "order_ref"])
        for ev in events:
            w.writerow([ev.ts_ns, ev.kind, ev.side, ev.price_ticks, ev.size,
                        ev.order_ref])


def read_events_csv(path):
    out = []
    with open(path, newline="") as fh:
        r = _csv.reader(fh)
        header = next(r)
        expected = ["ts_ns", "kind", "side", "price_ticks", "size",
                    "order_ref"]
        if header != expected:
            raise ValueError(f"unexpected header {header}")
        for row in r:
            out.append(BookEvent(ts_ns=int(row[0]), kind=row[1], side=row[2],
                                 price_ticks=int(row[3]), size=int(row[4]),
                                 order_ref=int(row[5])))
    return out


def write_events_binary(events, path) -> None:
    if isinstance(events, np.ndarray) and events.dtype == EVENT_DTYPE:
        arr = events
    else:
        arr = np.zeros(len(events), dtype=EVENT_DTYPE)
        for i, ev in enumerate(events):
            arr[i] = (ev.ts_ns, KIND_CODES[ev.kind], SIDE_CODES[ev.side], 0,
                      ev.price_ticks, ev.size, ev.order_ref, 0)
    arr.tofile(path)


def read_events_binary(path) -> np.ndarray:
    return np.fromfile(path, dtype=EVENT_DTYPE)
