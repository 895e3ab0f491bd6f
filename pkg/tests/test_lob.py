import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hfmm.lob import (EVENT_DTYPE, Book, BookError, BookEvent, BookState,
                      IntervalFlow, MORecord, apply_event, fill_quantity,
                      liquidate, midprice, read_events_binary,
                      read_events_csv, replay, snapshots_at,
                      write_events_binary, write_events_csv)
from hfmm.model import TimeGrid


def ev(ts, kind, side, price, size, ref):
    return BookEvent(ts_ns=ts, kind=kind, side=side, price_ticks=price,
                     size=size, order_ref=ref)


def mo(side, volume, levels):
    """levels: (price, size) best-first."""
    prices = np.array([p for p, _ in levels], dtype=np.int64)
    cum = np.cumsum([s for _, s in levels]).astype(np.int64)
    return MORecord(side=side, volume=volume, prices=prices, cum_sizes=cum)


class TestApplyEvent:
    def test_add_then_execute(self):
        b = Book()
        apply_event(b, ev(0, "add", "ask", 10100, 300, 1))
        assert b.snapshot().asks == ((10100, 300),)
        apply_event(b, ev(1, "execute", "ask", 10100, 300, 1))
        assert b.snapshot().asks == ()

    def test_cancel_unknown_ref_rejected(self):
        with pytest.raises(BookError):
            apply_event(Book(), ev(0, "cancel", "ask", 10100, 10, 99))

    def test_duplicate_ref_rejected(self):
        b = Book()
        apply_event(b, ev(0, "add", "bid", 9000, 10, 1))
        with pytest.raises(BookError):
            apply_event(b, ev(1, "add", "bid", 9001, 10, 1))

    def test_oversize_execute_rejected(self):
        b = Book()
        apply_event(b, ev(0, "add", "bid", 9000, 10, 1))
        with pytest.raises(BookError):
            apply_event(b, ev(1, "execute", "bid", 9000, 11, 1))

    def test_partial_cancel_keeps_level(self):
        b = Book()
        apply_event(b, ev(0, "add", "ask", 10100, 300, 1))
        apply_event(b, ev(1, "cancel", "ask", 10100, 100, 1))
        assert b.snapshot().asks == ((10100, 200),)


class TestMidprice:
    def test_round_cases(self):
        book = BookState(bids=((9999, 10),), asks=((10001, 10),))
        assert midprice(book, 0.01) == pytest.approx(100.00)
        book2 = BookState(bids=((10000, 10),), asks=((10001, 10),))
        assert midprice(book2, 0.01) == pytest.approx(100.005)

    def test_one_sided_errors(self):
        with pytest.raises(BookError):
            midprice(BookState(bids=(), asks=((10001, 10),)))


class TestFillQuantity:
    def test_better_volume_subtracted(self):
        flow = IntervalFlow(mos=[mo("ask", 600,
                                    [(10001, 200), (10002, 500)])])
        assert fill_quantity(10002, 500, "ask", flow) == 400

    def test_negative_clipped(self):
        flow = IntervalFlow(mos=[mo("ask", 150, [(10001, 200),
                                                 (10002, 500)])])
        assert fill_quantity(10002, 500, "ask", flow) == 0

    def test_sequential_cap(self):
        flow = IntervalFlow(mos=[
            mo("ask", 400, [(10001, 100), (10002, 500)]),
            mo("ask", 400, [(10001, 100), (10002, 500)]),
        ])
        assert fill_quantity(10002, 500, "ask", flow) == 500

    def test_bid_side_better_is_higher(self):
        flow = IntervalFlow(mos=[mo("bid", 600, [(9999, 200), (9998, 500)])])
        assert fill_quantity(9998, 500, "bid", flow) == 400
        assert fill_quantity(9999, 500, "bid", flow) == 600 - 0 - 100

    @given(st.integers(1, 20), st.integers(0, 1000))
    @settings(max_examples=50, deadline=None)
    def test_monotone_in_placement_depth(self, n_levels, volume):
        levels = [(10000 + i, 100) for i in range(1, n_levels + 1)]
        flow = IntervalFlow(mos=[mo("ask", volume, levels)])
        fills = [fill_quantity(10000 + i, 10 ** 6, "ask", flow)
                 for i in range(1, n_levels + 1)]
        assert all(a >= b for a, b in zip(fills, fills[1:]))


class TestLiquidate:
    def test_zero_inventory(self):
        book = BookState(bids=((10000, 100),), asks=((10001, 100),))
        assert liquidate(book, 0).proceeds == 0.0

    def test_weighted_average_sale(self):
        book = BookState(bids=((10000, 200), (9999, 200)),
                         asks=((10001, 100),))
        res = liquidate(book, 300, 0.01)
        assert res.avg_price == pytest.approx((200 * 100.00 + 100 * 99.99)
                                              / 300)
        assert not res.insufficient_depth

    def test_buyback_negative_inventory(self):
        book = BookState(bids=((9999, 100),), asks=((10001, 500),))
        res = liquidate(book, -100, 0.01)
        assert res.avg_price == pytest.approx(100.01)
        assert res.proceeds == pytest.approx(-10001.0)

    def test_insufficient_depth_extrapolates(self):
        book = BookState(bids=((10000, 100), (9998, 100)), asks=())
        res = liquidate(book, 500, 1.0)
        assert res.insufficient_depth
        expect = (100 * 10000 + 100 * 9998 + 300 * 9998) / 500
        assert res.avg_price == pytest.approx(expect)

    def test_price_impact_direction(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            prices = np.sort(rng.integers(9000, 10000, size=5))[::-1]
            sizes = rng.integers(1, 500, size=5)
            book = BookState(bids=tuple(zip(prices.tolist(), sizes.tolist())),
                             asks=((10500, 100),))
            I = float(rng.integers(1, int(sizes.sum())))
            res = liquidate(book, I, 1.0)
            assert res.proceeds <= prices[0] * I + 1e-9

    def test_empty_side_errors(self):
        with pytest.raises(BookError):
            liquidate(BookState(bids=(), asks=((10001, 10),)), 50)


class TestReplay:
    def _grid(self, n=3):
        return TimeGrid(n_steps=n, step_seconds=1.0, session_start_ns=10 ** 9)

    def _base_events(self):
        return [
            ev(0, "add", "bid", 10000, 100, 1),
            ev(0, "add", "ask", 10001, 100, 2),
        ]

    def test_pre_session_add_included_and_quiet_intervals(self):
        res = replay(self._base_events(), self._grid())
        assert len(res.snapshots) == 3
        assert res.snapshots[0].bids == ((10000, 100),)
        assert res.snapshots[0] == res.snapshots[1] == res.snapshots[2]
        np.testing.assert_allclose(res.midprices, 10000.5)

    def test_trade_assigned_to_interval_flow(self):
        events = self._base_events() + [
            ev(10 ** 9 + 500_000_000, "trade", "ask", 10001, 60, 0),
            ev(10 ** 9 + 500_000_001, "execute", "ask", 10001, 60, 2),
        ]
        res = replay(events, self._grid())
        assert len(res.flows[0].mos) == 1
        assert res.flows[0].mos[0].volume == 60
        assert res.flows[1].mos == []
        # snapshot at t_1 reflects the executed volume
        assert res.snapshots[1].asks == ((10001, 40),)

    def test_out_of_order_rejected(self):
        events = [ev(5, "add", "bid", 10000, 100, 1),
                  ev(4, "add", "ask", 10001, 100, 2)]
        with pytest.raises(BookError):
            replay(events, self._grid())

    def test_snapshots_at_counts(self):
        rows = snapshots_at(self._base_events(), self._grid())
        assert len(rows) == 3
        assert rows[0][0] == 10 ** 9
        assert rows[0][2] == pytest.approx(10000.5)

    def test_determinism_bit_identical(self):
        events = self._base_events() + [
            ev(10 ** 9 + 100, "add", "ask", 10002, 70, 3),
            ev(10 ** 9 + 200, "trade", "ask", 10001, 30, 0),
            ev(10 ** 9 + 201, "execute", "ask", 10001, 30, 2),
        ]
        a = replay(events, self._grid())
        b = replay(events, self._grid())
        assert a.snapshots == b.snapshots
        assert a.midprices.tobytes() == b.midprices.tobytes()
        assert a.terminal_book == b.terminal_book


class TestEventIO:
    def _events(self):
        return [ev(0, "add", "bid", 10000, 100, 1),
                ev(5, "add", "ask", 10001, 50, 2),
                ev(9, "trade", "ask", 10001, 20, 0)]

    def test_csv_round_trip(self, tmp_path):
        path = tmp_path / "events.csv"
        write_events_csv(self._events(), path)
        assert read_events_csv(path) == self._events()

    def test_csv_rejects_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("ts,kind\n1,add\n")
        with pytest.raises(ValueError):
            read_events_csv(path)

    def test_binary_round_trip(self, tmp_path):
        path = tmp_path / "events.bin"
        write_events_binary(self._events(), path)
        arr = read_events_binary(path)
        assert arr.dtype == EVENT_DTYPE
        assert arr.nbytes == 32 * 3
        assert [int(r["price_ticks"]) for r in arr] == [10000, 10001, 10001]
        # binary and object inputs replay identically
        grid = TimeGrid(n_steps=1, step_seconds=1.0, session_start_ns=10)
        a = replay(self._events(), grid)
        b = replay(arr, grid)
        assert a.snapshots == b.snapshots
