import httpx
import pytest

from gatedtrader.errors import NonMonotoneTimestamp, ReplayExhausted, TransportError
from gatedtrader.feed import (
    Candle,
    OrderbookSnapshot,
    PriceTick,
    ReplayFeed,
    RestFeed,
    RestFeedConfig,
    build_market_context,
    extract,
    poll_assets,
)

from .conftest import write_csv


def _rows(n=30, assets=("BTC", "ETH"), start=60):
    out = []
    for i in range(n):
        for k, a in enumerate(assets):
            out.append({"timestamp": start + 60 * i, "asset": a, "price": 100 + k * 10 + i * 0.1, "volume": 1.0})
    return out


def test_replay_two_assets_and_missing_row(tmp_path):
    rows = _rows(5)
    rows = [r for r in rows if not (r["asset"] == "ETH" and r["timestamp"] == 180)]
    feed = ReplayFeed(write_csv(tmp_path / "f.csv", rows))
    assert feed.assets == ["BTC", "ETH"]
    assert len(feed.poll(["BTC", "ETH"], 120)) == 2
    ticks = feed.poll(["BTC", "ETH"], 180)
    assert [t.asset for t in ticks] == ["BTC"]
    assert feed.next_time(None) == 60 and feed.next_time(60) == 120
    with pytest.raises(ReplayExhausted):
        feed.next_time(300)


def test_prices_snapped_to_storage_grid():
    feed = ReplayFeed(rows=[{"timestamp": 1, "asset": "X", "price": 0.1 + 0.2, "volume": 0}])
    assert feed.poll(["X"], 1)[0].price == 0.3


def test_candles_full_and_partial():
    feed = ReplayFeed(rows=_rows(30))
    cs = feed.candles("BTC", 60 + 60 * 29, 20)
    assert len(cs) == 20
    assert all(b.open == a.close for a, b in zip(cs, cs[1:]))
    ctx = build_market_context("BTC", feed, 60 + 60 * 29, 20)
    assert "short_history" not in ctx.partial_reasons
    short = build_market_context("BTC", feed, 60 + 60 * 9, 20)
    assert len(short.candles) == 10 and short.partial and "short_history" in short.partial_reasons


def test_synthetic_orderbook_flagged():
    feed = ReplayFeed(rows=_rows(3))
    book, synthetic = feed.orderbook("BTC", 180)
    assert synthetic and book.best_bid == book.best_ask
    rows = _rows(3)
    for r in rows:
        r.update(best_bid=r["price"] - 0.01, best_ask=r["price"] + 0.01, bid_depth=5, ask_depth=6, funding_rate=0.0001)
    feed = ReplayFeed(rows=rows)
    book, synthetic = feed.orderbook("BTC", 180)
    assert not synthetic and book.spread == pytest.approx(0.02)
    assert feed.funding("BTC", 180) == 0.0001


def test_non_monotone_rejected():
    rows = [{"timestamp": 120, "asset": "A", "price": 1, "volume": 0},
            {"timestamp": 60, "asset": "A", "price": 1, "volume": 0}]
    with pytest.raises(NonMonotoneTimestamp):
        ReplayFeed(rows=rows)


def test_missing_columns(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("timestamp,asset\n1,A\n")
    with pytest.raises(ValueError):
        ReplayFeed(p)


def test_value_validation():
    with pytest.raises(ValueError):
        PriceTick("A", 1, 0.0)
    with pytest.raises(ValueError):
        Candle("A", 1, 10, 9, 8, 10, 1)
    with pytest.raises(ValueError):
        OrderbookSnapshot(10, 9)


def test_poll_failure_skips_cycle():
    class Down:
        def poll(self, assets, now):
            raise TransportError("down")

    errors = []
    assert poll_assets(Down(), ["A"], 1, on_error=errors.append) == []
    assert len(errors) == 1
    with pytest.raises(ValueError):
        poll_assets(Down(), [], 1)


def test_extract():
    obj = {"data": {"bids": [["100.5", "2"]]}}
    assert extract(obj, "data.bids.0.0") == "100.5"
    assert extract([1, 2], 1) == 2
    assert extract(obj, None) is obj


def test_rest_feed_against_mock_venue():
    ts = {"BTC": 1000}

    def handler(req: httpx.Request):
        path = req.url.path
        if path.startswith("/price/"):
            return httpx.Response(200, json={"price": "67000.5", "ts": ts["BTC"]})
        if path.startswith("/candles/"):
            n = int(req.url.params["n"])
            rows = [[1000 - 60 * k, 1, 2, 0.5, 1.5, 3] for k in range(n + 5)]
            return httpx.Response(200, json=rows)
        if path.startswith("/book/"):
            return httpx.Response(200, json={"bids": [["99", "1"]], "asks": [["101", "2"]]})
        if path.startswith("/funding/"):
            return httpx.Response(200, json={"funding_rate": "0.0001"})
        return httpx.Response(404)

    cfg = RestFeedConfig("http://v.invalid/price/{asset}", "http://v.invalid/candles/{asset}?n={n}",
                         "http://v.invalid/book/{asset}", "http://v.invalid/funding/{asset}",
                         timestamp_path="ts")
    feed = RestFeed(cfg, client=httpx.Client(transport=httpx.MockTransport(handler)))
    assert feed.poll(["BTC"], 1000)[0].price == 67000.5
    assert feed.poll(["BTC"], 1060) == []  # same venue timestamp: stale
    ts["BTC"] = 1060
    assert len(feed.poll(["BTC"], 1060)) == 1
    cs = feed.candles("BTC", 1060, 20)
    assert len(cs) == 20 and cs == sorted(cs, key=lambda c: c.timestamp)
    book, synthetic = feed.orderbook("BTC", 1060)
    assert (book.best_bid, book.best_ask, synthetic) == (99.0, 101.0, False)
    assert feed.funding("BTC", 1060) == 0.0001
    assert feed.channel.calls == 6
