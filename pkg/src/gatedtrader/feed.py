"""Market data: price ticks, candles, orderbook and funding per asset.

Two sources share one interface. ``ReplayFeed`` reads a CSV and advances a
virtual clock through its timestamps; ``RestFeed`` polls configurable JSON
endpoints. Both fetch through a public ``Channel`` so network use is counted.

Replay CSV columns: ``timestamp,asset,price,volume`` are required;
``best_bid,best_ask,bid_depth,ask_depth,funding_rate,high,low`` are optional.
"""

from __future__ import annotations

import bisect
import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol

from .errors import NonMonotoneTimestamp, ReplayExhausted, TransportError
from .journal import quantize
from .router import Channel, HttpTransport, public_channel

logger = logging.getLogger(__name__)

CANDLE_INTERVAL_S = 60


@dataclass(frozen=True)
class PriceTick:
    asset: str
    timestamp: int
    price: float
    volume: float = 0.0
    # intrabar range, when the source provides one
    high: float | None = None
    low: float | None = None

    def __post_init__(self):
        if not (self.price > 0 and math.isfinite(self.price)):
            raise ValueError(f"{self.asset}@{self.timestamp}: price must be positive, got {self.price}")

    @property
    def range_high(self) -> float:
        return self.price if self.high is None else max(self.high, self.price)

    @property
    def range_low(self) -> float:
        return self.price if self.low is None else min(self.low, self.price)


@dataclass(frozen=True)
class Candle:
    asset: str
    timestamp: int
    open: float
    high: float
    low: float
    close: float
    volume: float
    interval: int = CANDLE_INTERVAL_S

    def __post_init__(self):
        if min(self.open, self.high, self.low, self.close) <= 0:
            raise ValueError("candle prices must be positive")
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
            raise ValueError("candle range does not contain open/close")
        if self.volume < 0:
            raise ValueError("negative volume")


@dataclass(frozen=True)
class OrderbookSnapshot:
    best_bid: float
    best_ask: float
    bid_depth: float = 0.0
    ask_depth: float = 0.0

    def __post_init__(self):
        if not (self.best_ask >= self.best_bid > 0):
            raise ValueError(f"invalid top of book: bid={self.best_bid} ask={self.best_ask}")
        if self.bid_depth < 0 or self.ask_depth < 0:
            raise ValueError("negative depth")

    @property
    def mid(self) -> float:
        return 0.5 * (self.best_bid + self.best_ask)

    @property
    def spread(self) -> float:
        return self.best_ask - self.best_bid


@dataclass(frozen=True)
class MarketContext:
    asset: str
    candles: tuple[Candle, ...]
    orderbook: OrderbookSnapshot
    funding_rate: float
    snapshot_time: int
    partial: bool = False
    partial_reasons: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        """Canonical serialization handed to the Analyst (layout version 1)."""
        return {
            "asset": self.asset,
            "snapshot_time": self.snapshot_time,
            "candles": [[c.timestamp, c.open, c.high, c.low, c.close, c.volume] for c in self.candles],
            "candle_fields": ["timestamp", "open", "high", "low", "close", "volume"],
            "orderbook": {
                "best_bid": self.orderbook.best_bid,
                "best_ask": self.orderbook.best_ask,
                "bid_depth": self.orderbook.bid_depth,
                "ask_depth": self.orderbook.ask_depth,
            },
            "funding_rate": self.funding_rate,
            "partial": self.partial,
            "partial_reasons": list(self.partial_reasons),
        }


class FeedSource(Protocol):
    channel: Channel

    def poll(self, assets: list[str], now: int) -> list[PriceTick]: ...

    def candles(self, asset: str, now: int, n: int) -> list[Candle]: ...

    def orderbook(self, asset: str, now: int) -> tuple[OrderbookSnapshot, bool]: ...

    def funding(self, asset: str, now: int) -> float: ...


def poll_assets(source: FeedSource, assets: list[str], now: int,
                on_error: Callable[[TransportError], None] | None = None) -> list[PriceTick]:
    """Fresh ticks at ``now``; assets without data are omitted.

    A transport failure skips the cycle: it is logged (and passed to
    ``on_error``) and an empty list is returned.
    """
    if not assets:
        raise ValueError("asset list is empty")
    try:
        return source.poll(assets, now)
    except TransportError as exc:
        logger.warning("poll at %s failed: %s", now, exc)
        if on_error is not None:
            on_error(exc)
        return []


def build_market_context(asset: str, source: FeedSource, now: int, n_candles: int = 20) -> MarketContext:
    """Candles, top of book and funding for the Analyst. Raises TransportError."""
    candles = source.candles(asset, now, n_candles)
    book, book_synthetic = source.orderbook(asset, now)
    funding = source.funding(asset, now)
    reasons = []
    if len(candles) < n_candles:
        reasons.append("short_history")
    if book_synthetic:
        reasons.append("synthetic_orderbook")
    return MarketContext(
        asset=asset,
        candles=tuple(candles),
        orderbook=book,
        funding_rate=funding,
        snapshot_time=int(now),
        partial=bool(reasons),
        partial_reasons=tuple(reasons),
    )


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------


@dataclass
class _Row:
    timestamp: int
    asset: str
    price: float
    volume: float
    high: float | None = None
    low: float | None = None
    book: OrderbookSnapshot | None = None
    funding_rate: float | None = None


_REQUIRED = ("timestamp", "asset", "price", "volume")


def _opt_float(raw: dict, key: str) -> float | None:
    v = raw.get(key)
    if v is None or v.strip() == "":
        return None
    return float(v)


class ReplayFeed:
    """Deterministic feed over a CSV file (or pre-parsed rows).

    Prices are snapped to the journal's 1e-8 grid on load so that a value read
    back from storage is bit-identical to the one the engine saw.
    """

    def __init__(self, path: str | Path | None = None, rows: Iterable[dict] | None = None):
        if (path is None) == (rows is None):
            raise ValueError("give exactly one of path or rows")
        if path is not None:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                missing = [c for c in _REQUIRED if c not in (reader.fieldnames or [])]
                if missing:
                    raise ValueError(f"replay file lacks columns {missing}")
                raw_rows = list(reader)
        else:
            raw_rows = [{k: str(v) for k, v in r.items() if v is not None} for r in rows]
        self._by_asset: dict[str, list[_Row]] = defaultdict(list)
        self._at: dict[int, dict[str, _Row]] = defaultdict(dict)
        for raw in raw_rows:
            row = self._parse(raw)
            series = self._by_asset[row.asset]
            if series and row.timestamp <= series[-1].timestamp:
                raise NonMonotoneTimestamp(
                    f"{row.asset}: timestamp {row.timestamp} after {series[-1].timestamp}"
                )
            series.append(row)
            self._at[row.timestamp][row.asset] = row
        self._times = sorted(self._at)
        self._ts_index: dict[str, list[int]] = {a: [r.timestamp for r in s] for a, s in self._by_asset.items()}
        self.channel = public_channel(self._serve)

    @staticmethod
    def _parse(raw: dict) -> _Row:
        price = quantize(float(raw["price"]))
        if not price > 0:
            raise ValueError(f"non-positive price in row {raw}")
        bid, ask = _opt_float(raw, "best_bid"), _opt_float(raw, "best_ask")
        book = None
        if bid is not None and ask is not None:
            book = OrderbookSnapshot(
                best_bid=bid,
                best_ask=ask,
                bid_depth=_opt_float(raw, "bid_depth") or 0.0,
                ask_depth=_opt_float(raw, "ask_depth") or 0.0,
            )
        return _Row(
            timestamp=int(raw["timestamp"]),
            asset=raw["asset"].strip(),
            price=price,
            volume=float(raw.get("volume") or 0.0),
            high=_opt_float(raw, "high"),
            low=_opt_float(raw, "low"),
            book=book,
            funding_rate=_opt_float(raw, "funding_rate"),
        )

    # -- clock ------------------------------------------------------------

    @property
    def assets(self) -> list[str]:
        return sorted(self._by_asset)

    def timestamps(self) -> list[int]:
        return list(self._times)

    def next_time(self, after: int | None) -> int:
        """First timestamp strictly after ``after``; ReplayExhausted at the end."""
        if after is None:
            if not self._times:
                raise ReplayExhausted("empty replay")
            return self._times[0]
        i = bisect.bisect_right(self._times, after)
        if i >= len(self._times):
            raise ReplayExhausted(f"no data after {after}")
        return self._times[i]

    # -- channel transport ------------------------------------------------

    def _history(self, asset: str, now: int) -> list[_Row]:
        series = self._by_asset.get(asset, [])
        i = bisect.bisect_right(self._ts_index.get(asset, []), now)
        return series[:i]

    def _serve(self, request: dict) -> dict:
        p = request.get("params", {})
        asset, now = p["asset"], p["now"]
        kind = request["kind"]
        if kind == "price":
            row = self._at.get(now, {}).get(asset)
            if row is None:
                return {}
            return {"timestamp": row.timestamp, "price": row.price, "volume": row.volume,
                    "high": row.high, "low": row.low}
        hist = self._history(asset, now)
        if not hist:
            raise TransportError(f"no {kind} data for {asset} at {now}")
        if kind == "candles":
            n = p["n"]
            # one extra row so the first candle has a real open
            window = hist[-(n + 1):]
            prevs = window[:-1] if len(window) > n else [window[0]] + window[:-1]
            bars = window[1:] if len(window) > n else window
            out = []
            for prev, row in zip(prevs, bars):
                o, c = prev.price, row.price
                hi = max(o, c, row.high or c)
                lo = min(o, c, row.low or c)
                out.append([row.timestamp, o, hi, lo, c, row.volume])
            return {"candles": out[-n:]}
        last = hist[-1]
        if kind == "orderbook":
            if last.book is None:
                return {"best_bid": last.price, "best_ask": last.price, "bid_depth": 0.0,
                        "ask_depth": 0.0, "synthetic": True}
            b = last.book
            return {"best_bid": b.best_bid, "best_ask": b.best_ask, "bid_depth": b.bid_depth,
                    "ask_depth": b.ask_depth, "synthetic": False}
        if kind == "funding":
            return {"funding_rate": last.funding_rate or 0.0}
        raise TransportError(f"unsupported request {kind!r}")

    # -- FeedSource -------------------------------------------------------

    def poll(self, assets: list[str], now: int) -> list[PriceTick]:
        ticks = []
        for asset in assets:
            resp = self.channel.send({"kind": "price", "params": {"asset": asset, "now": now}})
            if resp:
                ticks.append(PriceTick(asset, resp["timestamp"], resp["price"], resp["volume"],
                                       resp["high"], resp["low"]))
        return ticks

    def candles(self, asset: str, now: int, n: int) -> list[Candle]:
        resp = self.channel.send({"kind": "candles", "params": {"asset": asset, "now": now, "n": n}})
        return [Candle(asset, int(ts), o, h, lo, c, v) for ts, o, h, lo, c, v in resp["candles"]]

    def orderbook(self, asset: str, now: int) -> tuple[OrderbookSnapshot, bool]:
        resp = self.channel.send({"kind": "orderbook", "params": {"asset": asset, "now": now}})
        book = OrderbookSnapshot(resp["best_bid"], resp["best_ask"], resp["bid_depth"], resp["ask_depth"])
        return book, bool(resp["synthetic"])

    def funding(self, asset: str, now: int) -> float:
        resp = self.channel.send({"kind": "funding", "params": {"asset": asset, "now": now}})
        return float(resp["funding_rate"])


# ---------------------------------------------------------------------------
# live REST
# ---------------------------------------------------------------------------


def extract(obj, path: str | int | None):
    """Follow a dotted path (``"data.bids.0.0"``) through dicts and lists."""
    if path is None or path == "":
        return obj
    parts = [path] if isinstance(path, int) else str(path).split(".")
    for part in parts:
        if isinstance(obj, list):
            obj = obj[int(part)]
        else:
            obj = obj[part]
    return obj


@dataclass
class RestFeedConfig:
    """URL templates (``{asset}`` placeholder) and response field paths."""

    price_url: str
    candles_url: str
    orderbook_url: str
    funding_url: str
    price_path: str = "price"
    timestamp_path: str | None = None
    candles_path: str = ""
    candle_fields: dict[str, str | int] = field(default_factory=lambda: {
        "timestamp": 0, "open": 1, "high": 2, "low": 3, "close": 4, "volume": 5,
    })
    best_bid_path: str = "bids.0.0"
    best_ask_path: str = "asks.0.0"
    bid_depth_path: str | None = None
    ask_depth_path: str | None = None
    funding_path: str = "funding_rate"
    timeout_s: float = 10.0


class RestFeed:
    """Polls generic REST JSON endpoints through the public channel."""

    def __init__(self, cfg: RestFeedConfig, channel: Channel | None = None, client=None):
        self.cfg = cfg
        if channel is None:
            routes = {
                "price": ("GET", cfg.price_url),
                "candles": ("GET", cfg.candles_url),
                "orderbook": ("GET", cfg.orderbook_url),
                "funding": ("GET", cfg.funding_url),
            }
            channel = public_channel(HttpTransport(routes, timeout=cfg.timeout_s, client=client))
        self.channel = channel
        self._last_ts: dict[str, int] = {}

    def _get(self, kind: str, asset: str, **extra) -> object:
        return self.channel.send({"kind": kind, "params": {"asset": asset, **extra}})

    def poll(self, assets: list[str], now: int) -> list[PriceTick]:
        ticks = []
        for asset in assets:
            resp = self._get("price", asset)
            try:
                price = float(extract(resp, self.cfg.price_path))
                ts = int(extract(resp, self.cfg.timestamp_path)) if self.cfg.timestamp_path else int(now)
            except (KeyError, IndexError, TypeError, ValueError):
                logger.warning("no usable price for %s at %s", asset, now)
                continue
            last = self._last_ts.get(asset)
            if last is not None and ts <= last:
                continue  # stale observation, not fresh at `now`
            self._last_ts[asset] = ts
            ticks.append(PriceTick(asset, ts, quantize(price)))
        return ticks

    def candles(self, asset: str, now: int, n: int) -> list[Candle]:
        rows = extract(self._get("candles", asset, n=n), self.cfg.candles_path)
        f = self.cfg.candle_fields
        out = []
        try:
            for r in rows[-n:]:
                out.append(Candle(asset, int(float(extract(r, f["timestamp"]))),
                                  float(extract(r, f["open"])), float(extract(r, f["high"])),
                                  float(extract(r, f["low"])), float(extract(r, f["close"])),
                                  float(extract(r, f["volume"]))))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed candles for {asset}: {exc}") from exc
        out.sort(key=lambda c: c.timestamp)
        return out

    def orderbook(self, asset: str, now: int) -> tuple[OrderbookSnapshot, bool]:
        resp = self._get("orderbook", asset)
        c = self.cfg
        try:
            book = OrderbookSnapshot(
                best_bid=float(extract(resp, c.best_bid_path)),
                best_ask=float(extract(resp, c.best_ask_path)),
                bid_depth=float(extract(resp, c.bid_depth_path)) if c.bid_depth_path else 0.0,
                ask_depth=float(extract(resp, c.ask_depth_path)) if c.ask_depth_path else 0.0,
            )
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed orderbook for {asset}: {exc}") from exc
        return book, False

    def funding(self, asset: str, now: int) -> float:
        try:
            return float(extract(self._get("funding", asset), self.cfg.funding_path))
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise TransportError(f"malformed funding for {asset}: {exc}") from exc
