"""Anomaly trigger: rolling baseline of return magnitudes and a z-score gate.

For each asset the engine keeps the last ``window`` absolute returns
``r = |p - p_prev| / p_prev``. A new return is scored against the window as it
stood *before* the return arrives, then appended. The trigger fires when the
score clears ``z_threshold`` or the raw return clears ``return_floor``; the
floor keeps the gate alive when the window is too flat for a usable z.

The window is written to ``vol_history`` every cycle so a restarted process can
resume scoring immediately instead of waiting out a fresh warmup.
"""

from __future__ import annotations

import logging
import math
import struct
from collections import deque
from dataclasses import dataclass, field

from .config import TriggerConfig
from .errors import CorruptRecord, NonMonotoneTimestamp, StorageError
from .feed import PriceTick
from .journal import Journal, VolHistoryRow

logger = logging.getLogger(__name__)

FIRED_ZSCORE = "zscore"
FIRED_FLOOR = "floor"
FIRED_BOTH = "both"


@dataclass(frozen=True)
class Sample:
    timestamp: int
    r: float
    price: float


@dataclass
class RollingBaseline:
    asset: str
    capacity: int = 30
    window: deque = field(default=None)  # of Sample
    prices: deque = field(default=None)  # of (timestamp, price)
    last_price: float | None = None
    last_timestamp: int | None = None
    sample_count: int = 0

    def __post_init__(self):
        if self.capacity < 2:
            raise ValueError("capacity must be at least 2")
        self.window = deque(self.window or (), maxlen=self.capacity)
        self.prices = deque(self.prices or (), maxlen=self.capacity)

    @property
    def returns(self) -> list[float]:
        return [s.r for s in self.window]

    def state_bytes(self) -> bytes:
        """Exact binary image of the window state, for equality checks.

        ``sample_count`` is a lifetime counter and is left out.
        """
        parts = [self.asset.encode(), struct.pack("<q", self.capacity)]
        parts.append(struct.pack("<d", self.last_price if self.last_price is not None else math.nan))
        parts.append(struct.pack("<q", self.last_timestamp if self.last_timestamp is not None else -1))
        for s in self.window:
            parts.append(struct.pack("<qdd", s.timestamp, s.r, s.price))
        for ts, p in self.prices:
            parts.append(struct.pack("<qd", ts, p))
        return b"".join(parts)


@dataclass(frozen=True)
class TriggerEvent:
    asset: str
    timestamp: int
    r_t: float
    z_t: float | None
    fired_by: str
    omega: float | None = None

    def to_dict(self) -> dict:
        return {"asset": self.asset, "timestamp": self.timestamp, "r_t": self.r_t,
                "z_t": self.z_t, "fired_by": self.fired_by, "omega": self.omega}


def absolute_return(last_price: float, price: float) -> float:
    return abs(price - last_price) / last_price


def update(baseline: RollingBaseline, tick: PriceTick) -> tuple[RollingBaseline, float | None]:
    """Append the tick's return magnitude to the window (evicting the oldest).

    The first tick for an asset only records the price and returns ``None``.
    """
    if tick.asset != baseline.asset:
        raise ValueError(f"tick for {tick.asset} sent to {baseline.asset} baseline")
    if not tick.price > 0:
        raise ValueError("price must be positive")
    if baseline.last_timestamp is not None and tick.timestamp <= baseline.last_timestamp:
        raise NonMonotoneTimestamp(
            f"{tick.asset}: tick at {tick.timestamp} not after {baseline.last_timestamp}"
        )
    r = None
    if baseline.last_price is not None:
        r = absolute_return(baseline.last_price, tick.price)
        baseline.window.append(Sample(tick.timestamp, r, tick.price))
        baseline.sample_count += 1
    baseline.last_price = tick.price
    baseline.last_timestamp = tick.timestamp
    baseline.prices.append((tick.timestamp, tick.price))
    return baseline, r


def zscore(baseline: RollingBaseline, r_t: float, min_warmup: int = 10, eps: float = 1e-12) -> float | None:
    """(r_t - mean) / sample std over the current window; None when undefined."""
    xs = baseline.returns
    n = len(xs)
    if n < max(min_warmup, 2):
        return None
    mu = sum(xs) / n
    var = sum((x - mu) ** 2 for x in xs) / (n - 1)
    sd = math.sqrt(var)
    if not sd >= eps:
        return None
    z = (r_t - mu) / sd
    return z if math.isfinite(z) else None


def evaluate_trigger(z_t: float | None, r_t: float, cfg: TriggerConfig, *,
                     asset: str = "", timestamp: int = 0) -> TriggerEvent | None:
    by_z = z_t is not None and z_t >= cfg.z_threshold
    by_floor = r_t >= cfg.return_floor
    if not (by_z or by_floor):
        return None
    fired = FIRED_BOTH if (by_z and by_floor) else (FIRED_ZSCORE if by_z else FIRED_FLOOR)
    return TriggerEvent(asset=asset, timestamp=timestamp, r_t=r_t, z_t=z_t, fired_by=fired)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def persist_baseline(baseline: RollingBaseline, store: Journal) -> None:
    """Write the window and the latest price; re-writing is a no-op.

    Rows are keyed by (asset, timestamp), so a cycle that failed to persist is
    simply covered by the next successful call.
    """
    rows = [VolHistoryRow(baseline.asset, s.timestamp, s.r, s.price) for s in baseline.window]
    if baseline.last_timestamp is not None and (
        not baseline.window or baseline.window[-1].timestamp != baseline.last_timestamp
    ):
        rows.append(VolHistoryRow(baseline.asset, baseline.last_timestamp, None, baseline.last_price))
    store.upsert_vol_many(rows)


def _check_row(row: VolHistoryRow) -> None:
    if row.r_t is not None and (not math.isfinite(row.r_t) or row.r_t < 0):
        raise CorruptRecord(f"{row.asset}@{row.timestamp}: bad return {row.r_t!r}")
    if not (isinstance(row.price, float) and math.isfinite(row.price) and row.price > 0):
        raise CorruptRecord(f"{row.asset}@{row.timestamp}: bad price {row.price!r}")


def restore_baseline(store: Journal, asset: str, capacity: int) -> RollingBaseline | None:
    """Rebuild one asset's baseline from its most recent rows; None if no history."""
    try:
        rows = store.vol_history(asset, limit=capacity + 1)
    except StorageError as exc:
        raise CorruptRecord(f"{asset}: {exc}") from exc
    if not rows:
        return None
    for row in rows:
        _check_row(row)
    count = store.vol_sample_count(asset)
    samples = [Sample(r.timestamp, r.r_t, r.price) for r in rows if r.r_t is not None][-capacity:]
    last = rows[-1]
    return RollingBaseline(
        asset=asset,
        capacity=capacity,
        window=deque(samples),
        prices=deque((r.timestamp, r.price) for r in rows[-capacity:]),
        last_price=last.price,
        last_timestamp=last.timestamp,
        sample_count=count,
    )


def hot_restart(store: Journal, assets: list[str] | None = None, capacity: int = 30,
                on_corrupt=None) -> dict[str, RollingBaseline]:
    """Restore every asset's baseline that has history.

    A corrupt asset is skipped (it will cold-start) and reported through
    ``on_corrupt(asset, error)``; the other assets are unaffected.
    """
    wanted = store.vol_assets() if assets is None else assets
    restored: dict[str, RollingBaseline] = {}
    for asset in wanted:
        try:
            b = restore_baseline(store, asset, capacity)
        except CorruptRecord as exc:
            logger.error("cold start for %s: %s", asset, exc)
            if on_corrupt is not None:
                on_corrupt(asset, exc)
            continue
        if b is not None:
            restored[asset] = b
    return restored


class TriggerEngine:
    """Owns the per-asset baselines and turns ticks into trigger events."""

    def __init__(self, cfg: TriggerConfig, baselines: dict[str, RollingBaseline] | None = None):
        self.cfg = cfg
        self.baselines: dict[str, RollingBaseline] = dict(baselines or {})

    def baseline(self, asset: str) -> RollingBaseline:
        b = self.baselines.get(asset)
        if b is None:
            b = self.baselines[asset] = RollingBaseline(asset, capacity=self.cfg.window)
        return b

    def observe(self, tick: PriceTick) -> tuple[float | None, float | None, TriggerEvent | None]:
        """Score the tick against the pre-update window, then update."""
        b = self.baseline(tick.asset)
        if b.last_timestamp is not None and tick.timestamp <= b.last_timestamp:
            raise NonMonotoneTimestamp(f"{tick.asset}: tick at {tick.timestamp} not after {b.last_timestamp}")
        if b.last_price is None:
            update(b, tick)
            return None, None, None
        r = absolute_return(b.last_price, tick.price)
        z = zscore(b, r, self.cfg.min_warmup, self.cfg.eps)
        update(b, tick)
        event = evaluate_trigger(z, r, self.cfg, asset=tick.asset, timestamp=tick.timestamp)
        return r, z, event
