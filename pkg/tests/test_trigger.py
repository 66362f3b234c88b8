import math
import random
import statistics
from collections import deque

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gatedtrader.config import TriggerConfig
from gatedtrader.errors import CorruptRecord, NonMonotoneTimestamp
from gatedtrader.feed import PriceTick
from gatedtrader.journal import Journal, VolHistoryRow
from gatedtrader.trigger import (
    RollingBaseline,
    Sample,
    TriggerEngine,
    evaluate_trigger,
    hot_restart,
    persist_baseline,
    restore_baseline,
    update,
    zscore,
)

CFG = TriggerConfig()


def baseline_with(returns, asset="BTC"):
    b = RollingBaseline(asset, capacity=max(30, len(returns)))
    for i, r in enumerate(returns):
        b.window.append(Sample(i + 1, r, 100.0))
    b.sample_count = len(returns)
    b.last_price, b.last_timestamp = 100.0, len(returns)
    return b


def test_update_return_arithmetic():
    b = RollingBaseline("BTC")
    b, r = update(b, PriceTick("BTC", 1, 100.0))
    assert r is None and len(b.window) == 0
    b, r = update(b, PriceTick("BTC", 2, 103.0))
    assert r == pytest.approx(0.03)
    b, r = update(b, PriceTick("BTC", 3, 103.0))
    assert r == 0.0


def test_update_ring_buffer_keeps_newest_30():
    b = RollingBaseline("BTC")
    prices = [100 + (i % 7) for i in range(36)]  # 35 returns
    expected = []
    for i, p in enumerate(prices):
        b, r = update(b, PriceTick("BTC", i, float(p)))
        if r is not None:
            expected.append(r)
    assert b.returns == expected[-30:]
    assert b.sample_count == 35 >= len(b.window)


def test_update_rejects_old_ticks_and_foreign_assets():
    b = RollingBaseline("BTC")
    update(b, PriceTick("BTC", 10, 100.0))
    with pytest.raises(NonMonotoneTimestamp):
        update(b, PriceTick("BTC", 10, 101.0))
    with pytest.raises(ValueError):
        update(b, PriceTick("ETH", 11, 101.0))


def test_zscore_degenerate_and_substitution():
    assert zscore(baseline_with([0.001] * 30), 0.001) is None
    assert zscore(baseline_with([0.001] * 5 + [0.002] * 4), 0.01) is None  # below warmup
    # mean 0.001, sample std 0.0005: alternate 0.001 +/- a with a chosen for n-1 normalization
    n = 30
    a = 0.0005 * math.sqrt((n - 1) / n)
    b = baseline_with([0.001 + a if i % 2 else 0.001 - a for i in range(n)])
    assert zscore(b, 0.002) == pytest.approx(2.0, abs=1e-9)


def test_zscore_matches_two_pass_oracle():
    rng = random.Random(1)
    for _ in range(200):
        xs = [abs(rng.gauss(0, 1)) for _ in range(30)]
        r = abs(rng.gauss(0, 1))
        mu = math.fsum(xs) / 30
        sd = math.sqrt(math.fsum((x - mu) ** 2 for x in xs) / 29)
        assert zscore(baseline_with(xs), r) == pytest.approx((r - mu) / sd, abs=1e-12)


def test_evaluate_trigger_examples():
    assert evaluate_trigger(2.61, 0.001, CFG).fired_by == "zscore"
    assert evaluate_trigger(None, 0.003, CFG).fired_by == "floor"
    assert evaluate_trigger(2.5, 0.004, CFG).fired_by == "both"
    assert evaluate_trigger(1.9, 0.0029, CFG) is None
    assert evaluate_trigger(2.0, 0.0, CFG).fired_by == "zscore"


returns = st.floats(min_value=0.0, max_value=0.05, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(st.lists(returns, min_size=10, max_size=30), returns,
       st.floats(min_value=1e-3, max_value=1e3))
def test_zscore_scale_invariant_and_finite(xs, r, c):
    z = zscore(baseline_with(xs), r)
    zc = zscore(baseline_with([x * c for x in xs]), r * c)
    if z is None:
        return
    assert math.isfinite(z)
    if zc is not None:
        assert zc == pytest.approx(z, rel=1e-9, abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(st.floats(-10, 10), st.floats(0, 0.1), st.floats(0, 5), st.floats(0, 0.1))
def test_trigger_monotone(z, r, dz, dr):
    if evaluate_trigger(z, r, CFG) is not None:
        assert evaluate_trigger(z + dz, r, CFG) is not None
        assert evaluate_trigger(z, r + dr, CFG) is not None


def test_engine_scores_before_inserting():
    eng = TriggerEngine(CFG)
    prices = [100.0]
    for i in range(20):
        prices.append(prices[-1] * (1 + (0.0005 if i % 2 else 0.001)))
    for i, p in enumerate(prices):
        eng.observe(PriceTick("BTC", i, p))
    b = eng.baseline("BTC")
    window = list(b.returns)
    r, z, ev = eng.observe(PriceTick("BTC", 100, prices[-1] * 1.01))
    mu, sd = statistics.fmean(window), statistics.stdev(window)
    assert z == pytest.approx((r - mu) / sd, abs=1e-12)
    assert ev is not None and ev.fired_by == "both"


def test_persist_roundtrip_and_idempotent(journal):
    eng = TriggerEngine(CFG)
    for i in range(40):
        eng.observe(PriceTick("BTC", 60 * i, 100.0 + (i % 5) * 0.1))
    b = eng.baseline("BTC")
    persist_baseline(b, journal)
    n = journal.vol_count()
    persist_baseline(b, journal)
    assert journal.vol_count() == n
    restored = restore_baseline(journal, "BTC", 30)
    assert restored.state_bytes() == b.state_bytes()


def test_hot_restart_fresh_store_is_empty(journal):
    assert hot_restart(journal) == {}


def test_hot_restart_isolates_corrupt_asset(journal):
    eng = TriggerEngine(CFG)
    assets = ["A1", "A2", "A3", "A4", "A5"]
    for i in range(15):
        for k, a in enumerate(assets):
            eng.observe(PriceTick(a, 60 * i, 10.0 * (k + 1) + (i % 3) * 0.01))
    for a in assets:
        persist_baseline(eng.baseline(a), journal)
    journal.upsert_vol(VolHistoryRow("A3", 60 * 14, -0.5, 30.0))
    seen = []
    out = hot_restart(journal, on_corrupt=lambda a, e: seen.append(a))
    assert sorted(out) == ["A1", "A2", "A4", "A5"]
    assert seen == ["A3"]
    with pytest.raises(CorruptRecord):
        restore_baseline(journal, "A3", 30)


def test_restart_allows_zscore_trigger_on_first_cycle(journal):
    eng = TriggerEngine(CFG)
    p = 100.0
    for i in range(31):
        p *= 1 + (0.0005 if i % 2 else 0.001)
        eng.observe(PriceTick("BTC", i, p))
    persist_baseline(eng.baseline("BTC"), journal)
    fresh = TriggerEngine(CFG, hot_restart(journal))
    _, z, ev = fresh.observe(PriceTick("BTC", 31, p * 1.0025))
    assert z is not None and ev is not None and ev.fired_by == "zscore"


def test_persisted_sample_counts_scale():
    j = Journal(":memory:")
    eng = TriggerEngine(CFG)
    assets = [f"X{i:02d}" for i in range(12)]
    total = 0
    for t in range(50):
        for k, a in enumerate(assets):
            eng.observe(PriceTick(a, t, 5.0 + k + 0.01 * ((t * (k + 1)) % 7)))
        for a in assets:
            persist_baseline(eng.baseline(a), j)
    for a in assets:
        total += j.vol_sample_count(a)
    # every non-first observation is a sample row
    assert total == 12 * 49
    assert j.vol_count() == 12 * 50
    assert sorted(j.vol_assets()) == assets
