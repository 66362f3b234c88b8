import itertools
import random
import threading

import pytest

from gatedtrader.errors import BackendTimeout, ForeignRelease
from gatedtrader.gate import InferenceGate
from gatedtrader.journal import Journal
from gatedtrader.trigger import TriggerEvent


def ev(asset="A", t=0, z=2.5):
    return TriggerEvent(asset, t, 0.004, z, "both")


def test_admit_busy_and_cooldown(journal):
    g = InferenceGate(journal, cooldown_s=1800)
    d = g.try_admit(ev("A", z=2.61), now=100)
    assert d.admitted and d.reason == "admitted" and d.invocation_id == "inv-000001"
    assert g.state.lock == 1 and g.state.holder == d.invocation_id
    b = g.try_admit(ev("B", z=2.30), now=101)
    assert not b.admitted and b.reason == "pipeline_busy"
    g.release(d.invocation_id, now=200)
    assert g.state.lock == 0 and g.state.holder is None and g.state.last_release_at == 200
    c = g.try_admit(ev("C"), now=800)
    assert c.reason == "cooldown_active"
    assert g.try_admit(ev("C"), now=2000).admitted
    kinds = [r.kind for r in journal.log_rows()]
    assert kinds == ["pipeline_start", "pipeline_busy", "pipeline_complete", "cooldown_active", "pipeline_start"]
    busy = journal.log_rows(["pipeline_busy"])[0]
    assert busy.asset == "B" and busy.data()["holder"] == "inv-000001"


def test_foreign_release_leaves_state(journal):
    g = InferenceGate(journal)
    d = g.try_admit(ev(), now=0)
    with pytest.raises(ForeignRelease):
        g.release("inv-999999", now=1)
    assert g.state.holder == d.invocation_id
    assert journal.log_rows(["protocol_violation"])


def test_held_releases_on_error_paths(journal):
    g = InferenceGate(journal, cooldown_s=0)
    for i, exc in enumerate((BackendTimeout("t"), RuntimeError("boom"), KeyboardInterrupt())):
        d = g.try_admit(ev(), now=10 * i)
        with pytest.raises(type(exc)):
            with g.held(d, now=lambda: 10 * i + 1):
                raise exc
        assert g.state.lock == 0
    completes = journal.log_rows(["pipeline_complete"])
    assert [c.data()["error"] for c in completes] == ["BackendTimeout", "RuntimeError", "KeyboardInterrupt"]


def test_watchdog_force_release(journal):
    g = InferenceGate(journal, watchdog_s=300)
    d = g.try_admit(ev(), now=0)
    assert g.reap(now=299) is None
    assert g.reap(now=300) == d.invocation_id and g.state.lock == 0
    # the late finisher does not disturb a new holder
    g.state.cooldown_s = 0
    d2 = g.try_admit(ev(), now=301)
    with g.held(d, now=lambda: 302):
        pass
    assert g.state.holder == d2.invocation_id
    assert journal.log_rows(["forced_release"])


def test_invocation_ids_continue_across_restart(db_path):
    with Journal(db_path) as j:
        g = InferenceGate(j, cooldown_s=0)
        g.release(g.try_admit(ev(), now=0).invocation_id, now=1)
    with Journal(db_path) as j:
        assert InferenceGate(j).try_admit(ev(), now=5).invocation_id == "inv-000002"


class Fault(Exception):
    pass


def run_stress(db_path, n_triggers=1000, n_assets=50, cooldown=40, threads=16, seed=0):
    """Fire triggers from many threads against one gate on a shared virtual clock."""
    journal = Journal(db_path)
    ticks = itertools.count(0, 3)
    clock_lock = threading.Lock()

    def clock():
        with clock_lock:
            return next(ticks)

    gate = InferenceGate(journal, cooldown_s=cooldown, clock=clock)
    rng = random.Random(seed)
    plan = [(f"S{rng.randrange(n_assets):02d}", rng.random()) for _ in range(n_triggers)]
    it = iter(enumerate(plan))
    it_lock = threading.Lock()
    decisions = []

    def worker():
        while True:
            with it_lock:
                nxt = next(it, None)
            if nxt is None:
                return
            i, (asset, u) = nxt
            d = gate.try_admit(TriggerEvent(asset, i, 0.004, 2.0 + u, "both"))
            decisions.append(d)
            if not d.admitted:
                continue
            try:
                with gate.held(d, now=clock):
                    if u < 0.2:
                        raise Fault("injected")
                    if u < 0.3:
                        raise BackendTimeout("injected")
            except (Fault, BackendTimeout):
                pass

    ts = [threading.Thread(target=worker) for _ in range(threads)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    return journal, gate, decisions


def check_linearizable(journal, gate, decisions, n_triggers, cooldown):
    rows = journal.log_rows()
    per_trigger = [r for r in rows if r.kind in ("pipeline_start", "pipeline_busy", "cooldown_active")]
    assert len(per_trigger) == n_triggers == len(decisions)
    starts = [r for r in rows if r.kind == "pipeline_start"]
    completes = {r.invocation_id: r for r in rows if r.kind == "pipeline_complete"}
    assert len(starts) == gate.admissions and all(s.invocation_id in completes for s in starts)
    intervals = sorted((s.timestamp, completes[s.invocation_id].timestamp, s.seq,
                        completes[s.invocation_id].seq) for s in starts)
    for (a0, a1, s0, c0), (b0, b1, s1, c1) in zip(intervals, intervals[1:]):
        assert a1 <= b0 and c0 < s1  # no overlap, in time and in journal order
        assert b0 - a1 >= cooldown
    assert [r.seq for r in rows] == list(range(1, len(rows) + 1))
    assert gate.state.lock == 0
    return len(starts)


def test_stress_linearizable(tmp_path):
    journal, gate, decisions = run_stress(str(tmp_path / "g.db"), n_triggers=400)
    admitted = check_linearizable(journal, gate, decisions, 400, 40)
    assert admitted > 5 and gate.busy_discards + gate.cooldown_discards == 400 - admitted
