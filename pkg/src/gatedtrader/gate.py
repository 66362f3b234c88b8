"""Admission lock in front of the deliberation pipeline.

One invocation at a time. A trigger that arrives while the lock is held, or
before the cooldown since the last release has elapsed, is discarded (never
queued) and the discard is journaled. Admission and release are the only
mutation points and both run under one mutex, journal write included, so the
journal order is the linearization order.
"""

from __future__ import annotations

import contextlib
import logging
import threading
from dataclasses import dataclass
from typing import Callable

from .errors import ForeignRelease
from .journal import Journal
from .trigger import TriggerEvent

logger = logging.getLogger(__name__)

ADMITTED = "admitted"
PIPELINE_BUSY = "pipeline_busy"
COOLDOWN_ACTIVE = "cooldown_active"


@dataclass
class GateState:
    lock: int = 0
    holder: str | None = None
    acquired_at: int | None = None
    last_release_at: int | None = None
    cooldown_s: int = 1800


@dataclass(frozen=True)
class GateDecision:
    admitted: bool
    reason: str
    trigger: TriggerEvent
    invocation_id: str | None = None
    at: int = 0


class InferenceGate:
    def __init__(self, journal: Journal, cooldown_s: int = 1800, watchdog_s: int = 300,
                 clock: Callable[[], int] | None = None, first_invocation: int | None = None):
        self.journal = journal
        self.state = GateState(cooldown_s=cooldown_s)
        self.watchdog_s = watchdog_s
        self.clock = clock
        self._mutex = threading.Lock()
        n = journal.invocation_count() if first_invocation is None else first_invocation - 1
        self._counter = n
        self.admissions = 0
        self.busy_discards = 0
        self.cooldown_discards = 0

    def _now(self, now: int | None) -> int:
        if now is not None:
            return int(now)
        if self.clock is None:
            raise ValueError("no timestamp given and no clock configured")
        return int(self.clock())

    def try_admit(self, trigger: TriggerEvent, now: int | None = None) -> GateDecision:
        """Atomic test-and-set. Exactly one journal entry per call."""
        with self._mutex:
            t = self._now(now)
            s = self.state
            payload = trigger.to_dict()
            if s.lock:
                self.busy_discards += 1
                payload["holder"] = s.holder
                self.journal.log(PIPELINE_BUSY, t, payload, asset=trigger.asset)
                return GateDecision(False, PIPELINE_BUSY, trigger, at=t)
            if s.last_release_at is not None and t - s.last_release_at < s.cooldown_s:
                self.cooldown_discards += 1
                payload["remaining_s"] = s.cooldown_s - (t - s.last_release_at)
                self.journal.log(COOLDOWN_ACTIVE, t, payload, asset=trigger.asset)
                return GateDecision(False, COOLDOWN_ACTIVE, trigger, at=t)
            self._counter += 1
            inv = f"inv-{self._counter:06d}"
            self.journal.log("pipeline_start", t, payload, invocation_id=inv, asset=trigger.asset)
            s.lock, s.holder, s.acquired_at = 1, inv, t
            self.admissions += 1
            return GateDecision(True, ADMITTED, trigger, inv, at=t)

    def release(self, invocation_id: str, now: int | None = None, status: str = "ok",
                detail: dict | None = None) -> GateState:
        with self._mutex:
            t = self._now(now)
            s = self.state
            if s.holder != invocation_id:
                self.journal.log("protocol_violation", t,
                                 {"caller": invocation_id, "holder": s.holder, "op": "release"},
                                 invocation_id=invocation_id)
                raise ForeignRelease(f"{invocation_id} does not hold the lock (holder={s.holder})")
            payload = {"status": status, "acquired_at": s.acquired_at, **(detail or {})}
            self.journal.log("pipeline_complete", t, payload, invocation_id=invocation_id)
            s.lock, s.holder, s.acquired_at, s.last_release_at = 0, None, None, t
            return GateState(**vars(s))

    def reap(self, now: int | None = None) -> str | None:
        """Force-release an invocation that has held the lock past the watchdog."""
        with self._mutex:
            t = self._now(now)
            s = self.state
            if not s.lock or t - s.acquired_at < self.watchdog_s:
                return None
            stuck = s.holder
            self.journal.log("forced_release", t, {"held_since": s.acquired_at, "watchdog_s": self.watchdog_s},
                             invocation_id=stuck)
            s.lock, s.holder, s.acquired_at, s.last_release_at = 0, None, None, t
            logger.error("watchdog released stuck invocation %s", stuck)
            return stuck

    @contextlib.contextmanager
    def held(self, decision: GateDecision, now: Callable[[], int] | None = None):
        """Run the admitted invocation and release on every exit path.

        ``now`` supplies the release timestamp (defaults to the gate clock).
        """
        if not decision.admitted:
            raise ValueError("decision was not admitted")
        status = "ok"
        detail: dict = {}
        try:
            yield decision
        except BaseException as exc:
            status = "error"
            detail = {"error": type(exc).__name__, "message": str(exc)}
            raise
        finally:
            t = now() if now is not None else None
            try:
                self.release(decision.invocation_id, t, status, detail)
            except ForeignRelease:
                # already force-released by the watchdog
                logger.warning("%s finished after forced release", decision.invocation_id)
