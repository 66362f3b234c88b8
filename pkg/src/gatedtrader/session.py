"""The run loop: poll, score, gate, deliberate, monitor, journal.

Replay sessions advance a virtual clock through the file's timestamps and run
every admitted invocation synchronously, so the journal is a pure function of
(fixture, config, seed). Live sessions poll on the wall clock and hand admitted
invocations to a single worker thread; triggers that arrive meanwhile meet a
held lock and are discarded as busy.
"""

from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable

from .backends import DeliberationBackend, RemoteInference, SeededMock
from .config import SessionConfig
from .divergence import DivergenceScore, divergence_score
from .errors import ReplayExhausted, TransportError
from .feed import FeedSource, ReplayFeed, RestFeed, RestFeedConfig, poll_assets
from .gate import GateDecision, InferenceGate
from .journal import Journal
from .pipeline import Deliberation, PositionMonitor
from .router import (
    ChannelConfig,
    ExecutionRouter,
    HttpTransport,
    ProbeSet,
    SafetyStatus,
    channel_probe,
    private_channel,
    proxy_probe,
)
from .trigger import TriggerEngine, TriggerEvent, hot_restart, persist_baseline

logger = logging.getLogger(__name__)


@dataclass
class SessionSummary:
    cycles: int = 0
    ticks: int = 0
    triggers: int = 0
    admitted: int = 0
    busy: int = 0
    cooldown: int = 0
    asset_cooldown: int = 0
    executed: int = 0
    restored_assets: int = 0
    last_time: int | None = None


def build_backend(cfg: SessionConfig) -> DeliberationBackend:
    if cfg.backend == "mock":
        return SeededMock(seed=cfg.seed, mode=cfg.backend_mode)
    return RemoteInference(cfg.backend_url, cfg.backend_model, cfg.backend_api, cfg.backend_timeout_s)


def rest_feed_from_endpoint(base: str) -> RestFeed:
    """Generic REST layout: ``/price/{asset}``, ``/candles/{asset}?n={n}``, ``/orderbook/{asset}``, ``/funding/{asset}``."""
    base = base.rstrip("/")
    return RestFeed(RestFeedConfig(
        price_url=f"{base}/price/{{asset}}",
        candles_url=f"{base}/candles/{{asset}}?n={{n}}",
        orderbook_url=f"{base}/orderbook/{{asset}}",
        funding_url=f"{base}/funding/{{asset}}",
        timestamp_path="timestamp",
    ))


def build_router(cfg: SessionConfig, feed: FeedSource,
                 on_check: Callable[[SafetyStatus], None] | None = None) -> ExecutionRouter:
    ccfg = ChannelConfig(cfg.public_endpoint, cfg.private_endpoint, cfg.private_proxy or None, cfg.mode,
                         cfg.safety_ttl_s)
    if cfg.mode == "DRY_RUN":
        return ExecutionRouter(ccfg, feed.channel)
    routes = {
        "order": ("POST", cfg.private_endpoint),
        "probe": ("GET", cfg.exchange_health_url or cfg.private_endpoint),
    }
    private = private_channel(HttpTransport(routes, proxy=cfg.private_proxy or None, timeout=cfg.probe_timeout_s))
    tor = proxy_probe(cfg.private_proxy, cfg.probe_timeout_s) if cfg.private_proxy else (lambda: False)
    return ExecutionRouter(ccfg, feed.channel, private, ProbeSet(tor, channel_probe(private)), on_check)


class Session:
    def __init__(self, cfg: SessionConfig, journal: Journal, feed: FeedSource | None = None,
                 backend: DeliberationBackend | None = None, router: ExecutionRouter | None = None,
                 stop: threading.Event | None = None):
        self.cfg = cfg
        self.journal = journal
        if feed is None:
            feed = ReplayFeed(cfg.replay_path) if cfg.replay_path else rest_feed_from_endpoint(cfg.public_endpoint)
        self.feed = feed
        self.replay = isinstance(feed, ReplayFeed)
        self.assets = list(cfg.assets) or (feed.assets if self.replay else [])
        if not self.assets and not self.replay:
            raise ValueError("live sessions need an explicit asset list")
        self.backend = backend or build_backend(cfg)
        self.router = router or build_router(cfg, feed, self._journal_safety)
        if router is not None and router.on_check is None:
            router.on_check = self._journal_safety
        self.stop = stop or threading.Event()
        self._now = 0
        self.summary = SessionSummary()

        restored = hot_restart(journal, self.assets, capacity=cfg.window, on_corrupt=self._journal_corrupt)
        self.summary.restored_assets = len(restored)
        self.engine = TriggerEngine(cfg.trigger(), restored)
        self.gate = InferenceGate(journal, cfg.igp_cooldown_s, cfg.watchdog_s, clock=self.clock)
        self._recover_gate()
        self.monitor = PositionMonitor(journal)
        for t in journal.open_trades():
            self.monitor.add(t)
        self.deliberation = Deliberation(
            feed=feed, backend=self.backend, router=self.router, journal=journal, risk=cfg.risk(),
            mode=cfg.mode, clock=self.clock, agent_name=cfg.agent_name, memory_k=cfg.memory_k,
            n_candles=cfg.candles, monitor=self.monitor,
        )
        self._last_trigger: dict[str, int] = {}
        self._resume_after = max((b.last_timestamp for b in restored.values()), default=None)
        self._worker = None if self.replay else ThreadPoolExecutor(max_workers=1, thread_name_prefix="deliberation")

    # -- clock / journal hooks --------------------------------------------

    def clock(self) -> int:
        return self._now if self.replay else int(time.time())

    def _journal_safety(self, status: SafetyStatus) -> None:
        self.journal.log("safety_check", status.checked_at,
                         {"tor_active": status.tor_active, "exchange_reachable": status.exchange_reachable,
                          "safe": status.safe})

    def _journal_corrupt(self, asset: str, exc: Exception) -> None:
        self.journal.log("baseline_corrupt", self.clock(), {"error": str(exc)}, asset=asset)

    def _recover_gate(self) -> None:
        """Restore cooldown state, and close out an invocation a crash left holding the lock."""
        rows = self.journal.log_rows(("pipeline_start", "pipeline_complete", "forced_release"))
        if not rows:
            return
        last = rows[-1]
        if last.kind == "pipeline_start":
            self.journal.log("forced_release", last.timestamp, {"reason": "restart"},
                             invocation_id=last.invocation_id)
        self.gate.state.last_release_at = last.timestamp

    # -- one polling cycle ------------------------------------------------

    def step(self, now: int) -> None:
        self._now = int(now)
        s = self.summary
        s.cycles += 1
        s.last_time = self._now
        self.gate.reap(self._now)
        ticks = poll_assets(self.feed, self.assets, self._now, on_error=self._journal_poll_error)
        s.ticks += len(ticks)
        events: list[TriggerEvent] = []
        for tick in ticks:
            self.monitor.on_tick(tick)
            _, _, ev = self.engine.observe(tick)
            if ev is not None:
                events.append(ev)
        for tick in ticks:
            persist_baseline(self.engine.baseline(tick.asset), self.journal)
        if not events:
            return
        s.triggers += len(events)

        scored = []
        for ev in events:
            score = self._score(ev)
            scored.append((replace(ev, omega=score.omega), score))
        scored.sort(key=lambda es: (-es[1].omega, es[0].asset))

        admitted: list[tuple[GateDecision, DivergenceScore]] = []
        for ev, score in scored:
            last = self._last_trigger.get(ev.asset)
            if last is not None and self._now - last < self.cfg.asset_cooldown_s:
                s.asset_cooldown += 1
                self.journal.log("asset_cooldown", self._now,
                                 {**ev.to_dict(), "remaining_s": self.cfg.asset_cooldown_s - (self._now - last)},
                                 asset=ev.asset)
                continue
            self._last_trigger[ev.asset] = self._now
            d = self.gate.try_admit(ev, self._now)
            if d.admitted:
                s.admitted += 1
                admitted.append((d, score))
            elif d.reason == "pipeline_busy":
                s.busy += 1
            else:
                s.cooldown += 1
        for d, score in admitted:
            self._dispatch(d, score)

    def _score(self, ev: TriggerEvent) -> DivergenceScore:
        dcfg = self.cfg.divergence()
        ref = self.engine.baselines.get(dcfg.reference_asset)
        return divergence_score(ev.z_t, list(self.engine.baseline(ev.asset).prices),
                                list(ref.prices) if ref is not None else None, dcfg, self.cfg.z_threshold)

    def _journal_poll_error(self, exc: TransportError) -> None:
        self.journal.log("poll_failed", self.clock(), {"error": str(exc)})

    def _dispatch(self, d: GateDecision, score: DivergenceScore) -> None:
        if self._worker is None:
            self._deliberate(d, score)
        else:
            self._worker.submit(self._deliberate, d, score)

    def _deliberate(self, d: GateDecision, score: DivergenceScore) -> None:
        try:
            with self.gate.held(d, now=self.clock):
                out = self.deliberation.run(d.trigger, score, d.invocation_id)
            if out.stage_reached == "executed":
                self.summary.executed += 1
        except Exception:
            if self._worker is None:
                raise
            logger.exception("invocation %s failed", d.invocation_id)

    # -- drivers ----------------------------------------------------------

    def run(self, max_cycles: int | None = None, close_positions: bool = True) -> SessionSummary:
        """Run until the replay ends, ``stop`` is set or ``max_cycles`` have elapsed."""
        try:
            if self.replay:
                self._run_replay(max_cycles)
            else:
                self._run_live(max_cycles)
        finally:
            self.shutdown(close_positions)
        return self.summary

    def _run_replay(self, max_cycles: int | None) -> None:
        t = self._resume_after
        n = 0
        while not self.stop.is_set() and (max_cycles is None or n < max_cycles):
            try:
                t = self.feed.next_time(t)
            except ReplayExhausted:
                break
            self.step(t)
            n += 1

    def _run_live(self, max_cycles: int | None) -> None:
        n = 0
        while not self.stop.is_set() and (max_cycles is None or n < max_cycles):
            started = time.monotonic()
            self.step(int(time.time()))
            n += 1
            if max_cycles is not None and n >= max_cycles:
                break
            self.stop.wait(max(0.0, self.cfg.polling_interval_s - (time.monotonic() - started)))

    def shutdown(self, close_positions: bool = True) -> None:
        if self._worker is not None:
            self._worker.shutdown(wait=True)
            self._worker = None
        if close_positions and self.monitor.open:
            closed = self.monitor.close_all(self.summary.last_time if self.summary.last_time is not None
                                            else self.clock())
            logger.info("force-closed %d open positions at session end", len(closed))
