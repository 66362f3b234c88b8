"""Analyst -> Risk Manager -> Executor.

The Analyst proposes, four deterministic gates screen the proposal before any
model is consulted about risk, the Risk Manager sizes (never above the cap),
and the Executor records or routes the order. Every stage is journaled.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable

from .backends import DeliberationBackend
from .config import RiskConfig
from .contracts import (
    CORRECTION,
    AnalystProposal,
    CallContext,
    GateResult,
    MemoryBriefing,
    MemoryEntry,
    RiskVerdict,
    parse_object,
    render_prompt,
    validate_analyst,
    validate_risk,
)
from .divergence import DivergenceScore
from .errors import (
    BackendError,
    BackendTimeout,
    RouterError,
    SafetyGateClosed,
    SchemaViolation,
    StorageError,
    TransportError,
)
from .feed import FeedSource, MarketContext, PriceTick, build_market_context
from .journal import InferenceCallRow, Journal, TradeRecord, quantize
from .router import ExecutionRecord, ExecutionRouter, OrderRequest
from .trigger import TriggerEvent

logger = logging.getLogger(__name__)

ANALYST_WAIT = "analyst_wait"
GATE_REJECT = "gate_reject"
CONTEXTUAL_REJECT = "contextual_reject"
EXECUTED = "executed"
ABORTED = "aborted"


@dataclass(frozen=True)
class PipelineOutcome:
    invocation_id: str
    asset: str
    stage_reached: str
    proposal: AnalystProposal | None
    verdict: RiskVerdict | None = None
    execution: ExecutionRecord | None = None
    trade_id: str | None = None
    reason: str | None = None


class _Telemetry:
    """Times backend calls and journals one inference_calls row per call."""

    def __init__(self, journal: Journal | None, clock: Callable[[], int]):
        self.journal = journal
        self.clock = clock

    def call(self, fn, ctx: CallContext, validate):
        """Call the backend and validate its text; the row records the combined outcome."""
        started = self.clock()
        text = ""
        outcome = "ok"
        try:
            text = fn(ctx)
            return validate(parse_object(text))
        except BackendTimeout:
            outcome = "timeout"
            raise
        except BackendError:
            outcome = "error"
            raise
        except SchemaViolation:
            outcome = "schema_violation"
            raise
        finally:
            self._record(ctx, started, outcome, text)

    def _record(self, ctx, started, outcome, text):
        if self.journal is None:
            return
        try:
            self.journal.record_inference(InferenceCallRow(
                invocation_id=ctx.invocation_id, role=ctx.role, attempt=ctx.attempt,
                started_at=started, ended_at=max(started, self.clock()), outcome=outcome,
                prompt_chars=len(ctx.system_prompt) + len(ctx.user_message()),
                response_chars=len(text) if isinstance(text, str) else 0,
            ))
        except StorageError as exc:
            logger.error("telemetry write failed: %s", exc)


def _zero_clock() -> int:
    return 0


# ---------------------------------------------------------------------------
# Analyst
# ---------------------------------------------------------------------------


def analyst_payload(ctx: MarketContext, omega: DivergenceScore, memory: MemoryBriefing,
                    trigger: TriggerEvent | None = None) -> dict:
    return {
        "context_version": 1,
        "market": ctx.to_dict(),
        "divergence": omega.to_dict(),
        "trigger": trigger.to_dict() if trigger is not None else {},
        "memory": memory.to_dict(),
    }


def run_analyst(ctx: MarketContext, omega: DivergenceScore, memory: MemoryBriefing,
                backend: DeliberationBackend, *, invocation_id: str = "inv-000000",
                trigger: TriggerEvent | None = None, agent_name: str = "Desk",
                journal: Journal | None = None, clock: Callable[[], int] = _zero_clock,
                max_attempts: int = 2) -> AnalystProposal:
    """Ask for a proposal; malformed output gets one re-prompt, then abstains.

    Failures never propagate: they resolve to a ``wait`` proposal whose
    ``fallback`` names the cause (``malformed_output``, ``backend_timeout``,
    ``backend_error``).
    """
    tel = _Telemetry(journal, clock)
    system = render_prompt("analyst", agent_name)
    payload = analyst_payload(ctx, omega, memory, trigger)
    correction = None
    for attempt in range(1, max_attempts + 1):
        call = CallContext("analyst", invocation_id, attempt, system, payload, correction)
        try:
            return tel.call(backend.analyst, call, validate_analyst)
        except BackendTimeout:
            return AnalystProposal.abstain("backend_timeout")
        except BackendError:
            return AnalystProposal.abstain("backend_error")
        except SchemaViolation as exc:
            logger.info("%s analyst attempt %d rejected: %s", invocation_id, attempt, exc)
            _note_violation(journal, invocation_id, "analyst", attempt, clock, str(exc))
            correction = CORRECTION.format(error=exc)
    return AnalystProposal.abstain("malformed_output")


def _note_violation(journal, invocation_id, role, attempt, clock, error):
    if journal is None:
        return
    try:
        journal.log("schema_violation", clock(), {"role": role, "attempt": attempt, "error": error},
                    invocation_id=invocation_id)
    except StorageError as exc:
        logger.error("could not journal schema violation: %s", exc)


# ---------------------------------------------------------------------------
# Risk Manager
# ---------------------------------------------------------------------------


def hard_gates(p: AnalystProposal, cfg: RiskConfig) -> tuple[GateResult, ...]:
    """Evaluate all four gates (no short-circuit, for a complete audit record)."""
    g1 = GateResult("signal", p.signal in ("long", "short"), p.signal, "long|short")
    g2 = GateResult("confidence", p.confidence >= cfg.confidence_gate, p.confidence, cfg.confidence_gate)
    dist = p.stop_distance
    g3 = GateResult("stop_distance", dist is not None and dist <= cfg.max_risk_fraction, dist,
                    cfg.max_risk_fraction)
    g4 = GateResult("size_usd", p.size_usd is not None and p.size_usd <= cfg.max_size_usd, p.size_usd,
                    cfg.max_size_usd)
    return (g1, g2, g3, g4)


def gates_pass(gates: Iterable[GateResult]) -> bool:
    return all(g.passed for g in gates)


def risk_payload(p: AnalystProposal, gates: tuple[GateResult, ...], cfg: RiskConfig,
                 asset: str = "", omega: DivergenceScore | None = None) -> dict:
    return {
        "asset": asset,
        "proposal": p.to_dict(),
        "gates": [g.to_dict() for g in gates],
        "limits": {"confidence_gate": cfg.confidence_gate, "max_risk_fraction": cfg.max_risk_fraction,
                   "max_size_usd": cfg.max_size_usd},
        "divergence": omega.to_dict() if omega is not None else {},
    }


def run_risk_manager(p: AnalystProposal, gates: tuple[GateResult, ...], backend: DeliberationBackend,
                     cfg: RiskConfig = RiskConfig(), *, invocation_id: str = "inv-000000",
                     asset: str = "", omega: DivergenceScore | None = None, agent_name: str = "Desk",
                     journal: Journal | None = None, clock: Callable[[], int] = _zero_clock) -> RiskVerdict:
    """Layer A (gates) then, only if every gate passed, Layer B (the model).

    Layer B may shrink the size but never widen it: the returned size is
    clamped to the cap and re-checked. Any backend failure rejects.
    """
    if not gates_pass(gates):
        failed = [g.name for g in gates if not g.passed]
        return RiskVerdict(False, 0.0, f"hard gate failure: {', '.join(failed)}", gates,
                           gate_layer_only=True, reason="gate_failure")
    tel = _Telemetry(journal, clock)
    call = CallContext("risk", invocation_id, 1, render_prompt("risk", agent_name),
                       risk_payload(p, gates, cfg, asset, omega))
    try:
        reply = tel.call(backend.risk, call, validate_risk)
    except BackendTimeout:
        return RiskVerdict(False, 0.0, "risk backend timed out; defaulting to no action", gates,
                           gate_layer_only=False, reason="backend_timeout")
    except BackendError as exc:
        return RiskVerdict(False, 0.0, f"risk backend failed: {exc}", gates,
                           gate_layer_only=False, reason="backend_error")
    except SchemaViolation as exc:
        _note_violation(journal, invocation_id, "risk", 1, clock, str(exc))
        return RiskVerdict(False, 0.0, f"malformed risk verdict: {exc}", gates,
                           gate_layer_only=False, reason="malformed_output")

    if not reply.approved:
        return RiskVerdict(False, 0.0, reply.negotiation_summary, gates, gate_layer_only=False,
                           reason="declined", requested_size_usd=reply.size_usd)
    size = min(reply.size_usd, cfg.max_size_usd)
    clamped = size != reply.size_usd
    size = quantize(size)
    if not (0 < size <= cfg.max_size_usd):
        return RiskVerdict(False, 0.0, reply.negotiation_summary, gates, gate_layer_only=False,
                           reason="zero_size", requested_size_usd=reply.size_usd)
    return RiskVerdict(True, size, reply.negotiation_summary, gates, gate_layer_only=False,
                       clamped=clamped, requested_size_usd=reply.size_usd)


# ---------------------------------------------------------------------------
# Executor
# ---------------------------------------------------------------------------


def final_order_checks(p: AnalystProposal, size_usd: float, cfg: RiskConfig) -> tuple[GateResult, ...]:
    """Gates re-evaluated on what will actually be sent (Risk Manager's size)."""
    sized = AnalystProposal(p.signal, p.confidence, p.entry_price, p.stop_loss, p.take_profit,
                            size_usd, p.reasoning)
    return hard_gates(sized, cfg)


def run_executor(verdict: RiskVerdict, p: AnalystProposal, mode: str, router: ExecutionRouter, *,
                 invocation_id: str, asset: str, now: int, cfg: RiskConfig = RiskConfig(),
                 journal: Journal | None = None, omega: DivergenceScore | None = None,
                 trigger: TriggerEvent | None = None) -> tuple[ExecutionRecord, TradeRecord]:
    """Record (DRY_RUN) or route (LIVE) an approved order and open its trade row.

    Raises SafetyGateClosed or RouterError; in those cases no trade row exists.
    """
    if not verdict.approved:
        raise ValueError("executor called without an approved verdict")
    if mode != router.cfg.mode:
        raise ValueError(f"executor mode {mode} does not match router mode {router.cfg.mode}")
    if not gates_pass(final_order_checks(p, verdict.size_usd, cfg)):
        raise ValueError("order violates hard limits at execution time")
    order = OrderRequest(asset=asset, side=p.signal, size_usd=verdict.size_usd,
                         entry=quantize(p.entry_price), sl=quantize(p.stop_loss), tp=quantize(p.take_profit),
                         client_id=invocation_id)
    record = router.route(order, now)
    trade = TradeRecord(
        id=invocation_id, invocation_id=invocation_id, asset=asset, mode=mode, opened_at=int(now),
        signal=p.signal, confidence=p.confidence, entry=order.entry, sl=order.sl, tp=order.tp,
        size_usd=verdict.size_usd, analyst_reasoning=p.reasoning,
        negotiation_summary=verdict.negotiation_summary,
        omega=omega.omega if omega else 0.0, rho_cb=omega.rho_cb if omega else 0.0,
        z_t=trigger.z_t if trigger else None,
    )
    if journal is not None:
        journal.insert_trade(trade)
    return record, trade


# ---------------------------------------------------------------------------
# memory
# ---------------------------------------------------------------------------

EXCERPT_CHARS = 2000


def build_memory_briefing(asset: str, store: Journal, k: int = 5) -> MemoryBriefing:
    """The ``k`` most recent closed trades on ``asset``, newest first."""
    try:
        trades = store.recent_closed_trades(asset, k)
    except StorageError as exc:
        logger.warning("memory briefing for %s degraded: %s", asset, exc)
        return MemoryBriefing(asset, (), k, degraded=True)
    entries = tuple(
        MemoryEntry(t.closed_at, t.signal, t.outcome_pnl_usd, t.analyst_reasoning[:EXCERPT_CHARS])
        for t in trades
    )
    return MemoryBriefing(asset, entries, k)


# ---------------------------------------------------------------------------
# position simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PositionResult:
    exit_price: float
    pnl_usd: float
    reason: str
    closed_at: int


def position_pnl(side: str, entry: float, exit_price: float, size_usd: float) -> float:
    sign = 1.0 if side == "long" else -1.0
    return quantize(sign * (exit_price / entry - 1.0) * size_usd)


def check_exit(side: str, sl: float, tp: float, tick: PriceTick) -> tuple[str, float] | None:
    """Exit triggered by one observation, SL winning when both levels are touched."""
    lo, hi = tick.range_low, tick.range_high
    if side == "long":
        hit_sl, hit_tp = lo <= sl, hi >= tp
    else:
        hit_sl, hit_tp = hi >= sl, lo <= tp
    if hit_sl:
        return "sl", sl
    if hit_tp:
        return "tp", tp
    return None


def simulate_position(p: AnalystProposal, ticks: Iterable[PriceTick], size_usd: float | None = None) -> PositionResult:
    """Walk the ticks until a level is touched; force-close at the last price otherwise."""
    size = p.size_usd if size_usd is None else size_usd
    last = None
    for tick in ticks:
        hit = check_exit(p.signal, p.stop_loss, p.take_profit, tick)
        if hit is not None:
            reason, level = hit
            return PositionResult(level, position_pnl(p.signal, p.entry_price, level, size), reason, tick.timestamp)
        last = tick
    if last is None:
        return PositionResult(p.entry_price, 0.0, "force_closed", 0)
    return PositionResult(last.price, position_pnl(p.signal, p.entry_price, last.price, size),
                          "force_closed", last.timestamp)


class PositionMonitor:
    """Tracks open DRY_RUN trades and closes them as ticks arrive."""

    def __init__(self, journal: Journal):
        self.journal = journal
        self.open: dict[str, TradeRecord] = {}
        self.last_price: dict[str, tuple[int, float]] = {}

    def add(self, trade: TradeRecord) -> None:
        self.open[trade.id] = trade

    def on_tick(self, tick: PriceTick) -> list[tuple[TradeRecord, PositionResult]]:
        self.last_price[tick.asset] = (tick.timestamp, tick.price)
        closed = []
        for tid, t in sorted(self.open.items()):
            if t.asset != tick.asset or tick.timestamp <= t.opened_at:
                continue
            hit = check_exit(t.signal, t.sl, t.tp, tick)
            if hit is None:
                continue
            reason, level = hit
            res = PositionResult(level, position_pnl(t.signal, t.entry, level, t.size_usd), reason, tick.timestamp)
            closed.append((t, res))
        for t, res in closed:
            self._close(t, res)
        return closed

    def close_all(self, now: int) -> list[tuple[TradeRecord, PositionResult]]:
        closed = []
        for tid, t in sorted(self.open.items()):
            ts, price = self.last_price.get(t.asset, (now, t.entry))
            res = PositionResult(price, position_pnl(t.signal, t.entry, price, t.size_usd), "force_closed",
                                 max(int(now), t.opened_at))
            closed.append((t, res))
        for t, res in closed:
            self._close(t, res)
        return closed

    def _close(self, t: TradeRecord, res: PositionResult) -> None:
        self.journal.close_trade(t.id, res.closed_at, res.exit_price, res.pnl_usd, res.reason)
        self.journal.log("position_closed", res.closed_at,
                         {"trade_id": t.id, "reason": res.reason, "exit_price": res.exit_price,
                          "pnl_usd": res.pnl_usd},
                         invocation_id=t.invocation_id, asset=t.asset)
        del self.open[t.id]


# ---------------------------------------------------------------------------
# one invocation end to end
# ---------------------------------------------------------------------------


class Deliberation:
    """Runs one admitted invocation through all three agents, journaling each stage."""

    def __init__(self, *, feed: FeedSource, backend: DeliberationBackend, router: ExecutionRouter,
                 journal: Journal, risk: RiskConfig = RiskConfig(), mode: str = "DRY_RUN",
                 clock: Callable[[], int] = _zero_clock, agent_name: str = "Desk",
                 memory_k: int = 5, n_candles: int = 20, monitor: PositionMonitor | None = None):
        self.feed = feed
        self.backend = backend
        self.router = router
        self.journal = journal
        self.risk = risk
        self.mode = mode
        self.clock = clock
        self.agent_name = agent_name
        self.memory_k = memory_k
        self.n_candles = n_candles
        self.monitor = monitor

    def _log(self, kind, inv, asset, payload):
        self.journal.log(kind, self.clock(), payload, invocation_id=inv, asset=asset)

    def run(self, trigger: TriggerEvent, score: DivergenceScore, invocation_id: str) -> PipelineOutcome:
        asset, inv = trigger.asset, invocation_id
        now = self.clock()
        try:
            ctx = build_market_context(asset, self.feed, now, self.n_candles)
        except TransportError as exc:
            self._log("context_unavailable", inv, asset, {"reason": "context_unavailable", "error": str(exc)})
            return PipelineOutcome(inv, asset, ABORTED, None, reason="context_unavailable")

        memory = build_memory_briefing(asset, self.journal, self.memory_k)
        proposal = run_analyst(ctx, score, memory, self.backend, invocation_id=inv, trigger=trigger,
                               agent_name=self.agent_name, journal=self.journal, clock=self.clock)
        self._log("analyst_proposal", inv, asset,
                  {"proposal": proposal.to_dict(), "context_partial": ctx.partial,
                   "partial_reasons": list(ctx.partial_reasons), "memory_items": len(memory.past_trades),
                   "memory_degraded": memory.degraded})
        if proposal.signal == "wait":
            reason = proposal.fallback or "self_abstain"
            self._log(ANALYST_WAIT, inv, asset, {"reason": reason})
            return PipelineOutcome(inv, asset, ANALYST_WAIT, proposal, reason=reason)

        gates = hard_gates(proposal, self.risk)
        verdict = run_risk_manager(proposal, gates, self.backend, self.risk, invocation_id=inv, asset=asset,
                                   omega=score, agent_name=self.agent_name, journal=self.journal,
                                   clock=self.clock)
        if not verdict.approved:
            kind = GATE_REJECT if verdict.gate_layer_only else CONTEXTUAL_REJECT
            self._log(kind, inv, asset, {"verdict": verdict.to_dict()})
            return PipelineOutcome(inv, asset, kind, proposal, verdict, reason=verdict.reason)
        self._log("risk_approved", inv, asset, {"verdict": verdict.to_dict()})

        try:
            record, trade = run_executor(verdict, proposal, self.mode, self.router, invocation_id=inv,
                                         asset=asset, now=self.clock(), cfg=self.risk, journal=self.journal,
                                         omega=score, trigger=trigger)
        except SafetyGateClosed as exc:
            self._log("execution_blocked", inv, asset, {"reason": "safety_gate_closed", "detail": str(exc)})
            return PipelineOutcome(inv, asset, ABORTED, proposal, verdict, reason="safety_gate_closed")
        except RouterError as exc:
            self._log("execution_failed", inv, asset, {"reason": "router_error", "detail": str(exc)})
            return PipelineOutcome(inv, asset, ABORTED, proposal, verdict, reason="router_error")

        self._log(EXECUTED, inv, asset, {"trade_id": trade.id, "channel": record.channel,
                                         "status": record.status, "size_usd": record.size_usd,
                                         "side": record.side, "entry": record.entry, "sl": record.sl,
                                         "tp": record.tp, "mode": record.mode})
        if self.monitor is not None:
            self.monitor.add(trade)
        return PipelineOutcome(inv, asset, EXECUTED, proposal, verdict, record, trade.id)
