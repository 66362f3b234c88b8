"""Typed JSON contracts exchanged between the agents.

Validation is strict: unknown keys, numeric strings, booleans posing as
numbers and non-finite values are all rejected with ``SchemaViolation``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from string import Template

from .errors import SchemaViolation

SIGNALS = ("long", "short", "wait")

ANALYST_KEYS = ("signal", "confidence", "entry_price", "stop_loss", "take_profit", "size_usd", "reasoning")
RISK_KEYS = ("approved", "size_usd", "negotiation_summary")


@dataclass(frozen=True)
class AnalystProposal:
    signal: str
    confidence: float
    entry_price: float | None
    stop_loss: float | None
    take_profit: float | None
    size_usd: float | None
    reasoning: str
    # set when the proposal is a fail-safe stand-in for unusable backend output
    fallback: str | None = None

    @property
    def directional(self) -> bool:
        return self.signal in ("long", "short")

    @property
    def stop_distance(self) -> float | None:
        if not self.entry_price or self.stop_loss is None:
            return None
        return abs(self.entry_price - self.stop_loss) / self.entry_price

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def abstain(cls, reason: str) -> "AnalystProposal":
        return cls("wait", 0.0, None, None, None, None, reason, fallback=reason)


@dataclass(frozen=True)
class GateResult:
    name: str
    passed: bool
    value: float | str | None
    limit: float | str

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RiskVerdict:
    approved: bool
    size_usd: float
    negotiation_summary: str
    gate_results: tuple[GateResult, ...]
    gate_layer_only: bool
    clamped: bool = False
    reason: str | None = None
    requested_size_usd: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gate_results"] = [g.to_dict() for g in self.gate_results]
        return d


@dataclass(frozen=True)
class MemoryEntry:
    timestamp: int
    signal: str
    pnl_usd: float
    reasoning: str


@dataclass(frozen=True)
class MemoryBriefing:
    asset: str
    past_trades: tuple[MemoryEntry, ...] = ()
    max_items: int = 5
    degraded: bool = False

    def to_dict(self) -> dict:
        return {
            "asset": self.asset,
            "degraded": self.degraded,
            "past_trades": [asdict(e) for e in self.past_trades],
        }


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _reject_constant(name: str):
    raise SchemaViolation(f"non-finite number {name} in JSON")


def parse_object(text: str) -> dict:
    """Decode backend text into a JSON object.

    A single surrounding Markdown code fence is tolerated; anything else
    around the object is not.
    """
    if not isinstance(text, str):
        raise SchemaViolation("backend output is not text")
    s = text.strip()
    if s.startswith("```") and s.endswith("```"):
        s = s[3:-3]
        if s.startswith("json"):
            s = s[4:]
        s = s.strip()
    try:
        obj = json.loads(s, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"invalid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise SchemaViolation("top-level JSON value must be an object")
    return obj


def _number(obj: dict, key: str) -> float:
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaViolation(f"{key} must be a JSON number, got {type(v).__name__}")
    v = float(v)
    if not math.isfinite(v):
        raise SchemaViolation(f"{key} is not finite")
    return v


def _check_keys(obj: dict, allowed: tuple[str, ...], required: tuple[str, ...]) -> None:
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise SchemaViolation(f"unknown fields {extra}")
    missing = [k for k in required if k not in obj]
    if missing:
        raise SchemaViolation(f"missing fields {missing}")


def validate_analyst(obj: dict) -> AnalystProposal:
    _check_keys(obj, ANALYST_KEYS, ("signal", "confidence", "reasoning"))
    signal = obj["signal"]
    if not isinstance(signal, str) or signal not in SIGNALS:
        raise SchemaViolation(f"signal must be one of {SIGNALS}, got {signal!r}")
    confidence = _number(obj, "confidence")
    if not 0.0 <= confidence <= 1.0:
        raise SchemaViolation(f"confidence {confidence} outside [0, 1]")
    reasoning = obj["reasoning"]
    if not isinstance(reasoning, str) or not reasoning.strip():
        raise SchemaViolation("reasoning must be a non-empty string")

    prices: dict[str, float | None] = {}
    for key in ("entry_price", "stop_loss", "take_profit", "size_usd"):
        if signal == "wait" and obj.get(key) is None:
            prices[key] = None
            continue
        if key not in obj:
            raise SchemaViolation(f"missing field {key} for a {signal} signal")
        v = _number(obj, key)
        if v <= 0:
            raise SchemaViolation(f"{key} must be positive")
        prices[key] = v

    if signal != "wait":
        entry, sl, tp = prices["entry_price"], prices["stop_loss"], prices["take_profit"]
        if signal == "long" and not (sl < entry < tp):
            raise SchemaViolation("long needs stop_loss < entry_price < take_profit")
        if signal == "short" and not (tp < entry < sl):
            raise SchemaViolation("short needs take_profit < entry_price < stop_loss")
    return AnalystProposal(signal, confidence, prices["entry_price"], prices["stop_loss"],
                           prices["take_profit"], prices["size_usd"], reasoning)


@dataclass(frozen=True)
class RiskReply:
    approved: bool
    size_usd: float
    negotiation_summary: str


def validate_risk(obj: dict) -> RiskReply:
    _check_keys(obj, RISK_KEYS, RISK_KEYS)
    approved = obj["approved"]
    if not isinstance(approved, bool):
        raise SchemaViolation("approved must be a JSON boolean")
    size = _number(obj, "size_usd")
    if size < 0:
        raise SchemaViolation("size_usd must be non-negative")
    summary = obj["negotiation_summary"]
    if not isinstance(summary, str):
        raise SchemaViolation("negotiation_summary must be a string")
    return RiskReply(approved, size, summary)


# ---------------------------------------------------------------------------
# prompts
# ---------------------------------------------------------------------------


def prompt_template(role: str) -> str:
    name = {"analyst": "analyst.txt", "risk": "risk_manager.txt"}[role]
    return resources.files("gatedtrader.prompts").joinpath(name).read_text(encoding="utf-8")


def render_prompt(role: str, agent_name: str) -> str:
    return Template(prompt_template(role)).substitute(agent_name=agent_name)


CORRECTION = (
    "Your previous reply was rejected: {error}. Reply again with a single JSON object "
    "containing exactly the required fields and nothing else."
)


@dataclass
class CallContext:
    """What a backend receives for one agent call."""

    role: str
    invocation_id: str
    attempt: int
    system_prompt: str
    payload: dict
    correction: str | None = None
    meta: dict = field(default_factory=dict)

    def user_message(self) -> str:
        body = json.dumps(self.payload, sort_keys=True, separators=(",", ":"))
        if self.correction:
            body += "\n\n" + self.correction
        return body
