"""Dual-channel networking and the LIVE-mode safety gate.

Market data goes over the public channel; authenticated orders and their
health probes go over the private (proxied) channel. Each channel refuses
request kinds that belong to the other one and counts every call it
forwards, so separation can be asserted from the counters alone.
"""

from __future__ import annotations

import json
import logging
import socket
import threading
from dataclasses import asdict, dataclass, field
from typing import Callable
from urllib.parse import urlparse

from .errors import ChannelViolation, RouterError, SafetyGateClosed, TransportError

logger = logging.getLogger(__name__)

MARKET_KINDS = frozenset({"price", "candles", "orderbook", "funding"})
PRIVATE_KINDS = frozenset({"order", "probe"})

Transport = Callable[[dict], dict]


class Channel:
    """A counted path to the outside world."""

    def __init__(self, name: str, transport: Transport, allowed: frozenset[str]):
        self.name = name
        self.transport = transport
        self.allowed = allowed
        self.calls = 0
        self.calls_by_kind: dict[str, int] = {}
        self._lock = threading.Lock()

    def send(self, request: dict) -> dict:
        kind = request.get("kind")
        if kind not in self.allowed:
            raise ChannelViolation(f"{kind!r} request refused on {self.name} channel")
        with self._lock:
            self.calls += 1
            self.calls_by_kind[kind] = self.calls_by_kind.get(kind, 0) + 1
        return self.transport(request)


def public_channel(transport: Transport) -> Channel:
    return Channel("public", transport, MARKET_KINDS)


def private_channel(transport: Transport) -> Channel:
    return Channel("private", transport, PRIVATE_KINDS)


class StubTransport:
    """Private-side transport that accepts orders without leaving the process."""

    def __init__(self, reachable: bool = True):
        self.reachable = reachable
        self.orders: list[dict] = []

    def __call__(self, request: dict) -> dict:
        if request["kind"] == "probe":
            if not self.reachable:
                raise TransportError("exchange unreachable")
            return {"ok": True}
        if not self.reachable:
            raise TransportError("exchange unreachable")
        self.orders.append(request["body"])
        return {"status": "accepted", "order_id": f"stub-{len(self.orders):06d}"}


class HttpTransport:
    """JSON-over-HTTP transport, optionally through a SOCKS5/HTTP proxy.

    ``routes`` maps a request kind to ``(method, url_template)``; templates
    are formatted with the request's ``params``.
    """

    def __init__(self, routes: dict[str, tuple[str, str]], proxy: str | None = None,
                 timeout: float = 10.0, client=None):
        import httpx

        self.routes = routes
        self._httpx = httpx
        self._client = client or httpx.Client(proxy=proxy or None, timeout=timeout)

    def __call__(self, request: dict) -> dict:
        kind = request["kind"]
        if kind not in self.routes:
            raise TransportError(f"no route for {kind!r}")
        method, template = self.routes[kind]
        url = template.format(**request.get("params", {}))
        try:
            resp = self._client.request(method, url, json=request.get("body"))
            resp.raise_for_status()
            return resp.json() if resp.content else {}
        except (self._httpx.HTTPError, ValueError) as exc:
            raise TransportError(f"{method} {url}: {exc}") from exc


@dataclass(frozen=True)
class ChannelConfig:
    public_endpoint: str = ""
    private_endpoint: str = ""
    private_proxy: str | None = None
    mode: str = "DRY_RUN"
    safety_ttl_s: int = 10

    def __post_init__(self):
        if self.mode not in ("DRY_RUN", "LIVE"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "LIVE" and not self.private_endpoint:
            raise ValueError("LIVE mode requires a private channel endpoint")


@dataclass(frozen=True)
class SafetyStatus:
    tor_active: bool
    exchange_reachable: bool
    checked_at: int

    @property
    def safe(self) -> bool:
        return self.tor_active and self.exchange_reachable


@dataclass
class ProbeSet:
    """The two liveness checks behind the safety gate.

    Each probe returns truthy on success; a falsy return, an exception or a
    timeout all count as failure.
    """

    tor_active: Callable[[], bool]
    exchange_reachable: Callable[[], bool]


def proxy_probe(proxy: str, timeout: float = 5.0) -> Callable[[], bool]:
    """TCP connect to the proxy's host:port."""
    parsed = urlparse(proxy if "://" in proxy else f"socks5h://{proxy}")

    def probe() -> bool:
        if not parsed.hostname or not parsed.port:
            return False
        with socket.create_connection((parsed.hostname, parsed.port), timeout=timeout):
            return True

    return probe


def channel_probe(channel: Channel) -> Callable[[], bool]:
    """Exchange reachability, checked through the given (private) channel."""

    def probe() -> bool:
        channel.send({"kind": "probe"})
        return True

    return probe


def _run_probe(fn: Callable[[], bool], name: str) -> bool:
    try:
        return bool(fn())
    except Exception as exc:  # fail closed on anything, timeouts included
        logger.warning("safety probe %s failed: %s", name, exc)
        return False


def check_safety(probes: ProbeSet, now: int) -> SafetyStatus:
    """Run both probes; the gate is open only if both succeed."""
    return SafetyStatus(
        tor_active=_run_probe(probes.tor_active, "tor_active"),
        exchange_reachable=_run_probe(probes.exchange_reachable, "exchange_reachable"),
        checked_at=int(now),
    )


@dataclass(frozen=True)
class OrderRequest:
    asset: str
    side: str
    size_usd: float
    entry: float
    sl: float
    tp: float
    client_id: str

    def to_wire(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_wire(), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class ExecutionRecord:
    client_id: str
    asset: str
    side: str
    size_usd: float
    entry: float
    sl: float
    tp: float
    mode: str
    channel: str
    status: str
    venue_response: dict = field(default_factory=dict)


def route_order(order: OrderRequest, cfg: ChannelConfig, status: SafetyStatus | None,
                private: Channel | None = None) -> ExecutionRecord:
    """Send (or simulate) an approved order.

    DRY_RUN never touches the network. LIVE requires an open safety gate and
    then sends exactly one request on the private channel.
    """
    base = dict(client_id=order.client_id, asset=order.asset, side=order.side,
                size_usd=order.size_usd, entry=order.entry, sl=order.sl, tp=order.tp, mode=cfg.mode)
    if cfg.mode == "DRY_RUN":
        return ExecutionRecord(channel="none", status="simulated", **base)
    if status is None or not status.safe:
        raise SafetyGateClosed(
            "safety gate closed"
            if status is None
            else f"tor_active={status.tor_active} exchange_reachable={status.exchange_reachable}"
        )
    if private is None:
        raise RouterError("LIVE order without a private channel")
    try:
        resp = private.send({"kind": "order", "body": order.to_wire()})
    except TransportError as exc:
        raise RouterError(str(exc)) from exc
    return ExecutionRecord(channel="private", status="sent", venue_response=resp, **base)


class ExecutionRouter:
    """Holds both channels, the probes and the cached safety status."""

    def __init__(self, cfg: ChannelConfig, public: Channel, private: Channel | None = None,
                 probes: ProbeSet | None = None, on_check: Callable[[SafetyStatus], None] | None = None):
        if cfg.mode == "LIVE" and (private is None or probes is None):
            raise ValueError("LIVE mode requires a private channel and probes")
        self.cfg = cfg
        self.public = public
        self.private = private
        self.probes = probes
        self.on_check = on_check
        self._status: SafetyStatus | None = None
        self._lock = threading.Lock()

    def safety_status(self, now: int) -> SafetyStatus:
        """Cached status if younger than the TTL, otherwise a fresh check."""
        with self._lock:
            cached = self._status
        if cached is not None and now - cached.checked_at < self.cfg.safety_ttl_s:
            return cached
        status = check_safety(self.probes, now)
        with self._lock:
            self._status = status
        if self.on_check is not None:
            self.on_check(status)
        return status

    def route(self, order: OrderRequest, now: int) -> ExecutionRecord:
        if self.cfg.mode == "DRY_RUN":
            return route_order(order, self.cfg, None)
        return route_order(order, self.cfg, self.safety_status(now), self.private)
