"""Session metrics computed from the journal.

Everything here is read-only over a journal snapshot: friction (how often a
deliberation ends without a trade), trading performance, an exact binomial
edge test, a three-part transaction-cost model, cost sensitivity, a
funding-adjusted passive benchmark and an equity curve.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Iterable, Sequence

from . import _kernels
from .journal import Journal, TradeRecord

logger = logging.getLogger(__name__)

LARGE_CAPS = frozenset({"BTC", "ETH", "SOL", "AVAX", "DOGE", "ADA", "XRP", "DOT"})

REJECT_KINDS = ("gate_reject", "contextual_reject")
WAIT_KINDS = ("analyst_wait",)
EXECUTED_KINDS = ("executed",)
ABORT_KINDS = ("context_unavailable", "execution_blocked", "execution_failed")

CENT = Decimal("0.01")


# ---------------------------------------------------------------------------
# friction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrictionReport:
    n_total: int
    n_rejected: int
    n_wait: int
    friction: float
    wait_rate: float
    reject_rate: float
    n_gate_reject: int = 0
    n_contextual_reject: int = 0
    n_executed: int = 0
    n_aborted: int = 0

    @property
    def components(self) -> tuple[float, float]:
        return self.wait_rate, self.reject_rate


def friction_from_counts(n_total: int, n_rejected: int, n_wait: int, **extra) -> FrictionReport:
    if n_total < n_rejected + n_wait or min(n_total, n_rejected, n_wait) < 0:
        raise ValueError("need n_total >= n_rejected + n_wait >= 0")
    if n_total == 0:
        return FrictionReport(0, 0, 0, 0.0, 0.0, 0.0, **extra)
    return FrictionReport(
        n_total=n_total,
        n_rejected=n_rejected,
        n_wait=n_wait,
        friction=(n_rejected + n_wait) / n_total,
        wait_rate=n_wait / n_total,
        reject_rate=n_rejected / n_total,
        **extra,
    )


def friction(store: Journal) -> FrictionReport:
    """Counts come only from pipeline_log event kinds.

    N is the number of admitted invocations (``pipeline_start``); both
    rejection layers count as rejections but are also reported apart.
    """
    counts = store.count_kinds()
    gate = counts.get("gate_reject", 0)
    ctx = counts.get("contextual_reject", 0)
    return friction_from_counts(
        counts.get("pipeline_start", 0),
        gate + ctx,
        sum(counts.get(k, 0) for k in WAIT_KINDS),
        n_gate_reject=gate,
        n_contextual_reject=ctx,
        n_executed=sum(counts.get(k, 0) for k in EXECUTED_KINDS),
        n_aborted=sum(counts.get(k, 0) for k in ABORT_KINDS),
    )


# ---------------------------------------------------------------------------
# performance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PerfReport:
    trades: int
    wins: int
    win_rate: float
    gross_profit: float
    gross_loss: float
    net_pnl: float
    profit_factor: float | None
    max_drawdown: float
    mean_win: float | None
    mean_loss: float | None
    mean_sl_pct: float
    mean_tp_pct: float
    mean_rr: float | None
    breakeven_wr: float | None
    binom_p: float
    total_notional: float = 0.0
    unique_assets: int = 0

    @property
    def empty(self) -> bool:
        return self.trades == 0

    def to_dict(self) -> dict:
        return asdict(self)


EMPTY_PERF = PerfReport(0, 0, 0.0, 0.0, 0.0, 0.0, None, 0.0, None, None, 0.0, 0.0, None, None, 1.0)


def performance_from_trades(trades: Sequence[TradeRecord]) -> PerfReport:
    """Statistics over closed trades. A trade wins when its PnL is strictly positive."""
    closed = sorted((t for t in trades if t.is_closed), key=lambda t: (t.closed_at, t.opened_at, t.id))
    if not closed:
        return EMPTY_PERF
    pnls = [t.outcome_pnl_usd for t in closed]
    wins = [p for p in pnls if p > 0]
    losses = [p for p in pnls if p <= 0]
    gross_profit = math.fsum(wins)
    gross_loss = math.fsum(losses)
    sl_pct = [100.0 * abs(t.entry - t.sl) / t.entry for t in closed]
    tp_pct = [100.0 * abs(t.tp - t.entry) / t.entry for t in closed]
    mean_sl = math.fsum(sl_pct) / len(closed)
    mean_tp = math.fsum(tp_pct) / len(closed)
    rr = mean_tp / mean_sl if mean_sl > 0 else None
    _, dd = equity_series(pnls)
    n = len(closed)
    return PerfReport(
        trades=n,
        wins=len(wins),
        win_rate=len(wins) / n,
        gross_profit=gross_profit,
        gross_loss=gross_loss,
        net_pnl=math.fsum(pnls),
        profit_factor=gross_profit / abs(gross_loss) if gross_loss != 0 else None,
        max_drawdown=dd,
        mean_win=gross_profit / len(wins) if wins else None,
        mean_loss=gross_loss / len(losses) if losses else None,
        mean_sl_pct=mean_sl,
        mean_tp_pct=mean_tp,
        mean_rr=rr,
        breakeven_wr=breakeven_win_rate(rr) if rr is not None else None,
        binom_p=binomial_edge_test(len(wins), n),
        total_notional=math.fsum(t.size_usd for t in closed),
        unique_assets=len({t.asset for t in closed}),
    )


def performance(store: Journal) -> PerfReport:
    return performance_from_trades(store.trades(closed_only=True))


def breakeven_win_rate(rr: float) -> float:
    return 1.0 / (1.0 + rr)


def binomial_edge_test(wins: int, n: int, p0: float = 0.5) -> float:
    """Exact one-tailed P(X >= wins) for X ~ Binomial(n, p0)."""
    if n < 1 or not 0 <= wins <= n:
        raise ValueError("need 0 <= wins <= n and n >= 1")
    if not 0.0 <= p0 <= 1.0:
        raise ValueError("p0 must lie in [0, 1]")
    return _kernels.binom_tail(int(wins), int(n), float(p0), True)


def binomial_lower_tail(k: int, n: int, p0: float = 0.5) -> float:
    """Exact P(X <= k)."""
    if n < 1 or k > n:
        raise ValueError("need k <= n and n >= 1")
    if k < 0:
        return 0.0
    return _kernels.binom_tail(int(k), int(n), float(p0), False)


# ---------------------------------------------------------------------------
# equity curve
# ---------------------------------------------------------------------------


def equity_series(pnls: Iterable[float]) -> tuple[list[float], float]:
    """Cumulative PnL and the largest peak-to-trough fall, starting from 0."""
    curve, peak, dd, c = [], 0.0, 0.0, 0.0
    for p in pnls:
        c += p
        curve.append(c)
        peak = max(peak, c)
        dd = max(dd, peak - c)
    return curve, dd


@dataclass(frozen=True)
class EquityCurve:
    index: tuple[int, ...]
    cumulative: tuple[float, ...]
    max_drawdown: float
    trade_ids: tuple[str, ...] = ()

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trade_index", "trade_id", "cumulative_pnl_usd"])
        for i, tid, c in zip(self.index, self.trade_ids, self.cumulative):
            w.writerow([i, tid, f"{c:.8f}"])
        return buf.getvalue()


def equity_curve(store: Journal) -> EquityCurve:
    closed = store.trades(closed_only=True)  # ordered by close time
    curve, dd = equity_series(t.outcome_pnl_usd for t in closed)
    return EquityCurve(tuple(range(1, len(curve) + 1)), tuple(curve), dd, tuple(t.id for t in closed))


# ---------------------------------------------------------------------------
# asset classes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassStats:
    name: str
    trades: int
    win_rate: float | None
    avg_conf: float | None
    net_pnl: float
    assets: tuple[str, ...] = ()


def asset_class_breakdown(trades: Sequence[TradeRecord] | Journal,
                          large_caps: Iterable[str] = LARGE_CAPS,
                          midcap_min_trades: int = 3) -> list[ClassStats]:
    """Large caps by symbol; other assets by trade count (mid >= ``midcap_min_trades``)."""
    if isinstance(trades, Journal):
        trades = trades.trades(closed_only=True)
    closed = [t for t in trades if t.is_closed]
    large = set(large_caps)
    per_asset: dict[str, list[TradeRecord]] = {}
    for t in closed:
        per_asset.setdefault(t.asset, []).append(t)
    groups: dict[str, list[TradeRecord]] = {"large_cap": [], "mid_cap": [], "long_tail": []}
    members: dict[str, list[str]] = {k: [] for k in groups}
    for asset in sorted(per_asset):
        ts = per_asset[asset]
        if asset in large:
            key = "large_cap"
        elif len(ts) >= midcap_min_trades:
            key = "mid_cap"
        else:
            key = "long_tail"
        groups[key].extend(ts)
        members[key].append(asset)
    out = []
    for key, ts in groups.items():
        n = len(ts)
        out.append(ClassStats(
            name=key,
            trades=n,
            win_rate=sum(1 for t in ts if t.outcome_pnl_usd > 0) / n if n else None,
            avg_conf=math.fsum(t.confidence for t in ts) / n if n else None,
            net_pnl=math.fsum(t.outcome_pnl_usd for t in ts),
            assets=tuple(members[key]),
        ))
    return out


# ---------------------------------------------------------------------------
# transaction costs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TradeCostInputs:
    Q: float  # base-asset quantity
    P: float  # price
    f_taker: float
    bid: float
    ask: float
    sigma: float  # 1-minute realized volatility, as a fraction
    V: float  # average volume over the execution window
    lam: float = 0.8

    def __post_init__(self):
        for name in ("Q", "P", "f_taker", "bid", "ask", "sigma", "V", "lam"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.ask < self.bid:
            raise ValueError("ask below bid")


@dataclass(frozen=True)
class TradeCost:
    fee: float
    half_spread: float
    impact: float | None
    impact_undefined: bool = False

    @property
    def total(self) -> float:
        return self.fee + self.half_spread + (self.impact or 0.0)


def trade_cost(x: TradeCostInputs) -> TradeCost:
    """Fee + half spread + square-root market impact.

    With zero volume the impact term is undefined; it is left out and flagged
    rather than reported as infinite.
    """
    fee = x.Q * x.P * x.f_taker
    half_spread = 0.5 * x.Q * abs(x.ask - x.bid)
    if x.V <= 0:
        return TradeCost(fee, half_spread, None, impact_undefined=True)
    impact = x.lam * x.sigma * math.sqrt(x.Q / x.V) * x.P
    return TradeCost(fee, half_spread, impact)


@dataclass(frozen=True)
class CostScenario:
    name: str
    round_trip_rate: Decimal
    total_cost: Decimal
    adjusted_net_pnl: Decimal

    def to_dict(self) -> dict:
        return {"name": self.name, "round_trip_rate": float(self.round_trip_rate),
                "total_cost": float(self.total_cost), "adjusted_net_pnl": float(self.adjusted_net_pnl)}


DEFAULT_SCENARIOS: tuple[tuple[str, str], ...] = (
    ("zero cost", "0"),
    ("conservative (maker only)", "0.0004"),
    ("realistic (taker + spread)", "0.001"),
    ("adverse (illiquid long tail)", "0.002"),
)


def _dec(x) -> Decimal:
    return x if isinstance(x, Decimal) else Decimal(str(x))


def cost_sensitivity(net_pnl, total_notional, scenarios=DEFAULT_SCENARIOS) -> list[CostScenario]:
    """Cost = notional x round-trip rate, reported in whole cents.

    ``scenarios`` is a sequence of rates or of ``(name, rate)`` pairs.
    """
    notional = _dec(total_notional)
    if notional <= 0:
        raise ValueError("total_notional must be positive")
    net = _dec(net_pnl).quantize(CENT, ROUND_HALF_EVEN)
    out = []
    for item in scenarios:
        name, rate = item if isinstance(item, tuple) else (f"{float(item):.2%}", item)
        rate = _dec(rate)
        if rate < 0:
            raise ValueError("rates must be non-negative")
        cost = (notional * rate).quantize(CENT, ROUND_HALF_EVEN)
        out.append(CostScenario(name, rate, cost, net - cost))
    return out


def funding_adjusted_benchmark(price_pnl: float, funding: Iterable[tuple[float, float, float]]) -> float:
    """Price PnL plus funding cash flows ``rate * Q * dt`` for each period.

    Rates are signed from the holder's side: a long paying funding in
    contango passes a negative rate.
    """
    return price_pnl + math.fsum(rate * q * dt for rate, q, dt in funding)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class SessionReport:
    friction: FrictionReport
    performance: PerfReport
    classes: list[ClassStats]
    costs: list[CostScenario] = field(default_factory=list)

    def to_dict(self) -> dict:
        f = self.friction
        return {
            "friction": {**asdict(f), "components": {"wait_rate": f.wait_rate, "reject_rate": f.reject_rate}},
            "performance": self.performance.to_dict(),
            "asset_classes": [asdict(c) for c in self.classes],
            "cost_sensitivity": [c.to_dict() for c in self.costs],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def session_report(store: Journal) -> SessionReport:
    perf = performance(store)
    costs = []
    if not perf.empty and perf.total_notional > 0:
        costs = cost_sensitivity(round(perf.net_pnl, 2), round(perf.total_notional, 2))
    return SessionReport(friction(store), perf, asset_class_breakdown(store), costs)


def _pct(x: float | None) -> str:
    return "n/a" if x is None else f"{100.0 * x:.2f}%"


def _usd(x: float | None) -> str:
    return "n/a" if x is None else f"{x:+.2f}"


def render_report(r: SessionReport) -> str:
    f, p = r.friction, r.performance
    lines = [
        "Pipeline",
        f"  invocations         {f.n_total}",
        f"  executed            {f.n_executed}",
        f"  analyst wait        {f.n_wait}",
        f"  rejected            {f.n_rejected} (gate {f.n_gate_reject}, contextual {f.n_contextual_reject})",
        f"  aborted             {f.n_aborted}",
        f"  friction            {f.friction:.4f} ({_pct(f.friction)})",
        "",
    ]
    if p.empty:
        lines.append("Performance: no trades")
        return "\n".join(lines) + "\n"
    pf = "n/a" if p.profit_factor is None else f"{p.profit_factor:.3f}"
    rr = "n/a" if p.mean_rr is None else f"{p.mean_rr:.2f}:1"
    lines += [
        "Performance",
        f"  trades              {p.trades}",
        f"  win rate            {_pct(p.win_rate)} ({p.wins} wins)",
        f"  gross profit        {_usd(p.gross_profit)}",
        f"  gross loss          {_usd(p.gross_loss)}",
        f"  net pnl             {_usd(p.net_pnl)}",
        f"  profit factor       {pf}",
        f"  max drawdown        {p.max_drawdown:.2f}",
        f"  mean win            {_usd(p.mean_win)}",
        f"  mean loss           {_usd(p.mean_loss)}",
        f"  mean stop-loss      {p.mean_sl_pct:.3f}%",
        f"  mean take-profit    {p.mean_tp_pct:.3f}%",
        f"  mean risk/reward    {rr}",
        f"  break-even win rate {_pct(p.breakeven_wr)}",
        f"  binomial p          {p.binom_p:.4f}",
        f"  total notional      {p.total_notional:.2f}",
        "",
        "Asset classes",
        f"  {'class':<12}{'trades':>8}{'win rate':>10}{'avg conf':>10}{'net pnl':>10}",
    ]
    for c in r.classes:
        conf = "n/a" if c.avg_conf is None else f"{c.avg_conf:.3f}"
        lines.append(f"  {c.name:<12}{c.trades:>8}{_pct(c.win_rate):>10}{conf:>10}{_usd(c.net_pnl):>10}")
    if r.costs:
        lines += ["", render_costs(r.costs).rstrip("\n")]
    return "\n".join(lines) + "\n"


def render_costs(rows: Sequence[CostScenario]) -> str:
    lines = [f"  {'scenario':<30}{'round-trip':>11}{'total cost':>12}{'adj. net':>10}"]
    for c in rows:
        lines.append(f"  {c.name:<30}{float(c.round_trip_rate):>11.2%}{-c.total_cost:>12}{c.adjusted_net_pnl:>10}")
    return "Cost sensitivity\n" + "\n".join(lines) + "\n"
