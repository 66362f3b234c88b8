import os
from pathlib import Path

import pytest

from gatedtrader.config import SessionConfig
from gatedtrader.journal import Journal, TradeRecord

ROOT = Path(__file__).resolve().parents[1]
FIXTURE = ROOT / "src" / "gatedtrader" / "data" / "fixture_2asset.csv"


@pytest.fixture
def journal():
    j = Journal(":memory:")
    yield j
    j.close()


@pytest.fixture
def db_path(tmp_path):
    return str(tmp_path / "session.db")


@pytest.fixture
def fixture_csv():
    return FIXTURE


def make_trade(i, asset="BTC", pnl=1.0, signal="long", entry=100.0, sl=99.0, tp=103.0,
               size=100.0, confidence=0.7, opened=None, closed=None, reasoning=None):
    opened = 1000 + 60 * i if opened is None else opened
    return TradeRecord(
        id=f"t{i:05d}", invocation_id=f"inv-{i:06d}", asset=asset, mode="DRY_RUN", opened_at=opened,
        signal=signal, confidence=confidence, entry=entry, sl=sl, tp=tp, size_usd=size,
        analyst_reasoning=reasoning or f"reasoning {i}", negotiation_summary="ok",
        omega=0.5, rho_cb=0.2, z_t=2.5,
        closed_at=(opened + 30 if closed is None else closed) if pnl is not None else None,
        exit_price=entry if pnl is not None else None,
        outcome_pnl_usd=pnl, close_reason="tp" if (pnl or 0) > 0 else ("sl" if pnl is not None else None),
    )


def write_csv(path, rows, extra_cols=()):
    cols = ["timestamp", "asset", "price", "volume", *extra_cols]
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(str(r.get(c, "")) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n")
    return path


def spike_rows(assets=("BTC",), n=40, spike_at=30, spike=0.01, base=100.0, start=60):
    """Quiet alternating returns (two magnitudes), one engineered spike."""
    rows = []
    prices = {a: base * (i + 1) for i, a in enumerate(assets)}
    for k in range(n):
        for a in assets:
            if k > 0:
                r = 0.0005 if k % 2 else 0.001
                sign = 1 if (k // 2) % 2 else -1
                if k == spike_at:
                    r, sign = spike, 1
                prices[a] *= 1 + sign * r
            rows.append({"timestamp": start + 60 * k, "asset": a, "price": f"{prices[a]:.8f}", "volume": 1})
    return rows


def quiet_config(**kw) -> SessionConfig:
    base = dict(journal_path=":memory:")
    base.update(kw)
    return SessionConfig(**base)


@pytest.fixture(autouse=True)
def _no_env_overrides(monkeypatch):
    for var in list(os.environ):
        if var.startswith("GATEDTRADER_") and var != "GATEDTRADER_DISABLE_NUMBA":
            monkeypatch.delenv(var, raising=False)
