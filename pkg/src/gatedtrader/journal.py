"""Durable session journal on SQLite in WAL mode.

Four tables hold everything a session produces:

* ``trades``           one row per executed decision, closed in place
* ``vol_history``      per-asset return magnitudes, keyed by (asset, timestamp)
* ``pipeline_log``     append-only audit trail with gap-free ``seq``
* ``inference_calls``  per-agent backend telemetry

Prices and USD amounts are stored as integers scaled by 1e8 so that values
round-trip exactly. Statistics (returns, z, omega, confidence) are IEEE
doubles, which SQLite REAL also round-trips exactly.

Every write commits before returning (``synchronous=FULL``), so a process
killed between calls never loses an acknowledged row.
"""

from __future__ import annotations

import json
import logging
import math
import sqlite3
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from .errors import StorageError

logger = logging.getLogger(__name__)

SCALE = 100_000_000


def to_units(x: float) -> int:
    return int(round(float(x) * SCALE))


def from_units(n: int) -> float:
    return n / SCALE


def quantize(x: float) -> float:
    """Snap a decimal onto the 1e-8 storage grid (idempotent)."""
    return from_units(to_units(x))


def format_units(n: int) -> str:
    sign = "-" if n < 0 else ""
    q, r = divmod(abs(n), SCALE)
    return f"{sign}{q}.{r:08d}"


def parse_units(s: str) -> int:
    sign = -1 if s.startswith("-") else 1
    whole, _, frac = s.lstrip("+-").partition(".")
    return sign * (int(whole) * SCALE + int(frac.ljust(8, "0")[:8]))


@dataclass
class TradeRecord:
    id: str
    invocation_id: str
    asset: str
    mode: str
    opened_at: int
    signal: str
    confidence: float
    entry: float
    sl: float
    tp: float
    size_usd: float
    analyst_reasoning: str
    negotiation_summary: str
    omega: float
    rho_cb: float
    z_t: float | None
    closed_at: int | None = None
    exit_price: float | None = None
    outcome_pnl_usd: float | None = None
    close_reason: str | None = None

    @property
    def is_closed(self) -> bool:
        return self.closed_at is not None


@dataclass(frozen=True)
class VolHistoryRow:
    asset: str
    timestamp: int
    r_t: float | None
    price: float


@dataclass(frozen=True)
class PipelineLogRow:
    seq: int
    timestamp: int
    invocation_id: str | None
    asset: str | None
    kind: str
    payload: str

    def data(self) -> dict:
        return json.loads(self.payload)


@dataclass(frozen=True)
class InferenceCallRow:
    invocation_id: str
    role: str
    attempt: int
    started_at: int
    ended_at: int
    outcome: str
    prompt_chars: int
    response_chars: int


# column name -> storage kind ("units" = scaled int, "real", "int", "text")
_SCHEMA: dict[str, dict[str, str]] = {
    "trades": {
        "id": "text", "invocation_id": "text", "asset": "text", "mode": "text",
        "opened_at": "int", "closed_at": "int", "signal": "text", "confidence": "real",
        "entry": "units", "sl": "units", "tp": "units", "size_usd": "units",
        "exit_price": "units", "outcome_pnl_usd": "units", "close_reason": "text",
        "analyst_reasoning": "text", "negotiation_summary": "text",
        "omega": "real", "rho_cb": "real", "z_t": "real",
    },
    "vol_history": {"asset": "text", "timestamp": "int", "r_t": "real", "price": "units"},
    "pipeline_log": {
        "seq": "int", "timestamp": "int", "invocation_id": "text", "asset": "text",
        "kind": "text", "payload": "text",
    },
    "inference_calls": {
        "id": "int", "invocation_id": "text", "role": "text", "attempt": "int",
        "started_at": "int", "ended_at": "int", "outcome": "text",
        "prompt_chars": "int", "response_chars": "int",
    },
}

_ORDER_BY = {
    "trades": "opened_at, id",
    "vol_history": "asset, timestamp",
    "pipeline_log": "seq",
    "inference_calls": "id",
}

_MIGRATIONS = [
    """
    CREATE TABLE trades (
        id TEXT PRIMARY KEY,
        invocation_id TEXT NOT NULL,
        asset TEXT NOT NULL,
        mode TEXT NOT NULL,
        opened_at INTEGER NOT NULL,
        closed_at INTEGER,
        signal TEXT NOT NULL,
        confidence REAL NOT NULL,
        entry INTEGER NOT NULL,
        sl INTEGER NOT NULL,
        tp INTEGER NOT NULL,
        size_usd INTEGER NOT NULL,
        exit_price INTEGER,
        outcome_pnl_usd INTEGER,
        close_reason TEXT,
        analyst_reasoning TEXT NOT NULL,
        negotiation_summary TEXT NOT NULL,
        omega REAL NOT NULL,
        rho_cb REAL NOT NULL,
        z_t REAL
    );
    CREATE INDEX trades_asset_closed ON trades (asset, closed_at);
    CREATE TABLE vol_history (
        asset TEXT NOT NULL,
        timestamp INTEGER NOT NULL,
        r_t REAL,
        price INTEGER NOT NULL,
        PRIMARY KEY (asset, timestamp)
    );
    CREATE TABLE pipeline_log (
        seq INTEGER PRIMARY KEY,
        timestamp INTEGER NOT NULL,
        invocation_id TEXT,
        asset TEXT,
        kind TEXT NOT NULL,
        payload TEXT NOT NULL
    );
    CREATE INDEX pipeline_log_kind ON pipeline_log (kind);
    CREATE TABLE inference_calls (
        id INTEGER PRIMARY KEY,
        invocation_id TEXT NOT NULL,
        role TEXT NOT NULL,
        attempt INTEGER NOT NULL,
        started_at INTEGER NOT NULL,
        ended_at INTEGER NOT NULL,
        outcome TEXT NOT NULL,
        prompt_chars INTEGER NOT NULL,
        response_chars INTEGER NOT NULL
    );
    """,
]


def dumps_payload(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)


class Journal:
    """Single-writer, multi-reader session store.

    All methods are safe to call from several threads; writes are serialized
    on an internal lock and each one is its own committed transaction.
    """

    def __init__(self, path: str | Path = ":memory:"):
        self.path = str(path)
        self._lock = threading.RLock()
        self._closed = False
        try:
            self._conn = sqlite3.connect(self.path, check_same_thread=False, isolation_level=None)
            self._conn.execute("PRAGMA journal_mode=WAL")
            self._conn.execute("PRAGMA synchronous=FULL")
            self._migrate()
            row = self._conn.execute("SELECT COALESCE(MAX(seq), 0) FROM pipeline_log").fetchone()
        except sqlite3.Error as exc:
            raise StorageError(f"cannot open journal {self.path}: {exc}") from exc
        self._next_seq = row[0] + 1

    # -- lifecycle --------------------------------------------------------

    def _migrate(self) -> None:
        c = self._conn
        c.execute("CREATE TABLE IF NOT EXISTS schema_migrations (version INTEGER PRIMARY KEY)")
        (current,) = c.execute("SELECT COALESCE(MAX(version), 0) FROM schema_migrations").fetchone()
        for version, script in enumerate(_MIGRATIONS, start=1):
            if version <= current:
                continue
            c.execute("BEGIN")
            try:
                for stmt in script.split(";"):
                    if stmt.strip():
                        c.execute(stmt)
                c.execute("INSERT INTO schema_migrations (version) VALUES (?)", (version,))
                c.execute("COMMIT")
            except sqlite3.Error:
                c.execute("ROLLBACK")
                raise

    @property
    def schema_version(self) -> int:
        return self._read("SELECT MAX(version) FROM schema_migrations")[0][0]

    def close(self) -> None:
        with self._lock:
            if not self._closed:
                self._conn.close()
                self._closed = True

    def __enter__(self) -> "Journal":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- low level --------------------------------------------------------

    def _write(self, sql: str, params: Iterable[Any]) -> sqlite3.Cursor:
        with self._lock:
            if self._closed:
                raise StorageError("journal is closed")
            try:
                self._conn.execute("BEGIN IMMEDIATE")
                cur = self._conn.execute(sql, tuple(params))
                self._conn.execute("COMMIT")
                return cur
            except sqlite3.Error as exc:
                if self._conn.in_transaction:
                    self._conn.execute("ROLLBACK")
                raise StorageError(str(exc)) from exc

    def _read(self, sql: str, params: Iterable[Any] = ()) -> list[tuple]:
        with self._lock:
            if self._closed:
                raise StorageError("journal is closed")
            try:
                return self._conn.execute(sql, tuple(params)).fetchall()
            except sqlite3.Error as exc:
                raise StorageError(str(exc)) from exc

    # -- appends ----------------------------------------------------------

    def append(self, row) -> int | None:
        """Persist any journal row type. Returns ``seq`` for log rows."""
        if isinstance(row, PipelineLogRow):
            return self.log(row.kind, row.timestamp, payload=json.loads(row.payload),
                            invocation_id=row.invocation_id, asset=row.asset)
        if isinstance(row, VolHistoryRow):
            self.upsert_vol(row)
        elif isinstance(row, TradeRecord):
            self.insert_trade(row)
        elif isinstance(row, InferenceCallRow):
            self.record_inference(row)
        else:
            raise TypeError(f"not a journal row: {type(row).__name__}")
        return None

    def log(self, kind: str, timestamp: int, payload: dict | None = None, *,
            invocation_id: str | None = None, asset: str | None = None) -> int:
        body = dumps_payload(payload or {})
        with self._lock:
            seq = self._next_seq
            self._write(
                "INSERT INTO pipeline_log (seq, timestamp, invocation_id, asset, kind, payload)"
                " VALUES (?, ?, ?, ?, ?, ?)",
                (seq, int(timestamp), invocation_id, asset, kind, body),
            )
            self._next_seq = seq + 1
        return seq

    def upsert_vol(self, row: VolHistoryRow) -> None:
        self._write(
            "INSERT INTO vol_history (asset, timestamp, r_t, price) VALUES (?, ?, ?, ?)"
            " ON CONFLICT (asset, timestamp) DO UPDATE SET r_t = excluded.r_t, price = excluded.price",
            (row.asset, int(row.timestamp), row.r_t, to_units(row.price)),
        )

    def upsert_vol_many(self, rows: list[VolHistoryRow]) -> None:
        """Write one polling cycle's rows in a single transaction."""
        if not rows:
            return
        with self._lock:
            if self._closed:
                raise StorageError("journal is closed")
            try:
                self._conn.execute("BEGIN IMMEDIATE")
                self._conn.executemany(
                    "INSERT INTO vol_history (asset, timestamp, r_t, price) VALUES (?, ?, ?, ?)"
                    " ON CONFLICT (asset, timestamp) DO UPDATE SET r_t = excluded.r_t, price = excluded.price",
                    [(r.asset, int(r.timestamp), r.r_t, to_units(r.price)) for r in rows],
                )
                self._conn.execute("COMMIT")
            except sqlite3.Error as exc:
                if self._conn.in_transaction:
                    self._conn.execute("ROLLBACK")
                raise StorageError(str(exc)) from exc

    def insert_trade(self, t: TradeRecord) -> None:
        cols = list(_SCHEMA["trades"])
        values = [_encode(_SCHEMA["trades"][c], getattr(t, c)) for c in cols]
        self._write(
            f"INSERT INTO trades ({', '.join(cols)}) VALUES ({', '.join('?' * len(cols))})",
            values,
        )

    def close_trade(self, trade_id: str, closed_at: int, exit_price: float,
                    pnl_usd: float, reason: str) -> None:
        cur = self._write(
            "UPDATE trades SET closed_at = ?, exit_price = ?, outcome_pnl_usd = ?, close_reason = ?"
            " WHERE id = ? AND closed_at IS NULL",
            (int(closed_at), to_units(exit_price), to_units(pnl_usd), reason, trade_id),
        )
        if cur.rowcount != 1:
            raise StorageError(f"trade {trade_id} is not open")

    def record_inference(self, row: InferenceCallRow) -> None:
        self._write(
            "INSERT INTO inference_calls (invocation_id, role, attempt, started_at, ended_at,"
            " outcome, prompt_chars, response_chars) VALUES (?, ?, ?, ?, ?, ?, ?, ?)",
            (row.invocation_id, row.role, row.attempt, int(row.started_at), int(row.ended_at),
             row.outcome, row.prompt_chars, row.response_chars),
        )

    # -- queries ----------------------------------------------------------

    def vol_history(self, asset: str, limit: int | None = None) -> list[VolHistoryRow]:
        """Rows for ``asset`` in timestamp order (the most recent ``limit`` if given)."""
        sql = "SELECT asset, timestamp, r_t, price FROM vol_history WHERE asset = ? ORDER BY timestamp DESC"
        params: list[Any] = [asset]
        if limit is not None:
            sql += " LIMIT ?"
            params.append(limit)
        rows = self._read(sql, params)
        rows.reverse()
        return [VolHistoryRow(a, ts, r, _decode_units(p)) for a, ts, r, p in rows]

    def vol_assets(self) -> list[str]:
        return [r[0] for r in self._read("SELECT DISTINCT asset FROM vol_history ORDER BY asset")]

    def vol_count(self) -> int:
        return self._read("SELECT COUNT(*) FROM vol_history")[0][0]

    def vol_sample_count(self, asset: str) -> int:
        """Rows for ``asset`` that carry a return (the first observation does not)."""
        return self._read(
            "SELECT COUNT(*) FROM vol_history WHERE asset = ? AND r_t IS NOT NULL", (asset,)
        )[0][0]

    def trades(self, closed_only: bool = False) -> list[TradeRecord]:
        sql = f"SELECT {', '.join(_SCHEMA['trades'])} FROM trades"
        if closed_only:
            sql += " WHERE closed_at IS NOT NULL ORDER BY closed_at, opened_at, id"
        else:
            sql += " ORDER BY opened_at, id"
        return [self._trade(r) for r in self._read(sql)]

    def open_trades(self) -> list[TradeRecord]:
        sql = f"SELECT {', '.join(_SCHEMA['trades'])} FROM trades WHERE closed_at IS NULL ORDER BY opened_at, id"
        return [self._trade(r) for r in self._read(sql)]

    def recent_closed_trades(self, asset: str, k: int) -> list[TradeRecord]:
        sql = (f"SELECT {', '.join(_SCHEMA['trades'])} FROM trades"
               " WHERE asset = ? AND closed_at IS NOT NULL"
               " ORDER BY closed_at DESC, opened_at DESC, id DESC LIMIT ?")
        return [self._trade(r) for r in self._read(sql, (asset, k))]

    def _trade(self, row: tuple) -> TradeRecord:
        kinds = _SCHEMA["trades"]
        values = {c: _decode(kinds[c], v) for c, v in zip(kinds, row)}
        return TradeRecord(**values)

    def log_rows(self, kinds: Iterable[str] | None = None,
                 invocation_id: str | None = None) -> list[PipelineLogRow]:
        sql = "SELECT seq, timestamp, invocation_id, asset, kind, payload FROM pipeline_log"
        where, params = [], []
        if kinds is not None:
            kinds = list(kinds)
            where.append(f"kind IN ({', '.join('?' * len(kinds))})")
            params.extend(kinds)
        if invocation_id is not None:
            where.append("invocation_id = ?")
            params.append(invocation_id)
        if where:
            sql += " WHERE " + " AND ".join(where)
        sql += " ORDER BY seq"
        return [PipelineLogRow(*r) for r in self._read(sql, params)]

    def count_kinds(self) -> dict[str, int]:
        return dict(self._read("SELECT kind, COUNT(*) FROM pipeline_log GROUP BY kind ORDER BY kind"))

    def inference_calls(self) -> list[InferenceCallRow]:
        rows = self._read(
            "SELECT invocation_id, role, attempt, started_at, ended_at, outcome, prompt_chars,"
            " response_chars FROM inference_calls ORDER BY id"
        )
        return [InferenceCallRow(*r) for r in rows]

    def invocation_count(self) -> int:
        return self._read("SELECT COUNT(*) FROM pipeline_log WHERE kind = 'pipeline_start'")[0][0]

    # -- canonical dump ---------------------------------------------------

    def export_session(self) -> str:
        """Canonical newline-delimited JSON of all four tables.

        Each line is one row with sorted keys plus a ``table`` key. Tables
        appear in the order trades, vol_history, pipeline_log, inference_calls;
        rows within a table follow their primary ordering. Scaled decimals are
        rendered as fixed 8-place strings, doubles in shortest round-trip form.
        """
        lines = []
        for table, kinds in _SCHEMA.items():
            cols = list(kinds)
            for row in self._read(f"SELECT {', '.join(cols)} FROM {table} ORDER BY {_ORDER_BY[table]}"):
                rec = {"table": table}
                for c, v in zip(cols, row):
                    rec[c] = _dump_value(kinds[c], v)
                lines.append(json.dumps(rec, sort_keys=True, separators=(",", ":"), allow_nan=False))
        return "".join(line + "\n" for line in lines)

    def load_dump(self, text: str) -> None:
        """Insert rows from an ``export_session`` dump into this (empty) store."""
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            table = rec.pop("table")
            kinds = _SCHEMA[table]
            cols = list(kinds)
            values = [_load_value(kinds[c], rec.get(c)) for c in cols]
            self._write(
                f"INSERT INTO {table} ({', '.join(cols)}) VALUES ({', '.join('?' * len(cols))})",
                values,
            )
        row = self._read("SELECT COALESCE(MAX(seq), 0) FROM pipeline_log")
        self._next_seq = row[0][0] + 1


def _encode(kind: str, value):
    if value is None:
        return None
    if kind == "units":
        return to_units(value)
    if kind == "real":
        return float(value)
    return value


def _decode(kind: str, value):
    if value is None:
        return None
    if kind == "units":
        return _decode_units(value)
    return value


def _decode_units(value) -> float:
    if not isinstance(value, int):
        raise StorageError(f"expected scaled integer, got {value!r}")
    return from_units(value)


def _dump_value(kind: str, value):
    if value is None:
        return None
    if kind == "units":
        return format_units(value)
    if kind == "real":
        v = float(value)
        if not math.isfinite(v):
            raise StorageError("non-finite value in journal")
        return v
    return value


def _load_value(kind: str, value):
    if value is None:
        return None
    if kind == "units":
        return parse_units(value)
    return value


__all__ = [
    "Journal", "TradeRecord", "VolHistoryRow", "PipelineLogRow", "InferenceCallRow",
    "to_units", "from_units", "quantize", "format_units", "parse_units", "dumps_payload",
]
