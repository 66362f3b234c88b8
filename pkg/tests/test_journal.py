import json
import os
import signal
import subprocess
import sys
import textwrap
import time

import pytest

from gatedtrader.errors import StorageError
from gatedtrader.journal import (
    InferenceCallRow,
    Journal,
    PipelineLogRow,
    VolHistoryRow,
    format_units,
    from_units,
    parse_units,
    quantize,
    to_units,
)

from .conftest import make_trade


def test_units_roundtrip():
    for x in [0.0, 1e-8, 67012.12345678, -15.07, 26079.0, 0.1 + 0.2]:
        assert parse_units(format_units(to_units(x))) == to_units(x)
        assert quantize(from_units(to_units(x))) == quantize(x)
    assert format_units(-1507000000) == "-15.07000000"


def test_wal_mode_and_schema_version(db_path):
    with Journal(db_path) as j:
        assert j.schema_version >= 1
        mode = j._read("PRAGMA journal_mode")[0][0]
        assert mode.lower() == "wal"


def test_rows_roundtrip(journal):
    t = make_trade(1, pnl=None)
    journal.insert_trade(t)
    assert journal.open_trades() == [t]
    journal.close_trade(t.id, t.opened_at + 60, 103.0, 3.0, "tp")
    with pytest.raises(StorageError):
        journal.close_trade(t.id, t.opened_at + 90, 103.0, 3.0, "tp")
    closed = journal.trades(closed_only=True)[0]
    assert closed.outcome_pnl_usd == 3.0 and closed.closed_at >= closed.opened_at
    seq = journal.append(PipelineLogRow(0, 5, "inv-1", "BTC", "pipeline_start", '{"x": 1}'))
    assert journal.log_rows()[0].seq == seq == 1
    journal.append(InferenceCallRow("inv-1", "analyst", 1, 5, 6, "ok", 10, 20))
    assert journal.inference_calls()[0].response_chars == 20
    with pytest.raises(TypeError):
        journal.append(object())


def test_vol_upsert_is_idempotent(journal):
    journal.upsert_vol(VolHistoryRow("BTC", 60, 0.001, 100.0))
    journal.upsert_vol(VolHistoryRow("BTC", 60, 0.001, 100.0))
    assert journal.vol_count() == 1


def test_closed_store_raises(journal):
    journal.close()
    with pytest.raises(StorageError):
        journal.log("x", 0)
    with pytest.raises(StorageError):
        journal.trades()


def test_seq_gap_free(journal):
    for i in range(50):
        journal.log("k", i, {"i": i})
    assert [r.seq for r in journal.log_rows()] == list(range(1, 51))


def test_pnl_consistency_to_storage_quantum(journal):
    t = make_trade(1, pnl=None, entry=67012.34, size=187.5)
    journal.insert_trade(t)
    exit_price = 67500.12345678
    pnl = quantize((exit_price / t.entry - 1) * t.size_usd)
    journal.close_trade(t.id, t.opened_at + 1, exit_price, pnl, "tp")
    row = journal.trades()[0]
    assert abs(row.outcome_pnl_usd - (row.exit_price / row.entry - 1) * row.size_usd) <= 1e-8


def test_export_empty_and_fixed_point(journal):
    assert journal.export_session() == ""
    journal.insert_trade(make_trade(1))
    journal.upsert_vol(VolHistoryRow("BTC", 60, None, 100.0))
    journal.upsert_vol(VolHistoryRow("BTC", 120, 0.0123456789, 101.23456789))
    journal.log("pipeline_start", 60, {"z": 2.5, "a": [1, 2]}, invocation_id="inv-000001", asset="BTC")
    journal.record_inference(InferenceCallRow("inv-000001", "analyst", 1, 60, 61, "ok", 100, 50))
    dump = journal.export_session()
    tables = [json.loads(line)["table"] for line in dump.splitlines()]
    assert tables == ["trades", "vol_history", "vol_history", "pipeline_log", "inference_calls"]
    assert '"entry":"100.00000000"' in dump
    other = Journal()
    other.load_dump(dump)
    assert other.export_session() == dump
    assert other.log("next", 70) == 2


KILL_SCRIPT = textwrap.dedent("""
    import sys, time
    from gatedtrader.journal import Journal
    j = Journal(sys.argv[1])
    i = 0
    while True:
        i += 1
        j.log("tick", i, {"i": i})
        print(i, flush=True)
        time.sleep(0.002)
""")


def test_kill_mid_write_loses_nothing_acknowledged(tmp_path):
    path = str(tmp_path / "k.db")
    proc = subprocess.Popen([sys.executable, "-c", KILL_SCRIPT, path], stdout=subprocess.PIPE, text=True)
    acked = 0
    deadline = time.time() + 20
    while acked < 100 and time.time() < deadline:
        line = proc.stdout.readline()
        if line:
            acked = int(line)
    os.kill(proc.pid, signal.SIGKILL)
    proc.wait()
    assert acked >= 100
    with Journal(path) as j:
        rows = j.log_rows()
        assert len(rows) >= acked
        assert [r.seq for r in rows] == list(range(1, len(rows) + 1))
        assert j.log("after_restart", 0) == len(rows) + 1
