import json
import sqlite3
import subprocess
import sys

from gatedtrader.cli import bundled_fixture, main

from .conftest import spike_rows, write_csv


def test_replay_dump_and_report(tmp_path, capsys):
    db, dump = tmp_path / "s.db", tmp_path / "d.ndjson"
    assert main(["replay", "--journal", str(db), "--dump", str(dump)]) == 0
    out = capsys.readouterr().out
    assert "busy=1" in out
    first = json.loads(dump.read_text().splitlines()[0])
    assert first["table"] == "trades"

    assert main(["report", str(db), "--json", "--equity-csv", str(tmp_path / "eq.csv")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["performance"]["trades"] == rep["friction"]["n_executed"]
    assert (tmp_path / "eq.csv").read_text().startswith("trade_index,trade_id,cumulative_pnl_usd")

    assert main(["report", str(db)]) == 0
    assert "friction" in capsys.readouterr().out

    assert main(["dump", str(db), "-o", str(tmp_path / "again.ndjson")]) == 0
    assert (tmp_path / "again.ndjson").read_text() == dump.read_text()


def test_run_with_replay_flag(tmp_path, capsys):
    csv = write_csv(tmp_path / "one.csv", spike_rows())
    assert main(["run", "--replay", str(csv), "--journal", str(tmp_path / "j.db"), "--seed", "7"]) == 0
    assert "triggers=1" in capsys.readouterr().out


def test_cost_sensitivity_reference_inputs(capsys):
    assert main(["cost-sensitivity", "--net-pnl", "-15.07", "--notional", "26079"]) == 0
    out = capsys.readouterr().out
    for token in ("10.43", "-25.50", "26.08", "-41.15", "52.16", "-67.23"):
        assert token in out
    assert main(["cost-sensitivity", "--net-pnl", "-15.07", "--notional", "26079", "--rates", "0.0005"]) == 0
    assert "13.04" in capsys.readouterr().out


def test_exit_codes(tmp_path, capsys):
    assert main(["report", str(tmp_path / "missing.db")]) == 2
    assert main(["run", "--journal", str(tmp_path / "x.db")]) == 2  # no feed configured
    assert main(["replay", "--set", "window=abc"]) == 2
    assert main(["cost-sensitivity"]) == 2

    bad = tmp_path / "garbage.db"
    bad.write_bytes(b"this is not a database" * 100)
    assert main(["dump", str(bad)]) == 3

    cfg = tmp_path / "live.cfg"
    cfg.write_text("assets = BTC\npublic_endpoint = http://127.0.0.1:9\nbackend_timeout_s = 1\n")
    assert main(["run", "--config", str(cfg), "--journal", str(tmp_path / "l.db"), "--max-cycles", "1"]) == 0
    with sqlite3.connect(tmp_path / "l.db") as con:
        kinds = [k for (k,) in con.execute("SELECT kind FROM pipeline_log")]
    assert kinds == ["poll_failed"]
    capsys.readouterr()


def test_transport_error_exit_code(monkeypatch, tmp_path):
    from gatedtrader import cli
    from gatedtrader.errors import TransportError

    def boom(args):
        raise TransportError("venue down")

    monkeypatch.setattr(cli, "cmd_dump", boom)
    assert main(["dump", str(tmp_path / "x.db")]) == 4


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "gatedtrader.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "replay" in proc.stdout
    assert bundled_fixture().exists()
