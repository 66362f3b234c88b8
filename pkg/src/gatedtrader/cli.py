"""Command-line entry point: run, replay, report, cost-sensitivity, dump.

Exit codes: 0 success, 2 usage/config/missing journal, 3 storage, 4 transport.
"""

from __future__ import annotations

import argparse
import logging
import signal
import sys
import threading
from importlib import resources
from pathlib import Path

from . import analytics
from .config import load_config
from .errors import (
    ConfigError,
    MissingJournal,
    NonMonotoneTimestamp,
    StorageError,
    TransportError,
)
from .journal import Journal
from .session import Session

logger = logging.getLogger("gatedtrader")

EXIT_OK, EXIT_CONFIG, EXIT_STORAGE, EXIT_TRANSPORT = 0, 2, 3, 4


def bundled_fixture() -> Path:
    return Path(str(resources.files("gatedtrader.data").joinpath("fixture_2asset.csv")))


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = value
    for name in ("seed", "mode", "journal", "backend", "backend_mode"):
        v = getattr(args, name, None)
        if v is not None:
            out["journal_path" if name == "journal" else name] = str(v)
    if getattr(args, "assets", None):
        out["assets"] = args.assets
    return out


def _open_existing(path: str) -> Journal:
    if not Path(path).exists():
        raise MissingJournal(f"journal not found: {path}")
    return Journal(path)


def cmd_run(args) -> int:
    overrides = _overrides(args)
    replay = getattr(args, "replay", None)
    if args.command == "replay":
        replay = args.csv or str(bundled_fixture())
    if replay:
        overrides["replay_path"] = replay
    cfg = load_config(args.config, overrides)
    if not cfg.replay_path and not cfg.public_endpoint:
        raise ConfigError("need --replay FILE or a public_endpoint for a live feed")

    journal = Journal(cfg.journal_path)
    stop = threading.Event()

    def _stop(signum, frame):
        logger.warning("signal %d received, stopping after this cycle", signum)
        stop.set()

    previous = {s: signal.signal(s, _stop) for s in (signal.SIGINT, signal.SIGTERM)}
    try:
        session = Session(cfg, journal, stop=stop)
        summary = session.run(max_cycles=args.max_cycles)
    finally:
        for s, h in previous.items():
            signal.signal(s, h)
        journal.close()
    print(
        f"cycles={summary.cycles} ticks={summary.ticks} triggers={summary.triggers} "
        f"admitted={summary.admitted} busy={summary.busy} cooldown={summary.cooldown} "
        f"asset_cooldown={summary.asset_cooldown} executed={summary.executed}"
    )
    if args.dump:
        with Journal(cfg.journal_path) as j:
            Path(args.dump).write_text(j.export_session())
    return EXIT_OK


def cmd_report(args) -> int:
    with _open_existing(args.journal) as j:
        report = analytics.session_report(j)
        if args.equity_csv:
            Path(args.equity_csv).write_text(analytics.equity_curve(j).to_csv())
    sys.stdout.write(report.to_json() if args.json else analytics.render_report(report))
    return EXIT_OK


def _rates(text: str) -> list[tuple[str, str]]:
    rates = [r.strip() for r in text.split(",") if r.strip()]
    if not rates:
        raise ConfigError("empty rate list")
    names = dict((rate, name) for name, rate in analytics.DEFAULT_SCENARIOS)
    return [(names.get(r, f"{float(r):.2%} round trip"), r) for r in rates]


def cmd_cost_sensitivity(args) -> int:
    scenarios = _rates(args.rates) if args.rates else analytics.DEFAULT_SCENARIOS
    if args.net_pnl is not None and args.notional is not None:
        net, notional = args.net_pnl, args.notional
    else:
        if not args.journal:
            raise ConfigError("give a journal, or both --net-pnl and --notional")
        with _open_existing(args.journal) as j:
            perf = analytics.performance(j)
        if perf.empty:
            print("no trades")
            return EXIT_OK
        net = round(perf.net_pnl, 2) if args.net_pnl is None else args.net_pnl
        notional = round(perf.total_notional, 2) if args.notional is None else args.notional
    rows = analytics.cost_sensitivity(str(net), str(notional), scenarios)
    sys.stdout.write(f"net pnl {net}, total notional {notional}\n" + analytics.render_costs(rows))
    return EXIT_OK


def cmd_dump(args) -> int:
    with _open_existing(args.journal) as j:
        text = j.export_session()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gatedtrader", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def session_args(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--journal", help="SQLite journal path (resumed if it exists)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--mode", choices=("DRY_RUN", "LIVE"))
        sp.add_argument("--backend", choices=("mock", "remote"))
        sp.add_argument("--backend-mode", dest="backend_mode")
        sp.add_argument("--assets", help="comma-separated symbols")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        sp.add_argument("--max-cycles", type=int, dest="max_cycles")
        sp.add_argument("--dump", help="write the canonical session dump here afterwards")
        sp.set_defaults(func=cmd_run)

    run = sub.add_parser("run", help="run a session (live feed, or --replay FILE)")
    run.add_argument("--replay", help="replay CSV instead of the live feed")
    session_args(run)

    replay = sub.add_parser("replay", help="run a session over a replay CSV (bundled fixture by default)")
    replay.add_argument("csv", nargs="?")
    session_args(replay)

    rep = sub.add_parser("report", help="friction, performance and asset-class report")
    rep.add_argument("journal")
    rep.add_argument("--json", action="store_true")
    rep.add_argument("--equity-csv", dest="equity_csv")
    rep.set_defaults(func=cmd_report)

    cost = sub.add_parser("cost-sensitivity", help="net PnL under round-trip cost scenarios")
    cost.add_argument("journal", nargs="?")
    cost.add_argument("--rates", help="comma-separated round-trip rates, e.g. 0,0.0004,0.001,0.002")
    cost.add_argument("--net-pnl", dest="net_pnl", type=float)
    cost.add_argument("--notional", type=float)
    cost.set_defaults(func=cmd_cost_sensitivity)

    dump = sub.add_parser("dump", help="canonical NDJSON export of a journal")
    dump.add_argument("journal")
    dump.add_argument("-o", "--output")
    dump.set_defaults(func=cmd_dump)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, MissingJournal, NonMonotoneTimestamp, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StorageError as exc:
        print(f"storage error: {exc}", file=sys.stderr)
        return EXIT_STORAGE
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


if __name__ == "__main__":
    sys.exit(main())
