"""Command line entry points: serve, report, simulate."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from datetime import date
from pathlib import Path

from .analytics import Period, build_report, report_rows
from .config import (
    EngineMode,
    GatewayConfig,
    RemoteBackendConfig,
    ServerConfig,
)
from .events import EventLog


def load_server_config(path: str | Path) -> ServerConfig:
    body = json.loads(Path(path).read_text(encoding="utf-8"))
    remote = body.get("remote")
    gateway = body.get("gateway", {})
    return ServerConfig(
        host=body.get("host", "127.0.0.1"),
        port=int(body.get("port", 8000)),
        data_dir=Path(body.get("data_dir", "data")),
        mode=EngineMode(body.get("mode", "full")),
        round_cadence_s=float(body.get("round_cadence_s", 120.0)),
        heartbeat_threshold_s=float(body.get("heartbeat_threshold_s", 600.0)),
        auth_token=body.get("auth_token"),
        remote=RemoteBackendConfig(
            base_url=remote["base_url"],
            model=remote.get("model", "gpt-4"),
            api_key_env=remote.get("api_key_env", "NUDGELOOP_API_KEY"),
        )
        if remote
        else None,
        gateway=GatewayConfig(
            first_chunk_timeout_s=float(gateway.get("first_chunk_timeout_s", 2.0)),
            deadline_s=float(gateway.get("deadline_s", 10.0)),
            word_cap=int(gateway.get("word_cap", 70)),
        ),
    )


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .server import create_app

    config = load_server_config(args.config) if args.config else ServerConfig()
    if args.host:
        config = replace(config, host=args.host)
    if args.port:
        config = replace(config, port=args.port)
    app = create_app(config)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
    return 0


def _parse_period_arg(raw: str) -> Period:
    start_raw, _, end_raw = raw.partition(":")
    return Period(date.fromisoformat(start_raw), date.fromisoformat(end_raw))


def cmd_report(args: argparse.Namespace) -> int:
    log = EventLog.from_jsonl(args.log, mode=EngineMode(args.mode))
    users = [args.user] if args.user else log.users()
    out = {}
    for user in users:
        if args.period:
            period = _parse_period_arg(args.period)
        else:
            stamps = [e.timestamp for e in log.events if e.user_id == user]
            period = Period(stamps[0].date(), stamps[-1].date())
        out[user] = build_report(log, user, period)
    if args.out == "json":
        text = json.dumps(out, indent=2, sort_keys=True)
        if args.out_file:
            Path(args.out_file).write_text(text + "\n", encoding="utf-8")
        else:
            print(text)
    else:
        handle = open(args.out_file, "w", newline="", encoding="utf-8") if args.out_file else sys.stdout
        writer = csv.writer(handle)
        writer.writerow(["user", "metric", "key", "value"])
        for user, report in out.items():
            for metric, key, value in report_rows(report):
                writer.writerow([user, metric, key, value])
        if args.out_file:
            handle.close()
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    from .simulate import ScenarioConfig, make_demo_personas, run_scenario

    config = ScenarioConfig(
        personas=tuple(make_demo_personas()),
        days=args.days,
        mode=EngineMode(args.mode),
        seed=args.seed,
    )
    result = run_scenario(config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    result.engine.log.write_jsonl(out_dir / "events.jsonl")
    (out_dir / "reports.json").write_text(
        json.dumps(result.reports(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    overall = result.overall_acceptance
    print(f"mode={config.mode.value} days={config.days} seed={config.seed}")
    print(f"overall acceptance: {overall:.4f}" if overall is not None else "overall acceptance: n/a")
    for outcome in result.outcomes:
        mc = f"{outcome.mc_acceptance:.4f}" if outcome.mc_acceptance is not None else "n/a"
        expected = (
            f"{outcome.expected_acceptance:.4f}"
            if outcome.expected_acceptance is not None
            else "n/a"
        )
        print(
            f"  {outcome.persona.name}: opens={outcome.opens} persuaded={outcome.persuaded} "
            f"quit_rate={mc} expected={expected}"
        )
    print(f"wrote {out_dir / 'events.jsonl'} and {out_dir / 'reports.json'}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="nudgeloop")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the API server")
    serve.add_argument("--config", help="path to a JSON server config")
    serve.add_argument("--host")
    serve.add_argument("--port", type=int)
    serve.set_defaults(func=cmd_serve)

    report = sub.add_parser("report", help="compute metrics from an event log")
    report.add_argument("--log", required=True, help="path to events.jsonl")
    report.add_argument("--user", help="single user (default: all users in the log)")
    report.add_argument("--period", help="YYYY-MM-DD:YYYY-MM-DD, inclusive")
    report.add_argument("--mode", default="full", choices=[m.value for m in EngineMode])
    report.add_argument("--out", default="json", choices=["json", "csv"])
    report.add_argument("--out-file")
    report.set_defaults(func=cmd_report)

    simulate = sub.add_parser("simulate", help="run the seeded persona simulation")
    simulate.add_argument("--days", type=int, default=7)
    simulate.add_argument("--mode", default="full", choices=[m.value for m in EngineMode])
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--out", default="sim-out")
    simulate.set_defaults(func=cmd_simulate)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
