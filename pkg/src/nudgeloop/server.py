"""HTTP front door: dialog endpoints, SSE persuasion streaming, reports,
snapshots, and the accessibility-watchdog alert path.

All durable truth lives in the append-only event log; the snapshot file
only carries state that never passes through the log (profiles, strategy
ledger, habit bindings, unlock sessions). Heartbeat state is rebuilt
from the log on restart.
"""

from __future__ import annotations

import json
import threading
from contextlib import asynccontextmanager
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Iterator, Mapping

from fastapi import Body, Depends, FastAPI, Header, HTTPException, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import StreamingResponse

from .analytics import Period, build_report
from .config import EngineConfig, ServerConfig
from .events import (
    DEVICE_KINDS,
    Decision,
    EventKind,
    EventLog,
    EventLogError,
    Feedback,
    Intent,
    OrphanCloseError,
    OutOfOrderError,
    parse_ts,
)
from .gateway import (
    Backend,
    FallbackBackend,
    PersuasionMessage,
    RemoteBackend,
    STREAM_RESET,
    generate_stream,
)
from .orchestrator import (
    CorruptSnapshotError,
    EmptyBlacklistError,
    Engine,
    EngineError,
    HabitKey,
    InvalidFeelingError,
    NoActionsError,
    NoProfileError,
    RoundPlan,
    SchemaMismatchError,
    TickKind,
    UnknownKeyError,
    UnknownRoundError,
    UnknownSessionError,
    WrongStateError,
)
from .prompts import GoalCategory, GoalEntry

SNAPSHOT_FILE = "snapshot.json"
EVENTS_FILE = "events.jsonl"
ALERTS_FILE = "alerts.jsonl"


# -- heartbeat watchdog -------------------------------------------------


@dataclass(frozen=True)
class HeartbeatState:
    last_seen: Mapping[str, datetime]
    service_ok: Mapping[str, bool]

    @classmethod
    def from_log(cls, log: EventLog) -> "HeartbeatState":
        return cls(dict(log.last_heartbeat), dict(log.last_service_ok))


@dataclass(frozen=True)
class AlertEvent:
    user: str
    reason: str  # "stale" or "service_down"
    observed_at: datetime | None
    raised_at: datetime

    def to_json(self) -> dict[str, Any]:
        return {
            "user": self.user,
            "reason": self.reason,
            "observed_at": self.observed_at.isoformat() if self.observed_at else None,
            "raised_at": self.raised_at.isoformat(),
        }


def check_heartbeats(
    now: datetime, state: HeartbeatState, threshold_s: float
) -> list[AlertEvent]:
    """One alert per user whose monitor went quiet or reported trouble."""
    alerts = []
    for user in sorted(state.last_seen):
        seen = state.last_seen[user]
        if not state.service_ok.get(user, True):
            alerts.append(AlertEvent(user, "service_down", seen, now))
        elif (now - seen).total_seconds() > threshold_s:
            alerts.append(AlertEvent(user, "stale", seen, now))
    return alerts


class FileNotifier:
    """Default alert sink: append one JSON line per alert."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def notify(self, alert: AlertEvent) -> None:
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(alert.to_json(), sort_keys=True) + "\n")


class EmailNotifier:
    """Stub adapter: a real deployment would send mail to the study team.

    Alerts are collected in memory so callers can verify the dispatch
    path without an SMTP dependency.
    """

    def __init__(self, address: str):
        self.address = address
        self.sent: list[AlertEvent] = []

    def notify(self, alert: AlertEvent) -> None:
        self.sent.append(alert)


# -- persuasion streaming -----------------------------------------------


class RoundStream:
    """Chunk buffer for one persuasion round, replayable by any viewer."""

    def __init__(self, session_id: str, round_no: int):
        self.session_id = session_id
        self.round_no = round_no
        self.items: list[tuple[str, str | None]] = []
        self.done = False
        self.message: PersuasionMessage | None = None
        self.cond = threading.Condition()

    def push(self, kind: str, text: str | None = None) -> None:
        with self.cond:
            self.items.append((kind, text))
            self.cond.notify_all()

    def finish(self, message: PersuasionMessage) -> None:
        with self.cond:
            self.done = True
            self.message = message
            self.cond.notify_all()

    def snapshot(self, start: int) -> tuple[list[tuple[str, str | None]], bool]:
        with self.cond:
            while start >= len(self.items) and not self.done:
                self.cond.wait(timeout=30.0)
            return list(self.items[start:]), self.done


class GenerationManager:
    """Runs the gateway in daemon threads, one per persuasion round."""

    def __init__(self, backends: list[Backend] | None, gateway_config):
        self.backends = backends
        self.gateway_config = gateway_config
        self.streams: dict[tuple[str, int], RoundStream] = {}
        self._lock = threading.Lock()

    def start(self, plan: RoundPlan) -> RoundStream:
        stream = RoundStream(plan.session_id, plan.round_no)
        with self._lock:
            self.streams[(plan.session_id, plan.round_no)] = stream
        thread = threading.Thread(
            target=self._run, args=(plan, stream), daemon=True
        )
        thread.start()
        return stream

    def get(self, session_id: str, round_no: int) -> RoundStream | None:
        with self._lock:
            return self.streams.get((session_id, round_no))

    def rounds_for(self, session_id: str) -> list[RoundStream]:
        with self._lock:
            return sorted(
                (s for (sid, _), s in self.streams.items() if sid == session_id),
                key=lambda s: s.round_no,
            )

    def _run(self, plan: RoundPlan, stream: RoundStream) -> None:
        gen = generate_stream(
            plan.request, backends=self.backends, config=self.gateway_config
        )
        while True:
            try:
                item = next(gen)
            except StopIteration as stop:
                stream.finish(stop.value)
                return
            if item is STREAM_RESET:
                stream.push("reset")
            else:
                stream.push("chunk", item)


def sse_round(stream: RoundStream) -> Iterator[str]:
    index = 0
    while True:
        items, done = stream.snapshot(index)
        for kind, text in items:
            data = json.dumps({"text": text}) if text is not None else "{}"
            yield f"event: {kind}\ndata: {data}\n\n"
        index += len(items)
        if done:
            message = stream.message
            body = json.dumps(
                {
                    "text": message.text,
                    "strategy": message.strategy.value if message.strategy else None,
                    "source": message.source,
                    "resets": message.resets,
                    "round": stream.round_no,
                }
            )
            yield f"event: done\ndata: {body}\n\n"
            return


# -- cadence timers -------------------------------------------------------


class TickScheduler:
    """Fires the round cadence with wall-clock timers.

    Each timer carries the round it was armed for; the engine discards
    stale ones, so a timer racing a user decision is harmless.
    """

    def __init__(self, engine: Engine, manager: GenerationManager, cadence_s: float):
        self.engine = engine
        self.manager = manager
        self.cadence_s = cadence_s
        self._timers: list[threading.Timer] = []
        self._lock = threading.Lock()
        self.closed = False

    def arm(self, session_id: str, round_no: int, delay_s: float | None = None) -> None:
        with self._lock:
            if self.closed:
                return
            timer = threading.Timer(
                self.cadence_s + 0.02 if delay_s is None else max(delay_s, 0.01),
                self._fire,
                args=(session_id, round_no),
            )
            timer.daemon = True
            self._timers.append(timer)
            self._timers = [t for t in self._timers if t.is_alive() or not t.finished.is_set()]
            timer.start()

    def _fire(self, session_id: str, round_no: int) -> None:
        now = datetime.now(timezone.utc)
        try:
            result = self.engine.on_round_tick(session_id, now, round_no=round_no)
        except EngineError:
            return
        if result.kind is TickKind.NEXT_ROUND:
            self.manager.start(result.plan)
            self.arm(session_id, result.plan.round_no)
        elif result.kind is TickKind.NOT_YET:
            wait = 0.05
            if result.retry_at is not None:
                wait = max((result.retry_at - now).total_seconds() + 0.02, 0.05)
            self.arm(session_id, round_no, delay_s=wait)

    def close(self) -> None:
        with self._lock:
            self.closed = True
            for timer in self._timers:
                timer.cancel()


# -- persistence ----------------------------------------------------------


def save_snapshot(engine: Engine, path: str | Path) -> Path:
    path = Path(path)
    body = engine.snapshot_state()
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(body, indent=2, sort_keys=True), encoding="utf-8")
    tmp.replace(path)
    return path


def load_snapshot(engine: Engine, path: str | Path) -> bool:
    path = Path(path)
    if not path.exists():
        return False
    try:
        body = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorruptSnapshotError(f"snapshot is not valid JSON: {exc}") from exc
    engine.restore_state(body)
    return True


def build_engine(config: ServerConfig) -> Engine:
    """Rebuild durable state from disk: JSONL replay plus snapshot."""
    data_dir = Path(config.data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    events_path = data_dir / EVENTS_FILE
    engine_config = EngineConfig(
        mode=config.mode, round_cadence_s=config.round_cadence_s
    )
    if events_path.exists():
        log = EventLog.from_jsonl(
            events_path,
            mode=config.mode,
            cadence_s=config.round_cadence_s,
            orphan_timeout_s=engine_config.orphan_timeout_s,
        )
    else:
        log = None
    handle = open(events_path, "a", encoding="utf-8")

    def sink(event) -> None:
        handle.write(event.to_json_line() + "\n")
        handle.flush()

    engine = Engine(engine_config, log=log, event_sink=sink)
    engine.sink_handle = handle  # closed by the app on shutdown
    if not load_snapshot(engine, data_dir / SNAPSHOT_FILE):
        engine.rebuild_from_log()
    return engine


# -- request plumbing -------------------------------------------------------

_ERROR_STATUS = [
    (WrongStateError, 409),
    (OutOfOrderError, 409),
    (OrphanCloseError, 409),
    (NoProfileError, 404),
    (UnknownSessionError, 404),
    (UnknownKeyError, 404),
    (UnknownRoundError, 404),
    (SchemaMismatchError, 409),
    (CorruptSnapshotError, 400),
    (InvalidFeelingError, 400),
    (EmptyBlacklistError, 400),
    (NoActionsError, 400),
    (EngineError, 400),
    (EventLogError, 400),
    (ValueError, 400),
]


def _http_error(exc: Exception) -> HTTPException:
    for kind, status in _ERROR_STATUS:
        if isinstance(exc, kind):
            return HTTPException(status_code=status, detail=str(exc))
    raise exc


def _now_or(body: Mapping[str, Any] | None) -> datetime:
    if body and body.get("ts"):
        return parse_ts(body["ts"])
    return datetime.now(timezone.utc)


def _parse_period(raw: str) -> Period:
    try:
        start_raw, _, end_raw = raw.partition(":")
        return Period(date.fromisoformat(start_raw), date.fromisoformat(end_raw))
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=f"bad period {raw!r}: {exc}")


def _period_from_log(log: EventLog, user: str) -> Period:
    stamps = [e.timestamp for e in log.events if e.user_id == user]
    if not stamps:
        today = datetime.now(timezone.utc).date()
        return Period(today, today)
    return Period(stamps[0].date(), stamps[-1].date())


def _goal_entries(rows: list[dict]) -> list[GoalEntry]:
    try:
        return [
            GoalEntry(GoalCategory(r["category"]), r["goal"], r["action"]) for r in rows
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise HTTPException(status_code=400, detail=f"bad value entry: {exc}")


# -- app factory -------------------------------------------------------------


def create_app(
    config: ServerConfig,
    engine: Engine | None = None,
    backends: list[Backend] | None = None,
    notifier=None,
) -> FastAPI:
    if engine is None:
        engine = build_engine(config)
    if backends is None:
        backends = [FallbackBackend()]
        if config.remote is not None:
            backends.insert(0, RemoteBackend(config.remote))
    data_dir = Path(config.data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    if notifier is None:
        notifier = FileNotifier(data_dir / ALERTS_FILE)
    manager = GenerationManager(backends, config.gateway)
    scheduler = TickScheduler(engine, manager, config.round_cadence_s)
    stop_watchdog = threading.Event()
    alerted: set[tuple[str, str, datetime | None]] = set()

    def run_watchdog_pass(now: datetime | None = None) -> list[AlertEvent]:
        now = now or datetime.now(timezone.utc)
        engine.sweep_orphans(now)
        alerts = check_heartbeats(
            now, HeartbeatState.from_log(engine.log), config.heartbeat_threshold_s
        )
        fresh = []
        for alert in alerts:
            key = (alert.user, alert.reason, alert.observed_at)
            if key not in alerted:
                alerted.add(key)
                notifier.notify(alert)
                fresh.append(alert)
        return fresh

    def watchdog_loop() -> None:
        interval = min(max(config.heartbeat_threshold_s / 4.0, 0.5), 60.0)
        while not stop_watchdog.wait(interval):
            run_watchdog_pass()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        thread = threading.Thread(target=watchdog_loop, daemon=True)
        thread.start()
        try:
            yield
        finally:
            stop_watchdog.set()
            scheduler.close()
            save_snapshot(engine, data_dir / SNAPSHOT_FILE)
            handle = getattr(engine, "sink_handle", None)
            if handle is not None:
                handle.close()

    def check_auth(request: Request, authorization: str | None = Header(default=None)) -> None:
        # liveness probes carry no credentials
        if request.url.path == "/healthz":
            return
        if config.auth_token and authorization != f"Bearer {config.auth_token}":
            raise HTTPException(status_code=401, detail="missing or bad bearer token")

    app = FastAPI(lifespan=lifespan, dependencies=[Depends(check_auth)])
    # the browser companion is served from its own origin
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    app.state.engine = engine
    app.state.manager = manager
    app.state.scheduler = scheduler
    app.state.notifier = notifier
    app.state.run_watchdog_pass = run_watchdog_pass

    def launch_round(plan: RoundPlan) -> None:
        manager.start(plan)
        scheduler.arm(plan.session_id, plan.round_no)

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    @app.post("/users/{user_id}/profile")
    def post_profile(user_id: str, body: dict = Body(...)) -> dict:
        values = _goal_entries(body.get("values", []))
        blacklist = set(body.get("blacklist", []))
        tz = body.get("timezone", "UTC")
        try:
            profile = engine.initialize_profile(user_id, values, blacklist, tz=tz)
        except Exception as exc:
            raise _http_error(exc)
        save_snapshot(engine, data_dir / SNAPSHOT_FILE)
        return {
            "user": profile.user_id,
            "values": [
                {"category": g.category.value, "goal": g.goal, "action": g.action}
                for g in profile.values
            ],
            "blacklist": sorted(profile.blacklist),
            "timezone": profile.timezone,
        }

    @app.post("/events")
    def post_events(body: Any = Body(...)) -> dict:
        rows = body.get("events") if isinstance(body, dict) else body
        if not isinstance(rows, list):
            raise HTTPException(status_code=400, detail="expected a list of events")
        results = []
        for row in rows:
            try:
                kind = EventKind(row["kind"])
                user = row["user"]
                ts = parse_ts(row["ts"]) if row.get("ts") else datetime.now(timezone.utc)
            except (KeyError, TypeError, ValueError) as exc:
                raise HTTPException(status_code=400, detail=f"bad event: {exc}")
            if kind not in DEVICE_KINDS:
                raise HTTPException(
                    status_code=400,
                    detail=f"only device events may be posted, not {kind.value}",
                )
            try:
                if kind is EventKind.SCREEN_UNLOCK:
                    engine.on_screen_unlock(user, ts)
                    results.append({"ok": True})
                elif kind is EventKind.SCREEN_OFF:
                    engine.on_screen_off(user, ts)
                    results.append({"ok": True})
                elif kind is EventKind.APP_OPEN:
                    opened = engine.on_app_open(
                        user, row["app"], ts, location=row.get("location")
                    )
                    results.append(
                        {
                            "ok": True,
                            "action": opened.action.value,
                            "session_id": opened.session_id,
                        }
                    )
                elif kind is EventKind.APP_CLOSE:
                    engine.on_app_close(user, row["app"], ts)
                    results.append({"ok": True})
                else:
                    engine.on_heartbeat(user, ts, service_ok=row.get("service_ok", True))
                    if not row.get("service_ok", True):
                        run_watchdog_pass()
                    results.append({"ok": True})
            except KeyError as exc:
                raise HTTPException(status_code=400, detail=f"bad event: missing {exc}")
            except Exception as exc:
                raise _http_error(exc)
        return {"results": results}

    @app.post("/sessions/{session_id}/intent")
    def post_intent(session_id: str, body: dict = Body(...)) -> dict:
        raw = body.get("intent", "")
        try:
            intent = Intent.EXIT_AT_INTENT if raw == "exit" else Intent(raw)
        except ValueError:
            raise HTTPException(status_code=400, detail=f"unknown intent {raw!r}")
        try:
            result = engine.submit_intent(session_id, intent, _now_or(body))
        except Exception as exc:
            raise _http_error(exc)
        return {
            "next_step": result.next_step.value,
            "outcome": result.outcome.value if result.outcome else None,
        }

    @app.post("/sessions/{session_id}/mental-state")
    def post_mental_state(session_id: str, body: dict = Body(...)) -> dict:
        if "engaged" not in body or not isinstance(body["engaged"], bool):
            raise HTTPException(status_code=400, detail="engaged must be a boolean")
        try:
            plan = engine.submit_mental_state(
                session_id,
                body["engaged"],
                str(body.get("feeling", "")),
                _now_or(body),
                other_text=body.get("other_text"),
            )
        except Exception as exc:
            raise _http_error(exc)
        launch_round(plan)
        return {
            "session_id": session_id,
            "round": plan.round_no,
            "strategy": plan.strategy.value if plan.strategy else None,
            "habit": plan.habit,
        }

    @app.get("/sessions/{session_id}/persuasion")
    def get_persuasion(session_id: str, round: int | None = Query(default=None)):
        try:
            view = engine.session_view(session_id)
        except Exception as exc:
            raise _http_error(exc)
        round_no = round if round is not None else view["round"]
        stream = manager.get(session_id, round_no)
        if stream is None:
            raise HTTPException(
                status_code=404, detail=f"no persuasion stream for round {round_no}"
            )
        return StreamingResponse(sse_round(stream), media_type="text/event-stream")

    @app.post("/sessions/{session_id}/decision")
    def post_decision(session_id: str, body: dict = Body(...)) -> dict:
        try:
            decision = Decision(body.get("decision", ""))
        except ValueError:
            raise HTTPException(status_code=400, detail="decision must be quit or continue")
        try:
            outcome = engine.submit_decision(session_id, decision, _now_or(body))
        except Exception as exc:
            raise _http_error(exc)
        return {"outcome": outcome.value if outcome else None}

    @app.post("/sessions/{session_id}/feedback")
    def post_feedback(session_id: str, body: dict = Body(...)) -> dict:
        try:
            feedback = Feedback(body.get("feedback", ""))
            round_no = int(body["round"])
        except (KeyError, TypeError, ValueError):
            raise HTTPException(status_code=400, detail="feedback needs round and up/down")
        try:
            engine.submit_feedback(session_id, round_no, feedback, _now_or(body))
        except Exception as exc:
            raise _http_error(exc)
        return {"ok": True}

    @app.put("/habits/{key}")
    def put_habit(key: str, body: dict = Body(...)) -> dict:
        user = body.get("user")
        habit = body.get("habit", "")
        if not user:
            raise HTTPException(status_code=400, detail="user is required")
        try:
            parsed = HabitKey.from_string(key)
        except (ValueError, KeyError) as exc:
            raise HTTPException(status_code=400, detail=f"bad habit key {key!r}: {exc}")
        try:
            binding = engine.edit_habit(user, parsed, habit, _now_or(body))
        except Exception as exc:
            raise _http_error(exc)
        save_snapshot(engine, data_dir / SNAPSHOT_FILE)
        return {
            "key": binding.key.as_string(),
            "habit": binding.habit,
            "source": binding.source.value,
        }

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        try:
            view = engine.session_view(session_id)
        except Exception as exc:
            raise _http_error(exc)
        rounds = {}
        for stream in manager.rounds_for(session_id):
            rounds[str(stream.round_no)] = {
                "done": stream.done,
                "text": stream.message.text if stream.message else None,
                "source": stream.message.source if stream.message else None,
            }
        view["rounds"] = rounds
        # countdown math stays server-timed; clients never consult their clock
        view["now"] = datetime.now(timezone.utc).isoformat()
        return view

    @app.get("/reports/{user}")
    def get_report(user: str, period: str | None = Query(default=None)) -> dict:
        span = _parse_period(period) if period else _period_from_log(engine.log, user)
        profile = engine.profiles.get(user)
        tz = profile.timezone if profile else "UTC"
        try:
            return build_report(engine.log, user, span, tz=tz)
        except Exception as exc:
            raise _http_error(exc)

    @app.post("/heartbeat")
    def post_heartbeat(body: dict = Body(...)) -> dict:
        user = body.get("user")
        if not user:
            raise HTTPException(status_code=400, detail="user is required")
        service_ok = bool(body.get("service_ok", True))
        try:
            engine.on_heartbeat(user, _now_or(body), service_ok=service_ok)
        except Exception as exc:
            raise _http_error(exc)
        fresh = run_watchdog_pass() if not service_ok else []
        return {"ok": True, "alerts": [a.to_json() for a in fresh]}

    @app.post("/admin/snapshot")
    def post_snapshot() -> dict:
        path = save_snapshot(engine, data_dir / SNAPSHOT_FILE)
        return {"path": str(path)}

    return app
