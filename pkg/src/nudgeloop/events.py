"""Append-only usage event log with incremental derived state.

Events arrive in per-user timestamp order and are folded, as they
arrive, into app-usage intervals and intervention records, so metric
queries never rescan the raw log. The JSONL wire shape is one event per
line: {"user": ..., "ts": RFC3339, "kind": ..., ...payload}.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .config import EngineMode
from .strategies import (
    Engagement,
    MentalState,
    MentalStateCell,
    MentalStateKind,
    Strategy,
    applicable_strategies,
)


class EventKind(str, Enum):
    SCREEN_UNLOCK = "screen_unlock"
    SCREEN_OFF = "screen_off"
    APP_OPEN = "app_open"
    APP_CLOSE = "app_close"
    INTENT_REPORT = "intent_report"
    MENTAL_STATE_REPORT = "mental_state_report"
    PERSUASION_SHOWN = "persuasion_shown"
    DECISION = "decision"
    FEEDBACK = "feedback"
    HABIT_EDIT = "habit_edit"
    HEARTBEAT = "heartbeat"


# Kinds a device client may post directly; the rest are engine-emitted.
DEVICE_KINDS = frozenset(
    {
        EventKind.SCREEN_UNLOCK,
        EventKind.SCREEN_OFF,
        EventKind.APP_OPEN,
        EventKind.APP_CLOSE,
        EventKind.HEARTBEAT,
    }
)


class Intent(str, Enum):
    HABITUAL = "habitual"
    INSTRUMENTAL = "instrumental"
    RELAX = "relax"
    EXIT_AT_INTENT = "exit_at_intent"


class Decision(str, Enum):
    QUIT = "quit"
    CONTINUE = "continue"


class Feedback(str, Enum):
    UP = "up"
    DOWN = "down"


class Outcome(str, Enum):
    EXIT_AT_INTENT = "exit_at_intent"
    QUIT_AT_ROUND = "quit_at_round"
    CONTINUED_TO_EXHAUSTION = "continued_to_exhaustion"
    INSTRUMENTAL_PASS = "instrumental_pass"
    RELAX_PASS = "relax_pass"


class EventLogError(ValueError):
    pass


class OutOfOrderError(EventLogError):
    """An event timestamp went backwards for its user."""


class OrphanCloseError(EventLogError):
    """An AppClose arrived with no unmatched AppOpen of the same app."""


def format_ts(ts: datetime) -> str:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def parse_ts(raw: str) -> datetime:
    ts = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts


@dataclass(frozen=True)
class UsageEvent:
    user_id: str
    timestamp: datetime
    kind: EventKind
    payload: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.timestamp.tzinfo is None:
            object.__setattr__(
                self, "timestamp", self.timestamp.replace(tzinfo=timezone.utc)
            )

    def to_json(self) -> dict[str, Any]:
        body = {"user": self.user_id, "ts": format_ts(self.timestamp), "kind": self.kind.value}
        for key, value in self.payload.items():
            if value is not None:
                body[key] = value
        return body

    def to_json_line(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"), sort_keys=True)

    @classmethod
    def from_json(cls, body: Mapping[str, Any]) -> "UsageEvent":
        payload = {k: v for k, v in body.items() if k not in ("user", "ts", "kind")}
        return cls(
            user_id=body["user"],
            timestamp=parse_ts(body["ts"]),
            kind=EventKind(body["kind"]),
            payload=payload,
        )


def cell_to_payload(cell: MentalStateCell) -> dict[str, Any]:
    body: dict[str, Any] = {
        "state": cell.state.kind.value,
        "engaged": cell.engagement is Engagement.ENGAGED,
    }
    if cell.state.other_text:
        body["other_text"] = cell.state.other_text
    return body


def cell_from_payload(payload: Mapping[str, Any]) -> MentalStateCell:
    kind = MentalStateKind(payload["state"])
    state = MentalState(kind, payload.get("other_text"))
    engagement = Engagement.ENGAGED if payload["engaged"] else Engagement.NOT_ENGAGED
    return MentalStateCell(state, engagement)


@dataclass
class UsageInterval:
    """One foreground stay in an app, possibly still open."""

    user_id: str
    app: str
    open_ts: datetime
    close_ts: datetime | None = None
    intent: Intent | None = None
    intent_ts: datetime | None = None

    def duration_s(self, until: datetime | None = None) -> float:
        end = self.close_ts or until
        if end is None:
            return 0.0
        return max(0.0, (end - self.open_ts).total_seconds())


@dataclass
class RoundRecord:
    round_no: int
    strategy: Strategy | None
    shown_at: datetime
    habit: str | None = None
    decision: Decision | None = None
    feedback: Feedback | None = None


@dataclass
class InterventionRecord:
    """One categorized app visit and everything the dialog did with it."""

    user_id: str
    session_id: str
    app: str
    start: datetime
    intent: Intent
    cell: MentalStateCell | None = None
    rounds: list[RoundRecord] = field(default_factory=list)
    outcome: Outcome | None = None
    quit_round: int | None = None
    orphaned: bool = False
    last_activity: datetime | None = None

    @property
    def terminated(self) -> bool:
        return self.outcome is not None

    @property
    def reached_persuasion(self) -> bool:
        return bool(self.rounds)


class EventLog:
    """The append-only log plus per-user derived indexes."""

    def __init__(
        self,
        mode: EngineMode = EngineMode.FULL,
        cadence_s: float = 120.0,
        orphan_timeout_s: float = 1800.0,
    ):
        self.mode = mode
        self.cadence_s = cadence_s
        self.orphan_timeout_s = orphan_timeout_s
        self.events: list[UsageEvent] = []
        self._last_ts: dict[str, datetime] = {}
        self._intervals: dict[str, list[UsageInterval]] = {}
        # (user, app) -> stack of indexes into _intervals[user] still open
        self._open_stack: dict[tuple[str, str], list[int]] = {}
        self._records: dict[str, list[InterventionRecord]] = {}
        self._live: dict[str, InterventionRecord] = {}
        self._opens_by_intent: dict[str, dict[Intent, int]] = {}
        self._open_count: dict[str, int] = {}
        self.last_heartbeat: dict[str, datetime] = {}
        self.last_service_ok: dict[str, bool] = {}

    # -- ingestion ---------------------------------------------------

    def append(self, event: UsageEvent) -> None:
        last = self._last_ts.get(event.user_id)
        if last is not None and event.timestamp < last:
            raise OutOfOrderError(
                f"{event.user_id}: {format_ts(event.timestamp)} before {format_ts(last)}"
            )
        self._apply(event)
        self._last_ts[event.user_id] = event.timestamp
        self.events.append(event)

    def extend(self, events: Iterable[UsageEvent]) -> None:
        for event in events:
            self.append(event)

    def _apply(self, event: UsageEvent) -> None:
        kind = event.kind
        if kind is EventKind.APP_OPEN:
            self._on_open(event)
        elif kind is EventKind.APP_CLOSE:
            self._on_close(event)
        elif kind is EventKind.SCREEN_OFF:
            self._on_screen_off(event)
        elif kind is EventKind.INTENT_REPORT:
            self._on_intent(event)
        elif kind is EventKind.MENTAL_STATE_REPORT:
            self._on_mental_state(event)
        elif kind is EventKind.PERSUASION_SHOWN:
            self._on_shown(event)
        elif kind is EventKind.DECISION:
            self._on_decision(event)
        elif kind is EventKind.FEEDBACK:
            self._on_feedback(event)
        elif kind is EventKind.HEARTBEAT:
            self.last_heartbeat[event.user_id] = event.timestamp
            self.last_service_ok[event.user_id] = bool(
                event.payload.get("service_ok", True)
            )

    def _on_open(self, event: UsageEvent) -> None:
        user, app = event.user_id, event.payload["app"]
        interval = UsageInterval(user_id=user, app=app, open_ts=event.timestamp)
        per_user = self._intervals.setdefault(user, [])
        per_user.append(interval)
        self._open_stack.setdefault((user, app), []).append(len(per_user) - 1)
        self._open_count[user] = self._open_count.get(user, 0) + 1
        live = self._live.get(user)
        if live is not None and live.app != app:
            self._close_live(user, event.timestamp)

    def _on_close(self, event: UsageEvent) -> None:
        user, app = event.user_id, event.payload["app"]
        stack = self._open_stack.get((user, app))
        if not stack:
            raise OrphanCloseError(f"{user}: close of {app} with no open")
        index = stack.pop()
        self._intervals[user][index].close_ts = event.timestamp
        live = self._live.get(user)
        if live is not None and live.app == app:
            self._close_live(user, event.timestamp)

    def _on_screen_off(self, event: UsageEvent) -> None:
        user = event.user_id
        for (u, _app), stack in self._open_stack.items():
            if u != user:
                continue
            while stack:
                self._intervals[user][stack.pop()].close_ts = event.timestamp
        if user in self._live:
            self._close_live(user, event.timestamp)

    def _on_intent(self, event: UsageEvent) -> None:
        user = event.user_id
        app = event.payload["app"]
        intent = Intent(event.payload["intent"])
        if user in self._live:
            # A new dialog can only mean the previous visit ended.
            self._close_live(user, event.timestamp)
        interval = self._find_open_interval(user, app, event.timestamp)
        if interval is not None and interval.intent is None:
            interval.intent = intent
            interval.intent_ts = event.timestamp
        counts = self._opens_by_intent.setdefault(user, {})
        counts[intent] = counts.get(intent, 0) + 1
        record = InterventionRecord(
            user_id=user,
            session_id=event.payload.get("session", ""),
            app=app,
            start=event.timestamp,
            intent=intent,
            last_activity=event.timestamp,
        )
        if intent is Intent.INSTRUMENTAL:
            record.outcome = Outcome.INSTRUMENTAL_PASS
        elif intent is Intent.RELAX:
            record.outcome = Outcome.RELAX_PASS
        elif intent is Intent.EXIT_AT_INTENT:
            record.outcome = Outcome.EXIT_AT_INTENT
        self._records.setdefault(user, []).append(record)
        if record.outcome is None:
            self._live[user] = record

    def _on_mental_state(self, event: UsageEvent) -> None:
        live = self._match_live(event)
        if live is not None:
            live.cell = cell_from_payload(event.payload)
            live.last_activity = event.timestamp

    def _on_shown(self, event: UsageEvent) -> None:
        live = self._match_live(event)
        if live is None:
            return
        strategy_raw = event.payload.get("strategy")
        live.rounds.append(
            RoundRecord(
                round_no=event.payload["round"],
                strategy=Strategy(strategy_raw) if strategy_raw else None,
                shown_at=event.timestamp,
                habit=event.payload.get("habit"),
            )
        )
        live.last_activity = event.timestamp

    def _on_decision(self, event: UsageEvent) -> None:
        live = self._match_live(event)
        if live is None or not live.rounds:
            return
        round_no = event.payload.get("round", live.rounds[-1].round_no)
        decision = Decision(event.payload["decision"])
        for entry in live.rounds:
            if entry.round_no == round_no:
                entry.decision = decision
        live.last_activity = event.timestamp
        if decision is Decision.QUIT:
            live.outcome = Outcome.QUIT_AT_ROUND
            live.quit_round = round_no
            self._live.pop(event.user_id)
        elif round_no >= self._round_cap(live):
            live.outcome = Outcome.CONTINUED_TO_EXHAUSTION
            self._live.pop(event.user_id)

    def _on_feedback(self, event: UsageEvent) -> None:
        live = self._match_live(event)
        if live is None:
            # Feedback may land just after the session terminated.
            live = self._latest_record(event.user_id, event.payload.get("session"))
        if live is None:
            return
        round_no = event.payload.get("round")
        for entry in live.rounds:
            if round_no is None or entry.round_no == round_no:
                entry.feedback = Feedback(event.payload["feedback"])

    def _match_live(self, event: UsageEvent) -> InterventionRecord | None:
        live = self._live.get(event.user_id)
        if live is None:
            return None
        session = event.payload.get("session")
        if session and live.session_id and session != live.session_id:
            return None
        return live

    def _latest_record(self, user: str, session: str | None) -> InterventionRecord | None:
        for record in reversed(self._records.get(user, [])):
            if session is None or record.session_id == session:
                return record
        return None

    def _round_cap(self, record: InterventionRecord) -> int:
        if record.cell is not None:
            return len(applicable_strategies(record.cell))
        return 4

    def _close_live(self, user: str, ts: datetime) -> None:
        """The visit ended without an explicit decision; infer the outcome."""
        record = self._live.pop(user)
        record.last_activity = ts
        if record.rounds:
            last = record.rounds[-1]
            window = last.shown_at + timedelta(seconds=self.cadence_s)
            if ts < window:
                record.outcome = Outcome.QUIT_AT_ROUND
                record.quit_round = last.round_no
                if last.decision is None:
                    last.decision = Decision.QUIT
            else:
                record.outcome = Outcome.CONTINUED_TO_EXHAUSTION
        elif self.mode is EngineMode.BASELINE:
            record.outcome = Outcome.CONTINUED_TO_EXHAUSTION
        # else: dialog abandoned before any round; stays unterminated

    def _find_open_interval(
        self, user: str, app: str, ts: datetime
    ) -> UsageInterval | None:
        stack = self._open_stack.get((user, app))
        if stack:
            return self._intervals[user][stack[-1]]
        # Late categorization: scan for a closed interval containing ts.
        for interval in reversed(self._intervals.get(user, [])):
            if interval.app != app:
                continue
            if interval.close_ts is not None and interval.open_ts <= ts <= interval.close_ts:
                return interval
        return None

    # -- queries -----------------------------------------------------

    def users(self) -> list[str]:
        return sorted(self._last_ts)

    def open_count(self, user: str | None = None) -> int:
        if user is not None:
            return self._open_count.get(user, 0)
        return sum(self._open_count.values())

    def opens_by_intent(self, user: str | None = None) -> dict[Intent, int]:
        if user is not None:
            return dict(self._opens_by_intent.get(user, {}))
        merged: dict[Intent, int] = {}
        for counts in self._opens_by_intent.values():
            for intent, n in counts.items():
                merged[intent] = merged.get(intent, 0) + n
        return merged

    def intervals(self, user: str) -> list[UsageInterval]:
        return list(self._intervals.get(user, []))

    def records(self, user: str | None = None) -> list[InterventionRecord]:
        if user is not None:
            selected = list(self._records.get(user, []))
        else:
            selected = [r for rows in self._records.values() for r in rows]
            selected.sort(key=lambda r: r.start)
        horizon = max(self._last_ts.values()) if self._last_ts else None
        if horizon is not None:
            cutoff = timedelta(seconds=self.orphan_timeout_s)
            for record in selected:
                if not record.terminated and record.last_activity is not None:
                    record.orphaned = horizon - record.last_activity > cutoff
        return selected

    def last_event_ts(self, user: str | None = None) -> datetime | None:
        if user is not None:
            return self._last_ts.get(user)
        return max(self._last_ts.values()) if self._last_ts else None

    # -- persistence -------------------------------------------------

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            for event in self.events:
                handle.write(event.to_json_line() + "\n")

    @classmethod
    def from_jsonl(
        cls,
        path: str | Path,
        mode: EngineMode = EngineMode.FULL,
        cadence_s: float = 120.0,
        orphan_timeout_s: float = 1800.0,
    ) -> "EventLog":
        log = cls(mode=mode, cadence_s=cadence_s, orphan_timeout_s=orphan_timeout_s)
        with open(path, "r", encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if line:
                    log.append(UsageEvent.from_json(json.loads(line)))
        return log

    def iter_jsonl_lines(self) -> Iterator[str]:
        for event in self.events:
            yield event.to_json_line()


def ingest_event(log: EventLog, event: UsageEvent) -> EventLog:
    """Append one event, returning the (mutated) log for chaining."""
    log.append(event)
    return log
