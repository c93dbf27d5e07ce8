"""Intervention session engine.

Drives each triggering app-open through intent report, mental-state
report, and counterbalanced persuasion rounds on a fixed cadence, owns
habit-context bindings, and emits every step into the event log. All
operations take an explicit `now` so tests and simulations can run on a
virtual clock.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Any, Callable
from zoneinfo import ZoneInfo

from .config import EngineConfig, EngineMode
from .events import (
    Decision,
    EventKind,
    EventLog,
    Feedback,
    Intent,
    Outcome,
    UsageEvent,
    cell_from_payload,
    cell_to_payload,
)
from .gateway import GenerationRequest
from .prompts import (
    CATEGORY_ORDER,
    GoalCategory,
    GoalEntry,
    PromptSlots,
    PromptVariant,
    TemplateStore,
    assemble_prompt,
)
from .strategies import (
    Engagement,
    MentalState,
    MentalStateCell,
    MentalStateKind,
    Strategy,
    StrategyLedger,
    applicable_strategies,
    next_strategy,
)
from .analytics import compute_context_stats

SCHEMA_VERSION = 1
DEFAULT_LOCATION = "an unknown location"

_EPOCH = datetime.min.replace(tzinfo=timezone.utc)


class EngineError(Exception):
    pass


class NoProfileError(EngineError):
    pass


class EmptyBlacklistError(EngineError):
    pass


class UnknownSessionError(EngineError):
    pass


class WrongStateError(EngineError):
    pass


class InvalidFeelingError(EngineError):
    pass


class UnknownRoundError(EngineError):
    pass


class UnknownKeyError(EngineError):
    pass


class NoActionsError(EngineError):
    pass


class SchemaMismatchError(EngineError):
    pass


class CorruptSnapshotError(EngineError):
    pass


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    values: tuple[GoalEntry, ...]
    blacklist: frozenset[str]
    timezone: str = "UTC"


@dataclass
class UnlockSession:
    user_id: str
    unlocked_at: datetime
    prompted_apps: set[str] = field(default_factory=set)


class SessionState(str, Enum):
    AWAIT_INTENT = "await_intent"
    AWAIT_MENTAL_STATE = "await_mental_state"
    PERSUADING = "persuading"
    CLOSED = "closed"


@dataclass(frozen=True)
class HabitKey:
    state_kind: MentalStateKind
    location: str
    hour: int

    def __post_init__(self) -> None:
        if not 0 <= self.hour <= 23:
            raise ValueError("hour must be within 0-23")

    def as_string(self) -> str:
        return f"{self.state_kind.value}:{self.location}:{self.hour}"

    @classmethod
    def from_string(cls, raw: str) -> "HabitKey":
        kind, _, rest = raw.partition(":")
        location, _, hour = rest.rpartition(":")
        return cls(MentalStateKind(kind), location, int(hour))


class BindingSource(str, Enum):
    INITIALIZATION = "initialization"
    USER_EDIT = "user_edit"


@dataclass
class HabitBinding:
    key: HabitKey
    habit: str
    source: BindingSource


@dataclass
class InterventionSession:
    session_id: str
    user_id: str
    app: str
    created_at: datetime
    location: str = DEFAULT_LOCATION
    state: SessionState = SessionState.AWAIT_INTENT
    intent: Intent | None = None
    cell: MentalStateCell | None = None
    round_no: int = 0
    current_strategy: Strategy | None = None
    shown_at: datetime | None = None
    shown_strategies: set[Strategy] = field(default_factory=set)
    decided_rounds: set[int] = field(default_factory=set)
    habit_keys: dict[int, HabitKey] = field(default_factory=dict)
    habits: dict[int, str] = field(default_factory=dict)
    outcome: Outcome | None = None
    quit_round: int | None = None
    timed_out: bool = False
    last_activity: datetime | None = None


class OpenAction(str, Enum):
    SHOW_INTENT_DIALOG = "show_intent_dialog"
    NO_ACTION = "no_action"


@dataclass(frozen=True)
class OpenResult:
    action: OpenAction
    session_id: str | None = None


class NextStep(str, Enum):
    MENTAL_STATE = "mental_state"
    PERSUASION = "persuasion"
    CLOSED = "closed"


@dataclass(frozen=True)
class IntentResult:
    next_step: NextStep
    outcome: Outcome | None = None


@dataclass(frozen=True)
class RoundPlan:
    """Everything needed to generate and show one persuasion round."""

    session_id: str
    round_no: int
    strategy: Strategy | None
    habit: str | None
    request: GenerationRequest


class TickKind(str, Enum):
    NEXT_ROUND = "next_round"
    EXHAUSTED = "exhausted"
    NOT_YET = "not_yet"
    STALE = "stale"


@dataclass(frozen=True)
class TickResult:
    kind: TickKind
    plan: RoundPlan | None = None
    retry_at: datetime | None = None


class Engine:
    """All intervention state for one deployment, behind a single lock."""

    def __init__(
        self,
        config: EngineConfig | None = None,
        log: EventLog | None = None,
        templates: TemplateStore | None = None,
        event_sink: Callable[[UsageEvent], None] | None = None,
        id_factory: Callable[[], str] | None = None,
    ):
        self.config = config or EngineConfig()
        self.log = log or EventLog(
            mode=self.config.mode,
            cadence_s=self.config.round_cadence_s,
            orphan_timeout_s=self.config.orphan_timeout_s,
        )
        self.templates = templates or TemplateStore()
        self.event_sink = event_sink
        counter = itertools.count(1)
        self._id_factory = id_factory or (lambda: f"s{next(counter):06d}")
        self.profiles: dict[str, UserProfile] = {}
        self.sessions: dict[str, InterventionSession] = {}
        self.live: dict[str, str] = {}
        self.unlocks: dict[str, UnlockSession] = {}
        self.ledger = StrategyLedger()
        self.bindings: dict[str, dict[HabitKey, HabitBinding]] = {}
        self.habit_usage: dict[tuple[str, str], datetime] = {}
        self.last_shown_key: dict[str, HabitKey] = {}
        self._lock = threading.RLock()

    # -- plumbing ------------------------------------------------------

    def _clamp(self, user: str, now: datetime) -> datetime:
        if now.tzinfo is None:
            now = now.replace(tzinfo=timezone.utc)
        last = self.log.last_event_ts(user)
        return last if last is not None and last > now else now

    def _emit(self, user: str, ts: datetime, kind: EventKind, **payload: Any) -> None:
        event = UsageEvent(
            user_id=user, timestamp=ts, kind=kind,
            payload={k: v for k, v in payload.items() if v is not None},
        )
        self.log.append(event)
        if self.event_sink is not None:
            self.event_sink(event)

    def _profile(self, user: str) -> UserProfile:
        profile = self.profiles.get(user)
        if profile is None:
            raise NoProfileError(f"no profile for {user}")
        return profile

    def _session(self, session_id: str) -> InterventionSession:
        session = self.sessions.get(session_id)
        if session is None:
            raise UnknownSessionError(session_id)
        return session

    def _tz(self, user: str) -> str:
        profile = self.profiles.get(user)
        return profile.timezone if profile is not None else self.config.timezone

    # -- profile -------------------------------------------------------

    def initialize_profile(
        self,
        user_id: str,
        values: list[GoalEntry],
        blacklist: set[str] | frozenset[str],
        tz: str = "UTC",
    ) -> UserProfile:
        """Create or replace a profile; duplicate categories keep the last entry."""
        if not blacklist:
            raise EmptyBlacklistError("blacklist must name at least one app")
        ZoneInfo(tz)  # reject unknown timezone names up front
        by_category: dict[GoalCategory, GoalEntry] = {}
        for entry in values:
            by_category[entry.category] = entry
        ordered = tuple(
            by_category[c] for c in CATEGORY_ORDER if c in by_category
        )
        with self._lock:
            profile = UserProfile(
                user_id=user_id,
                values=ordered,
                blacklist=frozenset(blacklist),
                timezone=tz,
            )
            self.profiles[user_id] = profile
            return profile

    # -- device events ---------------------------------------------------

    def on_screen_unlock(self, user: str, now: datetime) -> None:
        with self._lock:
            ts = self._clamp(user, now)
            self._emit(user, ts, EventKind.SCREEN_UNLOCK)
            self.unlocks[user] = UnlockSession(user_id=user, unlocked_at=ts)

    def on_screen_off(self, user: str, now: datetime) -> None:
        with self._lock:
            ts = self._clamp(user, now)
            self._emit(user, ts, EventKind.SCREEN_OFF)
            self.unlocks.pop(user, None)
            self._close_live_from_signal(user, ts)

    def on_app_open(
        self, user: str, app: str, now: datetime, location: str | None = None
    ) -> OpenResult:
        with self._lock:
            profile = self._profile(user)
            ts = self._clamp(user, now)
            self._emit(user, ts, EventKind.APP_OPEN, app=app, location=location)
            live = self._live_session(user)
            if live is not None and live.app != app:
                self._close_session_from_signal(live, ts)
            unlock = self.unlocks.get(user)
            if unlock is None:
                # client missed the unlock event; open one implicitly
                unlock = UnlockSession(user_id=user, unlocked_at=ts)
                self.unlocks[user] = unlock
            if app not in profile.blacklist or app in unlock.prompted_apps:
                return OpenResult(OpenAction.NO_ACTION)
            unlock.prompted_apps.add(app)
            session = InterventionSession(
                session_id=self._id_factory(),
                user_id=user,
                app=app,
                created_at=ts,
                location=location or DEFAULT_LOCATION,
                last_activity=ts,
            )
            self.sessions[session.session_id] = session
            self.live[user] = session.session_id
            return OpenResult(OpenAction.SHOW_INTENT_DIALOG, session.session_id)

    def on_app_close(self, user: str, app: str, now: datetime) -> None:
        with self._lock:
            ts = self._clamp(user, now)
            self._emit(user, ts, EventKind.APP_CLOSE, app=app)
            live = self._live_session(user)
            if live is not None and live.app == app:
                self._close_session_from_signal(live, ts)

    def on_heartbeat(self, user: str, now: datetime, service_ok: bool = True) -> None:
        with self._lock:
            ts = self._clamp(user, now)
            self._emit(user, ts, EventKind.HEARTBEAT, service_ok=service_ok)

    def _live_session(self, user: str) -> InterventionSession | None:
        sid = self.live.get(user)
        return self.sessions.get(sid) if sid else None

    def _close_live_from_signal(self, user: str, ts: datetime) -> None:
        live = self._live_session(user)
        if live is not None:
            self._close_session_from_signal(live, ts)

    def _close_session_from_signal(self, session: InterventionSession, ts: datetime) -> None:
        """The app lost foreground; infer the outcome like the log does."""
        if session.state is SessionState.PERSUADING:
            window = session.shown_at + timedelta(seconds=self.config.round_cadence_s)
            if ts < window:
                session.outcome = Outcome.QUIT_AT_ROUND
                session.quit_round = session.round_no
            else:
                session.outcome = Outcome.CONTINUED_TO_EXHAUSTION
        self._finish(session, ts)

    def _finish(self, session: InterventionSession, ts: datetime) -> None:
        session.state = SessionState.CLOSED
        session.last_activity = ts
        if self.live.get(session.user_id) == session.session_id:
            self.live.pop(session.user_id)

    # -- dialog steps ----------------------------------------------------

    def submit_intent(self, session_id: str, intent: Intent, now: datetime) -> IntentResult:
        with self._lock:
            session = self._session(session_id)
            if session.state is not SessionState.AWAIT_INTENT:
                raise WrongStateError(f"intent already submitted for {session_id}")
            ts = self._clamp(session.user_id, now)
            session.intent = intent
            session.last_activity = ts
            self._emit(
                session.user_id, ts, EventKind.INTENT_REPORT,
                app=session.app, intent=intent.value, session=session_id,
            )
            if intent is Intent.HABITUAL:
                if self.config.mode is EngineMode.BASELINE:
                    self._finish(session, ts)
                    return IntentResult(NextStep.CLOSED)
                session.state = SessionState.AWAIT_MENTAL_STATE
                return IntentResult(NextStep.MENTAL_STATE)
            if intent is Intent.INSTRUMENTAL:
                session.outcome = Outcome.INSTRUMENTAL_PASS
            elif intent is Intent.RELAX:
                session.outcome = Outcome.RELAX_PASS
            else:
                session.outcome = Outcome.EXIT_AT_INTENT
            self._finish(session, ts)
            return IntentResult(NextStep.CLOSED, session.outcome)

    def submit_mental_state(
        self,
        session_id: str,
        engaged: bool,
        feeling: str,
        now: datetime,
        other_text: str | None = None,
    ) -> RoundPlan:
        """Record the two-question answers and start persuasion round 1.

        `feeling` is one of stress, boredom, none, other; "none" means no
        particular negative feeling, which the strategy grid treats as
        inertia.
        """
        with self._lock:
            session = self._session(session_id)
            if session.state is not SessionState.AWAIT_MENTAL_STATE:
                raise WrongStateError(f"{session_id} is not awaiting a mental state")
            kind = {
                "stress": MentalStateKind.STRESS,
                "boredom": MentalStateKind.BOREDOM,
                "none": MentalStateKind.INERTIA,
                "inertia": MentalStateKind.INERTIA,
                "other": MentalStateKind.OTHER,
            }.get(feeling.lower())
            if kind is None:
                raise InvalidFeelingError(f"unknown feeling {feeling!r}")
            if kind is MentalStateKind.OTHER and not (other_text and other_text.strip()):
                raise InvalidFeelingError("an 'other' feeling needs its text")
            state = MentalState(
                kind, other_text if kind is MentalStateKind.OTHER else None
            )
            cell = MentalStateCell(
                state, Engagement.ENGAGED if engaged else Engagement.NOT_ENGAGED
            )
            session.cell = cell
            ts = self._clamp(session.user_id, now)
            session.last_activity = ts
            self._emit(
                session.user_id, ts, EventKind.MENTAL_STATE_REPORT,
                session=session_id, **cell_to_payload(cell),
            )
            return self._start_round(session, ts)

    def _habit_candidates(self, user: str, key: HabitKey) -> bool:
        if key in self.bindings.get(user, {}):
            return True
        profile = self.profiles.get(user)
        return bool(profile and profile.values)

    def _pick_strategy(self, session: InterventionSession) -> Strategy | None:
        user = session.user_id
        shown = set(session.shown_strategies)
        strategy = next_strategy(self.ledger, user, session.cell, shown)
        if strategy is Strategy.SCAFFOLDING_HABITS:
            key = self._habit_key(session)
            if not self._habit_candidates(user, key):
                # nothing to scaffold with; fall back to the next-least-shown
                strategy = next_strategy(
                    self.ledger, user, session.cell,
                    shown | {Strategy.SCAFFOLDING_HABITS},
                )
        return strategy

    def _habit_key(self, session: InterventionSession) -> HabitKey:
        local = session.last_activity.astimezone(ZoneInfo(self._tz(session.user_id)))
        return HabitKey(session.cell.state.kind, session.location, local.hour)

    def _start_round(self, session: InterventionSession, ts: datetime) -> RoundPlan:
        user = session.user_id
        profile = self._profile(user)
        session.last_activity = ts
        habit = None
        habit_key = None
        if self.config.mode is EngineMode.SIMPLE:
            strategy = None
            variant = PromptVariant.SIMPLE
        else:
            strategy = self._pick_strategy(session)
            variant = PromptVariant.FULL
            if strategy is None:
                raise WrongStateError("no applicable strategy left to show")
            if strategy is Strategy.SCAFFOLDING_HABITS:
                habit, habit_key = self._select_habit_locked(
                    user, session.cell, session.location,
                    ts.astimezone(ZoneInfo(self._tz(user))).hour, ts,
                )
            self.ledger.record_shown(user, session.cell, strategy)
            session.shown_strategies.add(strategy)
        k = session.round_no + 1
        stats = compute_context_stats(self.log, user, ts, tz=profile.timezone)
        slots = PromptSlots(
            app_name=session.app,
            current_time=ts.astimezone(ZoneInfo(profile.timezone)),
            location_label=session.location,
            habitual_minutes_today=stats.habitual_minutes_today,
            minutes_since_last_habitual=stats.minutes_since_last_habitual,
            cell=session.cell,
            goals=list(profile.values),
            habit=habit,
            strategy=strategy,
            other_text=session.cell.state.other_text,
        )
        prompt = assemble_prompt(slots, self.templates, variant=variant)
        payload: dict[str, Any] = {"session": session.session_id, "round": k}
        if strategy is not None:
            payload["strategy"] = strategy.value
        if habit is not None and habit_key is not None:
            payload["habit"] = habit
            payload["habit_state"] = habit_key.state_kind.value
            payload["habit_location"] = habit_key.location
            payload["habit_hour"] = habit_key.hour
            session.habit_keys[k] = habit_key
            session.habits[k] = habit
        self._emit(user, ts, EventKind.PERSUASION_SHOWN, **payload)
        session.round_no = k
        session.current_strategy = strategy
        session.shown_at = ts
        session.state = SessionState.PERSUADING
        return RoundPlan(
            session_id=session.session_id,
            round_no=k,
            strategy=strategy,
            habit=habit,
            request=GenerationRequest(prompt=prompt, slots=slots, variant=variant),
        )

    def _rounds_remaining(self, session: InterventionSession) -> bool:
        applicable = applicable_strategies(session.cell)
        if self.config.mode is EngineMode.SIMPLE:
            return session.round_no < len(applicable)
        remaining = [s for s in applicable if s not in session.shown_strategies]
        if not remaining:
            return False
        if remaining == [Strategy.SCAFFOLDING_HABITS]:
            return self._habit_candidates(session.user_id, self._habit_key(session))
        return True

    def on_round_tick(
        self, session_id: str, now: datetime, round_no: int | None = None
    ) -> TickResult:
        """Advance the cadence: next round, exhaustion, or not yet.

        A tick aimed at a round that is no longer current is stale and
        ignored, which is how tick/decision races resolve.
        """
        with self._lock:
            session = self._session(session_id)
            if session.state is not SessionState.PERSUADING:
                raise WrongStateError(f"{session_id} is not persuading")
            if round_no is not None and round_no != session.round_no:
                return TickResult(TickKind.STALE)
            ts = self._clamp(session.user_id, now)
            due = session.shown_at + timedelta(seconds=self.config.round_cadence_s)
            if ts < due:
                return TickResult(TickKind.NOT_YET, retry_at=due)
            if session.round_no not in session.decided_rounds:
                # survived the whole window without quitting
                self._emit(
                    session.user_id, ts, EventKind.DECISION,
                    session=session_id, round=session.round_no,
                    decision=Decision.CONTINUE.value,
                )
                session.decided_rounds.add(session.round_no)
            if self._rounds_remaining(session):
                return TickResult(TickKind.NEXT_ROUND, plan=self._start_round(session, ts))
            session.outcome = Outcome.CONTINUED_TO_EXHAUSTION
            self._finish(session, ts)
            return TickResult(TickKind.EXHAUSTED)

    def submit_decision(self, session_id: str, decision: Decision, now: datetime) -> Outcome | None:
        with self._lock:
            session = self._session(session_id)
            if session.state is not SessionState.PERSUADING:
                raise WrongStateError(f"{session_id} is not persuading")
            ts = self._clamp(session.user_id, now)
            session.last_activity = ts
            self._emit(
                session.user_id, ts, EventKind.DECISION,
                session=session_id, round=session.round_no, decision=decision.value,
            )
            session.decided_rounds.add(session.round_no)
            if decision is Decision.QUIT:
                session.outcome = Outcome.QUIT_AT_ROUND
                session.quit_round = session.round_no
                self._finish(session, ts)
                return session.outcome
            return None

    def submit_feedback(
        self, session_id: str, round_no: int, feedback: Feedback, now: datetime
    ) -> None:
        with self._lock:
            session = self._session(session_id)
            if not 1 <= round_no <= session.round_no:
                raise UnknownRoundError(f"round {round_no} was never shown")
            ts = self._clamp(session.user_id, now)
            self._emit(
                session.user_id, ts, EventKind.FEEDBACK,
                session=session_id, round=round_no, feedback=feedback.value,
            )
            if feedback is Feedback.DOWN and round_no in session.habit_keys:
                key = session.habit_keys[round_no]
                self.bindings.get(session.user_id, {}).pop(key, None)

    # -- habits ----------------------------------------------------------

    def select_habit(
        self, user: str, cell: MentalStateCell, location: str, hour: int, now: datetime
    ) -> str:
        with self._lock:
            habit, _key = self._select_habit_locked(user, cell, location, hour, now)
            return habit

    def _select_habit_locked(
        self, user: str, cell: MentalStateCell, location: str, hour: int, now: datetime
    ) -> tuple[str, HabitKey]:
        key = HabitKey(cell.state.kind, location, hour)
        bindings = self.bindings.setdefault(user, {})
        binding = bindings.get(key)
        if binding is None:
            profile = self._profile(user)
            if not profile.values:
                raise NoActionsError(f"{user} has no value actions to scaffold")
            action = min(
                profile.values,
                key=lambda g: (
                    self.habit_usage.get((user, g.action), _EPOCH),
                    CATEGORY_ORDER.index(g.category),
                ),
            ).action
            binding = HabitBinding(key=key, habit=action, source=BindingSource.INITIALIZATION)
            bindings[key] = binding
        self.habit_usage[(user, binding.habit)] = now
        self.last_shown_key[user] = key
        return binding.habit, key

    def edit_habit(self, user: str, key: HabitKey, new_habit: str, now: datetime) -> HabitBinding:
        if not new_habit or not new_habit.strip():
            raise UnknownKeyError("habit text must be non-empty")
        with self._lock:
            bindings = self.bindings.setdefault(user, {})
            if key not in bindings and self.last_shown_key.get(user) != key:
                raise UnknownKeyError(f"no binding at {key.as_string()}")
            binding = HabitBinding(key=key, habit=new_habit, source=BindingSource.USER_EDIT)
            bindings[key] = binding
            ts = self._clamp(user, now)
            self._emit(
                user, ts, EventKind.HABIT_EDIT,
                habit_state=key.state_kind.value, habit_location=key.location,
                habit_hour=key.hour, habit=new_habit,
            )
            return binding

    # -- maintenance -------------------------------------------------------

    def sweep_orphans(self, now: datetime) -> list[str]:
        """Close sessions that sat in a waiting state past the timeout."""
        cutoff = timedelta(seconds=self.config.orphan_timeout_s)
        closed = []
        with self._lock:
            for sid in list(self.live.values()):
                session = self.sessions[sid]
                if session.last_activity is None:
                    continue
                if now - session.last_activity > cutoff:
                    session.timed_out = True
                    self._finish(session, session.last_activity)
                    closed.append(sid)
        return closed

    def session_view(self, session_id: str) -> dict[str, Any]:
        with self._lock:
            session = self._session(session_id)
            return {
                "session_id": session.session_id,
                "user": session.user_id,
                "app": session.app,
                "state": session.state.value,
                "intent": session.intent.value if session.intent else None,
                "cell": cell_to_payload(session.cell) if session.cell else None,
                "round": session.round_no,
                "strategy": session.current_strategy.value
                if session.current_strategy
                else None,
                "habit": session.habits.get(session.round_no),
                "habit_key": (
                    session.habit_keys[session.round_no].as_string()
                    if session.round_no in session.habit_keys
                    else None
                ),
                "shown_at": session.shown_at.isoformat() if session.shown_at else None,
                "next_round_at": (
                    (session.shown_at + timedelta(seconds=self.config.round_cadence_s)).isoformat()
                    if session.state is SessionState.PERSUADING and session.shown_at
                    else None
                ),
                "outcome": session.outcome.value if session.outcome else None,
                "timed_out": session.timed_out,
            }

    # -- snapshot / restore -------------------------------------------------

    def snapshot_state(self) -> dict[str, Any]:
        with self._lock:
            return {
                "schema_version": SCHEMA_VERSION,
                "profiles": {
                    uid: {
                        "timezone": p.timezone,
                        "blacklist": sorted(p.blacklist),
                        "values": [
                            {"category": g.category.value, "goal": g.goal, "action": g.action}
                            for g in p.values
                        ],
                    }
                    for uid, p in sorted(self.profiles.items())
                },
                "ledger": self.ledger.to_json(),
                "bindings": {
                    uid: [
                        {
                            "state": b.key.state_kind.value,
                            "location": b.key.location,
                            "hour": b.key.hour,
                            "habit": b.habit,
                            "source": b.source.value,
                        }
                        for b in sorted(rows.values(), key=lambda b: b.key.as_string())
                    ]
                    for uid, rows in sorted(self.bindings.items())
                    if rows
                },
                "habit_usage": [
                    {"user": user, "habit": habit, "ts": ts.isoformat()}
                    for (user, habit), ts in sorted(self.habit_usage.items())
                ],
                "last_shown_key": {
                    uid: key.as_string() for uid, key in sorted(self.last_shown_key.items())
                },
                "unlock_sessions": {
                    uid: {
                        "unlocked_at": u.unlocked_at.isoformat(),
                        "prompted_apps": sorted(u.prompted_apps),
                    }
                    for uid, u in sorted(self.unlocks.items())
                },
            }

    def restore_state(self, body: dict[str, Any]) -> None:
        try:
            version = body["schema_version"]
        except (TypeError, KeyError) as exc:
            raise CorruptSnapshotError("snapshot has no schema_version") from exc
        if version != SCHEMA_VERSION:
            raise SchemaMismatchError(
                f"snapshot schema {version} != supported {SCHEMA_VERSION}"
            )
        try:
            profiles = {
                uid: UserProfile(
                    user_id=uid,
                    values=tuple(
                        GoalEntry(GoalCategory(g["category"]), g["goal"], g["action"])
                        for g in row["values"]
                    ),
                    blacklist=frozenset(row["blacklist"]),
                    timezone=row["timezone"],
                )
                for uid, row in body["profiles"].items()
            }
            ledger = StrategyLedger.from_json(body["ledger"])
            bindings: dict[str, dict[HabitKey, HabitBinding]] = {}
            for uid, rows in body["bindings"].items():
                per_user = {}
                for row in rows:
                    key = HabitKey(
                        MentalStateKind(row["state"]), row["location"], row["hour"]
                    )
                    per_user[key] = HabitBinding(
                        key=key, habit=row["habit"], source=BindingSource(row["source"])
                    )
                bindings[uid] = per_user
            habit_usage = {
                (row["user"], row["habit"]): datetime.fromisoformat(row["ts"])
                for row in body["habit_usage"]
            }
            last_shown = {
                uid: HabitKey.from_string(raw)
                for uid, raw in body["last_shown_key"].items()
            }
            unlocks = {
                uid: UnlockSession(
                    user_id=uid,
                    unlocked_at=datetime.fromisoformat(row["unlocked_at"]),
                    prompted_apps=set(row["prompted_apps"]),
                )
                for uid, row in body.get("unlock_sessions", {}).items()
            }
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise CorruptSnapshotError(f"snapshot is malformed: {exc}") from exc
        with self._lock:
            self.profiles = profiles
            self.ledger = ledger
            self.bindings = bindings
            self.habit_usage = habit_usage
            self.last_shown_key = last_shown
            self.unlocks = unlocks

    def rebuild_from_log(self) -> None:
        """Recover ledger, bindings, and habit usage by replaying the event log.

        Used after a crash when no snapshot is available; profiles cannot be
        recovered this way because they never pass through the log.
        """
        with self._lock:
            ledger = StrategyLedger()
            bindings: dict[str, dict[HabitKey, HabitBinding]] = {}
            habit_usage: dict[tuple[str, str], datetime] = {}
            last_shown: dict[str, HabitKey] = {}
            session_cells: dict[str, MentalStateCell] = {}
            session_round_keys: dict[tuple[str, int], HabitKey] = {}
            for event in self.log.events:
                payload = event.payload
                if event.kind is EventKind.MENTAL_STATE_REPORT:
                    sid = payload.get("session")
                    if sid:
                        session_cells[sid] = cell_from_payload(payload)
                elif event.kind is EventKind.PERSUASION_SHOWN:
                    strategy_raw = payload.get("strategy")
                    cell = session_cells.get(payload.get("session"))
                    if strategy_raw and cell is not None:
                        ledger.record_shown(
                            event.user_id, cell, Strategy(strategy_raw)
                        )
                    habit = payload.get("habit")
                    if habit and "habit_state" in payload:
                        key = HabitKey(
                            MentalStateKind(payload["habit_state"]),
                            payload["habit_location"],
                            payload["habit_hour"],
                        )
                        per_user = bindings.setdefault(event.user_id, {})
                        if key not in per_user:
                            per_user[key] = HabitBinding(
                                key=key, habit=habit,
                                source=BindingSource.INITIALIZATION,
                            )
                        habit_usage[(event.user_id, habit)] = event.timestamp
                        last_shown[event.user_id] = key
                        sid = payload.get("session")
                        if sid is not None and "round" in payload:
                            session_round_keys[(sid, payload["round"])] = key
                elif event.kind is EventKind.HABIT_EDIT:
                    key = HabitKey(
                        MentalStateKind(payload["habit_state"]),
                        payload["habit_location"],
                        payload["habit_hour"],
                    )
                    bindings.setdefault(event.user_id, {})[key] = HabitBinding(
                        key=key, habit=payload["habit"], source=BindingSource.USER_EDIT
                    )
                elif event.kind is EventKind.FEEDBACK:
                    if payload.get("feedback") == Feedback.DOWN.value:
                        key = session_round_keys.get(
                            (payload.get("session"), payload.get("round"))
                        )
                        if key is not None:
                            bindings.get(event.user_id, {}).pop(key, None)
            self.ledger = ledger
            self.bindings = bindings
            self.habit_usage = habit_usage
            self.last_shown_key = last_shown

    def session_count(self) -> int:
        with self._lock:
            return len(self.sessions)
