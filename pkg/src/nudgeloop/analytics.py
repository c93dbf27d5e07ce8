"""Metrics over the event log: context stats, acceptance rates, scales, screening.

Every rate here is a plain fraction with an explicitly named numerator
and denominator; empty denominators yield None rather than zero so that
"no data" never masquerades as "never accepted".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, datetime, time, timedelta, timezone
from pathlib import Path
from typing import Any, Hashable, Sequence
from zoneinfo import ZoneInfo

from .events import (
    EventLog,
    Feedback,
    Intent,
    InterventionRecord,
    Outcome,
)
from .strategies import Engagement, MentalStateKind, Strategy

SCALE_DIR = Path(__file__).parent / "scales"


@dataclass(frozen=True)
class ContextStats:
    habitual_minutes_today: int
    minutes_since_last_habitual: int | None

    def __post_init__(self) -> None:
        if self.habitual_minutes_today < 0:
            raise ValueError("habitual_minutes_today must be non-negative")
        if self.minutes_since_last_habitual is not None and self.minutes_since_last_habitual < 0:
            raise ValueError("minutes_since_last_habitual must be non-negative")


def _local_midnight(now: datetime, tz: str) -> datetime:
    zone = ZoneInfo(tz)
    local = now.astimezone(zone)
    return datetime.combine(local.date(), time.min, tzinfo=zone)


def compute_context_stats(
    log: EventLog, user: str, now: datetime, tz: str = "UTC"
) -> ContextStats:
    """Habitual usage so far today plus minutes since the previous habitual open.

    "Today" runs midnight to midnight in the user's local timezone. An
    interval still open at `now` counts toward today's minutes once it is
    categorized habitual, but it is not a *previous* open, so it never
    feeds minutes_since_last_habitual.
    """
    if now.tzinfo is None:
        now = now.replace(tzinfo=timezone.utc)
    midnight = _local_midnight(now, tz)
    habitual_seconds = 0.0
    last_open: datetime | None = None
    for interval in log.intervals(user):
        if interval.intent is not Intent.HABITUAL:
            continue
        end = interval.close_ts if interval.close_ts is not None else now
        start = max(interval.open_ts, midnight)
        stop = min(end, now)
        if stop > start:
            habitual_seconds += (stop - start).total_seconds()
        is_open_now = interval.close_ts is None or interval.close_ts > now
        if not is_open_now and midnight <= interval.open_ts <= now:
            if last_open is None or interval.open_ts > last_open:
                last_open = interval.open_ts
    since = None
    if last_open is not None:
        since = int((now - last_open).total_seconds() // 60)
    return ContextStats(
        habitual_minutes_today=int(habitual_seconds // 60),
        minutes_since_last_habitual=since,
    )


# -- acceptance metrics ---------------------------------------------


def _terminated(records: Sequence[InterventionRecord]) -> list[InterventionRecord]:
    return [r for r in records if r.terminated]


def overall_acceptance_rate(records: Sequence[InterventionRecord]) -> float | None:
    """(exits at intent + quits during persuasion) / (habitual visits + exits)."""
    done = _terminated(records)
    exits = sum(1 for r in done if r.outcome is Outcome.EXIT_AT_INTENT)
    quits = sum(1 for r in done if r.outcome is Outcome.QUIT_AT_ROUND)
    habitual = sum(1 for r in done if r.intent is Intent.HABITUAL)
    denominator = habitual + exits
    if denominator == 0:
        return None
    return (exits + quits) / denominator


def persuasion_acceptance_rate(
    records: Sequence[InterventionRecord], group_by: str = "none"
) -> dict[Hashable, float]:
    """Acceptance during persuasion, sliced by the requested key.

    group_by "none": quits after persuasion / records reaching persuasion.
    group_by "round": quit-at-round-k / records whose round k was shown.
    group_by "strategy" | "cell" | "engagement": quits attributed to the
    key / rounds shown under the key. Keys with nothing shown are absent.
    """
    persuaded = [r for r in _terminated(records) if r.reached_persuasion]
    if group_by == "none":
        if not persuaded:
            return {}
        quits = sum(1 for r in persuaded if r.outcome is Outcome.QUIT_AT_ROUND)
        return {"all": quits / len(persuaded)}
    numerator: dict[Hashable, int] = {}
    denominator: dict[Hashable, int] = {}
    if group_by == "round":
        for record in persuaded:
            for entry in record.rounds:
                denominator[entry.round_no] = denominator.get(entry.round_no, 0) + 1
            if record.outcome is Outcome.QUIT_AT_ROUND:
                k = record.quit_round
                numerator[k] = numerator.get(k, 0) + 1
    elif group_by in ("strategy", "cell", "engagement"):
        for record in persuaded:
            for entry in record.rounds:
                key = _group_key(record, entry, group_by)
                denominator[key] = denominator.get(key, 0) + 1
            if record.outcome is Outcome.QUIT_AT_ROUND:
                quit_entry = next(
                    (e for e in record.rounds if e.round_no == record.quit_round), None
                )
                if quit_entry is not None:
                    key = _group_key(record, quit_entry, group_by)
                    numerator[key] = numerator.get(key, 0) + 1
    else:
        raise ValueError(f"unknown group_by: {group_by!r}")
    return {
        key: numerator.get(key, 0) / shown
        for key, shown in sorted(denominator.items(), key=lambda kv: str(kv[0]))
        if shown > 0
    }


def _group_key(record: InterventionRecord, entry, group_by: str) -> Hashable:
    if group_by == "strategy":
        return entry.strategy
    if group_by == "cell":
        if record.cell is None:
            return None
        return (record.cell.state.kind, record.cell.engagement)
    return record.cell.engagement if record.cell is not None else None


def thumb_rates(
    records: Sequence[InterventionRecord],
) -> tuple[float | None, float | None]:
    """Per-intervention thumb rates over interventions that reached persuasion."""
    persuaded = [r for r in _terminated(records) if r.reached_persuasion]
    if not persuaded:
        return (None, None)
    ups = sum(1 for r in persuaded if any(e.feedback is Feedback.UP for e in r.rounds))
    downs = sum(1 for r in persuaded if any(e.feedback is Feedback.DOWN for e in r.rounds))
    return (ups / len(persuaded), downs / len(persuaded))


# -- usage summary ---------------------------------------------------


@dataclass(frozen=True)
class Period:
    start_day: date
    end_day: date

    def __post_init__(self) -> None:
        if self.end_day < self.start_day:
            raise ValueError("period ends before it starts")

    @property
    def days(self) -> int:
        return (self.end_day - self.start_day).days + 1


@dataclass(frozen=True)
class DailyUsageSummary:
    days: int
    total_opens: int
    opens_per_day: float
    usage_hours_per_day: float
    opens_by_intent: dict[Intent, int] = field(default_factory=dict)
    habitual_proportion: float | None = None


def usage_summary(
    log: EventLog, user: str, period: Period, tz: str = "UTC"
) -> DailyUsageSummary:
    zone = ZoneInfo(tz)
    start = datetime.combine(period.start_day, time.min, tzinfo=zone)
    end = datetime.combine(period.end_day + timedelta(days=1), time.min, tzinfo=zone)
    opens = 0
    usage_seconds = 0.0
    by_intent: dict[Intent, int] = {}
    for interval in log.intervals(user):
        if start <= interval.open_ts < end:
            opens += 1
            if interval.intent is not None:
                by_intent[interval.intent] = by_intent.get(interval.intent, 0) + 1
        close = interval.close_ts
        if close is None:
            continue
        overlap_start = max(interval.open_ts, start)
        overlap_end = min(close, end)
        if overlap_end > overlap_start:
            usage_seconds += (overlap_end - overlap_start).total_seconds()
    categorized = sum(by_intent.values())
    proportion = None
    if categorized:
        proportion = by_intent.get(Intent.HABITUAL, 0) / categorized
    return DailyUsageSummary(
        days=period.days,
        total_opens=opens,
        opens_per_day=opens / period.days,
        usage_hours_per_day=usage_seconds / 3600.0 / period.days,
        opens_by_intent=by_intent,
        habitual_proportion=proportion,
    )


# -- scale scoring ---------------------------------------------------


@dataclass(frozen=True)
class ScaleDefinition:
    name: str
    item_count: int
    response_min: int
    response_max: int
    reverse_items: tuple[int, ...] = ()  # 1-based positions

    @property
    def minimum(self) -> int:
        return self.item_count * self.response_min

    @property
    def maximum(self) -> int:
        return self.item_count * self.response_max


@dataclass(frozen=True)
class ScaleResponse:
    scale: str
    item_scores: tuple[int, ...]
    administered_at: datetime


class ItemCountMismatch(ValueError):
    pass


class OutOfRange(ValueError):
    pass


def load_scale_definition(name: str) -> ScaleDefinition:
    body = json.loads((SCALE_DIR / f"{name}.json").read_text(encoding="utf-8"))
    return ScaleDefinition(
        name=body["name"],
        item_count=body["item_count"],
        response_min=body["response_min"],
        response_max=body["response_max"],
        reverse_items=tuple(body.get("reverse_items", [])),
    )


def score_scale(response: ScaleResponse, definition: ScaleDefinition) -> int:
    """Sum of item scores after reverse-keying the flagged items."""
    scores = response.item_scores
    if len(scores) != definition.item_count:
        raise ItemCountMismatch(
            f"{definition.name}: got {len(scores)} items, expected {definition.item_count}"
        )
    flip = definition.response_min + definition.response_max
    total = 0
    for position, raw in enumerate(scores, start=1):
        if not definition.response_min <= raw <= definition.response_max:
            raise OutOfRange(f"item {position}: {raw} outside scale range")
        total += flip - raw if position in definition.reverse_items else raw
    return total


# -- participant screening -------------------------------------------


@dataclass(frozen=True)
class ParticipantApplication:
    sas_subscore: float
    willing: bool
    weekly_hours: float
    has_long_travel: bool


@dataclass(frozen=True)
class ScreeningDecision:
    include: bool
    reason: str | None = None


def screen_participant(application: ParticipantApplication) -> ScreeningDecision:
    """Apply the four exclusion rules in order; the first failure names the reason."""
    if application.sas_subscore < 15:
        return ScreeningDecision(False, "sas_subscore below 15")
    if not application.willing:
        return ScreeningDecision(False, "not willing to participate")
    if application.weekly_hours < 20:
        return ScreeningDecision(False, "weekly usage below 20 hours")
    if application.has_long_travel:
        return ScreeningDecision(False, "long travel planned")
    return ScreeningDecision(True)


# -- report assembly -------------------------------------------------


def _rate_table_json(table: dict[Hashable, float]) -> dict[str, float]:
    out = {}
    for key, value in table.items():
        if isinstance(key, tuple):
            out["/".join(part.value for part in key)] = value
        elif hasattr(key, "value"):
            out[key.value] = value
        else:
            out[str(key)] = value
    return out


def build_report(
    log: EventLog, user: str, period: Period, tz: str = "UTC"
) -> dict[str, Any]:
    """Everything the report CLI and endpoint expose, as plain JSON types."""
    records = log.records(user)
    up_rate, down_rate = thumb_rates(records)
    summary = usage_summary(log, user, period, tz=tz)
    return {
        "user": user,
        "period": {
            "start": period.start_day.isoformat(),
            "end": period.end_day.isoformat(),
            "days": period.days,
        },
        "overall_acceptance": overall_acceptance_rate(records),
        "persuasion_acceptance": {
            group: _rate_table_json(persuasion_acceptance_rate(records, group))
            for group in ("none", "round", "strategy", "cell", "engagement")
        },
        "thumb_rates": {"up": up_rate, "down": down_rate},
        "usage": {
            "days": summary.days,
            "total_opens": summary.total_opens,
            "opens_per_day": summary.opens_per_day,
            "usage_hours_per_day": summary.usage_hours_per_day,
            "opens_by_intent": {k.value: v for k, v in summary.opens_by_intent.items()},
            "habitual_proportion": summary.habitual_proportion,
        },
    }


def report_rows(report: dict[str, Any]) -> list[tuple[str, str, str]]:
    """Flatten a report into (metric, key, value) rows for CSV export."""
    rows: list[tuple[str, str, str]] = []

    def fmt(value: Any) -> str:
        if value is None:
            return ""
        if isinstance(value, float):
            return f"{value:.6f}"
        return str(value)

    rows.append(("overall_acceptance", "", fmt(report["overall_acceptance"])))
    for group, table in report["persuasion_acceptance"].items():
        for key, value in table.items():
            rows.append((f"persuasion_acceptance/{group}", key, fmt(value)))
    rows.append(("thumb_rate", "up", fmt(report["thumb_rates"]["up"])))
    rows.append(("thumb_rate", "down", fmt(report["thumb_rates"]["down"])))
    usage = report["usage"]
    rows.append(("usage", "total_opens", fmt(usage["total_opens"])))
    rows.append(("usage", "opens_per_day", fmt(usage["opens_per_day"])))
    rows.append(("usage", "usage_hours_per_day", fmt(usage["usage_hours_per_day"])))
    for intent, count in usage["opens_by_intent"].items():
        rows.append(("usage/opens_by_intent", intent, fmt(count)))
    rows.append(("usage", "habitual_proportion", fmt(usage["habitual_proportion"])))
    return rows
