"""Seeded persona simulation driving the real intervention engine.

Personas open a watched app at a Poisson daily rate on a virtual clock,
answer the intent and mental-state dialogs from fixed probability
tables, and quit each persuasion round with a strategy-dependent
probability. Because every shown round is an independent Bernoulli
trial and a session that never quits always exhausts the applicable
strategy set, the session-level quit probability has a closed form that
the Monte Carlo run must converge to.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from math import sqrt
from typing import Mapping

import numpy as np

from .analytics import Period, build_report, overall_acceptance_rate, persuasion_acceptance_rate
from .config import EngineConfig, EngineMode
from .events import Decision, Feedback, Intent, Outcome
from .orchestrator import Engine, OpenAction, TickKind
from .prompts import GoalCategory, GoalEntry
from .strategies import (
    Engagement,
    MentalState,
    MentalStateCell,
    MentalStateKind,
    Strategy,
    applicable_strategies,
)

WATCHED_APP = "picfeed"

# the 3 named feelings x 2 engagement answers personas draw from
CELL_ORDER: tuple[tuple[MentalStateKind, Engagement], ...] = tuple(
    (kind, engagement)
    for kind in (MentalStateKind.BOREDOM, MentalStateKind.STRESS, MentalStateKind.INERTIA)
    for engagement in (Engagement.ENGAGED, Engagement.NOT_ENGAGED)
)

INTENT_ORDER = (Intent.HABITUAL, Intent.INSTRUMENTAL, Intent.RELAX, Intent.EXIT_AT_INTENT)

DEFAULT_GOALS = [
    GoalEntry(GoalCategory.CAREER, "finish the quarterly report", "write one section each morning"),
    GoalEntry(GoalCategory.HEALTH, "run a 10k in autumn", "jog twice a week after work"),
    GoalEntry(GoalCategory.LIFE, "call family more often", "phone home on sunday evenings"),
    GoalEntry(GoalCategory.HOBBIES, "learn three new songs", "practice guitar for ten minutes"),
]


class InvalidConfigError(ValueError):
    pass


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


@dataclass(frozen=True)
class Persona:
    name: str
    daily_open_rate: float = 40.0
    intent_mix: tuple[float, float, float, float] = (0.55, 0.2, 0.15, 0.1)
    cell_mix: tuple[float, ...] = (0.2, 0.15, 0.2, 0.15, 0.15, 0.15)
    base_quit_prob: float = 0.15
    strategy_affinity: Mapping[Strategy, float] = field(default_factory=dict)
    thumb_up_prob: float = 0.06
    thumb_down_prob: float = 0.03
    values: tuple[GoalEntry, ...] = tuple(DEFAULT_GOALS)
    blacklist: frozenset[str] = frozenset({WATCHED_APP})
    location: str = "home"
    tz: str = "UTC"

    def __post_init__(self) -> None:
        if self.daily_open_rate <= 0:
            raise InvalidConfigError("daily_open_rate must be positive")
        if len(self.cell_mix) != len(CELL_ORDER):
            raise InvalidConfigError("cell_mix must cover the 6 state/engagement cells")
        for mix in (self.intent_mix, self.cell_mix):
            if any(not 0.0 <= p <= 1.0 for p in mix):
                raise InvalidConfigError("mix entries must be probabilities")
            if abs(sum(mix) - 1.0) > 1e-9:
                raise InvalidConfigError("mix must sum to 1")
        if not 0.0 < self.base_quit_prob <= 1.0:
            raise InvalidConfigError("base_quit_prob must be in (0, 1]")
        if not 0.0 <= self.thumb_up_prob + self.thumb_down_prob <= 1.0:
            raise InvalidConfigError("thumb probabilities must sum to at most 1")
        if not self.blacklist:
            raise InvalidConfigError("persona needs at least one watched app")

    def quit_prob(self, strategy: Strategy | None) -> float:
        if strategy is None:
            return self.base_quit_prob
        return _clamp01(self.base_quit_prob * self.strategy_affinity.get(strategy, 1.0))

    def cell_at(self, index: int) -> MentalStateCell:
        kind, engagement = CELL_ORDER[index]
        return MentalStateCell(MentalState(kind), engagement)


@dataclass(frozen=True)
class ScenarioConfig:
    personas: tuple[Persona, ...]
    days: int = 7
    mode: EngineMode = EngineMode.FULL
    seed: int = 0
    round_cadence_s: float = 120.0
    start: datetime = datetime(2024, 3, 1, 0, 0, tzinfo=timezone.utc)

    def __post_init__(self) -> None:
        if self.days < 1:
            raise InvalidConfigError("days must be at least 1")
        if not self.personas:
            raise InvalidConfigError("at least one persona required")
        names = [p.name for p in self.personas]
        if len(names) != len(set(names)):
            raise InvalidConfigError("persona names must be unique")


def persona_decide(persona: Persona, stage: str, rng, strategy: Strategy | None = None):
    """One draw from the persona's tables.

    stage "intent" returns an Intent, "mental_state" returns the cell,
    and "round" returns a Decision for the currently shown strategy.
    """
    if stage == "intent":
        p = np.asarray(persona.intent_mix, dtype=float)
        return INTENT_ORDER[int(rng.choice(len(INTENT_ORDER), p=p / p.sum()))]
    if stage == "mental_state":
        p = np.asarray(persona.cell_mix, dtype=float)
        return persona.cell_at(int(rng.choice(len(CELL_ORDER), p=p / p.sum())))
    if stage == "round":
        quits = rng.random() < persona.quit_prob(strategy)
        return Decision.QUIT if quits else Decision.CONTINUE
    raise InvalidConfigError(f"unknown stage {stage!r}")


def expected_persuasion_acceptance(persona: Persona, mode: EngineMode) -> float | None:
    """Closed-form session quit probability, averaged over the cell mix.

    Order of strategies within a session does not matter: the session
    quits unless every applicable strategy's round fails to convince.
    """
    if mode is EngineMode.BASELINE:
        return None
    weights = np.asarray(persona.cell_mix, dtype=float)
    weights = weights / weights.sum()
    total = 0.0
    for index, weight in enumerate(weights):
        cell = persona.cell_at(index)
        stay = 1.0
        for strategy in applicable_strategies(cell):
            shown = strategy if mode is EngineMode.FULL else None
            stay *= 1.0 - persona.quit_prob(shown)
        total += weight * (1.0 - stay)
    return float(total)


@dataclass
class PersonaOutcome:
    persona: Persona
    opens: int
    persuaded: int
    quits: int
    mc_acceptance: float | None
    expected_acceptance: float | None

    @property
    def standard_error(self) -> float | None:
        if self.expected_acceptance is None or self.persuaded == 0:
            return None
        p = self.expected_acceptance
        return sqrt(p * (1.0 - p) / self.persuaded)


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    engine: Engine
    outcomes: list[PersonaOutcome]

    @property
    def overall_acceptance(self) -> float | None:
        return overall_acceptance_rate(self.engine.log.records())

    @property
    def persuasion_acceptance(self) -> float | None:
        table = persuasion_acceptance_rate(self.engine.log.records())
        return table.get("all")

    def period(self) -> Period:
        start = self.config.start.date()
        return Period(start, start + timedelta(days=self.config.days - 1))

    def reports(self) -> dict[str, dict]:
        period = self.period()
        return {
            p.name: build_report(self.engine.log, p.name, period, tz=p.tz)
            for p in self.config.personas
        }


class _PersonaRun:
    """One persona's stream of visits against a shared engine."""

    def __init__(self, persona: Persona, engine: Engine, config: ScenarioConfig, seed):
        self.persona = persona
        self.engine = engine
        self.config = config
        streams = seed.spawn(5)
        self.intent_rng = np.random.Generator(np.random.PCG64(streams[0]))
        self.cell_rng = np.random.Generator(np.random.PCG64(streams[1]))
        self.decision_rng = np.random.Generator(np.random.PCG64(streams[2]))
        self.feedback_rng = np.random.Generator(np.random.PCG64(streams[3]))
        self.timing_rng = np.random.Generator(np.random.PCG64(streams[4]))
        self.clock = config.start
        self.opens = 0

    def run_day(self, day: int) -> None:
        count = int(self.timing_rng.poisson(self.persona.daily_open_rate))
        day_start = self.config.start + timedelta(days=day)
        # opens land between 08:00 and 23:00 local
        offsets = np.sort(self.timing_rng.uniform(8 * 3600, 23 * 3600, size=count))
        for offset in offsets:
            self.run_visit(day_start + timedelta(seconds=float(offset)))

    def run_visit(self, scheduled: datetime) -> None:
        persona, engine = self.persona, self.engine
        user = persona.name
        t = max(scheduled, self.clock + timedelta(seconds=5))
        engine.on_screen_unlock(user, t)
        t += timedelta(seconds=2)
        opened = engine.on_app_open(user, WATCHED_APP, t, location=persona.location)
        assert opened.action is OpenAction.SHOW_INTENT_DIALOG
        sid = opened.session_id
        self.opens += 1
        intent = persona_decide(persona, "intent", self.intent_rng)
        t += timedelta(seconds=2)
        engine.submit_intent(sid, intent, t)
        if intent is Intent.EXIT_AT_INTENT:
            t += timedelta(seconds=2)
            engine.on_app_close(user, WATCHED_APP, t)
        elif intent in (Intent.INSTRUMENTAL, Intent.RELAX):
            t += timedelta(seconds=int(self.timing_rng.integers(60, 900)))
            engine.on_app_close(user, WATCHED_APP, t)
        elif self.config.mode is EngineMode.BASELINE:
            t += timedelta(seconds=int(self.timing_rng.integers(180, 1200)))
            engine.on_app_close(user, WATCHED_APP, t)
        else:
            t = self._run_persuasion(sid, t)
        t += timedelta(seconds=1)
        engine.on_screen_off(user, t)
        self.clock = t

    def _run_persuasion(self, sid: str, t: datetime) -> datetime:
        persona, engine = self.persona, self.engine
        user = persona.name
        cell = persona_decide(persona, "mental_state", self.cell_rng)
        t += timedelta(seconds=2)
        plan = engine.submit_mental_state(
            sid,
            cell.engagement is Engagement.ENGAGED,
            "none" if cell.state.kind is MentalStateKind.INERTIA else cell.state.kind.value,
            t,
        )
        cadence = self.config.round_cadence_s
        while True:
            shown_at = engine.sessions[sid].shown_at
            draw = self.feedback_rng.random()
            if draw < persona.thumb_up_prob:
                engine.submit_feedback(sid, plan.round_no, Feedback.UP, shown_at + timedelta(seconds=4))
            elif draw < persona.thumb_up_prob + persona.thumb_down_prob:
                engine.submit_feedback(sid, plan.round_no, Feedback.DOWN, shown_at + timedelta(seconds=4))
            decision = persona_decide(persona, "round", self.decision_rng, strategy=plan.strategy)
            if decision is Decision.QUIT:
                quit_at = shown_at + timedelta(
                    seconds=float(self.decision_rng.uniform(5.0, max(6.0, cadence - 10.0)))
                )
                if self.decision_rng.random() < 0.5:
                    engine.submit_decision(sid, Decision.QUIT, quit_at)
                    t = quit_at + timedelta(seconds=2)
                else:
                    # quitting by simply leaving the app
                    t = quit_at
                engine.on_app_close(user, WATCHED_APP, t)
                return t
            tick_at = shown_at + timedelta(seconds=cadence)
            result = engine.on_round_tick(sid, tick_at, round_no=plan.round_no)
            if result.kind is TickKind.EXHAUSTED:
                t = tick_at + timedelta(seconds=int(self.timing_rng.integers(30, 300)))
                engine.on_app_close(user, WATCHED_APP, t)
                return t
            assert result.kind is TickKind.NEXT_ROUND
            plan = result.plan


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    engine = Engine(
        EngineConfig(mode=config.mode, round_cadence_s=config.round_cadence_s)
    )
    root = np.random.SeedSequence(config.seed)
    children = root.spawn(len(config.personas))
    runs = []
    for persona, child in zip(config.personas, children):
        engine.initialize_profile(
            persona.name, list(persona.values), set(persona.blacklist), tz=persona.tz
        )
        runs.append(_PersonaRun(persona, engine, config, child))
    for day in range(config.days):
        for run in runs:
            run.run_day(day)
    outcomes = []
    for persona, run in zip(config.personas, runs):
        records = engine.log.records(persona.name)
        persuaded = [r for r in records if r.terminated and r.rounds]
        quits = sum(1 for r in persuaded if r.outcome is Outcome.QUIT_AT_ROUND)
        mc = quits / len(persuaded) if persuaded else None
        outcomes.append(
            PersonaOutcome(
                persona=persona,
                opens=run.opens,
                persuaded=len(persuaded),
                quits=quits,
                mc_acceptance=mc,
                expected_acceptance=expected_persuasion_acceptance(persona, config.mode),
            )
        )
    return ScenarioResult(config=config, engine=engine, outcomes=outcomes)


def make_demo_personas() -> list[Persona]:
    """Five temperaments spanning the affinity range used in the demos."""
    return [
        Persona(
            name="sim-anna",
            daily_open_rate=42.0,
            intent_mix=(0.6, 0.18, 0.12, 0.1),
            cell_mix=(0.3, 0.2, 0.1, 0.15, 0.15, 0.1),
            base_quit_prob=0.12,
            strategy_affinity={
                Strategy.UNDERSTANDING: 1.8,
                Strategy.COMFORTING: 1.5,
                Strategy.EVOKING: 2.2,
                Strategy.SCAFFOLDING_HABITS: 2.0,
            },
        ),
        Persona(
            name="sim-bram",
            daily_open_rate=35.0,
            intent_mix=(0.5, 0.25, 0.15, 0.1),
            cell_mix=(0.1, 0.15, 0.3, 0.2, 0.1, 0.15),
            base_quit_prob=0.2,
            strategy_affinity={
                Strategy.UNDERSTANDING: 1.5,
                Strategy.COMFORTING: 2.5,
                Strategy.EVOKING: 1.7,
                Strategy.SCAFFOLDING_HABITS: 1.6,
            },
        ),
        Persona(
            name="sim-chen",
            daily_open_rate=50.0,
            intent_mix=(0.65, 0.15, 0.1, 0.1),
            cell_mix=(0.15, 0.2, 0.2, 0.15, 0.15, 0.15),
            base_quit_prob=0.1,
            strategy_affinity={
                Strategy.UNDERSTANDING: 2.0,
                Strategy.COMFORTING: 1.9,
                Strategy.EVOKING: 2.5,
                Strategy.SCAFFOLDING_HABITS: 2.3,
            },
        ),
        Persona(
            name="sim-dara",
            daily_open_rate=38.0,
            intent_mix=(0.55, 0.2, 0.15, 0.1),
            cell_mix=(0.05, 0.1, 0.35, 0.25, 0.1, 0.15),
            base_quit_prob=0.18,
            strategy_affinity={
                Strategy.UNDERSTANDING: 1.6,
                Strategy.COMFORTING: 1.8,
                Strategy.EVOKING: 1.5,
                Strategy.SCAFFOLDING_HABITS: 2.4,
            },
            thumb_up_prob=0.12,
            thumb_down_prob=0.05,
        ),
        Persona(
            name="sim-emil",
            daily_open_rate=45.0,
            intent_mix=(0.45, 0.25, 0.2, 0.1),
            cell_mix=(0.25, 0.1, 0.15, 0.2, 0.2, 0.1),
            base_quit_prob=0.15,
            strategy_affinity={
                Strategy.UNDERSTANDING: 2.1,
                Strategy.COMFORTING: 1.7,
                Strategy.EVOKING: 1.9,
                Strategy.SCAFFOLDING_HABITS: 1.5,
            },
            thumb_up_prob=0.04,
            thumb_down_prob=0.06,
        ),
    ]
