"""Four-part prompt assembly from word slots.

The prompt that goes to the language model is built from four ordered
sections: task setup, description of the current contexts, prompt
optimization, and a description of the persuasion strategy. Section
templates live as UTF-8 text files in a template directory and are
reloaded when their mtime changes, so a running server picks up edits.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path

from .strategies import Engagement, MentalStateCell, MentalStateKind, Strategy

DEFAULT_TEMPLATE_DIR = Path(__file__).parent / "template"
TIME_FORMAT = "%Y-%m-%d %H:%M"

# Default cap on assembled prompt length; keeps backend cost bounded.
PROMPT_CHAR_CAP = 4000


class GoalCategory(str, Enum):
    CAREER = "career"
    HEALTH = "health"
    LIFE = "life"
    HOBBIES = "hobbies"


CATEGORY_ORDER: tuple[GoalCategory, ...] = (
    GoalCategory.CAREER,
    GoalCategory.HEALTH,
    GoalCategory.LIFE,
    GoalCategory.HOBBIES,
)


@dataclass(frozen=True)
class GoalEntry:
    category: GoalCategory
    goal: str
    action: str

    def __post_init__(self) -> None:
        if not self.goal or not self.action:
            raise ValueError("goal entries need non-empty goal and action text")


class PromptVariant(str, Enum):
    FULL = "full"
    # Same structure minus the mental-state module and the per-strategy
    # description; the closing instruction is a generic persuasion ask.
    SIMPLE = "simple"


@dataclass
class PromptSlots:
    app_name: str
    current_time: datetime
    location_label: str
    habitual_minutes_today: int
    minutes_since_last_habitual: int | None
    cell: MentalStateCell
    goals: list[GoalEntry] = field(default_factory=list)
    habit: str | None = None
    strategy: Strategy | None = None
    other_text: str | None = None


@dataclass(frozen=True)
class AssembledPrompt:
    task_setup: str
    context: str
    optimization: str
    strategy_description: str

    @property
    def full_text(self) -> str:
        return "\n".join(
            (self.task_setup, self.context, self.optimization, self.strategy_description)
        )

    @property
    def sections(self) -> tuple[str, str, str, str]:
        return (self.task_setup, self.context, self.optimization, self.strategy_description)


class PromptError(ValueError):
    pass


class MissingSlot(PromptError):
    """A slot the chosen strategy requires was not provided."""


class InvalidSlot(PromptError):
    """A slot value is out of range or contains reserved characters."""


class ViolationKind(str, Enum):
    UNFILLED_SLOT = "unfilled_slot"
    EMPTY_SECTION = "empty_section"
    TOO_LONG = "too_long"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    detail: str


# One canonical sentence per cell of the grid, plus two variants that embed
# a free-text feeling verbatim. Keyed by (kind, engagement).
_STATE_SENTENCES: dict[tuple[MentalStateKind, Engagement], str] = {
    (MentalStateKind.BOREDOM, Engagement.ENGAGED): (
        "The user is engaged in an activity that feels unchallenging or "
        "repetitive, and they are bored by it."
    ),
    (MentalStateKind.BOREDOM, Engagement.NOT_ENGAGED): (
        "The user is not engaged in any activity right now and feels bored, "
        "with idle time and nothing stimulating to do."
    ),
    (MentalStateKind.STRESS, Engagement.ENGAGED): (
        "The user is engaged in an activity that feels demanding or beyond "
        "their control, and they are stressed about it."
    ),
    (MentalStateKind.STRESS, Engagement.NOT_ENGAGED): (
        "The user is not engaged in any activity right now and feels "
        "stressed, uncertain about how things will turn out."
    ),
    (MentalStateKind.INERTIA, Engagement.ENGAGED): (
        "The user is engaged in an activity but feels reluctant to keep at "
        "it or to move on to the next task, without any strong negative "
        "emotion."
    ),
    (MentalStateKind.INERTIA, Engagement.NOT_ENGAGED): (
        "The user is not engaged in any activity and feels reluctant to "
        "start one, stuck in an idle moment without any strong negative "
        "emotion."
    ),
    (MentalStateKind.OTHER, Engagement.ENGAGED): (
        "The user is engaged in an activity and describes a negative "
        "feeling in their own words: {other_text}."
    ),
    (MentalStateKind.OTHER, Engagement.NOT_ENGAGED): (
        "The user is not engaged in any activity and describes a negative "
        "feeling in their own words: {other_text}."
    ),
}


def describe_mental_state(cell: MentalStateCell, other_text: str | None = None) -> str:
    """Canonical one-sentence description of a mental-state cell."""
    sentence = _STATE_SENTENCES[cell.key]
    if cell.state.kind is MentalStateKind.OTHER:
        text = other_text or cell.state.other_text
        if not text:
            raise MissingSlot("an 'other' mental state needs its free text")
        return sentence.format(other_text=text)
    return sentence


class TemplateStore:
    """Loads section templates from disk, re-reading files whose mtime changed."""

    def __init__(self, directory: str | os.PathLike[str] = DEFAULT_TEMPLATE_DIR):
        self.directory = Path(directory)
        self._cache: dict[str, tuple[float, str]] = {}

    def get(self, name: str) -> str:
        path = self.directory / f"{name}.txt"
        mtime = path.stat().st_mtime
        cached = self._cache.get(name)
        if cached is None or cached[0] != mtime:
            self._cache[name] = (mtime, path.read_text(encoding="utf-8"))
        return self._cache[name][1]


def render_slot_values(slots: PromptSlots) -> dict[str, str]:
    """How each slot field reads once embedded in prompt text.

    Shared by assembly and by the substring-presence checks, so the two
    always agree on the rendering.
    """
    values = {
        "app_name": slots.app_name,
        "current_time": slots.current_time.strftime(TIME_FORMAT),
        "location_label": slots.location_label,
        "habitual_minutes_today": str(slots.habitual_minutes_today),
        "minutes_since_last_habitual": _since_last_line(slots.minutes_since_last_habitual),
        "cell": describe_mental_state(slots.cell, slots.other_text),
    }
    if slots.goals:
        values["goals"] = _goals_block(slots.goals)
    if slots.habit is not None:
        values["habit"] = slots.habit
    if slots.other_text is not None:
        values["other_text"] = slots.other_text
    if slots.strategy is not None:
        values["strategy"] = slots.strategy.value.replace("_", " ")
    return values


def _since_last_line(minutes: int | None) -> str:
    if minutes is None:
        return "This is their first habitual phone check today."
    return f"Their last habitual phone check was {minutes} minutes ago."


def _goals_block(goals: list[GoalEntry]) -> str:
    ordered = sorted(goals, key=lambda g: CATEGORY_ORDER.index(g.category))
    return "\n".join(
        f"- {g.category.value}: the user wants to {g.goal}; their planned action is to {g.action}."
        for g in ordered
    )


_TEXT_FIELDS = ("app_name", "location_label", "habit", "other_text")


def _check_slots(slots: PromptSlots, variant: PromptVariant) -> None:
    if slots.habitual_minutes_today < 0:
        raise InvalidSlot("habitual_minutes_today must be non-negative")
    if slots.minutes_since_last_habitual is not None and slots.minutes_since_last_habitual < 0:
        raise InvalidSlot("minutes_since_last_habitual must be non-negative")
    for name in _TEXT_FIELDS:
        value = getattr(slots, name)
        if value and ("{" in value or "}" in value):
            raise InvalidSlot(f"{name} may not contain brace characters")
    for goal in slots.goals:
        for text in (goal.goal, goal.action):
            if "{" in text or "}" in text:
                raise InvalidSlot("goal text may not contain brace characters")
    if variant is PromptVariant.FULL:
        if slots.strategy is None:
            raise MissingSlot("the full prompt needs a persuasion strategy")
        if slots.strategy is Strategy.SCAFFOLDING_HABITS and not slots.habit:
            raise MissingSlot("scaffolding habits needs a habit to suggest")
        if slots.strategy is Strategy.EVOKING and not slots.goals:
            raise MissingSlot("evoking needs at least one goal")


def assemble_prompt(
    slots: PromptSlots,
    templates: TemplateStore | None = None,
    variant: PromptVariant = PromptVariant.FULL,
) -> AssembledPrompt:
    """Build the four ordered sections and fill every word slot.

    Raises MissingSlot when the strategy requires a slot that is absent,
    InvalidSlot for negative durations or reserved characters.
    """
    templates = templates or TemplateStore()
    _check_slots(slots, variant)
    values = render_slot_values(slots)

    task_setup = templates.get("task_setup").rstrip("\n")

    if variant is PromptVariant.FULL:
        state_block = "<User Mental State>\n" + values["cell"] + "\n"
    else:
        state_block = ""
    goals_text = values.get("goals") or "The user has not written down any goals yet."
    context = (
        templates.get("context")
        .rstrip("\n")
        .format(
            app_name=values["app_name"],
            current_time=values["current_time"],
            location_label=values["location_label"],
            habitual_minutes_today=values["habitual_minutes_today"],
            since_last_line=values["minutes_since_last_habitual"],
            mental_state_block=state_block,
            goals_block=goals_text,
        )
    )

    optimization = templates.get("optimization").rstrip("\n")

    if variant is PromptVariant.SIMPLE:
        strategy_name = "simple"
    else:
        strategy_name = slots.strategy.value
    strategy_template = templates.get(f"strategy.{strategy_name}").rstrip("\n")
    strategy_description = strategy_template.format(habit=slots.habit or "")

    return AssembledPrompt(
        task_setup=task_setup,
        context=context,
        optimization=optimization,
        strategy_description=strategy_description,
    )


def validate_filled(
    prompt: AssembledPrompt, char_cap: int = PROMPT_CHAR_CAP
) -> list[Violation]:
    """Check an assembled prompt for residue markers, empty sections, and length.

    Returns an empty list when the prompt is well formed.
    """
    violations: list[Violation] = []
    full = prompt.full_text
    if "{" in full or "}" in full:
        violations.append(
            Violation(ViolationKind.UNFILLED_SLOT, "brace residue in assembled prompt")
        )
    names = ("task_setup", "context", "optimization", "strategy_description")
    for name, section in zip(names, prompt.sections):
        if not section.strip():
            violations.append(Violation(ViolationKind.EMPTY_SECTION, name))
    if len(full) > char_cap:
        violations.append(
            Violation(ViolationKind.TOO_LONG, f"{len(full)} chars > cap {char_cap}")
        )
    return violations
