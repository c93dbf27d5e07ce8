"""Regenerate the golden prompt fixtures under tests/golden/prompts/.

Run after deliberate template changes, then review the diff:

    python3 scripts/make_goldens.py
"""

from __future__ import annotations

import sys
from datetime import datetime
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from nudgeloop.prompts import (
    GoalCategory,
    GoalEntry,
    PromptSlots,
    assemble_prompt,
)
from nudgeloop.strategies import (
    Engagement,
    MentalState,
    MentalStateCell,
    MentalStateKind,
    Strategy,
)

GOLDEN_DIR = Path(__file__).resolve().parents[1] / "tests" / "golden" / "prompts"

GOALS = [
    GoalEntry(GoalCategory.CAREER, "finish the quarterly report", "write one section each morning"),
    GoalEntry(GoalCategory.HEALTH, "run a 10k in autumn", "jog twice a week after work"),
]

# Two strategies per cell, skipping inapplicable combinations.
CASES = [
    ("boredom_engaged_understanding", MentalStateKind.BOREDOM, Engagement.ENGAGED, Strategy.UNDERSTANDING),
    ("boredom_engaged_evoking", MentalStateKind.BOREDOM, Engagement.ENGAGED, Strategy.EVOKING),
    ("boredom_notengaged_comforting", MentalStateKind.BOREDOM, Engagement.NOT_ENGAGED, Strategy.COMFORTING),
    ("boredom_notengaged_scaffolding", MentalStateKind.BOREDOM, Engagement.NOT_ENGAGED, Strategy.SCAFFOLDING_HABITS),
    ("stress_engaged_evoking", MentalStateKind.STRESS, Engagement.ENGAGED, Strategy.EVOKING),
    ("stress_engaged_comforting", MentalStateKind.STRESS, Engagement.ENGAGED, Strategy.COMFORTING),
    ("stress_notengaged_understanding", MentalStateKind.STRESS, Engagement.NOT_ENGAGED, Strategy.UNDERSTANDING),
    ("stress_notengaged_scaffolding", MentalStateKind.STRESS, Engagement.NOT_ENGAGED, Strategy.SCAFFOLDING_HABITS),
    ("inertia_engaged_evoking", MentalStateKind.INERTIA, Engagement.ENGAGED, Strategy.EVOKING),
    ("inertia_engaged_scaffolding", MentalStateKind.INERTIA, Engagement.ENGAGED, Strategy.SCAFFOLDING_HABITS),
    ("inertia_notengaged_understanding", MentalStateKind.INERTIA, Engagement.NOT_ENGAGED, Strategy.UNDERSTANDING),
    ("inertia_notengaged_scaffolding", MentalStateKind.INERTIA, Engagement.NOT_ENGAGED, Strategy.SCAFFOLDING_HABITS),
]


def build_slots(kind: MentalStateKind, engagement: Engagement, strategy: Strategy) -> PromptSlots:
    return PromptSlots(
        app_name="PicFeed",
        current_time=datetime(2024, 3, 14, 15, 9),
        location_label="the office",
        habitual_minutes_today=42,
        minutes_since_last_habitual=37,
        cell=MentalStateCell(MentalState(kind), engagement),
        goals=list(GOALS),
        habit="stand up and stretch for two minutes"
        if strategy is Strategy.SCAFFOLDING_HABITS
        else None,
        strategy=strategy,
    )


def main() -> None:
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    for name, kind, engagement, strategy in CASES:
        prompt = assemble_prompt(build_slots(kind, engagement, strategy))
        path = GOLDEN_DIR / f"{name}.txt"
        path.write_text(prompt.full_text, encoding="utf-8")
        print(f"wrote {path.relative_to(GOLDEN_DIR.parents[2])}")


if __name__ == "__main__":
    main()
