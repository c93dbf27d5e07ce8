"""Mapping from mental-state cells to persuasion strategies, plus the
counterbalanced scheduler that decides which strategy each round shows.

A cell is one of six (mental state x engagement) conditions; free-text
"other" feelings get the same treatment as the named negative emotions.
The ledger tracks, per user and per cell, how often each strategy has
been shown so that exposure stays balanced across interventions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class MentalStateKind(str, Enum):
    BOREDOM = "boredom"
    STRESS = "stress"
    INERTIA = "inertia"
    OTHER = "other"


class Engagement(str, Enum):
    ENGAGED = "engaged"
    NOT_ENGAGED = "not_engaged"


@dataclass(frozen=True)
class MentalState:
    kind: MentalStateKind
    other_text: str | None = None

    def __post_init__(self) -> None:
        if self.kind is MentalStateKind.OTHER:
            if not self.other_text:
                raise ValueError("an 'other' mental state needs non-empty free text")
        elif self.other_text is not None:
            raise ValueError("free text is only allowed for the 'other' mental state")


@dataclass(frozen=True)
class MentalStateCell:
    """One cell of the state-by-engagement grid."""

    state: MentalState
    engagement: Engagement

    @property
    def key(self) -> tuple[MentalStateKind, Engagement]:
        # Free text does not move a cell; only (kind, engagement) addresses it.
        return (self.state.kind, self.engagement)


class Strategy(str, Enum):
    UNDERSTANDING = "understanding"
    COMFORTING = "comforting"
    EVOKING = "evoking"
    SCAFFOLDING_HABITS = "scaffolding_habits"

    @property
    def canonical_rank(self) -> int:
        return CANONICAL_ORDER.index(self)


CANONICAL_ORDER: tuple[Strategy, ...] = (
    Strategy.UNDERSTANDING,
    Strategy.COMFORTING,
    Strategy.EVOKING,
    Strategy.SCAFFOLDING_HABITS,
)

# Understanding and scaffolding apply everywhere; comforting is dropped for
# inertia (no overt negative emotion to soothe); evoking needs an ongoing
# activity to tie goals to. "Other" feelings are treated as negative, so
# they take the comforting-eligible set.
_APPLICABLE: dict[tuple[MentalStateKind, Engagement], tuple[Strategy, ...]] = {}
for _kind in MentalStateKind:
    for _eng in Engagement:
        _set = [Strategy.UNDERSTANDING]
        if _kind is not MentalStateKind.INERTIA:
            _set.append(Strategy.COMFORTING)
        if _eng is Engagement.ENGAGED:
            _set.append(Strategy.EVOKING)
        _set.append(Strategy.SCAFFOLDING_HABITS)
        _APPLICABLE[(_kind, _eng)] = tuple(sorted(_set, key=lambda s: s.canonical_rank))


class InapplicableStrategyError(ValueError):
    """A strategy was used in a cell it does not apply to."""


def applicable_strategies(cell: MentalStateCell) -> list[Strategy]:
    """Strategies applicable in this cell, in canonical order."""
    return list(_APPLICABLE[cell.key])


@dataclass
class StrategyLedger:
    """Per-user, per-cell counters of how often each strategy was shown.

    Counts persist across interventions; they are what keeps strategy
    exposure counterbalanced over time.
    """

    counts: dict[tuple[str, MentalStateKind, Engagement, Strategy], int] = field(
        default_factory=dict
    )

    def count(self, user_id: str, cell: MentalStateCell, strategy: Strategy) -> int:
        return self.counts.get((user_id, *cell.key, strategy), 0)

    def record_shown(
        self, user_id: str, cell: MentalStateCell, strategy: Strategy
    ) -> None:
        if strategy not in _APPLICABLE[cell.key]:
            raise InapplicableStrategyError(
                f"{strategy.value} is not applicable in cell {cell.key}"
            )
        key = (user_id, *cell.key, strategy)
        self.counts[key] = self.counts.get(key, 0) + 1

    def to_json(self) -> list[dict]:
        return [
            {
                "user": user,
                "state": kind.value,
                "engagement": eng.value,
                "strategy": strat.value,
                "count": n,
            }
            for (user, kind, eng, strat), n in sorted(
                self.counts.items(),
                key=lambda kv: (kv[0][0], kv[0][1].value, kv[0][2].value, kv[0][3].value),
            )
        ]

    @classmethod
    def from_json(cls, rows: list[dict]) -> "StrategyLedger":
        ledger = cls()
        for row in rows:
            key = (
                row["user"],
                MentalStateKind(row["state"]),
                Engagement(row["engagement"]),
                Strategy(row["strategy"]),
            )
            ledger.counts[key] = int(row["count"])
        return ledger


def next_strategy(
    ledger: StrategyLedger,
    user_id: str,
    cell: MentalStateCell,
    already_shown: set[Strategy],
) -> Strategy | None:
    """Pick the least-shown applicable strategy not yet used this session.

    Ties fall to canonical order. Returns None once the session has
    exhausted the cell's whole set.
    """
    applicable = _APPLICABLE[cell.key]
    extraneous = already_shown - set(applicable)
    if extraneous:
        raise InapplicableStrategyError(
            f"already_shown contains strategies not applicable here: "
            f"{sorted(s.value for s in extraneous)}"
        )
    remaining = [s for s in applicable if s not in already_shown]
    if not remaining:
        return None
    return min(remaining, key=lambda s: (ledger.count(user_id, cell, s), s.canonical_rank))
