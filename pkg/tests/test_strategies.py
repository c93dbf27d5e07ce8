"""Strategy applicability and counterbalanced selection."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nudgeloop.strategies import (
    CANONICAL_ORDER,
    Engagement,
    InapplicableStrategyError,
    MentalState,
    MentalStateCell,
    MentalStateKind,
    Strategy,
    StrategyLedger,
    applicable_strategies,
    next_strategy,
)


def cell(kind: MentalStateKind, engagement: Engagement, text: str | None = None):
    return MentalStateCell(MentalState(kind, text), engagement)


ALL_CELLS = [
    cell(kind, engagement, "drained" if kind is MentalStateKind.OTHER else None)
    for kind in MentalStateKind
    for engagement in Engagement
]

cells = st.sampled_from(ALL_CELLS)


class TestApplicability:
    def test_inertia_not_engaged(self):
        got = applicable_strategies(cell(MentalStateKind.INERTIA, Engagement.NOT_ENGAGED))
        assert got == [Strategy.UNDERSTANDING, Strategy.SCAFFOLDING_HABITS]

    def test_stress_engaged_has_all_four(self):
        got = applicable_strategies(cell(MentalStateKind.STRESS, Engagement.ENGAGED))
        assert got == list(CANONICAL_ORDER)

    def test_boredom_not_engaged(self):
        got = applicable_strategies(cell(MentalStateKind.BOREDOM, Engagement.NOT_ENGAGED))
        assert got == [
            Strategy.UNDERSTANDING,
            Strategy.COMFORTING,
            Strategy.SCAFFOLDING_HABITS,
        ]

    def test_understanding_everywhere(self):
        for c in ALL_CELLS:
            assert Strategy.UNDERSTANDING in applicable_strategies(c)

    def test_scaffolding_everywhere(self):
        for c in ALL_CELLS:
            assert Strategy.SCAFFOLDING_HABITS in applicable_strategies(c)

    def test_comforting_skips_inertia(self):
        for c in ALL_CELLS:
            has = Strategy.COMFORTING in applicable_strategies(c)
            assert has == (c.state.kind is not MentalStateKind.INERTIA)

    def test_evoking_needs_engagement(self):
        for c in ALL_CELLS:
            has = Strategy.EVOKING in applicable_strategies(c)
            assert has == (c.engagement is Engagement.ENGAGED)

    @given(cells)
    def test_size_bounds(self, c):
        got = applicable_strategies(c)
        assert 2 <= len(got) <= 4
        assert len(set(got)) == len(got)

    @given(cells)
    def test_canonical_ordering(self, c):
        got = applicable_strategies(c)
        ranks = [s.canonical_rank for s in got]
        assert ranks == sorted(ranks)


class TestMentalState:
    def test_other_requires_text(self):
        with pytest.raises(ValueError):
            MentalState(MentalStateKind.OTHER)

    def test_non_other_rejects_text(self):
        with pytest.raises(ValueError):
            MentalState(MentalStateKind.BOREDOM, "bored stiff")

    def test_frozen(self):
        state = MentalState(MentalStateKind.STRESS)
        with pytest.raises(AttributeError):
            state.kind = MentalStateKind.BOREDOM


class TestNextStrategy:
    def test_fresh_ledger_picks_understanding(self):
        ledger = StrategyLedger()
        c = cell(MentalStateKind.STRESS, Engagement.ENGAGED)
        assert next_strategy(ledger, "u1", c, set()) is Strategy.UNDERSTANDING

    def test_min_count_wins(self):
        ledger = StrategyLedger()
        c = cell(MentalStateKind.STRESS, Engagement.ENGAGED)
        shows = {
            Strategy.UNDERSTANDING: 3,
            Strategy.COMFORTING: 1,
            Strategy.EVOKING: 3,
            Strategy.SCAFFOLDING_HABITS: 3,
        }
        for strategy, n in shows.items():
            for _ in range(n):
                ledger.record_shown("u1", c, strategy)
        assert next_strategy(ledger, "u1", c, set()) is Strategy.COMFORTING

    def test_exhausted_returns_none(self):
        ledger = StrategyLedger()
        c = cell(MentalStateKind.INERTIA, Engagement.NOT_ENGAGED)
        shown = {Strategy.UNDERSTANDING, Strategy.SCAFFOLDING_HABITS}
        assert next_strategy(ledger, "u1", c, shown) is None

    def test_already_shown_excluded(self):
        ledger = StrategyLedger()
        c = cell(MentalStateKind.STRESS, Engagement.ENGAGED)
        got = next_strategy(ledger, "u1", c, {Strategy.UNDERSTANDING})
        assert got is Strategy.COMFORTING

    def test_inapplicable_in_shown_set_raises(self):
        ledger = StrategyLedger()
        c = cell(MentalStateKind.INERTIA, Engagement.NOT_ENGAGED)
        with pytest.raises(InapplicableStrategyError):
            next_strategy(ledger, "u1", c, {Strategy.COMFORTING})

    def test_record_inapplicable_raises(self):
        ledger = StrategyLedger()
        c = cell(MentalStateKind.INERTIA, Engagement.ENGAGED)
        with pytest.raises(InapplicableStrategyError):
            ledger.record_shown("u1", c, Strategy.COMFORTING)

    def test_users_isolated(self):
        ledger = StrategyLedger()
        c = cell(MentalStateKind.BOREDOM, Engagement.ENGAGED)
        ledger.record_shown("u1", c, Strategy.UNDERSTANDING)
        assert ledger.count("u2", c, Strategy.UNDERSTANDING) == 0
        assert next_strategy(ledger, "u2", c, set()) is Strategy.UNDERSTANDING

    def test_cells_isolated(self):
        ledger = StrategyLedger()
        a = cell(MentalStateKind.BOREDOM, Engagement.ENGAGED)
        b = cell(MentalStateKind.BOREDOM, Engagement.NOT_ENGAGED)
        ledger.record_shown("u1", a, Strategy.UNDERSTANDING)
        assert ledger.count("u1", b, Strategy.UNDERSTANDING) == 0

    def test_hundred_full_sessions_balance_evenly(self):
        ledger = StrategyLedger()
        c = cell(MentalStateKind.STRESS, Engagement.ENGAGED)
        for _ in range(100):
            s = next_strategy(ledger, "u1", c, set())
            ledger.record_shown("u1", c, s)
        counts = [ledger.count("u1", c, s) for s in CANONICAL_ORDER]
        assert counts == [25, 25, 25, 25]

    def test_round_robin_cycles_canonically(self):
        ledger = StrategyLedger()
        c = cell(MentalStateKind.STRESS, Engagement.ENGAGED)
        seen = []
        for _ in range(8):
            s = next_strategy(ledger, "u1", c, set())
            ledger.record_shown("u1", c, s)
            seen.append(s)
        assert seen == list(CANONICAL_ORDER) * 2


# Arbitrary interleavings of sessions that may quit after any round.
quit_patterns = st.lists(
    st.tuples(cells, st.integers(min_value=1, max_value=4)), min_size=1, max_size=60
)


@settings(max_examples=200)
@given(quit_patterns)
def test_counterbalance_bound_under_quits(pattern):
    # After any sequence of sessions, shown counts within a cell stay
    # within one of each other.
    ledger = StrategyLedger()
    for c, rounds in pattern:
        shown: set[Strategy] = set()
        for _ in range(rounds):
            s = next_strategy(ledger, "u1", c, shown)
            if s is None:
                break
            ledger.record_shown("u1", c, s)
            shown.add(s)
    for c in ALL_CELLS:
        counts = [ledger.count("u1", c, s) for s in applicable_strategies(c)]
        assert max(counts) - min(counts) <= 1


@given(quit_patterns)
def test_selection_is_deterministic(pattern):
    def run():
        ledger = StrategyLedger()
        picks = []
        for c, rounds in pattern:
            shown: set[Strategy] = set()
            for _ in range(rounds):
                s = next_strategy(ledger, "u1", c, shown)
                if s is None:
                    break
                ledger.record_shown("u1", c, s)
                shown.add(s)
                picks.append(s)
        return picks

    assert run() == run()


@given(quit_patterns)
def test_ledger_json_round_trip(pattern):
    ledger = StrategyLedger()
    for c, rounds in pattern:
        shown: set[Strategy] = set()
        for _ in range(rounds):
            s = next_strategy(ledger, "u1", c, shown)
            if s is None:
                break
            ledger.record_shown("u1", c, s)
            shown.add(s)
    restored = StrategyLedger.from_json(ledger.to_json())
    assert restored.counts == ledger.counts
