"""Simulator determinism and convergence to the closed-form quit rate."""

import numpy as np
import pytest

from nudgeloop.config import EngineMode
from nudgeloop.events import Decision, EventKind, Intent, Outcome
from nudgeloop.simulate import (
    CELL_ORDER,
    InvalidConfigError,
    Persona,
    ScenarioConfig,
    expected_persuasion_acceptance,
    make_demo_personas,
    persona_decide,
    run_scenario,
)
from nudgeloop.strategies import Engagement, MentalStateKind, Strategy


def one_cell_mix(kind, engagement):
    return tuple(1.0 if (k, e) == (kind, engagement) else 0.0 for (k, e) in CELL_ORDER)


class TestPersonaValidation:
    def test_mix_must_sum_to_one(self):
        with pytest.raises(InvalidConfigError):
            Persona(name="p", intent_mix=(0.5, 0.2, 0.2, 0.2))

    def test_cell_mix_must_cover_six_cells(self):
        with pytest.raises(InvalidConfigError):
            Persona(name="p", cell_mix=(0.5, 0.5))

    def test_thumb_probs_bounded(self):
        with pytest.raises(InvalidConfigError):
            Persona(name="p", thumb_up_prob=0.7, thumb_down_prob=0.5)

    def test_days_must_be_positive(self):
        with pytest.raises(InvalidConfigError):
            ScenarioConfig(personas=(Persona(name="p"),), days=0)

    def test_duplicate_names_rejected(self):
        with pytest.raises(InvalidConfigError):
            ScenarioConfig(personas=(Persona(name="p"), Persona(name="p")))


class TestPersonaDecide:
    def test_intent_stage_draws_from_mix(self):
        persona = Persona(name="p", intent_mix=(1.0, 0.0, 0.0, 0.0))
        rng = np.random.Generator(np.random.PCG64(0))
        assert persona_decide(persona, "intent", rng) is Intent.HABITUAL

    def test_mental_state_stage_draws_cell(self):
        persona = Persona(
            name="p", cell_mix=one_cell_mix(MentalStateKind.STRESS, Engagement.ENGAGED)
        )
        rng = np.random.Generator(np.random.PCG64(0))
        cell = persona_decide(persona, "mental_state", rng)
        assert cell.state.kind is MentalStateKind.STRESS
        assert cell.engagement is Engagement.ENGAGED

    def test_round_stage_certain_quit(self):
        persona = Persona(
            name="p", base_quit_prob=1.0, strategy_affinity={Strategy.EVOKING: 1.0}
        )
        rng = np.random.Generator(np.random.PCG64(0))
        decided = persona_decide(persona, "round", rng, strategy=Strategy.EVOKING)
        assert decided is Decision.QUIT

    def test_unknown_stage(self):
        rng = np.random.Generator(np.random.PCG64(0))
        with pytest.raises(InvalidConfigError):
            persona_decide(Persona(name="p"), "snack", rng)


class TestClosedForm:
    def test_four_strategy_cell_uniform_affinity(self):
        # (boredom, engaged) admits all 4 strategies; p=0.2 each round
        persona = Persona(
            name="p",
            cell_mix=one_cell_mix(MentalStateKind.BOREDOM, Engagement.ENGAGED),
            base_quit_prob=0.2,
        )
        expected = expected_persuasion_acceptance(persona, EngineMode.FULL)
        assert expected == pytest.approx(1 - 0.8**4)

    def test_two_strategy_cell(self):
        persona = Persona(
            name="p",
            cell_mix=one_cell_mix(MentalStateKind.INERTIA, Engagement.NOT_ENGAGED),
            base_quit_prob=0.2,
        )
        expected = expected_persuasion_acceptance(persona, EngineMode.FULL)
        assert expected == pytest.approx(1 - 0.8**2)

    def test_mixed_cells_weighted_average(self):
        w = [0.0] * len(CELL_ORDER)
        w[CELL_ORDER.index((MentalStateKind.BOREDOM, Engagement.ENGAGED))] = 0.5
        w[CELL_ORDER.index((MentalStateKind.INERTIA, Engagement.NOT_ENGAGED))] = 0.5
        persona = Persona(name="p", cell_mix=tuple(w), base_quit_prob=0.2)
        expected = expected_persuasion_acceptance(persona, EngineMode.FULL)
        assert expected == pytest.approx(0.5 * (1 - 0.8**4) + 0.5 * (1 - 0.8**2))

    def test_affinity_scales_per_strategy(self):
        persona = Persona(
            name="p",
            cell_mix=one_cell_mix(MentalStateKind.INERTIA, Engagement.NOT_ENGAGED),
            base_quit_prob=0.1,
            strategy_affinity={Strategy.UNDERSTANDING: 2.0, Strategy.SCAFFOLDING_HABITS: 3.0},
        )
        expected = expected_persuasion_acceptance(persona, EngineMode.FULL)
        assert expected == pytest.approx(1 - (1 - 0.2) * (1 - 0.3))

    def test_affinity_clamps_at_certainty(self):
        persona = Persona(
            name="p",
            cell_mix=one_cell_mix(MentalStateKind.INERTIA, Engagement.NOT_ENGAGED),
            base_quit_prob=0.9,
            strategy_affinity={Strategy.UNDERSTANDING: 5.0},
        )
        assert persona.quit_prob(Strategy.UNDERSTANDING) == 1.0
        assert expected_persuasion_acceptance(persona, EngineMode.FULL) == pytest.approx(1.0)

    def test_simple_mode_ignores_affinities(self):
        persona = Persona(
            name="p", base_quit_prob=0.15, strategy_affinity={s: 2.0 for s in Strategy}
        )
        boosted = expected_persuasion_acceptance(persona, EngineMode.FULL)
        plain = expected_persuasion_acceptance(persona, EngineMode.SIMPLE)
        base_only = expected_persuasion_acceptance(
            Persona(name="q", base_quit_prob=0.15, cell_mix=persona.cell_mix),
            EngineMode.FULL,
        )
        assert plain == pytest.approx(base_only)
        assert boosted > plain

    def test_baseline_has_no_rate(self):
        assert expected_persuasion_acceptance(Persona(name="p"), EngineMode.BASELINE) is None


class TestDeterminism:
    def test_same_seed_same_event_log(self):
        personas = tuple(make_demo_personas()[:3])
        config = ScenarioConfig(personas=personas, days=2, seed=42)
        a = run_scenario(config)
        b = run_scenario(config)
        lines_a = [e.to_json_line() for e in a.engine.log.events]
        lines_b = [e.to_json_line() for e in b.engine.log.events]
        assert lines_a == lines_b
        assert [o.mc_acceptance for o in a.outcomes] == [o.mc_acceptance for o in b.outcomes]

    def test_different_seed_differs(self):
        personas = tuple(make_demo_personas()[:2])
        a = run_scenario(ScenarioConfig(personas=personas, days=2, seed=1))
        b = run_scenario(ScenarioConfig(personas=personas, days=2, seed=2))
        assert [e.to_json_line() for e in a.engine.log.events] != [
            e.to_json_line() for e in b.engine.log.events
        ]

    def test_poisson_open_count_fixture(self):
        # recorded once from seed 123: one persona, one day, rate 10
        persona = Persona(name="solo", daily_open_rate=10.0)
        result = run_scenario(ScenarioConfig(personas=(persona,), days=1, seed=123))
        assert result.outcomes[0].opens == 9


class TestScenarioRuns:
    def test_all_visits_terminate(self):
        config = ScenarioConfig(personas=tuple(make_demo_personas()[:2]), days=3, seed=5)
        records = run_scenario(config).engine.log.records()
        assert records
        assert all(r.terminated for r in records)
        assert not any(r.orphaned for r in records)

    def test_baseline_mode_emits_no_persuasion(self):
        config = ScenarioConfig(
            personas=tuple(make_demo_personas()[:2]), days=2, mode=EngineMode.BASELINE, seed=5
        )
        result = run_scenario(config)
        assert not any(
            e.kind is EventKind.PERSUASION_SHOWN for e in result.engine.log.events
        )
        records = result.engine.log.records()
        assert all(not r.rounds for r in records)
        assert any(r.outcome is Outcome.CONTINUED_TO_EXHAUSTION for r in records)
        assert result.persuasion_acceptance is None

    def test_log_round_trips_through_jsonl(self, tmp_path):
        from nudgeloop.events import EventLog

        config = ScenarioConfig(personas=(make_demo_personas()[0],), days=1, seed=9)
        result = run_scenario(config)
        path = tmp_path / "events.jsonl"
        result.engine.log.write_jsonl(path)
        replayed = EventLog.from_jsonl(path)
        assert [e.to_json_line() for e in replayed.events] == [
            e.to_json_line() for e in result.engine.log.events
        ]

    def test_feedback_lands_when_certain(self):
        persona = Persona(name="chatty", thumb_up_prob=1.0, thumb_down_prob=0.0)
        result = run_scenario(ScenarioConfig(personas=(persona,), days=1, seed=3))
        rounds = [r for rec in result.engine.log.records("chatty") for r in rec.rounds]
        assert rounds
        assert all(r.feedback is not None for r in rounds)

    def test_reports_cover_each_persona(self):
        config = ScenarioConfig(personas=tuple(make_demo_personas()[:2]), days=2, seed=4)
        reports = run_scenario(config).reports()
        assert set(reports) == {"sim-anna", "sim-bram"}
        for report in reports.values():
            assert report["overall_acceptance"] is not None
            assert report["usage"]["total_opens"] > 0


class TestConvergence:
    def test_monte_carlo_matches_closed_form_within_three_se(self):
        config = ScenarioConfig(personas=tuple(make_demo_personas()), days=10, seed=7)
        result = run_scenario(config)
        for outcome in result.outcomes:
            assert outcome.persuaded > 50
            se = outcome.standard_error
            assert abs(outcome.mc_acceptance - outcome.expected_acceptance) <= 3 * se

    def test_mode_ordering_on_shared_seed(self):
        personas = tuple(make_demo_personas())
        rates = {}
        for mode in (EngineMode.FULL, EngineMode.SIMPLE, EngineMode.BASELINE):
            result = run_scenario(
                ScenarioConfig(personas=personas, days=6, mode=mode, seed=11)
            )
            rates[mode] = result.overall_acceptance
        assert rates[EngineMode.FULL] > rates[EngineMode.SIMPLE] > rates[EngineMode.BASELINE]

    def test_demo_personas_carry_affinities_in_band(self):
        for persona in make_demo_personas():
            assert 0.1 <= persona.base_quit_prob <= 0.2
            for value in persona.strategy_affinity.values():
                assert 1.5 <= value <= 2.5
