"""Streaming generation, failover, and output validation."""

import json
import time
from datetime import datetime

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nudgeloop.config import GatewayConfig, RemoteBackendConfig
from nudgeloop.gateway import (
    STREAM_RESET,
    BackendError,
    FallbackBackend,
    GenerationRequest,
    OutputViolationKind,
    RemoteBackend,
    drain_stream,
    fallback_text,
    generate_stream,
    load_blocklist,
    validate_output,
)
from nudgeloop.prompts import (
    GoalCategory,
    GoalEntry,
    PromptSlots,
    PromptVariant,
    assemble_prompt,
)
from nudgeloop.strategies import (
    Engagement,
    MentalState,
    MentalStateCell,
    MentalStateKind,
    Strategy,
)

GOALS = [GoalEntry(GoalCategory.HEALTH, "swim every week", "book the Tuesday lane")]


def make_request(strategy=Strategy.UNDERSTANDING, variant=PromptVariant.FULL, habit=None):
    if strategy is Strategy.SCAFFOLDING_HABITS and habit is None:
        habit = "water the plants"
    slots = PromptSlots(
        app_name="PicFeed",
        current_time=datetime(2024, 3, 14, 15, 9),
        location_label="home",
        habitual_minutes_today=10,
        minutes_since_last_habitual=None,
        cell=MentalStateCell(MentalState(MentalStateKind.STRESS), Engagement.ENGAGED),
        goals=list(GOALS),
        habit=habit,
        strategy=strategy,
    )
    prompt = assemble_prompt(slots, variant=variant)
    return GenerationRequest(prompt=prompt, slots=slots, variant=variant)


class Scripted:
    """Local backend that yields fixed chunks, optionally dying partway."""

    name = "scripted"

    def __init__(self, chunks, fail_after=None, delay_before=0.0, delay_between=0.0):
        self.chunks = list(chunks)
        self.fail_after = fail_after
        self.delay_before = delay_before
        self.delay_between = delay_between

    def stream(self, request):
        if self.delay_before:
            time.sleep(self.delay_before)
        for i, chunk in enumerate(self.chunks):
            if self.fail_after is not None and i == self.fail_after:
                raise BackendError("scripted failure")
            if i and self.delay_between:
                time.sleep(self.delay_between)
            yield chunk


def text_after_last_reset(items):
    pieces = []
    for item in items:
        if item is STREAM_RESET:
            pieces.clear()
        else:
            pieces.append(item)
    return "".join(pieces)


class TestValidateOutput:
    def test_clean_message_passes(self):
        assert validate_output("A short kind note.") == []

    def test_seventy_words_allowed(self):
        assert validate_output("word " * 70) == []

    def test_seventy_one_words_rejected(self):
        kinds = [v.kind for v in validate_output("word " * 71)]
        assert OutputViolationKind.TOO_MANY_WORDS in kinds

    def test_line_break_rejected(self):
        kinds = [v.kind for v in validate_output("one paragraph\nand another")]
        assert OutputViolationKind.MULTIPLE_PARAGRAPHS in kinds

    def test_empty_rejected(self):
        kinds = [v.kind for v in validate_output("   ")]
        assert kinds == [OutputViolationKind.EMPTY]

    def test_blocklist_case_insensitive(self):
        kinds = [v.kind for v in validate_output("Buy NOW and feel great")]
        assert OutputViolationKind.BLOCKED_PHRASE in kinds

    def test_blocklist_word_boundary(self):
        # "discounted" should not trip the "discount" entry
        assert validate_output("They discounted the idea politely.") == []

    def test_blocklist_loaded(self):
        phrases = load_blocklist()
        assert "buy now" in phrases
        assert all(not p.startswith("#") for p in phrases)


class TestFallbackTexts:
    @pytest.mark.parametrize("strategy", list(Strategy))
    def test_every_fallback_validates(self, strategy):
        request = make_request(strategy=strategy)
        text = fallback_text(request.slots, request.variant)
        assert validate_output(text) == []

    def test_generic_validates(self):
        request = make_request(strategy=None, variant=PromptVariant.SIMPLE)
        assert validate_output(fallback_text(request.slots, request.variant)) == []

    def test_evoking_embeds_first_goal(self):
        request = make_request(strategy=Strategy.EVOKING)
        assert "swim every week" in fallback_text(request.slots, request.variant)

    def test_scaffolding_embeds_habit(self):
        request = make_request(strategy=Strategy.SCAFFOLDING_HABITS, habit="sketch one page")
        assert "sketch one page" in fallback_text(request.slots, request.variant)

    def test_long_habit_truncated(self):
        habit = " ".join(f"w{i}" for i in range(40))
        request = make_request(strategy=Strategy.SCAFFOLDING_HABITS, habit=habit)
        text = fallback_text(request.slots, request.variant)
        assert validate_output(text) == []

    def test_chunks_reassemble_exactly(self):
        request = make_request()
        chunks = list(FallbackBackend().stream(request))
        assert len(chunks) > 1
        assert "".join(chunks) == fallback_text(request.slots, request.variant)


class TestGenerateStream:
    def test_fallback_only_happy_path(self):
        request = make_request()
        items, message = drain_stream(generate_stream(request, [FallbackBackend()]))
        assert message.source == "fallback"
        assert message.resets == 0
        assert message.strategy is Strategy.UNDERSTANDING
        assert "".join(items) == message.text
        assert validate_output(message.text) == []

    def test_failure_before_first_chunk_is_seamless(self):
        request = make_request()
        chain = [Scripted(["never"], fail_after=0), FallbackBackend()]
        items, message = drain_stream(generate_stream(request, chain))
        assert STREAM_RESET not in items
        assert message.source == "fallback"
        assert message.resets == 0

    def test_midstream_failure_emits_reset(self):
        request = make_request()
        chain = [Scripted(["Half a ", "message"], fail_after=1), FallbackBackend()]
        items, message = drain_stream(generate_stream(request, chain))
        assert STREAM_RESET in items
        assert message.resets == 1
        assert message.source == "fallback"
        assert text_after_last_reset(items) == message.text

    def test_invalid_output_triggers_reset(self):
        request = make_request()
        bad = Scripted(["word " * 40, "word " * 40])  # 80 words, over the cap
        items, message = drain_stream(generate_stream(request, [bad, FallbackBackend()]))
        assert STREAM_RESET in items
        assert message.source == "fallback"
        assert validate_output(message.text) == []

    def test_blocked_phrase_triggers_reset(self):
        request = make_request()
        bad = Scripted(["You should ", "buy now and relax."])
        items, message = drain_stream(generate_stream(request, [bad, FallbackBackend()]))
        assert STREAM_RESET in items
        assert message.source == "fallback"

    def test_slow_first_chunk_fails_over(self):
        request = make_request()
        config = GatewayConfig(first_chunk_timeout_s=0.02, deadline_s=5.0)
        chain = [Scripted(["late"], delay_before=0.08), FallbackBackend()]
        items, message = drain_stream(generate_stream(request, chain, config=config))
        assert message.source == "fallback"
        assert STREAM_RESET not in items

    def test_deadline_overrun_resets(self):
        request = make_request()
        config = GatewayConfig(first_chunk_timeout_s=5.0, deadline_s=0.02)
        chain = [Scripted(["fast ", "too slow"], delay_between=0.08), FallbackBackend()]
        items, message = drain_stream(generate_stream(request, chain, config=config))
        assert STREAM_RESET in items
        assert message.source == "fallback"

    def test_all_backends_dead_uses_safety_text(self):
        request = make_request()
        chain = [Scripted([], fail_after=0), Scripted([], fail_after=0)]
        items, message = drain_stream(generate_stream(request, chain))
        assert message.source == "safety"
        assert validate_output(message.text) == []
        assert text_after_last_reset(items) == message.text

    def test_simple_variant_returns_generic(self):
        request = make_request(strategy=None, variant=PromptVariant.SIMPLE)
        items, message = drain_stream(generate_stream(request, [FallbackBackend()]))
        assert message.strategy is None
        assert "out of habit" in message.text


# Scripted chains under arbitrary failure points never break the
# concatenation invariant and always land on a valid message.
chunk_words = st.lists(
    st.text(alphabet="abcde", min_size=1, max_size=6).map(lambda w: w + " "),
    min_size=0,
    max_size=10,
)
backend_specs = st.lists(
    st.tuples(chunk_words, st.one_of(st.none(), st.integers(min_value=0, max_value=10))),
    min_size=0,
    max_size=3,
)


@settings(max_examples=150, deadline=None)
@given(backend_specs)
def test_stream_integrity_invariant(specs):
    request = make_request()
    chain = [Scripted(chunks, fail_after=fail) for chunks, fail in specs]
    chain.append(FallbackBackend())
    items, message = drain_stream(generate_stream(request, chain))
    assert text_after_last_reset(items) == message.text
    assert validate_output(message.text) == []
    assert message.resets == sum(1 for item in items if item is STREAM_RESET)


def sse_body(pieces, include_done=True):
    lines = []
    for piece in pieces:
        event = {"choices": [{"delta": {"content": piece}}]}
        lines.append(f"data: {json.dumps(event)}\n\n")
    if include_done:
        lines.append("data: [DONE]\n\n")
    return "".join(lines).encode()


def mock_client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


class TestRemoteBackend:
    def test_streams_deltas_and_sends_expected_payload(self, monkeypatch):
        monkeypatch.setenv("NUDGELOOP_API_KEY", "k-123")
        seen = {}

        def handler(req: httpx.Request) -> httpx.Response:
            seen["url"] = str(req.url)
            seen["auth"] = req.headers.get("authorization")
            seen["body"] = json.loads(req.read())
            return httpx.Response(200, content=sse_body(["Take ", "a ", "breath."]))

        config = RemoteBackendConfig(base_url="http://llm.test/v1")
        backend = RemoteBackend(config, client=mock_client(handler))
        chunks = list(backend.stream(make_request()))
        assert chunks == ["Take ", "a ", "breath."]
        assert seen["url"] == "http://llm.test/v1/chat/completions"
        assert seen["auth"] == "Bearer k-123"
        assert seen["body"]["model"] == config.model
        assert seen["body"]["stream"] is True
        assert seen["body"]["messages"][0]["role"] == "user"
        assert "<Task Setup>" in seen["body"]["messages"][0]["content"]

    def test_missing_key_raises_before_any_request(self, monkeypatch):
        monkeypatch.delenv("NUDGELOOP_API_KEY", raising=False)

        def handler(req):
            raise AssertionError("no request should be sent")

        backend = RemoteBackend(
            RemoteBackendConfig(base_url="http://llm.test"), client=mock_client(handler)
        )
        with pytest.raises(BackendError):
            list(backend.stream(make_request()))

    def test_http_error_status_raises(self, monkeypatch):
        monkeypatch.setenv("NUDGELOOP_API_KEY", "k")

        def handler(req):
            return httpx.Response(500, content=b"")

        backend = RemoteBackend(
            RemoteBackendConfig(base_url="http://llm.test"), client=mock_client(handler)
        )
        with pytest.raises(BackendError):
            list(backend.stream(make_request()))

    def test_garbage_payload_raises(self, monkeypatch):
        monkeypatch.setenv("NUDGELOOP_API_KEY", "k")

        def handler(req):
            return httpx.Response(200, content=b"data: not json\n\n")

        backend = RemoteBackend(
            RemoteBackendConfig(base_url="http://llm.test"), client=mock_client(handler)
        )
        with pytest.raises(BackendError):
            list(backend.stream(make_request()))

    def test_remote_then_fallback_end_to_end(self, monkeypatch):
        # Network refused: the whole chain still produces a valid message.
        monkeypatch.setenv("NUDGELOOP_API_KEY", "k")

        def handler(req):
            raise httpx.ConnectError("refused")

        backend = RemoteBackend(
            RemoteBackendConfig(base_url="http://llm.test"), client=mock_client(handler)
        )
        request = make_request()
        items, message = drain_stream(generate_stream(request, [backend, FallbackBackend()]))
        assert message.source == "fallback"
        assert STREAM_RESET not in items

    def test_remote_success_is_used(self, monkeypatch):
        monkeypatch.setenv("NUDGELOOP_API_KEY", "k")

        def handler(req):
            return httpx.Response(200, content=sse_body(["A calm, ", "clean reply."]))

        backend = RemoteBackend(
            RemoteBackendConfig(base_url="http://llm.test"), client=mock_client(handler)
        )
        items, message = drain_stream(generate_stream(make_request(), [backend, FallbackBackend()]))
        assert message.source == "remote"
        assert message.text == "A calm, clean reply."
