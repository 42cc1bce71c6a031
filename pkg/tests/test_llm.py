import json

import httpx
import pytest

from conftest import mock_provider
from storyworld import demo
from storyworld.llm import (
    REPROMPT_BUDGET,
    SCHEMAS,
    AuthError,
    ChatRequest,
    MissingContext,
    MockScript,
    ParseFailure,
    ProviderConfig,
    ProviderKind,
    RateLimited,
    ScriptExhausted,
    Step,
    Transcript,
    TransportError,
    complete,
    mock_script,
    run_step,
)
from storyworld.llm.steps import parse_score
from storyworld.worldmodel import Role, TileLegend, WorldGrid


def _json(obj):
    return "```json\n" + json.dumps(obj) + "\n```"


def _ctx_through_goals():
    chars = run_step(mock_script([("Characters", _json({"characters": demo.CHARACTERS}))]),
                     Step.CHARACTERS, {"story": demo.STORY}).value
    legend, chars = run_step(
        mock_script([("Tileset", _json({"tiles": demo.TILES, "character_symbols": demo.CHARACTER_SYMBOLS}))]),
        Step.TILESET, {"story": demo.STORY, "characters": chars}).value
    goals = run_step(mock_script([("Goals", _json({"goals": demo.GOALS}))]), Step.GOALS,
                     {"story": demo.STORY, "characters": chars, "legend": legend}).value
    return {"story": demo.STORY, "characters": chars, "legend": legend, "goals": goals}


# ---- provider

def test_mock_passthrough_and_exhaustion():
    cfg = mock_script([("Story", "hello")])
    req = ChatRequest("sys", [("user", "hi")], step="Story")
    assert complete(cfg, req) == "hello"
    with pytest.raises(ScriptExhausted):
        complete(cfg, req)
    assert cfg.mock.steps_seen() == ["Story", "Story"]


def test_mock_fifo_per_step():
    cfg = mock_script([("WorldFull", "one"), ("Story", "s"), ("WorldFull", "two")])
    r = ChatRequest("", [("user", "x")], step="WorldFull")
    assert [complete(cfg, r), complete(cfg, r)] == ["one", "two"]


def test_mock_fresh_copy_is_independent():
    script = MockScript([("Story", "a")])
    script.reply(ChatRequest("", [("user", "x")], step="Story"))
    again = script.fresh()
    assert again.reply(ChatRequest("", [("user", "x")], step="Story")) == "a"
    assert len(again.received) == 1


def test_chat_request_defaults():
    req = ChatRequest("s", [("user", "m")])
    assert req.temperature == 1.0 and req.max_output_tokens == 4096
    with pytest.raises(ValueError):
        ChatRequest("s", [("user", "m")], temperature=-0.1)
    assert SCHEMAS[Step.WORLD_FULL].max_output_tokens == 8192


def test_missing_key_raises_before_request(monkeypatch):
    monkeypatch.delenv("NO_SUCH_KEY_VAR", raising=False)

    def boom(request):
        raise AssertionError("no request expected")

    cfg = ProviderConfig(ProviderKind.OPENAI, "gpt", api_key_env_var="NO_SUCH_KEY_VAR",
                         transport=httpx.MockTransport(boom))
    with pytest.raises(AuthError):
        complete(cfg, ChatRequest("s", [("user", "m")]))


def _http_cfg(kind, handler, monkeypatch, retries=3):
    monkeypatch.setenv("TEST_KEY", "secret")
    return ProviderConfig(kind, "model-x", endpoint_url="http://llm.test", api_key_env_var="TEST_KEY",
                          max_retries_per_call=retries, transport=httpx.MockTransport(handler))


def test_openai_request_shape(monkeypatch):
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})

    cfg = _http_cfg(ProviderKind.OPENAI, handler, monkeypatch)
    assert complete(cfg, ChatRequest("sys", [("user", "hi")], max_output_tokens=77)) == "ok"
    assert seen["url"] == "http://llm.test/chat/completions"
    assert seen["auth"] == "Bearer secret"
    assert seen["body"]["messages"][0] == {"role": "system", "content": "sys"}
    assert seen["body"]["max_tokens"] == 77 and seen["body"]["temperature"] == 1.0


def test_anthropic_request_shape(monkeypatch):
    seen = {}

    def handler(request):
        seen["url"] = str(request.url)
        seen["key"] = request.headers["x-api-key"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"content": [{"type": "text", "text": "hi there"}]})

    cfg = _http_cfg(ProviderKind.ANTHROPIC, handler, monkeypatch)
    assert complete(cfg, ChatRequest("sys", [("user", "hi")])) == "hi there"
    assert seen["url"] == "http://llm.test/v1/messages"
    assert seen["key"] == "secret" and seen["body"]["system"] == "sys"


def test_retries_server_errors_with_backoff(monkeypatch):
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) < 3:
            return httpx.Response(503)
        return httpx.Response(200, json={"choices": [{"message": {"content": "late"}}]})

    sleeps = []
    cfg = _http_cfg(ProviderKind.OPENAI, handler, monkeypatch)
    assert complete(cfg, ChatRequest("", [("user", "x")]), sleep=sleeps.append) == "late"
    assert sleeps == [1.0, 2.0]


@pytest.mark.parametrize("status,exc", [(500, TransportError), (429, RateLimited)])
def test_gives_up_after_retries(monkeypatch, status, exc):
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(status)

    cfg = _http_cfg(ProviderKind.OPENAI, handler, monkeypatch, retries=2)
    with pytest.raises(exc):
        complete(cfg, ChatRequest("", [("user", "x")]), sleep=lambda s: None)
    assert len(calls) == 3


def test_auth_failure_not_retried(monkeypatch):
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(401, text="bad key")

    cfg = _http_cfg(ProviderKind.ANTHROPIC, handler, monkeypatch)
    with pytest.raises(AuthError):
        complete(cfg, ChatRequest("", [("user", "x")]), sleep=lambda s: None)
    assert len(calls) == 1


def test_network_error_is_transport_error(monkeypatch):
    def handler(request):
        raise httpx.ConnectError("refused")

    cfg = _http_cfg(ProviderKind.OPENAI, handler, monkeypatch, retries=1)
    with pytest.raises(TransportError):
        complete(cfg, ChatRequest("", [("user", "x")]), sleep=lambda s: None)


# ---- steps

def test_characters_step():
    res = run_step(mock_script([("Characters", _json({"characters": demo.CHARACTERS}))]),
                   Step.CHARACTERS, {"story": demo.STORY})
    assert [c.name for c in res.value] == ["Mara", "Grell", "Oren"]
    assert res.value[0].role is Role.PROTAGONIST
    assert res.attempts == 1


def test_goals_reprompt_after_malformed_json():
    ctx = _ctx_through_goals()
    del ctx["goals"]
    cfg = mock_script([("Goals", "```json\n{\"goals\": [oops\n```"), ("Goals", _json({"goals": demo.GOALS}))])
    res = run_step(cfg, Step.GOALS, ctx, {"objective_count": 8})
    assert len(res.value) == 8 and res.attempts == 2
    second = cfg.mock.received[1][1]
    assert second.messages[1][0] == "assistant"
    assert "could not be used" in second.messages[2][1]


def test_parse_failure_after_budget():
    cfg = mock_script([("Characters", "no json")] * 10)
    with pytest.raises(ParseFailure):
        run_step(cfg, Step.CHARACTERS, {"story": demo.STORY})
    assert len(cfg.mock.received) == REPROMPT_BUDGET + 1


def test_important_tiles_truncated_to_cap():
    ctx = _ctx_through_goals()
    symbols = sorted(demo.TILES)[:17] + ["k", "D", "L"]
    entries = {s: f"tile {s}" for s in symbols}
    ctx["legend"] = TileLegend(entries)
    res = run_step(mock_script([("ImportantTiles", _json({"important": symbols}))]),
                   Step.IMPORTANT_TILES, ctx, {"important_cap": 15})
    assert len(symbols) == 20
    assert res.value == frozenset(symbols[:15])
    assert any("truncated" in w for w in res.warnings)


def test_walkable_prompt_contains_story_and_goals():
    ctx = _ctx_through_goals()
    cfg = mock_script([("WalkableTiles", _json({"walkable": [".", ","]}))])
    run_step(cfg, Step.WALKABLE_TILES, ctx)
    prompt = cfg.mock.prompts("WalkableTiles")[0]
    assert demo.STORY in prompt
    for g in demo.GOALS:
        assert g["description"] in prompt


def test_walkable_drops_character_symbols():
    ctx = _ctx_through_goals()
    res = run_step(mock_script([("WalkableTiles", _json({"walkable": demo.WALKABLE}))]),
                   Step.WALKABLE_TILES, ctx)
    assert res.value == frozenset(".,=")
    assert res.warnings


def test_missing_context_is_reported():
    with pytest.raises(MissingContext):
        run_step(mock_script([]), Step.WALKABLE_TILES, {"story": "x"})


def test_prior_outputs_serialized_verbatim():
    ctx = _ctx_through_goals()
    cfg = mock_script([("ObjectTiles", _json({"interactive": ["k"]}))])
    run_step(cfg, Step.OBJECT_TILES, ctx)
    prompt = cfg.mock.prompts()[0]
    from storyworld.llm import context_sections
    for text in context_sections(ctx).values():
        assert text in prompt


@pytest.mark.parametrize("text,score", [("Score: 85", 85), ("120", 100), ("```\n-4\n```", 0),
                                        ("I'd say 70 out of 100", 70)])
def test_score_parser(text, score):
    assert parse_score(text) == score


def test_score_without_digits_fails():
    cfg = mock_script([("CoherenceJudge", "great world!")] * 4)
    ctx = {"story": "s", "legend": TileLegend({".": "g"}), "world": WorldGrid(("..",))}
    with pytest.raises(ParseFailure):
        run_step(cfg, Step.COHERENCE_JUDGE, ctx)


def test_transcript_records_every_exchange():
    t = Transcript(iter(["t0", "t1", "t2"]).__next__)
    cfg = mock_script([("Characters", "nope"), ("Characters", _json({"characters": demo.CHARACTERS}))])
    run_step(cfg, Step.CHARACTERS, {"story": demo.STORY}, transcript=t)
    lines = [json.loads(x) for x in t.to_jsonl().splitlines()]
    assert [e["timestamp"] for e in lines] == ["t0", "t1"]
    assert lines[0]["response"] == "nope"


def test_every_step_has_one_schema_and_template():
    from storyworld.llm import load_template
    assert set(SCHEMAS) == set(Step)
    for schema in SCHEMAS.values():
        assert load_template(schema.template).strip()


def test_mock_provider_helper(golden_script):
    cfg = mock_provider(golden_script)
    assert cfg.is_mock and cfg.mock.queues["WorldFull"]
