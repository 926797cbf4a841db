import json

import httpx
import pytest

from scriptrefine.gateway import (
    JUDGE_ROLES,
    NUMBER,
    TEXT,
    AgentRole,
    AuthError,
    BackendConfig,
    BackendTimeout,
    CompletionRequest,
    FixtureSet,
    Gateway,
    LiveBackend,
    MissingFixture,
    NoJsonFound,
    Opt,
    SchemaMismatch,
    StructuredOutputExhausted,
    TransportError,
    UnbalancedJson,
    as_number,
    extract_json,
    validate_shape,
)

from conftest import FnBackend, fixture_gateway, one_role

# --- extraction ---------------------------------------------------------------

POSITIVE = [
    ('{"enhanced_plot": "x"}', {"enhanced_plot": "x"}),
    ('```json\n[{"place":"A","plot_element":"B","beat":"C"}]\n```',
     [{"place": "A", "plot_element": "B", "beat": "C"}]),
    ('Sure! Here is the result:\n{"a": 1}\nHope this helps.', {"a": 1}),
    ('{"a": "brace } inside", "b": [1, 2]} trailing', {"a": "brace } inside", "b": [1, 2]}),
    ('{"a": "quote \\" and { brace"}', {"a": 'quote " and { brace'}),
    ("see [note] then {\"k\": true}", {"k": True}),
    ('{"a": 1,\n "b": [1, 2,],\n}', {"a": 1, "b": [1, 2]}),
    ('{"p": "8"   // priority\n}', {"p": "8"}),
    ('{"issue": "a"\n "suggestion": "b"}', {"issue": "a", "suggestion": "b"}),
    ("[]", []),
]

NEGATIVE = [
    "Sure! Here is my analysis without any payload.",
    "",
    "{not json at all}",
    '{"a": 1',
    "[1, 2",
]


@pytest.mark.parametrize("raw, expected", POSITIVE)
def test_extract_positive(raw, expected):
    assert extract_json(raw) == expected


@pytest.mark.parametrize("raw", NEGATIVE)
def test_extract_negative(raw):
    with pytest.raises(NoJsonFound):
        extract_json(raw)


def test_truncated_is_unbalanced():
    with pytest.raises(UnbalancedJson):
        extract_json('prefix {"a": [1, 2}')


# --- schema -------------------------------------------------------------------


def test_validate_shape_permits_extra_keys():
    validate_shape({"a": "x", "extra": 1}, {"a": TEXT})


@pytest.mark.parametrize(
    "value, schema",
    [
        ({}, {"a": str}),
        ({"a": ""}, {"a": TEXT}),
        ({"a": [1]}, {"a": [str]}),
        ({"a": True}, {"a": NUMBER}),
        ("x", {"a": str}),
    ],
)
def test_validate_shape_rejects(value, schema):
    with pytest.raises(SchemaMismatch):
        validate_shape(value, schema)


def test_optional_keys():
    validate_shape({}, {"a": Opt(str)})
    validate_shape({"a": None}, {"a": Opt(str)})
    with pytest.raises(SchemaMismatch):
        validate_shape({"a": 3}, {"a": Opt(str)})


def test_numeric_strings():
    validate_shape("8   // Priority level", NUMBER)
    assert as_number("8   // Priority level") == 8.0
    assert as_number(7) == 7.0
    with pytest.raises(SchemaMismatch):
        as_number("high")


# --- requests -----------------------------------------------------------------


def test_role_sampling_defaults():
    for role in AgentRole:
        r = CompletionRequest(role, "p")
        if role in JUDGE_ROLES:
            assert (r.temperature, r.top_p) == (0.0, 1.0)
        else:
            assert (r.temperature, r.top_p) == (0.7, 0.95)


def test_judge_roles():
    assert {r.value for r in JUDGE_ROLES} == {"script_judge", "component_judge", "final_judge"}


@pytest.mark.parametrize("kw", [{"temperature": 2.5}, {"top_p": 0.0}, {"top_p": 1.5}])
def test_sampling_ranges(kw):
    with pytest.raises(ValueError):
        CompletionRequest(AgentRole.SUMMARIZER, "p", **kw)


def test_digest_depends_on_content():
    a = CompletionRequest(AgentRole.SUMMARIZER, "p", chunks=("x",))
    b = CompletionRequest(AgentRole.SUMMARIZER, "p", chunks=("y",))
    assert a.digest != b.digest
    assert a.digest == CompletionRequest(AgentRole.SUMMARIZER, "p", chunks=("x",)).digest


def test_messages_send_chunks_first():
    r = CompletionRequest(AgentRole.SUMMARIZER, "ask", chunks=("one", "two"), system="sys")
    msgs = r.messages()
    assert [m["role"] for m in msgs] == ["system", "user", "user", "user"]
    assert msgs[1]["content"].startswith("Script part 1 of 2")
    assert msgs[-1]["content"] == "ask"


# --- fixtures -----------------------------------------------------------------


def test_fixture_sequence_then_missing():
    gw = one_role("summarizer", "first", "second")
    req = gw.request("summarizer", "p")
    assert gw.complete(req) == "first"
    assert gw.complete(req) == "second"
    with pytest.raises(MissingFixture):
        gw.complete(req)
    assert [t.status for t in gw.transcripts] == ["ok", "ok", "failed"]


def test_fixture_repeat_cycles():
    gw = one_role("summarizer", "a", "b", repeat=True)
    req = gw.request("summarizer", "p")
    assert [gw.complete(req) for _ in range(5)] == ["a", "b", "a", "b", "a"]


def test_fixture_digest_takes_precedence():
    req = CompletionRequest(AgentRole.SUMMARIZER, "special")
    gw = fixture_gateway(
        {"responses": {"summarizer": ["seq"]}, "by_digest": {"summarizer": {req.digest: "hit"}}}
    )
    assert gw.complete(gw.request("summarizer", "special")) == "hit"
    assert gw.complete(gw.request("summarizer", "other")) == "seq"


def test_unknown_role_is_hard_error():
    gw = one_role("summarizer", "x")
    with pytest.raises(MissingFixture):
        gw.complete(gw.request("router", "p"))


def test_fixture_documents_reject_duplicates(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"responses": {"router": ["x"]}}))
    (tmp_path / "b.json").write_text(json.dumps({"responses": {"router": ["y"]}}))
    with pytest.raises(ValueError, match="twice"):
        FixtureSet.load(tmp_path)


def test_fixture_directory_merges(tmp_path):
    (tmp_path / "a.json").write_text(json.dumps({"responses": {"router": ["x"]}}))
    (tmp_path / "b.json").write_text(json.dumps({"responses": {"summarizer": [{"summary": "s"}]}}))
    fx = FixtureSet.load(tmp_path)
    assert fx.sequences["summarizer"] == ['{"summary": "s"}']


def test_fixture_replay_is_deterministic():
    doc = {"responses": {"summarizer": ["a", "b", "c"]}}
    runs = []
    for _ in range(2):
        gw = fixture_gateway(doc)
        runs.append([gw.complete(gw.request("summarizer", "p")) for _ in range(3)])
    assert runs[0] == runs[1]


# --- structured completion ----------------------------------------------------


def test_retry_then_success():
    gw = one_role("brainstormer", "garbage", '{"enhanced_plot": "x"}')
    out = gw.complete_structured(gw.request("brainstormer", "p"), {"enhanced_plot": TEXT})
    assert out == {"enhanced_plot": "x"}
    assert [t.attempt for t in gw.transcripts] == [1, 2]
    assert [t.status for t in gw.transcripts] == ["rejected", "ok"]
    assert "rejected" in gw.transcripts[1].prompt


def test_budget_exhaustion_counts_calls():
    gw = one_role("brainstormer", "bad", repeat=True)
    with pytest.raises(StructuredOutputExhausted) as err:
        gw.complete_structured(gw.request("brainstormer", "p"), {"enhanced_plot": TEXT})
    assert len(err.value.attempts) == 3
    assert gw.backend.calls("brainstormer") == 3


@pytest.mark.parametrize("budget", [1, 2, 5])
def test_budget_is_configurable(budget):
    gw = fixture_gateway({"responses": {"router": {"repeat": ["no"]}}}, parse_retries=budget)
    with pytest.raises(StructuredOutputExhausted):
        gw.complete_structured(gw.request("router", "p"), {"x": str})
    assert gw.backend.calls("router") == budget


def test_extra_keys_preserved():
    gw = one_role("title_editor", '{"title": "T", "note": "kept"}')
    assert gw.complete_structured(gw.request("title_editor", "p"), {"title": TEXT})["note"] == "kept"


def test_transport_errors_are_not_retried_as_parse_errors():
    def boom(request):
        raise TransportError("down")

    gw = Gateway(FnBackend(boom))
    with pytest.raises(TransportError):
        gw.complete_structured(gw.request("router", "p"), {})
    assert len(gw.backend.requests) == 1


def test_context_tags_reach_transcripts():
    gw = one_role("summarizer", "x", repeat=True)
    with gw.context(iteration=2):
        with gw.context(scene=4):
            gw.complete(gw.request("summarizer", "p"))
        gw.complete(gw.request("summarizer", "p"))
    assert gw.transcripts[0].context == {"iteration": 2, "scene": 4}
    assert gw.transcripts[1].context == {"iteration": 2}


def test_map_keeps_order_and_tags_in_threads():
    class Parallel(FnBackend):
        parallel_safe = True

    gw = Gateway(Parallel(lambda r: r.prompt), parallelism=4)

    def call(i):
        with gw.context(item=i):
            return gw.complete(gw.request("summarizer", str(i)))

    with gw.context(run="r"):
        assert gw.map(call, range(12)) == [str(i) for i in range(12)]
    assert all(t.context == {"run": "r", "item": int(t.prompt)} for t in gw.transcripts)


# --- live backend over a mock transport ----------------------------------------


def live(handler, monkeypatch, **cfg):
    monkeypatch.setenv("TEST_KEY", "secret")
    config = BackendConfig(base_url="http://mock/v1", api_key_env="TEST_KEY",
                           backoff_base=0.0, **cfg)
    return LiveBackend(config, client=httpx.Client(transport=httpx.MockTransport(handler)))


def ok_body(text="hello"):
    return {"choices": [{"message": {"content": text}}], "usage": {"total_tokens": 5}}


def test_live_request_shape(monkeypatch):
    seen = {}

    def handler(request):
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        seen["url"] = str(request.url)
        return httpx.Response(200, json=ok_body())

    backend = live(handler, monkeypatch)
    out = backend.complete(CompletionRequest(AgentRole.SCRIPT_JUDGE, "p", seed=3))
    assert out.text == "hello" and out.usage == {"total_tokens": 5}
    assert seen["url"] == "http://mock/v1/chat/completions"
    assert seen["auth"] == "Bearer secret"
    assert seen["body"]["temperature"] == 0.0 and seen["body"]["top_p"] == 1.0
    assert seen["body"]["seed"] == 3


def test_live_retries_429_then_succeeds(monkeypatch):
    codes = iter([429, 503, 200])

    def handler(request):
        code = next(codes)
        return httpx.Response(code, json=ok_body() if code == 200 else {})

    assert live(handler, monkeypatch).complete(CompletionRequest(AgentRole.ROUTER, "p")).text == "hello"


def test_live_transport_budget(monkeypatch):
    calls = []

    def handler(request):
        calls.append(1)
        raise httpx.ConnectError("unreachable")

    with pytest.raises(TransportError):
        live(handler, monkeypatch, transport_retries=2).complete(CompletionRequest(AgentRole.ROUTER, "p"))
    assert len(calls) == 3


def test_live_timeout(monkeypatch):
    def handler(request):
        raise httpx.ReadTimeout("slow")

    with pytest.raises(BackendTimeout) as err:
        live(handler, monkeypatch, transport_retries=0).complete(CompletionRequest(AgentRole.ROUTER, "p"))
    assert isinstance(err.value, TimeoutError)


def test_live_auth_rejected(monkeypatch):
    backend = live(lambda r: httpx.Response(401), monkeypatch)
    with pytest.raises(AuthError):
        backend.complete(CompletionRequest(AgentRole.ROUTER, "p"))


def test_live_missing_credential(monkeypatch):
    backend = live(lambda r: httpx.Response(200, json=ok_body()), monkeypatch)
    monkeypatch.delenv("TEST_KEY")
    with pytest.raises(AuthError, match="TEST_KEY"):
        backend.complete(CompletionRequest(AgentRole.ROUTER, "p"))
