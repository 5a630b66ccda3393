import json
import threading
from decimal import Decimal

import httpx
import pytest
from hypothesis import given, strategies as st

from resttsl.errors import (
    AuthError,
    CassetteIoError,
    CassetteMiss,
    NoRuleMatched,
    ProviderError,
    ProviderTimeout,
    RateLimited,
)
from resttsl.gateway import (
    Cassette,
    Completion,
    CostLedger,
    MockProvider,
    OpenAICompatibleProvider,
    ProviderConfig,
    RecordingProvider,
    ReplayProvider,
    backoff_delays,
    estimate_cost,
    fingerprint,
    format_usd,
    send,
)
from resttsl.prompts import ChatMessage, ConversationScript, PromptStage

S = PromptStage
LABELS = (S.BEHAVIOR, S.EXAMPLE_OPENAPI_TO_TSL, S.EXAMPLE_OPENAPI_TO_TSL, S.EXAMPLE_TSL_TO_TESTS, S.EXAMPLE_TSL_TO_TESTS)
ROLES = ("system", "user", "assistant", "user", "assistant")


def script(action="generate", stage=S.ACTION_GENERATE_TSL):
    msgs = tuple(ChatMessage(r, f"{r}-{i}") for i, r in enumerate(ROLES)) + (ChatMessage("user", action),)
    return ConversationScript(msgs, LABELS + (stage,))


CFG = ProviderConfig("openai", "gpt-x", endpoint_url="https://llm.invalid/v1/chat/completions",
                     price_in_per_million=Decimal("2.5"), price_out_per_million=Decimal("10"),
                     max_retries=3, backoff_base=0.5, backoff_cap=2)


class Flaky:
    def __init__(self, failures):
        self.failures = list(failures)
        self.calls = 0

    def complete(self, config, script):
        self.calls += 1
        if self.failures:
            raise self.failures.pop(0)
        return Completion("ok", 10, 5)


def test_fingerprint_is_stable_and_sensitive():
    a, b = script("one"), script("two")
    assert fingerprint("m", a) == fingerprint("m", script("one"))
    assert fingerprint("m", a) != fingerprint("m", b)
    assert fingerprint("m", a) != fingerprint("n", a)
    assert len(fingerprint("m", a)) == 64


def test_mock_rules_by_stage_and_fingerprint():
    special = script("special")
    mock = MockProvider({S.ACTION_GENERATE_TSL: "tsl text", fingerprint(CFG.model_id, special): Completion("fp", 1, 2),
                         "ActionGenerateTests": lambda s: s.messages[-1].content.upper()})
    assert mock.complete(CFG, script()).content == "tsl text"
    assert mock.complete(CFG, special).content == "fp"
    assert mock.complete(CFG, script("abc", S.ACTION_GENERATE_TESTS)).content == "ABC"
    assert mock.calls == 3
    with pytest.raises(NoRuleMatched):
        MockProvider({}).complete(CFG, script())


def test_record_then_replay(tmp_path, caplog):
    path = tmp_path / "cassette.jsonl"
    rec = RecordingProvider(MockProvider({S.ACTION_GENERATE_TSL: Completion("answer", 7, 3, 12.5, False)}), path)
    first = rec.complete(CFG, script())
    replay = ReplayProvider(path)
    assert replay.complete(CFG, script()) == first
    with pytest.raises(CassetteMiss):
        replay.complete(CFG, script("other"))
    rec.complete(CFG, script())
    assert "overwriting" in caplog.text
    assert len(Cassette.load(path)) == 1
    entry = json.loads(path.read_text().splitlines()[0])
    assert entry["messages"][-1] == {"role": "user", "content": "generate"}


def test_corrupt_cassette(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text("{not json\n")
    with pytest.raises(CassetteIoError):
        Cassette.load(path)


def test_retry_succeeds_after_transient_failures():
    sleeps = []
    flaky = Flaky([RateLimited("429"), ProviderTimeout("slow"), ProviderError("503", transient=True)])
    out = send(CFG, script(), flaky, sleep=sleeps.append)
    assert out.content == "ok" and flaky.calls == 4
    assert sleeps == [0.5, 1.0, 2.0]


def test_retry_is_bounded():
    sleeps = []
    flaky = Flaky([RateLimited("429")] * 10)
    with pytest.raises(RateLimited):
        send(CFG, script(), flaky, sleep=sleeps.append)
    assert flaky.calls == CFG.max_retries + 1 and len(sleeps) == CFG.max_retries


@pytest.mark.parametrize("exc", [AuthError("no"), ProviderError("bad request"), NoRuleMatched("x")])
def test_permanent_failures_are_not_retried(exc):
    flaky = Flaky([exc])
    with pytest.raises(type(exc)):
        send(CFG, script(), flaky, sleep=lambda s: None)
    assert flaky.calls == 1


@given(st.floats(0.01, 10), st.floats(0.01, 100), st.integers(0, 12))
def test_backoff_nondecreasing_and_capped(base, cap, retries):
    cfg = ProviderConfig("p", "m", backoff_base=base, backoff_cap=cap, max_retries=retries)
    delays = backoff_delays(cfg)
    assert len(delays) == retries
    assert all(a <= b for a, b in zip(delays, delays[1:]))
    assert all(d <= cap for d in delays)


def _chat_response(content="hello", finish="stop", status=200):
    def handler(request):
        body = json.loads(request.content)
        assert request.headers["Authorization"] == "Bearer sekret"
        assert body["model"] == "gpt-x" and body["messages"][0]["role"] == "system"
        return httpx.Response(status, json={
            "choices": [{"message": {"content": content}, "finish_reason": finish}],
            "usage": {"prompt_tokens": 120, "completion_tokens": 30}})
    return httpx.MockTransport(handler)


ENV = {"RESTTSL_OPENAI_API_KEY": "sekret"}


def test_openai_adapter_maps_success_and_truncation():
    out = OpenAICompatibleProvider(_chat_response(), ENV).complete(CFG, script())
    assert (out.content, out.input_tokens, out.output_tokens, out.truncated) == ("hello", 120, 30, False)
    out = OpenAICompatibleProvider(_chat_response(finish="length"), ENV).complete(CFG, script())
    assert out.truncated


@pytest.mark.parametrize("status,exc,transient", [(401, AuthError, False), (403, AuthError, False),
                                                  (429, RateLimited, True), (503, ProviderError, True),
                                                  (400, ProviderError, False)])
def test_openai_adapter_maps_errors(status, exc, transient):
    transport = httpx.MockTransport(lambda r: httpx.Response(status, text="nope"))
    with pytest.raises(exc) as info:
        OpenAICompatibleProvider(transport, ENV).complete(CFG, script())
    assert info.value.transient is transient


def test_openai_adapter_timeout_is_transient():
    def boom(request):
        raise httpx.ReadTimeout("slow", request=request)
    with pytest.raises(ProviderTimeout):
        OpenAICompatibleProvider(httpx.MockTransport(boom), ENV).complete(CFG, script())


def test_missing_key_names_env_var(failing_transport):
    with pytest.raises(AuthError, match="RESTTSL_OPENAI_API_KEY"):
        OpenAICompatibleProvider(failing_transport, {}).complete(CFG, script())
    assert failing_transport.calls == 0


def test_malformed_body():
    transport = httpx.MockTransport(lambda r: httpx.Response(200, json={"choices": []}))
    with pytest.raises(ProviderError, match="malformed"):
        OpenAICompatibleProvider(transport, ENV).complete(CFG, script())


def test_cost_is_exact_decimal():
    assert estimate_cost(1_000_000, 0, CFG) == Decimal("2.5")
    assert estimate_cost(108_000, 20_000, CFG) == Decimal("0.47")
    assert format_usd(Decimal("0.47")) == "$0.4700"
    with pytest.raises(ValueError):
        estimate_cost(-1, 0, CFG)


def test_ledger_sums_entries_to_known_total(tmp_path):
    ledger = CostLedger(tmp_path / "ledger.jsonl")
    mock = MockProvider({S.ACTION_GENERATE_TSL: Completion("a", 60_000, 8_000),
                         S.ACTION_GENERATE_TESTS: Completion("b", 48_000, 12_000)})
    send(CFG, script(), mock, ledger, "todo")
    send(CFG, script("t", S.ACTION_GENERATE_TESTS), mock, ledger, "todo")
    assert ledger.total() == Decimal("0.47")
    reloaded = CostLedger.load(tmp_path / "ledger.jsonl")
    assert reloaded.total() == Decimal("0.47")
    assert reloaded.totals() == {("gpt-x", "todo"): Decimal("0.47")}
    assert [e.stage for e in reloaded.entries] == ["ActionGenerateTsl", "ActionGenerateTests"]


def test_ledger_threadsafe(tmp_path):
    ledger = CostLedger(tmp_path / "l.jsonl")
    c = Completion("x", 1000, 1000)

    def work():
        for _ in range(50):
            ledger.charge(CFG, "p", "s", c)

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert ledger.total() == 400 * estimate_cost(1000, 1000, CFG)
    assert len(CostLedger.load(tmp_path / "l.jsonl").entries) == 400


def test_config_validation():
    with pytest.raises(ValueError):
        ProviderConfig("p", "m", price_in_per_million=-1)
    with pytest.raises(ValueError):
        ProviderConfig("", "m")
    assert ProviderConfig("my-host", "m").api_key_env == "RESTTSL_MY_HOST_API_KEY"
    assert ProviderConfig("p", "m", name="nick").label == "nick"


def test_mock_provider_factory_is_deterministic():
    from resttsl.gateway import mock_provider

    listing = "- id: TC101\n"
    p = mock_provider({"ActionGenerateTsl": listing})
    assert p.complete(CFG, script()).content == listing
    assert p.complete(CFG, script()) == p.complete(CFG, script())


def test_record_to_unwritable_path(tmp_path):
    from resttsl.gateway import record

    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(CassetteIoError):
        record(blocker / "c.jsonl", CFG, script(), Completion("a"))


def test_two_scripts_two_entries(tmp_path):
    from resttsl.gateway import record

    path = tmp_path / "c.jsonl"
    record(path, CFG, script("a"), Completion("1"))
    record(path, CFG, script("b"), Completion("2"))
    assert len(Cassette.load(path)) == 2
