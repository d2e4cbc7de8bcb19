from __future__ import annotations

import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chops.gateway import (
    Gateway,
    HttpChatProvider,
    Message,
    PricingTable,
    ProviderError,
    ProviderUnreachable,
    Role,
    RoleBinding,
    ScriptEntry,
    ScriptedProvider,
    ScriptExhausted,
    UnpricedModel,
    Usage,
    UsageLedger,
    ZeroBaseline,
    cost_of,
    relative_cost,
    serialize_messages,
)

PRICING = PricingTable({"gpt-3.5-turbo": (1.5, 2.0), "gpt-4-0125-preview": (10.0, 30.0)})

# Published per-question character averages (input, output), in units of
# 1k chars, and the models they ran on.
BASELINE = {"gpt-4-0125-preview": (12_900, 190)}
ROWS = {
    "1-vote": ({"gpt-3.5-turbo": (14_510, 500)}, 16.9),
    "4-vote": ({"gpt-3.5-turbo": (53_540, 940)}, 61.0),
    "16-vote": ({"gpt-3.5-turbo": (211_580, 2_590)}, 239.5),
    "cev": ({"gpt-3.5-turbo": (30_100, 560)}, 34.4),
    "mixed": (
        {"gpt-3.5-turbo": (16_860, 330), "gpt-4-0125-preview": (9_790, 210)},
        96.6,
    ),
}


def test_cost_of_empty_ledger_is_zero():
    assert cost_of(UsageLedger(), PRICING) == 0.0


def test_cost_of_single_model_arithmetic():
    ledger = UsageLedger.from_totals({"gpt-3.5-turbo": (30_100, 560)})
    # 30100*1.5/1e6 + 560*2.0/1e6, computed by hand
    assert cost_of(ledger, PRICING) == pytest.approx(46.27e-3, rel=1e-9)


def test_cost_of_mixed_ledger_arithmetic():
    ledger = UsageLedger.from_totals(
        {"gpt-3.5-turbo": (16_860, 330), "gpt-4-0125-preview": (9_790, 210)}
    )
    assert cost_of(ledger, PRICING) == pytest.approx(130.15e-3, rel=1e-9)


def test_unpriced_model():
    ledger = UsageLedger.from_totals({"mystery-model": (10, 10)})
    with pytest.raises(UnpricedModel):
        cost_of(ledger, PRICING)


def test_zero_baseline():
    ledger = UsageLedger.from_totals({"gpt-3.5-turbo": (1, 1)})
    with pytest.raises(ZeroBaseline):
        relative_cost(ledger, UsageLedger(), PRICING)


@pytest.mark.parametrize("row", list(ROWS))
def test_relative_cost_reproduces_published_rows(row):
    totals, expected = ROWS[row]
    rel = relative_cost(
        UsageLedger.from_totals(totals), UsageLedger.from_totals(BASELINE), PRICING
    )
    assert rel == pytest.approx(expected, abs=0.1)


@pytest.mark.parametrize("k", [0.3, 1.0, 2.7])
def test_relative_cost_k_invariant(k):
    ledger = UsageLedger.from_totals(ROWS["cev"][0])
    baseline = UsageLedger.from_totals(BASELINE)
    at_one = relative_cost(ledger, baseline, PRICING.with_k(1.0))
    at_k = relative_cost(ledger, baseline, PRICING.with_k(k))
    assert abs(at_k - at_one) <= 1e-9 * max(abs(at_one), 1.0)


def test_serialize_empty_messages():
    assert serialize_messages([]) == ""


def test_empty_message_list_counts_zero_input_chars():
    gateway = Gateway(
        RoleBinding.uniform("gpt-3.5-turbo", PRICING),
        ScriptedProvider([ScriptEntry(None, "", "reply")]),
        PRICING,
    )
    _, usage = gateway.complete(Role.EXECUTOR, [])
    assert usage.input_chars == 0
    assert usage.output_chars == 5


def test_usage_counts_exact_serialized_chars():
    entries = [ScriptEntry(None, "", "pong")]
    gateway = Gateway(
        RoleBinding.uniform("gpt-3.5-turbo", PRICING), ScriptedProvider(entries), PRICING
    )
    messages = [Message("system", "be useful"), Message("user", "ping")]
    text, usage = gateway.complete(Role.EXECUTOR, messages)
    assert text == "pong"
    assert usage.input_chars == len("system: be useful\nuser: ping")
    assert usage.output_chars == 4


def test_identical_prompt_assemblies_count_identically():
    provider = ScriptedProvider([ScriptEntry(None, "", "a"), ScriptEntry(None, "", "a")])
    gateway = Gateway(RoleBinding.uniform("gpt-3.5-turbo", PRICING), provider, PRICING)
    m1 = [Message("user", "hello world")]
    m2 = [Message("user", "hello world")]
    _, u1 = gateway.complete(Role.EXECUTOR, m1)
    _, u2 = gateway.complete(Role.EXECUTOR, m2)
    assert u1.input_chars == u2.input_chars


def test_ledger_totals_are_sum_of_usages():
    provider = ScriptedProvider([ScriptEntry(None, "", "xy"), ScriptEntry(None, "", "zzz")])
    gateway = Gateway(RoleBinding.uniform("gpt-3.5-turbo", PRICING), provider, PRICING)
    _, u1 = gateway.complete(Role.EXECUTOR, [Message("user", "one")])
    _, u2 = gateway.complete(Role.VERIFIER, [Message("user", "two longer")])
    totals = gateway.ledger.totals_by_model()["gpt-3.5-turbo"]
    assert totals == (u1.input_chars + u2.input_chars, u1.output_chars + u2.output_chars)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.sampled_from(list(Role)),
            st.integers(min_value=0, max_value=5_000),
            st.integers(min_value=0, max_value=500),
        ),
        max_size=40,
    )
)
def test_ledger_additivity_under_interleavings(calls):
    ledger = UsageLedger()
    expected: dict[str, list[int]] = {}
    for role, chars_in, chars_out in calls:
        model = "gpt-3.5-turbo" if role in (Role.EXECUTOR, Role.JUDGE) else "gpt-4-0125-preview"
        ledger.add(role, Usage(model, chars_in, chars_out))
        bucket = expected.setdefault(model, [0, 0])
        bucket[0] += chars_in
        bucket[1] += chars_out
    assert ledger.totals_by_model() == {m: (v[0], v[1]) for m, v in expected.items()}


def test_ledger_thread_safety():
    ledger = UsageLedger()

    def work():
        for _ in range(500):
            ledger.add(Role.EXECUTOR, Usage("m", 1, 1))

    threads = [threading.Thread(target=work) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert ledger.totals_by_model()["m"] == (4000, 4000)


def test_scripted_provider_exhaustion():
    provider = ScriptedProvider([ScriptEntry(None, "classify", "YES")])
    messages = [Message("user", "please classify this")]
    assert provider.complete(Role.CLASSIFIER1, "m", messages) == "YES"
    with pytest.raises(ScriptExhausted):
        provider.complete(Role.CLASSIFIER1, "m", messages)


def test_scripted_provider_role_filter():
    provider = ScriptedProvider([ScriptEntry("Verifier", "", "SCORE: 9")])
    with pytest.raises(ScriptExhausted):
        provider.complete(Role.EXECUTOR, "m", [Message("user", "x")])
    assert provider.complete(Role.VERIFIER, "m", [Message("user", "x")]) == "SCORE: 9"


def test_scripted_provider_substring_match_order():
    provider = ScriptedProvider(
        [ScriptEntry(None, "beta", "B"), ScriptEntry(None, "alpha", "A")]
    )
    assert provider.complete(Role.EXECUTOR, "m", [Message("user", "alpha")]) == "A"
    assert provider.complete(Role.EXECUTOR, "m", [Message("user", "beta")]) == "B"


def test_scripted_provider_strict_order():
    entries = [ScriptEntry(None, "first", "1"), ScriptEntry(None, "second", "2")]
    provider = ScriptedProvider(entries, strict=True)
    with pytest.raises(ScriptExhausted):
        provider.complete(Role.EXECUTOR, "m", [Message("user", "second")])


def test_role_binding_must_be_total():
    with pytest.raises(ValueError):
        RoleBinding({Role.EXECUTOR: "gpt-3.5-turbo"})
    with pytest.raises(UnpricedModel):
        RoleBinding.uniform("unknown-model", PRICING)


def test_pricing_table_load(tmp_path):
    path = tmp_path / "pricing.json"
    path.write_text(
        '[{"model": "m1", "in_per_1m": 1.5, "out_per_1m": 2.0}]', encoding="utf-8"
    )
    table = PricingTable.load(path)
    assert table.prices == {"m1": (1.5, 2.0)}


class _FakeResponse:
    def __init__(self, status_code: int, content: str):
        self.status_code = status_code
        self.text = content
        self._content = content

    def json(self):
        return {"choices": [{"message": {"content": self._content}}]}


def test_http_provider_success(monkeypatch):
    seen = {}

    def fake_post(url, headers=None, json=None, timeout=None):
        seen["url"] = url
        seen["body"] = json
        seen["headers"] = headers
        return _FakeResponse(200, "hello")

    monkeypatch.setattr("chops.gateway.requests.post", fake_post)
    monkeypatch.setenv("CHOPS_API_KEY", "secret-token")
    provider = HttpChatProvider("https://api.example.test/v1")
    text = provider.complete(Role.EXECUTOR, "model-x", [Message("user", "hi")])
    assert text == "hello"
    assert seen["url"] == "https://api.example.test/v1/chat/completions"
    assert seen["body"]["model"] == "model-x"
    assert seen["headers"]["Authorization"] == "Bearer secret-token"


def test_http_provider_unreachable(monkeypatch):
    import requests as requests_module

    def fake_post(*args, **kwargs):
        raise requests_module.ConnectionError("refused")

    monkeypatch.setattr("chops.gateway.requests.post", fake_post)
    provider = HttpChatProvider("https://down.example.test", retries=1, backoff=0.0)
    with pytest.raises(ProviderUnreachable):
        provider.complete(Role.EXECUTOR, "m", [Message("user", "hi")])


def test_http_provider_client_error_no_retry(monkeypatch):
    calls = {"n": 0}

    def fake_post(*args, **kwargs):
        calls["n"] += 1
        return _FakeResponse(400, "bad request")

    monkeypatch.setattr("chops.gateway.requests.post", fake_post)
    provider = HttpChatProvider("https://api.example.test", retries=2, backoff=0.0)
    with pytest.raises(ProviderError):
        provider.complete(Role.EXECUTOR, "m", [Message("user", "hi")])
    assert calls["n"] == 1


def test_ledger_merge_is_additive():
    a = UsageLedger.from_totals({"m1": (10, 1)})
    b = UsageLedger.from_totals({"m1": (5, 2), "m2": (7, 3)})
    a.merge(b)
    assert a.totals_by_model() == {"m1": (15, 3), "m2": (7, 3)}
