import json
import threading
import time

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agentic_nn.errors import (
    MalformedProviderReply,
    NoMatchingRule,
    ProviderError,
    RateLimited,
    Timeout,
    TransientProviderError,
)
from agentic_nn.llm import ChatRequest, Gateway, LiveBackend, RawReply, Rule, ScriptedOracle, count_tokens

from conftest import scripted_gateway


def req(text="PING", **kw):
    return ChatRequest(model_name=kw.pop("model_name", "m"), user_text=text, **kw)


def test_ping_pong():
    gw = scripted_gateway([("PING", "PONG")])
    resp = gw.complete(req())
    assert resp.text == "PONG"
    assert resp.backend == "scripted"


def test_no_matching_rule():
    with pytest.raises(NoMatchingRule):
        scripted_gateway([("PING", "PONG")]).complete(req("hello"))


def test_default_reply_used_when_nothing_matches():
    assert scripted_gateway([], default_reply="fallback").complete(req("x")).text == "fallback"


def test_first_matching_rule_wins():
    gw = scripted_gateway([("PI", "first"), ("PING", "second")])
    assert gw.complete(req()).text == "first"


def test_fingerprint_and_callable_rules():
    r = req("abc", system_text="sys")
    gw = scripted_gateway([Rule(f"sha256:{r.fingerprint}", "by hash"), Rule(lambda q: True, lambda q: q.user_text[::-1])])
    assert gw.complete(r).text == "by hash"
    assert gw.complete(req("xyz")).text == "zyx"


def test_identical_requests_identical_responses_and_usage():
    gw = scripted_gateway([("PING", "PONG pong")])
    a, b = gw.complete(req()), gw.complete(req())
    assert a.text == b.text
    assert (a.usage.input_tokens, a.usage.output_tokens) == (b.usage.input_tokens, b.usage.output_tokens)
    assert gw.usage.input_tokens == 2 * a.usage.input_tokens
    assert a.usage.output_tokens == count_tokens("PONG pong") == 2


def test_cost_accounting_uses_prices():
    gw = scripted_gateway([("PING", "one two three")], prices={"m": (1_000_000.0, 2_000_000.0)})
    gw.complete(req("PING"))
    # input: "" + " " + "PING" -> 1 token; output 3 tokens
    assert gw.usage.cumulative_cost_estimate == pytest.approx(1 * 1 + 3 * 2)


def test_calls_counted_by_purpose():
    gw = scripted_gateway([("PING", "PONG")])
    gw.complete(req(purpose="selector"))
    gw.complete(req(purpose="judge"))
    gw.complete(req(purpose="judge"))
    assert gw.calls == {"selector": 1, "judge": 2}


def test_request_validation():
    with pytest.raises(ValueError):
        req("")
    with pytest.raises(ValueError):
        req(temperature=-1)
    with pytest.raises(ValueError):
        req(max_output_tokens=0)


def test_oracle_from_json(tmp_path):
    path = tmp_path / "rules.json"
    path.write_text(json.dumps({"rules": [{"match": "a", "reply": "b"}], "default_reply": "d"}))
    oracle = ScriptedOracle.from_json(path)
    assert oracle.lookup(req("xax")) == "b"
    assert oracle.lookup(req("zzz")) == "d"
    with pytest.raises(ValueError):
        ScriptedOracle.from_obj([{"match": "a"}])


class FlakyBackend:
    kind = "live"

    def __init__(self, failures):
        self.failures = list(failures)
        self.calls = 0

    def send(self, request):
        self.calls += 1
        if self.failures:
            raise self.failures.pop(0)
        return RawReply("ok", 1, 1)


def test_transient_errors_retried_with_exponential_backoff():
    sleeps = []
    backend = FlakyBackend([RateLimited("slow down"), Timeout("t"), TransientProviderError("502")])
    gw = Gateway(backend, max_retries=3, backoff_base=0.5, backoff_cap=8, sleep=sleeps.append)
    assert gw.complete(req()).text == "ok"
    assert backend.calls == 4
    assert sleeps == [0.5, 1.0, 2.0]


def test_backoff_is_capped():
    sleeps = []
    gw = Gateway(FlakyBackend([Timeout("t")] * 5), max_retries=5, backoff_base=1, backoff_cap=3, sleep=sleeps.append)
    gw.complete(req())
    assert sleeps == [1, 2, 3, 3, 3]


def test_retries_exhausted_reraises():
    gw = Gateway(FlakyBackend([Timeout("t")] * 3), max_retries=2, sleep=lambda s: None)
    with pytest.raises(Timeout):
        gw.complete(req())


def test_permanent_errors_not_retried():
    backend = FlakyBackend([ProviderError("400 bad request")])
    gw = Gateway(backend, max_retries=3, sleep=lambda s: None)
    with pytest.raises(ProviderError):
        gw.complete(req())
    assert backend.calls == 1


def test_parallelism_bound():
    state = {"now": 0, "peak": 0}
    lock = threading.Lock()

    class Slow:
        kind = "scripted"

        def send(self, request):
            with lock:
                state["now"] += 1
                state["peak"] = max(state["peak"], state["now"])
            time.sleep(0.01)
            with lock:
                state["now"] -= 1
            return RawReply("x", 1, 1)

    gw = Gateway(Slow(), max_parallel=2)
    threads = [threading.Thread(target=gw.complete, args=(req(),)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert state["peak"] <= 2
    assert gw.usage.input_tokens == 8


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 20), min_size=1, max_size=20))
def test_concurrent_usage_totals_are_exact(sizes):
    gw = scripted_gateway([(lambda r: True, lambda r: "w " * int(r.user_text))], max_parallel=4)
    threads = [threading.Thread(target=gw.complete, args=(req(str(n)),)) for n in sizes]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert gw.usage.output_tokens == sum(sizes)
    assert gw.usage.input_tokens == len(sizes)


# -- live backend over a mock transport --------------------------------------------


def live(handler, **kw):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return Gateway(LiveBackend("https://example.test/v1/", "sk-test", client=client), sleep=lambda s: None, **kw)


def test_live_request_shape_and_usage():
    seen = {}

    def handler(request: httpx.Request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={
            "choices": [{"message": {"content": "hi"}}],
            "usage": {"prompt_tokens": 7, "completion_tokens": 2},
        })

    resp = live(handler).complete(req("hello", system_text="be kind", temperature=0.2, max_output_tokens=9))
    assert resp.text == "hi" and resp.backend == "live"
    assert (resp.usage.input_tokens, resp.usage.output_tokens) == (7, 2)
    assert seen["url"] == "https://example.test/v1/chat/completions"
    assert seen["auth"] == "Bearer sk-test"
    assert seen["body"]["messages"] == [
        {"role": "system", "content": "be kind"},
        {"role": "user", "content": "hello"},
    ]
    assert seen["body"]["max_tokens"] == 9 and seen["body"]["temperature"] == 0.2


def test_live_429_then_success():
    replies = iter([httpx.Response(429, text="slow"), httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})])
    assert live(lambda r: next(replies)).complete(req()).text == "ok"


def test_live_malformed_body():
    with pytest.raises(MalformedProviderReply):
        live(lambda r: httpx.Response(200, json={"nope": 1})).complete(req())


def test_live_client_error_not_retried():
    calls = []

    def handler(r):
        calls.append(1)
        return httpx.Response(401, text="bad key")

    with pytest.raises(ProviderError):
        live(handler).complete(req())
    assert len(calls) == 1


def test_live_timeout_maps_to_timeout():
    def handler(r):
        raise httpx.ReadTimeout("slow", request=r)

    with pytest.raises(Timeout):
        live(handler, max_retries=1).complete(req())
