from __future__ import annotations

import threading

import httpx
import pytest

from kgqa import llm_gateway as gw


def make_request(content="hi", **kwargs):
    return gw.ChatRequest.from_pairs([("user", content)], **kwargs)


class TestMessageValidation:
    def test_empty_user_content_rejected(self):
        with pytest.raises(ValueError):
            gw.ChatMessage("user", "")

    def test_empty_system_content_allowed(self):
        assert gw.ChatMessage("system", "").content == ""

    def test_bad_role(self):
        with pytest.raises(ValueError):
            gw.ChatMessage("tool", "x")

    def test_empty_messages_rejected(self):
        with pytest.raises(ValueError):
            gw.ChatRequest(messages=())

    def test_negative_temperature_rejected(self):
        with pytest.raises(ValueError):
            make_request(temperature=-0.1)


class TestMockGateway:
    def test_scripted_reply(self):
        mock = gw.MockGateway(["OK"])
        assert mock.chat(make_request()).content == "OK"

    def test_replies_in_order(self):
        mock = gw.MockGateway(["one", {"content": "two"}])
        assert mock.chat(make_request()).content == "one"
        assert mock.chat(make_request()).content == "two"
        assert mock.call_count == 2

    def test_exhaustion(self):
        mock = gw.MockGateway(["only"])
        mock.chat(make_request())
        with pytest.raises(gw.MockScriptExhaustedError):
            mock.chat(make_request())

    def test_default_reply(self):
        mock = gw.MockGateway([], default="fallback")
        assert mock.chat(make_request()).content == "fallback"

    def test_scripted_errors(self):
        mock = gw.MockGateway(
            [
                {"error": "transport"},
                {"error": "auth"},
                {"error": "timeout"},
                {"error": "malformed"},
            ]
        )
        with pytest.raises(gw.TransportError):
            mock.chat(make_request())
        with pytest.raises(gw.AuthError):
            mock.chat(make_request())
        with pytest.raises(gw.GatewayTimeoutError):
            mock.chat(make_request())
        with pytest.raises(gw.MalformedResponseError):
            mock.chat(make_request())

    def test_same_script_reproduces_byte_identical_replies(self):
        script = ["alpha", {"content": "beta"}]
        first = [gw.MockGateway(script).chat(make_request()).content for _ in range(1)]
        second = [gw.MockGateway(script).chat(make_request()).content for _ in range(1)]
        assert first == second

    def test_in_flight_cap_observed(self):
        mock = gw.MockGateway(
            [{"content": "x", "delay": 0.02}] * 8, max_concurrent=2
        )
        threads = [
            threading.Thread(target=lambda: mock.chat(make_request()))
            for _ in range(8)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert 1 <= mock.max_in_flight_observed <= 2
        assert mock.call_count == 8


def http_gateway_with_handler(handler, **cfg_kwargs):
    config = gw.GatewayConfig(
        base_url="http://test/v1",
        api_key="k",
        retry_backoff=0.0,
        **cfg_kwargs,
    )
    return gw.HttpGateway(config, transport=httpx.MockTransport(handler))


def ok_response(content="OK"):
    return httpx.Response(
        200,
        json={
            "choices": [
                {"message": {"role": "assistant", "content": content}, "finish_reason": "stop"}
            ],
            "usage": {"prompt_tokens": 1, "completion_tokens": 1},
        },
    )


class TestHttpGateway:
    def test_success(self):
        gateway = http_gateway_with_handler(lambda req: ok_response("hello"))
        response = gateway.chat(make_request())
        assert response.content == "hello"
        assert response.finish_reason == "stop"

    def test_auth_error_no_retry(self):
        attempts = []

        def handler(req):
            attempts.append(1)
            return httpx.Response(401, json={"error": "bad key"})

        gateway = http_gateway_with_handler(handler, max_retries=3)
        with pytest.raises(gw.AuthError):
            gateway.chat(make_request())
        assert len(attempts) == 1

    def test_retries_transient_then_succeeds(self):
        attempts = []

        def handler(req):
            attempts.append(1)
            if len(attempts) <= 2:
                return httpx.Response(500, text="boom")
            return ok_response("recovered")

        gateway = http_gateway_with_handler(handler, max_retries=3)
        assert gateway.chat(make_request()).content == "recovered"
        assert len(attempts) == 3

    def test_retries_exhausted(self):
        attempts = []

        def handler(req):
            attempts.append(1)
            return httpx.Response(503, text="down")

        gateway = http_gateway_with_handler(handler, max_retries=2)
        with pytest.raises(gw.TransportError):
            gateway.chat(make_request())
        assert len(attempts) == 3  # 1 + max_retries

    def test_timeout_classified(self):
        def handler(req):
            raise httpx.ConnectTimeout("too slow")

        gateway = http_gateway_with_handler(handler, max_retries=0)
        with pytest.raises(gw.GatewayTimeoutError):
            gateway.chat(make_request())

    def test_malformed_body(self):
        gateway = http_gateway_with_handler(
            lambda req: httpx.Response(200, json={"nope": []})
        )
        with pytest.raises(gw.MalformedResponseError):
            gateway.chat(make_request())

    def test_sends_bearer_header_and_payload(self):
        seen = {}

        def handler(req):
            seen["auth"] = req.headers.get("authorization")
            seen["body"] = req.read()
            return ok_response()

        gateway = http_gateway_with_handler(handler)
        gateway.chat(make_request("ping", model="m1", temperature=0.5))
        assert seen["auth"] == "Bearer k"
        assert b'"model": "m1"' in seen["body"] or b'"model":"m1"' in seen["body"]

    def test_in_flight_cap_enforced(self):
        import time as time_module

        in_flight = []
        lock = threading.Lock()
        peak = [0]

        def handler(req):
            with lock:
                in_flight.append(1)
                peak[0] = max(peak[0], len(in_flight))
            time_module.sleep(0.02)
            with lock:
                in_flight.pop()
            return ok_response()

        gateway = http_gateway_with_handler(handler, max_concurrent_requests=2)
        threads = [
            threading.Thread(target=lambda: gateway.chat(make_request()))
            for _ in range(8)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert peak[0] <= 2


class TestExtractStructured:
    CONTRACT = {"name": str, "type": str, "confidence": float}

    def test_plain_json_list(self):
        mock = gw.MockGateway(
            ['[{"name":"IPv6","type":"APP_CON","context":"c","confidence":0.95}]']
        )
        value = gw.extract_structured(mock, "extract", self.CONTRACT)
        assert value == [
            {"name": "IPv6", "type": "APP_CON", "context": "c", "confidence": 0.95}
        ]

    def test_code_fence_and_prose(self):
        reply = (
            "Sure! Here is the result:\n"
            "```json\n"
            '[{"name":"NAT66","type":"FUN","confidence":0.9}]\n'
            "```\nHope that helps."
        )
        mock = gw.MockGateway([reply])
        value = gw.extract_structured(mock, "extract", self.CONTRACT)
        assert value[0]["name"] == "NAT66"

    def test_leading_prose_without_fence(self):
        mock = gw.MockGateway(
            ['The entities are: {"name":"x","type":"ACT","confidence":1} done']
        )
        value = gw.extract_structured(mock, "extract", self.CONTRACT)
        assert value["type"] == "ACT"

    def test_no_structured_block(self):
        mock = gw.MockGateway(["no entities found"])
        with pytest.raises(gw.ParseError):
            gw.extract_structured(mock, "extract", self.CONTRACT)

    def test_missing_field(self):
        mock = gw.MockGateway(['[{"name":"x","type":"ACT"}]'])
        with pytest.raises(gw.SchemaError):
            gw.extract_structured(mock, "extract", self.CONTRACT)

    def test_wrong_type(self):
        mock = gw.MockGateway(['[{"name":"x","type":3,"confidence":0.5}]'])
        with pytest.raises(gw.SchemaError):
            gw.extract_structured(mock, "extract", self.CONTRACT)

    def test_repair_reprompt(self):
        mock = gw.MockGateway(
            ["sorry, here you go", '{"name":"x","type":"ACT","confidence":0.7}']
        )
        value = gw.extract_structured(mock, "extract", self.CONTRACT, repair=True)
        assert value["confidence"] == 0.7
        assert mock.call_count == 2

    def test_integer_confidence_accepted(self):
        mock = gw.MockGateway(['[{"name":"x","type":"ACT","confidence":1}]'])
        value = gw.extract_structured(mock, "extract", self.CONTRACT)
        assert value[0]["confidence"] == 1


class TestClampConfidence:
    @pytest.mark.parametrize(
        "raw,expected,flagged",
        [(0.5, 0.5, False), (1.3, 1.0, True), (-0.2, 0.0, True), (1.0, 1.0, False)],
    )
    def test_clamp(self, raw, expected, flagged):
        value, was_clamped = gw.clamp_confidence(raw)
        assert value == expected
        assert was_clamped is flagged
