import os
import re

import pytest

from ronar.provider import (
    MockProvider,
    ProviderRequest,
    ProviderUnavailable,
    RateLimited,
    load_provider,
    set_max_inflight,
)


def test_mock_contract_empty_history():
    provider = MockProvider()
    request = ProviderRequest(system_prompt="", user_prompt="[HISTORY]\n(none)\n[/HISTORY]\nmode=info\n")
    response = provider.complete(request)
    assert re.fullmatch(r"MOCK\[mode=info;hist=0;h=[0-9a-f]{12}\]", response.text)
    assert response.provider == "mock"


def test_mock_counts_numbered_items():
    provider = MockProvider()
    user = "[HISTORY]\n[0] first\n[1] second\n[/HISTORY]\nmode=debug\n"
    response = provider.complete(ProviderRequest(system_prompt="sys", user_prompt=user))
    assert "hist=2" in response.text
    assert "mode=debug" in response.text


def test_mock_deterministic():
    provider = MockProvider()
    request = ProviderRequest(system_prompt="a", user_prompt="b", request_id="fixed")
    assert provider.complete(request).text == provider.complete(request).text


def test_mock_echo_tokens():
    provider = MockProvider()
    response = provider.complete(
        ProviderRequest(system_prompt="", user_prompt="blah ECHO{failure_time_s=12.4} blah")
    )
    assert "failure_time_s=12.4" in response.text


def test_mock_capture_records_requests():
    captured = []
    provider = MockProvider(capture=captured)
    provider.complete(ProviderRequest(system_prompt="s", user_prompt="u"))
    assert len(captured) == 1 and captured[0].user_prompt == "u"


def test_mock_mode_defaults_to_none():
    provider = MockProvider()
    assert "mode=none" in provider.complete(ProviderRequest(system_prompt="", user_prompt="plain")).text


def test_load_provider_kinds(tmp_path):
    assert load_provider({"provider": "mock"}).name == "mock"
    http = load_provider({"provider": "http", "endpoint": "http://x/v1", "model": "m"})
    assert http.name == "http"
    config = tmp_path / "provider.json"
    config.write_text('{"provider": "mock"}')
    assert load_provider(str(config)).name == "mock"
    with pytest.raises(ValueError):
        load_provider({"provider": "carrier-pigeon"})


def test_http_provider_missing_credential_env():
    provider = load_provider(
        {"provider": "http", "endpoint": "http://localhost:1/v1", "model": "m", "credential_env_var": "RONAR_NO_SUCH_VAR"}
    )
    with pytest.raises(ProviderUnavailable):
        provider.complete(ProviderRequest(system_prompt="", user_prompt="hi"))


def test_http_provider_connection_error_maps_to_unavailable():
    provider = load_provider({"provider": "http", "endpoint": "http://127.0.0.1:9/v1", "model": "m"})
    with pytest.raises(ProviderUnavailable):
        provider.complete(ProviderRequest(system_prompt="", user_prompt="hi"))


def test_rate_limited_carries_retry_after():
    err = RateLimited(2.5)
    assert err.retry_after == 2.5


def test_set_max_inflight_validates():
    with pytest.raises(ValueError):
        set_max_inflight(0)
    set_max_inflight(4)


@pytest.mark.skipif(
    not os.environ.get("RONAR_LIVE_PROVIDER"),
    reason="live provider smoke test is opt-in (set RONAR_LIVE_PROVIDER and RONAR_PROVIDER_CONFIG)",
)
def test_live_provider_smoke():
    provider = load_provider(os.environ["RONAR_PROVIDER_CONFIG"])
    response = provider.complete(
        ProviderRequest(system_prompt="Reply with one word.", user_prompt="Say ready.")
    )
    assert response.text.strip()
