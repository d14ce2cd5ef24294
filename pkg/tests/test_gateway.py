from __future__ import annotations

import base64
import json
import threading
import time

import httpx
import numpy as np
import pytest

from metonym.gateway.config import build_gateway, mock_gateway
from metonym.gateway.core import (
    BackendConfig,
    BackoffExhaustedError,
    CapabilityError,
    EmptyCompletionError,
    ModelGateway,
    ModerationRefusalError,
    PreconditionError,
    RenderParams,
    RetryPolicy,
    RunLog,
    SamplingParams,
    TransientBackendError,
)
from metonym.gateway.mock import (
    MockImageEmbedProvider,
    MockImageProvider,
    MockMultimodalProvider,
    MockTextEmbedProvider,
    MockTextProvider,
)


def single_backend(capability: str, provider, run_log=None, **cfg) -> ModelGateway:
    config = BackendConfig(capability=capability, model=getattr(provider, "model", "m"), **cfg)
    return ModelGateway({capability: (config, provider)}, run_log=run_log)


# -- text ----------------------------------------------------------------------


def test_canned_completion_is_exact():
    gw = single_backend("text", MockTextProvider(canned="Representamen: a, b, c"))
    assert gw.complete_text("anything") == "Representamen: a, b, c"


def test_empty_prompt_is_precondition_error(gateway):
    with pytest.raises(PreconditionError):
        gateway.complete_text("")


def test_same_prompt_same_seed_is_deterministic(gateway):
    params = SamplingParams(seed=11)
    a = gateway.complete_text("Object: Hope -> Representamen:", params)
    b = gateway.complete_text("Object: Hope -> Representamen:", params)
    assert a == b


def test_empty_completion_raises():
    gw = single_backend("text", MockTextProvider(canned="   "))
    with pytest.raises(EmptyCompletionError):
        gw.complete_text("x")


# -- render ----------------------------------------------------------------------


def test_mock_render_pure_function_of_description_and_seed():
    gw = single_backend("image", MockImageProvider())
    a = gw.render_image("scene", RenderParams(seed=5))
    b = gw.render_image("scene", RenderParams(seed=5))
    c = gw.render_image("scene", RenderParams(seed=6))
    assert a.data == b.data
    assert a.data != c.data
    assert a.params.seed == 5


def test_render_defaults_echoed():
    gw = single_backend("image", MockImageProvider())
    result = gw.render_image("scene")
    assert result.params.inference_steps == 35
    assert result.params.guidance_scale == 7.5
    assert result.params.seed is not None  # resolved by the provider


def test_render_moderation_refusal():
    gw = single_backend("image", MockImageProvider(refuse_marker="__bad__"))
    with pytest.raises(ModerationRefusalError):
        gw.render_image("a __bad__ scene")


# -- embeddings -------------------------------------------------------------------


def test_embed_text_self_cosine_and_norms(gateway):
    vecs = gateway.embed_text(["x", "y", "z"])
    assert vecs.shape[0] == 3
    assert np.allclose(np.linalg.norm(vecs, axis=1), 1.0, atol=1e-6)
    again = gateway.embed_text(["x"])
    assert float(vecs[0] @ again[0]) == pytest.approx(1.0, abs=1e-6)


def test_orthogonal_mode_gives_zero_cosine():
    gw = single_backend("text_embed", MockTextEmbedProvider(mode="orthogonal", dim=8))
    vecs = gw.embed_text(["a", "b"])
    assert float(vecs[0] @ vecs[1]) == 0.0


def test_embed_image_deterministic_and_distinct(gateway):
    img1 = gateway.render_image("one", RenderParams(seed=1)).data
    img2 = gateway.render_image("two", RenderParams(seed=1)).data
    v1 = gateway.embed_image(img1)
    v2 = gateway.embed_image(img1)
    v3 = gateway.embed_image(img2)
    assert np.allclose(v1, v2)
    assert float(v1 @ v3) < 1.0
    assert np.linalg.norm(v1) == pytest.approx(1.0, abs=1e-6)


def test_pixels_mode_distinct_images():
    gw = ModelGateway(
        {
            "image": (BackendConfig(capability="image"), MockImageProvider()),
            "image_embed": (
                BackendConfig(capability="image_embed"),
                MockImageEmbedProvider(mode="pixels"),
            ),
        }
    )
    a = gw.render_image("same text", RenderParams(seed=1)).data
    b = gw.render_image("same text", RenderParams(seed=2)).data
    assert float(gw.embed_image(a) @ gw.embed_image(b)) < 1.0


def test_joint_similarity_extremes(gateway):
    image = gateway.render_image("the described scene").data
    assert gateway.joint_similarity(image, "the described scene") == pytest.approx(1.0, abs=1e-9)


def test_joint_similarity_requires_capability():
    class EmbedOnly:
        deterministic = True
        model = "embed-only"

        def embed_image(self, data):
            return [1.0, 0.0]

    gw = single_backend("image_embed", EmbedOnly())
    with pytest.raises(CapabilityError):
        gw.joint_similarity(b"123", "x")


# -- multimodal ---------------------------------------------------------------------


def test_always_a_mock(gateway):
    image = gateway.render_image("scene").data
    gw = single_backend("multimodal", MockMultimodalProvider(mode="fixed", answer="A"))
    assert gw.answer_multimodal(image, "Which concept?") == "A"


def test_hash_letter_stable_per_image(gateway):
    image = gateway.render_image("scene").data
    gw = single_backend("multimodal", MockMultimodalProvider(mode="hash_letter"))
    assert gw.answer_multimodal(image, "q") == gw.answer_multimodal(image, "q2")


def test_oversized_image_downscaled_and_logged(tmp_path):
    from PIL import Image
    import io

    run_log = RunLog(tmp_path / "runlog.jsonl")
    seen = {}

    class Probe:
        deterministic = True
        model = "probe"

        def answer(self, data, prompt, params):
            with Image.open(io.BytesIO(data)) as img:
                seen["size"] = img.size
            return "A"

    big = Image.new("RGB", (300, 100))
    buf = io.BytesIO()
    big.save(buf, format="PNG")
    gw = single_backend("multimodal", Probe(), run_log=run_log)
    gw.answer_multimodal(buf.getvalue(), "q", max_image_px=150)
    assert max(seen["size"]) <= 150
    entries = [json.loads(l) for l in (tmp_path / "runlog.jsonl").read_text().splitlines()]
    assert any(e.get("downscaled") for e in entries)


# -- retries, limits, logging ----------------------------------------------------------


class FlakyText:
    deterministic = True
    model = "flaky"

    def __init__(self, fail_times: int):
        self.fail_times = fail_times
        self.calls = 0

    def complete(self, prompt, params):
        self.calls += 1
        if self.calls <= self.fail_times:
            raise TransientBackendError("boom")
        return "ok"


def test_retry_then_success():
    provider = FlakyText(fail_times=2)
    gw = single_backend("text", provider, retry=RetryPolicy(max_attempts=3, backoff_s=0.0))
    assert gw.complete_text("x") == "ok"
    assert provider.calls == 3


def test_backoff_exhausted():
    provider = FlakyText(fail_times=10)
    gw = single_backend("text", provider, retry=RetryPolicy(max_attempts=3, backoff_s=0.0))
    with pytest.raises(BackoffExhaustedError):
        gw.complete_text("x")
    assert provider.calls == 3


def test_concurrency_never_exceeds_max_concurrent():
    class Instrumented:
        deterministic = True
        model = "instrumented"

        def __init__(self):
            self.in_flight = 0
            self.peak = 0
            self.lock = threading.Lock()

        def complete(self, prompt, params):
            with self.lock:
                self.in_flight += 1
                self.peak = max(self.peak, self.in_flight)
            time.sleep(0.01)
            with self.lock:
                self.in_flight -= 1
            return "ok"

    provider = Instrumented()
    gw = single_backend("text", provider, max_concurrent=2)
    threads = [threading.Thread(target=lambda: gw.complete_text("x")) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert provider.peak <= 2


def test_run_log_never_contains_secrets(tmp_path, monkeypatch):
    secret = "sk-TOPSECRET-12345"
    monkeypatch.setenv("TEST_GW_KEY", secret)
    run_log = RunLog(tmp_path / "runlog.jsonl")
    config = BackendConfig(capability="text", model="m", auth_env="TEST_GW_KEY")
    gw = ModelGateway({"text": (config, MockTextProvider(canned="fine"))}, run_log=run_log)
    gw.complete_text("prompt with secret? no.")
    content = (tmp_path / "runlog.jsonl").read_text()
    assert secret not in content
    assert "TEST_GW_KEY" not in content  # only config files name the env var
    assert "prompt with secret" not in content  # no prompt bodies in the log


def test_deterministic_flag(gateway):
    assert gateway.deterministic
    config = BackendConfig(capability="text", provider="http", url="http://x", model="m")
    from metonym.gateway.http import HttpTextProvider

    http_gw = ModelGateway({"text": (config, HttpTextProvider(config))})
    assert not http_gw.deterministic


# -- HTTP providers over a mock transport ------------------------------------------------


def chat_handler(request: httpx.Request) -> httpx.Response:
    body = json.loads(request.content)
    prompt = body["messages"][0]["content"]
    if isinstance(prompt, list):
        prompt = prompt[0]["text"]
    return httpx.Response(200, json={"choices": [{"message": {"content": f"echo:{prompt}"}}]})


def test_http_text_provider_roundtrip():
    config = {
        "backends": {
            "text": {
                "provider": "http",
                "url": "http://backend/v1/chat/completions",
                "model": "remote-llm",
            }
        }
    }
    gw = build_gateway(config, transport=httpx.MockTransport(chat_handler))
    assert gw.complete_text("hi") == "echo:hi"


def test_http_multimodal_provider_roundtrip(gateway):
    image = gateway.render_image("pic").data
    config = {
        "backends": {
            "multimodal": {"provider": "http", "url": "http://backend/v1/chat", "model": "remote-vlm"}
        }
    }
    gw = build_gateway(config, transport=httpx.MockTransport(chat_handler))
    assert gw.answer_multimodal(image, "what?") == "echo:what?"


def test_http_embeddings_and_render():
    def handler(request: httpx.Request) -> httpx.Response:
        body = json.loads(request.content)
        if "input" in body:
            data = [{"embedding": [3.0, 4.0]} for _ in body["input"]]
            return httpx.Response(200, json={"data": data})
        png = base64.b64encode(b"\x89PNG fake").decode()
        return httpx.Response(200, json={"image_b64": png, "seed": 77})

    config = {
        "backends": {
            "text_embed": {"provider": "http", "url": "http://b/emb", "model": "e"},
            "image": {"provider": "http", "url": "http://b/t2i", "model": "sd"},
        }
    }
    gw = build_gateway(config, transport=httpx.MockTransport(handler))
    vecs = gw.embed_text(["a", "b"])
    assert np.allclose(np.linalg.norm(vecs, axis=1), 1.0)  # gateway normalizes 3-4-5
    data, seed = gw._backends["image"].provider.render("x", RenderParams())
    assert data.startswith(b"\x89PNG")
    assert seed == 77


def test_http_retries_on_5xx_and_gives_up():
    calls = {"n": 0}

    def handler(request: httpx.Request) -> httpx.Response:
        calls["n"] += 1
        return httpx.Response(503)

    config = {
        "backends": {
            "text": {
                "provider": "http",
                "url": "http://b/c",
                "model": "m",
                "retries": {"max_attempts": 3, "backoff_s": 0.0},
            }
        }
    }
    gw = build_gateway(config, transport=httpx.MockTransport(handler))
    with pytest.raises(BackoffExhaustedError):
        gw.complete_text("x")
    assert calls["n"] == 3


def test_http_render_content_policy_maps_to_moderation_error():
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(
            400, json={"error": {"type": "content_policy", "message": "nope"}}
        )

    config = {"backends": {"image": {"provider": "http", "url": "http://b/t2i", "model": "sd"}}}
    gw = build_gateway(config, transport=httpx.MockTransport(handler))
    with pytest.raises(ModerationRefusalError, match="nope"):
        gw.render_image("x")
