"""HTTP providers following the de-facto open inference wire formats.

Text and multimodal use chat-completion requests; embeddings use the
embeddings format (strings, or {"image_b64": ...} objects for images);
rendering posts {prompt, params} and expects a base64 PNG. Credentials
are read from the environment variable named in the backend config at
request time and sent as a bearer token.
"""

from __future__ import annotations

import base64
import os
from typing import Any

import httpx

from .core import (
    BackendConfig,
    ModerationRefusalError,
    RenderParams,
    SamplingParams,
    TransientBackendError,
)


class _HttpBase:
    deterministic = False

    def __init__(self, config: BackendConfig, transport: httpx.BaseTransport | None = None):
        if not config.url:
            raise ValueError(f"http provider for {config.capability} needs a url")
        self.config = config
        self.model = config.model
        self._client = httpx.Client(timeout=config.timeout_s, transport=transport)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.auth_env:
            secret = os.environ.get(self.config.auth_env)
            if secret:
                headers["Authorization"] = f"Bearer {secret}"
        return headers

    def _post(self, payload: dict) -> dict:
        try:
            response = self._client.post(self.config.url, json=payload, headers=self._headers())
        except httpx.HTTPError as exc:
            raise TransientBackendError(f"transport failure: {exc}") from exc
        if response.status_code == 400:
            body = _safe_json(response)
            error = body.get("error", {}) if isinstance(body, dict) else {}
            if isinstance(error, dict) and error.get("type") == "content_policy":
                raise ModerationRefusalError(str(error.get("message", "content policy refusal")))
        if response.status_code >= 500 or response.status_code == 429:
            raise TransientBackendError(f"backend returned {response.status_code}")
        if response.status_code >= 400:
            raise RuntimeError(f"backend error {response.status_code}: {response.text[:200]}")
        return response.json()


def _safe_json(response: httpx.Response) -> Any:
    try:
        return response.json()
    except ValueError:
        return {}


def _sampling_payload(params: SamplingParams) -> dict:
    payload = {
        "temperature": params.temperature,
        "top_p": params.top_p,
        "repetition_penalty": params.repetition_penalty,
        "max_tokens": params.max_tokens,
    }
    if params.seed is not None:
        payload["seed"] = params.seed
    return payload


class HttpTextProvider(_HttpBase):
    def complete(self, prompt: str, params: SamplingParams) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            **_sampling_payload(params),
        }
        body = self._post(payload)
        return body["choices"][0]["message"]["content"]


class HttpMultimodalProvider(_HttpBase):
    def answer(self, data: bytes, prompt: str, params: SamplingParams) -> str:
        image_url = "data:image/png;base64," + base64.b64encode(data).decode("ascii")
        payload = {
            "model": self.model,
            "messages": [
                {
                    "role": "user",
                    "content": [
                        {"type": "text", "text": prompt},
                        {"type": "image_url", "image_url": {"url": image_url}},
                    ],
                }
            ],
            **_sampling_payload(params),
        }
        body = self._post(payload)
        return body["choices"][0]["message"]["content"]


class HttpEmbeddingProvider(_HttpBase):
    """Embeddings endpoint; serves both the text and joint image roles."""

    def embed(self, texts: list[str]) -> list[list[float]]:
        body = self._post({"model": self.model, "input": texts})
        return [row["embedding"] for row in body["data"]]

    def embed_image(self, data: bytes) -> list[float]:
        b64 = base64.b64encode(data).decode("ascii")
        body = self._post({"model": self.model, "input": [{"image_b64": b64}]})
        return body["data"][0]["embedding"]

    def similarity(self, data: bytes, text: str) -> float:
        """Raw dot product of the backend's own (unnormalized) vectors."""
        iv = self.embed_image(data)
        tv = self.embed([text])[0]
        return float(sum(a * b for a, b in zip(iv, tv)))


class HttpImageProvider(_HttpBase):
    def render(self, description: str, params: RenderParams) -> tuple[bytes, int]:
        payload = {
            "model": self.model,
            "prompt": description,
            "inference_steps": params.inference_steps,
            "guidance_scale": params.guidance_scale,
            "width": params.width,
            "height": params.height,
        }
        if params.seed is not None:
            payload["seed"] = params.seed
        body = self._post(payload)
        data = base64.b64decode(body["image_b64"])
        return data, int(body.get("seed", params.seed if params.seed is not None else -1))
