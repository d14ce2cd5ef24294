"""Build a gateway from a YAML/JSON config file.

Example::

    run_log: runlog.jsonl
    backends:
      text:       {provider: mock, model: mock-text, options: {seed: 0}}
      image:      {provider: mock, model: mock-t2i}
      text_embed: {provider: mock, model: mock-embed, options: {dim: 32}}
      image_embed: {provider: mock, model: mock-clip}
      multimodal: {provider: mock, model: mock-vlm, options: {mode: hash_letter}}

An HTTP backend adds url/auth_env/timeout_s/max_concurrent/retries;
the environment variable named by auth_env holds the secret.
"""

from __future__ import annotations

import json
from pathlib import Path

import yaml

from . import http as http_providers
from . import mock as mock_providers
from .core import BackendConfig, ModelGateway, RetryPolicy, RunLog


def load_gateway_config(path: str | Path) -> dict:
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".json"):
        return json.loads(text)
    return yaml.safe_load(text)


def _backend_config(capability: str, section: dict) -> BackendConfig:
    retries = section.get("retries", {})
    return BackendConfig(
        capability=capability,
        provider=section.get("provider", "mock"),
        url=section.get("url"),
        model=section.get("model", "mock"),
        auth_env=section.get("auth_env"),
        timeout_s=float(section.get("timeout_s", 60.0)),
        max_concurrent=int(section.get("max_concurrent", 4)),
        retry=RetryPolicy(
            max_attempts=int(retries.get("max_attempts", 3)),
            backoff_s=float(retries.get("backoff_s", 0.5)),
            jitter=float(retries.get("jitter", 0.1)),
        ),
        options=dict(section.get("options", {})),
    )


_MOCKS = {
    "text": mock_providers.MockTextProvider,
    "image": mock_providers.MockImageProvider,
    "text_embed": mock_providers.MockTextEmbedProvider,
    "image_embed": mock_providers.MockImageEmbedProvider,
    "multimodal": mock_providers.MockMultimodalProvider,
}

_HTTP = {
    "text": http_providers.HttpTextProvider,
    "image": http_providers.HttpImageProvider,
    "text_embed": http_providers.HttpEmbeddingProvider,
    "image_embed": http_providers.HttpEmbeddingProvider,
    "multimodal": http_providers.HttpMultimodalProvider,
}


def _build_provider(config: BackendConfig, transport=None):
    if config.provider == "mock":
        cls = _MOCKS[config.capability]
        return cls(model=config.model, **config.options)
    if config.provider == "http":
        cls = _HTTP[config.capability]
        return cls(config, transport=transport)
    raise ValueError(f"unknown provider kind: {config.provider!r}")


def build_gateway(config: dict, run_log_dir: str | Path | None = None, transport=None) -> ModelGateway:
    """Instantiate providers for every configured capability."""
    backends = {}
    for capability, section in (config.get("backends") or {}).items():
        bc = _backend_config(capability, section or {})
        backends[capability] = (bc, _build_provider(bc, transport=transport))
    run_log = None
    log_name = config.get("run_log")
    if log_name:
        base = Path(run_log_dir) if run_log_dir else Path(".")
        run_log = RunLog(base / log_name)
    return ModelGateway(backends, run_log=run_log)


def mock_gateway(seed: int = 0, run_log: RunLog | None = None, **overrides) -> ModelGateway:
    """All-mock gateway used by tests and offline runs."""
    backends = {}
    for capability, cls in _MOCKS.items():
        options = overrides.get(capability, {})
        if capability == "text":
            options = {"seed": seed, **options}
        bc = BackendConfig(capability=capability, provider="mock", model=f"mock-{capability}")
        backends[capability] = (bc, cls(model=bc.model, **options))
    return ModelGateway(backends, run_log=run_log)
