"""Gateway core: parameter types, retry/limit wrappers, and the run log.

The gateway normalizes every embedding it returns to unit L2 norm so
cosine computations are comparable across backends. With deterministic
(mock) providers, every operation is a pure function of its inputs and
the seed.
"""

from __future__ import annotations

import io
import json
import logging
import random
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

CAPABILITIES = ("text", "image", "text_embed", "image_embed", "multimodal")

#: Images sent to multimodal backends are downscaled to fit this edge.
DEFAULT_MAX_IMAGE_PX = 2048


class GatewayError(Exception):
    pass


class PreconditionError(GatewayError):
    pass


class CapabilityError(GatewayError):
    pass


class TransientBackendError(GatewayError):
    """Transport-level failure; eligible for retry."""


class BackoffExhaustedError(GatewayError):
    pass


class EmptyCompletionError(GatewayError):
    pass


class ModerationRefusalError(GatewayError):
    """The rendering backend refused the prompt on content-policy grounds."""

    def __init__(self, backend_message: str):
        super().__init__(backend_message)
        self.backend_message = backend_message


class EmbeddingDimensionError(GatewayError):
    pass


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.9
    top_p: float = 0.9
    repetition_penalty: float = 1.1
    max_tokens: int = 512
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0,1]")
        if self.repetition_penalty < 1:
            raise ValueError("repetition_penalty must be >= 1")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class RenderParams:
    inference_steps: int = 35
    guidance_scale: float = 7.5
    width: int = 1024
    height: int = 1024
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.inference_steps <= 0:
            raise ValueError("inference_steps must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")

    def to_dict(self) -> dict:
        return {
            "inference_steps": self.inference_steps,
            "guidance_scale": self.guidance_scale,
            "width": self.width,
            "height": self.height,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_s: float = 0.5
    jitter: float = 0.1


@dataclass(frozen=True)
class BackendConfig:
    """One backend section of the gateway config.

    ``auth_env`` names an environment variable holding the credential;
    the secret itself is never stored or serialized.
    """

    capability: str
    provider: str = "mock"
    url: str | None = None
    model: str = "mock"
    auth_env: str | None = None
    timeout_s: float = 60.0
    max_concurrent: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    options: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.capability not in CAPABILITIES:
            raise ValueError(f"unknown capability: {self.capability!r}")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")


@dataclass(frozen=True)
class RenderedImage:
    data: bytes
    params: RenderParams
    model: str


class RunLog:
    """Thread-safe line-delimited JSON log of request metadata.

    Only metadata is logged (capability, model id, latency, sizes);
    never prompt text, image bytes, or credentials.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._mutex = threading.Lock()

    def write(self, entry: dict) -> None:
        line = json.dumps(entry, sort_keys=True) + "\n"
        with self._mutex:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line)


@dataclass
class _Backend:
    config: BackendConfig
    provider: Any
    semaphore: threading.BoundedSemaphore


def _l2_normalize(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise EmbeddingDimensionError("backend returned a zero-norm embedding")
    return matrix / norms


class ModelGateway:
    """Uniform front door to the five backend capabilities."""

    def __init__(self, backends: dict[str, tuple[BackendConfig, Any]], run_log: RunLog | None = None):
        self._backends: dict[str, _Backend] = {}
        for capability, (config, provider) in backends.items():
            self._backends[capability] = _Backend(
                config=config,
                provider=provider,
                semaphore=threading.BoundedSemaphore(config.max_concurrent),
            )
        self.run_log = run_log

    # -- plumbing ----------------------------------------------------------

    @property
    def deterministic(self) -> bool:
        """True when every configured provider is deterministic (mocks)."""
        return all(getattr(b.provider, "deterministic", False) for b in self._backends.values())

    def model_id(self, capability: str) -> str:
        return self._backend(capability).config.model

    def _backend(self, capability: str) -> _Backend:
        backend = self._backends.get(capability)
        if backend is None:
            raise CapabilityError(f"no backend configured for capability {capability!r}")
        return backend

    def _call(self, capability: str, op: str, fn, extra: dict | None = None):
        backend = self._backend(capability)
        policy = backend.config.retry
        started = time.monotonic()
        error: Exception | None = None
        for attempt in range(1, policy.max_attempts + 1):
            try:
                with backend.semaphore:
                    result = fn(backend.provider)
                self._log(backend, op, started, ok=True, extra=extra)
                return result
            except TransientBackendError as exc:
                error = exc
                if attempt < policy.max_attempts:
                    delay = policy.backoff_s * (2 ** (attempt - 1))
                    delay *= 1 + policy.jitter * random.random()
                    time.sleep(delay)
            except Exception:
                self._log(backend, op, started, ok=False, extra=extra)
                raise
        self._log(backend, op, started, ok=False, extra=extra)
        raise BackoffExhaustedError(
            f"{capability} backend failed after {policy.max_attempts} attempts: {error}"
        ) from error

    def _log(self, backend: _Backend, op: str, started: float, ok: bool, extra: dict | None) -> None:
        if self.run_log is None:
            return
        entry = {
            "capability": backend.config.capability,
            "model": backend.config.model,
            "op": op,
            "latency_ms": round((time.monotonic() - started) * 1000, 3),
            "ok": ok,
        }
        if extra:
            entry.update(extra)
        self.run_log.write(entry)

    # -- operations --------------------------------------------------------

    def complete_text(self, prompt: str, params: SamplingParams | None = None) -> str:
        if not prompt:
            raise PreconditionError("prompt must be nonempty")
        params = params or SamplingParams()
        completion = self._call(
            "text",
            "complete_text",
            lambda p: p.complete(prompt, params),
            extra={"prompt_chars": len(prompt)},
        )
        if not completion or not completion.strip():
            raise EmptyCompletionError("backend returned an empty completion")
        return completion

    def render_image(self, description: str, params: RenderParams | None = None) -> RenderedImage:
        if not description:
            raise PreconditionError("description must be nonempty")
        params = params or RenderParams()
        backend = self._backend("image")
        data, seed = self._call(
            "image",
            "render_image",
            lambda p: p.render(description, params),
            extra={"description_chars": len(description)},
        )
        return RenderedImage(data=data, params=replace(params, seed=seed), model=backend.config.model)

    def embed_text(self, texts: Sequence[str]) -> np.ndarray:
        if not texts or any(not t for t in texts):
            raise PreconditionError("texts must be a nonempty list of nonempty strings")
        rows = self._call(
            "text_embed",
            "embed_text",
            lambda p: p.embed(list(texts)),
            extra={"batch": len(texts)},
        )
        dims = {len(r) for r in rows}
        if len(rows) != len(texts) or len(dims) != 1:
            raise EmbeddingDimensionError(f"backend returned inconsistent embedding batch: dims={sorted(dims)}")
        return _l2_normalize(np.asarray(rows, dtype=np.float64))

    def embed_image(self, data: bytes) -> np.ndarray:
        if not data:
            raise PreconditionError("image bytes must be nonempty")
        vec = self._call("image_embed", "embed_image", lambda p: p.embed_image(data), extra={"bytes": len(data)})
        return _l2_normalize(np.asarray(vec, dtype=np.float64)[None, :])[0]

    def joint_similarity(self, data: bytes, text: str) -> float:
        """Raw image-text similarity on the joint backend's own scale."""
        if not data or not text:
            raise PreconditionError("image bytes and text must be nonempty")
        backend = self._backend("image_embed")
        if not hasattr(backend.provider, "similarity"):
            raise CapabilityError(
                f"backend {backend.config.model!r} has no joint image-text capability"
            )
        return float(
            self._call("image_embed", "joint_similarity", lambda p: p.similarity(data, text))
        )

    def answer_multimodal(
        self,
        data: bytes,
        prompt: str,
        params: SamplingParams | None = None,
        max_image_px: int = DEFAULT_MAX_IMAGE_PX,
    ) -> str:
        if not data or not prompt:
            raise PreconditionError("image bytes and prompt must be nonempty")
        params = params or SamplingParams()
        data, downscaled = _fit_image(data, max_image_px)
        extra = {"prompt_chars": len(prompt), "image_bytes": len(data)}
        if downscaled:
            extra["downscaled"] = True
        answer = self._call(
            "multimodal", "answer_multimodal", lambda p: p.answer(data, prompt, params), extra=extra
        )
        if not answer or not answer.strip():
            raise EmptyCompletionError("backend returned an empty answer")
        return answer


def _fit_image(data: bytes, max_px: int) -> tuple[bytes, bool]:
    with Image.open(io.BytesIO(data)) as img:
        if max(img.size) <= max_px:
            return data, False
        scale = max_px / max(img.size)
        resized = img.resize((max(1, int(img.width * scale)), max(1, int(img.height * scale))))
        buf = io.BytesIO()
        resized.save(buf, format="PNG")
        log.info("downscaled %dx%d image to backend limit %dpx", img.width, img.height, max_px)
        return buf.getvalue(), True
