"""Deterministic in-tree providers so the whole pipeline runs offline.

Every mock is a pure function of its inputs and configured seed:
text completions come from a seeded pseudo-vocabulary, embeddings from
hashed unit vectors, and rendered images are 64x64 test patterns whose
pixels derive from (description, seed). Rendered PNGs carry their
description in a tEXt chunk, which the metadata embedding mode uses to
give images of equal descriptions equal embeddings.
"""

from __future__ import annotations

import hashlib
import io
import re
from typing import Callable, Sequence

import numpy as np
from PIL import Image, PngImagePlugin

from .core import ModerationRefusalError, RenderParams, SamplingParams

MOCK_IMAGE_SIZE = 64

_SYLLABLES = (
    "ba", "ce", "di", "fo", "gu", "ha", "ki", "lo", "me", "nu",
    "pa", "re", "si", "to", "vu", "wa", "xi", "yo", "za", "bri",
)


def _digest(*parts: object) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x00")
    return h.digest()


def _seed_int(*parts: object) -> int:
    return int.from_bytes(_digest(*parts)[:8], "big")


def hash_unit_vector(key: str, dim: int) -> np.ndarray:
    rng = np.random.default_rng(_seed_int("vec", key))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def _pseudo_word(rng: np.random.Generator) -> str:
    n = int(rng.integers(2, 4))
    return "".join(_SYLLABLES[int(rng.integers(0, len(_SYLLABLES)))] for _ in range(n))


_REP_MARKER = re.compile(r"Object:\s*(?P<word>[^\n]+?)\s*->\s*Representamen:\s*$")
_DESC_MARKER = re.compile(
    r"Objects:\s*(?P<reps>[^|]+?)\s*\|\|\s*Concept Word:\s*(?P<goal>[^|]+?)\s*\|\|\s*Output:\s*$"
)


class MockTextProvider:
    """Seeded text completions shaped like the pipeline's two prompt kinds.

    ``script`` overrides everything: completions are served in order
    (for fail-safe tests). ``canned`` always returns one fixed string.
    """

    deterministic = True

    def __init__(
        self,
        model: str = "mock-text",
        seed: int = 0,
        script: Sequence[str] | None = None,
        canned: str | None = None,
    ):
        self.model = model
        self.seed = seed
        self.script = list(script) if script is not None else None
        self.canned = canned
        self.calls = 0

    def complete(self, prompt: str, params: SamplingParams) -> str:
        self.calls += 1
        if self.script is not None:
            if not self.script:
                raise RuntimeError("scripted mock exhausted")
            return self.script.pop(0)
        if self.canned is not None:
            return self.canned
        call_seed = _seed_int(self.seed, params.seed, prompt)
        rng = np.random.default_rng(call_seed)
        rep = _REP_MARKER.search(prompt.rstrip())
        if rep:
            words = []
            while len(words) < 5:
                w = _pseudo_word(rng)
                if w.lower() != rep.group("word").strip().lower() and w not in words:
                    words.append(w)
            return " " + ", ".join(words)
        desc = _DESC_MARKER.search(prompt.rstrip())
        if desc:
            reps = [r.strip() for r in desc.group("reps").split(",") if r.strip()]
            goal = desc.group("goal").strip().lower()
            chosen = [r for r in reps if r.lower() != goal][:5]
            order = rng.permutation(len(chosen))
            scene = ", ".join(chosen[i] for i in order)
            return f" An arranged scene presents {scene}, rendered in even tones."
        return " ".join(_pseudo_word(rng) for _ in range(8))


class MockImageProvider:
    """Procedural 64x64 test-pattern renderer.

    The pixel pattern is a pure function of (description, seed); when
    no seed is given one is derived from the description so repeated
    renders stay reproducible. Descriptions containing
    ``refuse_marker`` raise a moderation refusal, mimicking a backend
    content filter.
    """

    deterministic = True

    def __init__(self, model: str = "mock-t2i", refuse_marker: str | None = None):
        self.model = model
        self.refuse_marker = refuse_marker

    def render(self, description: str, params: RenderParams) -> tuple[bytes, int]:
        if self.refuse_marker and self.refuse_marker in description:
            raise ModerationRefusalError("content policy: refused description")
        seed = params.seed if params.seed is not None else _seed_int("autoseed", description) % 2**31
        tile = np.frombuffer(_digest("pixels", description, seed), dtype=np.uint8)
        # 32 digest bytes -> 4x4 grayscale tile upsampled to 64x64 RGB
        base = tile[:16].reshape(4, 4)
        gradient = tile[16:32].reshape(4, 4)
        px = np.kron(base, np.ones((16, 16), dtype=np.uint8))
        gx = np.kron(gradient, np.ones((16, 16), dtype=np.uint8))
        rgb = np.stack([px, gx, (px.astype(int) + gx.astype(int)) % 256], axis=-1).astype(np.uint8)
        img = Image.fromarray(rgb, mode="RGB")
        info = PngImagePlugin.PngInfo()
        info.add_text("description", description)
        info.add_text("seed", str(seed))
        buf = io.BytesIO()
        img.save(buf, format="PNG", pnginfo=info)
        return buf.getvalue(), seed


class MockTextEmbedProvider:
    """Hash-vector text embeddings; ``orthogonal`` mode maps each distinct
    string to its own basis vector so cosines between different strings
    are exactly zero."""

    deterministic = True

    def __init__(self, model: str = "mock-embed", dim: int = 32, mode: str = "hash"):
        if mode not in ("hash", "orthogonal"):
            raise ValueError(f"unknown mock embed mode: {mode}")
        self.model = model
        self.dim = dim
        self.mode = mode
        self._basis: dict[str, int] = {}

    def _vector(self, text: str) -> np.ndarray:
        if self.mode == "hash":
            return hash_unit_vector("txt:" + text, self.dim)
        idx = self._basis.setdefault(text, len(self._basis))
        if idx >= self.dim:
            raise ValueError("orthogonal mock ran out of basis vectors; raise dim")
        v = np.zeros(self.dim)
        v[idx] = 1.0
        return v

    def embed(self, texts: list[str]) -> list[list[float]]:
        return [self._vector(t).tolist() for t in texts]


class MockImageEmbedProvider:
    """Joint image-text embedding mock.

    ``metadata`` mode embeds the PNG's description chunk when present
    (images of equal descriptions embed identically); ``pixels`` mode
    always hashes raw bytes. Text embeds into the same hash space, so
    an image whose description equals a query string scores 1.0.
    ``scale`` multiplies raw similarity scores (default 1.0).
    """

    deterministic = True

    def __init__(self, model: str = "mock-clip", dim: int = 32, mode: str = "metadata", scale: float = 1.0):
        if mode not in ("metadata", "pixels"):
            raise ValueError(f"unknown mock image embed mode: {mode}")
        self.model = model
        self.dim = dim
        self.mode = mode
        self.scale = scale

    def _key(self, data: bytes) -> str:
        if self.mode == "metadata":
            with Image.open(io.BytesIO(data)) as img:
                desc = img.text.get("description") if hasattr(img, "text") else None
            if desc:
                return "txt:" + desc
        return "px:" + hashlib.sha256(data).hexdigest()

    def embed_image(self, data: bytes) -> list[float]:
        return hash_unit_vector(self._key(data), self.dim).tolist()

    def embed_texts(self, texts: list[str]) -> list[list[float]]:
        return [hash_unit_vector("txt:" + t, self.dim).tolist() for t in texts]

    def similarity(self, data: bytes, text: str) -> float:
        iv = hash_unit_vector(self._key(data), self.dim)
        tv = hash_unit_vector("txt:" + text, self.dim)
        return float(np.dot(iv, tv)) * self.scale


class MockMultimodalProvider:
    """Multiple-choice answerer with three behaviors: a fixed answer,
    an image-hash-keyed letter (stable per item), or a custom responder
    callable supplied by tests."""

    deterministic = True

    def __init__(
        self,
        model: str = "mock-vlm",
        mode: str = "fixed",
        answer: str = "A",
        responder: Callable[[bytes, str], str] | None = None,
    ):
        if mode not in ("fixed", "hash_letter", "responder"):
            raise ValueError(f"unknown mock multimodal mode: {mode}")
        if mode == "responder" and responder is None:
            raise ValueError("responder mode needs a responder callable")
        self.model = model
        self.mode = mode
        self.answer_text = answer
        self.responder = responder

    def answer(self, data: bytes, prompt: str, params: SamplingParams) -> str:
        if self.mode == "responder":
            return self.responder(data, prompt)
        if self.mode == "hash_letter":
            return "ABCD"[_digest("answer", hashlib.sha256(data).hexdigest())[0] % 4]
        return self.answer_text
