"""Distractor construction for MCQ items.

Each item gets exactly three distractors that are visually or
semantically proximate to the target: visual candidates come from
nearest-neighbor image retrieval, semantic ones from the knowledge
graph (2-step relational distance preferred over direct relations).
Three filters control ambiguity: synonym removal, a text-embedding
similarity ceiling, and the 2-step distance requirement itself.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .gateway import ModelGateway
from .graph import (
    KnowledgeGraphView,
    RELATED_TO,
    SYNONYM,
    related_terms,
    synonym_set,
    to_node,
    two_step_candidates,
)

log = logging.getLogger(__name__)

SOURCE_VISUAL = "visual"
SOURCE_SEMANTIC = "semantic"


class ItemConstructionError(Exception):
    pass


@dataclass(frozen=True)
class DistractorConfig:
    tau_high: float = 0.85
    n_visual: int = 1
    n_semantic: int = 2
    visual_k: int = 10
    same_style_pool: bool = True
    intermediate_cap: int = 200

    def __post_init__(self) -> None:
        if not 0 < self.tau_high <= 1:
            raise ValueError("tau_high must lie in (0,1]")
        if self.n_visual + self.n_semantic != 3:
            raise ValueError("distractor mix must total 3")

    @classmethod
    def from_mix(cls, mix: str, **kwargs) -> "DistractorConfig":
        """Parse a "1v2s"-style mix string."""
        import re

        m = re.fullmatch(r"(\d+)v(\d+)s", mix.strip().lower())
        if not m:
            raise ValueError(f"bad mix spec {mix!r}, expected like '1v2s'")
        return cls(n_visual=int(m.group(1)), n_semantic=int(m.group(2)), **kwargs)


@dataclass
class DistractorCandidate:
    lemma: str
    source: str  # visual | semantic
    image_cosine: float | None = None
    text_cosine: float | None = None
    graph_path: list[str] | None = None
    backfilled: bool = False

    def to_record(self) -> dict:
        rec = {"lemma": self.lemma, "source": self.source, "backfilled": self.backfilled}
        if self.image_cosine is not None:
            rec["image_cosine"] = round(self.image_cosine, 6)
        if self.text_cosine is not None:
            rec["text_cosine"] = round(self.text_cosine, 6)
        if self.graph_path is not None:
            rec["graph_path"] = self.graph_path
        return rec


class ImageEmbeddingCache:
    """Per-run cache of image embeddings keyed by image id."""

    def __init__(self, gateway: ModelGateway):
        self.gateway = gateway
        self._vectors: dict[str, np.ndarray] = {}

    def get(self, image_id: str, data: bytes) -> np.ndarray:
        vec = self._vectors.get(image_id)
        if vec is None:
            vec = self.gateway.embed_image(data)
            self._vectors[image_id] = vec
        return vec


def visual_neighbors(
    gateway: ModelGateway,
    target: Mapping,
    target_bytes: bytes,
    pool: Sequence[tuple[Mapping, bytes]],
    k: int,
    cache: ImageEmbeddingCache | None = None,
) -> list[tuple[str, float]]:
    """Top-k concepts whose images are most similar to the target image.

    The pool must exclude the target's own concept; each concept scores
    its best (max-cosine) image. Ties break lexicographically.
    """
    cache = cache or ImageEmbeddingCache(gateway)
    target_vec = cache.get(target["id"], target_bytes)
    best: dict[str, float] = {}
    for rec, data in pool:
        if rec["concept"] == target["concept"]:
            continue
        cos = float(target_vec @ cache.get(rec["id"], data))
        if rec["concept"] not in best or cos > best[rec["concept"]]:
            best[rec["concept"]] = cos
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:k]


def similarity_band_filter(
    gateway: ModelGateway, candidates: Iterable[str], target: str, tau_high: float
) -> dict[str, float]:
    """Drop candidates whose text-embedding cosine to the target exceeds
    tau_high; returns survivors with their cosines as evidence.

    Exact duplicate embeddings (cosine within 1e-9 of 1) are always
    dropped, so the tau_high = 1.0 boundary removes only those.
    """
    candidates = [c for c in candidates]
    if not candidates:
        return {}
    vecs = gateway.embed_text([target] + candidates)
    target_vec, cand_vecs = vecs[0], vecs[1:]
    out: dict[str, float] = {}
    for lemma, vec in zip(candidates, cand_vecs):
        cos = float(target_vec @ vec)
        if cos > tau_high or cos >= 1.0 - 1e-9:
            continue
        out[lemma] = cos
    return out


def _semantic_path(
    graph: KnowledgeGraphView, target: str, candidate: str, two_step: bool
) -> list[str]:
    if not two_step:
        return [target, candidate]
    # deterministic: lexicographically smallest connecting intermediate
    tnode, cnode = to_node(target), to_node(candidate)
    mids = sorted(graph.neighbors(tnode, RELATED_TO) & graph.neighbors(cnode, RELATED_TO))
    if not mids:
        raise ItemConstructionError(f"no intermediate connects {target!r} and {candidate!r}")
    from .graph import to_lemma

    return [target, to_lemma(mids[0]), candidate]


def build_distractors(
    gateway: ModelGateway,
    graph: KnowledgeGraphView,
    target: Mapping,
    target_bytes: bytes,
    pool: Sequence[tuple[Mapping, bytes]],
    cfg: DistractorConfig | None = None,
    retained_lemmas: Sequence[str] = (),
    cache: ImageEmbeddingCache | None = None,
) -> list[DistractorCandidate]:
    """Produce exactly three distractors for one target image.

    Pipeline: gather visual neighbors and the semantic pool (direct plus
    2-step relations), remove the target's synonym set, apply the
    similarity ceiling, fill slots per the configured mix (2-step
    preferred for semantic slots), then backfill from the other source
    and finally from the retained-concept list.
    """
    cfg = cfg or DistractorConfig()
    concept = target["concept"]
    style = target.get("style")
    if cfg.same_style_pool and style is not None:
        pool = [(rec, data) for rec, data in pool if rec.get("style") == style]

    synonyms = {s.lower() for s in synonym_set(graph, concept)}

    vis_ranked = visual_neighbors(gateway, target, target_bytes, pool, cfg.visual_k, cache=cache)
    vis_ranked = [(lemma, cos) for lemma, cos in vis_ranked if lemma.lower() not in synonyms]

    direct = {l for l in related_terms(graph, concept) if l.lower() not in synonyms}
    two_step = {
        l
        for l in two_step_candidates(graph, concept, cfg.intermediate_cap)
        if l.lower() not in synonyms
    }

    all_candidates = sorted({l for l, _ in vis_ranked} | direct | two_step)
    text_cos = similarity_band_filter(gateway, all_candidates, concept, cfg.tau_high)

    picked: list[DistractorCandidate] = []
    picked_lemmas: set[str] = set()

    def build(lemma: str, source: str, image_cos: float | None, is_two_step: bool | None, backfilled: bool) -> DistractorCandidate:
        path = None
        if source == SOURCE_SEMANTIC and is_two_step is not None:
            path = _semantic_path(graph, concept, lemma, is_two_step)
        return DistractorCandidate(
            lemma=lemma,
            source=source,
            image_cosine=image_cos,
            text_cosine=text_cos.get(lemma),
            graph_path=path,
            backfilled=backfilled,
        )

    def try_add(lemma: str, source: str, image_cos=None, is_two_step=None, backfilled=False) -> bool:
        key = lemma.lower()
        if key in picked_lemmas or key == concept.lower() or key in synonyms:
            return False
        picked.append(build(lemma, source, image_cos, is_two_step, backfilled))
        picked_lemmas.add(key)
        return True

    # candidate queues, best evidence first; band-filter survivors only
    visual_queue = [(l, cos) for l, cos in vis_ranked if l in text_cos]
    semantic_queue = [
        (l, True) for l in sorted(two_step & text_cos.keys(), key=lambda l: (-text_cos[l], l))
    ] + [(l, False) for l in sorted(direct & text_cos.keys(), key=lambda l: (-text_cos[l], l))]

    taken_visual = 0
    for lemma, cos in visual_queue:
        if taken_visual >= cfg.n_visual:
            break
        taken_visual += try_add(lemma, SOURCE_VISUAL, image_cos=cos)
    taken_semantic = 0
    for lemma, is_two in semantic_queue:
        if taken_semantic >= cfg.n_semantic:
            break
        taken_semantic += try_add(lemma, SOURCE_SEMANTIC, is_two_step=is_two)

    # backfill: whichever source underfilled borrows from the other
    if len(picked) < 3:
        for lemma, is_two in semantic_queue:
            if len(picked) >= 3:
                break
            try_add(lemma, SOURCE_SEMANTIC, is_two_step=is_two, backfilled=True)
        for lemma, cos in visual_queue:
            if len(picked) >= 3:
                break
            try_add(lemma, SOURCE_VISUAL, image_cos=cos, backfilled=True)

    # last resort: the retained catalog, nearest (but not too near) first
    if len(picked) < 3 and retained_lemmas:
        fallback = sorted(
            {
                l
                for l in retained_lemmas
                if l.lower() != concept.lower()
                and l.lower() not in synonyms
                and l.lower() not in picked_lemmas
            }
        )
        fallback_cos = similarity_band_filter(gateway, fallback, concept, cfg.tau_high)
        text_cos.update(fallback_cos)
        for lemma in sorted(fallback_cos, key=lambda l: (-fallback_cos[l], l)):
            if len(picked) >= 3:
                break
            try_add(lemma, SOURCE_SEMANTIC, backfilled=True)

    if len(picked) < 3:
        raise ItemConstructionError(
            f"only {len(picked)} distractors available for {concept!r} after backfill"
        )
    return picked[:3]
