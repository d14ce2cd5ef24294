"""Three-stage metonymic image generation.

Stage 1 asks the text backend for representamens (concrete objects
cognitively linked to the concept), stage 2 composes a visual
description in one of two styles with a concept-leakage fail-safe, and
stage 3 renders the description with the text-to-image backend. The
prompt templates live under ``prompts/`` as editable text files.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .catalog import Concept, STATUS_RETAINED
from .gateway import (
    EmptyCompletionError,
    ModelGateway,
    ModerationRefusalError,
    PreconditionError,
    RenderParams,
    SamplingParams,
)
from .leakage import leakage_check
from .store import CorpusStore

log = logging.getLogger(__name__)

NATURALISTIC = "naturalistic"
STYLISTIC = "stylistic"
STYLES = (NATURALISTIC, STYLISTIC)

MODE_SEMIOTIC = "semiotic"
MODE_GENERAL = "general"

#: Soft word-count targets from the description prompts; recorded, not enforced.
WORD_TARGETS = {NATURALISTIC: 70, STYLISTIC: 60}

MIN_REPRESENTAMENS = 3
MAX_REPRESENTAMENS = 7
PARSE_RETRIES = 3
LEAKAGE_MAX_ATTEMPTS = 5

#: Timestamp used for manifest rows when the run is fully deterministic
#: (all-mock backends plus a fixed seed), so reruns are byte-identical.
FIXED_CLOCK = "1970-01-01T00:00:00+00:00"


class PipelineError(Exception):
    pass


class RepresentamenParseError(PipelineError):
    pass


class LeakageExhaustedError(PipelineError):
    def __init__(self, concept: str, style: str, attempts: list[str]):
        super().__init__(f"description for {concept!r} ({style}) still leaked after {len(attempts)} attempts")
        self.attempts = attempts


def stable_seed(*parts: object) -> int:
    h = hashlib.sha256()
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest()[:8], "big") % 2**31


@dataclass(frozen=True)
class PromptTemplates:
    representamens: str
    naturalistic: str
    stylistic: str

    def description_template(self, style: str) -> str:
        if style == NATURALISTIC:
            return self.naturalistic
        if style == STYLISTIC:
            return self.stylistic
        raise ValueError(f"unknown style: {style!r}")

    @classmethod
    def bundled(cls) -> "PromptTemplates":
        base = resources.files("metonym") / "prompts"
        return cls(
            representamens=(base / "representamens.txt").read_text(encoding="utf-8"),
            naturalistic=(base / "naturalistic.txt").read_text(encoding="utf-8"),
            stylistic=(base / "stylistic.txt").read_text(encoding="utf-8"),
        )

    @classmethod
    def from_dir(cls, path: str | Path) -> "PromptTemplates":
        base = Path(path)
        return cls(
            representamens=(base / "representamens.txt").read_text(encoding="utf-8"),
            naturalistic=(base / "naturalistic.txt").read_text(encoding="utf-8"),
            stylistic=(base / "stylistic.txt").read_text(encoding="utf-8"),
        )


@dataclass
class RepresentamenSet:
    concept: str
    items: list[str]
    model: str
    template_id: str
    raw_completion: str


@dataclass
class VisualDescription:
    concept: str
    style: str
    text: str
    word_count: int
    attempts: int
    leakage_passed: bool


def parse_representamens(completion: str, concept: str) -> list[str]:
    """Extract the item list from a stage-1 completion.

    Takes the text after the final "Representamen:" marker (first line
    only; the whole completion when the backend continues the prompt
    without echoing the marker), splits on commas, lowercases, drops
    the concept itself, and deduplicates case-insensitively. Raises
    when fewer than 3 items survive; more than 7 are truncated.
    """
    marker = "Representamen:"
    pos = completion.rfind(marker)
    tail = completion[pos + len(marker):].strip() if pos >= 0 else completion.strip()
    first_line = tail.splitlines()[0] if tail else ""
    items: list[str] = []
    for raw in first_line.split(","):
        item = " ".join(raw.split()).strip(" .").lower()
        if not item or item == concept.lower():
            continue
        if item not in items:
            items.append(item)
    if len(items) < MIN_REPRESENTAMENS:
        raise RepresentamenParseError(f"only {len(items)} usable items after dedupe")
    return items[:MAX_REPRESENTAMENS]


def generate_representamens(
    gateway: ModelGateway,
    concept: Concept,
    templates: PromptTemplates | None = None,
    run_seed: int | None = None,
) -> RepresentamenSet:
    """Stage 1: prompt for associated objects, retrying unparseable completions."""
    templates = templates or PromptTemplates.bundled()
    prompt = templates.representamens.format(word=concept.lemma)
    last_error: Exception | None = None
    for attempt in range(1, PARSE_RETRIES + 1):
        seed = None if run_seed is None else stable_seed(run_seed, concept.lemma, "reps", attempt)
        try:
            completion = gateway.complete_text(prompt, SamplingParams(seed=seed))
            items = parse_representamens(completion, concept.lemma)
        except (RepresentamenParseError, EmptyCompletionError) as exc:
            last_error = exc
            continue
        return RepresentamenSet(
            concept=concept.lemma,
            items=items,
            model=gateway.model_id("text"),
            template_id="representamens",
            raw_completion=completion,
        )
    raise RepresentamenParseError(
        f"no parseable representamen completion for {concept.lemma!r} "
        f"after {PARSE_RETRIES} tries: {last_error}"
    )


def compose_description(
    gateway: ModelGateway,
    concept: Concept,
    reps: RepresentamenSet,
    style: str,
    templates: PromptTemplates | None = None,
    run_seed: int | None = None,
    max_attempts: int = LEAKAGE_MAX_ATTEMPTS,
) -> VisualDescription:
    """Stage 2: chain-of-thought description with the leakage fail-safe.

    Regenerates (fresh completion each attempt) while the concept word
    leaks into the output, up to ``max_attempts``.
    """
    templates = templates or PromptTemplates.bundled()
    template = templates.description_template(style)
    prompt = template.format(rep_input=", ".join(reps.items), goal=concept.lemma)
    leaked_attempts: list[str] = []
    for attempt in range(1, max_attempts + 1):
        seed = None if run_seed is None else stable_seed(run_seed, concept.lemma, style, attempt)
        completion = gateway.complete_text(prompt, SamplingParams(seed=seed))
        text = completion.strip()
        if text.lower().startswith("output:"):
            text = text[len("output:"):].strip()
        result = leakage_check(text, concept.lemma)
        if result.clean:
            return VisualDescription(
                concept=concept.lemma,
                style=style,
                text=text,
                word_count=len(text.split()),
                attempts=attempt,
                leakage_passed=True,
            )
        leaked_attempts.append(text)
    raise LeakageExhaustedError(concept.lemma, style, leaked_attempts)


def render_metonymic_image(
    gateway: ModelGateway,
    store: CorpusStore,
    desc: VisualDescription,
    params: RenderParams | None = None,
    pipeline: str = MODE_SEMIOTIC,
) -> dict:
    """Stage 3: render and persist; returns the image manifest record."""
    if pipeline == MODE_SEMIOTIC and not desc.leakage_passed:
        raise PreconditionError("description has not passed the leakage check")
    rendered = gateway.render_image(desc.text, params)
    image_id, path = store.put_image(rendered.data)
    return {
        "type": "image",
        "id": image_id,
        "concept": desc.concept,
        "style": desc.style,
        "path": str(path.relative_to(store.root)),
        "seed": rendered.params.seed,
        "render_params": rendered.params.to_dict(),
        "renderer": rendered.model,
        "description": desc.text,
        "word_count": desc.word_count,
        "leakage_passed": desc.leakage_passed,
        "pipeline": pipeline,
        "moderation_flags": [],
    }


@dataclass
class RunSummary:
    images: int = 0
    failures: int = 0
    skipped: int = 0


def _process_concept(
    gateway: ModelGateway,
    store: CorpusStore,
    concept: Concept,
    styles: Sequence[str],
    run_seed: int | None,
    mode: str,
    templates: PromptTemplates,
    render_params: RenderParams | None,
) -> list[dict]:
    """All stages for one concept; returns manifest records in order."""
    records: list[dict] = []
    reps: RepresentamenSet | None = None
    if mode == MODE_SEMIOTIC:
        try:
            reps = generate_representamens(gateway, concept, templates, run_seed)
        except (PipelineError, EmptyCompletionError) as exc:
            for style in styles:
                records.append(
                    {
                        "type": "attempt",
                        "concept": concept.lemma,
                        "style": style,
                        "pipeline": mode,
                        "outcome": "representamen_parse_error",
                        "error": str(exc),
                    }
                )
            return records

    for style in styles:
        base = {"type": "attempt", "concept": concept.lemma, "style": style, "pipeline": mode}
        try:
            if mode == MODE_GENERAL:
                # baseline: hand the bare concept word to the renderer
                desc = VisualDescription(
                    concept=concept.lemma,
                    style=style,
                    text=concept.lemma,
                    word_count=len(concept.lemma.split()),
                    attempts=1,
                    leakage_passed=False,
                )
            else:
                desc = compose_description(gateway, concept, reps, style, templates, run_seed)
            seed = None if run_seed is None else stable_seed(run_seed, concept.lemma, style, "render")
            params = render_params or RenderParams()
            if params.seed is None and seed is not None:
                params = RenderParams(**{**params.to_dict(), "seed": seed})
            image_rec = render_metonymic_image(gateway, store, desc, params, pipeline=mode)
            if reps is not None:
                image_rec["representamens"] = reps.items
            records.append(image_rec)
            records.append({**base, "outcome": "ok", "attempts": desc.attempts, "image_id": image_rec["id"]})
        except LeakageExhaustedError as exc:
            records.append({**base, "outcome": "leakage_exhausted", "attempts": LEAKAGE_MAX_ATTEMPTS, "error": str(exc)})
        except ModerationRefusalError as exc:
            records.append({**base, "outcome": "moderation_refused", "error": exc.backend_message})
        except (PipelineError, EmptyCompletionError) as exc:
            records.append({**base, "outcome": "error", "error": str(exc)})
    return records


def run_pipeline(
    gateway: ModelGateway,
    store: CorpusStore,
    concepts: Sequence[Concept],
    styles: Sequence[str] = STYLES,
    run_seed: int | None = None,
    mode: str = MODE_SEMIOTIC,
    templates: PromptTemplates | None = None,
    render_params: RenderParams | None = None,
    max_workers: int = 1,
) -> RunSummary:
    """Generate one image per retained concept and style.

    Failures are logged as manifest attempt rows and never abort the
    run. Reruns skip (concept, style) pairs that already have an
    outcome. When every backend is a deterministic mock and a seed is
    fixed, manifest timestamps are pinned so two runs over the same
    catalog are byte-identical.
    """
    if mode not in (MODE_SEMIOTIC, MODE_GENERAL):
        raise ValueError(f"unknown pipeline mode: {mode!r}")
    for style in styles:
        if style not in STYLES:
            raise ValueError(f"unknown style: {style!r}")
    templates = templates or PromptTemplates.bundled()
    if gateway.deterministic and run_seed is not None:
        store.clock = lambda: FIXED_CLOCK

    done = {
        (rec["concept"], rec["style"])
        for rec in store.read_manifest("attempt")
        if rec.get("pipeline", MODE_SEMIOTIC) == mode
    }
    summary = RunSummary()
    jobs: list[tuple[Concept, list[str]]] = []
    for concept in concepts:
        if concept.status != STATUS_RETAINED:
            log.info("skipping %r: not retained", concept.lemma)
            continue
        todo = [s for s in styles if (concept.lemma, s) not in done]
        summary.skipped += len(styles) - len(todo)
        if todo:
            jobs.append((concept, todo))

    def work(job: tuple[Concept, list[str]]) -> list[dict]:
        concept, todo = job
        return _process_concept(gateway, store, concept, todo, run_seed, mode, templates, render_params)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            all_records = list(pool.map(work, jobs))
    else:
        all_records = [work(job) for job in jobs]

    # appends happen in catalog order so reruns produce identical manifests
    for records in all_records:
        for rec in records:
            store.append(rec)
            if rec["type"] == "attempt":
                if rec["outcome"] == "ok":
                    summary.images += 1
                else:
                    summary.failures += 1
    return summary


def _greedy_pairs(items_a: Sequence[str], items_b: Sequence[str], sims: np.ndarray) -> list[float]:
    """Greedy global-max matching; returns the matched cosine values.

    Ties break lexicographically on the item strings, symmetrically in
    the two arguments, so scores are order-independent.
    """
    candidates = []
    for i, a in enumerate(items_a):
        for j, b in enumerate(items_b):
            lo, hi = (a, b) if a <= b else (b, a)
            candidates.append((-sims[i, j], lo, hi, a, b, i, j))
    candidates.sort()
    used_a: set[int] = set()
    used_b: set[int] = set()
    matched: list[float] = []
    for neg, _lo, _hi, _a, _b, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        matched.append(-neg)
        if len(used_a) == len(items_a) or len(used_b) == len(items_b):
            break
    return matched


def greedy_match_score(
    gateway: ModelGateway, items_a: Sequence[str], items_b: Sequence[str]
) -> float:
    """Mean cosine of the greedy matching between two representamen lists."""
    vecs = gateway.embed_text(list(items_a) + list(items_b))
    va, vb = vecs[: len(items_a)], vecs[len(items_a):]
    sims = va @ vb.T
    matched = _greedy_pairs(items_a, items_b, sims)
    return float(np.mean(matched))


@dataclass
class AgreementMatrix:
    models: list[str]
    matrix: np.ndarray
    concepts: list[str] = field(default_factory=list)

    def entry(self, a: str, b: str) -> float:
        return float(self.matrix[self.models.index(a), self.models.index(b)])


def representamen_agreement(
    gateway: ModelGateway, sets_by_model: dict[str, list[RepresentamenSet]]
) -> AgreementMatrix:
    """Pairwise mean greedy-matching similarity of representamen sets.

    Every model must cover the same concepts; concepts with an empty
    item list anywhere are skipped with a warning.
    """
    models = sorted(sets_by_model)
    by_concept: dict[str, dict[str, list[str]]] = {}
    coverage = {m: {s.concept for s in sets_by_model[m]} for m in models}
    common = set.intersection(*coverage.values()) if models else set()
    for m, covered in coverage.items():
        if covered != common:
            raise ValueError(f"model {m!r} does not cover the same concepts as the others")
    for m in models:
        for s in sets_by_model[m]:
            by_concept.setdefault(s.concept, {})[m] = s.items

    usable = []
    for concept in sorted(common):
        if any(not by_concept[concept][m] for m in models):
            log.warning("skipping concept %r: empty representamen set", concept)
            continue
        usable.append(concept)

    n = len(models)
    matrix = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            scores = [
                greedy_match_score(gateway, by_concept[c][models[i]], by_concept[c][models[j]])
                for c in usable
            ]
            value = float(np.mean(scores)) if scores else float("nan")
            matrix[i, j] = matrix[j, i] = value
    return AgreementMatrix(models=models, matrix=matrix, concepts=usable)
