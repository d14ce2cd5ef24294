"""MCQ assembly, model evaluation, answer parsing, and scoring.

One item per image: the target concept plus three distractors, shuffled
with a seeded uniform permutation. Evaluation persists raw responses
before scoring and resumes without re-querying answered items.
"""

from __future__ import annotations

import logging
import random
import re
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from typing import Mapping, Sequence

import numpy as np

from .gateway import GatewayError, ModelGateway, SamplingParams
from .store import CorpusStore

log = logging.getLogger(__name__)

LETTERS = "ABCD"
ASSOCIATION_TYPES = ("cultural", "contextual", "symbolic")

UNPARSED = None


class AssemblyError(Exception):
    pass


def question_template() -> str:
    return (resources.files("metonym") / "prompts" / "mcq_question.txt").read_text(encoding="utf-8")


def prediction_template() -> str:
    return (resources.files("metonym") / "prompts" / "concept_prediction.txt").read_text(
        encoding="utf-8"
    )


@dataclass
class MCQItem:
    item_id: str
    image_id: str
    image_path: str
    options: list[str]
    answer_index: int
    style: str
    concept: str
    association_type: str | None = None
    option_provenance: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        if len(self.options) != 4 or len({o.lower() for o in self.options}) != 4:
            raise AssemblyError(f"options must be 4 pairwise-distinct lemmas: {self.options}")
        if not 0 <= self.answer_index <= 3:
            raise AssemblyError(f"answer_index out of range: {self.answer_index}")
        if self.options[self.answer_index] != self.concept:
            raise AssemblyError("answer_index does not point at the target lemma")

    def to_record(self) -> dict:
        return {
            "type": "item",
            "item_id": self.item_id,
            "image_id": self.image_id,
            "image_path": self.image_path,
            "options": self.options,
            "answer_index": self.answer_index,
            "style": self.style,
            "concept": self.concept,
            "association_type": self.association_type,
            "option_provenance": self.option_provenance,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "MCQItem":
        return cls(
            item_id=rec["item_id"],
            image_id=rec["image_id"],
            image_path=rec.get("image_path", ""),
            options=list(rec["options"]),
            answer_index=int(rec["answer_index"]),
            style=rec["style"],
            concept=rec.get("concept", rec["options"][int(rec["answer_index"])]),
            association_type=rec.get("association_type"),
            option_provenance=list(rec.get("option_provenance", [])),
        )

    def question(self) -> str:
        a, b, c, d = self.options
        return question_template().format(a=a, b=b, c=c, d=d)


def assemble_item(
    image: Mapping, target: str, distractors: Sequence, seed: int, association_type: str | None = None
) -> MCQItem:
    """Shuffle target and distractors into presentation order.

    The permutation is drawn uniformly from S4 by the seeded generator,
    so a fixed seed reproduces the same item.
    """
    lemmas = [getattr(d, "lemma", None) or d["lemma"] for d in distractors]
    provenance = [
        d.to_record() if hasattr(d, "to_record") else dict(d) for d in distractors
    ]
    options = [target] + lemmas
    if len({o.lower() for o in options}) != 4:
        raise AssemblyError(f"duplicate options for {target!r}: {options}")
    order = list(range(4))
    random.Random(seed).shuffle(order)
    shuffled = [options[i] for i in order]
    prov_by_option = [
        {"source": "target"} if i == 0 else provenance[i - 1] for i in order
    ]
    return MCQItem(
        item_id=image["id"],
        image_id=image["id"],
        image_path=image.get("path", ""),
        options=shuffled,
        answer_index=order.index(0),
        style=image["style"],
        concept=target,
        association_type=association_type,
        option_provenance=prov_by_option,
    )


_LEADING_LETTER = re.compile(r"^\s*(?:final answer\s*[:\-]?\s*)?[\(\[\{]?([A-Da-d])[\)\]\}\.:,]")
_BARE_LETTER = re.compile(r"^\s*([A-Da-d])\s*$")
_ANSWER_IS = re.compile(
    r"answer\s*(?:is|:)\s*[\(\[\{]?([A-Da-d])(?:[\)\]\}\.:,\s]|$)", re.IGNORECASE
)


def parse_choice(raw: str, options: Sequence[str]) -> int | None:
    """Map a free-form response to an option index, or None when ambiguous.

    Precedence: a leading letter A-D (optionally punctuated), then an
    "answer is X" pattern (letter or option text), then a unique
    case-insensitive whole-option text match.
    """
    if raw is None:
        return UNPARSED
    text = raw.strip()
    if not text:
        return UNPARSED

    m = _BARE_LETTER.match(text) or _LEADING_LETTER.match(text)
    if m:
        return LETTERS.index(m.group(1).upper())

    m = _ANSWER_IS.search(text)
    if m:
        return LETTERS.index(m.group(1).upper())
    answer_tail = re.search(r"answer\s*(?:is|:)\s*(.+)", text, re.IGNORECASE)
    if answer_tail:
        tail = answer_tail.group(1)
        hits = [
            i
            for i, opt in enumerate(options)
            if re.search(rf"\b{re.escape(opt)}\b", tail, re.IGNORECASE)
        ]
        if len(hits) == 1:
            return hits[0]

    hits = [
        i
        for i, opt in enumerate(options)
        if re.search(rf"\b{re.escape(opt)}\b", text, re.IGNORECASE)
    ]
    if len(hits) == 1:
        return hits[0]
    return UNPARSED


@dataclass
class SliceScore:
    n: int = 0
    answered: int = 0
    correct: int = 0
    unparsed: int = 0
    errored: int = 0

    @property
    def accuracy(self) -> float | None:
        if self.answered == 0:
            return None
        return self.correct / self.answered

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "answered": self.answered,
            "correct": self.correct,
            "unparsed": self.unparsed,
            "errored": self.errored,
            "accuracy": self.accuracy,
        }


@dataclass
class ScoreReport:
    model: str
    overall: SliceScore
    by_style: dict[str, SliceScore]
    by_association: dict[str, SliceScore]

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "overall": self.overall.to_dict(),
            "by_style": {k: v.to_dict() for k, v in self.by_style.items()},
            "by_association": {k: v.to_dict() for k, v in self.by_association.items()}
            or "no data",
        }


def score(rows: Sequence[Mapping], items: Sequence[MCQItem], model: str = "") -> ScoreReport:
    """Aggregate persisted response rows into overall and sliced accuracy.

    Unparsed responses count as answered-but-incorrect; errored items
    are excluded from the accuracy denominator and reported.
    """
    by_id = {item.item_id: item for item in items}
    overall = SliceScore()
    by_style: dict[str, SliceScore] = {}
    by_assoc: dict[str, SliceScore] = {}

    for row in rows:
        item = by_id.get(row["item_id"])
        if item is None:
            log.warning("result row for unknown item %r", row["item_id"])
            continue
        slices = [overall, by_style.setdefault(item.style, SliceScore())]
        if item.association_type:
            slices.append(by_assoc.setdefault(item.association_type, SliceScore()))
        errored = bool(row.get("error"))
        parsed = row.get("parsed_choice")
        correct = parsed is not None and parsed == item.answer_index
        for s in slices:
            s.n += 1
            if errored:
                s.errored += 1
                continue
            s.answered += 1
            if parsed is None:
                s.unparsed += 1
            if correct:
                s.correct += 1
    return ScoreReport(model=model, overall=overall, by_style=by_style, by_association=by_assoc)


def evaluate(
    gateway: ModelGateway,
    store: CorpusStore,
    items: Sequence[MCQItem],
    model_name: str | None = None,
    params: SamplingParams | None = None,
    max_workers: int = 4,
) -> ScoreReport:
    """Query the multimodal backend once per item and score the results.

    Responses are persisted to ``results/<model>.jsonl`` as they
    arrive; a rerun resumes with only the unanswered items.
    """
    model = model_name or gateway.model_id("multimodal")
    results = store.results_file(model)
    answered = {row["item_id"] for row in results.read_all()}
    todo = [item for item in items if item.item_id not in answered]
    log.info("evaluating %s: %d to query, %d already answered", model, len(todo), len(answered))

    def ask(item: MCQItem) -> dict:
        row = {"type": "result", "item_id": item.item_id, "model": model}
        try:
            data = store.get_image(item.image_id)
            raw = gateway.answer_multimodal(data, item.question(), params)
            row["raw_response"] = raw
            row["parsed_choice"] = parse_choice(raw, item.options)
        except GatewayError as exc:
            row["raw_response"] = ""
            row["parsed_choice"] = None
            row["error"] = str(exc)
        return row

    if todo:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            for row in pool.map(ask, todo):
                store.append(row, jsonl=results)

    return score(results.read_all(), items, model=model)


def predict_concept(
    gateway: ModelGateway, data: bytes, gold: str, params: SamplingParams | None = None
) -> tuple[str, float]:
    """Free-form concept prediction scored by embedding cosine to gold."""
    raw = gateway.answer_multimodal(data, prediction_template(), params)
    word = raw.strip().split()[0].strip(string.punctuation).lower() if raw.strip() else ""
    if not word:
        return "", 0.0
    vecs = gateway.embed_text([word, gold])
    return word, float(vecs[0] @ vecs[1])


@dataclass
class SimilarityReport:
    concept_image_scores: list[tuple[str, str, float]]  # (concept, image_id, score)
    style_pair_cosines: dict[str, float]  # concept -> cosine between style variants
    style_pair_mean: float | None

    def histogram(self, bins: int = 20) -> tuple[list[float], list[int]]:
        values = [s for _, _, s in self.concept_image_scores]
        counts, edges = np.histogram(values, bins=bins)
        return [float(e) for e in edges], [int(c) for c in counts]


def similarity_reports(gateway: ModelGateway, store: CorpusStore) -> SimilarityReport:
    """Concept-image similarity distribution plus naturalistic/stylistic
    pair similarity, over every image in the corpus."""
    images = store.image_records()
    if not images:
        raise ValueError("corpus is empty: no image records in the manifest")
    scores: list[tuple[str, str, float]] = []
    by_concept_style: dict[str, dict[str, str]] = {}
    for rec in images:
        data = store.get_image(rec["id"])
        scores.append((rec["concept"], rec["id"], gateway.joint_similarity(data, rec["concept"])))
        by_concept_style.setdefault(rec["concept"], {})[rec["style"]] = rec["id"]

    pair_cos: dict[str, float] = {}
    for concept, styles in sorted(by_concept_style.items()):
        if len(styles) < 2:
            continue
        ids = [styles[s] for s in sorted(styles)][:2]
        va = gateway.embed_image(store.get_image(ids[0]))
        vb = gateway.embed_image(store.get_image(ids[1]))
        pair_cos[concept] = float(va @ vb)
    mean = float(np.mean(list(pair_cos.values()))) if pair_cos else None
    return SimilarityReport(
        concept_image_scores=scores, style_pair_cosines=pair_cos, style_pair_mean=mean
    )


def exact_accuracy(correct: int, total: int) -> Fraction:
    """Exact rational accuracy, for tests and reports."""
    return Fraction(correct, total)
