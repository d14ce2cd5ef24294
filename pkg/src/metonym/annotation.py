"""Human annotation records, task assignment, and agreement statistics.

The label store is event-sourced: ``annotations.jsonl`` is append-only
and the effective state (latest record per image/annotator pair) is
rebuilt by replay, so the full audit trail survives resubmissions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .catalog import METONYMIC, NON_METONYMIC, normalize_label
from .store import CorpusStore

log = logging.getLogger(__name__)

FLAGS = ("graphic", "bias", "other")
#: Flags that exclude an image from item assembly.
EXCLUDING_FLAGS = ("graphic", "bias")
ASSOCIATION_TYPES = ("cultural", "contextual", "symbolic")

#: Labels wanted per image before task assignment deprioritizes it.
LABELS_PER_IMAGE = 2


class AnnotationError(Exception):
    pass


@dataclass(frozen=True)
class AnnotationRecord:
    image_id: str
    annotator: str
    label: str
    flags: tuple[str, ...] = ()
    association_type: str | None = None

    def __post_init__(self) -> None:
        normalize_label(self.label)
        unknown = set(self.flags) - set(FLAGS)
        if unknown:
            raise AnnotationError(f"unknown flags: {sorted(unknown)}")
        if self.association_type is not None and self.association_type not in ASSOCIATION_TYPES:
            raise AnnotationError(f"unknown association type: {self.association_type!r}")

    def to_record(self) -> dict:
        return {
            "type": "annotation",
            "image_id": self.image_id,
            "annotator": self.annotator,
            "label": normalize_label(self.label),
            "flags": sorted(self.flags),
            "association_type": self.association_type,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "AnnotationRecord":
        return cls(
            image_id=rec["image_id"],
            annotator=rec["annotator"],
            label=rec["label"],
            flags=tuple(rec.get("flags", ())),
            association_type=rec.get("association_type"),
        )


@dataclass
class AnnotationTask:
    image_id: str
    concept: str
    image_url: str
    remaining: int


class LabelStore:
    """Annotation state over a corpus store, rebuilt from the journal."""

    def __init__(self, store: CorpusStore, labels_per_image: int = LABELS_PER_IMAGE):
        self.store = store
        self.labels_per_image = labels_per_image
        self._effective: dict[tuple[str, str], AnnotationRecord] = {}
        self._replay()

    def _replay(self) -> None:
        self._effective.clear()
        for rec in self.store.annotations.read_all():
            record = AnnotationRecord.from_record(rec)
            self._effective[(record.image_id, record.annotator)] = record

    # -- submission ---------------------------------------------------------

    def submit(self, record: AnnotationRecord, known_images: set[str] | None = None) -> dict:
        if known_images is not None and record.image_id not in known_images:
            raise KeyError(f"unknown image id: {record.image_id}")
        stamped = self.store.append(record.to_record(), jsonl=self.store.annotations)
        self._effective[(record.image_id, record.annotator)] = record
        return stamped

    # -- queries --------------------------------------------------------------

    def effective_records(self) -> list[AnnotationRecord]:
        return [self._effective[k] for k in sorted(self._effective)]

    def labels_for_image(self, image_id: str) -> dict[str, AnnotationRecord]:
        return {
            annotator: rec
            for (img, annotator), rec in self._effective.items()
            if img == image_id
        }

    def excluded_images(self) -> set[str]:
        """Images any annotator flagged graphic or bias."""
        return {
            rec.image_id
            for rec in self._effective.values()
            if set(rec.flags) & set(EXCLUDING_FLAGS)
        }

    def association_for_image(self, image_id: str) -> str | None:
        """Human-assigned association type, when the optional second pass
        labeled this image (first annotator in id order wins on conflict)."""
        for (img, _annotator), rec in sorted(self._effective.items()):
            if img == image_id and rec.association_type:
                return rec.association_type
        return None

    def next_task(
        self,
        annotator: str,
        images: Sequence[Mapping],
        style: str | None = None,
        supersense_of: Mapping[str, str] | None = None,
        supersense: str | None = None,
    ) -> AnnotationTask | None:
        """Pick the next image for an annotator, fewest-labels first.

        Never returns an image this annotator already labeled;
        deterministic given the store state (ties break on image id).
        """
        counts: dict[str, int] = {}
        for (img, _), _rec in self._effective.items():
            counts[img] = counts.get(img, 0) + 1
        candidates = []
        for rec in images:
            if style and rec.get("style") != style:
                continue
            if supersense and supersense_of is not None:
                if supersense_of.get(rec["concept"]) != supersense:
                    continue
            if (rec["id"], annotator) in self._effective:
                continue
            candidates.append(rec["id"])
        if not candidates:
            return None
        candidates.sort(key=lambda img: (counts.get(img, 0), img))
        chosen = candidates[0]
        concept = next(rec["concept"] for rec in images if rec["id"] == chosen)
        return AnnotationTask(
            image_id=chosen,
            concept=concept,
            image_url=f"/images/{chosen}",
            remaining=len(candidates),
        )

    # -- statistics -----------------------------------------------------------

    def consensus(self) -> dict[str, str]:
        """Per-image consensus: metonymic only when every annotator of a
        doubly-labeled image said metonymic; disagreement is non-metonymic."""
        out: dict[str, str] = {}
        by_image: dict[str, list[str]] = {}
        for rec in self._effective.values():
            by_image.setdefault(rec.image_id, []).append(rec.label)
        for image_id, labels in by_image.items():
            out[image_id] = (
                METONYMIC if all(l == METONYMIC for l in labels) else NON_METONYMIC
            )
        return out


def raw_agreement(records: Iterable[AnnotationRecord]) -> tuple[Fraction | None, int]:
    """Share of doubly-labeled images where both labels match.

    Returns (agreement, n_pairs); agreement is None ("no data") when no
    image has exactly two annotators.
    """
    by_image: dict[str, list[str]] = {}
    for rec in records:
        by_image.setdefault(rec.image_id, []).append(rec.label)
    pairs = [labels for labels in by_image.values() if len(labels) == 2]
    if not pairs:
        return None, 0
    matches = sum(1 for a, b in pairs if a == b)
    return Fraction(matches, len(pairs)), len(pairs)


def metonymic_rate(
    records: Iterable[AnnotationRecord],
    grouping: str = "overall",
    image_meta: Mapping[str, Mapping] | None = None,
    supersense_of: Mapping[str, str] | None = None,
) -> dict[str, Fraction | None]:
    """Fraction of images whose consensus label is metonymic, per group.

    Groupings: overall, by_pipeline (generation mode recorded on the
    image), by_supersense (via the concept catalog). Consensus requires
    every annotator to have said metonymic; ties go non-metonymic.
    """
    if grouping not in ("overall", "by_pipeline", "by_supersense"):
        raise ValueError(f"unknown grouping: {grouping!r}")
    by_image: dict[str, list[str]] = {}
    for rec in records:
        by_image.setdefault(rec.image_id, []).append(rec.label)

    def group_of(image_id: str) -> str | None:
        if grouping == "overall":
            return "overall"
        meta = (image_meta or {}).get(image_id)
        if meta is None:
            return None
        if grouping == "by_pipeline":
            return meta.get("pipeline", "semiotic")
        concept = meta.get("concept")
        return (supersense_of or {}).get(concept)

    counts: dict[str, list[int]] = {}
    for image_id, labels in by_image.items():
        group = group_of(image_id)
        if group is None:
            continue
        total_met = counts.setdefault(group, [0, 0])
        total_met[0] += 1
        if all(l == METONYMIC for l in labels):
            total_met[1] += 1
    return {
        group: (Fraction(met, total) if total else None)
        for group, (total, met) in sorted(counts.items())
    }


def category_annotation_pairs(
    records: Iterable[AnnotationRecord],
    image_meta: Mapping[str, Mapping],
    supersense_of: Mapping[str, str],
) -> list[tuple[str, str]]:
    """(supersense, consensus-label) pairs, one per annotated image, in a
    form `category_retention` accepts."""
    by_image: dict[str, list[str]] = {}
    for rec in records:
        by_image.setdefault(rec.image_id, []).append(rec.label)
    pairs: list[tuple[str, str]] = []
    for image_id in sorted(by_image):
        meta = image_meta.get(image_id)
        if meta is None:
            continue
        sense = supersense_of.get(meta.get("concept"))
        if sense is None:
            continue
        labels = by_image[image_id]
        consensus = METONYMIC if all(l == METONYMIC for l in labels) else NON_METONYMIC
        pairs.append((sense, consensus))
    return pairs


def export_labels(store: CorpusStore) -> list[dict]:
    """Full audit trail in stable (image id, annotator, ts) order."""
    rows = store.annotations.read_all()
    rows.sort(key=lambda r: (r["image_id"], r["annotator"], r.get("ts", "")))
    return rows
