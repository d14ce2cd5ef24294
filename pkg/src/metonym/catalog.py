"""Concept catalog: lexicon ingestion and the two concept filters.

Concepts are nouns carrying a supersense class and a 1-5 concreteness
rating. A concept survives filtering when it is abstract enough
(concreteness strictly below the cutoff) and belongs to a supersense
whose annotated images were predominantly judged metonymic (rate
strictly above the retention threshold).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

#: The 26 coarse WordNet noun classes ("supersenses").
SUPERSENSES = frozenset(
    {
        "Tops",
        "act",
        "animal",
        "artifact",
        "attribute",
        "body",
        "cognition",
        "communication",
        "event",
        "feeling",
        "food",
        "group",
        "location",
        "motive",
        "object",
        "person",
        "phenomenon",
        "plant",
        "possession",
        "process",
        "quantity",
        "relation",
        "shape",
        "state",
        "substance",
        "time",
    }
)

#: Supersenses retained by default: the categories in which more than 60%
#: of annotated images were judged metonymic.
DEFAULT_RETAINED_CATEGORIES = frozenset(
    {
        "act",
        "attribute",
        "cognition",
        "communication",
        "event",
        "feeling",
        "group",
        "location",
        "motive",
        "person",
        "possession",
        "process",
        "state",
        "time",
    }
)

CONCRETENESS_MIN = 1.0
CONCRETENESS_MAX = 5.0

METONYMIC = "metonymic"
NON_METONYMIC = "non-metonymic"

STATUS_CANDIDATE = "candidate"
STATUS_RETAINED = "retained"
STATUS_REJECTED = "rejected"

REJECT_CONCRETENESS = "concreteness"
REJECT_CATEGORY = "category"
REJECT_MODERATION = "moderation"


def normalize_lemma(raw: str) -> str:
    """Trim, lowercase, and collapse internal whitespace."""
    return " ".join(raw.split()).lower()


def normalize_label(raw: str) -> str:
    label = raw.strip().lower().replace("_", "-")
    if label not in (METONYMIC, NON_METONYMIC):
        raise ValueError(f"unknown annotation label: {raw!r}")
    return label


@dataclass(frozen=True)
class Concept:
    """A candidate noun: the pipeline's unit of work."""

    lemma: str
    supersense: str
    concreteness: float
    status: str = STATUS_CANDIDATE
    reject_reason: str | None = None

    def __post_init__(self) -> None:
        if not self.lemma or self.lemma != normalize_lemma(self.lemma):
            raise ValueError(f"lemma must be nonempty and normalized: {self.lemma!r}")
        if self.supersense not in SUPERSENSES:
            raise ValueError(f"unknown supersense: {self.supersense!r}")
        if not CONCRETENESS_MIN <= self.concreteness <= CONCRETENESS_MAX:
            raise ValueError(f"concreteness out of range [1,5]: {self.concreteness}")
        if self.status not in (STATUS_CANDIDATE, STATUS_RETAINED, STATUS_REJECTED):
            raise ValueError(f"invalid status: {self.status!r}")
        if self.status == STATUS_REJECTED and self.reject_reason not in (
            REJECT_CONCRETENESS,
            REJECT_CATEGORY,
            REJECT_MODERATION,
        ):
            raise ValueError(f"rejected concept needs a reason, got {self.reject_reason!r}")
        if self.status != STATUS_REJECTED and self.reject_reason is not None:
            raise ValueError("reject_reason is only valid on rejected concepts")

    def to_record(self) -> dict:
        rec = {
            "lemma": self.lemma,
            "supersense": self.supersense,
            "concreteness": self.concreteness,
            "status": self.status,
        }
        if self.reject_reason is not None:
            rec["reject_reason"] = self.reject_reason
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Concept":
        return cls(
            lemma=rec["lemma"],
            supersense=rec["supersense"],
            concreteness=float(rec["concreteness"]),
            status=rec.get("status", STATUS_CANDIDATE),
            reject_reason=rec.get("reject_reason"),
        )


@dataclass(frozen=True)
class FilterConfig:
    concreteness_cutoff: float = 3.5
    retained_categories: frozenset[str] = DEFAULT_RETAINED_CATEGORIES
    retention_threshold: float = 0.60

    def __post_init__(self) -> None:
        if not CONCRETENESS_MIN <= self.concreteness_cutoff <= CONCRETENESS_MAX:
            raise ValueError("concreteness_cutoff must lie in [1,5]")
        unknown = set(self.retained_categories) - SUPERSENSES
        if unknown:
            raise ValueError(f"unknown supersenses in retained_categories: {sorted(unknown)}")
        if not 0.0 <= self.retention_threshold <= 1.0:
            raise ValueError("retention_threshold must lie in [0,1]")


@dataclass
class LexiconLoad:
    """Result of joining the ratings and supersense sources."""

    concepts: list[Concept]
    unmatched_ratings: list[str] = field(default_factory=list)
    unmatched_supersenses: list[str] = field(default_factory=list)
    duplicates: list[str] = field(default_factory=list)
    malformed: list[str] = field(default_factory=list)

    @property
    def n_unmatched(self) -> int:
        return len(self.unmatched_ratings) + len(self.unmatched_supersenses)


def _sniff_delimiter(header: str) -> str:
    return "\t" if "\t" in header else ","


def _read_pairs(path: Path, parse_value, what: str, malformed: list[str]):
    """Read a two-column delimited file with a header into lemma -> value.

    Duplicate lemmas keep the first occurrence; malformed rows are
    reported with their line number, never silently dropped.
    """
    out: dict = {}
    dupes: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        if not first:
            return out, dupes
        delim = _sniff_delimiter(first)
        reader = csv.reader(fh, delimiter=delim)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < 2:
                malformed.append(f"{path.name}:{lineno}: expected 2 columns, got {len(row)}")
                continue
            lemma = normalize_lemma(row[0])
            if not lemma:
                malformed.append(f"{path.name}:{lineno}: empty lemma")
                continue
            try:
                value = parse_value(row[1].strip())
            except ValueError as exc:
                malformed.append(f"{path.name}:{lineno}: bad {what}: {exc}")
                continue
            if lemma in out:
                dupes.append(lemma)
                continue
            out[lemma] = value
    for lemma in dupes:
        log.warning("%s: duplicate lemma %r, keeping first occurrence", path.name, lemma)
    return out, dupes


def _parse_rating(raw: str) -> float:
    value = float(raw)
    if not CONCRETENESS_MIN <= value <= CONCRETENESS_MAX:
        raise ValueError(f"rating {value} outside [1,5]")
    return value


def _parse_supersense(raw: str) -> str:
    sense = raw.strip()
    # tolerate the "noun.act" spelling some distributions use
    if sense.startswith("noun."):
        sense = sense[len("noun."):]
    if sense not in SUPERSENSES:
        raise ValueError(f"unknown supersense {raw!r}")
    return sense


def load_lexicon(ratings_path: str | Path, supersense_path: str | Path) -> LexiconLoad:
    """Join a concreteness-ratings file with a supersense map.

    Both sources are delimited text (comma or tab, sniffed from the
    header) with columns (word, concreteness) and (word, supersense).
    One `Concept` is produced per lemma present in both sources, in
    ratings-file order; lemmas found in only one source are reported.
    """
    malformed: list[str] = []
    ratings, rating_dupes = _read_pairs(Path(ratings_path), _parse_rating, "rating", malformed)
    senses, sense_dupes = _read_pairs(
        Path(supersense_path), _parse_supersense, "supersense", malformed
    )
    for line in malformed:
        log.warning("malformed row: %s", line)

    concepts = [
        Concept(lemma=lemma, supersense=senses[lemma], concreteness=rating)
        for lemma, rating in ratings.items()
        if lemma in senses
    ]
    load = LexiconLoad(
        concepts=concepts,
        unmatched_ratings=[l for l in ratings if l not in senses],
        unmatched_supersenses=[l for l in senses if l not in ratings],
        duplicates=sorted({*rating_dupes, *sense_dupes}),
        malformed=malformed,
    )
    if not concepts:
        log.warning(
            "lexicon join produced no concepts (%d unmatched lemmas)", load.n_unmatched
        )
    return load


def filter_concepts(concepts: Sequence[Concept], cfg: FilterConfig | None = None) -> list[Concept]:
    """Assign retained/rejected statuses. Total, order-preserving, idempotent.

    A concept is retained iff its concreteness is strictly below the
    cutoff and its supersense is in the retained set; concreteness is
    checked first, so a doubly-failing concept reports that reason.
    """
    cfg = cfg or FilterConfig()
    out: list[Concept] = []
    for c in concepts:
        if not c.concreteness < cfg.concreteness_cutoff:
            out.append(replace(c, status=STATUS_REJECTED, reject_reason=REJECT_CONCRETENESS))
        elif c.supersense not in cfg.retained_categories:
            out.append(replace(c, status=STATUS_REJECTED, reject_reason=REJECT_CATEGORY))
        else:
            out.append(replace(c, status=STATUS_RETAINED, reject_reason=None))
    return out


@dataclass(frozen=True)
class CategoryStat:
    n_annotated: int
    n_metonymic: int

    @property
    def rate(self) -> Fraction | None:
        if self.n_annotated == 0:
            return None
        return Fraction(self.n_metonymic, self.n_annotated)


@dataclass
class CategoryRetentionReport:
    """Per-supersense metonymic rates and the resulting retained set.

    Rates are exact rationals; a supersense with no annotations has
    rate None ("no data") and is never retained.
    """

    per_supersense: dict[str, CategoryStat]
    retained: frozenset[str]
    threshold: Fraction

    def to_records(self) -> list[dict]:
        rows = []
        for sense in sorted(self.per_supersense):
            stat = self.per_supersense[sense]
            rows.append(
                {
                    "supersense": sense,
                    "n_annotated": stat.n_annotated,
                    "n_metonymic": stat.n_metonymic,
                    "rate": None if stat.rate is None else float(stat.rate),
                    "retained": sense in self.retained,
                }
            )
        return rows


def category_retention(
    annotations: Iterable[tuple[str, str]], cfg: FilterConfig | None = None
) -> CategoryRetentionReport:
    """Compute per-supersense metonymic rates from (supersense, label) pairs.

    Retention is strict: a category survives only when its rate exceeds
    the threshold. The threshold is interpreted as the decimal written
    in the config (via ``Fraction(str(threshold))``), so 0.6 means
    exactly 3/5.
    """
    cfg = cfg or FilterConfig()
    counts = {sense: [0, 0] for sense in SUPERSENSES}
    for sense, raw_label in annotations:
        if sense not in SUPERSENSES:
            raise ValueError(f"unknown supersense in annotations: {sense!r}")
        label = normalize_label(raw_label)
        counts[sense][0] += 1
        if label == METONYMIC:
            counts[sense][1] += 1
    threshold = Fraction(str(cfg.retention_threshold))
    per = {sense: CategoryStat(n, m) for sense, (n, m) in counts.items()}
    retained = frozenset(
        sense for sense, stat in per.items() if stat.rate is not None and stat.rate > threshold
    )
    return CategoryRetentionReport(per_supersense=per, retained=retained, threshold=threshold)


GRID_POINTS = 256


def _silverman_bandwidth(x: np.ndarray, floor: float) -> float:
    n = len(x)
    sd = float(np.std(x, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25)
    spreads = [v for v in (sd, iqr / 1.34) if v > 0]
    h = 0.9 * min(spreads) * n ** (-0.2) if spreads else 0.0
    return max(h, floor)


def _gaussian_kde(samples: np.ndarray, grid: np.ndarray, h: float) -> np.ndarray:
    z = (grid[:, None] - samples[None, :]) / h
    return np.exp(-0.5 * z * z).sum(axis=1) / (len(samples) * h * np.sqrt(2 * np.pi))


@dataclass
class CrossoverResult:
    grid: np.ndarray
    metonymic_density: np.ndarray
    non_metonymic_density: np.ndarray
    bandwidths: dict[str, float]
    grid_spacing: float
    crossover: float | None

    def to_records(self) -> list[dict]:
        return [
            {
                "concreteness": float(x),
                "metonymic_density": float(m),
                "non_metonymic_density": float(n),
            }
            for x, m, n in zip(self.grid, self.metonymic_density, self.non_metonymic_density)
        ]


def concreteness_crossover(
    annotated: Iterable[tuple[float, str]], grid_points: int = GRID_POINTS
) -> CrossoverResult:
    """Estimate where non-metonymic density overtakes metonymic density.

    Both label distributions are kernel-smoothed (Gaussian kernel,
    Silverman bandwidth) on a uniform grid over [1,5]. The crossover is
    the smallest grid point at or above the metonymic mode where the
    non-metonymic density strictly exceeds the metonymic one; None when
    no such point exists.
    """
    met: list[float] = []
    non: list[float] = []
    for value, raw_label in annotated:
        (met if normalize_label(raw_label) == METONYMIC else non).append(float(value))
    if len(met) < 2 or len(non) < 2:
        raise ValueError("cannot estimate crossover: need >= 2 samples of each label")

    grid = np.linspace(CONCRETENESS_MIN, CONCRETENESS_MAX, grid_points)
    spacing = float(grid[1] - grid[0])
    met_arr, non_arr = np.asarray(met), np.asarray(non)
    h_met = _silverman_bandwidth(met_arr, floor=spacing)
    h_non = _silverman_bandwidth(non_arr, floor=spacing)
    met_density = _gaussian_kde(met_arr, grid, h_met)
    non_density = _gaussian_kde(non_arr, grid, h_non)

    mode_idx = int(np.argmax(met_density))
    crossover: float | None = None
    above = np.nonzero((np.arange(grid_points) >= mode_idx) & (non_density > met_density))[0]
    if above.size:
        crossover = float(grid[above[0]])

    return CrossoverResult(
        grid=grid,
        metonymic_density=met_density,
        non_metonymic_density=non_density,
        bandwidths={METONYMIC: h_met, NON_METONYMIC: h_non},
        grid_spacing=spacing,
        crossover=crossover,
    )


def write_catalog(concepts: Sequence[Concept], path: str | Path) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for c in concepts:
            fh.write(json.dumps(c.to_record(), sort_keys=True) + "\n")


def read_catalog(path: str | Path) -> list[Concept]:
    import json

    concepts = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                concepts.append(Concept.from_record(json.loads(line)))
    return concepts
