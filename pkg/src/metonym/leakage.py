"""Concept-leakage detection for generated visual descriptions.

A description "leaks" when the target lemma appears in it as a whole
word. Matching covers regular plural inflections (-s/-es), possessives
('s), and whitespace/hyphen spelling variants of multi-word lemmas.
Derivations ("act" -> "acting") and paraphrases are deliberately not
caught; those failure modes are left to human annotation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache

CLEAN = "clean"
LEAKED = "leaked"


@dataclass(frozen=True)
class LeakageResult:
    status: str
    matched: str | None = None

    @property
    def clean(self) -> bool:
        return self.status == CLEAN


@lru_cache(maxsize=4096)
def _lemma_pattern(lemma: str) -> re.Pattern:
    words = [re.escape(w) for w in lemma.split()]
    if not words:
        raise ValueError("empty lemma")
    # inflect only the final word; join multi-word lemmas on space or hyphen
    words[-1] = words[-1] + r"(?:e?s)?(?:['’]s)?"
    return re.compile(r"\b" + r"[\s\-]+".join(words) + r"\b", re.IGNORECASE)


def leakage_check(text: str, lemma: str) -> LeakageResult:
    """Report whether `lemma` occurs in `text` as a whole word.

    Substring hits inside longer words do not count ("cat" does not
    leak in "catalog").
    """
    match = _lemma_pattern(lemma.strip().lower()).search(text)
    if match:
        return LeakageResult(LEAKED, matched=match.group(0))
    return LeakageResult(CLEAN)
