from __future__ import annotations

import pytest

from metonym.catalog import Concept, DEFAULT_RETAINED_CATEGORIES, STATUS_RETAINED
from metonym.gateway.config import mock_gateway
from metonym.pipeline import run_pipeline
from metonym.store import CorpusStore


@pytest.fixture
def gateway():
    return mock_gateway(seed=0)


def make_concepts(n: int, status: str = STATUS_RETAINED) -> list[Concept]:
    senses = sorted(DEFAULT_RETAINED_CATEGORIES)
    return [
        Concept(
            lemma=f"notion{i:02d}",
            supersense=senses[i % len(senses)],
            concreteness=1.5 + (i % 10) * 0.15,
            status=status,
        )
        for i in range(n)
    ]


@pytest.fixture
def concepts20():
    return make_concepts(20)


@pytest.fixture
def seeded_store(tmp_path, gateway, concepts20):
    """Corpus with 40 mock images (20 concepts x 2 styles)."""
    store = CorpusStore(tmp_path / "store")
    summary = run_pipeline(gateway, store, concepts20, run_seed=7)
    assert summary.failures == 0
    return store
