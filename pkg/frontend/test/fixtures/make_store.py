"""Build a small mock-backend corpus for the UI integration test.

Usage: python3 make_store.py <store-dir>
Creates 4 retained concepts x 1 naturalistic image each plus synthetic
distractor rows so `metonym assemble` has input.
"""

import sys

from metonym.catalog import Concept
from metonym.gateway.config import mock_gateway
from metonym.pipeline import run_pipeline
from metonym.store import CorpusStore


def main(store_dir: str) -> None:
    concepts = [
        Concept(f"concept{i:02d}", "feeling", 2.0, status="retained") for i in range(4)
    ]
    store = CorpusStore(store_dir)
    summary = run_pipeline(
        mock_gateway(seed=0), store, concepts, styles=("naturalistic",), run_seed=5
    )
    assert summary.images == 4, summary
    for rec in store.image_records():
        store.distractors.append(
            {
                "image_id": rec["id"],
                "concept": rec["concept"],
                "style": rec["style"],
                "candidates": [
                    {"lemma": f"alt{k} {rec['concept']}", "source": "semantic", "text_cosine": 0.3}
                    for k in range(3)
                ],
            }
        )
    print(store.root)


if __name__ == "__main__":
    main(sys.argv[1])
