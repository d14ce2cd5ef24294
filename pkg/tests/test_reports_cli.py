from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from metonym.benchmark import MCQItem, score
from metonym.catalog import concreteness_crossover
from metonym.cli import main
from metonym.reports import (
    REFERENCE_ACCURACIES,
    score_report_markdown,
    write_crossover_report,
    write_score_report,
)
from metonym.store import CorpusStore


# -- report writers -----------------------------------------------------------


def test_crossover_report_writes_data_and_figure(tmp_path):
    rng = np.random.default_rng(1)
    pairs = [(float(x), "metonymic") for x in rng.normal(2.5, 0.3, 500)]
    pairs += [(float(x), "non-metonymic") for x in rng.normal(4.0, 0.3, 500)]
    result = concreteness_crossover(pairs)
    summary = write_crossover_report(result, tmp_path)
    assert (tmp_path / "concreteness_density.csv").exists()
    assert (tmp_path / "concreteness_density.png").exists()
    assert summary["crossover"] is not None
    with open(tmp_path / "concreteness_density.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["concreteness", "metonymic_density", "non_metonymic_density"]
    assert len(rows) == 257


def make_report(model="m", correct=2, total=4):
    items = [
        MCQItem(
            item_id=f"i{k}",
            image_id=f"i{k}",
            image_path="",
            options=["t", "a", "b", "c"],
            answer_index=0,
            style="naturalistic" if k % 2 else "stylistic",
            concept="t",
        )
        for k in range(total)
    ]
    rows = [
        {"item_id": f"i{k}", "parsed_choice": 0 if k < correct else 1, "raw_response": "x"}
        for k in range(total)
    ]
    return score(rows, items, model=model)


def test_score_report_markdown_marks_reference():
    text = score_report_markdown([make_report()])
    assert "reference, not reproduced" in text
    for name, _, _, overall in REFERENCE_ACCURACIES:
        assert name in text
        assert str(overall) in text


def test_score_report_files(tmp_path):
    path = write_score_report([make_report()], tmp_path, fmt="json")
    payload = json.loads(path.read_text())
    assert payload["reference"]["note"] == "reference, not reproduced"
    assert (tmp_path / "accuracy_by_style.png").exists()
    path_md = write_score_report([make_report()], tmp_path, fmt="md")
    assert path_md.name == "report.md"


# -- CLI end to end --------------------------------------------------------------


@pytest.fixture
def workdir(tmp_path):
    ratings = tmp_path / "ratings.csv"
    senses = tmp_path / "senses.tsv"
    lemmas = [f"notion{i:02d}" for i in range(8)]
    with open(ratings, "w") as fh:
        fh.write("word,concreteness\n")
        for lemma in lemmas:
            fh.write(f"{lemma},2.0\n")
        fh.write("anvil,4.9\n")
    with open(senses, "w") as fh:
        fh.write("word\tsupersense\n")
        for i, lemma in enumerate(lemmas):
            fh.write(f"{lemma}\t{'act' if i % 2 else 'feeling'}\n")
        fh.write("anvil\tartifact\n")
    edges = tmp_path / "edges.tsv"
    with open(edges, "w") as fh:
        for lemma in lemmas:
            fh.write(f"RelatedTo\t{lemma}\tmid {lemma}\n")
            fh.write(f"RelatedTo\tmid {lemma}\talt {lemma}\n")
    return tmp_path


def run_cli(*args):
    result = CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)
    assert result.exit_code == 0, result.output
    return result


def test_cli_full_workflow(workdir):
    store_dir = workdir / "store"
    run_cli(
        "filter",
        "--ratings", workdir / "ratings.csv",
        "--supersenses", workdir / "senses.tsv",
        "--out", store_dir / "catalog.jsonl",
    )
    catalog = store_dir / "catalog.jsonl"
    rows = [json.loads(l) for l in catalog.read_text().splitlines()]
    assert sum(r["status"] == "retained" for r in rows) == 8
    assert any(r.get("reject_reason") == "concreteness" for r in rows)

    result = run_cli(
        "generate", "--catalog", catalog, "--out-dir", store_dir, "--seed", 7
    )
    assert "16 images" in result.output
    result = run_cli(
        "generate", "--catalog", catalog, "--out-dir", store_dir, "--seed", 7
    )
    assert "16 skipped" in result.output

    run_cli(
        "distract",
        "--items-from", catalog,
        "--images", store_dir,
        "--graph", f"file:{workdir / 'edges.tsv'}",
    )
    store = CorpusStore(store_dir)
    drows = store.distractors.read_all()
    assert len(drows) == 16
    for drow in drows:
        assert len(drow["candidates"]) == 3

    run_cli("assemble", "--store", store_dir, "--seed", 3)
    items = store.items.read_all()
    assert len(items) == 16

    run_cli(
        "evaluate",
        "--items", store_dir / "items.jsonl",
        "--store", store_dir,
        "--model", "mock-vlm",
    )
    assert (store_dir / "results" / "mock-vlm.jsonl").exists()

    reports_dir = workdir / "reports"
    run_cli(
        "score",
        "--results", store_dir / "results",
        "--items", store_dir / "items.jsonl",
        "--report", "md",
        "--out-dir", reports_dir,
    )
    report = (reports_dir / "report.md").read_text()
    assert "reference, not reproduced" in report
    assert (reports_dir / "accuracy_by_style.png").exists()

    run_cli("verify", "--store", store_dir)

    run_cli("report", "similarity", "--store", store_dir, "--out-dir", reports_dir)
    assert (reports_dir / "concept_image_similarity.png").exists()
    assert (reports_dir / "concept_image_similarity.csv").exists()


def test_cli_general_mode_and_grouped_rates(workdir):
    store_dir = workdir / "store"
    run_cli(
        "filter",
        "--ratings", workdir / "ratings.csv",
        "--supersenses", workdir / "senses.tsv",
        "--out", store_dir / "catalog.jsonl",
    )
    run_cli(
        "generate", "--catalog", store_dir / "catalog.jsonl",
        "--out-dir", store_dir, "--seed", 1, "--mode", "general", "--limit", 2,
    )
    store = CorpusStore(store_dir)
    recs = store.image_records()
    assert len(recs) == 4
    assert all(r["pipeline"] == "general" for r in recs)


def test_cli_crossover_report(workdir):
    annotated = workdir / "annotated.jsonl"
    rng = np.random.default_rng(0)
    with open(annotated, "w") as fh:
        for x in rng.normal(2.5, 0.3, 300):
            fh.write(json.dumps({"concreteness": float(x), "label": "metonymic"}) + "\n")
        for x in rng.normal(4.2, 0.3, 300):
            fh.write(json.dumps({"concreteness": float(x), "label": "non-metonymic"}) + "\n")
    out = workdir / "cross"
    result = run_cli("report", "crossover", "--annotated", annotated, "--out-dir", out)
    assert (out / "concreteness_density.png").exists()
    summary = json.loads(result.output.strip().splitlines()[-1])
    assert 2.5 < summary["crossover"] < 4.2


def test_cli_filter_recomputes_categories(workdir):
    pairs = workdir / "pairs.jsonl"
    with open(pairs, "w") as fh:
        for _ in range(7):
            fh.write(json.dumps({"supersense": "act", "label": "metonymic"}) + "\n")
        for _ in range(3):
            fh.write(json.dumps({"supersense": "act", "label": "non-metonymic"}) + "\n")
        for _ in range(10):
            fh.write(json.dumps({"supersense": "feeling", "label": "non-metonymic"}) + "\n")
    out = workdir / "cat2.jsonl"
    result = run_cli(
        "filter",
        "--ratings", workdir / "ratings.csv",
        "--supersenses", workdir / "senses.tsv",
        "--annotations", pairs,
        "--out", out,
    )
    assert "recomputed retained categories: act" in result.output
    rows = [json.loads(l) for l in out.read_text().splitlines()]
    # feeling dropped to 0% metonymic, so only act-words survive
    for row in rows:
        if row["supersense"] == "feeling":
            assert row["status"] == "rejected" and row["reject_reason"] == "category"
        if row["supersense"] == "act" and row["concreteness"] < 3.5:
            assert row["status"] == "retained"


def test_cli_filter_empty_join_fails(tmp_path):
    (tmp_path / "r.csv").write_text("word,c\nhope,1.5\n")
    (tmp_path / "s.csv").write_text("word,s\nunity,group\n")
    result = CliRunner().invoke(
        main,
        ["filter", "--ratings", str(tmp_path / "r.csv"), "--supersenses", str(tmp_path / "s.csv"), "--out", str(tmp_path / "o.jsonl")],
    )
    assert result.exit_code != 0
    assert "empty" in result.output
