"""Command-line interface.

Typical flow::

    metonym filter --ratings ratings.csv --supersenses senses.tsv --out store/catalog.jsonl
    metonym generate --catalog store/catalog.jsonl --out-dir store --seed 7 --config backends.yaml
    metonym distract --items-from store/catalog.jsonl --images store --graph file:edges.tsv --config backends.yaml
    metonym assemble --store store --seed 7
    metonym evaluate --model my-vlm --items store/items.jsonl --store store --config backends.yaml
    metonym score --results store/results --items store/items.jsonl --report md --out-dir reports
    metonym annotate serve --port 8800 --store store
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from . import __version__
from .annotation import LabelStore
from .benchmark import MCQItem, assemble_item, evaluate as run_evaluation, score as score_rows
from .catalog import (
    FilterConfig,
    category_retention,
    concreteness_crossover,
    filter_concepts,
    load_lexicon,
    read_catalog,
    write_catalog,
)
from .distractors import (
    DistractorConfig,
    ImageEmbeddingCache,
    ItemConstructionError,
    build_distractors,
)
from .gateway.config import build_gateway, load_gateway_config, mock_gateway
from .graph import open_graph
from .pipeline import MODE_GENERAL, MODE_SEMIOTIC, PromptTemplates, STYLES, run_pipeline, stable_seed
from .store import CorpusStore

log = logging.getLogger(__name__)


def _gateway(config_path: str | None, out_dir: str | Path | None = None, seed: int = 0):
    if config_path is None:
        return mock_gateway(seed=seed)
    return build_gateway(load_gateway_config(config_path), run_log_dir=out_dir)


@click.group()
@click.version_option(version=__version__)
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command("filter")
@click.option("--ratings", required=True, type=click.Path(exists=True), help="word,concreteness file")
@click.option("--supersenses", required=True, type=click.Path(exists=True), help="word,supersense file")
@click.option("--cutoff", default=3.5, show_default=True, help="Strict concreteness ceiling.")
@click.option(
    "--categories",
    default="auto",
    show_default=True,
    help="Comma-separated supersenses, or 'auto' (defaults; recomputed when --annotations given).",
)
@click.option("--retention-threshold", default=0.60, show_default=True)
@click.option(
    "--annotations",
    type=click.Path(exists=True),
    help="JSONL of {supersense,label} pairs; recomputes retained categories.",
)
@click.option("--out", required=True, type=click.Path())
@click.option("--report-dir", type=click.Path(), help="Also write the retention report here.")
def filter_cmd(ratings, supersenses, cutoff, categories, retention_threshold, annotations, out, report_dir):
    """Join the lexicon sources and assign retained/rejected statuses."""
    load = load_lexicon(ratings, supersenses)
    for line in load.malformed:
        click.echo(f"warning: {line}", err=True)
    if load.n_unmatched:
        click.echo(f"note: {load.n_unmatched} lemmas present in only one source", err=True)
    if not load.concepts:
        raise click.ClickException("lexicon join is empty: no lemma occurs in both sources")

    retained = None
    retention_records = None
    if categories != "auto":
        retained = frozenset(c.strip() for c in categories.split(",") if c.strip())
    elif annotations:
        pairs = []
        with open(annotations, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    pairs.append((rec["supersense"], rec["label"]))
        report = category_retention(pairs, FilterConfig(retention_threshold=retention_threshold))
        retained = report.retained
        retention_records = report.to_records()
        click.echo(f"recomputed retained categories: {', '.join(sorted(retained))}")

    cfg = FilterConfig(
        concreteness_cutoff=cutoff,
        retained_categories=retained if retained is not None else FilterConfig().retained_categories,
        retention_threshold=retention_threshold,
    )
    concepts = filter_concepts(load.concepts, cfg)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    write_catalog(concepts, out)
    n_retained = sum(c.status == "retained" for c in concepts)
    click.echo(f"wrote {len(concepts)} concepts ({n_retained} retained) to {out}")
    if report_dir and retention_records:
        from .reports import write_retention_report

        write_retention_report(retention_records, report_dir)


@main.command("generate")
@click.option("--catalog", required=True, type=click.Path(exists=True))
@click.option("--styles", default=",".join(STYLES), show_default=True)
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="Run seed for reproducible renders.")
@click.option("--config", "config_path", type=click.Path(exists=True), help="Backend config (mocks when omitted).")
@click.option("--mode", type=click.Choice([MODE_SEMIOTIC, MODE_GENERAL]), default=MODE_SEMIOTIC, show_default=True)
@click.option("--prompts-dir", type=click.Path(exists=True), help="Override the bundled prompt templates.")
@click.option("--limit", type=int, default=None, help="Only the first N retained concepts.")
@click.option("--workers", type=int, default=1, show_default=True)
def generate_cmd(catalog, styles, out_dir, seed, config_path, mode, prompts_dir, limit, workers):
    """Run the three-stage pipeline over the retained catalog."""
    concepts = [c for c in read_catalog(catalog) if c.status == "retained"]
    if limit:
        concepts = concepts[:limit]
    store = CorpusStore(out_dir)
    gateway = _gateway(config_path, out_dir, seed=seed or 0)
    templates = PromptTemplates.from_dir(prompts_dir) if prompts_dir else None
    summary = run_pipeline(
        gateway,
        store,
        concepts,
        styles=tuple(s.strip() for s in styles.split(",") if s.strip()),
        run_seed=seed,
        mode=mode,
        templates=templates,
        max_workers=workers,
    )
    click.echo(
        f"pipeline done: {summary.images} images, {summary.failures} failures, "
        f"{summary.skipped} skipped (resume)"
    )


@main.command("distract")
@click.option("--items-from", "catalog_path", required=True, type=click.Path(exists=True))
@click.option("--images", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--graph", "graph_spec", required=True, help="file:<edges.tsv> or api[:<url>]")
@click.option("--mix", default="1v2s", show_default=True)
@click.option("--tau-high", default=0.85, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--cache-dir", type=click.Path(), help="Response cache for the live graph API.")
def distract_cmd(catalog_path, store_dir, graph_spec, mix, tau_high, config_path, cache_dir):
    """Build three distractors per generated image."""
    store = CorpusStore(store_dir)
    gateway = _gateway(config_path, store_dir)
    graph = open_graph(graph_spec, cache_dir=cache_dir)
    cfg = DistractorConfig.from_mix(mix, tau_high=tau_high)
    retained = [c.lemma for c in read_catalog(catalog_path) if c.status == "retained"]
    images = store.image_records()
    pool = [(rec, store.get_image(rec["id"])) for rec in images]
    cache = ImageEmbeddingCache(gateway)
    done = {rec["image_id"] for rec in store.distractors.read_all()}
    built = skipped = failed = 0
    for rec in images:
        if rec["id"] in done:
            skipped += 1
            continue
        try:
            candidates = build_distractors(
                gateway,
                graph,
                rec,
                store.get_image(rec["id"]),
                pool,
                cfg,
                retained_lemmas=retained,
                cache=cache,
            )
        except ItemConstructionError as exc:
            log.warning("skipping %s: %s", rec["concept"], exc)
            failed += 1
            continue
        store.distractors.append(
            {
                "image_id": rec["id"],
                "concept": rec["concept"],
                "style": rec["style"],
                "candidates": [c.to_record() for c in candidates],
            }
        )
        built += 1
    click.echo(f"distractors: {built} built, {skipped} skipped (resume), {failed} failed")


@main.command("assemble")
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=0, show_default=True)
def assemble_cmd(store_dir, seed):
    """Assemble MCQ items from distractor rows, excluding flagged images."""
    store = CorpusStore(store_dir)
    labels = LabelStore(store)
    excluded = labels.excluded_images()
    images = {rec["id"]: rec for rec in store.image_records()}
    existing = {rec["item_id"] for rec in store.items.read_all()}
    made = flagged = 0
    for drow in store.distractors.read_all():
        image = images.get(drow["image_id"])
        if image is None:
            continue
        if image["id"] in excluded:
            flagged += 1
            continue
        item = assemble_item(
            image,
            drow["concept"],
            drow["candidates"],
            seed=stable_seed(seed, image["id"]),
            association_type=labels.association_for_image(image["id"]),
        )
        if item.item_id in existing:
            continue
        store.append(item.to_record(), jsonl=store.items)
        made += 1
    click.echo(f"assembled {made} items ({flagged} images excluded by moderation flags)")


def _load_items(path: str | Path) -> list[MCQItem]:
    items = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                items.append(MCQItem.from_record(json.loads(line)))
    return items


@main.command("evaluate")
@click.option("--model", default=None, help="Model name (defaults to the configured backend id).")
@click.option("--items", "items_path", required=True, type=click.Path(exists=True))
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--workers", type=int, default=4, show_default=True)
def evaluate_cmd(model, items_path, store_dir, config_path, workers):
    """Query the multimodal backend over every item; resumable."""
    store = CorpusStore(store_dir)
    gateway = _gateway(config_path, store_dir)
    items = _load_items(items_path)
    report = run_evaluation(gateway, store, items, model_name=model, max_workers=workers)
    acc = report.overall.accuracy
    click.echo(
        f"{report.model}: accuracy "
        + ("n/a" if acc is None else f"{100 * acc:.1f}%")
        + f" over {report.overall.answered} answered items "
        f"({report.overall.unparsed} unparsed, {report.overall.errored} errored)"
    )


@main.command("score")
@click.option("--results", "results_dir", required=True, type=click.Path(exists=True))
@click.option("--items", "items_path", required=True, type=click.Path(exists=True))
@click.option("--report", "fmt", type=click.Choice(["md", "json"]), default="md", show_default=True)
@click.option("--out-dir", default="reports", show_default=True)
def score_cmd(results_dir, items_path, fmt, out_dir):
    """Score persisted results and write the report (with figures)."""
    from .reports import write_score_report

    items = _load_items(items_path)
    reports = []
    for path in sorted(Path(results_dir).glob("*.jsonl")):
        rows = [json.loads(l) for l in path.read_text(encoding="utf-8").splitlines() if l.strip()]
        if rows:
            reports.append(score_rows(rows, items, model=rows[0].get("model", path.stem)))
    if not reports:
        raise click.ClickException(f"no result files under {results_dir}")
    path = write_score_report(reports, out_dir, fmt=fmt)
    click.echo(f"wrote {path}")


@main.group("report")
def report_group():
    """Auxiliary data reports (figures + CSV)."""


@report_group.command("crossover")
@click.option("--annotated", required=True, type=click.Path(exists=True), help="JSONL of {concreteness,label}.")
@click.option("--out-dir", default="reports", show_default=True)
def crossover_cmd(annotated, out_dir):
    """Concreteness density curves per label and their crossover."""
    from .reports import write_crossover_report

    pairs = []
    with open(annotated, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                pairs.append((float(rec["concreteness"]), rec["label"]))
    result = concreteness_crossover(pairs)
    summary = write_crossover_report(result, out_dir)
    click.echo(json.dumps(summary))


@report_group.command("similarity")
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out-dir", default="reports", show_default=True)
def similarity_cmd(store_dir, config_path, out_dir):
    """Concept-image similarity distribution and style-pair similarity."""
    from .benchmark import similarity_reports
    from .reports import write_similarity_report

    store = CorpusStore(store_dir)
    gateway = _gateway(config_path, store_dir)
    report = similarity_reports(gateway, store)
    summary = write_similarity_report(report, out_dir)
    click.echo(json.dumps(summary))


@main.command("verify")
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
def verify_cmd(store_dir):
    """Hash, referential, and leakage integrity checks."""
    store = CorpusStore(store_dir)
    findings = store.verify()
    for f in findings:
        click.echo(f"{f.kind}: {f.ref}: {f.message}")
    if findings:
        raise click.ClickException(f"{len(findings)} integrity findings")
    click.echo("store verified: no findings")


@main.group("annotate")
def annotate_group():
    """Human annotation service."""


@annotate_group.command("serve")
@click.option("--port", default=8800, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True))
@click.option("--tokens", "tokens_path", type=click.Path(exists=True), help="JSON {token: annotator} map.")
@click.option("--origin", default="*", show_default=True, help="CORS origin for the UI.")
@click.option("--labels-per-image", default=2, show_default=True)
@click.option("--ui-dir", type=click.Path(exists=True), help="Also serve the browser UI from this directory at /ui.")
def annotate_serve(port, host, store_dir, tokens_path, origin, labels_per_image, ui_dir):
    """Serve the annotation HTTP API."""
    import uvicorn

    from .service import create_app

    tokens = None
    if tokens_path:
        tokens = json.loads(Path(tokens_path).read_text(encoding="utf-8"))
    app = create_app(
        store_dir,
        tokens=tokens,
        labels_per_image=labels_per_image,
        allow_origin=origin,
        ui_dir=ui_dir,
    )
    uvicorn.run(app, host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
