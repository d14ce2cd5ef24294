"""Report writers: delimited data plus plain matplotlib figures.

Every report function writes machine-readable output (CSV/JSON) and a
small PNG figure next to it. Published reference numbers are included
in score reports for context and are always marked "reference, not
reproduced": reproducing them needs human annotators and the original
hosted models.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .benchmark import ScoreReport, SimilarityReport
from .catalog import CrossoverResult

log = logging.getLogger(__name__)

#: Externally reported accuracies on the original 2,000-item benchmark
#: (naturalistic, stylistic, overall), reference only.
REFERENCE_ACCURACIES = [
    ("Llama 3.2 11B", 61.5, 60.8, 61.2),
    ("Llama 3.2 90B", 61.5, 63.9, 62.7),
    ("Llama 4 Scout", 62.8, 63.5, 63.2),
    ("InternVL3 8B", 62.2, 63.6, 62.9),
    ("InternVL3 78B", 65.4, 66.4, 65.9),
    ("Qwen2.5-VL 7B", 64.8, 62.6, 63.7),
    ("Qwen2.5-VL 72B", 66.4, 64.4, 65.4),
    ("Gemini 2.5 Flash", 62.3, 62.9, 62.6),
    ("Gemini 2.5 Pro", 66.2, 64.2, 65.2),
    ("Human", 85.6, 88.1, 86.9),
]

#: Reference accuracy by association type (cultural, contextual, symbolic).
REFERENCE_ASSOCIATION = {
    "VLMs": (66.6, 54.5, 76.3),
    "Humans": (88.3, 75.2, 92.1),
}

#: Reference metonymic rates from human evaluation of 1,000 images.
REFERENCE_METONYMIC_RATES = {"semiotic": 84.3, "general": 41.2}

REFERENCE_NOTE = "reference, not reproduced"


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_crossover_report(result: CrossoverResult, out_dir: str | Path) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "concreteness_density.csv",
        ["concreteness", "metonymic_density", "non_metonymic_density"],
        [
            (f"{r['concreteness']:.6f}", f"{r['metonymic_density']:.8f}", f"{r['non_metonymic_density']:.8f}")
            for r in result.to_records()
        ],
    )
    summary = {
        "crossover": result.crossover,
        "note": None if result.crossover is not None else "no crossover",
        "grid_spacing": result.grid_spacing,
        "bandwidths": result.bandwidths,
    }
    (out / "crossover.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(result.grid, result.metonymic_density, label="metonymic")
    ax.plot(result.grid, result.non_metonymic_density, label="non-metonymic")
    if result.crossover is not None:
        ax.axvline(result.crossover, linestyle="--", color="gray", label=f"crossover {result.crossover:.2f}")
    ax.set_xlabel("concreteness rating")
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "concreteness_density.png", dpi=120)
    plt.close(fig)
    return summary


def write_similarity_report(report: SimilarityReport, out_dir: str | Path) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "concept_image_similarity.csv",
        ["concept", "image_id", "similarity"],
        [(c, i, f"{s:.6f}") for c, i, s in report.concept_image_scores],
    )
    _write_csv(
        out / "style_pair_similarity.csv",
        ["concept", "cosine"],
        [(c, f"{v:.6f}") for c, v in sorted(report.style_pair_cosines.items())],
    )
    summary = {
        "n_images": len(report.concept_image_scores),
        "style_pair_mean": report.style_pair_mean,
        "reference": {
            "concept_image_similarity": "scores reported to concentrate in 20.0-25.0, peaking near 22.5",
            "style_pair_mean": 0.70,
            "note": REFERENCE_NOTE,
        },
    }
    (out / "similarity_summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")

    values = [s for _, _, s in report.concept_image_scores]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(values, bins=20)
    ax.set_xlabel("image-concept similarity (backend scale)")
    ax.set_ylabel("count")
    fig.tight_layout()
    fig.savefig(out / "concept_image_similarity.png", dpi=120)
    plt.close(fig)
    return summary


def _fmt_acc(value: float | None) -> str:
    return "-" if value is None else f"{100 * value:.1f}"


def score_report_markdown(reports: Sequence[ScoreReport]) -> str:
    lines = ["# Evaluation report", "", "## Measured accuracy", ""]
    lines.append("| model | naturalistic | stylistic | overall | unparsed | errored |")
    lines.append("|---|---|---|---|---|---|")
    for rep in reports:
        nat = rep.by_style.get("naturalistic")
        sty = rep.by_style.get("stylistic")
        lines.append(
            "| {} | {} | {} | {} | {} | {} |".format(
                rep.model,
                _fmt_acc(nat.accuracy if nat else None),
                _fmt_acc(sty.accuracy if sty else None),
                _fmt_acc(rep.overall.accuracy),
                rep.overall.unparsed,
                rep.overall.errored,
            )
        )
    lines += ["", "## Accuracy by association type", ""]
    any_assoc = any(rep.by_association for rep in reports)
    if any_assoc:
        lines.append("| model | cultural | contextual | symbolic |")
        lines.append("|---|---|---|---|")
        for rep in reports:
            cells = [
                _fmt_acc(rep.by_association[t].accuracy) if t in rep.by_association else "-"
                for t in ("cultural", "contextual", "symbolic")
            ]
            lines.append(f"| {rep.model} | {cells[0]} | {cells[1]} | {cells[2]} |")
    else:
        lines.append("no data (no items carry association labels)")
    lines += ["", f"## Published results ({REFERENCE_NOTE})", ""]
    lines.append("| model | naturalistic | stylistic | overall |")
    lines.append("|---|---|---|---|")
    for name, nat, sty, overall in REFERENCE_ACCURACIES:
        lines.append(f"| {name} | {nat} | {sty} | {overall} |")
    lines += ["", f"Association-type reference ({REFERENCE_NOTE}):", ""]
    lines.append("| | cultural | contextual | symbolic |")
    lines.append("|---|---|---|---|")
    for who, (cu, co, sy) in REFERENCE_ASSOCIATION.items():
        lines.append(f"| {who} | {cu} | {co} | {sy} |")
    lines.append("")
    return "\n".join(lines)


def write_score_report(reports: Sequence[ScoreReport], out_dir: str | Path, fmt: str = "md") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "md":
        path = out / "report.md"
        path.write_text(score_report_markdown(reports), encoding="utf-8")
    elif fmt == "json":
        path = out / "report.json"
        payload = {
            "results": [rep.to_dict() for rep in reports],
            "reference": {
                "note": REFERENCE_NOTE,
                "accuracies": [
                    {"model": m, "naturalistic": n, "stylistic": s, "overall": o}
                    for m, n, s, o in REFERENCE_ACCURACIES
                ],
                "association": {
                    who: dict(zip(("cultural", "contextual", "symbolic"), vals))
                    for who, vals in REFERENCE_ASSOCIATION.items()
                },
                "metonymic_rates": REFERENCE_METONYMIC_RATES,
            },
        }
        path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    else:
        raise ValueError(f"unknown report format: {fmt!r}")

    if reports:
        fig, ax = plt.subplots(figsize=(6, 4))
        styles = ("naturalistic", "stylistic")
        width = 0.35
        for offset, style in enumerate(styles):
            xs = [i + offset * width for i in range(len(reports))]
            ys = [
                100 * (rep.by_style[style].accuracy or 0) if style in rep.by_style else 0
                for rep in reports
            ]
            ax.bar(xs, ys, width=width, label=style)
        ax.set_xticks([i + width / 2 for i in range(len(reports))])
        ax.set_xticklabels([rep.model for rep in reports], rotation=20, ha="right")
        ax.set_ylabel("accuracy (%)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "accuracy_by_style.png", dpi=120)
        plt.close(fig)
    return path


def write_retention_report(records: Sequence[dict], out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(
        out / "category_retention.csv",
        ["supersense", "n_annotated", "n_metonymic", "rate", "retained"],
        [
            (
                r["supersense"],
                r["n_annotated"],
                r["n_metonymic"],
                "no data" if r["rate"] is None else f"{r['rate']:.4f}",
                r["retained"],
            )
            for r in records
        ],
    )
    with_data = [r for r in records if r["rate"] is not None]
    if with_data:
        fig, ax = plt.subplots(figsize=(7, 4))
        names = [r["supersense"] for r in with_data]
        rates = [100 * r["rate"] for r in with_data]
        colors = ["tab:blue" if r["retained"] else "tab:red" for r in with_data]
        ax.bar(range(len(names)), rates, color=colors)
        ax.axhline(60, linestyle="--", color="gray")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
        ax.set_ylabel("metonymic rate (%)")
        fig.tight_layout()
        fig.savefig(out / "category_retention.png", dpi=120)
        plt.close(fig)
