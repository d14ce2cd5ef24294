"""Knowledge-graph views over ConceptNet-style relations.

Two backings share one interface: an offline tab-separated edge file
(``relation<TAB>node1<TAB>node2``) for tests and air-gapped runs, and
the public REST API with an on-disk response cache keyed by URL so
lookups stay deterministic within a run. Relations are treated as
undirected. Node labels are normalized to the API's convention
(lowercase, spaces to underscores) internally and reversed on output.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from pathlib import Path
from typing import Protocol

import httpx

log = logging.getLogger(__name__)

RELATED_TO = "RelatedTo"
SYNONYM = "Synonym"

DEFAULT_API_ROOT = "https://api.conceptnet.io"
API_PAGE_LIMIT = 100

#: Bound on intermediates expanded per node during 2-step enumeration.
INTERMEDIATE_CAP = 200


class GraphError(Exception):
    pass


def to_node(lemma: str) -> str:
    return lemma.strip().lower().replace(" ", "_")


def to_lemma(node: str) -> str:
    return node.replace("_", " ")


class KnowledgeGraphView(Protocol):
    def neighbors(self, node: str, relation: str) -> frozenset[str]:
        """Undirected neighbors of a normalized node under one relation."""
        ...


class EdgeFileGraph:
    """Offline graph from a TSV edge list."""

    def __init__(self, path: str | Path):
        self._adj: dict[str, dict[str, set[str]]] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise GraphError(f"edge file line {lineno}: expected 3 tab-separated fields")
                relation, a, b = parts[0], to_node(parts[1]), to_node(parts[2])
                self._add(relation, a, b)
                self._add(relation, b, a)

    def _add(self, relation: str, a: str, b: str) -> None:
        self._adj.setdefault(relation, {}).setdefault(a, set()).add(b)

    def neighbors(self, node: str, relation: str) -> frozenset[str]:
        return frozenset(self._adj.get(relation, {}).get(node, set()))


class ConceptNetApiGraph:
    """Cached client for the public API's edge queries."""

    def __init__(
        self,
        api_root: str = DEFAULT_API_ROOT,
        cache_dir: str | Path | None = None,
        language: str = "en",
        max_attempts: int = 3,
        backoff_s: float = 0.5,
        transport: httpx.BaseTransport | None = None,
    ):
        self.api_root = api_root.rstrip("/")
        self.language = language
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.max_attempts = max_attempts
        self.backoff_s = backoff_s
        self._client = httpx.Client(timeout=30.0, transport=transport)

    def _cached_get(self, url: str) -> dict:
        cache_path = None
        if self.cache_dir:
            cache_path = self.cache_dir / (hashlib.sha256(url.encode()).hexdigest() + ".json")
            if cache_path.exists():
                return json.loads(cache_path.read_text(encoding="utf-8"))
        error: Exception | None = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                response = self._client.get(url)
                response.raise_for_status()
                body = response.json()
                if cache_path:
                    cache_path.write_text(json.dumps(body), encoding="utf-8")
                return body
            except httpx.HTTPError as exc:
                error = exc
                if attempt < self.max_attempts:
                    time.sleep(self.backoff_s * 2 ** (attempt - 1))
        raise GraphError(f"graph API failed after {self.max_attempts} attempts: {error}")

    def neighbors(self, node: str, relation: str) -> frozenset[str]:
        prefix = f"/c/{self.language}/"
        this = prefix + node
        found: set[str] = set()
        offset = 0
        while True:
            url = (
                f"{self.api_root}/query?node={this}&rel=/r/{relation}"
                f"&limit={API_PAGE_LIMIT}&offset={offset}"
            )
            body = self._cached_get(url)
            edges = body.get("edges", [])
            for edge in edges:
                for side in ("start", "end"):
                    term = edge.get(side, {}).get("term", "")
                    if term.startswith(prefix):
                        # strip any part-of-speech/sense suffix ("/c/en/cat/n")
                        label = term[len(prefix):].split("/")[0]
                        if label and label != node:
                            found.add(label)
            if "view" in body and body["view"].get("nextPage") and len(edges) == API_PAGE_LIMIT:
                offset += API_PAGE_LIMIT
                continue
            break
        if not found and not body.get("edges"):
            log.warning("node %r has no %s edges (possibly unknown node)", node, relation)
        return frozenset(found)


def open_graph(spec: str, cache_dir: str | Path | None = None) -> KnowledgeGraphView:
    """Open ``file:<path>`` or ``api[:<root-url>]`` graph specs."""
    if spec.startswith("file:"):
        return EdgeFileGraph(spec[len("file:"):])
    if spec == "api":
        return ConceptNetApiGraph(cache_dir=cache_dir)
    if spec.startswith("api:"):
        return ConceptNetApiGraph(api_root=spec[len("api:"):], cache_dir=cache_dir)
    raise GraphError(f"unknown graph spec: {spec!r} (expected file:<path> or api)")


def related_terms(graph: KnowledgeGraphView, concept: str) -> frozenset[str]:
    """Directly related lemmas of a concept."""
    return frozenset(to_lemma(n) for n in graph.neighbors(to_node(concept), RELATED_TO))


def synonym_set(graph: KnowledgeGraphView, concept: str) -> frozenset[str]:
    """Synonym neighbors plus the concept itself."""
    lemma = " ".join(concept.strip().lower().split())
    return frozenset({lemma, *(to_lemma(n) for n in graph.neighbors(to_node(concept), SYNONYM))})


def two_step_candidates(
    graph: KnowledgeGraphView, concept: str, intermediate_cap: int = INTERMEDIATE_CAP
) -> frozenset[str]:
    """Lemmas at relational distance exactly 2 under RelatedTo.

    A candidate is reachable through at least one intermediate node but
    has no direct edge to the concept. Expansion is capped at
    ``intermediate_cap`` intermediates (sorted order), logged when hit.
    """
    node = to_node(concept)
    direct = graph.neighbors(node, RELATED_TO)
    intermediates = sorted(direct)
    if len(intermediates) > intermediate_cap:
        log.info(
            "capping 2-step expansion for %r at %d of %d intermediates",
            concept,
            intermediate_cap,
            len(intermediates),
        )
        intermediates = intermediates[:intermediate_cap]
    second: set[str] = set()
    for mid in intermediates:
        second |= graph.neighbors(mid, RELATED_TO)
    return frozenset(to_lemma(n) for n in second - direct - {node})


def walk_path(graph: KnowledgeGraphView, path: list[str], relation: str = RELATED_TO) -> bool:
    """Re-verify that consecutive lemmas in `path` are connected."""
    nodes = [to_node(p) for p in path]
    return all(nodes[i + 1] in graph.neighbors(nodes[i], relation) for i in range(len(nodes) - 1))
