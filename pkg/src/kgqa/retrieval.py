"""Three-stage graph retrieval: node similarity, type similarity and fuzzy entity match."""

from __future__ import annotations

import logging
import re
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingIndex
from .errors import KGQAError, NotFoundError, ProviderError, ValidationError
from .fuzzy import levenshtein
from .graph import KnowledgeGraph, TypedEdge, normalize_name
from .providers import EmbeddingProvider, NERProvider

logger = logging.getLogger(__name__)

STAGES = ("semantic", "type_general", "fuzzy")
_PRIORITY = {stage: i for i, stage in enumerate(STAGES)}


@dataclass(frozen=True)
class EntityMention:
    text: str
    span: tuple[int, int]
    source: str  # "ner_provider" or "fallback_heuristic"


@dataclass(frozen=True)
class BundleItem:
    edge: TypedEdge
    stage: str
    score: float
    matched_node: str


@dataclass
class RetrievalBundle:
    question: str
    items: list[BundleItem] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.items)

    def edges(self) -> list[TypedEdge]:
        return [item.edge for item in self.items]


@dataclass
class RetrievalConfig:
    k: int = 5
    edit_distance_max: int = 3
    max_bundle: int = 64
    mode: str = "full"  # or "fuzzy_only"

    def __post_init__(self) -> None:
        if self.k < 1 or self.max_bundle < 1 or self.edit_distance_max < 0:
            raise ValueError("k and max_bundle must be positive, edit_distance_max non-negative")
        if self.mode not in ("full", "fuzzy_only"):
            raise ValueError(f"unknown retrieval mode {self.mode!r}")


def _edge_items(graph: KnowledgeGraph, node_id: str, stage: str, score: float) -> list[BundleItem]:
    return [BundleItem(e, stage, score, node_id) for e in graph.neighborhood(node_id)]


def _dedup(items: Sequence[BundleItem]) -> list[BundleItem]:
    seen: set[tuple[str, str, str]] = set()
    out = []
    for item in items:
        if item.edge.key not in seen:
            seen.add(item.edge.key)
            out.append(item)
    return out


# -- stage 1 ---------------------------------------------------------------------


def semantic_stage(
    graph: KnowledgeGraph, question_vec, k: int, index: EmbeddingIndex | None = None
) -> list[BundleItem]:
    """Top-k nodes by cosine, each expanded to its immediate edges."""
    index = index or EmbeddingIndex(graph)
    items: list[BundleItem] = []
    for match in index.top_k_nodes(question_vec, k):
        items.extend(_edge_items(graph, match.target_id, "semantic", match.score))
    return _dedup(items)


# -- stage 2 ---------------------------------------------------------------------


def type_stage(graph: KnowledgeGraph, question_vec, index: EmbeddingIndex | None = None) -> list[BundleItem]:
    """Every edge touching any node of the single most similar type."""
    index = index or EmbeddingIndex(graph)
    try:
        best = index.top_type(question_vec)
    except NotFoundError:
        return []
    members = {n.id for n in graph.nodes_of_type(best.target_id)}
    if not members:
        # unreachable while type records stay consistent with the nodes
        raise ValidationError(f"type record {best.target_id!r} has no member nodes")
    items = []
    for edge in graph.edges():
        if edge.subject_id in members:
            items.append(BundleItem(edge, "type_general", best.score, edge.subject_id))
        elif edge.object_id in members:
            items.append(BundleItem(edge, "type_general", best.score, edge.object_id))
    return items


# -- stage 3 ---------------------------------------------------------------------

_STOPWORDS = frozenset(
    "a an the which what who whom whose when where why how is are was were do does did can could "
    "should would will shall may might must in on at of for to under by with from as if and or "
    "not this that these those it its there here please list name tell give explain describe".split()
)
_QUOTED = re.compile(r"\"([^\"]+)\"|“([^”]+)”|(?<!\w)'([^']+)'(?!\w)")
_CLAUSE = re.compile(r"\bClause\s+\d+(?:\.\d+)*\b", re.IGNORECASE)
_TOKEN = re.compile(r"[^\s,;:!?()\"“”]+")


def _capitalized_spans(question: str) -> list[tuple[int, int]]:
    spans: list[tuple[int, int]] = []
    run: list[tuple[int, int]] = []
    sentence_start = True

    def flush():
        if run:
            spans.append((run[0][0], run[-1][1]))
            run.clear()

    prev_end = 0
    for m in _TOKEN.finditer(question):
        start, end = m.start(), m.end()
        gap = question[prev_end:start]
        if run and gap != " ":
            flush()
        if re.search(r"[.?!]", gap):
            sentence_start = True
        word = m.group(0)
        closes = word.endswith((".", "?", "!"))
        bare = word.rstrip(".?!")
        bare = re.sub(r"['’]s$", "", bare)
        end = start + len(bare)
        initial = sentence_start
        sentence_start = False
        if bare and bare[0].isupper() and not (initial and bare.lower() in _STOPWORDS):
            run.append((start, end))
            if bare != word:
                flush()
        else:
            flush()
        if closes:
            flush()
            sentence_start = True
        prev_end = m.end()
    flush()
    return spans


def heuristic_mentions(question: str) -> list[EntityMention]:
    """Capitalized spans, quoted spans and ``Clause <n>`` references.

    Mentions contained in a longer mention are dropped.
    """
    spans: set[tuple[int, int]] = set(_capitalized_spans(question))
    for m in _QUOTED.finditer(question):
        g = next(i for i in (1, 2, 3) if m.group(i) is not None)
        if m.group(g).strip():
            spans.add((m.start(g), m.end(g)))
    for m in _CLAUSE.finditer(question):
        spans.add((m.start(), m.end()))
    kept = [
        s for s in spans
        if not any(o != s and o[0] <= s[0] and s[1] <= o[1] for o in spans)
    ]
    return [
        EntityMention(question[s:e], (s, e), "fallback_heuristic")
        for s, e in sorted(kept)
        if question[s:e].strip()
    ]


def extract_mentions(question: str, provider: NERProvider | None = None) -> list[EntityMention]:
    if not question.strip():
        return []
    if provider is not None:
        try:
            raw = provider.mentions(question)
            mentions = []
            for r in raw:
                start, end = int(r["start"]), int(r["end"])
                text = str(r.get("text") or question[start:end])
                if not (0 <= start < end <= len(question)) or not text.strip():
                    raise ProviderError(f"invalid mention span {start}..{end}", step="ner")
                mentions.append(EntityMention(text, (start, end), "ner_provider"))
            return mentions
        except (KGQAError, KeyError, TypeError, ValueError) as exc:
            logger.warning("NER provider failed (%s); using heuristic mentions", exc)
    return heuristic_mentions(question)


def fuzzy_score(distance: int, max_distance: int) -> float:
    """Map an accepted distance to (0, 1]: 0 -> 1.0, max_distance -> 1/(max_distance+1)."""
    return 1.0 - distance / (max_distance + 1)


def fuzzy_matches(
    graph: KnowledgeGraph, mention: str, max_distance: int = 3
) -> list[tuple[str, int]]:
    """(node id, distance) for every node within ``max_distance`` of ``mention``."""
    target = normalize_name(mention)
    out = []
    for node in graph.nodes():
        d = levenshtein(target, normalize_name(node.name), max_distance)
        if d <= max_distance:
            out.append((node.id, d))
    return out


def fuzzy_stage(
    graph: KnowledgeGraph, mentions: Sequence[EntityMention], max_distance: int = 3
) -> list[BundleItem]:
    matches: dict[str, int] = {}
    for mention in mentions:
        for node_id, d in fuzzy_matches(graph, mention.text, max_distance):
            if d < matches.get(node_id, max_distance + 1):
                matches[node_id] = d
    items: list[BundleItem] = []
    for node_id, d in sorted(matches.items(), key=lambda kv: (kv[1], kv[0])):
        items.extend(_edge_items(graph, node_id, "fuzzy", fuzzy_score(d, max_distance)))
    return _dedup(items)


# -- merge -----------------------------------------------------------------------


def _cap(items_by_stage: dict[str, list[BundleItem]], cap: int) -> dict[str, list[BundleItem]]:
    total = sum(len(v) for v in items_by_stage.values())
    if total <= cap:
        return items_by_stage
    exact = {s: cap * len(v) / total for s, v in items_by_stage.items()}
    quota = {s: int(x) for s, x in exact.items()}
    spare = cap - sum(quota.values())
    for s in sorted(exact, key=lambda s: (-(exact[s] - quota[s]), _PRIORITY[s]))[:spare]:
        quota[s] += 1
    out = {}
    for s, items in items_by_stage.items():
        ranked = sorted(range(len(items)), key=lambda i: (-items[i].score, i))[: quota[s]]
        out[s] = [items[i] for i in sorted(ranked)]
    return out


def merge_stages(stage_items: dict[str, Sequence[BundleItem]], max_bundle: int) -> list[BundleItem]:
    """Dedup across stages (earlier stage keeps the edge), then cap proportionally."""
    seen: set[tuple[str, str, str]] = set()
    by_stage: dict[str, list[BundleItem]] = {}
    for stage in STAGES:
        kept = []
        for item in stage_items.get(stage, ()):
            if item.edge.key not in seen:
                seen.add(item.edge.key)
                kept.append(item)
        by_stage[stage] = kept
    capped = _cap(by_stage, max_bundle)
    return [item for stage in STAGES for item in capped[stage]]


def embed_question(question: str, embedder: EmbeddingProvider) -> np.ndarray:
    try:
        vectors = embedder.embed([question])
        vec = np.asarray(vectors[0], dtype=np.float64)
    except KGQAError as exc:
        raise ProviderError(f"question embedding failed: {exc}", step="embed") from exc
    except (IndexError, TypeError, ValueError) as exc:
        raise ProviderError(f"question embedding failed: {exc}", step="embed") from exc
    return vec


def retrieve(
    graph: KnowledgeGraph,
    question: str,
    embedder: EmbeddingProvider,
    ner: NERProvider | None = None,
    config: RetrievalConfig | None = None,
) -> RetrievalBundle:
    config = config or RetrievalConfig()
    bundle = RetrievalBundle(question)
    if graph.node_count == 0:
        return bundle
    stage_items: dict[str, list[BundleItem]] = {}
    with graph.read():
        if config.mode == "full":
            qvec = embed_question(question, embedder)
            index = EmbeddingIndex(graph)
            stage_items["semantic"] = semantic_stage(graph, qvec, config.k, index)
            stage_items["type_general"] = type_stage(graph, qvec, index)
        mentions = extract_mentions(question, ner)
        stage_items["fuzzy"] = fuzzy_stage(graph, mentions, config.edit_distance_max)
    bundle.items = merge_stages(stage_items, config.max_bundle)
    return bundle
