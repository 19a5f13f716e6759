"""Answer synthesis: verbalize retrieved edges, paraphrase, rerank, keep the top five."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .embedding import HashingEmbedder, cosine
from .errors import KGQAError, UndefinedSimilarityError
from .graph import KnowledgeGraph, TypedEdge
from .providers import EmbeddingProvider, NERProvider, ParaphraseProvider, RerankProvider
from .retrieval import RetrievalBundle, RetrievalConfig, retrieve

logger = logging.getLogger(__name__)

PLACEMENTS = ("after_paraphrase", "before_paraphrase")


@dataclass(frozen=True)
class Statement:
    text: str
    edges: tuple[TypedEdge, ...]


@dataclass(frozen=True)
class AnswerCandidate:
    text: str
    source_edges: tuple[TypedEdge, ...]
    rerank_score: float
    rank: int
    paraphrase_score: float | None = None


@dataclass
class AnswerSet:
    question: str
    answers: list[AnswerCandidate] = field(default_factory=list)
    bundle: RetrievalBundle | None = None

    @property
    def is_empty(self) -> bool:
        return not self.answers

    def texts(self) -> list[str]:
        return [a.text for a in self.answers]


@dataclass
class SynthesisConfig:
    group_size: int = 8
    rerank_placement: str = "after_paraphrase"
    top_n: int = 5
    max_workers: int = 4

    def __post_init__(self) -> None:
        if self.group_size < 1 or self.top_n < 1:
            raise ValueError("group_size and top_n must be positive")
        if self.rerank_placement not in PLACEMENTS:
            raise ValueError(f"rerank_placement must be one of {PLACEMENTS}")


def render_predicate(predicate: str) -> str:
    return " ".join(part for part in predicate.lower().split("_") if part)


def render_edge(graph: KnowledgeGraph, edge: TypedEdge) -> str:
    subject = graph.get_node(edge.subject_id).name
    obj = graph.get_node(edge.object_id).name
    return f"{subject} {render_predicate(edge.predicate)} {obj}."


def verbalize(bundle: RetrievalBundle, graph: KnowledgeGraph, group_size: int = 8) -> list[Statement]:
    """One statement per matched node, at most ``group_size`` edges each.

    Groups follow the order in which their node first appears in the bundle,
    and edges keep bundle order inside a group.
    """
    groups: dict[str, list[TypedEdge]] = {}
    for item in bundle.items:
        groups.setdefault(item.matched_node, []).append(item.edge)
    statements = []
    for edges in groups.values():
        for start in range(0, len(edges), group_size):
            part = tuple(edges[start : start + group_size])
            statements.append(Statement(" ".join(render_edge(graph, e) for e in part), part))
    return statements


class IdentityParaphraser:
    def paraphrase(self, texts: Sequence[str]) -> list[str]:
        return list(texts)


def paraphrase(
    statements: Sequence[str], provider: ParaphraseProvider, max_workers: int = 4
) -> list[str]:
    """One output per statement; a failed call keeps the raw statement."""
    if not statements:
        return []

    def one(text: str) -> str:
        try:
            out = provider.paraphrase([text])
            if len(out) != 1 or not isinstance(out[0], str) or not out[0].strip():
                raise KGQAError("paraphraser returned no usable text")
            return out[0]
        except KGQAError as exc:
            logger.warning("paraphrase failed, keeping raw statement: %s", exc)
            return text

    with ThreadPoolExecutor(max_workers=max(1, min(max_workers, len(statements)))) as pool:
        return list(pool.map(one, statements))


class CosineReranker:
    """Offline reranker: cosine between fallback embeddings of query and candidate."""

    def __init__(self, embedder: EmbeddingProvider | None = None) -> None:
        self.embedder = embedder or HashingEmbedder()

    def score(self, query: str, candidates: Sequence[str]) -> list[float]:
        if not candidates:
            return []
        vectors = self.embedder.embed([query, *candidates])
        q = vectors[0]
        scores = []
        for v in vectors[1:]:
            try:
                scores.append(cosine(q, v))
            except UndefinedSimilarityError:
                scores.append(0.0)
        return scores


def rerank_scores(
    question: str, candidates: Sequence[str], provider: RerankProvider, fallback: RerankProvider | None = None
) -> list[float]:
    if not candidates:
        return []
    try:
        scores = provider.score(question, candidates)
        if len(scores) != len(candidates):
            raise KGQAError(f"reranker returned {len(scores)} scores for {len(candidates)} candidates")
        return [float(s) for s in scores]
    except KGQAError as exc:
        logger.warning("reranker failed, using cosine fallback: %s", exc)
        return (fallback or CosineReranker()).score(question, candidates)


def ranking(texts: Sequence[str], scores: Sequence[float]) -> list[int]:
    """Indices by descending score, then ascending text, then input order."""
    return sorted(range(len(texts)), key=lambda i: (-scores[i], texts[i], i))


def rerank(
    question: str, candidates: Sequence[str], provider: RerankProvider
) -> list[tuple[int, str, float]]:
    """(input index, text, score) in rank order."""
    scores = rerank_scores(question, candidates, provider)
    return [(i, candidates[i], scores[i]) for i in ranking(candidates, scores)]


@dataclass
class SynthesisProviders:
    embedder: EmbeddingProvider
    ner: NERProvider | None = None
    paraphraser: ParaphraseProvider = field(default_factory=IdentityParaphraser)
    reranker: RerankProvider = field(default_factory=CosineReranker)


def synthesize(
    question: str,
    graph: KnowledgeGraph,
    bundle: RetrievalBundle,
    providers: SynthesisProviders,
    config: SynthesisConfig | None = None,
) -> AnswerSet:
    config = config or SynthesisConfig()
    statements = verbalize(bundle, graph, config.group_size)
    result = AnswerSet(question, bundle=bundle)
    if not statements:
        return result
    raw = [s.text for s in statements]

    if config.rerank_placement == "after_paraphrase":
        texts = paraphrase(raw, providers.paraphraser, config.max_workers)
        scores = rerank_scores(question, texts, providers.reranker)
        order = ranking(texts, scores)[: config.top_n]
        chosen = [(i, texts[i]) for i in order]
    else:
        scores = rerank_scores(question, raw, providers.reranker)
        order = ranking(raw, scores)[: config.top_n]
        texts = paraphrase([raw[i] for i in order], providers.paraphraser, config.max_workers)
        chosen = list(zip(order, texts))
        # final order still follows the scores; ties fall back to the output text
        chosen.sort(key=lambda it: (-scores[it[0]], it[1], it[0]))

    result.answers = [
        AnswerCandidate(text, statements[i].edges, float(scores[i]), rank)
        for rank, (i, text) in enumerate(chosen, start=1)
    ]
    return result


def answer(
    question: str,
    graph: KnowledgeGraph,
    providers: SynthesisProviders,
    retrieval_config: RetrievalConfig | None = None,
    config: SynthesisConfig | None = None,
) -> AnswerSet:
    bundle = retrieve(graph, question, providers.embedder, providers.ner, retrieval_config)
    return synthesize(question, graph, bundle, providers, config)
