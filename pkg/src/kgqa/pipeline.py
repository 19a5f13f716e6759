"""Wires configured providers to the graph: document -> QA -> graph -> answers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .config import PipelineConfig, ProviderSpec
from .embedding import HashingEmbedder, embed_all
from .evaluation import RulePerturber, SubstringJudge
from .extraction import BuildReport, PatternExtractor, build_graph
from .graph import KnowledgeGraph
from .ingestion import QAPair, SentenceQAGenerator
from .providers import (
    EmbeddingProvider,
    ExtractionProvider,
    HttpProvider,
    JudgeProvider,
    NERProvider,
    ParaphraseProvider,
    PerturbProvider,
    QAGenProvider,
    RerankProvider,
)
from .retrieval import RetrievalConfig
from .synthesis import AnswerSet, CosineReranker, IdentityParaphraser, SynthesisConfig, SynthesisProviders, answer


@dataclass
class Providers:
    embedder: EmbeddingProvider
    extractor: ExtractionProvider
    ner: NERProvider | None
    paraphraser: ParaphraseProvider
    reranker: RerankProvider
    judge: JudgeProvider
    perturber: PerturbProvider
    qa_gen: QAGenProvider

    def synthesis(self) -> SynthesisProviders:
        return SynthesisProviders(self.embedder, self.ner, self.paraphraser, self.reranker)


def _http(spec: ProviderSpec, role: str) -> HttpProvider:
    return HttpProvider(spec.endpoint, timeout=spec.timeout, retries=spec.retries, name=f"{role}@{spec.endpoint}")


def build_providers(config: PipelineConfig) -> Providers:
    p = config.providers

    def pick(role: str, fallback: Any) -> Any:
        return fallback if p[role].is_fallback else _http(p[role], role)

    embedder = pick("embed", HashingEmbedder())
    return Providers(
        embedder=embedder,
        extractor=pick("extract", PatternExtractor()),
        ner=pick("ner", None),
        paraphraser=pick("paraphrase", IdentityParaphraser()),
        reranker=pick("rerank", CosineReranker(HashingEmbedder())),
        judge=pick("judge", SubstringJudge()),
        perturber=pick("perturb", RulePerturber()),
        qa_gen=pick("qa_gen", SentenceQAGenerator()),
    )


def retrieval_config(config: PipelineConfig) -> RetrievalConfig:
    r = config.retrieval
    return RetrievalConfig(k=r.k, edit_distance_max=r.edit_distance_max, max_bundle=r.max_bundle, mode=r.mode)


def synthesis_config(config: PipelineConfig) -> SynthesisConfig:
    s = config.synthesis
    return SynthesisConfig(group_size=s.group_size, rerank_placement=s.rerank_placement, top_n=s.top_n)


class Pipeline:
    """Question answering over one graph with one provider set."""

    def __init__(
        self,
        graph: KnowledgeGraph,
        providers: Providers | None = None,
        config: PipelineConfig | None = None,
    ) -> None:
        self.config = config or PipelineConfig()
        self.providers = providers or build_providers(self.config)
        self.graph = graph
        self._retrieval = retrieval_config(self.config)
        self._synthesis = synthesis_config(self.config)

    def ensure_embedded(self) -> int:
        if self.graph.is_fully_embedded():
            return 0
        return embed_all(self.graph, self.providers.embedder)

    def build(self, pairs: list[QAPair]) -> BuildReport:
        return build_graph(
            self.graph, pairs, self.providers.extractor, batch_size=self.config.extraction.batch_size
        )

    def answer(self, question: str) -> AnswerSet:
        return answer(question, self.graph, self.providers.synthesis(), self._retrieval, self._synthesis)


def answers_payload(graph: KnowledgeGraph, result: AnswerSet) -> list[dict[str, Any]]:
    """JSON-ready answers with their source triples spelled out."""
    out = []
    for cand in result.answers:
        sources = []
        for edge in cand.source_edges:
            sources.append(
                {
                    "subject": graph.get_node(edge.subject_id).name,
                    "predicate": edge.predicate,
                    "object": graph.get_node(edge.object_id).name,
                    "qa_id": edge.provenance,
                    "subject_id": edge.subject_id,
                    "object_id": edge.object_id,
                }
            )
        out.append({"text": cand.text, "rank": cand.rank, "score": cand.rerank_score, "sources": sources})
    return out
