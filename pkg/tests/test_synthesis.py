import time

import pytest

from kgqa.config import PipelineConfig
from kgqa.embedding import HashingEmbedder, cosine
from kgqa.errors import ProviderError
from kgqa.graph import KnowledgeGraph
from kgqa.retrieval import BundleItem, RetrievalBundle
from kgqa.synthesis import (
    CosineReranker,
    IdentityParaphraser,
    SynthesisConfig,
    SynthesisProviders,
    paraphrase,
    rerank,
    synthesize,
    verbalize,
)

from conftest import gold_fact, gold_pipeline, make_graph


def bundle_for(graph, edges_by_node):
    items = [BundleItem(e, "semantic", 0.5, node) for node, edges in edges_by_node for e in edges]
    return RetrievalBundle("q", items)


class TestVerbalize:
    def test_single_edge_template(self):
        g, (a, b) = make_graph([("Employer", "Party"), ("Weather Delay", "Risk")], [(0, "BEARS_RISK", 1)])
        [statement] = verbalize(bundle_for(g, [(a, g.edges())]), g)
        assert statement.text == "Employer bears risk Weather Delay."

    def test_empty(self):
        assert verbalize(RetrievalBundle("q"), KnowledgeGraph()) == []

    def test_three_edges_one_group(self):
        g, ids = make_graph([("Hub", "T"), ("A", "T"), ("B", "T"), ("C", "T")], [(0, "R", 1), (0, "S", 2), (3, "T", 0)])
        edges = g.neighborhood(ids[0])
        [statement] = verbalize(bundle_for(g, [(ids[0], edges)]), g, group_size=8)
        expected = " ".join(
            f"{g.get_node(e.subject_id).name} {e.predicate.lower()} {g.get_node(e.object_id).name}." for e in edges
        )
        assert statement.text == expected
        assert statement.edges == tuple(edges)

    def test_group_size_splits(self):
        nodes = [("Hub", "T")] + [(f"n{i}", "T") for i in range(5)]
        g, ids = make_graph(nodes, [(0, "R", i) for i in range(1, 6)])
        statements = verbalize(bundle_for(g, [(ids[0], g.neighborhood(ids[0]))]), g, group_size=2)
        assert [len(s.edges) for s in statements] == [2, 2, 1]


class FlakyParaphraser:
    def paraphrase(self, texts):
        if texts == ["two"]:
            raise ProviderError("timeout", step="paraphrase")
        time.sleep(0.01 * len(texts[0]))
        return [t.upper() for t in texts]


class TestParaphrase:
    def test_identity(self):
        assert paraphrase(["a.", "b."], IdentityParaphraser()) == ["a.", "b."]

    def test_failure_keeps_raw(self):
        assert paraphrase(["one", "two", "three"], FlakyParaphraser()) == ["ONE", "two", "THREE"]

    def test_empty(self):
        assert paraphrase([], FlakyParaphraser()) == []


class TestRerank:
    def test_single(self):
        assert [i for i, _, _ in rerank("q", ["only"], CosineReranker())] == [0]

    def test_identical_candidates_keep_input_order(self):
        ranked = rerank("Who pays?", ["same text", "same text"], CosineReranker())
        assert [i for i, _, _ in ranked] == [0, 1]
        assert ranked[0][2] == ranked[1][2]

    def test_matches_brute_force_cosine(self):
        e = HashingEmbedder()
        q = "Who bears the weather risk?"
        cands = ["Employer bears weather risk.", "Fee is 500 EUR.", "Contractor is a party.", "Weather is a risk."]
        oracle = sorted(range(4), key=lambda i: (-cosine(e.vector(q), e.vector(cands[i])), cands[i]))
        assert [i for i, _, _ in rerank(q, cands, CosineReranker())] == oracle

    def test_provider_failure_falls_back(self):
        class Down:
            def score(self, query, candidates):
                raise ProviderError("500", step="rerank")

        assert [s for _, _, s in rerank("q a", ["q a", "zz"], Down())] == [
            s for _, _, s in rerank("q a", ["q a", "zz"], CosineReranker())
        ]


class TestAnswer:
    def _three(self):
        g, ids = make_graph(
            [("A", "T"), ("B", "T"), ("C", "T"), ("D", "T")], [(0, "R", 1), (2, "R", 3), (1, "S", 2)]
        )
        bundle = RetrievalBundle(
            "A?",
            [BundleItem(e, "fuzzy", 1.0, e.subject_id) for e in g.edges()],
        )
        return g, bundle

    def test_three_candidates(self):
        g, bundle = self._three()
        result = synthesize("A?", g, bundle, SynthesisProviders(HashingEmbedder()))
        assert [a.rank for a in result.answers] == [1, 2, 3]
        scores = [a.rerank_score for a in result.answers]
        assert scores == sorted(scores, reverse=True)

    def test_empty_bundle(self):
        result = synthesize("Q?", KnowledgeGraph(), RetrievalBundle("Q?"), SynthesisProviders(HashingEmbedder()))
        assert result.is_empty and result.answers == []

    def test_concurrent_paraphrase_order(self):
        g, bundle = self._three()
        providers = SynthesisProviders(HashingEmbedder(), paraphraser=FlakyParaphraser())
        result = synthesize("A?", g, bundle, providers, SynthesisConfig(max_workers=3))
        texts = {a.text for a in result.answers}
        assert all(t.isupper() for t in texts)

    @pytest.mark.parametrize("placement", ["after_paraphrase", "before_paraphrase"])
    def test_gold_recall_and_traceability(self, placement):
        config = PipelineConfig()
        config.synthesis.rerank_placement = placement
        pipeline, pairs, golds = gold_pipeline(config)
        hits = 0
        for pair, gold in zip(pairs, golds):
            result = pipeline.answer(pair.question)
            assert 1 <= len(result.answers) <= 5
            assert [a.rank for a in result.answers] == list(range(1, len(result.answers) + 1))
            for a in result.answers:
                assert a.source_edges and all(pipeline.graph.has_edge(e) for e in a.source_edges)
            hits += any(gold_fact(gold) in t for t in result.texts())
        assert hits / len(pairs) >= 0.95

    def test_placements_agree_with_identity_paraphrase(self):
        after, pairs, _ = gold_pipeline()
        config = PipelineConfig()
        config.synthesis.rerank_placement = "before_paraphrase"
        before, _, _ = gold_pipeline(config)
        for pair in pairs:
            a = [(x.text, x.rank, x.rerank_score) for x in after.answer(pair.question).answers]
            b = [(x.text, x.rank, x.rerank_score) for x in before.answer(pair.question).answers]
            assert a == b

    def test_pure_function(self):
        p1, pairs, _ = gold_pipeline()
        p2, _, _ = gold_pipeline()
        for pair in pairs[:10]:
            assert p1.answer(pair.question).answers == p2.answer(pair.question).answers
