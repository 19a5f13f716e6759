from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path

import pytest

from kgqa.graph import KnowledgeGraph, TypedEdge
from kgqa.ingestion import QAPair

FIXTURES = Path(__file__).parent / "fixtures"


def dp_levenshtein(a: str, b: str) -> int:
    """Reference edit distance: plain recursive definition, memoized."""

    @lru_cache(maxsize=None)
    def d(i: int, j: int) -> int:
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def make_graph(nodes, edges=()):
    """``nodes`` are (name, type) pairs; ``edges`` are (subject index, predicate, object index)."""
    graph = KnowledgeGraph()
    ids = [graph.add_entity(name, typ) for name, typ in nodes]
    for s, p, o in edges:
        graph.insert_edge(TypedEdge(ids[s], p, ids[o], provenance=f"qa-{s}-{o}"))
    return graph, ids


def load_gold():
    raw = json.loads((FIXTURES / "gold_corpus.json").read_text(encoding="utf-8"))
    pairs = [QAPair(r["qa_id"], r["question"], r["answer"], tags=tuple(r["tags"])) for r in raw]
    return pairs, [r["gold"] for r in raw]


@pytest.fixture
def gold():
    return load_gold()


def gold_fact(gold_triple) -> str:
    from kgqa.synthesis import render_predicate

    return f"{gold_triple['subject']} {render_predicate(gold_triple['predicate'])} {gold_triple['object']}."


def gold_pipeline(config=None):
    from kgqa.pipeline import Pipeline

    pairs, golds = load_gold()
    pipeline = Pipeline(KnowledgeGraph(), config=config)
    pipeline.build(pairs)
    pipeline.ensure_embedded()
    return pipeline, pairs, golds


@pytest.fixture
def gold_qa_file(tmp_path):
    pairs, _ = load_gold()
    path = tmp_path / "qa.json"
    path.write_text(json.dumps([p.to_dict() for p in pairs], indent=2), encoding="utf-8")
    return path


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
