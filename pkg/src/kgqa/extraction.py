"""Triple extraction from QA batches and application onto the graph."""

from __future__ import annotations

import logging
import re
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any

from .errors import KGQAError
from .graph import EntityNode, KnowledgeGraph, TypedEdge
from .ingestion import QAPair, first_capitalized_span, split_sentences
from .providers import ExtractionProvider

logger = logging.getLogger(__name__)

ADDITIONAL_INSTRUCTIONS = "Clauses and Numerical Values, etc count as nodes"
DEFAULT_BATCH_SIZE = 20


@dataclass(frozen=True)
class ExtractionBatch:
    batch_index: int
    pairs: tuple[QAPair, ...]
    rendered_prompt_context: str


@dataclass(frozen=True)
class ExtractedTriple:
    subject_name: str
    subject_type: str
    predicate: str
    object_name: str
    object_type: str
    source_qa: str


@dataclass
class ExtractionResult:
    triples: list[ExtractedTriple] = field(default_factory=list)
    dropped: int = 0


@dataclass
class ApplyReport:
    nodes_added: int = 0
    edges_added: int = 0
    duplicates_skipped: int = 0


@dataclass
class BuildReport:
    batches: int = 0
    failed_batches: list[int] = field(default_factory=list)
    errors: dict[int, str] = field(default_factory=dict)
    triples: int = 0
    triples_dropped: int = 0
    nodes_added: int = 0
    edges_added: int = 0
    duplicates_skipped: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "batches": self.batches,
            "failed_batches": list(self.failed_batches),
            "errors": {str(k): v for k, v in self.errors.items()},
            "triples": self.triples,
            "triples_dropped": self.triples_dropped,
            "nodes_added": self.nodes_added,
            "edges_added": self.edges_added,
            "duplicates_skipped": self.duplicates_skipped,
        }


def render_batch_context(pairs: Sequence[QAPair], instructions: str = ADDITIONAL_INSTRUCTIONS) -> str:
    lines = [instructions, ""]
    for p in pairs:
        lines.append(f"[{p.qa_id}] Q: {p.question}")
        lines.append(f"[{p.qa_id}] A: {p.answer}")
    return "\n".join(lines)


def make_batches(pairs: Sequence[QAPair], batch_size: int = DEFAULT_BATCH_SIZE) -> list[ExtractionBatch]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    batches = []
    for index, start in enumerate(range(0, len(pairs), batch_size)):
        chunk = tuple(pairs[start : start + batch_size])
        batches.append(ExtractionBatch(index, chunk, render_batch_context(chunk)))
    return batches


def normalize_predicate(predicate: str) -> str:
    """``"bears risk"`` -> ``"BEARS_RISK"``; camelCase is split too."""
    spaced = re.sub(r"(?<=[a-z0-9])(?=[A-Z])", "_", predicate.strip())
    return re.sub(r"[^0-9A-Za-z]+", "_", spaced).strip("_").upper()


def normalize_triple(raw: Mapping[str, Any], batch_ids: Sequence[str]) -> ExtractedTriple | None:
    """Validate one provider triple; ``None`` means drop it."""

    def text(key: str) -> str:
        value = raw.get(key)
        return re.sub(r"\s+", " ", value).strip() if isinstance(value, str) else ""

    subject, object_ = text("subject"), text("object")
    subject_type, object_type = text("subject_type"), text("object_type")
    predicate = normalize_predicate(text("predicate"))
    source = text("source_qa")
    if not source and len(batch_ids) == 1:
        source = batch_ids[0]
    if not all((subject, subject_type, predicate, object_, object_type, source)):
        return None
    if source not in batch_ids:
        return None
    return ExtractedTriple(subject, subject_type, predicate, object_, object_type, source)


def extract_triples(batch: ExtractionBatch, provider: ExtractionProvider) -> ExtractionResult:
    """Send one batch to ``provider``; provider errors propagate to the caller."""
    raw_triples = provider.extract(
        ADDITIONAL_INSTRUCTIONS,
        [{"question": p.question, "answer": p.answer, "qa_id": p.qa_id} for p in batch.pairs],
    )
    ids = [p.qa_id for p in batch.pairs]
    result = ExtractionResult()
    for raw in raw_triples:
        triple = normalize_triple(raw, ids) if isinstance(raw, Mapping) else None
        if triple is None:
            result.dropped += 1
        else:
            result.triples.append(triple)
    return result


def apply_triples(graph: KnowledgeGraph, triples: Iterable[ExtractedTriple]) -> ApplyReport:
    report = ApplyReport()
    with graph.write():
        for t in triples:
            before = graph.node_count
            s = graph.upsert_node(EntityNode(t.subject_name, t.subject_type))
            o = graph.upsert_node(EntityNode(t.object_name, t.object_type))
            report.nodes_added += graph.node_count - before
            if graph.insert_edge(TypedEdge(s, t.predicate, o, provenance=t.source_qa)):
                report.edges_added += 1
            else:
                report.duplicates_skipped += 1
    return report


def build_graph(
    graph: KnowledgeGraph,
    pairs: Sequence[QAPair],
    provider: ExtractionProvider,
    *,
    batch_size: int = DEFAULT_BATCH_SIZE,
    max_workers: int = 4,
) -> BuildReport:
    """Extract every batch (concurrently) and apply results in batch order.

    A failing batch is recorded and skipped; the rest of the corpus still lands.
    """
    batches = make_batches(pairs, batch_size)
    report = BuildReport(batches=len(batches))
    if not batches:
        return report

    def run(batch: ExtractionBatch):
        try:
            return extract_triples(batch, provider), None
        except KGQAError as exc:
            return None, str(exc)

    with ThreadPoolExecutor(max_workers=max(1, min(max_workers, len(batches)))) as pool:
        results = list(pool.map(run, batches))

    for batch, (result, error) in zip(batches, results):
        if error is not None:
            logger.warning("extraction batch %d failed: %s", batch.batch_index, error)
            report.failed_batches.append(batch.batch_index)
            report.errors[batch.batch_index] = error
            continue
        report.triples += len(result.triples)
        report.triples_dropped += result.dropped
        applied = apply_triples(graph, result.triples)
        report.nodes_added += applied.nodes_added
        report.edges_added += applied.edges_added
        report.duplicates_skipped += applied.duplicates_skipped
    return report


# -- offline pattern extractor ----------------------------------------------------

CLAUSE_RE = re.compile(r"\bclause\s+(\d+(?:\.\d+)*)\b", re.IGNORECASE)
_UNITS = (
    r"%|percent|per cent|days?|weeks?|months?|years?|hours?|minutes?|"
    r"km|kg|mm|cm|m|tonnes?|USD|EUR|GBP|dollars?|euros?|pounds?"
)
NUMBER_RE = re.compile(
    r"(?<![\w.])(?:[$€£]\s?\d[\d,]*(?:\.\d+)?|\d[\d,]*(?:\.\d+)?\s?(?:" + _UNITS + r"))(?![\w])"
)
_COPULA = re.compile(r"^(?P<x>.+?)\s+(?:is|are|was|were)\s+(?P<neg>not\s+)?(?P<y>.+)$")
_CLAUSE_PHRASE = re.compile(
    r"\s*,?\s*(?:\b(?:under|in|of|per|by|according to|pursuant to|as per)\s+)?\bclause\s+\d+(?:\.\d+)*\b",
    re.IGNORECASE,
)
_DETERMINER = re.compile(r"^(?:the|a|an|this|that|these|those)\s+", re.IGNORECASE)
_POSSESSIVE = re.compile(r"(?P<x>(?:[A-Z][\w-]*\s+)*[A-Z][\w-]*|[a-z][\w-]*)['’]s\s+(?P<rest>.+)")
_POSSESSED_STOP = frozenset(
    "a an the is are was were be been has have had shall will must may can under in of for to by "
    "with on at from and or not according per as that which".split()
)


def _clean_phrase(phrase: str) -> str:
    phrase = _CLAUSE_PHRASE.sub("", phrase)
    # "2,000" keeps its comma; a comma followed by a space ends the phrase
    phrase = re.split(r"[;:]|,\s", phrase, maxsplit=1)[0]
    phrase = phrase.strip(" .?!\"'")
    while True:
        stripped = _DETERMINER.sub("", phrase)
        if stripped == phrase:
            break
        phrase = stripped
    return phrase.strip()


def _subject_phrase(phrase: str) -> str:
    # "In 2020, the fee" -> "fee": the subject follows any introductory clause
    return _clean_phrase(re.split(r",\s", phrase)[-1])


def phrase_type(phrase: str) -> str:
    """Coarse node type for a phrase found by the pattern rules."""
    if re.fullmatch(r"clause\s+\d+(?:\.\d+)*", phrase, re.IGNORECASE):
        return "Clause"
    if NUMBER_RE.fullmatch(phrase):
        return "NumericalValue"
    words = [w for w in re.sub(r"['’]s\b", "", phrase).split() if w.lower() not in ("of", "and", "for", "the")]
    if words and all(w[0].isupper() or w[0].isdigit() for w in words):
        return "Entity"
    return "Concept"


def _clause_name(number: str) -> str:
    return f"Clause {number}"


class PatternExtractor:
    """Offline extraction provider driven by a handful of surface patterns.

    - ``X is Y`` in the answer gives (X, IS, Y), or IS_NOT when negated;
    - ``X's Y`` gives (X, HAS, Y);
    - ``Clause <n>`` in the question or answer gives a Clause node that the
      answer's subject MENTIONS;
    - numbers with units give NumericalValue nodes the subject HAS_VALUE.

    The answer's subject is the left side of its first copula, or failing
    that its first capitalized span.
    """

    def extract(self, instructions: str, pairs: Sequence[Mapping[str, str]]) -> list[dict[str, Any]]:
        out: list[dict[str, Any]] = []
        for pair in pairs:
            out.extend(self.triples_for(pair["question"], pair["answer"], pair["qa_id"]))
        return out

    def triples_for(self, question: str, answer: str, qa_id: str) -> list[dict[str, Any]]:
        found: list[tuple[str, str, str]] = []

        def add(subject: str, predicate: str, obj: str) -> None:
            if subject and obj and subject.casefold() != obj.casefold():
                triple = (subject, predicate, obj)
                if triple not in found:
                    found.append(triple)

        subject: str | None = None
        copula_objects: set[str] = set()
        for sentence in split_sentences(answer):
            body = sentence.rstrip(".!?")
            m = _COPULA.match(body)
            if m:
                x = _subject_phrase(m.group("x"))
                y = _clean_phrase(m.group("y"))
                if x and y:
                    add(x, "IS_NOT" if m.group("neg") else "IS", y)
                    copula_objects.add(y)
                    if subject is None:
                        subject = x
            for pm in _POSSESSIVE.finditer(_CLAUSE_PHRASE.sub("", body)):
                owner = _clean_phrase(pm.group("x"))
                owned = []
                for word in pm.group("rest").split():
                    bare = word.strip(",;:.?!\"'")
                    if bare.lower() in _POSSESSED_STOP or not bare or len(owned) == 3:
                        break
                    owned.append(bare)
                    if bare != word:
                        break
                if owned:
                    add(owner, "HAS", " ".join(owned))

        if subject is None:
            span = first_capitalized_span(_CLAUSE_PHRASE.sub("", answer))
            subject = span or None

        if subject is not None:
            for nm in NUMBER_RE.finditer(_CLAUSE_PHRASE.sub(" ", answer)):
                value = nm.group(0).strip()
                if value not in copula_objects:
                    add(subject, "HAS_VALUE", value)
            clauses: list[str] = []
            for text in (question, answer):
                for cm in CLAUSE_RE.finditer(text):
                    name = _clause_name(cm.group(1))
                    if name not in clauses:
                        clauses.append(name)
            for name in clauses:
                add(subject, "MENTIONS", name)

        return [
            {
                "subject": s,
                "subject_type": phrase_type(s),
                "predicate": p,
                "object": o,
                "object_type": phrase_type(o),
                "source_qa": qa_id,
            }
            for s, p, o in found
        ]
