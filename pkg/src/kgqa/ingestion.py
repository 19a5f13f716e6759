"""Document segmentation and QA-pair generation.

Segmentation works in three passes over the extracted document text:

1. split into paragraphs at blank lines (two or more newlines);
2. inside a paragraph, start a new fragment at every line that opens with a
   bullet marker or a clause identifier, and force-split anything longer
   than ``max_chars`` at the last sentence end that fits;
3. fold fragments shorter than ``min_chars`` into the preceding fragment of
   the same paragraph when the result still fits.

Paragraph breaks are never merged across. Chunk spans are trimmed of
surrounding whitespace, so the spans are disjoint and together contain every
non-whitespace character of the input.
"""

from __future__ import annotations

import json
import logging
import re
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import EmptyDocumentError, ParseError, KGQAError, ValidationError
from .providers import QAGenProvider

logger = logging.getLogger(__name__)

CUES = ("paragraph_break", "bullet", "clause_id", "length_limit")

DEFAULT_CLAUSE_PATTERNS = (
    r"Clause\s+\d+(?:\.\d+)*\b",
    r"\d+\.\d+(?:\.\d+)*\b",
)
BULLET_PATTERN = r"(?:[-*•]|\d+\.)(?=\s)"

_PARAGRAPH_BREAK = re.compile(r"\n[ \t\r\f\v]*\n\s*")
_SENTENCE_END = re.compile(r"[.!?][\"')\]]*(?=\s)")


@dataclass(frozen=True)
class SegmentationPolicy:
    max_chars: int = 1200
    min_chars: int = 80
    clause_patterns: tuple[str, ...] = DEFAULT_CLAUSE_PATTERNS

    def __post_init__(self) -> None:
        if self.max_chars < 1:
            raise ValidationError("max_chars must be positive")
        if self.min_chars < 0 or self.min_chars > self.max_chars:
            raise ValidationError("min_chars must lie in [0, max_chars]")


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    text: str
    source_span: tuple[int, int]
    cue: str


@dataclass(frozen=True)
class QAPair:
    qa_id: str
    question: str
    answer: str
    source_chunk: str | None = None
    tags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not str(self.qa_id).strip():
            raise ValidationError("qa_id must be non-empty")
        if not self.question.strip():
            raise ValidationError(f"QA {self.qa_id!r}: question must be non-empty")
        if not self.answer.strip():
            raise ValidationError(f"QA {self.qa_id!r}: answer must be non-empty")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"qa_id": self.qa_id, "question": self.question, "answer": self.answer}
        if self.source_chunk is not None:
            out["source_chunk"] = self.source_chunk
        if self.tags:
            out["tags"] = list(self.tags)
        return out


# -- segmentation ----------------------------------------------------------------


def _trim(text: str, start: int, end: int) -> tuple[int, int]:
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return start, end


def _line_cue(text: str, pos: int, clause_re: re.Pattern, bullet_re: re.Pattern) -> str | None:
    """Classify the line starting at ``pos`` (leading blanks allowed)."""
    if clause_re.match(text, pos):
        return "clause_id"
    if bullet_re.match(text, pos):
        return "bullet"
    return None


def _force_split(text: str, start: int, end: int, max_chars: int) -> list[tuple[int, int]]:
    pieces = []
    start, end = _trim(text, start, end)
    while end - start > max_chars:
        limit = start + max_chars
        cut = None
        for m in _SENTENCE_END.finditer(text, start, limit + 1):
            if m.end() <= limit:
                cut = m.end()
        if cut is None:
            ws = text.rfind(" ", start, limit + 1)
            cut = ws if ws > start else limit
        pieces.append(_trim(text, start, cut))
        start, end = _trim(text, cut, end)
    if end > start:
        pieces.append((start, end))
    return [p for p in pieces if p[1] > p[0]]


def segment(document_text: str, policy: SegmentationPolicy | None = None) -> list[Chunk]:
    policy = policy or SegmentationPolicy()
    if not document_text or not document_text.strip():
        raise EmptyDocumentError("document is empty or whitespace-only")
    text = document_text
    clause_re = re.compile(r"[ \t]*(?:" + "|".join(policy.clause_patterns) + ")")
    bullet_re = re.compile(r"[ \t]*" + BULLET_PATTERN)

    paragraphs: list[tuple[int, int]] = []
    pos = 0
    for m in _PARAGRAPH_BREAK.finditer(text):
        paragraphs.append((pos, m.start()))
        pos = m.end()
    paragraphs.append((pos, len(text)))

    spans: list[tuple[int, int, str]] = []
    for p_start, p_end in paragraphs:
        p_start, p_end = _trim(text, p_start, p_end)
        if p_end <= p_start:
            continue
        # a line start inside the paragraph is the position right after "\n"
        line_starts = [p_start] + [
            i + 1 for i in range(p_start, p_end) if text[i] == "\n" and i + 1 < p_end
        ]
        fragments: list[tuple[int, int, str]] = []
        for ls in line_starts:
            cue = _line_cue(text, ls, clause_re, bullet_re)
            if ls == p_start:
                fragments.append((ls, p_end, cue or "paragraph_break"))
            elif cue is not None:
                prev_start, _, prev_cue = fragments[-1]
                fragments[-1] = (prev_start, ls, prev_cue)
                fragments.append((ls, p_end, cue))

        pieces: list[tuple[int, int, str]] = []
        for f_start, f_end, cue in fragments:
            for j, (s, e) in enumerate(_force_split(text, f_start, f_end, policy.max_chars)):
                pieces.append((s, e, cue if j == 0 else "length_limit"))

        merged: list[tuple[int, int, str]] = []
        for s, e, cue in pieces:
            if merged and e - s < policy.min_chars and e - merged[-1][0] <= policy.max_chars:
                ms, _, mcue = merged[-1]
                merged[-1] = (ms, e, mcue)
            else:
                merged.append((s, e, cue))
        spans.extend(merged)

    return [
        Chunk(chunk_id=f"c{i:04d}", text=text[s:e], source_span=(s, e), cue=cue)
        for i, (s, e, cue) in enumerate(spans)
    ]


# -- QA generation -----------------------------------------------------------------

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+|(?<=[.!?][\"')\]])\s+")
_CAP_WORD = re.compile(r"[A-Z][\w'’&-]*")
_LEADING_STOPWORDS = frozenset(
    "a an the this that these those it its in on at of for under by with from to as if when "
    "where which what who whom whose why how each every any all some no not there here such "
    "upon after before during".split()
)


def split_sentences(text: str) -> list[str]:
    flat = re.sub(r"\s+", " ", text).strip()
    if not flat:
        return []
    return [s.strip() for s in _SENTENCE_SPLIT.split(flat) if s.strip()]


def first_capitalized_span(sentence: str) -> str | None:
    """First maximal run of capitalized words, skipping capitalized stopwords."""
    tokens = sentence.split()
    for i, token in enumerate(tokens):
        word = token.strip(",;:()\".?!")
        if not _CAP_WORD.fullmatch(word) or word.lower() in _LEADING_STOPWORDS:
            continue
        run = [word]
        # punctuation attached to a word ends the run
        j = i
        while word == tokens[j].strip("()\"") and j + 1 < len(tokens):
            j += 1
            word = tokens[j].strip(",;:()\".?!")
            if not _CAP_WORD.fullmatch(word) or word.lower() in _LEADING_STOPWORDS:
                break
            run.append(word)
        return re.sub(r"['’]s$", "", " ".join(run))
    return None


class SentenceQAGenerator:
    """Offline QA generator: one cloze-style pair per declarative sentence."""

    min_words = 3

    def generate(self, text: str) -> list[dict[str, Any]]:
        pairs = []
        for sentence in split_sentences(text):
            if sentence.endswith(("?", "!")) or len(sentence.split()) < self.min_words:
                continue
            topic = first_capitalized_span(sentence)
            if topic is None:
                words = [w.strip(",;:.") for w in sentence.split()]
                topic = next((w for w in words if w.lower() not in _LEADING_STOPWORDS), words[0])
            pairs.append(
                {"question": f"What does the document state about {topic}?", "answer": sentence}
            )
        return pairs


@dataclass
class QAGenerationReport:
    pairs: list[QAPair] = field(default_factory=list)
    dropped: int = 0
    errors: dict[str, str] = field(default_factory=dict)


def generate_qa(
    chunks: Sequence[Chunk], provider: QAGenProvider, *, max_workers: int = 4
) -> QAGenerationReport:
    """Generate QA pairs per chunk; results keep chunk order whatever the completion order."""
    report = QAGenerationReport()
    if not chunks:
        return report

    def run(chunk: Chunk):
        try:
            return provider.generate(chunk.text), None
        except KGQAError as exc:
            return None, str(exc)

    workers = max(1, min(max_workers, len(chunks)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(run, chunks))

    for chunk, (raw_pairs, error) in zip(chunks, results):
        if error is not None:
            logger.warning("QA generation failed for %s: %s", chunk.chunk_id, error)
            report.errors[chunk.chunk_id] = error
            continue
        n = 0
        for raw in raw_pairs:
            question = str(raw.get("question") or "").strip()
            answer = str(raw.get("answer") or "").strip()
            if not question or not answer:
                report.dropped += 1
                continue
            report.pairs.append(
                QAPair(f"{chunk.chunk_id}-q{n:02d}", question, answer, source_chunk=chunk.chunk_id)
            )
            n += 1
    return report


# -- QA files --------------------------------------------------------------------


def _pair_from_obj(obj: Any, index: int) -> QAPair:
    if not isinstance(obj, dict):
        raise ValidationError(f"QA record {index} is not an object")
    for key in ("qa_id", "question", "answer"):
        if not isinstance(obj.get(key), str):
            raise ValidationError(f"QA record {index} is missing string field {key!r}")
    tags = obj.get("tags") or ()
    if not isinstance(tags, (list, tuple)) or not all(isinstance(t, str) for t in tags):
        raise ValidationError(f"QA record {index}: tags must be a list of strings")
    source = obj.get("source_chunk")
    if source is not None and not isinstance(source, str):
        raise ValidationError(f"QA record {index}: source_chunk must be a string")
    return QAPair(obj["qa_id"], obj["question"], obj["answer"], source, tuple(tags))


def parse_qa_records(records: Any) -> list[QAPair]:
    if not isinstance(records, list):
        raise ValidationError("QA file must contain a JSON array")
    pairs = [_pair_from_obj(obj, i) for i, obj in enumerate(records)]
    seen: set[str] = set()
    dupes: list[str] = []
    for p in pairs:
        if p.qa_id in seen and p.qa_id not in dupes:
            dupes.append(p.qa_id)
        seen.add(p.qa_id)
    if dupes:
        raise ValidationError(f"duplicate qa_id values: {', '.join(dupes)}")
    return pairs


def loads_qa_dataset(text: str) -> list[QAPair]:
    try:
        records = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid QA JSON: {exc.msg}", exc.lineno, exc.colno) from None
    return parse_qa_records(records)


def load_qa_dataset(source: str | Path) -> list[QAPair]:
    return loads_qa_dataset(Path(source).read_text(encoding="utf-8"))


def dumps_qa_dataset(pairs: Sequence[QAPair]) -> str:
    return json.dumps([p.to_dict() for p in pairs], ensure_ascii=False, indent=2) + "\n"


def save_qa_dataset(pairs: Sequence[QAPair], destination: str | Path) -> None:
    Path(destination).write_text(dumps_qa_dataset(pairs), encoding="utf-8")
