"""LLM-as-judge evaluation, invalid-question filtering and perturbation rounds."""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Protocol

from .errors import KGQAError
from .ingestion import QAPair
from .providers import JudgeProvider, PerturbProvider

logger = logging.getLogger(__name__)

JUDGE_TEMPLATE_VERSION = "v1"
INVALID_ANSWER = "invalid question"
VERDICTS = ("yes", "no", "unparseable")


def judge_template(version: str = JUDGE_TEMPLATE_VERSION) -> str:
    return resources.files("kgqa").joinpath(f"resources/judge_prompt_{version}.txt").read_text(encoding="utf-8")


def render_judge_prompt(question: str, expected: str, predicted: str) -> str:
    # str.format substitutes in one pass, so slot contents are never re-expanded
    return judge_template().format(question=question, expected=expected, predicted=predicted)


def parse_verdict(raw: str) -> str:
    m = re.match(r"[\W_]*([A-Za-z]+)", raw.strip())
    if m:
        token = m.group(1).lower()
        if token in ("yes", "no"):
            return token
    return "unparseable"


def filter_valid(pairs: Sequence[QAPair]) -> tuple[list[QAPair], int]:
    valid = [p for p in pairs if p.answer.strip().casefold() != INVALID_ANSWER]
    return valid, len(pairs) - len(valid)


# -- judges ------------------------------------------------------------------------


def _slot_regex() -> re.Pattern:
    template = judge_template()
    parts = re.split(r"\{(question|expected|predicted)\}", template)
    pattern = ""
    for i, part in enumerate(parts):
        pattern += re.escape(part) if i % 2 == 0 else f"(?P<{part}>.*?)"
    return re.compile(pattern + r"\Z", re.DOTALL)


class SubstringJudge:
    """Offline judge: "Yes" iff the expected answer occurs verbatim in the predicted slot."""

    name = "stub-substring"

    def __init__(self) -> None:
        self._slots = _slot_regex()

    def judge(self, prompt: str) -> str:
        m = self._slots.match(prompt)
        if m is None:
            return "Unable to read prompt"
        return "Yes" if m.group("expected") in m.group("predicted") else "No"


class JudgeCache:
    """Append-only JSONL store of judge responses keyed by judge name and prompt hash."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[tuple[str, str], str] = {}
        if self.path.exists():
            for lineno, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    self._entries[(rec["judge"], rec["prompt_sha256"])] = rec["response"]
                except (json.JSONDecodeError, KeyError, TypeError):
                    logger.warning("skipping malformed judge cache line %d in %s", lineno, self.path)

    @staticmethod
    def key(prompt: str) -> str:
        return hashlib.sha256(prompt.encode("utf-8")).hexdigest()

    def get(self, judge: str, prompt: str) -> str | None:
        return self._entries.get((judge, self.key(prompt)))

    def put(self, judge: str, prompt: str, response: str) -> None:
        k = self.key(prompt)
        with self._lock:
            if (judge, k) in self._entries:
                return
            self._entries[(judge, k)] = response
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"judge": judge, "prompt_sha256": k, "response": response}, ensure_ascii=False) + "\n")

    def __len__(self) -> int:
        return len(self._entries)


class CachedJudge:
    def __init__(self, inner: JudgeProvider, cache: JudgeCache) -> None:
        self.inner = inner
        self.cache = cache
        self.name = inner.name

    def judge(self, prompt: str) -> str:
        hit = self.cache.get(self.name, prompt)
        if hit is not None:
            return hit
        response = self.inner.judge(prompt)
        self.cache.put(self.name, prompt, response)
        return response


# -- reports -----------------------------------------------------------------------


@dataclass(frozen=True)
class JudgeVerdict:
    qa_id: str
    verdict: str
    raw_response: str
    judge_name: str


@dataclass
class EvalRow:
    qa_id: str
    question: str
    expected: str
    predicted: str
    verdict: str
    raw_response: str
    error: str | None = None


@dataclass
class EvalReport:
    judge_name: str
    total_questions: int
    invalid_questions: int
    excluded_questions: int
    valid_questions: int
    correct: int
    incorrect: int
    unparseable_count: int
    accuracy: float | None
    rows: list[EvalRow] = field(default_factory=list)
    error: str | None = None

    def verdicts(self) -> list[JudgeVerdict]:
        return [JudgeVerdict(r.qa_id, r.verdict, r.raw_response, self.judge_name) for r in self.rows]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class AnswerPipeline(Protocol):
    def answer(self, question: str) -> Any: ...


def _predicted_text(result: Any) -> str:
    texts = result.texts() if hasattr(result, "texts") else list(result)
    return "\n".join(texts[:5])


def evaluate(
    dataset: Sequence[QAPair],
    pipeline: AnswerPipeline,
    judge: JudgeProvider,
    *,
    max_workers: int = 4,
) -> EvalReport:
    """Answer every valid question, ask the judge once per question, tally."""
    valid, invalid = filter_valid(dataset)
    judge_name = getattr(judge, "name", type(judge).__name__)

    def run(pair: QAPair) -> EvalRow:
        try:
            predicted = _predicted_text(pipeline.answer(pair.question))
        except KGQAError as exc:
            logger.warning("pipeline failed on %s: %s", pair.qa_id, exc)
            return EvalRow(pair.qa_id, pair.question, pair.answer, "", "excluded", "", f"pipeline: {exc}")
        prompt = render_judge_prompt(pair.question, pair.answer, predicted)
        try:
            raw = judge.judge(prompt)
        except KGQAError as exc:
            logger.warning("judge failed on %s: %s", pair.qa_id, exc)
            return EvalRow(pair.qa_id, pair.question, pair.answer, predicted, "unparseable", "", f"judge: {exc}")
        return EvalRow(pair.qa_id, pair.question, pair.answer, predicted, parse_verdict(raw), raw)

    if valid:
        with ThreadPoolExecutor(max_workers=max(1, min(max_workers, len(valid)))) as pool:
            rows = list(pool.map(run, valid))
    else:
        rows = []

    excluded = sum(r.verdict == "excluded" for r in rows)
    scored = [r for r in rows if r.verdict != "excluded"]
    correct = sum(r.verdict == "yes" for r in scored)
    incorrect = sum(r.verdict == "no" for r in scored)
    unparseable = sum(r.verdict == "unparseable" for r in scored)
    n_valid = len(scored)
    report = EvalReport(
        judge_name=judge_name,
        total_questions=len(dataset),
        invalid_questions=invalid,
        excluded_questions=excluded,
        valid_questions=n_valid,
        correct=correct,
        incorrect=incorrect,
        unparseable_count=unparseable,
        accuracy=correct / n_valid if n_valid else None,
        rows=rows,
    )
    if not n_valid:
        report.error = "no valid questions to score; accuracy is undefined"
    return report


def format_accuracy(report: EvalReport) -> str:
    return "n/a" if report.accuracy is None else f"{100 * report.accuracy:.1f}%"


def render_accuracy_table(rows: Sequence[tuple[str, Sequence[EvalReport]]]) -> str:
    """Text table: one row per question set, one accuracy column per judge."""
    judges: list[str] = []
    for _, reports in rows:
        for r in reports:
            if r.judge_name not in judges:
                judges.append(r.judge_name)
    header = ["Questions Asked"] + [f"{j} Accuracy" for j in judges]
    body = []
    for label, reports in rows:
        by_judge = {r.judge_name: r for r in reports}
        body.append([label] + [format_accuracy(by_judge[j]) if j in by_judge else "" for j in judges])
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(len(header))]

    def line(cells: Sequence[str]) -> str:
        return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"

    rule = "+" + "+".join("-" * (w + 2) for w in widths) + "+"
    return "\n".join([rule, line(header), rule, *(line(r) for r in body), rule])


# -- perturbation ------------------------------------------------------------------

SYNONYMS = {
    "under": "according to",
    "responsible": "liable",
    "obligation": "duty",
    "obligations": "duties",
    "must": "shall",
    "permitted": "allowed",
    "required": "obliged",
    "terminate": "end",
    "begin": "start",
    "purchase": "buy",
    "approximately": "roughly",
    "discovered": "found",
    "largest": "biggest",
    "main": "principal",
    "provide": "supply",
    "receive": "get",
}
_CLAUSE_REF = re.compile(r"\bClause\s+\d+(?:\.\d+)*\b", re.IGNORECASE)
_NOT_FOLLOWING = re.compile(r"^Which of the following is NOT\b", re.IGNORECASE)
_WORD = re.compile(r"[A-Za-z]+")


def _match_case(source: str, target: str) -> str:
    if source.isupper() and len(source) > 1:
        return target.upper()
    if source[0].isupper():
        return target[0].upper() + target[1:]
    return target


class RulePerturber:
    """Deterministic rewrite preserving intent; clause references are left untouched."""

    def perturb(self, text: str) -> str:
        protected: list[str] = []

        def protect(m: re.Match) -> str:
            protected.append(m.group(0))
            return f"\x00{len(protected) - 1}\x00"

        out = _CLAUSE_REF.sub(protect, text)
        out = _NOT_FOLLOWING.sub("Which is not", out)

        def swap(m: re.Match) -> str:
            word = m.group(0)
            repl = SYNONYMS.get(word.lower())
            return _match_case(word, repl) if repl else word

        out = _WORD.sub(swap, out)
        return re.sub("\x00(\\d+)\x00", lambda m: protected[int(m.group(1))], out)


@dataclass(frozen=True)
class Perturbation:
    qa_id: str
    original: str
    perturbed: str
    source: str  # "provider" or "fallback"

    @property
    def unchanged(self) -> bool:
        return self.original == self.perturbed


def perturb_questions(
    dataset: Sequence[QAPair], provider: PerturbProvider | None = None
) -> list[Perturbation]:
    fallback = RulePerturber()
    out = []
    for pair in dataset:
        text, source = None, "fallback"
        if provider is not None and not isinstance(provider, RulePerturber):
            try:
                text = provider.perturb(pair.question)
                source = "provider"
                if not text.strip():
                    raise KGQAError("empty perturbation")
            except KGQAError as exc:
                logger.warning("perturbation provider failed on %s (%s); using rules", pair.qa_id, exc)
                text, source = None, "fallback"
        if text is None:
            text = fallback.perturb(pair.question)
        p = Perturbation(pair.qa_id, pair.question, text, source)
        if p.unchanged:
            logger.info("perturbation left %s unchanged", pair.qa_id)
        out.append(p)
    return out


@dataclass
class PairedReport:
    original: EvalReport
    perturbed: EvalReport
    perturbations: list[Perturbation]

    @property
    def unchanged_count(self) -> int:
        return sum(p.unchanged for p in self.perturbations)

    def table(self) -> str:
        n = self.original.total_questions
        return render_accuracy_table(
            [
                (f"Original questions (set of {n})", [self.original]),
                (f"Perturbed questions (set of {n})", [self.perturbed]),
            ]
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "original": self.original.to_dict(),
            "perturbed": self.perturbed.to_dict(),
            "perturbations": [
                {**asdict(p), "unchanged": p.unchanged} for p in self.perturbations
            ],
        }


def perturb_and_reevaluate(
    dataset: Sequence[QAPair],
    pipeline: AnswerPipeline,
    judge: JudgeProvider,
    perturb_provider: PerturbProvider | None = None,
    *,
    max_workers: int = 4,
    original: EvalReport | None = None,
) -> PairedReport:
    original = original or evaluate(dataset, pipeline, judge, max_workers=max_workers)
    perturbations = perturb_questions(dataset, perturb_provider)
    rewritten = {p.qa_id: p.perturbed for p in perturbations}
    perturbed_set = [replace(pair, question=rewritten[pair.qa_id]) for pair in dataset]
    perturbed = evaluate(perturbed_set, pipeline, judge, max_workers=max_workers)
    return PairedReport(original, perturbed, perturbations)
