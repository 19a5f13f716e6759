"""Model provider contracts and the shared JSON-over-HTTP client.

Every hosted model (embedder, triple extractor, NER tagger, paraphraser,
reranker, judge, question perturber, QA generator) is reached through the
same wire shape: ``POST <url>`` with a JSON body carrying a ``task`` field.
The offline fallbacks live next to the code that uses them.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Mapping, Sequence
from typing import Any, Protocol, runtime_checkable

import httpx

from .errors import ProviderError

logger = logging.getLogger(__name__)

FALLBACK = "fallback"


@runtime_checkable
class EmbeddingProvider(Protocol):
    def embed(self, texts: Sequence[str]) -> list[list[float]]: ...


@runtime_checkable
class ExtractionProvider(Protocol):
    def extract(self, instructions: str, pairs: Sequence[Mapping[str, str]]) -> list[dict[str, Any]]: ...


@runtime_checkable
class NERProvider(Protocol):
    def mentions(self, text: str) -> list[dict[str, Any]]: ...


@runtime_checkable
class ParaphraseProvider(Protocol):
    def paraphrase(self, texts: Sequence[str]) -> list[str]: ...


@runtime_checkable
class RerankProvider(Protocol):
    def score(self, query: str, candidates: Sequence[str]) -> list[float]: ...


@runtime_checkable
class JudgeProvider(Protocol):
    name: str

    def judge(self, prompt: str) -> str: ...


@runtime_checkable
class PerturbProvider(Protocol):
    def perturb(self, text: str) -> str: ...


@runtime_checkable
class QAGenProvider(Protocol):
    def generate(self, text: str) -> list[dict[str, Any]]: ...


def _expect_list(body: Any, key: str, url: str, step: str) -> list:
    if not isinstance(body, dict) or not isinstance(body.get(key), list):
        raise ProviderError(f"{url}: response missing list field {key!r}", step=step)
    return body[key]


class HttpProvider:
    """JSON client implementing every provider protocol against one endpoint.

    Transport errors and 5xx responses are retried with exponential backoff;
    4xx responses and malformed bodies fail immediately.
    """

    def __init__(
        self,
        url: str,
        *,
        timeout: float = 30.0,
        retries: int = 2,
        backoff: float = 0.5,
        name: str | None = None,
        client: httpx.Client | None = None,
    ) -> None:
        self.url = url
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.name = name or url
        self._client = client

    def _post(self, payload: dict[str, Any]) -> Any:
        task = payload.get("task")
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                if self._client is not None:
                    resp = self._client.post(self.url, json=payload, timeout=self.timeout)
                else:
                    resp = httpx.post(self.url, json=payload, timeout=self.timeout)
            except httpx.HTTPError as exc:
                last = exc
            else:
                if resp.status_code < 400:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise ProviderError(f"{self.url}: non-JSON response", step=task) from exc
                if resp.status_code < 500:
                    raise ProviderError(
                        f"{self.url}: HTTP {resp.status_code} for task {task!r}", step=task
                    )
                last = ProviderError(f"{self.url}: HTTP {resp.status_code}", step=task)
            if attempt < self.retries:
                delay = self.backoff * (2**attempt)
                logger.warning("provider %s task %s failed (%s); retrying in %.1fs", self.url, task, last, delay)
                time.sleep(delay)
        raise ProviderError(
            f"{self.url}: task {task!r} failed after {self.retries + 1} attempts: {last}", step=task
        )

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        body = self._post({"task": "embed", "texts": list(texts)})
        vectors = _expect_list(body, "vectors", self.url, "embed")
        if len(vectors) != len(texts):
            raise ProviderError(f"{self.url}: got {len(vectors)} vectors for {len(texts)} texts", step="embed")
        return vectors

    def extract(self, instructions: str, pairs: Sequence[Mapping[str, str]]) -> list[dict[str, Any]]:
        body = self._post(
            {
                "task": "extract",
                "instructions": instructions,
                "pairs": [
                    {"question": p["question"], "answer": p["answer"], "qa_id": p["qa_id"]} for p in pairs
                ],
            }
        )
        return _expect_list(body, "triples", self.url, "extract")

    def mentions(self, text: str) -> list[dict[str, Any]]:
        return _expect_list(self._post({"task": "ner", "text": text}), "mentions", self.url, "ner")

    def paraphrase(self, texts: Sequence[str]) -> list[str]:
        body = self._post({"task": "paraphrase", "texts": list(texts)})
        out = _expect_list(body, "texts", self.url, "paraphrase")
        if len(out) != len(texts) or not all(isinstance(t, str) for t in out):
            raise ProviderError(f"{self.url}: paraphrase returned a mismatched text list", step="paraphrase")
        return out

    def score(self, query: str, candidates: Sequence[str]) -> list[float]:
        body = self._post({"task": "rerank", "query": query, "candidates": list(candidates)})
        scores = _expect_list(body, "scores", self.url, "rerank")
        if len(scores) != len(candidates):
            raise ProviderError(f"{self.url}: got {len(scores)} scores for {len(candidates)} candidates", step="rerank")
        try:
            return [float(s) for s in scores]
        except (TypeError, ValueError) as exc:
            raise ProviderError(f"{self.url}: non-numeric rerank score", step="rerank") from exc

    def judge(self, prompt: str) -> str:
        body = self._post({"task": "judge", "prompt": prompt})
        if not isinstance(body, dict) or not isinstance(body.get("text"), str):
            raise ProviderError(f"{self.url}: judge response missing 'text'", step="judge")
        return body["text"]

    def perturb(self, text: str) -> str:
        body = self._post({"task": "perturb", "text": text})
        if not isinstance(body, dict) or not isinstance(body.get("text"), str):
            raise ProviderError(f"{self.url}: perturb response missing 'text'", step="perturb")
        return body["text"]

    def generate(self, text: str) -> list[dict[str, Any]]:
        return _expect_list(self._post({"task": "qa_gen", "text": text}), "pairs", self.url, "qa_gen")
