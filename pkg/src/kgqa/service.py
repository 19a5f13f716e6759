"""HTTP service around the pipeline.

Queries run against an immutable published graph. ``/ingest`` builds the next
revision on a private copy under an exclusive lock and swaps it in, so a
request never observes a half-built graph.
"""

from __future__ import annotations

import json
import logging
import threading
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from starlette.concurrency import run_in_threadpool

from .config import PipelineConfig
from .embedding import embed_all
from .errors import KGQAError, ProviderError, ValidationError
from .extraction import build_graph
from .graph import KnowledgeGraph
from .ingestion import parse_qa_records
from .pipeline import Pipeline, Providers, answers_payload, build_providers

logger = logging.getLogger(__name__)


class GraphState:
    def __init__(self, graph: KnowledgeGraph, config: PipelineConfig, providers: Providers) -> None:
        self.config = config
        self.providers = providers
        self._write_lock = threading.Lock()
        self._pipeline = Pipeline(graph, providers, config)

    @property
    def pipeline(self) -> Pipeline:
        return self._pipeline

    def ingest(self, records: Any) -> dict[str, Any]:
        pairs = parse_qa_records(records)
        with self._write_lock:
            draft = self._pipeline.graph.copy()
            report = build_graph(
                draft, pairs, self.providers.extractor, batch_size=self.config.extraction.batch_size
            )
            embedded = embed_all(draft, self.providers.embedder)
            self._pipeline = Pipeline(draft, self.providers, self.config)
        return {**report.to_dict(), "vectors_written": embedded, "stats": draft.stats()}


def _error(status: int, message: str, **extra: Any) -> JSONResponse:
    return JSONResponse({"error": message, **extra}, status_code=status)


async def _json_body(request: Request) -> Any:
    raw = await request.body()
    try:
        return json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ValidationError(f"request body is not valid JSON: {exc}") from None


def create_app(
    graph: KnowledgeGraph,
    config: PipelineConfig | None = None,
    providers: Providers | None = None,
) -> FastAPI:
    config = config or PipelineConfig()
    providers = providers or build_providers(config)
    if not graph.is_fully_embedded():
        embed_all(graph, providers.embedder)
    state = GraphState(graph, config, providers)
    app = FastAPI(title="kgqa")
    app.state.graph_state = state

    @app.exception_handler(ValidationError)
    async def _validation(request: Request, exc: ValidationError) -> JSONResponse:
        return _error(400, str(exc))

    @app.exception_handler(ProviderError)
    async def _provider(request: Request, exc: ProviderError) -> JSONResponse:
        return _error(502, str(exc), step=exc.step)

    @app.exception_handler(KGQAError)
    async def _other(request: Request, exc: KGQAError) -> JSONResponse:
        return _error(500, str(exc))

    @app.get("/healthz")
    def healthz() -> dict[str, str]:
        return {"status": "ok"}

    @app.get("/stats")
    def stats() -> dict[str, Any]:
        return state.pipeline.graph.stats()

    @app.post("/query")
    async def query(request: Request) -> dict[str, Any]:
        body = await _json_body(request)
        if not isinstance(body, dict) or not isinstance(body.get("question"), str) or not body["question"].strip():
            raise ValidationError('body must be an object with a non-empty string "question"')
        pipeline = state.pipeline

        def work() -> dict[str, Any]:
            result = pipeline.answer(body["question"])
            return {"question": body["question"], "answers": answers_payload(pipeline.graph, result)}

        return await run_in_threadpool(work)

    @app.post("/ingest")
    async def ingest(request: Request) -> dict[str, Any]:
        body = await _json_body(request)
        return await run_in_threadpool(state.ingest, body)

    return app
