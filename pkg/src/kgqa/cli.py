"""Command-line entry point: ``kgqa <command> ...``.

Exit status is 0 on success, 1 on validation or usage errors and 2 on
provider or I/O failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

from .config import PipelineConfig, ProviderSpec
from .embedding import embed_all
from .errors import KGQAError, ProviderError, ValidationError
from .evaluation import (
    CachedJudge,
    JudgeCache,
    SubstringJudge,
    evaluate,
    perturb_and_reevaluate,
    render_accuracy_table,
)
from .graph import KnowledgeGraph, load_graph, save_graph
from .ingestion import SegmentationPolicy, generate_qa, load_qa_dataset, save_qa_dataset, segment
from .pipeline import Pipeline, answers_payload, build_providers

logger = logging.getLogger("kgqa")

EXIT_OK, EXIT_VALIDATION, EXIT_PROVIDER = 0, 1, 2


class UsageError(Exception):
    def __init__(self, message: str, usage: str) -> None:
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        raise UsageError(message, self.format_usage())


def _emit(args: argparse.Namespace, payload: Any, text: str) -> None:
    if args.json:
        print(json.dumps(payload, ensure_ascii=False, indent=2))
    else:
        print(text)


def _config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {
        "embed": getattr(args, "embedder", None),
        "extract": getattr(args, "extractor", None),
        "judge": getattr(args, "judge", None),
        "qa_gen": getattr(args, "qa_gen", None),
    }
    for role, endpoint in overrides.items():
        if endpoint:
            if endpoint == "stub":
                endpoint = "fallback"
            old = config.providers[role]
            config.providers[role] = ProviderSpec(endpoint, old.timeout, old.retries)
    if getattr(args, "k", None):
        config.retrieval.k = args.k
    if getattr(args, "placement", None):
        config.synthesis.rerank_placement = args.placement
    if getattr(args, "batch_size", None):
        config.extraction.batch_size = args.batch_size
    if getattr(args, "max_chars", None):
        config.segmentation.max_chars = args.max_chars
    if getattr(args, "min_chars", None) is not None:
        config.segmentation.min_chars = args.min_chars
    return config.validate()


def _graph_file(args: argparse.Namespace, config: PipelineConfig) -> str:
    path = args.graph or config.paths.graph_file
    if not path:
        raise ValidationError("no graph file given (use --graph or paths.graph_file)")
    return path


# -- commands --------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    config = _config(args)
    text = Path(args.doc).read_text(encoding="utf-8")
    policy = SegmentationPolicy(config.segmentation.max_chars, config.segmentation.min_chars)
    chunks = segment(text, policy)
    report = generate_qa(chunks, build_providers(config).qa_gen)
    save_qa_dataset(report.pairs, args.out)
    payload = {
        "chunks": len(chunks),
        "pairs": len(report.pairs),
        "dropped": report.dropped,
        "failed_chunks": report.errors,
        "out": args.out,
    }
    _emit(args, payload, f"{len(chunks)} chunks -> {len(report.pairs)} QA pairs written to {args.out}")
    return EXIT_OK


def cmd_build_graph(args: argparse.Namespace) -> int:
    config = _config(args)
    pairs = load_qa_dataset(args.qa)
    pipeline = Pipeline(KnowledgeGraph(), config=config)
    report = pipeline.build(pairs)
    embedded = 0 if args.no_embed else embed_all(pipeline.graph, pipeline.providers.embedder)
    save_graph(pipeline.graph, args.out)
    payload = {**report.to_dict(), "vectors_written": embedded, "stats": pipeline.graph.stats()}
    _emit(
        args,
        payload,
        f"{report.batches} batches ({len(report.failed_batches)} failed), "
        f"{report.nodes_added} nodes, {report.edges_added} edges -> {args.out}",
    )
    return EXIT_OK


def cmd_embed(args: argparse.Namespace) -> int:
    config = _config(args)
    path = _graph_file(args, config)
    graph = load_graph(path)
    written = embed_all(graph, build_providers(config).embedder)
    out = args.out or path
    save_graph(graph, out)
    _emit(args, {"vectors_written": written, "out": out}, f"{written} vectors written -> {out}")
    return EXIT_OK


def _load_pipeline(args: argparse.Namespace, config: PipelineConfig) -> Pipeline:
    pipeline = Pipeline(load_graph(_graph_file(args, config)), config=config)
    if pipeline.ensure_embedded():
        logger.warning("graph was not fully embedded; embedded in memory for this run")
    return pipeline


def cmd_query(args: argparse.Namespace) -> int:
    config = _config(args)
    pipeline = _load_pipeline(args, config)
    result = pipeline.answer(args.question)
    answers = answers_payload(pipeline.graph, result)
    lines = [f"Q: {args.question}"]
    if not answers:
        lines.append("(no answers)")
    for a in answers:
        lines.append(f"{a['rank']}. [{a['score']:.4f}] {a['text']}")
        for s in a["sources"]:
            lines.append(f"     <- ({s['subject']}) -[{s['predicate']}]-> ({s['object']})  qa={s['qa_id']}")
    _emit(args, {"question": args.question, "answers": answers}, "\n".join(lines))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = _config(args)
    pipeline = _load_pipeline(args, config)
    dataset = load_qa_dataset(args.qa or config.paths.qa_file)
    judge = pipeline.providers.judge
    cache_path = args.cache or (
        str(Path(config.paths.cache_dir) / "judge_cache.jsonl") if config.paths.cache_dir else None
    )
    if cache_path and not isinstance(judge, SubstringJudge):
        judge = CachedJudge(judge, JudgeCache(cache_path))
    n = len(dataset)
    if args.perturb:
        paired = perturb_and_reevaluate(dataset, pipeline, judge, pipeline.providers.perturber)
        payload = paired.to_dict()
        text = paired.table()
        reports = [paired.original, paired.perturbed]
    else:
        report = evaluate(dataset, pipeline, judge)
        payload = report.to_dict()
        text = render_accuracy_table([(f"Questions (set of {n})", [report])])
        reports = [report]
    for r in reports:
        text += (
            f"\n{r.judge_name}: valid={r.valid_questions} invalid={r.invalid_questions} "
            f"excluded={r.excluded_questions} correct={r.correct} unparseable={r.unparseable_count}"
        )
    if args.report:
        Path(args.report).write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8")
    _emit(args, payload, text)
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    config = _config(args)
    graph = load_graph(args.graph) if args.graph or config.paths.graph_file else KnowledgeGraph()
    app = create_app(graph, config)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def cmd_graph_stats(args: argparse.Namespace) -> int:
    config = _config(args)
    stats = load_graph(_graph_file(args, config)).stats()
    text = f"nodes={stats['nodes']} edges={stats['edges']} types={stats['types']} dim={stats['embedding_dim']}"
    for t, c in stats["type_counts"].items():
        text += f"\n  {t}: {c}"
    _emit(args, stats, text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML pipeline config")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="kgqa", description="Knowledge-graph question answering")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="segment a text document and generate QA pairs")
    p.add_argument("--doc", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-chars", type=int)
    p.add_argument("--min-chars", type=int)
    p.add_argument("--qa-gen", help="QA generator URL or 'fallback'")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("build-graph", parents=[common], help="extract triples from a QA file into a graph")
    p.add_argument("--qa", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--extractor", help="extraction provider URL or 'fallback'")
    p.add_argument("--embedder", help="embedding provider URL or 'fallback'")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--no-embed", action="store_true", help="skip computing embeddings")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("embed", parents=[common], help="embed nodes and types lacking vectors")
    p.add_argument("--graph")
    p.add_argument("--out")
    p.add_argument("--embedder")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("query", parents=[common], help="answer one question")
    p.add_argument("--graph")
    p.add_argument("-q", "--question", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--placement", choices=["after_paraphrase", "before_paraphrase"])
    p.add_argument("--embedder")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", parents=[common], help="LLM-as-judge evaluation")
    p.add_argument("--graph")
    p.add_argument("--qa")
    p.add_argument("--judge", required=True, help="judge URL or 'stub'")
    p.add_argument("--perturb", action="store_true")
    p.add_argument("--cache", help="judge response cache (JSONL)")
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--embedder")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", parents=[common], help="run the HTTP service")
    p.add_argument("--graph")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("graph-stats", parents=[common], help="node/edge/type counts")
    p.add_argument("--graph")
    p.set_defaults(func=cmd_graph_stats)
    return parser


def cli_dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(exc.usage)
        sys.stderr.write(f"kgqa: error: {exc}\n")
        return EXIT_VALIDATION
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ProviderError as exc:
        print(f"kgqa: provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except OSError as exc:
        print(f"kgqa: I/O error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (KGQAError, ValueError) as exc:
        print(f"kgqa: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
