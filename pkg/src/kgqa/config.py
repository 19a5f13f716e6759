"""Declarative pipeline configuration (YAML).

Example::

    providers:
      embed:  {endpoint: fallback}
      rerank: {endpoint: "http://localhost:9000/rerank", timeout: 10, retries: 3}
    retrieval: {k: 5, edit_distance_max: 3, max_bundle: 64}
    synthesis: {group_size: 8, rerank_placement: after_paraphrase}
    paths: {graph_file: graph.jsonl}

Every provider defaults to ``fallback`` so an empty file is a valid config.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .errors import ParseError, ValidationError
from .providers import FALLBACK

PROVIDER_ROLES = ("embed", "extract", "ner", "paraphrase", "rerank", "judge", "perturb", "qa_gen")


def _positive(name: str, value: Any, kind: type = int) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, float) if kind is float else int) or value <= 0:
        raise ValidationError(f"{name} must be a positive {kind.__name__}, got {value!r}")


@dataclass
class ProviderSpec:
    endpoint: str = FALLBACK
    timeout: float = 30.0
    retries: int = 2

    def validate(self, role: str) -> None:
        if not isinstance(self.endpoint, str) or not (
            self.endpoint == FALLBACK or self.endpoint.startswith(("http://", "https://"))
        ):
            raise ValidationError(f"providers.{role}.endpoint must be a URL or {FALLBACK!r}, got {self.endpoint!r}")
        _positive(f"providers.{role}.timeout", self.timeout, float)
        if isinstance(self.retries, bool) or not isinstance(self.retries, int) or self.retries < 0:
            raise ValidationError(f"providers.{role}.retries must be a non-negative integer")

    @property
    def is_fallback(self) -> bool:
        return self.endpoint == FALLBACK


@dataclass
class RetrievalSection:
    k: int = 5
    edit_distance_max: int = 3
    max_bundle: int = 64
    mode: str = "full"


@dataclass
class SynthesisSection:
    group_size: int = 8
    rerank_placement: str = "after_paraphrase"
    top_n: int = 5


@dataclass
class ExtractionSection:
    batch_size: int = 20


@dataclass
class SegmentationSection:
    max_chars: int = 1200
    min_chars: int = 80


@dataclass
class PathsSection:
    graph_file: str | None = None
    qa_file: str | None = None
    cache_dir: str | None = None


@dataclass
class PipelineConfig:
    providers: dict[str, ProviderSpec] = field(
        default_factory=lambda: {role: ProviderSpec() for role in PROVIDER_ROLES}
    )
    retrieval: RetrievalSection = field(default_factory=RetrievalSection)
    synthesis: SynthesisSection = field(default_factory=SynthesisSection)
    extraction: ExtractionSection = field(default_factory=ExtractionSection)
    segmentation: SegmentationSection = field(default_factory=SegmentationSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def validate(self) -> PipelineConfig:
        for role in PROVIDER_ROLES:
            self.providers[role].validate(role)
        r = self.retrieval
        _positive("retrieval.k", r.k)
        _positive("retrieval.edit_distance_max", r.edit_distance_max)
        _positive("retrieval.max_bundle", r.max_bundle)
        if r.mode not in ("full", "fuzzy_only"):
            raise ValidationError(f"retrieval.mode must be 'full' or 'fuzzy_only', got {r.mode!r}")
        _positive("synthesis.group_size", self.synthesis.group_size)
        _positive("synthesis.top_n", self.synthesis.top_n)
        if self.synthesis.rerank_placement not in ("after_paraphrase", "before_paraphrase"):
            raise ValidationError(
                f"synthesis.rerank_placement must be after_paraphrase or before_paraphrase, "
                f"got {self.synthesis.rerank_placement!r}"
            )
        _positive("extraction.batch_size", self.extraction.batch_size)
        _positive("segmentation.max_chars", self.segmentation.max_chars)
        m = self.segmentation.min_chars
        if isinstance(m, bool) or not isinstance(m, int) or m < 0:
            raise ValidationError("segmentation.min_chars must be a non-negative integer")
        for f in fields(PathsSection):
            value = getattr(self.paths, f.name)
            if value is not None and not isinstance(value, str):
                raise ValidationError(f"paths.{f.name} must be a string")
        return self

    # -- (de)serialization -------------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        def section(obj: Any) -> dict[str, Any]:
            return {f.name: getattr(obj, f.name) for f in fields(obj)}

        return {
            "providers": {role: section(self.providers[role]) for role in PROVIDER_ROLES},
            "retrieval": section(self.retrieval),
            "synthesis": section(self.synthesis),
            "extraction": section(self.extraction),
            "segmentation": section(self.segmentation),
            "paths": section(self.paths),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> PipelineConfig:
        data = data or {}
        if not isinstance(data, dict):
            raise ValidationError("config root must be a mapping")
        sections = {
            "retrieval": RetrievalSection,
            "synthesis": SynthesisSection,
            "extraction": ExtractionSection,
            "segmentation": SegmentationSection,
            "paths": PathsSection,
        }
        unknown = set(data) - set(sections) - {"providers"}
        if unknown:
            raise ValidationError(f"unknown config sections: {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        for name, kind in sections.items():
            kwargs[name] = _build(kind, data.get(name), name)
        providers = {role: ProviderSpec() for role in PROVIDER_ROLES}
        raw_providers = data.get("providers") or {}
        if not isinstance(raw_providers, dict):
            raise ValidationError("providers must be a mapping")
        for role, spec in raw_providers.items():
            if role not in PROVIDER_ROLES:
                raise ValidationError(f"unknown provider role {role!r}")
            if isinstance(spec, str):
                spec = {"endpoint": spec}
            providers[role] = _build(ProviderSpec, spec, f"providers.{role}")
        return cls(providers=providers, **kwargs).validate()

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def loads(cls, text: str) -> PipelineConfig:
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            raise ParseError(f"invalid config YAML: {exc}", line) from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> PipelineConfig:
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def _build(kind: type, raw: Any, where: str) -> Any:
    if raw is None:
        return kind()
    if not isinstance(raw, dict):
        raise ValidationError(f"{where} must be a mapping")
    allowed = {f.name for f in fields(kind)}
    unknown = set(raw) - allowed
    if unknown:
        raise ValidationError(f"unknown keys in {where}: {sorted(unknown)}")
    return kind(**raw)
