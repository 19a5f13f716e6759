"""In-memory property graph with typed nodes, directed edges and JSONL persistence.

Node identity is the pair (case-folded name, node_type). Ids are derived from
that pair, so building the same graph from the same facts in any order yields
the same ids and, after :func:`save_graph`, the same bytes on disk.

File layout (UTF-8 JSON Lines)::

    {"format": "kgqa-graph", "version": 1, "embedding_dim": 256}
    {"kind": "node", "id": ..., "name": ..., "node_type": ..., "embedding": [...] | null}
    {"kind": "type", "type_name": ..., "member_count": ..., "embedding": [...] | null}
    {"kind": "edge", "subject_id": ..., "predicate": ..., "object_id": ..., "provenance": ... | null}
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import threading
from collections.abc import Iterable, Iterator
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import (
    DimensionMismatchError,
    GraphParseError,
    NotFoundError,
    ReferentialIntegrityError,
    ValidationError,
)

FORMAT_NAME = "kgqa-graph"
FORMAT_VERSION = 1

_WS = re.compile(r"\s+")


def normalize_name(name: str) -> str:
    """Case-fold and collapse internal whitespace."""
    return _WS.sub(" ", name.strip()).casefold()


def make_node_id(name: str, node_type: str) -> str:
    key = f"{normalize_name(name)}\x1f{node_type.strip()}".encode("utf-8")
    digest = hashlib.sha1(key).hexdigest()[:16]
    slug = re.sub(r"[^a-z0-9]+", "-", node_type.strip().lower()).strip("-") or "node"
    return f"{slug}:{digest}"


def as_vector(values: Any) -> np.ndarray:
    """Coerce ``values`` to a 1-d float64 array with finite entries."""
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1 or vec.size == 0:
        raise ValidationError(f"embedding must be a non-empty 1-d vector, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ValidationError("embedding contains non-finite values")
    return vec


@dataclass
class EntityNode:
    name: str
    node_type: str
    id: str = ""
    embedding: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.name = _WS.sub(" ", (self.name or "").strip())
        self.node_type = (self.node_type or "").strip()
        if not self.name:
            raise ValidationError("node name must be non-empty")
        if not self.node_type:
            raise ValidationError(f"node_type must be non-empty for node {self.name!r}")
        if not self.id:
            self.id = make_node_id(self.name, self.node_type)
        if self.embedding is not None:
            self.embedding = as_vector(self.embedding)

    @property
    def identity(self) -> tuple[str, str]:
        return normalize_name(self.name), self.node_type


@dataclass(frozen=True, order=True)
class TypedEdge:
    subject_id: str
    predicate: str
    object_id: str
    provenance: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        pred = (self.predicate or "").strip()
        if not pred:
            raise ValidationError("edge predicate must be non-empty")
        object.__setattr__(self, "predicate", pred)

    @property
    def key(self) -> tuple[str, str, str]:
        return self.subject_id, self.predicate, self.object_id


@dataclass
class NodeTypeRecord:
    type_name: str
    member_count: int = 0
    embedding: np.ndarray | None = None


class RWLock:
    """Many readers or one writer. The writing thread may re-enter either side."""

    def __init__(self) -> None:
        self._cond = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer: int | None = None
        self._depth = 0

    @contextmanager
    def read(self) -> Iterator[None]:
        me = threading.get_ident()
        with self._cond:
            if self._writer == me:
                nested = True
            else:
                nested = False
                while self._writer is not None:
                    self._cond.wait()
                self._readers += 1
        try:
            yield
        finally:
            if not nested:
                with self._cond:
                    self._readers -= 1
                    if self._readers == 0:
                        self._cond.notify_all()

    @contextmanager
    def write(self) -> Iterator[None]:
        me = threading.get_ident()
        with self._cond:
            if self._writer != me:
                while self._writer is not None or self._readers:
                    self._cond.wait()
                self._writer = me
            self._depth += 1
        try:
            yield
        finally:
            with self._cond:
                self._depth -= 1
                if self._depth == 0:
                    self._writer = None
                    self._cond.notify_all()


class KnowledgeGraph:
    """Property graph store.

    Every public method takes the internal reader/writer lock, so a single
    instance can be shared between threads. Use :meth:`write` to group several
    mutations into one exclusive section.
    """

    def __init__(self, embedding_dim: int | None = None) -> None:
        if embedding_dim is not None and embedding_dim < 1:
            raise ValidationError("embedding_dim must be positive")
        self._embedding_dim = embedding_dim
        self._nodes: dict[str, EntityNode] = {}
        self._identity: dict[tuple[str, str], str] = {}
        self._edges: dict[tuple[str, str, str], TypedEdge] = {}
        self._incident: dict[str, list[tuple[str, str, str]]] = {}
        self._types: dict[str, NodeTypeRecord] = {}
        self._lock = RWLock()
        self.version = 0

    # -- locking -----------------------------------------------------------

    def read(self):
        return self._lock.read()

    def write(self):
        return self._lock.write()

    # -- properties --------------------------------------------------------

    @property
    def embedding_dim(self) -> int | None:
        return self._embedding_dim

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def node_count(self) -> int:
        return len(self._nodes)

    @property
    def edge_count(self) -> int:
        return len(self._edges)

    def nodes(self) -> list[EntityNode]:
        with self.read():
            return [self._nodes[k] for k in sorted(self._nodes)]

    def edges(self) -> list[TypedEdge]:
        with self.read():
            return [self._edges[k] for k in sorted(self._edges)]

    def type_records(self) -> list[NodeTypeRecord]:
        with self.read():
            return [self._types[k] for k in sorted(self._types)]

    def get_node(self, node_id: str) -> EntityNode:
        with self.read():
            try:
                return self._nodes[node_id]
            except KeyError:
                raise NotFoundError(f"unknown node id: {node_id!r}") from None

    def has_node(self, node_id: str) -> bool:
        return node_id in self._nodes

    def has_edge(self, edge: TypedEdge) -> bool:
        return edge.key in self._edges

    def get_type(self, type_name: str) -> NodeTypeRecord:
        with self.read():
            try:
                return self._types[type_name]
            except KeyError:
                raise NotFoundError(f"unknown node type: {type_name!r}") from None

    def find_node(self, name: str, node_type: str) -> EntityNode | None:
        node_id = self._identity.get((normalize_name(name), node_type.strip()))
        return self._nodes.get(node_id) if node_id else None

    def nodes_of_type(self, type_name: str) -> list[EntityNode]:
        with self.read():
            return [n for n in self.nodes() if n.node_type == type_name]

    # -- mutation ----------------------------------------------------------

    def _check_dim(self, vec: np.ndarray) -> None:
        if self._embedding_dim is None:
            self._embedding_dim = int(vec.shape[0])
        elif vec.shape[0] != self._embedding_dim:
            raise DimensionMismatchError(
                f"embedding has dimension {vec.shape[0]}, graph expects {self._embedding_dim}"
            )

    def upsert_node(self, node: EntityNode) -> str:
        """Insert ``node`` unless one with the same identity exists; return its id.

        When two surface forms differ only in case, the lexicographically
        smaller one is kept so the final graph does not depend on insertion
        order.
        """
        with self.write():
            existing_id = self._identity.get(node.identity)
            if existing_id is not None:
                existing = self._nodes[existing_id]
                if node.name < existing.name:
                    existing.name = node.name
                    self.version += 1
                if node.embedding is not None and existing.embedding is None:
                    self._check_dim(node.embedding)
                    existing.embedding = node.embedding
                    self.version += 1
                return existing_id
            if node.id in self._nodes:
                raise ValidationError(f"node id {node.id!r} already used by a different entity")
            if node.embedding is not None:
                self._check_dim(node.embedding)
            self._nodes[node.id] = node
            self._identity[node.identity] = node.id
            self._incident.setdefault(node.id, [])
            record = self._types.setdefault(node.node_type, NodeTypeRecord(node.node_type))
            record.member_count += 1
            self.version += 1
            return node.id

    def add_entity(self, name: str, node_type: str) -> str:
        return self.upsert_node(EntityNode(name=name, node_type=node_type))

    def insert_edge(self, edge: TypedEdge) -> bool:
        """Insert ``edge``; return False if the triple was already present."""
        with self.write():
            for endpoint in (edge.subject_id, edge.object_id):
                if endpoint not in self._nodes:
                    raise ReferentialIntegrityError(endpoint)
            existing = self._edges.get(edge.key)
            if existing is not None:
                # keep the smallest provenance so application order does not matter
                if edge.provenance is not None and (
                    existing.provenance is None or edge.provenance < existing.provenance
                ):
                    self._edges[edge.key] = edge
                    self.version += 1
                return False
            self._edges[edge.key] = edge
            self._incident[edge.subject_id].append(edge.key)
            if edge.object_id != edge.subject_id:
                self._incident[edge.object_id].append(edge.key)
            self.version += 1
            return True

    def set_node_embedding(self, node_id: str, values: Any) -> None:
        vec = as_vector(values)
        with self.write():
            node = self.get_node(node_id)
            self._check_dim(vec)
            node.embedding = vec
            self.version += 1

    def set_type_embedding(self, type_name: str, values: Any) -> None:
        vec = as_vector(values)
        with self.write():
            record = self.get_type(type_name)
            self._check_dim(vec)
            record.embedding = vec
            self.version += 1

    # -- queries -----------------------------------------------------------

    def neighborhood(self, node_id: str) -> list[TypedEdge]:
        """Edges where ``node_id`` is subject or object, sorted by triple."""
        with self.read():
            if node_id not in self._nodes:
                raise NotFoundError(f"unknown node id: {node_id!r}")
            return [self._edges[k] for k in sorted(self._incident[node_id])]

    def recompute_type_records(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        with self.read():
            for node in self._nodes.values():
                counts[node.node_type] = counts.get(node.node_type, 0) + 1
        return counts

    def stats(self) -> dict[str, Any]:
        with self.read():
            return {
                "nodes": len(self._nodes),
                "edges": len(self._edges),
                "types": len(self._types),
                "embedding_dim": self._embedding_dim,
                "type_counts": {t: r.member_count for t, r in sorted(self._types.items())},
            }

    def is_fully_embedded(self) -> bool:
        with self.read():
            return all(n.embedding is not None for n in self._nodes.values()) and all(
                r.embedding is not None for r in self._types.values()
            )

    def copy(self) -> KnowledgeGraph:
        """Deep copy, suitable for building a new revision off to the side."""
        clone = KnowledgeGraph(self._embedding_dim)
        with self.read():
            for node in self.nodes():
                emb = None if node.embedding is None else node.embedding.copy()
                clone.upsert_node(EntityNode(node.name, node.node_type, node.id, emb))
            for record in self.type_records():
                if record.embedding is not None:
                    clone.set_type_embedding(record.type_name, record.embedding.copy())
            for edge in self.edges():
                clone.insert_edge(edge)
        return clone

    def structurally_equal(self, other: KnowledgeGraph) -> bool:
        return _structure(self) == _structure(other)


def _vec_key(vec: np.ndarray | None) -> bytes | None:
    return None if vec is None else vec.tobytes()


def _structure(graph: KnowledgeGraph) -> tuple:
    nodes = tuple((n.id, n.name, n.node_type, _vec_key(n.embedding)) for n in graph.nodes())
    edges = tuple((*e.key, e.provenance) for e in graph.edges())
    types = tuple(
        (r.type_name, r.member_count, _vec_key(r.embedding)) for r in graph.type_records()
    )
    return graph.embedding_dim, nodes, edges, types


# -- persistence ---------------------------------------------------------------


def _vec_out(vec: np.ndarray | None) -> list[float] | None:
    return None if vec is None else [float(x) for x in vec]


def iter_graph_lines(graph: KnowledgeGraph) -> Iterator[str]:
    def dump(obj: dict) -> str:
        return json.dumps(obj, ensure_ascii=False, allow_nan=False)

    with graph.read():
        yield dump({"format": FORMAT_NAME, "version": FORMAT_VERSION, "embedding_dim": graph.embedding_dim})
        for n in graph.nodes():
            yield dump(
                {"kind": "node", "id": n.id, "name": n.name, "node_type": n.node_type,
                 "embedding": _vec_out(n.embedding)}
            )
        for r in graph.type_records():
            yield dump(
                {"kind": "type", "type_name": r.type_name, "member_count": r.member_count,
                 "embedding": _vec_out(r.embedding)}
            )
        for e in graph.edges():
            yield dump(
                {"kind": "edge", "subject_id": e.subject_id, "predicate": e.predicate,
                 "object_id": e.object_id, "provenance": e.provenance}
            )


def dumps_graph(graph: KnowledgeGraph) -> str:
    return "".join(line + "\n" for line in iter_graph_lines(graph))


def save_graph(graph: KnowledgeGraph, destination: str | Path) -> None:
    path = Path(destination)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for line in iter_graph_lines(graph):
            fh.write(line)
            fh.write("\n")
    tmp.replace(path)


def _field(obj: dict, name: str, lineno: int, kinds: type | tuple[type, ...] = str) -> Any:
    if name not in obj:
        raise GraphParseError(f"missing field {name!r}", lineno)
    value = obj[name]
    if not isinstance(value, kinds) or isinstance(value, bool):
        raise GraphParseError(f"field {name!r} has wrong type {type(value).__name__}", lineno)
    return value


def _embedding_field(obj: dict, lineno: int) -> np.ndarray | None:
    raw = obj.get("embedding")
    if raw is None:
        return None
    if not isinstance(raw, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in raw
    ):
        raise GraphParseError("embedding must be an array of numbers", lineno)
    if not all(math.isfinite(x) for x in raw):
        raise GraphParseError("embedding contains non-finite values", lineno)
    return as_vector(raw)


def loads_graph(lines: Iterable[str]) -> KnowledgeGraph:
    graph: KnowledgeGraph | None = None
    declared_types: dict[str, tuple[int, int, np.ndarray | None]] = {}
    lineno = 0
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise GraphParseError(f"invalid JSON: {exc.msg}", lineno, exc.colno) from None
        if not isinstance(obj, dict):
            raise GraphParseError("record must be a JSON object", lineno)
        if graph is None:
            if obj.get("format") != FORMAT_NAME:
                raise GraphParseError(f"not a {FORMAT_NAME} file (bad header)", lineno)
            if obj.get("version") != FORMAT_VERSION:
                raise GraphParseError(f"unsupported version {obj.get('version')!r}", lineno)
            dim = obj.get("embedding_dim")
            if dim is not None and (not isinstance(dim, int) or isinstance(dim, bool) or dim < 1):
                raise GraphParseError("embedding_dim must be a positive integer or null", lineno)
            graph = KnowledgeGraph(dim)
            continue
        kind = obj.get("kind")
        try:
            if kind == "node":
                node = EntityNode(
                    name=_field(obj, "name", lineno),
                    node_type=_field(obj, "node_type", lineno),
                    id=_field(obj, "id", lineno),
                    embedding=_embedding_field(obj, lineno),
                )
                if graph.has_node(node.id):
                    raise GraphParseError(f"duplicate node id {node.id!r}", lineno)
                before = graph.node_count
                graph.upsert_node(node)
                if graph.node_count == before:
                    raise GraphParseError(f"node {node.id!r} duplicates an existing entity", lineno)
            elif kind == "edge":
                prov = obj.get("provenance")
                if prov is not None and not isinstance(prov, str):
                    raise GraphParseError("provenance must be a string or null", lineno)
                edge = TypedEdge(
                    _field(obj, "subject_id", lineno),
                    _field(obj, "predicate", lineno),
                    _field(obj, "object_id", lineno),
                    prov,
                )
                if not graph.insert_edge(edge):
                    raise GraphParseError(f"duplicate edge {edge.key!r}", lineno)
            elif kind == "type":
                name = _field(obj, "type_name", lineno)
                count = _field(obj, "member_count", lineno, int)
                if name in declared_types:
                    raise GraphParseError(f"duplicate type record {name!r}", lineno)
                declared_types[name] = (lineno, count, _embedding_field(obj, lineno))
            else:
                raise GraphParseError(f"unknown record kind {kind!r}", lineno)
        except ReferentialIntegrityError as exc:
            raise GraphParseError(
                f"edge references absent node {exc.missing_id!r}", lineno
            ) from None
        except DimensionMismatchError as exc:
            raise DimensionMismatchError(f"line {lineno}: {exc}") from None
        except GraphParseError:
            raise
        except ValidationError as exc:
            raise GraphParseError(str(exc), lineno) from None
    if graph is None:
        raise GraphParseError("empty file: missing header", max(lineno, 1))

    actual = graph.recompute_type_records()
    for name, (tline, count, emb) in declared_types.items():
        if actual.get(name) != count:
            raise GraphParseError(
                f"type record {name!r} declares {count} members, file has {actual.get(name, 0)}",
                tline,
            )
        if emb is not None:
            try:
                graph.set_type_embedding(name, emb)
            except DimensionMismatchError as exc:
                raise DimensionMismatchError(f"line {tline}: {exc}") from None
    missing = sorted(set(actual) - set(declared_types))
    if missing:
        raise GraphParseError(f"missing type records for {missing}", lineno)
    return graph


def load_graph(source: str | Path) -> KnowledgeGraph:
    with open(source, encoding="utf-8") as fh:
        return loads_graph(fh)

