"""Node and node-type embeddings with exact cosine search."""

from __future__ import annotations

import hashlib
import logging
import re
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, NotFoundError, ProviderError, UndefinedSimilarityError
from .graph import EntityNode, KnowledgeGraph, as_vector
from .providers import EmbeddingProvider

logger = logging.getLogger(__name__)

_WS = re.compile(r"\s+")


class HashingEmbedder:
    """Offline embedder: character 3-grams hashed into a fixed-size, L2-normalized vector.

    Text is case-folded and padded with one space on each side so that word
    boundaries contribute their own trigrams. The hash is blake2b, so vectors
    are stable across processes and platforms.
    """

    def __init__(self, dim: int = 256, n: int = 3) -> None:
        self.dim = dim
        self.n = n

    def _bucket(self, gram: str) -> int:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def vector(self, text: str) -> np.ndarray:
        norm = " " + _WS.sub(" ", text.strip()).casefold() + " "
        vec = np.zeros(self.dim, dtype=np.float64)
        if len(norm.strip()) == 0:
            return vec
        for i in range(len(norm) - self.n + 1):
            vec[self._bucket(norm[i : i + self.n])] += 1.0
        return vec / np.linalg.norm(vec)

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        return [self.vector(t).tolist() for t in texts]


def node_text(node: EntityNode) -> str:
    return f"{node.name} ({node.node_type})"


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"cannot compare vectors of shape {a.shape} and {b.shape}")
    a, b = _unit_scale(a), _unit_scale(b)
    return float(np.clip(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)), -1.0, 1.0))


def _unit_scale(v: np.ndarray) -> np.ndarray:
    # dividing by the largest magnitude first keeps tiny vectors from underflowing
    peak = np.max(np.abs(v), axis=-1, keepdims=True) if v.size else np.zeros(1)
    if np.any(peak == 0.0):
        raise UndefinedSimilarityError("cosine similarity is undefined for a zero vector")
    return v / peak


@dataclass(frozen=True)
class ScoredMatch:
    target_id: str
    score: float
    kind: str  # "node" or "type"


def embed_all(graph: KnowledgeGraph, provider: EmbeddingProvider, batch_size: int = 256) -> int:
    """Embed every node and type that lacks a vector. Returns the number written."""
    with graph.write():
        pending_nodes = [n for n in graph.nodes() if n.embedding is None]
        pending_types = [r for r in graph.type_records() if r.embedding is None]
        texts = [node_text(n) for n in pending_nodes] + [r.type_name for r in pending_types]
        if not texts:
            return 0
        vectors: list[np.ndarray] = []
        for start in range(0, len(texts), batch_size):
            chunk = texts[start : start + batch_size]
            out = provider.embed(chunk)
            if len(out) != len(chunk):
                raise ProviderError(f"embedder returned {len(out)} vectors for {len(chunk)} texts", step="embed")
            vectors.extend(as_vector(v) for v in out)
        dims = {v.shape[0] for v in vectors}
        if graph.embedding_dim is not None:
            dims.add(graph.embedding_dim)
        if len(dims) != 1:
            raise DimensionMismatchError(f"embedder produced inconsistent dimensions {sorted(dims)}")
        for node, vec in zip(pending_nodes, vectors):
            graph.set_node_embedding(node.id, vec)
        for record, vec in zip(pending_types, vectors[len(pending_nodes) :]):
            graph.set_type_embedding(record.type_name, vec)
        return len(vectors)


# Cosines that agree to this many decimals count as tied. Mathematically equal
# similarities can differ in the last bits depending on summation order.
TIE_DECIMALS = 12


def _rank(ids: Sequence[str], scores: np.ndarray, k: int, kind: str) -> list[ScoredMatch]:
    rounded = np.round(scores, TIE_DECIMALS)
    order = sorted(range(len(ids)), key=lambda i: (-rounded[i], ids[i]))
    return [ScoredMatch(ids[i], float(np.clip(scores[i], -1.0, 1.0)), kind) for i in order[:k]]


def _scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    matrix, query = _unit_scale(matrix), _unit_scale(query)
    return (matrix @ query) / (np.linalg.norm(matrix, axis=1) * np.linalg.norm(query))


class EmbeddingIndex:
    """Dense snapshot of a graph's node and type vectors for exact search."""

    def __init__(self, graph: KnowledgeGraph) -> None:
        with graph.read():
            nodes = [n for n in graph.nodes() if n.embedding is not None]
            types = [r for r in graph.type_records() if r.embedding is not None]
            self.dim = graph.embedding_dim
            self.version = graph.version
        self.node_ids = [n.id for n in nodes]
        self.type_names = [r.type_name for r in types]
        self._node_matrix = np.vstack([n.embedding for n in nodes]) if nodes else None
        self._type_matrix = np.vstack([r.embedding for r in types]) if types else None

    def _check_query(self, query_vec) -> np.ndarray:
        q = as_vector(query_vec)
        if self.dim is not None and q.shape[0] != self.dim:
            raise DimensionMismatchError(f"query has dimension {q.shape[0]}, index expects {self.dim}")
        return q

    def top_k_nodes(self, query_vec, k: int) -> list[ScoredMatch]:
        if k < 1:
            raise ValueError("k must be >= 1")
        if self._node_matrix is None:
            return []
        q = self._check_query(query_vec)
        return _rank(self.node_ids, _scores(self._node_matrix, q), k, "node")

    def top_type(self, query_vec) -> ScoredMatch:
        if self._type_matrix is None:
            raise NotFoundError("no embedded node types in the index")
        q = self._check_query(query_vec)
        return _rank(self.type_names, _scores(self._type_matrix, q), 1, "type")[0]


def top_k_nodes(graph: KnowledgeGraph, query_vec, k: int) -> list[ScoredMatch]:
    return EmbeddingIndex(graph).top_k_nodes(query_vec, k)


def top_type(graph: KnowledgeGraph, query_vec) -> ScoredMatch:
    return EmbeddingIndex(graph).top_type(query_vec)
