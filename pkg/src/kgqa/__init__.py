"""Knowledge-graph question answering.

Build a property graph from QA pairs, answer questions by combining node
similarity, type similarity and fuzzy entity matching over the graph, then
rerank and paraphrase the retrieved facts.
"""

from .config import PipelineConfig
from .graph import EntityNode, KnowledgeGraph, NodeTypeRecord, TypedEdge, load_graph, save_graph
from .ingestion import Chunk, QAPair, SegmentationPolicy, load_qa_dataset, segment
from .pipeline import Pipeline, build_providers

__all__ = [
    "Chunk",
    "EntityNode",
    "KnowledgeGraph",
    "NodeTypeRecord",
    "Pipeline",
    "PipelineConfig",
    "QAPair",
    "SegmentationPolicy",
    "TypedEdge",
    "build_providers",
    "load_graph",
    "load_qa_dataset",
    "save_graph",
    "segment",
]

__version__ = "0.1.0"
