"""notekg: knowledge graphs of disease relations from clinical notes.

The pipeline ingests and deduplicates notes, identifies disease-specific
ones, queries a pluggable model backend with templated questions, parses and
aggregates the answers into typed relations, and assembles them into a
directed knowledge graph with an evaluation harness on top.
"""

__version__ = "0.1.0"

from .corpus import ClinicalNote, Corpus, ingest_notes, preprocess
from .extraction import aggregate_relations, expand_results, run_queries
from .kgraph import KnowledgeGraph, build_graph, export, load_graph
from .prompting import EntityCategory, PromptStyle, build_prompt, instantiate_questions
from .similarity import SimilarityProvider, TrigramProvider, cosine

__all__ = [
    "__version__",
    "ClinicalNote",
    "Corpus",
    "ingest_notes",
    "preprocess",
    "aggregate_relations",
    "expand_results",
    "run_queries",
    "KnowledgeGraph",
    "build_graph",
    "export",
    "load_graph",
    "EntityCategory",
    "PromptStyle",
    "build_prompt",
    "instantiate_questions",
    "SimilarityProvider",
    "TrigramProvider",
    "cosine",
]
