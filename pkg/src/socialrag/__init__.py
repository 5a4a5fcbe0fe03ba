"""Two-layer retrieval-augmented summarization over social-media posts."""

from .corpus import CorpusFilter, CorpusStats, CorpusStore, Post, ingest_corpus, load_corpus, parse_post_record
from .index import FieldConfig, Index, RetrievalResult, build_index, load_index, save_index, tokenize
from .llm import BackendConfig, GenerationRequest, GenerationResponse, HttpBackend, MockBackend, MockScript
from .pipeline import AnswerBundle, PipelineConfig, answer_query, load_templates

__version__ = "0.1.0"

__all__ = [
    "AnswerBundle",
    "BackendConfig",
    "CorpusFilter",
    "CorpusStats",
    "CorpusStore",
    "FieldConfig",
    "GenerationRequest",
    "GenerationResponse",
    "HttpBackend",
    "Index",
    "MockBackend",
    "MockScript",
    "PipelineConfig",
    "Post",
    "RetrievalResult",
    "answer_query",
    "build_index",
    "ingest_corpus",
    "load_corpus",
    "load_index",
    "load_templates",
    "parse_post_record",
    "save_index",
    "tokenize",
]
