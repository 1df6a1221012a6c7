"""Reasoning-path retrieval over hyperlink graphs with a path reader."""
from .corpus import Corpus, Granularity, Paragraph, WikiGraph, build_graph, ingest_corpus
from .encoder import EncoderMode, EncoderParams, init_encoder_params
from .errors import (ConfigError, DataIntegrityError, DivergenceError, FormatError,
                     GenerationError, IntegrityError, NumericalError, OrderingError,
                     ParseError, ReasonPathError, UsageError)
from .metrics import Metrics, eval_answers, eval_retrieval
from .reader import AnswerPrediction, PathReader, ReaderParams, init_reader_params
from .retriever import (EOE, ReasoningPath, RecurrentRetriever, RetrievalConfig,
                        RetrieverParams, SearchMode, beam_search, init_retriever_params)
from .supervision import (AnswerType, ReaderExample, RetrieverExample, TrainingQuestion,
                          derive_gold_path)
from .synthetic import SyntheticConfig, gen_synthetic
from .tfidf import SparseIndex, TfidfRetriever, build_index

__version__ = "0.1.0"

__all__ = [
    "AnswerPrediction", "AnswerType", "ConfigError", "Corpus", "DataIntegrityError",
    "DivergenceError", "EOE", "EncoderMode", "EncoderParams", "FormatError",
    "GenerationError", "Granularity", "IntegrityError", "Metrics", "NumericalError",
    "OrderingError", "Paragraph", "ParseError", "PathReader", "ReaderExample", "ReaderParams",
    "ReasonPathError", "ReasoningPath", "RecurrentRetriever", "RetrievalConfig",
    "RetrieverExample", "RetrieverParams", "SearchMode", "SparseIndex", "SyntheticConfig",
    "TfidfRetriever", "TrainingQuestion", "UsageError", "WikiGraph", "beam_search",
    "build_graph", "build_index", "derive_gold_path", "eval_answers", "eval_retrieval",
    "gen_synthetic", "ingest_corpus", "init_encoder_params", "init_reader_params",
    "init_retriever_params",
]
