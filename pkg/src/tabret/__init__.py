"""Late-interaction table retrieval for open-domain question answering.

The package turns raw tables into a deduplicated corpus, represents each
table as a small set of column-level vectors and each question as either
noun-phrase vectors or learned seed-attention vectors, and ranks tables by
a sum of per-vector max similarities. Training sharpens the shared token
embeddings and attention parameters with an in-batch contrastive loss.
"""

from .corpus import (
    Corpus,
    DistinctTable,
    Question,
    RawTable,
    TableMapping,
    load_mapping,
    load_questions,
    load_tables,
    merge_same_header,
    prepare_corpus,
    save_mapping,
    save_questions,
    save_tables,
)
from .embed import EmbedderConfig, ExternalRecord, VocabTable
from .errors import FingerprintMismatchError, SchemaError, TabretError
from .evaluation import (
    coherence_matrices,
    evaluate_model,
    generate_synthetic_benchmark,
    latency_bench,
    recall_at_k,
    run_ablations,
)
from .model import (
    ABLATIONS,
    MODES,
    ModelParams,
    load_checkpoint,
    save_checkpoint,
)
from .score import (
    Index,
    ScoredTable,
    brute_force_retrieve,
    build_index,
    load_index,
    retrieve_topk,
    save_index,
    score_pair,
)
from .textproc import analyze_question, extract_noun_phrases, linearize_table, tokenize
from .train import TrainConfig, mine_hard_negatives, train

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS",
    "Corpus",
    "DistinctTable",
    "EmbedderConfig",
    "ExternalRecord",
    "FingerprintMismatchError",
    "Index",
    "MODES",
    "ModelParams",
    "Question",
    "RawTable",
    "SchemaError",
    "ScoredTable",
    "TabretError",
    "TableMapping",
    "TrainConfig",
    "VocabTable",
    "analyze_question",
    "brute_force_retrieve",
    "build_index",
    "coherence_matrices",
    "evaluate_model",
    "extract_noun_phrases",
    "generate_synthetic_benchmark",
    "latency_bench",
    "linearize_table",
    "load_checkpoint",
    "load_index",
    "load_mapping",
    "load_questions",
    "load_tables",
    "merge_same_header",
    "mine_hard_negatives",
    "prepare_corpus",
    "recall_at_k",
    "retrieve_topk",
    "run_ablations",
    "save_checkpoint",
    "save_index",
    "save_mapping",
    "save_questions",
    "save_tables",
    "score_pair",
    "tokenize",
    "train",
    "__version__",
]
