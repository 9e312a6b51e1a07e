"""Workflow handlers behind both the HTTP service and the CLI.

Each handler takes a pydantic request model, does file IO plus a call into
the core package, and returns a pydantic response model. The CLI invokes
these functions in process; the FastAPI app exposes the same functions as
endpoints, so a request body and a set of CLI flags describe identical work.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field

from . import evaluation
from .corpus import (
    Corpus,
    Question,
    load_mapping,
    load_questions,
    load_tables,
    merge_same_header,
    prepare_corpus,
    save_mapping,
    save_questions,
    save_tables,
)
from .embed import EmbedderConfig, ExternalRecord, VocabTable, read_external_embeddings
from .errors import SchemaError
from .model import ModelParams, load_checkpoint, save_checkpoint
from .score import build_index, load_index, retrieve_topk, save_index
from .textproc import analyze_question, linearize_table
from .train import TrainConfig, train

__all__ = [
    "PipelineSettings",
    "TrainSettings",
    "SynthRequest",
    "IngestRequest",
    "BuildIndexRequest",
    "RetrieveRequest",
    "TrainRequest",
    "EvalRequest",
    "BenchRequest",
    "ExplainRequest",
    "run_synth",
    "run_ingest",
    "run_build_index",
    "run_retrieve",
    "run_train",
    "run_eval",
    "run_bench",
    "run_explain",
]

EVAL_REPORT_FORMAT = "tabret-eval-report"
BENCH_REPORT_FORMAT = "tabret-bench-report"
EXPLAIN_REPORT_FORMAT = "tabret-coherence-report"


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PipelineSettings(_Model):
    """Model construction settings used when no checkpoint is given."""

    embedder: Literal["hashed", "vocab", "external"] = "hashed"
    dim: int = Field(default=64, ge=2)
    mode: Literal["explicit", "implicit"] = "implicit"
    ablation: Literal["full", "no_S1", "no_S2", "no_S2_head", "no_S2_value", "no_S1_S2"] = "full"
    pooling: Literal["mean", "max", "attentive"] = "mean"
    n_seeds: int = Field(default=3, ge=1)
    projection_dim: Optional[int] = Field(default=None, ge=1)
    context_window: int = Field(default=0, ge=0)
    context_alpha: float = Field(default=0.0, ge=0.0, lt=1.0)
    seed: int = 0
    external_embeddings: Optional[str] = None


class TrainSettings(_Model):
    """Optimizer settings; defaults mirror TrainConfig."""

    learning_rate: float = Field(default=2e-5, gt=0)
    weight_decay: float = Field(default=0.01, ge=0)
    warmup_ratio: float = Field(default=0.05, ge=0, lt=1)
    batch_size: int = Field(default=32, ge=1)
    max_epochs: int = Field(default=30, ge=0, le=150)
    hard_negatives: bool = False
    negatives_per_question: int = Field(default=1, ge=1)
    remine_every: int = Field(default=5, ge=1)
    seed: int = 0


class SynthRequest(_Model):
    out_dir: str
    seed: int = 0
    n_tables: int = Field(default=100, ge=2)
    columns_per_table: int = Field(default=4, ge=1)
    vocab_size: int = Field(default=500, ge=2)
    questions_per_table: int = Field(default=2, ge=1)
    distractor_tokens: int = Field(default=3, ge=0)
    confuser_tokens: int = Field(default=0, ge=0)


class SynthResponse(_Model):
    tables_path: str
    train_questions_path: str
    dev_questions_path: str
    test_questions_path: str
    table_count: int
    question_count: int


class IngestRequest(_Model):
    tables_path: str
    corpus_path: str
    mapping_path: str
    max_rows: int = Field(default=5, ge=1)
    token_budget: int = Field(default=0, ge=0)
    seed: int = 0


class IngestResponse(_Model):
    corpus_path: str
    mapping_path: str
    input_tables: int
    distinct_tables: int


class BuildIndexRequest(_Model):
    corpus_path: str
    index_path: str
    checkpoint_path: Optional[str] = None
    settings: PipelineSettings = PipelineSettings()


class BuildIndexResponse(_Model):
    index_path: str
    table_count: int
    representation_rows: int
    fingerprint: str


class RetrieveRequest(_Model):
    index_path: str
    questions_path: str
    rankings_path: str
    k: int = Field(default=10, ge=1)
    checkpoint_path: Optional[str] = None
    settings: PipelineSettings = PipelineSettings()


class RetrieveResponse(_Model):
    rankings_path: str
    question_count: int
    k: int


class TrainRequest(_Model):
    corpus_path: str
    mapping_path: str
    train_questions_path: str
    dev_questions_path: str
    checkpoint_path: str
    history_path: str
    settings: PipelineSettings = PipelineSettings()
    training: TrainSettings = TrainSettings()


class TrainResponse(_Model):
    checkpoint_path: str
    history_path: str
    epochs_run: int
    best_epoch: int
    best_dev_recall: float


class EvalRequest(_Model):
    questions_path: str
    mapping_path: str
    report_path: str
    ks: list[int] = Field(default=[1, 5, 20])
    index_path: Optional[str] = None
    corpus_path: Optional[str] = None
    checkpoint_path: Optional[str] = None
    settings: PipelineSettings = PipelineSettings()


class EvalResponse(_Model):
    report_path: str
    recall: dict[str, float]
    question_count: int


class BenchRequest(_Model):
    index_path: str
    questions_path: str
    report_path: str
    k: int = Field(default=10, ge=1)
    warmup: int = Field(default=3, ge=0)
    repeats: int = Field(default=5, ge=1)
    checkpoint_path: Optional[str] = None
    settings: PipelineSettings = PipelineSettings()
    threads: Optional[int] = Field(default=None, ge=1)


class BenchResponse(_Model):
    report_path: str
    mean_ms: float
    p50_ms: float
    p95_ms: float
    corpus_size: int


class ExplainRequest(_Model):
    corpus_path: str
    question: str
    table_id: str
    report_path: str
    mapping_path: Optional[str] = None
    checkpoint_path: Optional[str] = None
    settings: PipelineSettings = PipelineSettings()


class ExplainResponse(_Model):
    report_path: str
    seed_count: int
    question_token_count: int
    slot_count: int


def _ensure_parent(path: str) -> None:
    parent = Path(path).parent
    if str(parent) not in ("", "."):
        os.makedirs(parent, exist_ok=True)


def _write_json(path: str, payload: dict) -> None:
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _load_prepared_corpus(corpus_path: str, mapping_path: str | None) -> Corpus:
    """Reload an ingested corpus file; distinct ids are the record ids."""
    merged = merge_same_header(load_tables(corpus_path))
    if mapping_path is None:
        return merged
    return Corpus(tables=merged.tables, mapping=load_mapping(mapping_path))


def _load_externals(settings: PipelineSettings) -> dict[str, ExternalRecord] | None:
    if settings.external_embeddings is None:
        if settings.embedder == "external":
            raise SchemaError("external embedder requires an external_embeddings path")
        return None
    return read_external_embeddings(settings.external_embeddings)


def _vocab_tokens(corpus: Corpus, questions: list[Question]) -> list[str]:
    tokens: set[str] = set()
    for table in corpus.tables:
        tokens.update(t.text for t in linearize_table(table).tokens)
    for question in questions:
        tokens.update(t.text for t in analyze_question(question.question).tokens)
    return sorted(tokens)


def _build_params(
    settings: PipelineSettings,
    checkpoint_path: str | None,
    corpus: Corpus | None = None,
    questions: list[Question] | None = None,
) -> ModelParams:
    """Model parameters from a checkpoint, or fresh ones from settings.

    A checkpoint fully describes the model and wins over settings. Without
    one, a vocab-embedder model needs the corpus at hand to enumerate its
    vocabulary, so commands that only see an index require a checkpoint for
    vocab pipelines.
    """
    if checkpoint_path is not None:
        return load_checkpoint(checkpoint_path)
    vocab = None
    if settings.embedder == "vocab":
        if corpus is None:
            raise SchemaError(
                "a vocab-embedder model needs a checkpoint (or a corpus to "
                "build its vocabulary from)"
            )
        vocab = VocabTable.build(
            _vocab_tokens(corpus, questions or []), settings.dim, settings.seed
        )
    embedder = EmbedderConfig(
        kind=settings.embedder,
        dim=settings.dim,
        seed=settings.seed,
        context_window=settings.context_window,
        context_alpha=settings.context_alpha,
    )
    return ModelParams.initialize(
        embedder=embedder,
        mode=settings.mode,
        ablation=settings.ablation,
        n_seeds=settings.n_seeds,
        pooling=settings.pooling,
        projection_dim=settings.projection_dim,
        vocab=vocab,
        init_seed=settings.seed,
    )


def run_synth(request: SynthRequest) -> SynthResponse:
    bench = evaluation.generate_synthetic_benchmark(
        seed=request.seed,
        n_tables=request.n_tables,
        columns_per_table=request.columns_per_table,
        vocab_size=request.vocab_size,
        questions_per_table=request.questions_per_table,
        distractor_tokens=request.distractor_tokens,
        confuser_tokens=request.confuser_tokens,
    )
    out = Path(request.out_dir)
    os.makedirs(out, exist_ok=True)
    paths = {
        "tables": out / "tables.jsonl",
        "train": out / "questions_train.jsonl",
        "dev": out / "questions_dev.jsonl",
        "test": out / "questions_test.jsonl",
    }
    save_tables(paths["tables"], bench.tables)
    save_questions(paths["train"], bench.train_questions)
    save_questions(paths["dev"], bench.dev_questions)
    save_questions(paths["test"], bench.test_questions)
    return SynthResponse(
        tables_path=str(paths["tables"]),
        train_questions_path=str(paths["train"]),
        dev_questions_path=str(paths["dev"]),
        test_questions_path=str(paths["test"]),
        table_count=len(bench.tables),
        question_count=len(bench.train_questions)
        + len(bench.dev_questions)
        + len(bench.test_questions),
    )


def run_ingest(request: IngestRequest) -> IngestResponse:
    tables = load_tables(request.tables_path)
    corpus = prepare_corpus(
        tables,
        max_rows=request.max_rows,
        token_budget=request.token_budget or None,
        seed=request.seed,
    )
    _ensure_parent(request.corpus_path)
    save_tables(request.corpus_path, corpus.tables)
    _ensure_parent(request.mapping_path)
    save_mapping(request.mapping_path, corpus.mapping)
    return IngestResponse(
        corpus_path=request.corpus_path,
        mapping_path=request.mapping_path,
        input_tables=len(tables),
        distinct_tables=len(corpus),
    )


def run_build_index(request: BuildIndexRequest) -> BuildIndexResponse:
    corpus = _load_prepared_corpus(request.corpus_path, None)
    params = _build_params(request.settings, request.checkpoint_path, corpus)
    externals = _load_externals(request.settings)
    index = build_index(corpus, params, externals)
    _ensure_parent(request.index_path)
    save_index(request.index_path, index)
    return BuildIndexResponse(
        index_path=request.index_path,
        table_count=len(index),
        representation_rows=int(index.reps.shape[0]),
        fingerprint=index.fingerprint,
    )


def run_retrieve(request: RetrieveRequest) -> RetrieveResponse:
    index = load_index(request.index_path)
    params = _build_params(request.settings, request.checkpoint_path)
    externals = _load_externals(request.settings)
    questions = load_questions(request.questions_path)
    _ensure_parent(request.rankings_path)
    with open(request.rankings_path, "w", encoding="utf-8") as fh:
        for question in questions:
            external = None if externals is None else externals.get(question.id)
            ranked = retrieve_topk(
                analyze_question(question.question),
                index,
                request.k,
                params,
                external,
            )
            record = {
                "question_id": question.id,
                "ranking": [
                    {"table_id": s.distinct_id, "score": s.score} for s in ranked
                ],
            }
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")))
            fh.write("\n")
    return RetrieveResponse(
        rankings_path=request.rankings_path,
        question_count=len(questions),
        k=request.k,
    )


def run_train(request: TrainRequest) -> TrainResponse:
    corpus = _load_prepared_corpus(request.corpus_path, request.mapping_path)
    train_questions = load_questions(request.train_questions_path)
    dev_questions = load_questions(request.dev_questions_path)
    params = _build_params(
        request.settings,
        None,
        corpus,
        train_questions + dev_questions,
    )
    externals = _load_externals(request.settings)
    config = TrainConfig(
        learning_rate=request.training.learning_rate,
        weight_decay=request.training.weight_decay,
        warmup_ratio=request.training.warmup_ratio,
        batch_size=request.training.batch_size,
        max_epochs=request.training.max_epochs,
        hard_negatives=request.training.hard_negatives,
        negatives_per_question=request.training.negatives_per_question,
        remine_every=request.training.remine_every,
        rng_seed=request.training.seed,
    )
    best, history = train(params, corpus, train_questions, dev_questions, config, externals)
    _ensure_parent(request.checkpoint_path)
    save_checkpoint(request.checkpoint_path, best)
    _ensure_parent(request.history_path)
    with open(request.history_path, "w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry, sort_keys=True, separators=(",", ":")))
            fh.write("\n")
    if history:
        best_entry = max(history, key=lambda e: (e["dev_recall@1"], -e["epoch"]))
        best_epoch = int(best_entry["epoch"])
        best_recall = float(best_entry["dev_recall@1"])
        epochs_run = int(history[-1]["epoch"])
    else:
        best_epoch, best_recall, epochs_run = 0, 0.0, 0
    return TrainResponse(
        checkpoint_path=request.checkpoint_path,
        history_path=request.history_path,
        epochs_run=epochs_run,
        best_epoch=best_epoch,
        best_dev_recall=best_recall,
    )


def run_eval(request: EvalRequest) -> EvalResponse:
    if request.index_path is None and request.corpus_path is None:
        raise SchemaError("eval needs an index_path or a corpus_path")
    questions = load_questions(request.questions_path)
    mapping = load_mapping(request.mapping_path)
    externals = _load_externals(request.settings)
    if request.index_path is not None:
        index = load_index(request.index_path)
        params = _build_params(request.settings, request.checkpoint_path)
    else:
        corpus = _load_prepared_corpus(request.corpus_path, request.mapping_path)
        params = _build_params(request.settings, request.checkpoint_path, corpus)
        index = build_index(corpus, params, externals)
    max_k = max(request.ks)
    rankings = []
    golds = []
    for question in questions:
        external = None if externals is None else externals.get(question.id)
        ranked = retrieve_topk(
            analyze_question(question.question), index, max_k, params, external
        )
        rankings.append([s.distinct_id for s in ranked])
        golds.append(question.gold_table_ids)
    report = evaluation.recall_at_k(rankings, golds, mapping, request.ks)
    payload = {
        "format": EVAL_REPORT_FORMAT,
        "version": 1,
        "k": sorted(set(request.ks)),
        **report.as_dict(),
    }
    _write_json(request.report_path, payload)
    return EvalResponse(
        report_path=request.report_path,
        recall={str(k): v for k, v in sorted(report.recall.items())},
        question_count=report.question_count,
    )


def run_bench(request: BenchRequest) -> BenchResponse:
    index = load_index(request.index_path)
    params = _build_params(request.settings, request.checkpoint_path)
    externals = _load_externals(request.settings)
    questions = load_questions(request.questions_path)
    report = evaluation.latency_bench(
        index,
        questions,
        params,
        k=request.k,
        warmup=request.warmup,
        repeats=request.repeats,
        externals=externals,
    )
    threads = request.threads or int(os.environ.get("TABRET_THREADS", 0)) or (os.cpu_count() or 1)
    payload = {
        "format": BENCH_REPORT_FORMAT,
        "version": 1,
        "threads": threads,
        **report.as_dict(),
    }
    _write_json(request.report_path, payload)
    return BenchResponse(
        report_path=request.report_path,
        mean_ms=report.mean_ms,
        p50_ms=report.p50_ms,
        p95_ms=report.p95_ms,
        corpus_size=report.corpus_size,
    )


def run_explain(request: ExplainRequest) -> ExplainResponse:
    corpus = _load_prepared_corpus(request.corpus_path, request.mapping_path)
    table_id = request.table_id
    if request.mapping_path is not None and table_id in corpus.mapping.entries:
        table_id = corpus.mapping.resolve(table_id)
    table = corpus.table(table_id)
    params = _build_params(request.settings, request.checkpoint_path, corpus)
    externals = _load_externals(request.settings)
    question = analyze_question(request.question)
    matrices = evaluation.coherence_matrices(
        params,
        question,
        table,
        external_question=None,
        external_table=None if externals is None else externals.get(table_id),
    )
    payload = {
        "format": EXPLAIN_REPORT_FORMAT,
        "version": 1,
        "question": request.question,
        "table_id": table_id,
        **matrices.as_dict(),
    }
    _write_json(request.report_path, payload)
    return ExplainResponse(
        report_path=request.report_path,
        seed_count=int(matrices.seed_to_question.shape[0]),
        question_token_count=len(matrices.question_tokens),
        slot_count=len(matrices.table_slots),
    )
