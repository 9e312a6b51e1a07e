"""Evaluation harness.

Recall@K over rankings, a wall-clock latency benchmark of the full query
path, interpretability matrices that expose what each seed attends to, an
ablation runner that retrains representation variants under identical seeds
and data, and a synthetic benchmark generator whose lexical-overlap
construction makes the retrieval task learnable without any real dataset.
"""

from __future__ import annotations

import string
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Corpus, Question, RawTable, TableMapping
from .embed import ExternalRecord
from .errors import SchemaError
from .model import ModelParams, embed_sequence, question_representation, table_representation
from .reprs import seed_attention_weights, softmax
from .score import Index, retrieve_topk
from .textproc import TokenizedQuestion, analyze_question, linearize_table
from .train import TrainConfig, train

__all__ = [
    "EvalReport",
    "LatencyReport",
    "CoherenceMatrices",
    "SyntheticBenchmark",
    "recall_at_k",
    "latency_bench",
    "coherence_matrices",
    "run_ablations",
    "generate_synthetic_benchmark",
]


@dataclass(frozen=True)
class EvalReport:
    """Recall@K per cutoff over a question set."""

    recall: dict[int, float]
    question_count: int

    def as_dict(self) -> dict:
        return {
            "recall": {str(k): self.recall[k] for k in sorted(self.recall)},
            "question_count": self.question_count,
        }


@dataclass(frozen=True)
class LatencyReport:
    """Per-query wall clock of the full query path, in milliseconds."""

    mean_ms: float
    p50_ms: float
    p95_ms: float
    query_count: int
    corpus_size: int
    warmup: int
    repeats: int

    def as_dict(self) -> dict:
        return {
            "mean_ms": self.mean_ms,
            "p50_ms": self.p50_ms,
            "p95_ms": self.p95_ms,
            "query_count": self.query_count,
            "corpus_size": self.corpus_size,
            "warmup": self.warmup,
            "repeats": self.repeats,
        }


def recall_at_k(
    rankings: Sequence[Sequence[str]],
    gold_table_ids: Sequence[Sequence[str]],
    mapping: TableMapping,
    ks: Sequence[int],
) -> EvalReport:
    """Fraction of questions whose top-K contains any gold table.

    ``rankings`` hold distinct table ids; gold ids are original ids and are
    resolved through the mapping before comparison.
    """
    if len(rankings) != len(gold_table_ids):
        raise ValueError("one ranking per question required")
    if len(rankings) == 0:
        raise ValueError("cannot evaluate an empty question set")
    cutoffs = sorted(set(int(k) for k in ks))
    if not cutoffs or cutoffs[0] < 1:
        raise ValueError("cutoffs must be positive")
    hits = {k: 0 for k in cutoffs}
    for ranking, golds in zip(rankings, gold_table_ids):
        if not golds:
            raise SchemaError("question without gold tables cannot be evaluated")
        resolved = {mapping.resolve(g) for g in golds}
        for k in cutoffs:
            if any(r in resolved for r in ranking[:k]):
                hits[k] += 1
    count = len(rankings)
    return EvalReport(
        recall={k: hits[k] / count for k in cutoffs}, question_count=count
    )


def latency_bench(
    index: Index,
    questions: Sequence[Question],
    params: ModelParams,
    k: int = 10,
    warmup: int = 3,
    repeats: int = 5,
    externals: dict[str, ExternalRecord] | None = None,
) -> LatencyReport:
    """Time the full query path: tokenize, represent, score, rank top-K.

    Warmup queries run first and are not recorded; each question is then
    timed ``repeats`` times and the distribution over all timed runs is
    reported.
    """
    if not questions:
        raise ValueError("latency benchmark needs at least one question")
    if warmup < 0 or repeats < 1:
        raise ValueError("warmup must be >= 0 and repeats >= 1")

    def run(question: Question) -> None:
        external = None if externals is None else externals.get(question.id)
        retrieve_topk(analyze_question(question.question), index, k, params, external)

    for i in range(warmup):
        run(questions[i % len(questions)])
    timings = []
    for _ in range(repeats):
        for question in questions:
            start = time.perf_counter()
            run(question)
            timings.append((time.perf_counter() - start) * 1000.0)
    samples = np.array(timings)
    return LatencyReport(
        mean_ms=float(samples.mean()),
        p50_ms=float(np.percentile(samples, 50)),
        p95_ms=float(np.percentile(samples, 95)),
        query_count=len(questions),
        corpus_size=len(index),
        warmup=warmup,
        repeats=repeats,
    )


@dataclass(frozen=True)
class CoherenceMatrices:
    """Row-stochastic views of what each seed looks at.

    ``seed_to_question[i, l]`` is seed i's attention on question token l;
    ``seed_to_table[i, r]`` softmax-normalizes seed i's interaction scores
    over the table's representation rows.
    """

    seed_to_question: np.ndarray
    seed_to_table: np.ndarray
    question_tokens: list[str]
    table_slots: list[str]

    def as_dict(self) -> dict:
        return {
            "question_tokens": self.question_tokens,
            "table_slots": self.table_slots,
            "seed_to_question": [[float(x) for x in row] for row in self.seed_to_question],
            "seed_to_table": [[float(x) for x in row] for row in self.seed_to_table],
        }


def coherence_matrices(
    params: ModelParams,
    question: TokenizedQuestion,
    table,
    external_question: ExternalRecord | None = None,
    external_table: ExternalRecord | None = None,
) -> CoherenceMatrices:
    """Seed-to-token and seed-to-slot coherence for one question and table.

    Only defined for the implicit (seed attention) question mode.
    """
    if params.mode != "implicit" or not params.question_side_uses_seeds():
        raise SchemaError("coherence matrices require the implicit question mode")
    embedded = embed_sequence(params, question.tokens, external_question)
    seed_to_question = seed_attention_weights(embedded, params.seed_bank)

    linearized = linearize_table(table)
    question_reprs = question_representation(params, question, external_question)
    table_reprs = table_representation(params, linearized, external_table)
    interactions = question_reprs.matrix @ table_reprs.matrix.T
    seed_to_table = softmax(interactions, axis=1)

    slot_labels = []
    for slot, j in table_reprs.kinds:
        if slot == "sequence":
            slot_labels.append("sequence")
        else:
            slot_labels.append(f"{slot}:{table.headers[j]}")
    return CoherenceMatrices(
        seed_to_question=seed_to_question,
        seed_to_table=seed_to_table,
        question_tokens=[t.text for t in question.tokens],
        table_slots=slot_labels,
    )


# ---------------------------------------------------------------------------
# Synthetic benchmark.


@dataclass(frozen=True)
class SyntheticBenchmark:
    tables: list[RawTable]
    train_questions: list[Question]
    dev_questions: list[Question]
    test_questions: list[Question]


_FUNCTION_WORDS = ("which", "the", "on", "what", "is", "of", "in", "for", "a")


def _make_word(rng: np.random.Generator) -> str:
    letters = string.ascii_lowercase
    length = int(rng.integers(3, 9))
    return "".join(letters[int(i)] for i in rng.integers(0, len(letters), size=length))


def generate_synthetic_benchmark(
    seed: int = 0,
    n_tables: int = 100,
    columns_per_table: int = 4,
    vocab_size: int = 500,
    questions_per_table: int = 2,
    distractor_tokens: int = 3,
    confuser_tokens: int = 0,
) -> SyntheticBenchmark:
    """Deterministic lexical-overlap benchmark.

    Tables draw headers and cell values from a closed pseudo-word vocabulary;
    every question mixes a few of its gold table's header and first-row value
    words with function-word distractors, so exact lexical matching is
    informative but noisy. ``confuser_tokens`` header words borrowed from
    other tables can be mixed in to make tables genuinely confusable.
    Questions split 70/15/15 into train/dev/test.
    """
    if n_tables < 2:
        raise SchemaError("need at least two tables")
    if columns_per_table < 1:
        raise SchemaError("need at least one column")
    if vocab_size < columns_per_table * 2:
        raise SchemaError("vocabulary too small for the requested tables")
    if questions_per_table < 1:
        raise SchemaError("need at least one question per table")
    if n_tables * questions_per_table < 3:
        raise SchemaError("too few questions to form train/dev/test splits")
    rng = np.random.default_rng(seed)

    words: list[str] = []
    seen = set()
    while len(words) < vocab_size:
        word = _make_word(rng)
        if word not in seen and word not in _FUNCTION_WORDS:
            seen.add(word)
            words.append(word)

    tables = []
    header_signatures = set()
    headers_by_table = []
    first_rows = []
    for t in range(n_tables):
        while True:
            headers = [
                words[int(i)]
                for i in rng.choice(vocab_size, size=columns_per_table, replace=False)
            ]
            signature = tuple(headers)
            if signature not in header_signatures:
                header_signatures.add(signature)
                break
        n_rows = int(rng.integers(2, 6))
        rows = [
            [words[int(i)] for i in rng.integers(0, vocab_size, size=columns_per_table)]
            for _ in range(n_rows)
        ]
        tables.append(
            RawTable(id=f"tbl{t:05d}", headers=headers, rows=rows)
        )
        headers_by_table.append(headers)
        first_rows.append(rows[0])

    questions = []
    for t in range(n_tables):
        for q in range(questions_per_table):
            n_header_words = int(rng.integers(1, min(2, columns_per_table) + 1))
            header_cols = rng.choice(columns_per_table, size=n_header_words, replace=False)
            value_col = int(rng.integers(0, columns_per_table))
            tokens = [headers_by_table[t][int(c)] for c in header_cols]
            tokens.append(first_rows[t][value_col])
            for _ in range(confuser_tokens):
                confuser_table = int(rng.integers(0, n_tables - 1))
                if confuser_table >= t:
                    confuser_table += 1
                tokens.append(
                    headers_by_table[confuser_table][int(rng.integers(0, columns_per_table))]
                )
            for i in rng.integers(0, len(_FUNCTION_WORDS), size=distractor_tokens):
                tokens.append(_FUNCTION_WORDS[int(i)])
            order = rng.permutation(len(tokens))
            text = " ".join(tokens[int(i)] for i in order)
            questions.append(
                Question(id=f"q{t:05d}_{q}", question=text, gold_table_ids=[f"tbl{t:05d}"])
            )

    order = rng.permutation(len(questions))
    shuffled = [questions[int(i)] for i in order]
    n_total = len(shuffled)
    n_train = max(1, int(round(n_total * 0.70)))
    n_dev = max(1, int(round(n_total * 0.15)))
    n_train = min(n_train, n_total - 2)
    n_dev = min(n_dev, n_total - n_train - 1)
    return SyntheticBenchmark(
        tables=tables,
        train_questions=shuffled[:n_train],
        dev_questions=shuffled[n_train:n_train + n_dev],
        test_questions=shuffled[n_train + n_dev:],
    )


# ---------------------------------------------------------------------------
# Ablation runner.


def evaluate_model(
    params: ModelParams,
    corpus: Corpus,
    questions: Sequence[Question],
    ks: Sequence[int],
    externals: dict[str, ExternalRecord] | None = None,
) -> EvalReport:
    """Retrieve over the full corpus for every question and score recall@K."""
    from .score import build_index

    index = build_index(corpus, params, externals)
    max_k = max(int(k) for k in ks)
    rankings = []
    golds = []
    for question in questions:
        external = None if externals is None else externals.get(question.id)
        ranked = retrieve_topk(
            analyze_question(question.question), index, max_k, params, external
        )
        rankings.append([s.distinct_id for s in ranked])
        golds.append(question.gold_table_ids)
    return recall_at_k(rankings, golds, corpus.mapping, ks)


def run_ablations(
    base_params: ModelParams,
    corpus: Corpus,
    train_questions: Sequence[Question],
    dev_questions: Sequence[Question],
    test_questions: Sequence[Question],
    config: TrainConfig,
    ablations: Sequence[str] = ("full", "no_S1", "no_S2", "no_S2_head", "no_S2_value", "no_S1_S2"),
    ks: Sequence[int] = (1,),
) -> dict[str, EvalReport]:
    """Train and evaluate each representation variant under identical seeds
    and data. Every variant starts from a clone of ``base_params`` with only
    the ablation field changed, so initializations match row for row."""
    reports: dict[str, EvalReport] = {}
    for ablation in ablations:
        variant = base_params.clone()
        variant.ablation = ablation
        best, _ = train(variant, corpus, train_questions, dev_questions, config)
        reports[ablation] = evaluate_model(best, corpus, test_questions, ks)
    return reports
