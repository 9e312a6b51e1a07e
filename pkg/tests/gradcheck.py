"""Finite-difference gradient checking for the training forward/backward pass.

Builds a catalog of small model configurations covering every trainable slot
(seed bank, attentive pools on both sides, projection, vocab rows) plus a
constructed max-tie batch, and compares analytic gradients against central
differences at 64-bit precision.
"""

from __future__ import annotations

import numpy as np

from tabret.corpus import DistinctTable, Question, TableMapping
from tabret.embed import EmbedderConfig, VocabTable
from tabret.model import ModelParams
from tabret.reprs import PoolingSpec
from tabret.textproc import analyze_question, linearize_table
from tabret.train import batch_loss_and_grads, prepare_question, prepare_table

from factories import distinct

FD_STEP = 1e-4

# Guard for near-zero gradient components: below this scale the comparison
# is effectively absolute, keeping central-difference noise out of the ratio.
REL_FLOOR = 1e-2


def _loss(params, questions, tables, golds) -> float:
    loss, _ = batch_loss_and_grads(params, questions, tables, golds, want_grads=False)
    return loss


def fd_gradients(params, questions, tables, golds, step: float = FD_STEP):
    """Central-difference gradients for every trainable coordinate."""
    fd = {}
    for name, array in params.trainable_arrays().items():
        grad = np.zeros_like(array)
        flat, gflat = array.reshape(-1), grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            plus = _loss(params, questions, tables, golds)
            flat[i] = original - step
            minus = _loss(params, questions, tables, golds)
            flat[i] = original
            gflat[i] = (plus - minus) / (2.0 * step)
        fd[name] = grad
    return fd


def max_relative_error(analytic: dict, numeric: dict) -> float:
    assert set(analytic) == set(numeric)
    worst = 0.0
    for name in analytic:
        a, f = analytic[name], numeric[name]
        scale = np.maximum(np.maximum(np.abs(a), np.abs(f)), REL_FLOOR)
        worst = max(worst, float(np.max(np.abs(a - f) / scale)))
    return worst


def check_config(params, questions, tables, golds) -> float:
    """Max relative error between analytic and numeric gradients."""
    _, analytic = batch_loss_and_grads(params, questions, tables, golds)
    numeric = fd_gradients(params, questions, tables, golds)
    return max_relative_error(analytic, numeric)


# ---------------------------------------------------------------------------
# Configuration catalog.

_TABLE_SPECS = [
    ("t0", ["team", "points"], [["spurs", "110"], ["heat", "95"]]),
    ("t1", ["city", "river"], [["cairo", "nile"]]),
    ("t2", ["season"], [["winter"], ["summer"], ["spring"]]),
    ("t3", ["coach", "year"], [["marta", "1999"], ["ivan", "2005"]]),
]

_QUESTION_TEXTS = [
    "which team scored 110 points",
    "what river runs through cairo",
    "which season is listed",
]


def _tables(count: int) -> list[DistinctTable]:
    return [distinct(*spec) for spec in _TABLE_SPECS[:count]]


def _build_case(params, n_tables: int = 3, n_questions: int = 3):
    tables = _tables(n_tables)
    mapping = TableMapping({t.distinct_id: t.distinct_id for t in tables})
    questions = [
        Question(id=f"q{i}", question=text, gold_table_ids=[tables[i % n_tables].distinct_id])
        for i, text in enumerate(_QUESTION_TEXTS[:n_questions])
    ]
    prepared_q = [prepare_question(params, q, mapping) for q in questions]
    prepared_t = [prepare_table(params, t) for t in tables]
    golds = [i % n_tables for i in range(n_questions)]
    return params, prepared_q, prepared_t, golds


def _vocab_for(tables, questions_texts, dim: int, seed: int = 0) -> VocabTable:
    tokens: set[str] = set()
    for t in tables:
        tokens.update(tok.text for tok in linearize_table(t).tokens)
    for text in questions_texts:
        tokens.update(tok.text for tok in analyze_question(text).tokens)
    return VocabTable.build(sorted(tokens), dim, seed)


def _randomize_pool(pool: PoolingSpec, rng: np.random.Generator) -> None:
    pool.u[:] = rng.standard_normal(pool.u.shape) * 0.5
    pool.b[:] = rng.standard_normal(pool.b.shape) * 0.1


def _implicit_hashed():
    params = ModelParams.initialize(
        embedder=EmbedderConfig(kind="hashed", dim=4, seed=0),
        mode="implicit", n_seeds=3, init_seed=1)
    return _build_case(params)


def _implicit_hashed_projection():
    params = ModelParams.initialize(
        embedder=EmbedderConfig(kind="hashed", dim=4, seed=0),
        mode="implicit", n_seeds=1, projection_dim=2, init_seed=2)
    return _build_case(params, n_tables=2, n_questions=2)


def _implicit_vocab():
    tables = _tables(3)
    vocab = _vocab_for(tables, _QUESTION_TEXTS, dim=4)
    params = ModelParams.initialize(
        embedder=EmbedderConfig(kind="vocab", dim=4, seed=0),
        mode="implicit", n_seeds=3, vocab=vocab, init_seed=3)
    return _build_case(params)


def _explicit_attentive_question():
    params = ModelParams.initialize(
        embedder=EmbedderConfig(kind="hashed", dim=8, seed=0),
        mode="explicit", pooling="attentive", init_seed=4)
    _randomize_pool(params.question_pool, np.random.default_rng(40))
    _randomize_pool(params.table_pool, np.random.default_rng(41))
    return _build_case(params)


def _implicit_attentive_table():
    params = ModelParams.initialize(
        embedder=EmbedderConfig(kind="hashed", dim=4, seed=0),
        mode="implicit", n_seeds=3, init_seed=5)
    params.table_pool = PoolingSpec.attentive(4)
    _randomize_pool(params.table_pool, np.random.default_rng(50))
    return _build_case(params)


def _explicit_vocab_attentive_projection():
    tables = _tables(4)
    vocab = _vocab_for(tables, _QUESTION_TEXTS, dim=4)
    params = ModelParams.initialize(
        embedder=EmbedderConfig(kind="vocab", dim=4, seed=0),
        mode="explicit", pooling="attentive", projection_dim=3,
        vocab=vocab, init_seed=6)
    _randomize_pool(params.question_pool, np.random.default_rng(60))
    _randomize_pool(params.table_pool, np.random.default_rng(61))
    return _build_case(params, n_tables=4)


def _implicit_vocab_contextual():
    tables = _tables(3)
    vocab = _vocab_for(tables, _QUESTION_TEXTS, dim=4)
    params = ModelParams.initialize(
        embedder=EmbedderConfig(kind="vocab", dim=4, seed=0, context_window=1, context_alpha=0.3),
        mode="implicit", n_seeds=3, vocab=vocab, init_seed=7)
    return _build_case(params)


def _sequence_question_side():
    tables = _tables(3)
    vocab = _vocab_for(tables, _QUESTION_TEXTS, dim=4)
    params = ModelParams.initialize(
        embedder=EmbedderConfig(kind="vocab", dim=4, seed=0),
        mode="implicit", n_seeds=2, ablation="no_S1", vocab=vocab, init_seed=8)
    return _build_case(params)


def _sequence_table_side():
    tables = _tables(3)
    vocab = _vocab_for(tables, _QUESTION_TEXTS, dim=4)
    params = ModelParams.initialize(
        embedder=EmbedderConfig(kind="vocab", dim=4, seed=0),
        mode="implicit", n_seeds=3, ablation="no_S2", vocab=vocab, init_seed=9)
    return _build_case(params)


def _max_tie():
    """Duplicate header columns produce identical table rows, so the
    per-vector max ties exactly and stays tied under any perturbation."""
    tables = [
        distinct("t0", ["zz", "zz"], [["one", "two"]]),
        distinct("t1", ["other", "thing"], [["three", "four"]]),
    ]
    texts = ["zz", "other thing"]
    vocab = _vocab_for(tables, texts, dim=4)
    params = ModelParams.initialize(
        embedder=EmbedderConfig(kind="vocab", dim=4, seed=0),
        mode="implicit", n_seeds=1, vocab=vocab, init_seed=10)
    mapping = TableMapping({t.distinct_id: t.distinct_id for t in tables})
    questions = [
        Question(id="q0", question="zz", gold_table_ids=["t0"]),
        Question(id="q1", question="other thing", gold_table_ids=["t1"]),
    ]
    prepared_q = [prepare_question(params, q, mapping) for q in questions]
    prepared_t = [prepare_table(params, t) for t in tables]
    return params, prepared_q, prepared_t, [0, 1]


def _explicit_hashed_projection():
    params = ModelParams.initialize(
        embedder=EmbedderConfig(kind="hashed", dim=8, seed=1),
        mode="explicit", projection_dim=4, init_seed=11)
    return _build_case(params, n_tables=4)


CONFIGS = [
    ("implicit hashed, seeds only", _implicit_hashed),
    ("implicit hashed + projection", _implicit_hashed_projection),
    ("implicit vocab, seeds + vocab rows", _implicit_vocab),
    ("explicit, attentive pools", _explicit_attentive_question),
    ("implicit, attentive table pool", _implicit_attentive_table),
    ("explicit vocab, attentive + projection", _explicit_vocab_attentive_projection),
    ("implicit vocab, contextual window", _implicit_vocab_contextual),
    ("question side collapsed to sequence mean", _sequence_question_side),
    ("table side collapsed to sequence mean", _sequence_table_side),
    ("exact max tie from duplicate headers", _max_tie),
    ("explicit hashed + projection", _explicit_hashed_projection),
]
