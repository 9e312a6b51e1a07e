"""Contrastive training of the retrieval model.

The loss is in-batch softmax cross-entropy over question-table scores,
optionally sharpened with mined hard negatives. Gradients are written by
hand in reverse mode through every stage (vocab lookup, contextualize, seed
attention, pooling, projection, late-interaction scoring) and are verified
against central finite differences in the test suite. The optimizer is Adam
with linear warmup and decoupled weight decay on the projection and vocab
table only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Corpus, DistinctTable, Question, TableMapping
from .embed import ExternalRecord, contextualize, contextualize_backward, token_vector
from .errors import SchemaError, TabretError
from .model import ModelParams
from .reprs import PoolingSpec, attentive_weights, pool, seed_attention_weights
from .score import Index, build_index, score_against_index
from .textproc import LinearizedTable, TokenSpan, analyze_question, linearize_table

__all__ = [
    "TrainConfig",
    "contrastive_loss",
    "batch_loss_and_grads",
    "AdamState",
    "adam_step",
    "mine_hard_negatives",
    "train",
]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
MAX_EPOCH_CAP = 150


@dataclass
class TrainConfig:
    """Optimization settings; defaults follow the documented training recipe
    except batch size, which is sized for a workstation."""

    learning_rate: float = 2e-5
    weight_decay: float = 0.01
    warmup_ratio: float = 0.05
    batch_size: int = 32
    max_epochs: int = 30
    hard_negatives: bool = False
    negatives_per_question: int = 1
    remine_every: int = 5
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise SchemaError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise SchemaError("weight_decay must be non-negative")
        if not (0.0 <= self.warmup_ratio < 1.0):
            raise SchemaError("warmup_ratio must lie in [0, 1)")
        if self.batch_size < 1:
            raise SchemaError("batch_size must be at least 1")
        if not (0 <= self.max_epochs <= MAX_EPOCH_CAP):
            raise SchemaError(f"max_epochs must lie in [0, {MAX_EPOCH_CAP}]")
        if self.negatives_per_question < 1:
            raise SchemaError("negatives_per_question must be at least 1")
        if self.remine_every < 1:
            raise SchemaError("remine_every must be at least 1")


def _ensure_finite(stage: str, array: np.ndarray) -> None:
    if not np.all(np.isfinite(array)):
        raise TabretError(f"non-finite values produced at stage: {stage}")


def contrastive_loss(scores: np.ndarray, gold_indices: Sequence[int]) -> float:
    """Mean negative log softmax probability of each question's gold table.

    ``scores[q, t]`` is question q's score for candidate t; every question's
    gold candidate must be present. Log-sum-exp is max-shifted.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2 or scores.shape[0] == 0 or scores.shape[1] == 0:
        raise ValueError("scores must be a non-empty 2-d matrix")
    _ensure_finite("loss input", scores)
    gold = np.asarray(list(gold_indices), dtype=int)
    if gold.shape != (scores.shape[0],):
        raise ValueError("one gold index per scored question required")
    if np.any(gold < 0) or np.any(gold >= scores.shape[1]):
        raise ValueError("gold index out of candidate range")
    row_max = scores.max(axis=1, keepdims=True)
    lse = row_max[:, 0] + np.log(np.exp(scores - row_max).sum(axis=1))
    return float(np.mean(lse - scores[np.arange(scores.shape[0]), gold]))


# ---------------------------------------------------------------------------
# Prepared inputs: tokenization and static embedding work done once so the
# epoch loop only repeats what actually changes under training.


@dataclass(eq=False)
class PreparedQuestion:
    id: str
    tokens: list
    np_spans: list[TokenSpan] | None
    gold_distinct_ids: list[str]
    base: np.ndarray | None = None
    vocab_ids: np.ndarray | None = None
    oov_rows: np.ndarray | None = None
    external: ExternalRecord | None = None

    @property
    def target_id(self) -> str:
        return self.gold_distinct_ids[0]


@dataclass(eq=False)
class PreparedTable:
    distinct_id: str
    linearized: LinearizedTable
    base: np.ndarray | None = None
    vocab_ids: np.ndarray | None = None
    oov_rows: np.ndarray | None = None
    external: ExternalRecord | None = None


def _prepare_tokens(params: ModelParams, tokens, external: ExternalRecord | None):
    """Static per-sequence embedding state for the configured backend."""
    cfg = params.embedder
    if cfg.kind == "vocab":
        ids = params.vocab.lookup_ids(tokens)
        oov = None
        if np.any(ids < 0):
            oov = np.stack(
                [
                    token_vector(t.text, cfg.dim, params.vocab.seed)
                    for t, i in zip(tokens, ids)
                    if i < 0
                ]
            )
        return None, ids, oov
    if cfg.kind == "external":
        if external is None:
            raise SchemaError("external embedder needs an embedding record")
        from .embed import align_external

        return align_external(external, tokens), None, None
    from .embed import embed_hashed

    return embed_hashed(tokens, cfg.dim, cfg.seed), None, None


def prepare_question(
    params: ModelParams,
    question: Question,
    mapping: TableMapping,
    external: ExternalRecord | None = None,
) -> PreparedQuestion:
    if not question.gold_table_ids:
        raise SchemaError(f"question {question.id!r} has no gold tables")
    analyzed = analyze_question(question.question)
    golds = [mapping.resolve(g) for g in question.gold_table_ids]
    base, ids, oov = _prepare_tokens(params, analyzed.tokens, external)
    return PreparedQuestion(
        id=question.id,
        tokens=analyzed.tokens,
        np_spans=analyzed.np_spans,
        gold_distinct_ids=golds,
        base=base,
        vocab_ids=ids,
        oov_rows=oov,
        external=external,
    )


def prepare_table(
    params: ModelParams,
    table: DistinctTable,
    linearized: LinearizedTable | None = None,
    external: ExternalRecord | None = None,
) -> PreparedTable:
    lin = linearized if linearized is not None else linearize_table(table)
    base, ids, oov = _prepare_tokens(params, lin.tokens, external)
    return PreparedTable(
        distinct_id=table.distinct_id,
        linearized=lin,
        base=base,
        vocab_ids=ids,
        oov_rows=oov,
        external=external,
    )


def _embedded(params: ModelParams, prepared: PreparedQuestion | PreparedTable) -> np.ndarray:
    cfg = params.embedder
    if cfg.kind == "vocab":
        ids = prepared.vocab_ids
        matrix = np.empty((len(ids), cfg.dim))
        known = ids >= 0
        matrix[known] = params.vocab.vectors[ids[known]]
        if prepared.oov_rows is not None:
            matrix[~known] = prepared.oov_rows
    else:
        matrix = prepared.base
    out = contextualize(matrix, cfg.context_window, cfg.context_alpha)
    _ensure_finite("embedding", out)
    return out


# ---------------------------------------------------------------------------
# Forward passes with caches, and their hand-written adjoints.


def _forward_question(params: ModelParams, pq: PreparedQuestion) -> dict:
    embedded = _embedded(params, pq)
    cache: dict = {"embedded": embedded}
    if params.ablation in ("no_S1", "no_S1_S2"):
        if pq.external is not None and pq.external.sequence_vector is not None:
            cache["path"] = "constant"
            raw = pq.external.sequence_vector[None, :].astype(float)
        else:
            cache["path"] = "sequence"
            raw = embedded.mean(axis=0, keepdims=True)
    elif params.mode == "explicit":
        cache["path"] = "explicit"
        raw = np.stack(
            [pool(embedded[s.start:s.end], params.question_pool) for s in pq.np_spans]
        )
    else:
        cache["path"] = "implicit"
        weights = seed_attention_weights(embedded, params.seed_bank)
        cache["weights"] = weights
        raw = weights @ embedded
    cache["raw"] = raw
    out = raw @ params.projection.weight if params.projection.enabled else raw
    _ensure_finite("question representation", out)
    cache["out"] = out
    return cache


def _forward_table(params: ModelParams, pt: PreparedTable) -> dict:
    embedded = _embedded(params, pt)
    cache: dict = {"embedded": embedded}
    lin = pt.linearized
    if params.ablation in ("no_S2", "no_S1_S2"):
        if pt.external is not None and pt.external.sequence_vector is not None:
            cache["path"] = "constant"
            raw = pt.external.sequence_vector[None, :].astype(float)
        else:
            cache["path"] = "sequence"
            raw = embedded.mean(axis=0, keepdims=True)
        cache["slots"] = None
    else:
        cache["path"] = "structural"
        slots = []
        rows = []
        for j, header_span in enumerate(lin.header_spans):
            if params.ablation != "no_S2_head":
                rows.append(pool(embedded[header_span.start:header_span.end], params.table_pool))
                slots.append(header_span)
            value_span = lin.value_spans[j]
            if params.ablation != "no_S2_value" and value_span is not None:
                rows.append(pool(embedded[value_span.start:value_span.end], params.table_pool))
                slots.append(value_span)
        if not rows:
            raise SchemaError(
                f"table {pt.distinct_id!r} yields no representation rows under "
                f"ablation {params.ablation!r}"
            )
        raw = np.stack(rows)
        cache["slots"] = slots
    cache["raw"] = raw
    out = raw @ params.projection.weight if params.projection.enabled else raw
    _ensure_finite("table representation", out)
    cache["out"] = out
    return cache


def _pool_backward(
    group: np.ndarray,
    spec: PoolingSpec,
    dout: np.ndarray,
    dgroup: np.ndarray,
    grads: dict[str, np.ndarray],
    role: str,
) -> None:
    """Accumulate the adjoint of ``pool`` into dgroup (and the scorer grads)."""
    if spec.kind == "mean":
        dgroup += dout / group.shape[0]
        return
    if spec.kind == "max":
        # Subgradient: each output dimension routes to its first maximal row.
        idx = np.argmax(group, axis=0)
        np.add.at(dgroup, (idx, np.arange(group.shape[1])), dout)
        return
    alpha = attentive_weights(group, spec.u, spec.b)
    dalpha = group @ dout
    dgroup += np.outer(alpha, dout)
    dz = alpha * (dalpha - float(alpha @ dalpha))
    key = f"{role}_u"
    if key in grads:
        grads[key] += group.T @ dz
        grads[f"{role}_b"] += dz.sum()
    dgroup += np.outer(dz, spec.u)


def _scatter_embedding_grad(
    params: ModelParams,
    prepared: PreparedQuestion | PreparedTable,
    dembedded: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    cfg = params.embedder
    dbase = contextualize_backward(dembedded, cfg.context_window, cfg.context_alpha)
    if cfg.kind == "vocab" and "vocab" in grads:
        ids = prepared.vocab_ids
        known = ids >= 0
        np.add.at(grads["vocab"], ids[known], dbase[known])
    # Hashed and external embeddings are constants.


def _backward_question(
    params: ModelParams,
    pq: PreparedQuestion,
    cache: dict,
    dout: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    if params.projection.enabled:
        if "projection" in grads:
            grads["projection"] += cache["raw"].T @ dout
        draw = dout @ params.projection.weight.T
    else:
        draw = dout
    path = cache["path"]
    if path == "constant":
        return
    embedded = cache["embedded"]
    dembedded = np.zeros_like(embedded)
    if path == "sequence":
        dembedded += draw[0] / embedded.shape[0]
    elif path == "implicit":
        weights = cache["weights"]
        seeds = params.seed_bank.seeds
        dweights = draw @ embedded.T
        dembedded += weights.T @ draw
        dlogits = weights * (dweights - np.sum(weights * dweights, axis=1, keepdims=True))
        if "seeds" in grads:
            grads["seeds"] += dlogits @ embedded
        dembedded += dlogits.T @ seeds
    else:  # explicit
        for i, span in enumerate(pq.np_spans):
            _pool_backward(
                embedded[span.start:span.end],
                params.question_pool,
                draw[i],
                dembedded[span.start:span.end],
                grads,
                "question",
            )
    _scatter_embedding_grad(params, pq, dembedded, grads)


def _backward_table(
    params: ModelParams,
    pt: PreparedTable,
    cache: dict,
    dout: np.ndarray,
    grads: dict[str, np.ndarray],
) -> None:
    if params.projection.enabled:
        if "projection" in grads:
            grads["projection"] += cache["raw"].T @ dout
        draw = dout @ params.projection.weight.T
    else:
        draw = dout
    path = cache["path"]
    if path == "constant":
        return
    embedded = cache["embedded"]
    dembedded = np.zeros_like(embedded)
    if path == "sequence":
        dembedded += draw[0] / embedded.shape[0]
    else:
        for r, span in enumerate(cache["slots"]):
            _pool_backward(
                embedded[span.start:span.end],
                params.table_pool,
                draw[r],
                dembedded[span.start:span.end],
                grads,
                "table",
            )
    _scatter_embedding_grad(params, pt, dembedded, grads)


def batch_loss_and_grads(
    params: ModelParams,
    questions: Sequence[PreparedQuestion],
    tables: Sequence[PreparedTable],
    gold_indices: Sequence[int],
    want_grads: bool = True,
) -> tuple[float, dict[str, np.ndarray] | None]:
    """Forward and reverse pass over one batch of shared candidates.

    Returns the mean contrastive loss and, when requested, gradients for
    every trainable parameter slot (zeros where a slot is unused by the
    configured variant). Ties inside the per-vector max route their gradient
    to the first maximal table row.
    """
    if len(questions) == 0 or len(tables) == 0:
        raise ValueError("batch needs at least one question and one candidate")
    qcaches = [_forward_question(params, q) for q in questions]
    tcaches = [_forward_table(params, t) for t in tables]

    n_questions, n_tables = len(questions), len(tables)
    table_rows = np.vstack([c["out"] for c in tcaches])
    bounds = np.cumsum([0] + [c["out"].shape[0] for c in tcaches])
    scores = np.empty((n_questions, n_tables))
    argmaxes: list[list[np.ndarray]] = []
    for qi, qcache in enumerate(qcaches):
        interactions = qcache["out"] @ table_rows.T
        row_args = []
        for ti in range(n_tables):
            w = interactions[:, bounds[ti]:bounds[ti + 1]]
            scores[qi, ti] = np.sum(np.max(w, axis=1))
            row_args.append(np.argmax(w, axis=1))
        argmaxes.append(row_args)
    _ensure_finite("scoring", scores)
    loss = contrastive_loss(scores, gold_indices)

    if not want_grads:
        return loss, None

    gold = np.asarray(list(gold_indices), dtype=int)
    row_max = scores.max(axis=1, keepdims=True)
    probs = np.exp(scores - row_max)
    probs /= probs.sum(axis=1, keepdims=True)
    dscores = probs.copy()
    dscores[np.arange(n_questions), gold] -= 1.0
    dscores /= n_questions

    grads = {name: np.zeros_like(array) for name, array in params.trainable_arrays().items()}
    dq_out = [np.zeros_like(c["out"]) for c in qcaches]
    dt_out = [np.zeros_like(c["out"]) for c in tcaches]
    for qi in range(n_questions):
        q_matrix = qcaches[qi]["out"]
        for ti in range(n_tables):
            coeff = dscores[qi, ti]
            winners = argmaxes[qi][ti]
            c_matrix = tcaches[ti]["out"]
            dq_out[qi] += coeff * c_matrix[winners]
            np.add.at(dt_out[ti], winners, coeff * q_matrix)
    for qi, pq in enumerate(questions):
        _backward_question(params, pq, qcaches[qi], dq_out[qi], grads)
    for ti, pt in enumerate(tables):
        _backward_table(params, pt, tcaches[ti], dt_out[ti], grads)
    for name, grad in grads.items():
        _ensure_finite(f"gradient for {name}", grad)
    return loss, grads


# ---------------------------------------------------------------------------
# Optimizer.


@dataclass(eq=False)
class AdamState:
    """First and second moment accumulators plus the step counter."""

    first: dict[str, np.ndarray]
    second: dict[str, np.ndarray]
    step_count: int = 0

    @classmethod
    def for_params(cls, arrays: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            first={k: np.zeros_like(v) for k, v in arrays.items()},
            second={k: np.zeros_like(v) for k, v in arrays.items()},
        )


def warmup_scale(step: int, total_steps: int, warmup_ratio: float) -> float:
    """Linear ramp from 0 to 1 over the first warmup fraction of training."""
    warmup_steps = math.ceil(total_steps * warmup_ratio)
    if warmup_steps <= 0:
        return 1.0
    return min(1.0, step / warmup_steps)


def adam_step(
    arrays: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
    total_steps: int,
    decayed: set[str] = frozenset(),
) -> None:
    """One in-place Adam update with bias correction and decoupled decay."""
    state.step_count += 1
    t = state.step_count
    lr = config.learning_rate * warmup_scale(t, total_steps, config.warmup_ratio)
    for name, theta in arrays.items():
        grad = grads[name]
        m = state.first[name]
        v = state.second[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * grad
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * np.square(grad)
        m_hat = m / (1.0 - ADAM_BETA1**t)
        v_hat = v / (1.0 - ADAM_BETA2**t)
        theta -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        if name in decayed and config.weight_decay > 0:
            theta -= lr * config.weight_decay * theta


# ---------------------------------------------------------------------------
# Hard negative mining.


def _mine_prepared(
    params: ModelParams,
    index: Index,
    questions: Sequence[PreparedQuestion],
    per_question: int,
) -> dict[str, list[str]]:
    from .model import question_representation
    from .textproc import TokenizedQuestion

    mined: dict[str, list[str]] = {}
    for pq in questions:
        reprs = question_representation(
            params,
            TokenizedQuestion(tokens=pq.tokens, np_spans=pq.np_spans),
            pq.external,
        )
        scores = score_against_index(reprs.matrix, index)
        order = np.argsort(-scores, kind="stable")
        golds = set(pq.gold_distinct_ids)
        picked = []
        for i in order:
            candidate = index.ids[i]
            if candidate in golds:
                continue
            picked.append(candidate)
            if len(picked) >= per_question:
                break
        mined[pq.id] = picked
    return mined


def mine_hard_negatives(
    params: ModelParams,
    index: Index,
    questions: Sequence[Question],
    mapping: TableMapping,
    per_question: int = 1,
    externals: dict[str, ExternalRecord] | None = None,
) -> dict[str, list[str]]:
    """Top-ranked non-gold tables per question under the current model.

    A corpus holding only a question's gold tables yields an empty list for
    that question.
    """
    if per_question < 1:
        raise ValueError("per_question must be at least 1")
    prepared = [
        prepare_question(
            params, q, mapping, None if externals is None else externals.get(q.id)
        )
        for q in questions
    ]
    return _mine_prepared(params, index, prepared, per_question)


# ---------------------------------------------------------------------------
# Training loop.


def _batch_candidates(
    batch: Sequence[PreparedQuestion],
    negatives: dict[str, list[str]],
) -> tuple[list[str], list[int]]:
    candidate_ids: list[str] = []
    seen: set[str] = set()
    for pq in batch:
        if pq.target_id not in seen:
            seen.add(pq.target_id)
            candidate_ids.append(pq.target_id)
    for pq in batch:
        for negative in negatives.get(pq.id, ()):
            if negative not in seen:
                seen.add(negative)
                candidate_ids.append(negative)
    gold_indices = [candidate_ids.index(pq.target_id) for pq in batch]
    return candidate_ids, gold_indices


def _dev_recall_at_1(
    params: ModelParams,
    dev: Sequence[PreparedQuestion],
    pool_tables: list[DistinctTable],
    linearized_cache: dict[str, LinearizedTable],
    externals: dict[str, ExternalRecord] | None,
) -> float:
    """Recall@1 with candidates restricted to the dev questions' own gold
    tables; cheap enough to run every epoch."""
    from .model import question_representation
    from .textproc import TokenizedQuestion

    index = build_index(pool_tables, params, externals, linearized_cache)
    hits = 0
    for pq in dev:
        reprs = question_representation(
            params,
            TokenizedQuestion(tokens=pq.tokens, np_spans=pq.np_spans),
            pq.external,
        )
        scores = score_against_index(reprs.matrix, index)
        best = int(np.argsort(-scores, kind="stable")[0])
        if index.ids[best] in set(pq.gold_distinct_ids):
            hits += 1
    return hits / len(dev)


def _epoch_loss_forward_only(
    params: ModelParams,
    prepared_train: list[PreparedQuestion],
    tables_by_id: dict[str, PreparedTable],
    batch_size: int,
) -> float:
    total = 0.0
    for start in range(0, len(prepared_train), batch_size):
        batch = prepared_train[start:start + batch_size]
        candidate_ids, gold_indices = _batch_candidates(batch, {})
        loss, _ = batch_loss_and_grads(
            params,
            batch,
            [tables_by_id[c] for c in candidate_ids],
            gold_indices,
            want_grads=False,
        )
        total += loss * len(batch)
    return total / len(prepared_train)


def train(
    params: ModelParams,
    corpus: Corpus,
    train_questions: Sequence[Question],
    dev_questions: Sequence[Question],
    config: TrainConfig,
    externals: dict[str, ExternalRecord] | None = None,
) -> tuple[ModelParams, list[dict]]:
    """Train and return the best-dev checkpoint plus the epoch history.

    Epoch 0 records the untrained model (forward-only loss, dev recall@1);
    each later entry records that epoch's mean training loss and dev
    recall@1. The returned parameters are the clone with the highest dev
    recall@1, earliest epoch on ties; the caller's ``params`` is never
    mutated. ``max_epochs=0`` returns the initial parameters and an empty
    history.
    """
    if not train_questions:
        raise SchemaError("training requires at least one training question")
    if not dev_questions:
        raise SchemaError("training requires a non-empty dev set")
    work = params.clone()

    if config.max_epochs == 0:
        return work, []

    table_index = {t.distinct_id: t for t in corpus.tables}
    linearized_cache: dict[str, LinearizedTable] = {}

    def table_external(distinct_id: str) -> ExternalRecord | None:
        return None if externals is None else externals.get(distinct_id)

    tables_by_id = {
        t.distinct_id: prepare_table(
            work, t, linearize_table(t), table_external(t.distinct_id)
        )
        for t in corpus.tables
    }
    for distinct_id, prepared in tables_by_id.items():
        linearized_cache[distinct_id] = prepared.linearized

    def question_external(qid: str) -> ExternalRecord | None:
        return None if externals is None else externals.get(qid)

    prepared_train = [
        prepare_question(work, q, corpus.mapping, question_external(q.id))
        for q in train_questions
    ]
    prepared_dev = [
        prepare_question(work, q, corpus.mapping, question_external(q.id))
        for q in dev_questions
    ]
    for pq in prepared_train + prepared_dev:
        for gold in pq.gold_distinct_ids:
            if gold not in table_index:
                raise SchemaError(
                    f"question {pq.id!r} resolves to table {gold!r} which is "
                    f"not in the corpus"
                )

    dev_pool_ids = sorted({g for pq in prepared_dev for g in pq.gold_distinct_ids})
    dev_pool = [table_index[i] for i in dev_pool_ids]

    batches_per_epoch = math.ceil(len(prepared_train) / config.batch_size)
    total_steps = batches_per_epoch * config.max_epochs
    arrays = work.trainable_arrays()
    state = AdamState.for_params(arrays)
    decayed = work.decayed_parameters()
    rng = np.random.default_rng(config.rng_seed)

    history: list[dict] = []
    initial_loss = _epoch_loss_forward_only(
        work, prepared_train, tables_by_id, config.batch_size
    )
    initial_recall = _dev_recall_at_1(
        work, prepared_dev, dev_pool, linearized_cache, externals
    )
    history.append({"epoch": 0, "loss": initial_loss, "dev_recall@1": initial_recall})
    best_recall = initial_recall
    best_params = work.clone()

    negatives: dict[str, list[str]] = {}
    for epoch in range(1, config.max_epochs + 1):
        if config.hard_negatives and (epoch - 1) % config.remine_every == 0:
            mining_index = build_index(corpus, work, externals, linearized_cache)
            negatives = _mine_prepared(
                work, mining_index, prepared_train, config.negatives_per_question
            )
        order = rng.permutation(len(prepared_train))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [prepared_train[i] for i in order[start:start + config.batch_size]]
            candidate_ids, gold_indices = _batch_candidates(batch, negatives)
            loss, grads = batch_loss_and_grads(
                work,
                batch,
                [tables_by_id[c] for c in candidate_ids],
                gold_indices,
            )
            adam_step(arrays, grads, state, config, total_steps, decayed)
            epoch_loss += loss * len(batch)
        epoch_loss /= len(prepared_train)
        dev_recall = _dev_recall_at_1(
            work, prepared_dev, dev_pool, linearized_cache, externals
        )
        history.append({"epoch": epoch, "loss": epoch_loss, "dev_recall@1": dev_recall})
        if dev_recall > best_recall:
            best_recall = dev_recall
            best_params = work.clone()
    return best_params, history
