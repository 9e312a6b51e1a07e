"""Late-interaction scoring and the retrieval index.

A question-table score is the sum over question vectors of each vector's
best dot product against the table's representation rows. The index packs
every table's rows into one matrix so scoring a question against the whole
corpus is a single matrix product followed by a segmented max; a brute-force
path that scores tables one by one exists as an always-available oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .blockfile import read_blockfile, write_blockfile
from .corpus import Corpus, DistinctTable
from .embed import ExternalRecord
from .errors import FingerprintMismatchError, SchemaError
from .model import ModelParams, question_representation, table_representation
from .reprs import QuestionReprs, TableReprs
from .textproc import LinearizedTable, TokenizedQuestion, linearize_table

__all__ = [
    "ScoredTable",
    "Index",
    "score_pair",
    "build_index",
    "save_index",
    "load_index",
    "retrieve_topk",
    "brute_force_retrieve",
]

INDEX_FORMAT = "tabret-index"

_SLOT_CODES = {"header": 0, "value": 1, "sequence": 2}
_SLOT_NAMES = {v: k for k, v in _SLOT_CODES.items()}


@dataclass(frozen=True)
class ScoredTable:
    distinct_id: str
    score: float


@dataclass(eq=False)
class Index:
    """Packed table representations for a whole corpus.

    ``ids`` are distinct table ids in ascending order; table i's rows live in
    ``reps[offsets[i]:offsets[i+1]]``. Representations are computed in
    float64 and stored as float64 in memory; the on-disk file keeps float32.
    """

    ids: list[str]
    reps: np.ndarray
    offsets: np.ndarray
    kinds: list[list[tuple[str, int]]]
    column_counts: np.ndarray
    fingerprint: str

    def __post_init__(self) -> None:
        if len(self.ids) + 1 != len(self.offsets):
            raise SchemaError("index offsets do not bracket its tables")
        if len(self.ids) != len(self.kinds):
            raise SchemaError("index kinds do not cover its tables")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.reps.shape[1])

    def block(self, i: int) -> np.ndarray:
        return self.reps[self.offsets[i]:self.offsets[i + 1]]


def _as_matrix(reprs: np.ndarray | QuestionReprs | TableReprs) -> np.ndarray:
    if isinstance(reprs, (QuestionReprs, TableReprs)):
        return reprs.matrix
    return reprs


def score_pair(
    question_reprs: np.ndarray | QuestionReprs,
    table_reprs: np.ndarray | TableReprs,
) -> tuple[float, np.ndarray]:
    """Score one question against one table.

    Returns the score and the full interaction matrix w with w[i, j] the dot
    product of question vector i and table row j; the score is the sum over
    i of max_j w[i, j].
    """
    q = _as_matrix(question_reprs)
    c = _as_matrix(table_reprs)
    if q.ndim != 2 or c.ndim != 2:
        raise ValueError("scoring expects 2-d representation matrices")
    if q.shape[0] == 0 or c.shape[0] == 0:
        raise ValueError("cannot score empty representations")
    if q.shape[1] != c.shape[1]:
        raise ValueError(f"representation dims disagree: {q.shape[1]} vs {c.shape[1]}")
    w = q @ c.T
    return float(np.sum(np.max(w, axis=1))), w


def build_index(
    corpus: Corpus | Sequence[DistinctTable],
    params: ModelParams,
    externals: dict[str, ExternalRecord] | None = None,
    linearized_cache: dict[str, LinearizedTable] | None = None,
) -> Index:
    """Represent every distinct table and pack the rows into one matrix."""
    tables = list(corpus.tables) if isinstance(corpus, Corpus) else list(corpus)
    if not tables:
        return Index(
            ids=[],
            reps=np.zeros((0, params.output_dim())),
            offsets=np.zeros(1, dtype=np.int64),
            kinds=[],
            column_counts=np.zeros(0, dtype=np.int64),
            fingerprint=params.table_fingerprint(),
        )
    tables = sorted(tables, key=lambda t: t.distinct_id)
    blocks = []
    kinds = []
    column_counts = []
    ids = []
    for table in tables:
        if linearized_cache is not None and table.distinct_id in linearized_cache:
            linearized = linearized_cache[table.distinct_id]
        else:
            linearized = linearize_table(table)
            if linearized_cache is not None:
                linearized_cache[table.distinct_id] = linearized
        external = None
        if params.embedder.kind == "external":
            if externals is None or table.distinct_id not in externals:
                raise SchemaError(
                    f"no external embeddings for table {table.distinct_id!r}"
                )
            external = externals[table.distinct_id]
        reprs = table_representation(params, linearized, external)
        ids.append(table.distinct_id)
        blocks.append(reprs.matrix)
        kinds.append(reprs.kinds)
        column_counts.append(reprs.column_count)
    offsets = np.zeros(len(blocks) + 1, dtype=np.int64)
    np.cumsum([b.shape[0] for b in blocks], out=offsets[1:])
    return Index(
        ids=ids,
        reps=np.vstack(blocks),
        offsets=offsets,
        kinds=kinds,
        column_counts=np.array(column_counts, dtype=np.int64),
        fingerprint=params.table_fingerprint(),
    )


def save_index(path: str | Path, index: Index) -> None:
    meta = {
        "fingerprint": index.fingerprint,
        "ids": index.ids,
        "kinds": [[[_SLOT_CODES[slot], col] for slot, col in table] for table in index.kinds],
        "column_counts": [int(m) for m in index.column_counts],
    }
    write_blockfile(
        path,
        INDEX_FORMAT,
        1,
        meta,
        {"reps": index.reps.astype(np.float32), "offsets": index.offsets},
    )


def load_index(path: str | Path) -> Index:
    header, blocks = read_blockfile(path, INDEX_FORMAT)
    meta = header["meta"]
    return Index(
        ids=list(meta["ids"]),
        reps=blocks["reps"].astype(np.float64),
        offsets=blocks["offsets"],
        kinds=[[(_SLOT_NAMES[code], int(col)) for code, col in table] for table in meta["kinds"]],
        column_counts=np.array(meta["column_counts"], dtype=np.int64),
        fingerprint=meta["fingerprint"],
    )


def check_fingerprint(index: Index, params: ModelParams) -> None:
    expected = params.table_fingerprint()
    if index.fingerprint != expected:
        raise FingerprintMismatchError(
            f"index fingerprint {index.fingerprint[:12]}... does not match model "
            f"fingerprint {expected[:12]}...; rebuild the index"
        )


def score_against_index(question_matrix: np.ndarray, index: Index) -> np.ndarray:
    """Scores for one question against every indexed table.

    One matrix product over the packed rows, a segmented max per table, then
    a sum over question vectors.
    """
    if question_matrix.shape[1] != index.dim:
        raise ValueError(
            f"question dim {question_matrix.shape[1]} does not match index dim {index.dim}"
        )
    w = question_matrix @ index.reps.T
    per_table_max = np.maximum.reduceat(w, index.offsets[:-1], axis=1)
    return per_table_max.sum(axis=0)


def _top_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k best scores in full-ranking order.

    ids are sorted ascending, so a stable sort on descending score breaks
    ties by id without a second key. For k below the corpus size a partition
    narrows the sort to the candidates at or above the k-th score; every
    boundary tie stays in the candidate set, so the result is an exact
    prefix of the full ranking.
    """
    n = scores.shape[0]
    if k >= n:
        return np.argsort(-scores, kind="stable")
    threshold = np.partition(scores, n - k)[n - k]
    candidates = np.flatnonzero(scores >= threshold)
    order = np.argsort(-scores[candidates], kind="stable")
    return candidates[order[:k]]


def retrieve_topk(
    question: TokenizedQuestion,
    index: Index,
    k: int,
    params: ModelParams,
    external: ExternalRecord | None = None,
) -> list[ScoredTable]:
    """Top-k tables for a question, ties broken by ascending distinct id."""
    if k < 1:
        raise ValueError("k must be at least 1")
    check_fingerprint(index, params)
    reprs = question_representation(params, question, external)
    scores = score_against_index(reprs.matrix, index)
    return [
        ScoredTable(distinct_id=index.ids[i], score=float(scores[i]))
        for i in _top_indices(scores, k)
    ]


def brute_force_retrieve(
    question: TokenizedQuestion,
    index: Index,
    params: ModelParams,
    external: ExternalRecord | None = None,
) -> list[ScoredTable]:
    """Oracle ranking: score every table individually with ``score_pair``."""
    check_fingerprint(index, params)
    reprs = question_representation(params, question, external)
    scored = []
    for i, distinct_id in enumerate(index.ids):
        score, _ = score_pair(reprs.matrix, index.block(i))
        scored.append(ScoredTable(distinct_id=distinct_id, score=score))
    return sorted(scored, key=lambda s: (-s.score, s.distinct_id))
