"""Question and table representations.

Questions become a few vectors each: either one per noun phrase span, pooled
from the span's token embeddings, or one per learned seed vector through an
attention weighting over all tokens. Tables become per-column header and
value vectors pooled from the linearized token stream, so a question vector
can match a single column instead of the whole table.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SchemaError
from .textproc import LinearizedTable, TokenSpan

__all__ = [
    "PoolingSpec",
    "SeedBank",
    "Projection",
    "QuestionReprs",
    "TableReprs",
    "pool",
    "attentive_weights",
    "softmax",
    "explicit_question_reprs",
    "implicit_question_reprs",
    "seed_attention_weights",
    "structural_table_reprs",
    "sequence_repr",
    "project",
]

POOLING_KINDS = ("mean", "max", "attentive")

HEADER_SLOT = "header"
VALUE_SLOT = "value"
SEQUENCE_SLOT = "sequence"


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-shifted softmax, safe for large logits."""
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


@dataclass(eq=False)
class PoolingSpec:
    """Pooling function over a group of token vectors.

    ``mean`` and ``max`` are parameter-free; ``attentive`` weights positions
    by a softmax over a learned linear score u . v + b. The scorer starts at
    zero, which makes attentive pooling equal to mean pooling until trained.
    """

    kind: str = "mean"
    u: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in POOLING_KINDS:
            raise SchemaError(f"unknown pooling kind {self.kind!r}")
        if self.kind == "attentive":
            if self.u is None:
                raise SchemaError("attentive pooling requires a scorer vector u")
            if self.b is None:
                self.b = np.zeros(1)
        elif self.u is not None or self.b is not None:
            raise SchemaError(f"{self.kind} pooling takes no parameters")

    @classmethod
    def attentive(cls, dim: int) -> "PoolingSpec":
        return cls(kind="attentive", u=np.zeros(dim), b=np.zeros(1))


def attentive_weights(vectors: np.ndarray, u: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Softmax weights over rows of ``vectors`` scored by u . v + b."""
    logits = vectors @ u + b[0]
    return softmax(logits)


def pool(vectors: np.ndarray, spec: PoolingSpec) -> np.ndarray:
    """Collapse a (p, d) group of vectors to one d-vector."""
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ValueError("pooling expects a non-empty 2-d group")
    if spec.kind == "mean":
        return vectors.mean(axis=0)
    if spec.kind == "max":
        return vectors.max(axis=0)
    weights = attentive_weights(vectors, spec.u, spec.b)
    return weights @ vectors


@dataclass(eq=False)
class SeedBank:
    """Learned seed vectors that drive implicit question attention."""

    seeds: np.ndarray

    def __post_init__(self) -> None:
        if self.seeds.ndim != 2 or self.seeds.shape[0] < 1:
            raise SchemaError("seed bank must be a non-empty (n, d) matrix")

    @classmethod
    def initialize(cls, n: int, dim: int, rng: np.random.Generator) -> "SeedBank":
        if n < 1:
            raise SchemaError("seed count must be at least 1")
        # Unit-variance entries put attention logits at O(1) against unit-norm
        # token vectors, so the seeds select different tokens from the start.
        # A smaller scale starts every seed near uniform attention, which
        # collapses the seeds onto one effective vector and trains poorly.
        return cls(seeds=rng.standard_normal((n, dim)))

    @property
    def n(self) -> int:
        return int(self.seeds.shape[0])

    @property
    def dim(self) -> int:
        return int(self.seeds.shape[1])


@dataclass(eq=False)
class Projection:
    """Optional linear down-projection shared by both sides of the scorer."""

    weight: np.ndarray | None = None

    @classmethod
    def initialize(cls, dim: int, out_dim: int | None, rng: np.random.Generator) -> "Projection":
        if out_dim is None:
            return cls(weight=None)
        if out_dim < 1:
            raise SchemaError("projection dim must be positive")
        return cls(weight=rng.standard_normal((dim, out_dim)) / np.sqrt(dim))

    @property
    def enabled(self) -> bool:
        return self.weight is not None

    @property
    def out_dim(self) -> int | None:
        return None if self.weight is None else int(self.weight.shape[1])


def project(matrix: np.ndarray, projection: Projection) -> np.ndarray:
    """Apply the down-projection; identity when disabled."""
    if not projection.enabled:
        return matrix
    if matrix.shape[1] != projection.weight.shape[0]:
        raise ValueError(
            f"cannot project dim {matrix.shape[1]} with a "
            f"{projection.weight.shape[0]}-input projection"
        )
    return matrix @ projection.weight


@dataclass(eq=False)
class QuestionReprs:
    """Question-side vectors, one row per phrase, seed, or whole sequence."""

    matrix: np.ndarray
    mode: str

    def __post_init__(self) -> None:
        if self.matrix.ndim != 2 or self.matrix.shape[0] < 1:
            raise SchemaError("question representation must be a non-empty matrix")


@dataclass(eq=False)
class TableReprs:
    """Table-side vectors plus what each row stands for.

    ``kinds[r]`` is (slot, column) with slot one of header/value/sequence.
    A full structural representation of an m-column table with values has
    m header rows followed by up to m value rows, interleaved per column.
    """

    matrix: np.ndarray
    kinds: list[tuple[str, int]]
    column_count: int

    def __post_init__(self) -> None:
        if self.matrix.ndim != 2 or self.matrix.shape[0] < 1:
            raise SchemaError("table representation must be a non-empty matrix")
        if len(self.kinds) != self.matrix.shape[0]:
            raise SchemaError("table representation rows and kinds disagree")


def explicit_question_reprs(
    embeddings: np.ndarray,
    np_spans: list[TokenSpan],
    spec: PoolingSpec,
) -> QuestionReprs:
    """One vector per noun phrase span, pooled from the span's embeddings."""
    if not np_spans:
        raise ValueError("explicit representation needs at least one span")
    rows = []
    for span in np_spans:
        if span.end > embeddings.shape[0]:
            raise ValueError(f"span [{span.start}, {span.end}) exceeds {embeddings.shape[0]} tokens")
        rows.append(pool(embeddings[span.start:span.end], spec))
    return QuestionReprs(matrix=np.stack(rows), mode="explicit")


def seed_attention_weights(embeddings: np.ndarray, bank: SeedBank) -> np.ndarray:
    """Per-seed softmax attention over token positions, shape (n, L)."""
    if embeddings.shape[1] != bank.dim:
        raise ValueError("seed bank and embeddings disagree on dim")
    logits = bank.seeds @ embeddings.T
    return softmax(logits, axis=1)


def implicit_question_reprs(embeddings: np.ndarray, bank: SeedBank) -> QuestionReprs:
    """One vector per seed: attention-weighted sums of token embeddings."""
    weights = seed_attention_weights(embeddings, bank)
    return QuestionReprs(matrix=weights @ embeddings, mode="implicit")


def sequence_repr(embeddings: np.ndarray) -> np.ndarray:
    """Single-vector stand-in for a token sequence: the mean embedding."""
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise ValueError("sequence representation needs a non-empty matrix")
    return embeddings.mean(axis=0, keepdims=True)


def structural_table_reprs(
    embeddings: np.ndarray,
    linearized: LinearizedTable,
    spec: PoolingSpec,
    include_headers: bool = True,
    include_values: bool = True,
) -> TableReprs:
    """Per-column header and first-row value vectors, pooled from spans.

    Columns without a value span (zero-row tables, empty first cells)
    contribute a header vector only.
    """
    if embeddings.shape[0] != len(linearized.tokens):
        raise ValueError("embeddings and linearized tokens disagree on length")
    if not (include_headers or include_values):
        raise ValueError("structural representation needs headers or values")
    rows = []
    kinds = []
    for j, header_span in enumerate(linearized.header_spans):
        if include_headers:
            rows.append(pool(embeddings[header_span.start:header_span.end], spec))
            kinds.append((HEADER_SLOT, j))
        value_span = linearized.value_spans[j]
        if include_values and value_span is not None:
            rows.append(pool(embeddings[value_span.start:value_span.end], spec))
            kinds.append((VALUE_SLOT, j))
    if not rows:
        raise SchemaError("table yields no representation rows under this variant")
    return TableReprs(matrix=np.stack(rows), kinds=kinds, column_count=linearized.column_count)
