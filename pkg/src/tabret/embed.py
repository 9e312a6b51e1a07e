"""Token embedding backends.

Three sources of token vectors share one contract (token list in, row-aligned
matrix out): deterministic hashed random vectors, a trainable vocabulary
table initialized from the same hashed scheme, and externally computed
embeddings loaded from JSONL. A light ``contextualize`` pass can blend each
vector with its local window mean; its adjoint lives here too so training can
push gradients through it.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import SchemaError
from .textproc import Token

__all__ = [
    "EmbedderConfig",
    "VocabTable",
    "ExternalRecord",
    "token_vector",
    "embed_hashed",
    "contextualize",
    "contextualize_backward",
    "read_external_embeddings",
    "save_external_embeddings",
    "load_external_embeddings",
]

EMBEDDER_KINDS = ("hashed", "vocab", "external")


@dataclass(frozen=True)
class EmbedderConfig:
    """How token vectors are produced, including the contextualize blend."""

    kind: str = "hashed"
    dim: int = 64
    seed: int = 0
    context_window: int = 0
    context_alpha: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in EMBEDDER_KINDS:
            raise SchemaError(f"unknown embedder kind {self.kind!r}")
        if self.dim < 2:
            raise SchemaError("embedding dim must be at least 2")
        if self.context_window < 0:
            raise SchemaError("context_window must be non-negative")
        if not (0.0 <= self.context_alpha < 1.0):
            raise SchemaError("context_alpha must lie in [0, 1)")


def _texts(tokens: Sequence[Token | str]) -> list[str]:
    return [t.text if isinstance(t, Token) else t for t in tokens]


def _token_rng_seed(text: str, seed: int) -> int:
    digest = hashlib.blake2b(f"{seed}:{text}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def token_vector(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic pseudo-random vector for one token string.

    The token text and seed key a PRNG stream; entries are standard normals
    scaled by 1/sqrt(dim) so dot products between tokens stay O(1).
    """
    rng = np.random.default_rng(_token_rng_seed(text, seed))
    return rng.standard_normal(dim) / math.sqrt(dim)


def embed_hashed(tokens: Sequence[Token | str], dim: int, seed: int = 0) -> np.ndarray:
    """Embed a token sequence with hashed random vectors, one row per token."""
    texts = _texts(tokens)
    if not texts:
        raise ValueError("cannot embed an empty token sequence")
    cache: dict[str, np.ndarray] = {}
    rows = []
    for text in texts:
        vec = cache.get(text)
        if vec is None:
            vec = token_vector(text, dim, seed)
            cache[text] = vec
        rows.append(vec)
    return np.stack(rows)


@dataclass(eq=False)
class VocabTable:
    """Trainable token-to-vector table.

    Rows are initialized with the hashed scheme, so before any training a
    vocab embedder reproduces ``embed_hashed`` exactly; unknown tokens fall
    back to the same hashed vector they would have been initialized with.
    """

    tokens: list[str]
    vectors: np.ndarray
    seed: int = 0
    trainable: bool = True
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if len(self.tokens) != self.vectors.shape[0]:
            raise SchemaError("vocab token list and vector rows disagree")
        self._index = {t: i for i, t in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise SchemaError("vocab contains duplicate tokens")

    @classmethod
    def build(
        cls,
        token_source: Iterable[Token | str],
        dim: int,
        seed: int = 0,
        trainable: bool = True,
    ) -> "VocabTable":
        texts = sorted(set(_texts(list(token_source))))
        if not texts:
            raise SchemaError("cannot build an empty vocab table")
        vectors = np.stack([token_vector(t, dim, seed) for t in texts])
        return cls(tokens=texts, vectors=vectors, seed=seed, trainable=trainable)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def row(self, text: str) -> int | None:
        return self._index.get(text)

    def lookup_ids(self, tokens: Sequence[Token | str]) -> np.ndarray:
        """Row indices for a token sequence; -1 marks out-of-vocab tokens."""
        return np.array([self._index.get(t, -1) for t in _texts(tokens)], dtype=np.int64)

    def embed(self, tokens: Sequence[Token | str]) -> np.ndarray:
        texts = _texts(tokens)
        if not texts:
            raise ValueError("cannot embed an empty token sequence")
        rows = []
        for text in texts:
            i = self._index.get(text)
            if i is None:
                rows.append(token_vector(text, self.dim, self.seed))
            else:
                rows.append(self.vectors[i])
        return np.stack(rows)


def contextualize(matrix: np.ndarray, window: int = 0, alpha: float = 0.0) -> np.ndarray:
    """Blend each row with the mean of its local window.

    Output row l is (1 - alpha) * h_l + alpha * mean(h_{l-window} .. h_{l+window})
    with the window clipped at the sequence edges. ``alpha=0`` or ``window=0``
    returns the input unchanged.
    """
    if matrix.ndim != 2:
        raise ValueError("expected a 2-d embedding matrix")
    if window < 0:
        raise ValueError("window must be non-negative")
    if not (0.0 <= alpha < 1.0):
        raise ValueError("alpha must lie in [0, 1)")
    if alpha == 0.0 or window == 0:
        return matrix
    length = matrix.shape[0]
    cumulative = np.vstack([np.zeros((1, matrix.shape[1])), np.cumsum(matrix, axis=0)])
    lo = np.maximum(np.arange(length) - window, 0)
    hi = np.minimum(np.arange(length) + window, length - 1)
    sums = cumulative[hi + 1] - cumulative[lo]
    counts = (hi - lo + 1).astype(float)[:, None]
    return (1.0 - alpha) * matrix + alpha * (sums / counts)


def contextualize_backward(grad: np.ndarray, window: int, alpha: float) -> np.ndarray:
    """Adjoint of ``contextualize`` with the same window and alpha."""
    if alpha == 0.0 or window == 0:
        return grad
    length = grad.shape[0]
    lo = np.maximum(np.arange(length) - window, 0)
    hi = np.minimum(np.arange(length) + window, length - 1)
    counts = (hi - lo + 1).astype(float)[:, None]
    scaled = grad / counts
    # Transposed window mean: position k collects scaled rows of every l whose
    # window contains k, which is again a +-window band around k.
    cumulative = np.vstack([np.zeros((1, grad.shape[1])), np.cumsum(scaled, axis=0)])
    k_lo = np.maximum(np.arange(length) - window, 0)
    k_hi = np.minimum(np.arange(length) + window, length - 1)
    band = cumulative[k_hi + 1] - cumulative[k_lo]
    return (1.0 - alpha) * grad + alpha * band


@dataclass(frozen=True)
class ExternalRecord:
    """Externally computed embeddings for one question or table."""

    id: str
    tokens: list[str]
    vectors: np.ndarray
    sequence_vector: np.ndarray | None = None


def read_external_embeddings(path: str | Path) -> dict[str, ExternalRecord]:
    """Read an external embedding JSONL file keyed by record id."""
    records: dict[str, ExternalRecord] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            try:
                rid = raw["id"]
                tokens = [str(t) for t in raw["tokens"]]
                dim = int(raw["dim"])
                vectors = np.array(raw["vectors"], dtype=float)
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"{path}: line {lineno}: malformed record ({exc})") from exc
            if vectors.ndim != 2 or vectors.shape != (len(tokens), dim):
                raise SchemaError(
                    f"{path}: line {lineno}: vectors shape {vectors.shape} does not "
                    f"match {len(tokens)} tokens of dim {dim}"
                )
            seq = None
            if "sequence_vector" in raw:
                seq = np.array(raw["sequence_vector"], dtype=float)
                if seq.shape != (dim,):
                    raise SchemaError(
                        f"{path}: line {lineno}: sequence_vector must have dim {dim}"
                    )
            if rid in records:
                raise SchemaError(f"{path}: line {lineno}: duplicate record id {rid!r}")
            records[rid] = ExternalRecord(
                id=rid, tokens=tokens, vectors=vectors, sequence_vector=seq
            )
    return records


def save_external_embeddings(path: str | Path, records: Iterable[ExternalRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            payload: dict = {
                "id": rec.id,
                "tokens": list(rec.tokens),
                "dim": int(rec.vectors.shape[1]),
                "vectors": [[float(x) for x in row] for row in rec.vectors],
            }
            if rec.sequence_vector is not None:
                payload["sequence_vector"] = [float(x) for x in rec.sequence_vector]
            fh.write(json.dumps(payload, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def align_external(record: ExternalRecord, expected_tokens: Sequence[Token | str]) -> np.ndarray:
    """Check a record's tokens against the expected sequence, position by
    position, and return its vector matrix. The first divergence is reported
    by index."""
    expected = _texts(expected_tokens)
    limit = min(len(record.tokens), len(expected))
    for i in range(limit):
        if record.tokens[i] != expected[i]:
            raise SchemaError(
                f"external embeddings for {record.id!r} diverge at token {i}: "
                f"{record.tokens[i]!r} != {expected[i]!r}"
            )
    if len(record.tokens) != len(expected):
        raise SchemaError(
            f"external embeddings for {record.id!r} diverge at token {limit}: "
            f"{len(record.tokens)} tokens provided, {len(expected)} expected"
        )
    return np.array(record.vectors, dtype=float)


def load_external_embeddings(
    path: str | Path,
    expected_tokens: Sequence[Token | str],
    record_id: str | None = None,
) -> np.ndarray:
    """Load one record's embedding matrix, aligned against expected tokens.

    With ``record_id`` unset the file must contain exactly one record.
    """
    records = read_external_embeddings(path)
    if record_id is None:
        if len(records) != 1:
            raise SchemaError(
                f"{path}: holds {len(records)} records; a record_id is required"
            )
        record = next(iter(records.values()))
    else:
        if record_id not in records:
            raise SchemaError(f"{path}: no record with id {record_id!r}")
        record = records[record_id]
    return align_external(record, expected_tokens)
