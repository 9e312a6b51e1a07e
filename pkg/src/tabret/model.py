"""Model parameter bundle and the representation pipeline.

Everything a scorer needs travels together here: embedder settings, the seed
bank, pooling specs for both sides, the optional projection, and the optional
trainable vocab table. The table-side subset of these settings is hashed into
a fingerprint so a prebuilt index can refuse to serve a model it was not
built for.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .blockfile import read_blockfile, write_blockfile
from .embed import (
    EmbedderConfig,
    ExternalRecord,
    VocabTable,
    align_external,
    contextualize,
    embed_hashed,
)
from .errors import SchemaError
from .reprs import (
    HEADER_SLOT,
    SEQUENCE_SLOT,
    VALUE_SLOT,
    PoolingSpec,
    Projection,
    QuestionReprs,
    SeedBank,
    TableReprs,
    explicit_question_reprs,
    implicit_question_reprs,
    project,
    sequence_repr,
    structural_table_reprs,
)
from .textproc import LinearizedTable, TokenizedQuestion, extract_noun_phrases, pos_tag

__all__ = [
    "ModelParams",
    "MODES",
    "ABLATIONS",
    "embed_sequence",
    "question_representation",
    "table_representation",
    "save_checkpoint",
    "load_checkpoint",
]

MODES = ("explicit", "implicit")

# Representation variants: full keeps both sides structured; the others drop
# the syntactic question side (no_S1), the structural table side (no_S2),
# only its header or value rows (no_S2_head / no_S2_value), or both sides at
# once (no_S1_S2), replacing what was dropped with a single mean vector.
ABLATIONS = ("full", "no_S1", "no_S2", "no_S2_head", "no_S2_value", "no_S1_S2")

CHECKPOINT_FORMAT = "tabret-checkpoint"


@dataclass(eq=False)
class ModelParams:
    embedder: EmbedderConfig
    mode: str = "implicit"
    ablation: str = "full"
    seed_bank: SeedBank | None = None
    question_pool: PoolingSpec = None
    table_pool: PoolingSpec = None
    projection: Projection = None
    vocab: VocabTable | None = None
    init_seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise SchemaError(f"unknown mode {self.mode!r}")
        if self.ablation not in ABLATIONS:
            raise SchemaError(f"unknown ablation {self.ablation!r}")
        if self.question_pool is None:
            self.question_pool = PoolingSpec()
        if self.table_pool is None:
            self.table_pool = PoolingSpec()
        if self.mode == "implicit" and self.seed_bank is None:
            raise SchemaError("implicit mode requires a seed bank")
        if self.projection is None:
            self.projection = Projection()
        if self.embedder.kind == "vocab" and self.vocab is None:
            raise SchemaError("vocab embedder requires a vocab table")

    @classmethod
    def initialize(
        cls,
        embedder: EmbedderConfig,
        mode: str = "implicit",
        ablation: str = "full",
        n_seeds: int = 3,
        pooling: str = "mean",
        projection_dim: int | None = None,
        vocab: VocabTable | None = None,
        init_seed: int = 0,
    ) -> "ModelParams":
        """Fresh parameters with a fixed draw order, deterministic per seed."""
        rng = np.random.default_rng(init_seed)
        seed_bank = None
        if mode == "implicit":
            seed_bank = SeedBank.initialize(n_seeds, embedder.dim, rng)

        def make_pool() -> PoolingSpec:
            if pooling == "attentive":
                return PoolingSpec.attentive(embedder.dim)
            return PoolingSpec(kind=pooling)

        projection = Projection.initialize(embedder.dim, projection_dim, rng)
        return cls(
            embedder=embedder,
            mode=mode,
            ablation=ablation,
            seed_bank=seed_bank,
            question_pool=make_pool(),
            table_pool=make_pool(),
            projection=projection,
            vocab=vocab,
            init_seed=init_seed,
        )

    def clone(self) -> "ModelParams":
        return copy.deepcopy(self)

    # Trainable parameter registry. Keys double as checkpoint block names and
    # optimizer state keys; values are live array references that optimizer
    # steps update in place.
    def trainable_arrays(self) -> dict[str, np.ndarray]:
        arrays: dict[str, np.ndarray] = {}
        if self.seed_bank is not None:
            arrays["seeds"] = self.seed_bank.seeds
        if self.question_pool.kind == "attentive":
            arrays["question_u"] = self.question_pool.u
            arrays["question_b"] = self.question_pool.b
        if self.table_pool.kind == "attentive":
            arrays["table_u"] = self.table_pool.u
            arrays["table_b"] = self.table_pool.b
        if self.projection.enabled:
            arrays["projection"] = self.projection.weight
        if self.vocab is not None and self.vocab.trainable:
            arrays["vocab"] = self.vocab.vectors
        return arrays

    def decayed_parameters(self) -> set[str]:
        """Slots that receive decoupled weight decay."""
        return {k for k in ("projection", "vocab") if k in self.trainable_arrays()}

    def question_side_uses_seeds(self) -> bool:
        return self.mode == "implicit" and self.ablation not in ("no_S1", "no_S1_S2")

    def output_dim(self) -> int:
        return self.projection.out_dim or self.embedder.dim

    def table_fingerprint(self) -> str:
        """Digest of everything that shapes table representations.

        An index built under one fingerprint is only valid for models with
        the same one. Question-side parameters are deliberately excluded:
        training only the seed bank does not invalidate an index.
        """
        settings = {
            "embedder": {
                "kind": self.embedder.kind,
                "dim": self.embedder.dim,
                "seed": self.embedder.seed,
                "context_window": self.embedder.context_window,
                "context_alpha": self.embedder.context_alpha,
            },
            "ablation": self.ablation,
            "table_pool": self.table_pool.kind,
            "projection_dim": self.projection.out_dim,
        }
        digest = hashlib.sha256(json.dumps(settings, sort_keys=True).encode("utf-8"))
        if self.table_pool.kind == "attentive":
            digest.update(np.ascontiguousarray(self.table_pool.u).tobytes())
            digest.update(np.ascontiguousarray(self.table_pool.b).tobytes())
        if self.projection.enabled:
            digest.update(np.ascontiguousarray(self.projection.weight).tobytes())
        if self.vocab is not None:
            digest.update("\x00".join(self.vocab.tokens).encode("utf-8"))
            digest.update(np.ascontiguousarray(self.vocab.vectors).tobytes())
        return digest.hexdigest()


def embed_sequence(
    params: ModelParams,
    tokens,
    external: ExternalRecord | None = None,
) -> np.ndarray:
    """Token embeddings under the configured backend, contextualized."""
    cfg = params.embedder
    if cfg.kind == "external":
        if external is None:
            raise SchemaError("external embedder needs an embedding record")
        matrix = align_external(external, tokens)
        if matrix.shape[1] != cfg.dim:
            raise SchemaError(
                f"external record {external.id!r} has dim {matrix.shape[1]}, "
                f"expected {cfg.dim}"
            )
    elif cfg.kind == "vocab":
        matrix = params.vocab.embed(tokens)
    else:
        matrix = embed_hashed(tokens, cfg.dim, cfg.seed)
    return contextualize(matrix, cfg.context_window, cfg.context_alpha)


def _question_spans(question: TokenizedQuestion):
    if question.np_spans is not None:
        return question.np_spans
    return extract_noun_phrases(pos_tag(question.tokens))


def question_representation(
    params: ModelParams,
    question: TokenizedQuestion,
    external: ExternalRecord | None = None,
) -> QuestionReprs:
    """Question vectors under the configured mode and ablation, projected."""
    embeddings = embed_sequence(params, question.tokens, external)
    if params.ablation in ("no_S1", "no_S1_S2"):
        if external is not None and external.sequence_vector is not None:
            matrix = external.sequence_vector[None, :].astype(float)
        else:
            matrix = sequence_repr(embeddings)
        reprs = QuestionReprs(matrix=matrix, mode="sequence")
    elif params.mode == "explicit":
        reprs = explicit_question_reprs(embeddings, _question_spans(question), params.question_pool)
    else:
        reprs = implicit_question_reprs(embeddings, params.seed_bank)
    return QuestionReprs(matrix=project(reprs.matrix, params.projection), mode=reprs.mode)


def table_representation(
    params: ModelParams,
    linearized: LinearizedTable,
    external: ExternalRecord | None = None,
) -> TableReprs:
    """Table vectors under the configured ablation, projected."""
    embeddings = embed_sequence(params, linearized.tokens, external)
    if params.ablation in ("no_S2", "no_S1_S2"):
        if external is not None and external.sequence_vector is not None:
            matrix = external.sequence_vector[None, :].astype(float)
        else:
            matrix = sequence_repr(embeddings)
        reprs = TableReprs(
            matrix=matrix,
            kinds=[(SEQUENCE_SLOT, 0)],
            column_count=linearized.column_count,
        )
    else:
        reprs = structural_table_reprs(
            embeddings,
            linearized,
            params.table_pool,
            include_headers=params.ablation != "no_S2_head",
            include_values=params.ablation != "no_S2_value",
        )
    return TableReprs(
        matrix=project(reprs.matrix, params.projection),
        kinds=reprs.kinds,
        column_count=reprs.column_count,
    )


def save_checkpoint(path, params: ModelParams) -> None:
    """Write parameters as a JSON header plus float32 blocks."""
    meta = {
        "embedder": {
            "kind": params.embedder.kind,
            "dim": params.embedder.dim,
            "seed": params.embedder.seed,
            "context_window": params.embedder.context_window,
            "context_alpha": params.embedder.context_alpha,
        },
        "mode": params.mode,
        "ablation": params.ablation,
        "question_pool": params.question_pool.kind,
        "table_pool": params.table_pool.kind,
        "n_seeds": None if params.seed_bank is None else params.seed_bank.n,
        "projection_dim": params.projection.out_dim,
        "init_seed": params.init_seed,
        "vocab": None
        if params.vocab is None
        else {
            "tokens": params.vocab.tokens,
            "seed": params.vocab.seed,
            "trainable": params.vocab.trainable,
        },
    }
    blocks = {
        name: array.astype(np.float32)
        for name, array in params.trainable_arrays().items()
    }
    # Untrainable vocab rows still have to travel with the model.
    if params.vocab is not None and "vocab" not in blocks:
        blocks["vocab"] = params.vocab.vectors.astype(np.float32)
    write_blockfile(path, CHECKPOINT_FORMAT, 1, meta, blocks)


def load_checkpoint(path) -> ModelParams:
    header, blocks = read_blockfile(path, CHECKPOINT_FORMAT)
    meta = header["meta"]
    embedder = EmbedderConfig(**meta["embedder"])
    seed_bank = None
    if meta["n_seeds"] is not None:
        if "seeds" not in blocks:
            raise SchemaError(f"{path}: checkpoint promises seeds but has no block")
        seed_bank = SeedBank(seeds=blocks["seeds"].astype(np.float64))

    def load_pool(kind: str, prefix: str) -> PoolingSpec:
        if kind != "attentive":
            return PoolingSpec(kind=kind)
        return PoolingSpec(
            kind="attentive",
            u=blocks[f"{prefix}_u"].astype(np.float64),
            b=blocks[f"{prefix}_b"].astype(np.float64),
        )

    projection = Projection()
    if meta["projection_dim"] is not None:
        projection = Projection(weight=blocks["projection"].astype(np.float64))
    vocab = None
    if meta["vocab"] is not None:
        vocab = VocabTable(
            tokens=list(meta["vocab"]["tokens"]),
            vectors=blocks["vocab"].astype(np.float64),
            seed=meta["vocab"]["seed"],
            trainable=bool(meta["vocab"]["trainable"]),
        )
    return ModelParams(
        embedder=embedder,
        mode=meta["mode"],
        ablation=meta["ablation"],
        seed_bank=seed_bank,
        question_pool=load_pool(meta["question_pool"], "question"),
        table_pool=load_pool(meta["table_pool"], "table"),
        projection=projection,
        vocab=vocab,
        init_seed=meta["init_seed"],
    )
