"""Table corpus preparation.

Loads raw table and question files, merges tables that share a header row,
deduplicates rows, samples a bounded number of rows per table, and trims
linearized length to a token budget. All randomness flows through explicit
seeds so a prepared corpus is reproducible byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import SchemaError
from .textproc import Token, linearize_table

__all__ = [
    "RawTable",
    "DistinctTable",
    "TableMapping",
    "Corpus",
    "Question",
    "load_tables",
    "save_tables",
    "load_questions",
    "save_questions",
    "load_mapping",
    "save_mapping",
    "merge_same_header",
    "sample_rows",
    "trim_to_budget",
    "prepare_corpus",
    "table_seed",
]

MAPPING_FORMAT = "tabret-mapping"
FORMAT_VERSION = 1

_TABLE_KEYS = {"id", "title", "headers", "rows"}
_QUESTION_KEYS = {"id", "question", "gold_table_ids"}


@dataclass(frozen=True)
class RawTable:
    """One table as it appears in an input file."""

    id: str
    headers: list[str]
    rows: list[list[str]]
    title: str | None = None

    def validate(self) -> None:
        if not self.id:
            raise SchemaError("table with empty id")
        if not self.headers:
            raise SchemaError(f"table {self.id!r} has no headers")
        width = len(self.headers)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise SchemaError(
                    f"table {self.id!r} row {i} has {len(row)} cells, expected {width}"
                )


@dataclass(frozen=True)
class DistinctTable:
    """A merged table: one representative per normalized header signature."""

    distinct_id: str
    headers: list[str]
    rows: list[list[str]]
    source_ids: frozenset[str]

    @property
    def column_count(self) -> int:
        return len(self.headers)


@dataclass(frozen=True)
class TableMapping:
    """Total map from original table ids to distinct table ids."""

    entries: dict[str, str]

    def resolve(self, original_id: str) -> str:
        try:
            return self.entries[original_id]
        except KeyError:
            raise SchemaError(f"unknown original table id {original_id!r}") from None


@dataclass(frozen=True)
class Corpus:
    """Distinct tables in first-occurrence order plus the id mapping."""

    tables: list[DistinctTable]
    mapping: TableMapping

    def __len__(self) -> int:
        return len(self.tables)

    def table(self, distinct_id: str) -> DistinctTable:
        for t in self.tables:
            if t.distinct_id == distinct_id:
                return t
        raise SchemaError(f"unknown distinct table id {distinct_id!r}")


@dataclass(frozen=True)
class Question:
    """A natural language question with its gold original table ids."""

    id: str
    question: str
    gold_table_ids: list[str]


def _read_jsonl(path: str | Path) -> Iterable[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise SchemaError(f"{path}: line {lineno}: expected an object")
            yield lineno, record


def load_tables(path: str | Path) -> list[RawTable]:
    """Load tables from JSONL, one object per line.

    Each record must carry ``id``, ``headers``, and ``rows``; ``title`` is
    optional. Malformed lines raise SchemaError with the line number.
    """
    tables = []
    for lineno, record in _read_jsonl(path):
        unknown = set(record) - _TABLE_KEYS
        if unknown:
            raise SchemaError(
                f"{path}: line {lineno}: unknown table keys {sorted(unknown)}"
            )
        try:
            table = RawTable(
                id=record["id"],
                headers=list(record["headers"]),
                rows=[list(r) for r in record["rows"]],
                title=record.get("title"),
            )
        except KeyError as exc:
            raise SchemaError(f"{path}: line {lineno}: missing key {exc.args[0]!r}") from exc
        try:
            table.validate()
        except SchemaError as exc:
            raise SchemaError(f"{path}: line {lineno}: {exc}") from None
        tables.append(table)
    return tables


def save_tables(path: str | Path, tables: Iterable[RawTable | DistinctTable]) -> None:
    """Write tables as JSONL in the same schema ``load_tables`` reads."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in tables:
            record: dict = {"id": t.distinct_id if isinstance(t, DistinctTable) else t.id}
            title = getattr(t, "title", None)
            if title is not None:
                record["title"] = title
            record["headers"] = list(t.headers)
            record["rows"] = [list(r) for r in t.rows]
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def load_questions(path: str | Path) -> list[Question]:
    """Load questions from JSONL records with id, question, gold_table_ids."""
    questions = []
    for lineno, record in _read_jsonl(path):
        unknown = set(record) - _QUESTION_KEYS
        if unknown:
            raise SchemaError(
                f"{path}: line {lineno}: unknown question keys {sorted(unknown)}"
            )
        try:
            q = Question(
                id=record["id"],
                question=record["question"],
                gold_table_ids=list(record["gold_table_ids"]),
            )
        except KeyError as exc:
            raise SchemaError(f"{path}: line {lineno}: missing key {exc.args[0]!r}") from exc
        if not q.id:
            raise SchemaError(f"{path}: line {lineno}: question with empty id")
        if not q.question.strip():
            raise SchemaError(f"{path}: line {lineno}: question {q.id!r} has empty text")
        questions.append(q)
    return questions


def save_questions(path: str | Path, questions: Iterable[Question]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            record = {
                "id": q.id,
                "question": q.question,
                "gold_table_ids": list(q.gold_table_ids),
            }
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def load_mapping(path: str | Path) -> TableMapping:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            record = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc.msg})") from exc
    entries = record.get("original_to_distinct")
    if not isinstance(entries, dict):
        raise SchemaError(f"{path}: missing original_to_distinct object")
    return TableMapping(entries=dict(entries))


def save_mapping(path: str | Path, mapping: TableMapping) -> None:
    record = {
        "format": MAPPING_FORMAT,
        "version": FORMAT_VERSION,
        "original_to_distinct": dict(sorted(mapping.entries.items())),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _header_key(headers: list[str]) -> tuple[str, ...]:
    # Order-sensitive on purpose: same columns in a different order are a
    # different table.
    return tuple(h.strip().lower() for h in headers)


def merge_same_header(tables: list[RawTable]) -> Corpus:
    """Merge tables whose normalized header rows coincide.

    Normalization lowercases and trims each header; comparison is order
    sensitive. Rows concatenate in input order and exact duplicate rows are
    dropped, keeping the first occurrence. The merged table takes the id of
    the group's first table, and every original id maps to its group's
    distinct id.
    """
    seen_ids: set[str] = set()
    groups: dict[tuple[str, ...], int] = {}
    headers_by_group: list[list[str]] = []
    ids_by_group: list[str] = []
    sources_by_group: list[list[str]] = []
    rows_by_group: list[list[list[str]]] = []
    row_sets: list[set[tuple[str, ...]]] = []
    mapping: dict[str, str] = {}

    for table in tables:
        table.validate()
        if table.id in seen_ids:
            raise SchemaError(f"duplicate table id {table.id!r}")
        seen_ids.add(table.id)
        key = _header_key(table.headers)
        if key not in groups:
            groups[key] = len(headers_by_group)
            headers_by_group.append(list(table.headers))
            ids_by_group.append(table.id)
            sources_by_group.append([])
            rows_by_group.append([])
            row_sets.append(set())
        g = groups[key]
        sources_by_group[g].append(table.id)
        mapping[table.id] = ids_by_group[g]
        for row in table.rows:
            signature = tuple(row)
            if signature not in row_sets[g]:
                row_sets[g].add(signature)
                rows_by_group[g].append(list(row))

    distinct = [
        DistinctTable(
            distinct_id=ids_by_group[g],
            headers=headers_by_group[g],
            rows=rows_by_group[g],
            source_ids=frozenset(sources_by_group[g]),
        )
        for g in range(len(ids_by_group))
    ]
    return Corpus(tables=distinct, mapping=TableMapping(entries=mapping))


def table_seed(seed: int, distinct_id: str) -> int:
    """Per-table RNG seed derived from a pipeline seed and a table id.

    Stable across processes and independent of table order.
    """
    digest = hashlib.blake2b(
        f"{seed}:{distinct_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


def sample_rows(table: DistinctTable, max_rows: int = 5, rng_seed: int = 0) -> DistinctTable:
    """Keep at most ``max_rows`` rows, sampled uniformly without replacement.

    Surviving rows keep their original relative order. Tables already within
    the limit are returned unchanged.
    """
    if max_rows < 1:
        raise ValueError("max_rows must be at least 1")
    if len(table.rows) <= max_rows:
        return table
    rng = np.random.default_rng(rng_seed)
    picked = rng.choice(len(table.rows), size=max_rows, replace=False)
    picked = sorted(int(i) for i in picked)
    return replace(table, rows=[table.rows[i] for i in picked])


def trim_to_budget(
    table: DistinctTable,
    token_budget: int,
    tokenizer: Callable[[str], list[Token]] | None = None,
) -> DistinctTable:
    """Drop whole rows from the end until the linearized table fits the budget.

    At least one row always survives; if headers plus the first row alone
    exceed the budget the table cannot be represented and a SchemaError is
    raised.
    """
    if token_budget < 1:
        raise ValueError("token_budget must be positive")
    current = table

    def length(t: DistinctTable) -> int:
        return len(linearize_table(t, tokenizer).tokens)

    while length(current) > token_budget and len(current.rows) > 1:
        current = replace(current, rows=current.rows[:-1])
    if length(current) > token_budget:
        raise SchemaError(
            f"token budget {token_budget} cannot hold headers plus one row of "
            f"table {table.distinct_id!r}"
        )
    return current


def prepare_corpus(
    tables: list[RawTable],
    max_rows: int = 5,
    token_budget: int | None = None,
    seed: int = 0,
    tokenizer: Callable[[str], list[Token]] | None = None,
) -> Corpus:
    """Full ingestion pipeline: merge, per-table row sampling, budget trim."""
    merged = merge_same_header(tables)
    prepared = []
    for table in merged.tables:
        sampled = sample_rows(table, max_rows=max_rows, rng_seed=table_seed(seed, table.distinct_id))
        if token_budget:
            sampled = trim_to_budget(sampled, token_budget, tokenizer)
        prepared.append(sampled)
    return Corpus(tables=prepared, mapping=merged.mapping)
