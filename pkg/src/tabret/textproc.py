"""Text processing for questions and tables.

Tokenization, a small rule-based part-of-speech tagger, noun phrase chunking,
and column-wise table linearization with header/value span maps. Everything
here is deterministic and dependency-free so the same token streams can be
reproduced anywhere.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Callable

from .errors import SchemaError

if TYPE_CHECKING:  # pragma: no cover
    from .corpus import DistinctTable

__all__ = [
    "Token",
    "TokenSpan",
    "Tag",
    "TaggedToken",
    "TokenizedQuestion",
    "LinearizedTable",
    "tokenize",
    "pos_tag",
    "extract_noun_phrases",
    "linearize_table",
    "analyze_question",
]

# Order matters: digit runs with internal ./, first, then letter runs, then any
# single non-space character (underscore is in \w, so it needs its own branch).
_TOKEN_RE = re.compile(r"\d+(?:[.,]\d+)*|[^\W\d_]+|[^\w\s]|_")
_NUMERIC_RE = re.compile(r"\d+(?:[.,]\d+)*\Z")


@dataclass(frozen=True)
class Token:
    """One lowercased token with its character span in the source text."""

    text: str
    start: int
    end: int
    raw: str = ""

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("token text must be non-empty")
        if not (0 <= self.start < self.end):
            raise ValueError(f"bad token span [{self.start}, {self.end})")
        if not self.raw:
            object.__setattr__(self, "raw", self.text)


@dataclass(frozen=True)
class TokenSpan:
    """Contiguous token index range, start inclusive, end exclusive."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end):
            raise ValueError(f"bad token span [{self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start


class Tag(Enum):
    DET = "DET"
    ADJ = "ADJ"
    NOUN = "NOUN"
    PROPN = "PROPN"
    NUM = "NUM"
    VERB = "VERB"
    PREP = "PREP"
    OTHER = "OTHER"


@dataclass(frozen=True)
class TaggedToken:
    token: Token
    tag: Tag


@dataclass(frozen=True)
class TokenizedQuestion:
    """Question tokens plus, once chunked, its noun phrase spans."""

    tokens: list[Token]
    np_spans: list[TokenSpan] | None = None


@dataclass(frozen=True)
class LinearizedTable:
    """Column-wise token stream of a table with per-column span maps.

    ``header_spans[j]`` covers column j's header tokens. ``value_spans[j]``
    covers the tokens of column j's first-row cell, or is None when the table
    has no rows or the cell tokenizes to nothing.
    """

    tokens: list[Token]
    header_spans: list[TokenSpan]
    value_spans: list[TokenSpan | None]

    @property
    def column_count(self) -> int:
        return len(self.header_spans)


def tokenize(text: str) -> list[Token]:
    """Split text into lowercased tokens with source character spans.

    Whitespace separates tokens, punctuation characters become single-char
    tokens, and digit runs with internal '.' or ',' stay whole ("3.5",
    "1,000"). Raises ValueError for empty or whitespace-only input.
    """
    if not text or not text.strip():
        raise ValueError("cannot tokenize empty or whitespace-only text")
    tokens = []
    for match in _TOKEN_RE.finditer(text):
        raw = match.group(0)
        tokens.append(Token(text=raw.lower(), start=match.start(), end=match.end(), raw=raw))
    if not tokens:
        raise ValueError("cannot tokenize empty or whitespace-only text")
    return tokens


# Closed-class word lists for the tagger. Small on purpose: anything not
# covered falls through to the suffix, capitalization, and NOUN defaults.
_QUESTION_WORDS = {
    "which", "what", "who", "whom", "whose", "where", "when", "why", "how",
}
_DETERMINERS = {
    "the", "a", "an", "this", "that", "these", "those",
    "each", "every", "some", "any", "no", "another", "either", "neither",
}
_PREPOSITIONS = {
    "of", "in", "on", "at", "by", "for", "with", "from", "to", "about",
    "into", "over", "under", "between", "during", "after", "before",
    "through", "against", "without", "within", "per", "as",
}
_VERBS = {
    "is", "are", "was", "were", "be", "been", "being", "am",
    "do", "does", "did", "done", "have", "has", "had", "having",
    "will", "would", "shall", "should", "can", "could", "may", "might",
    "must", "go", "goes", "went", "gone", "run", "ran", "get", "got",
    "make", "made", "take", "took", "say", "said", "see", "saw",
    "come", "came", "give", "gave", "find", "found", "play", "show",
    "win", "won", "lose", "lost", "hold", "held", "become", "became",
}
_ADJECTIVES = {
    "many", "much", "few", "more", "most", "less", "least",
    "first", "last", "next", "same", "other", "new", "old",
    "good", "best", "worst", "high", "low", "large", "small",
    "total", "average", "main", "major", "top",
}

_VERB_SUFFIXES = ("ing", "ed")
_ADJ_SUFFIXES = ("ous", "ful", "est", "ive", "less", "able")


def _tag_one(token: Token) -> Tag:
    text = token.text
    if not any(ch.isalnum() for ch in text):
        return Tag.OTHER
    if text in _QUESTION_WORDS:
        return Tag.OTHER
    if text in _DETERMINERS:
        return Tag.DET
    if text in _PREPOSITIONS:
        return Tag.PREP
    if text in _VERBS:
        return Tag.VERB
    if text in _ADJECTIVES:
        return Tag.ADJ
    if _NUMERIC_RE.match(text):
        return Tag.NUM
    if len(text) > 4 and text.endswith("ing"):
        return Tag.VERB
    if len(text) > 3 and text.endswith("ed"):
        return Tag.VERB
    if len(text) > 4 and text.endswith(_ADJ_SUFFIXES):
        return Tag.ADJ
    if token.raw[:1].isupper():
        return Tag.PROPN
    return Tag.NOUN


def pos_tag(tokens: list[Token]) -> list[TaggedToken]:
    """Tag tokens with a closed-class lexicon, numeric and suffix rules,
    a capitalization check, and NOUN as the default."""
    return [TaggedToken(token=t, tag=_tag_one(t)) for t in tokens]


_NP_HEADS = {Tag.NOUN, Tag.PROPN, Tag.NUM}


def extract_noun_phrases(tagged: list[TaggedToken]) -> list[TokenSpan]:
    """Chunk maximal noun phrases: an optional determiner, any adjectives,
    then at least one noun/proper-noun/number.

    Scans left to right, emitting non-overlapping maximal matches. If the
    sequence contains no noun phrase at all, a single span covering the whole
    input is returned so a question always yields at least one span.
    """
    if not tagged:
        raise ValueError("cannot chunk an empty tag sequence")
    spans = []
    i = 0
    n = len(tagged)
    while i < n:
        k = i
        if tagged[k].tag is Tag.DET:
            k += 1
        while k < n and tagged[k].tag is Tag.ADJ:
            k += 1
        head_start = k
        while k < n and tagged[k].tag in _NP_HEADS:
            k += 1
        if k > head_start:
            spans.append(TokenSpan(i, k))
            i = k
        else:
            i += 1
    if not spans:
        return [TokenSpan(0, n)]
    return spans


def analyze_question(text: str) -> TokenizedQuestion:
    """Tokenize a question and attach its noun phrase spans."""
    tokens = tokenize(text)
    spans = extract_noun_phrases(pos_tag(tokens))
    return TokenizedQuestion(tokens=tokens, np_spans=spans)


def linearize_table(
    table: "DistinctTable",
    tokenizer: Callable[[str], list[Token]] | None = None,
) -> LinearizedTable:
    """Serialize a table column by column into one token stream.

    For each column: header tokens first, then that column's cell tokens row
    by row. No separator tokens are inserted; structure is recovered through
    the span maps instead. Token spans index a virtual text formed by joining
    the visited strings with single spaces.
    """
    if tokenizer is None:
        tokenizer = tokenize
    headers = table.headers
    if not headers:
        raise SchemaError(f"table {table.distinct_id!r} has no columns")
    tokens: list[Token] = []
    header_spans = []
    value_spans: list[TokenSpan | None] = []
    offset = 0

    def consume(text: str) -> list[Token]:
        # Cells may legitimately be empty; they contribute no tokens.
        nonlocal offset
        if not text.strip():
            out: list[Token] = []
        else:
            out = [
                Token(text=t.text, start=t.start + offset, end=t.end + offset, raw=t.raw)
                for t in tokenizer(text)
            ]
        offset += len(text) + 1
        return out

    for j, header in enumerate(headers):
        if not header.strip():
            raise SchemaError(
                f"table {table.distinct_id!r} has an empty header in column {j}"
            )
        header_toks = consume(header)
        header_spans.append(TokenSpan(len(tokens), len(tokens) + len(header_toks)))
        tokens.extend(header_toks)
        value_span = None
        for r, row in enumerate(table.rows):
            cell_toks = consume(row[j])
            if r == 0 and cell_toks:
                value_span = TokenSpan(len(tokens), len(tokens) + len(cell_toks))
            tokens.extend(cell_toks)
        value_spans.append(value_span)
    return LinearizedTable(tokens=tokens, header_spans=header_spans, value_spans=value_spans)
