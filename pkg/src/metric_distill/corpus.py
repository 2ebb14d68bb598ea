"""Corpus ingestion: tokenization, length/dedup filtering and dataset loading.

The external corpus is a plain text file with one raw sentence per line.
The task dataset is JSONL, one concept set per line::

    {"concepts": ["dog", "run"], "references": ["A dog runs fast."]}
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

MIN_TOKENS = 4
MAX_TOKENS = 20

# A word is a run of letters/digits, optionally joined by internal apostrophes.
_WORD_RE = re.compile(r"[^\W_]+(?:'[^\W_]+)*")


class DatasetError(ValueError):
    """Raised for malformed dataset files."""


def tokenize(text: str) -> list[str]:
    """Lowercase ``text`` and split it into word tokens.

    Punctuation is dropped, except apostrophes inside a word
    (``"don't stop, now"`` -> ``["don't", "stop", "now"]``).
    """
    return _WORD_RE.findall(text.lower())


def _normalize_raw(text: str) -> str:
    return " ".join(text.split()).lower()


@dataclass(frozen=True)
class SentenceRecord:
    id: int
    raw: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class Corpus:
    """Immutable, ordered collection of filtered sentences; ``records[i].id == i``."""

    records: tuple[SentenceRecord, ...]

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, idx: int) -> SentenceRecord:
        return self.records[idx]

    def __iter__(self) -> Iterator[SentenceRecord]:
        return iter(self.records)

    @property
    def raw_sentences(self) -> list[str]:
        return [r.raw for r in self.records]


@dataclass(frozen=True)
class ConceptSet:
    """Unordered set of lowercase concepts, stored in lexicographic order."""

    concepts: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.concepts:
            raise ValueError("a concept set needs at least one concept")
        if len(set(self.concepts)) != len(self.concepts):
            raise ValueError(f"duplicate concepts in {self.concepts}")

    @classmethod
    def from_iterable(cls, concepts: Iterable[str]) -> "ConceptSet":
        cleaned = {c.strip().lower() for c in concepts}
        if "" in cleaned:
            raise ValueError("empty concept string")
        return cls(tuple(sorted(cleaned)))

    @property
    def m(self) -> int:
        return len(self.concepts)

    def __iter__(self) -> Iterator[str]:
        return iter(self.concepts)


@dataclass(frozen=True)
class DatasetExample:
    concept_set: ConceptSet
    references: tuple[tuple[str, ...], ...]
    raw_references: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.references:
            raise ValueError("an example needs at least one reference")
        if any(len(r) == 0 for r in self.references):
            raise ValueError("empty reference sentence")
        if not self.raw_references:
            object.__setattr__(
                self, "raw_references", tuple(" ".join(r) for r in self.references)
            )


def filter_corpus(raw_sentences: Iterable[str], exclusion_set: Iterable[str] = ()) -> Corpus:
    """Keep sentences with MIN_TOKENS..MAX_TOKENS tokens that are not excluded.

    Exclusion compares whitespace-normalized raw text case-insensitively.
    Surviving sentences keep their relative order and are numbered from 0.
    """
    excluded = {_normalize_raw(s) for s in exclusion_set}
    records: list[SentenceRecord] = []
    for raw in raw_sentences:
        tokens = tokenize(raw)
        if not MIN_TOKENS <= len(tokens) <= MAX_TOKENS:
            continue
        if _normalize_raw(raw) in excluded:
            continue
        records.append(SentenceRecord(len(records), raw, tuple(tokens)))
    return Corpus(tuple(records))


def read_corpus_file(path: str | Path, exclusion_set: Iterable[str] = ()) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    return filter_corpus((line for line in lines if line.strip()), exclusion_set)


def parse_example(obj: object) -> DatasetExample:
    if not isinstance(obj, dict):
        raise DatasetError("expected a JSON object")
    for key in ("concepts", "references"):
        if key not in obj:
            raise DatasetError(f"missing key {key!r}")
        if not isinstance(obj[key], list) or not all(isinstance(x, str) for x in obj[key]):
            raise DatasetError(f"{key!r} must be a list of strings")
    if not obj["concepts"]:
        raise DatasetError("empty concept list")
    if not obj["references"]:
        raise DatasetError("empty reference list")
    refs = []
    for raw in obj["references"]:
        toks = tokenize(raw)
        if not toks:
            raise DatasetError(f"reference {raw!r} has no tokens")
        refs.append(tuple(toks))
    try:
        concept_set = ConceptSet.from_iterable(obj["concepts"])
    except ValueError as exc:
        raise DatasetError(str(exc)) from exc
    return DatasetExample(concept_set, tuple(refs), tuple(obj["references"]))


def load_dataset(path: str | Path) -> list[DatasetExample]:
    """Parse a JSONL dataset file; errors name the offending 1-based line."""
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                examples.append(parse_example(json.loads(line)))
            except (json.JSONDecodeError, DatasetError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    return examples


def write_dataset(examples: Sequence[DatasetExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            obj = {"concepts": list(ex.concept_set.concepts), "references": list(ex.raw_references)}
            fh.write(json.dumps(obj) + "\n")


def dataset_sentences(examples: Iterable[DatasetExample]) -> set[str]:
    """Raw reference texts, used as the corpus exclusion set."""
    return {raw for ex in examples for raw in ex.raw_references}
