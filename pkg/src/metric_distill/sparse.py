"""Sparse retrievers that build hard-negative pools: TF-IDF and concept matching."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .corpus import ConceptSet, Corpus, _normalize_raw

DEFAULT_K = 100
INFLECTION_SUFFIXES = ("s", "es", "ed", "d", "ing")


@dataclass(frozen=True)
class HardNegativePool:
    concept_set_id: int
    sentence_ids: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.sentence_ids)


@dataclass(frozen=True)
class TfIdfModel:
    """TF-IDF weights over a fixed corpus.

    ``doc_matrix`` rows are the L2-normalised tf*idf vectors of the corpus
    sentences (all-zero when every token has zero idf).
    """

    vocabulary: dict[str, int]
    idf: np.ndarray
    doc_matrix: sparse.csr_matrix

    def doc_vector(self, sentence_id: int) -> dict[str, float]:
        row = self.doc_matrix.getrow(sentence_id)
        inv = {i: t for t, i in self.vocabulary.items()}
        return {inv[j]: float(v) for j, v in zip(row.indices, row.data)}


def _l2_normalize_rows(mat: sparse.csr_matrix) -> sparse.csr_matrix:
    norms = np.sqrt(np.asarray(mat.multiply(mat).sum(axis=1)).ravel())
    norms[norms == 0] = 1.0
    return sparse.csr_matrix(sparse.diags(1.0 / norms) @ mat)


def tfidf_build(corpus: Corpus) -> TfIdfModel:
    if len(corpus) == 0:
        raise ValueError("cannot build TF-IDF over an empty corpus")
    vocabulary: dict[str, int] = {}
    df: Counter = Counter()
    for rec in corpus:
        for tok in rec.tokens:
            vocabulary.setdefault(tok, len(vocabulary))
        df.update(set(rec.tokens))
    n_docs = len(corpus)
    idf = np.zeros(len(vocabulary))
    for tok, col in vocabulary.items():
        idf[col] = math.log(n_docs / df[tok])

    rows, cols, vals = [], [], []
    for rec in corpus:
        for tok, tf in Counter(rec.tokens).items():
            col = vocabulary[tok]
            if idf[col] > 0:
                rows.append(rec.id)
                cols.append(col)
                vals.append(tf * idf[col])
    mat = sparse.csr_matrix((vals, (rows, cols)), shape=(n_docs, len(vocabulary)))
    mat.sort_indices()
    return TfIdfModel(vocabulary, idf, _l2_normalize_rows(mat))


def top_k_ids(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores; ties by ascending index."""
    order = np.lexsort((np.arange(len(scores)), -scores))
    return order[:k]


def tfidf_scores(model: TfIdfModel, concept_set: ConceptSet) -> np.ndarray:
    q = np.zeros(len(model.vocabulary))
    for c in concept_set:
        col = model.vocabulary.get(c)
        if col is not None:
            q[col] += model.idf[col]
    norm = np.linalg.norm(q)
    if norm > 0:
        q /= norm
    return model.doc_matrix @ q


def tfidf_retrieve(
    model: TfIdfModel, concept_set: ConceptSet, k: int = DEFAULT_K, concept_set_id: int = 0
) -> HardNegativePool:
    if k < 1:
        raise ValueError("K must be >= 1")
    ids = top_k_ids(tfidf_scores(model, concept_set), k)
    return HardNegativePool(concept_set_id, tuple(int(i) for i in ids))


def base_forms(token: str) -> set[str]:
    """The token plus every form obtained by stripping one inflection suffix."""
    forms = {token}
    for suf in INFLECTION_SUFFIXES:
        if len(token) > len(suf) and token.endswith(suf):
            forms.add(token[: -len(suf)])
    return forms


def concept_match_count(tokens: Iterable[str], concept_set: ConceptSet) -> int:
    forms: set[str] = set()
    for tok in tokens:
        forms |= base_forms(tok)
    return sum(1 for c in concept_set if c in forms)


class ConceptMatcher:
    """Concept-matching retriever with per-sentence base forms precomputed."""

    def __init__(self, corpus: Corpus):
        self.corpus = corpus
        self._lengths = np.array([len(r.tokens) for r in corpus])
        self._ids = np.arange(len(corpus))
        self._postings: dict[str, list[int]] = {}
        for rec in corpus:
            forms: set[str] = set()
            for tok in rec.tokens:
                forms |= base_forms(tok)
            for f in forms:
                self._postings.setdefault(f, []).append(rec.id)

    def counts(self, concept_set: ConceptSet) -> np.ndarray:
        counts = np.zeros(len(self.corpus), dtype=np.int64)
        for c in concept_set:
            for sid in self._postings.get(c, ()):
                counts[sid] += 1
        return counts

    def retrieve(self, concept_set: ConceptSet, k: int = DEFAULT_K, concept_set_id: int = 0) -> HardNegativePool:
        if k < 1:
            raise ValueError("K must be >= 1")
        order = np.lexsort((self._ids, self._lengths, -self.counts(concept_set)))
        return HardNegativePool(concept_set_id, tuple(int(i) for i in order[:k]))


def concept_match_retrieve(
    corpus: Corpus, concept_set: ConceptSet, k: int = DEFAULT_K, concept_set_id: int = 0
) -> HardNegativePool:
    """Rank sentences by how many concepts they mention (inflections allowed).

    Ties go to shorter sentences, then lower ids.
    """
    return ConceptMatcher(corpus).retrieve(concept_set, k, concept_set_id)


def sample_hard_negative(
    pool: HardNegativePool | Sequence[int],
    positive_raw: str,
    rng: np.random.Generator,
    corpus: Corpus,
) -> int:
    """Draw one pool entry uniformly, skipping sentences identical to the positive."""
    ids = pool.sentence_ids if isinstance(pool, HardNegativePool) else tuple(pool)
    if not ids:
        raise ValueError("empty hard-negative pool")
    target = _normalize_raw(positive_raw)
    eligible = [i for i in ids if _normalize_raw(corpus[i].raw) != target]
    if not eligible:
        raise ValueError("hard-negative pool contains only the positive sentence")
    return eligible[int(rng.integers(len(eligible)))]


def build_pools(
    corpus: Corpus,
    concept_sets: Sequence[ConceptSet],
    source: str = "concept_match",
    k: int = DEFAULT_K,
) -> list[HardNegativePool]:
    if source == "concept_match":
        matcher = ConceptMatcher(corpus)
        return [matcher.retrieve(cs, k, i) for i, cs in enumerate(concept_sets)]
    if source == "tfidf":
        model = tfidf_build(corpus)
        return [tfidf_retrieve(model, cs, k, i) for i, cs in enumerate(concept_sets)]
    raise ValueError(f"unknown hard-negative source {source!r}")


def write_pools(pools: Sequence[HardNegativePool], path: str | Path, header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for pool in pools:
            fh.write(json.dumps({"qid": pool.concept_set_id, "ids": list(pool.sentence_ids)}) + "\n")


def read_pools(path: str | Path) -> list[HardNegativePool]:
    pools = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            obj = json.loads(line)
            if "header" in obj:
                continue
            pools.append(HardNegativePool(int(obj["qid"]), tuple(int(i) for i in obj["ids"])))
    return pools
