import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metric_distill.corpus import ConceptSet, filter_corpus
from metric_distill.sparse import (
    ConceptMatcher,
    HardNegativePool,
    base_forms,
    build_pools,
    concept_match_count,
    concept_match_retrieve,
    read_pools,
    sample_hard_negative,
    tfidf_build,
    tfidf_retrieve,
    tfidf_scores,
    write_pools,
)


def _corpus(*sentences):
    # pad to the 4-token minimum with a filler that every sentence shares
    return filter_corpus([s + " zz zz zz" for s in sentences])


def test_tfidf_idf_example():
    corpus = _corpus("a b", "a c")
    model = tfidf_build(corpus)
    v = model.vocabulary
    assert model.idf[v["a"]] == 0.0
    assert model.idf[v["b"]] == pytest.approx(math.log(2))
    assert model.idf[v["c"]] == pytest.approx(math.log(2))
    assert model.idf[v["zz"]] == 0.0


def test_tfidf_single_document_is_all_zero():
    model = tfidf_build(_corpus("a b"))
    assert np.all(model.idf == 0)
    assert model.doc_matrix.nnz == 0


def test_tfidf_empty_corpus():
    with pytest.raises(ValueError):
        tfidf_build(filter_corpus([]))


def test_tfidf_retrieve_examples():
    corpus = _corpus("a b", "a c")
    model = tfidf_build(corpus)
    assert tfidf_retrieve(model, ConceptSet(("b",)), 2).sentence_ids == (0, 1)
    assert tfidf_retrieve(model, ConceptSet(("c",)), 2).sentence_ids == (1, 0)
    # no in-vocabulary concept: every score is zero, ids ascending
    assert tfidf_retrieve(model, ConceptSet(("q",)), 2).sentence_ids == (0, 1)
    with pytest.raises(ValueError):
        tfidf_retrieve(model, ConceptSet(("b",)), 0)


def test_tfidf_scores_are_cosines():
    corpus = _corpus("a b b", "a c", "b c d")
    model = tfidf_build(corpus)
    dense = model.doc_matrix.toarray()
    norms = np.linalg.norm(dense, axis=1)
    assert np.allclose(norms[norms > 0], 1.0)
    cs = ConceptSet(("b", "c"))
    q = np.zeros(len(model.vocabulary))
    for c in cs:
        q[model.vocabulary[c]] = model.idf[model.vocabulary[c]]
    q /= np.linalg.norm(q)
    assert np.allclose(tfidf_scores(model, cs), dense @ q)


@settings(max_examples=50)
@given(st.lists(st.lists(st.sampled_from("abcdef"), min_size=4, max_size=8), min_size=1, max_size=12))
def test_tfidf_invariants(docs):
    corpus = filter_corpus([" ".join(d) for d in docs])
    model = tfidf_build(corpus)
    n = len(corpus)
    for tok, col in model.vocabulary.items():
        df = sum(tok in rec.tokens for rec in corpus)
        assert model.idf[col] == pytest.approx(math.log(n / df))
        assert model.idf[col] >= 0
    norms = np.linalg.norm(model.doc_matrix.toarray(), axis=1)
    assert np.all(np.isclose(norms, 1.0) | (norms == 0))


def test_base_forms():
    assert base_forms("runs") == {"runs", "run"}
    assert base_forms("dogs") == {"dogs", "dog"}
    assert "box" in base_forms("boxes")
    assert {"walk", "walke"} <= base_forms("walked")
    assert "jump" in base_forms("jumping")
    assert base_forms("s") == {"s"}


def test_concept_match_example():
    corpus = filter_corpus(["a dog sleeps on a mat", "a dog runs in the park"])
    pool = concept_match_retrieve(corpus, ConceptSet(("dog", "run")), 2)
    assert pool.sentence_ids == (1, 0)
    assert concept_match_count(corpus[1].tokens, ConceptSet(("dog", "run"))) == 2


def test_concept_match_ties_by_length_then_id():
    corpus = filter_corpus(["x y z dog w", "x y dog w", "p q dog r"])
    pool = concept_match_retrieve(corpus, ConceptSet(("dog",)), 3)
    assert pool.sentence_ids == (1, 2, 0)


def test_concept_match_full_beats_empty():
    corpus = filter_corpus(["nothing to see here", "the dog and cat play"])
    assert concept_match_retrieve(corpus, ConceptSet(("cat", "dog", "play")), 1).sentence_ids == (1,)


words = st.sampled_from(["dog", "dogs", "run", "runs", "running", "cat", "the", "a", "park"])


@settings(max_examples=60)
@given(st.lists(st.lists(words, min_size=4, max_size=8), min_size=1, max_size=10), st.integers(1, 15))
def test_concept_match_pool_properties(docs, k):
    corpus = filter_corpus([" ".join(d) for d in docs])
    cs = ConceptSet(("dog", "run"))
    pool = concept_match_retrieve(corpus, cs, k)
    assert len(pool) == min(k, len(corpus))
    assert len(set(pool.sentence_ids)) == len(pool)
    counts = [concept_match_count(corpus[i].tokens, cs) for i in pool.sentence_ids]
    assert counts == sorted(counts, reverse=True)
    assert ConceptMatcher(corpus).counts(cs).tolist() == [concept_match_count(r.tokens, cs) for r in corpus]


@given(st.lists(words, min_size=1, max_size=8), words)
def test_concept_match_count_monotone(tokens, extra):
    cs = ConceptSet(("dog", "run", "cat"))
    assert concept_match_count(tokens + [extra], cs) >= concept_match_count(tokens, cs)


def test_sample_hard_negative_examples(small_corpus):
    rng = np.random.default_rng(0)
    assert sample_hard_negative([3], "anything else", rng, small_corpus) == 3
    positive = small_corpus[0].raw
    assert all(sample_hard_negative([0, 2], positive.upper(), rng, small_corpus) == 2 for _ in range(20))
    with pytest.raises(ValueError):
        sample_hard_negative([0], positive, rng, small_corpus)
    with pytest.raises(ValueError):
        sample_hard_negative([], positive, rng, small_corpus)


def test_sample_hard_negative_deterministic(small_corpus):
    pool = HardNegativePool(0, (0, 1, 2, 3, 4))
    a = [sample_hard_negative(pool, "x", np.random.default_rng(5), small_corpus) for _ in range(3)]
    assert len(set(a)) == 1


def test_sample_hard_negative_uniform(small_corpus):
    rng = np.random.default_rng(11)
    pool = (0, 1, 2, 3, 4, 5)
    draws = [sample_hard_negative(pool, small_corpus[5].raw, rng, small_corpus) for _ in range(10_000)]
    counts = np.bincount(draws, minlength=6)
    assert counts[5] == 0
    p = 1 / 5
    sigma = math.sqrt(10_000 * p * (1 - p))
    assert np.all(np.abs(counts[:5] - 10_000 * p) < 3 * sigma)


@pytest.mark.parametrize("source", ["concept_match", "tfidf"])
def test_build_pools_and_roundtrip(tmp_path, small_corpus, source):
    sets = [ConceptSet(("dog",)), ConceptSet(("cat", "run"))]
    pools = build_pools(small_corpus, sets, source, k=3)
    assert [p.concept_set_id for p in pools] == [0, 1]
    path = tmp_path / "pools.jsonl"
    write_pools(pools, path, {"seed": 1})
    assert read_pools(path) == pools


def test_build_pools_unknown_source(small_corpus):
    with pytest.raises(ValueError):
        build_pools(small_corpus, [ConceptSet(("dog",))], "bm25")
