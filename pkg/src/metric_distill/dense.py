"""Dense scorers: the dual-encoder retriever, the cross-encoder ranker and
an exact inner-product index.

Both model families are small numpy networks with hand-written backward
passes. Token sequences are mapped to ids through a shared ``Vocabulary``
whose id 0 is reserved for unknown tokens.

Dual encoder (one independent parameter set per side)::

    encode(tokens) = tanh(mean(emb[ids]) @ proj + bias)
    sim(c, s)      = encode_c(c) . encode_s(s)

Cross encoder::

    u, v  = mean(emb[concept ids]), mean(emb[sentence ids])
    f     = [u; v; u * v; |u - v|]
    score = tanh(f @ w1 + b1) @ w2 + b2
"""

from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .candidates import CandidatePool
from .corpus import Corpus, DatasetExample

UNK = "<unk>"
D_EMB = 64
D_OUT = 64
HIDDEN = 128


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.tokens or self.tokens[0] != UNK:
            raise ValueError(f"vocabulary must start with {UNK!r}")
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def build(cls, corpus: Corpus | None = None, examples: Iterable[DatasetExample] = ()) -> "Vocabulary":
        seen: set[str] = set()
        if corpus is not None:
            for rec in corpus:
                seen.update(rec.tokens)
        for ex in examples:
            seen.update(ex.concept_set.concepts)
            for ref in ex.references:
                seen.update(ref)
        seen.discard(UNK)
        return cls((UNK, *sorted(seen)))

    def __len__(self) -> int:
        return len(self.tokens)

    def ids(self, tokens: Sequence[str]) -> list[int]:
        return [self.index.get(t, 0) for t in tokens]


def bag_matrix(id_lists: Sequence[Sequence[int]], vocab_size: int) -> sparse.csr_matrix:
    """Row-stochastic (B x V) matrix whose rows average the given token ids."""
    rows, cols, vals = [], [], []
    for r, ids in enumerate(id_lists):
        if len(ids) == 0:
            raise ValueError("cannot encode an empty token sequence")
        w = 1.0 / len(ids)
        rows.extend([r] * len(ids))
        cols.extend(ids)
        vals.extend([w] * len(ids))
    # duplicate (row, col) entries are summed on conversion
    return sparse.csr_matrix((vals, (rows, cols)), shape=(len(id_lists), vocab_size))


Params = dict[str, np.ndarray]


class Model:
    """Base for numpy models: named parameter arrays plus a vocabulary."""

    kind = "model"

    def __init__(self, params: Params, vocab: Vocabulary):
        self.params = params
        self.vocab = vocab

    def copy(self):
        return type(self)(copy.deepcopy(self.params), self.vocab)

    def params_equal(self, other: "Model") -> bool:
        return self.params.keys() == other.params.keys() and all(
            np.array_equal(self.params[k], other.params[k]) for k in self.params
        )

    def zero_grads(self) -> Params:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


def _encoder_init(rng: np.random.Generator, vocab_size: int, d_emb: int, d_out: int) -> Params:
    return {
        "emb": rng.normal(0.0, 0.5, size=(vocab_size, d_emb)),
        "proj": rng.normal(0.0, 1.0 / np.sqrt(d_emb), size=(d_emb, d_out)),
        "bias": np.zeros(d_out),
    }


@dataclass
class EncoderCache:
    bags: sparse.csr_matrix
    pooled: np.ndarray
    out: np.ndarray


def encode_batch(emb: np.ndarray, proj: np.ndarray, bias: np.ndarray, id_lists) -> tuple[np.ndarray, EncoderCache]:
    bags = bag_matrix(id_lists, emb.shape[0])
    pooled = bags @ emb
    out = np.tanh(pooled @ proj + bias)
    return out, EncoderCache(bags, pooled, out)


def encode_backward(emb, proj, cache: EncoderCache, d_out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (emb, proj, bias) given dLoss/d(encoder output)."""
    d_pre = d_out * (1.0 - cache.out**2)
    d_proj = cache.pooled.T @ d_pre
    d_bias = d_pre.sum(axis=0)
    d_emb = np.asarray(cache.bags.T @ (d_pre @ proj.T))
    return d_emb, d_proj, d_bias


def encode(params: Params, tokens: Sequence[str], vocab: Vocabulary, prefix: str = "") -> np.ndarray:
    """Encode one token sequence with the encoder stored under ``prefix``."""
    if len(tokens) == 0:
        raise ValueError("cannot encode an empty token sequence")
    out, _ = encode_batch(
        params[prefix + "emb"], params[prefix + "proj"], params[prefix + "bias"], [vocab.ids(tokens)]
    )
    return out[0]


def dot_sim(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    return float(np.sum(u * v))


class DualEncoderModel(Model):
    """Factorised retriever with independent concept and sentence encoders."""

    kind = "dual_encoder"

    @classmethod
    def init(cls, vocab: Vocabulary, seed: int, d_emb: int = D_EMB, d_out: int = D_OUT) -> "DualEncoderModel":
        # Both sides start from the same weights (as two encoders loaded from
        # one pretrained checkpoint would), then train independently.
        init = _encoder_init(np.random.default_rng(seed), len(vocab), d_emb, d_out)
        params: Params = {}
        for side in ("concept", "sentence"):
            for k, v in init.items():
                params[f"{side}.{k}"] = v.copy()
        return cls(params, vocab)

    def _side(self, side: str):
        p = self.params
        return p[f"{side}.emb"], p[f"{side}.proj"], p[f"{side}.bias"]

    def encode_concepts(self, concept_lists: Sequence[Sequence[str]]) -> tuple[np.ndarray, EncoderCache]:
        return encode_batch(*self._side("concept"), [self.vocab.ids(c) for c in concept_lists])

    def encode_sentences(self, sentences: Sequence[Sequence[str]]) -> tuple[np.ndarray, EncoderCache]:
        return encode_batch(*self._side("sentence"), [self.vocab.ids(s) for s in sentences])

    def backward(self, concept_cache: EncoderCache, d_concept, sentence_cache: EncoderCache, d_sentence) -> Params:
        grads: Params = {}
        for side, cache, d in (("concept", concept_cache, d_concept), ("sentence", sentence_cache, d_sentence)):
            emb, proj, _ = self._side(side)
            ge, gp, gb = encode_backward(emb, proj, cache, d)
            grads[f"{side}.emb"], grads[f"{side}.proj"], grads[f"{side}.bias"] = ge, gp, gb
        return grads

    def embed_corpus(self, corpus: Corpus, batch_size: int = 4096) -> np.ndarray:
        chunks = []
        for start in range(0, len(corpus), batch_size):
            recs = corpus.records[start : start + batch_size]
            chunks.append(self.encode_sentences([r.tokens for r in recs])[0])
        return np.vstack(chunks)

    def sim(self, concepts: Sequence[str], sentence: Sequence[str]) -> float:
        return dot_sim(self.encode_concepts([concepts])[0][0], self.encode_sentences([sentence])[0][0])

    def score_candidates(self, concepts: Sequence[str], sentences: Sequence[Sequence[str]]) -> np.ndarray:
        q = self.encode_concepts([concepts])[0][0]
        s = self.encode_sentences(sentences)[0]
        return (s * q).sum(axis=1)


@dataclass
class CrossCache:
    c_bags: sparse.csr_matrix
    s_bags: sparse.csr_matrix
    u: np.ndarray
    v: np.ndarray
    feats: np.ndarray
    hidden: np.ndarray


class CrossEncoderModel(Model):
    """Joint scorer over interaction features of the pooled concept and sentence embeddings."""

    kind = "cross_encoder"

    @classmethod
    def init(cls, vocab: Vocabulary, seed: int, d_emb: int = D_EMB, hidden: int = HIDDEN) -> "CrossEncoderModel":
        rng = np.random.default_rng(seed)
        params = {
            "emb": rng.normal(0.0, 0.5, size=(len(vocab), d_emb)),
            "w1": rng.normal(0.0, 1.0 / np.sqrt(4 * d_emb), size=(4 * d_emb, hidden)),
            "b1": np.zeros(hidden),
            "w2": rng.normal(0.0, 1.0 / np.sqrt(hidden), size=hidden),
            "b2": np.zeros(1),
        }
        return cls(params, vocab)

    def forward(self, concept_lists, sentences) -> tuple[np.ndarray, CrossCache]:
        """Scores for aligned (concepts, sentence) pairs."""
        p = self.params
        c_bags = bag_matrix([self.vocab.ids(c) for c in concept_lists], len(self.vocab))
        s_bags = bag_matrix([self.vocab.ids(s) for s in sentences], len(self.vocab))
        u = c_bags @ p["emb"]
        v = s_bags @ p["emb"]
        feats = np.hstack([u, v, u * v, np.abs(u - v)])
        hidden = np.tanh(feats @ p["w1"] + p["b1"])
        scores = hidden @ p["w2"] + p["b2"][0]
        return scores, CrossCache(c_bags, s_bags, u, v, feats, hidden)

    def backward(self, cache: CrossCache, d_scores: np.ndarray) -> Params:
        p = self.params
        d = p["emb"].shape[1]
        d_hidden = np.outer(d_scores, p["w2"])
        d_pre = d_hidden * (1.0 - cache.hidden**2)
        d_feats = d_pre @ p["w1"].T
        sign = np.sign(cache.u - cache.v)
        f_u, f_v, f_uv, f_abs = (d_feats[:, i * d : (i + 1) * d] for i in range(4))
        d_u = f_u + f_uv * cache.v + f_abs * sign
        d_v = f_v + f_uv * cache.u - f_abs * sign
        return {
            "emb": np.asarray(cache.c_bags.T @ d_u + cache.s_bags.T @ d_v),
            "w1": cache.feats.T @ d_pre,
            "b1": d_pre.sum(axis=0),
            "w2": cache.hidden.T @ d_scores,
            "b2": np.array([d_scores.sum()]),
        }

    def score_candidates(self, concepts: Sequence[str], sentences: Sequence[Sequence[str]]) -> np.ndarray:
        return self.forward([concepts] * len(sentences), sentences)[0]


def cross_score(model: CrossEncoderModel, concepts: Sequence[str], sentence_tokens: Sequence[str]) -> float:
    if len(concepts) == 0 or len(sentence_tokens) == 0:
        raise ValueError("cross_score needs non-empty concepts and sentence")
    return float(model.forward([concepts], [sentence_tokens])[0][0])


def rerank_scores(scores: Sequence[float]) -> list[int]:
    """Positions ordered by descending score; ties keep pool order."""
    return sorted(range(len(scores)), key=lambda i: (-scores[i], i))


def rerank(model: CrossEncoderModel, concepts: Sequence[str], pool: CandidatePool, corpus: Corpus) -> CandidatePool:
    """Reorder a pool by the ranker, attaching its scores."""
    if len(pool) == 0:
        raise ValueError("cannot rerank an empty pool")
    scores = model.score_candidates(concepts, [corpus[i].tokens for i in pool.ids])
    order = rerank_scores(scores)
    return CandidatePool(pool.concept_set_id, tuple(pool.ids[i] for i in order), tuple(float(scores[i]) for i in order))


# --- exact flat inner-product index --------------------------------------


class FlatIPIndex:
    """Exact maximum-inner-product search over a fixed matrix.

    Scores are computed as an elementwise product summed along each row,
    so they match a row-by-row scan bit for bit.
    """

    def __init__(self, vectors: np.ndarray, ids: Sequence[int]):
        vectors = np.array(vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise ValueError("index needs a non-empty 2-D matrix")
        if len(ids) != vectors.shape[0]:
            raise ValueError("vectors and ids differ in length")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("non-finite vector entries")
        vectors.setflags(write=False)
        self._vectors = vectors
        self._ids = np.array(ids, dtype=np.int64)
        self._ids.setflags(write=False)

    @property
    def vectors(self) -> np.ndarray:
        return self._vectors

    @property
    def ids(self) -> np.ndarray:
        return self._ids

    @property
    def dim(self) -> int:
        return self._vectors.shape[1]

    def __len__(self) -> int:
        return self._vectors.shape[0]

    def search(self, query: np.ndarray, k: int) -> list[tuple[int, float]]:
        query = np.asarray(query, dtype=np.float64)
        if query.shape != (self.dim,):
            raise ValueError(f"query dimension {query.shape} does not match index dimension {self.dim}")
        if k < 1:
            raise ValueError("K must be >= 1")
        scores = (self._vectors * query).sum(axis=1)
        order = np.lexsort((self._ids, -scores))[:k]
        return [(int(self._ids[i]), float(scores[i])) for i in order]

    def search_batch(self, queries: np.ndarray, k: int) -> list[list[tuple[int, float]]]:
        return [self.search(q, k) for q in np.asarray(queries)]

    def save(self, path: str | Path) -> None:
        """Write ``<path>`` (n, d as int64 then float32 rows, little-endian) and ``<path>.ids.jsonl``."""
        path = Path(path)
        n, d = self._vectors.shape
        with open(path, "wb") as fh:
            fh.write(struct.pack("<qq", n, d))
            fh.write(self._vectors.astype("<f4").tobytes())
        with open(str(path) + ".ids.jsonl", "w", encoding="utf-8") as fh:
            for row, sid in enumerate(self._ids):
                fh.write(json.dumps({"row": row, "id": int(sid)}) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FlatIPIndex":
        path = Path(path)
        with open(path, "rb") as fh:
            n, d = struct.unpack("<qq", fh.read(16))
            data = np.frombuffer(fh.read(4 * n * d), dtype="<f4").reshape(n, d)
        with open(str(path) + ".ids.jsonl", encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        ids = [r["id"] for r in sorted(rows, key=lambda r: r["row"])]
        return cls(data.astype(np.float64), ids)


def index_build(vectors: np.ndarray, ids: Sequence[int]) -> FlatIPIndex:
    return FlatIPIndex(vectors, ids)


def index_search(index: FlatIPIndex, query: np.ndarray, k: int) -> list[tuple[int, float]]:
    return index.search(query, k)


def write_embeddings(path: str | Path, ids: Sequence[int], vectors: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid, vec in zip(ids, vectors):
            fh.write(json.dumps({"id": int(sid), "vec": [float(x) for x in vec]}) + "\n")


def read_embeddings(path: str | Path) -> tuple[list[int], np.ndarray]:
    """Load an external embedding file into (ids, matrix)."""
    ids, vecs = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if vecs and len(obj["vec"]) != len(vecs[0]):
                raise ValueError(f"{path}:{lineno}: inconsistent vector dimension")
            ids.append(int(obj["id"]))
            vecs.append(obj["vec"])
    if not vecs:
        raise ValueError(f"{path}: no embeddings")
    return ids, np.array(vecs, dtype=np.float64)
