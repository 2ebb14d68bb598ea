"""Training procedures: retriever warm-up, metric->ranker distillation and
ranker->retriever (or metric->retriever) distillation.

Every procedure runs minibatch Adam, validates by R@1 after each epoch,
keeps the best checkpoint and stops after ``patience`` epochs without
improvement. All randomness derives from ``config.seed``.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from ..candidates import CandidatePool
from ..corpus import Corpus, DatasetExample, _normalize_raw
from ..dense import CrossEncoderModel, DualEncoderModel, Model, Params, Vocabulary
from ..metrics import DEFAULT_METRIC, Metric, QualityOrdering, get_metric
from ..sparse import HardNegativePool, sample_hard_negative
from .losses import contrastive_loss, kl_distill_loss, list_mle_loss

logger = logging.getLogger(__name__)

# stream tags keep the per-purpose random streams independent
_SHUFFLE, _POSITIVE, _NEGATIVES = 1, 2, 3


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-2
    batch_size: int = 32
    epochs: int = 10
    patience: int = 2
    seed: int = 0
    K: int = 100
    pool_size: int = 11
    top_k_export: int = 2
    distill_metric: Metric = DEFAULT_METRIC

    def __post_init__(self) -> None:
        self.distill_metric = get_metric(self.distill_metric)
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.K < 1 or self.pool_size < 1 or self.top_k_export < 0:
            raise ValueError("K and pool_size must be >= 1, top_k_export >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["distill_metric"] = self.distill_metric.value
        return d


class Adam:
    def __init__(self, params: Params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k in sorted(grads):
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)


# --- evaluation ------------------------------------------------------------


@dataclass(frozen=True)
class EvalExample:
    concepts: tuple[str, ...]
    candidates: tuple[tuple[str, ...], ...]
    correct: int


ScoreFn = Callable[[Sequence[str], Sequence[Sequence[str]]], np.ndarray]


def recall_at_1(score_fn: ScoreFn, eval_examples: Sequence[EvalExample]) -> float:
    """Fraction of examples whose highest-scored candidate is the correct one."""
    if not eval_examples:
        return 0.0
    hits = 0
    for ex in eval_examples:
        if not ex.candidates:
            raise ValueError("empty candidate list")
        scores = np.asarray(score_fn(ex.concepts, ex.candidates))
        hits += int(np.argmax(scores)) == ex.correct
    return hits / len(eval_examples)


def _pool_ids(pool: HardNegativePool | CandidatePool | Sequence[int]) -> tuple[int, ...]:
    if isinstance(pool, HardNegativePool):
        return pool.sentence_ids
    if isinstance(pool, CandidatePool):
        return pool.ids
    return tuple(pool)


def _negatives(pool, example: DatasetExample, corpus: Corpus) -> list[int]:
    """Pool entries whose text is not one of the example's references."""
    refs = {_normalize_raw(r) for r in example.raw_references}
    return [i for i in _pool_ids(pool) if _normalize_raw(corpus[i].raw) not in refs]


def positive_eval_set(dataset, pools, corpus: Corpus, n_candidates: int) -> list[EvalExample]:
    """Validation lists holding hard negatives followed by the first reference."""
    out = []
    for ex, pool in zip(dataset, pools):
        negs = _negatives(pool, ex, corpus)[: n_candidates - 1]
        cands = tuple(corpus[i].tokens for i in negs) + (ex.references[0],)
        out.append(EvalExample(ex.concept_set.concepts, cands, len(cands) - 1))
    return out


def metric_eval_set(dataset, pools, corpus: Corpus, n_candidates: int, metric: Metric) -> list[EvalExample]:
    """Negative-only validation lists; the correct answer is the metric-best candidate."""
    out = []
    for ex, pool in zip(dataset, pools):
        negs = _negatives(pool, ex, corpus)[:n_candidates]
        if not negs:
            continue
        cands = tuple(corpus[i].tokens for i in negs)
        scores = [metric(c, ex.references) for c in cands]
        out.append(EvalExample(ex.concept_set.concepts, cands, int(np.argmax(scores))))
    return out


# --- shared training loop --------------------------------------------------


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, *stream])


def _batches(n: int, config: TrainingConfig, epoch: int) -> list[np.ndarray]:
    perm = _rng(config.seed, _SHUFFLE, epoch).permutation(n)
    return [perm[i : i + config.batch_size] for i in range(0, n, config.batch_size)]


def _fit(
    model: Model,
    n_examples: int,
    batch_step: Callable[[Model, np.ndarray, int], tuple[float, Params]],
    validate: Callable[[Model], float],
    config: TrainingConfig,
    name: str,
) -> Model:
    best = model.copy()
    best_score = validate(model)
    history = [{"epoch": 0, "loss": None, "r1": best_score}]
    logger.info("%s epoch 0: R@1=%.4f", name, best_score)
    opt = Adam(model.params, config.learning_rate)
    stale = 0
    for epoch in range(1, config.epochs + 1):
        losses = []
        for batch in _batches(n_examples, config, epoch):
            loss, grads = batch_step(model, batch, epoch)
            opt.step(model.params, grads)
            losses.append(loss)
        score = validate(model)
        mean_loss = float(np.mean(losses)) if losses else 0.0
        history.append({"epoch": epoch, "loss": mean_loss, "r1": score})
        logger.info("%s epoch %d: loss=%.4f R@1=%.4f", name, epoch, mean_loss, score)
        # ties move the checkpoint forward; only a strict gain resets patience
        if score >= best_score:
            best = model.copy()
        if score > best_score:
            best_score, stale = score, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    best.history = history
    return best


def _check_nonempty(dataset, pools) -> None:
    if not dataset:
        raise ValueError("empty training dataset")
    if len(pools) != len(dataset):
        raise ValueError(f"{len(pools)} pools for {len(dataset)} examples")


# --- retriever warm-up -------------------------------------------------------


def warmup_retriever(
    dataset: Sequence[DatasetExample],
    corpus: Corpus,
    hard_neg_pools: Sequence[HardNegativePool],
    config: TrainingConfig,
    *,
    validation: tuple[Sequence[DatasetExample], Sequence] | None = None,
    vocab: Vocabulary | None = None,
) -> DualEncoderModel:
    """Warm up the dual-encoder retriever with in-batch negatives plus one sampled hard negative.

    For an example with positive ``s``, the negatives are the other
    positives in its minibatch and one sentence drawn from its pool.
    """
    _check_nonempty(dataset, hard_neg_pools)
    if any(len(_pool_ids(p)) == 0 for p in hard_neg_pools):
        raise ValueError("empty hard-negative pool")
    vocab = vocab or Vocabulary.build(corpus, dataset)
    model = DualEncoderModel.init(vocab, config.seed)
    val_data, val_pools = validation or (dataset, hard_neg_pools)
    eval_set = positive_eval_set(val_data, val_pools, corpus, config.pool_size)

    def step(model: DualEncoderModel, batch: np.ndarray, epoch: int):
        positives, hard = [], []
        for i in batch:
            ex = dataset[i]
            rng = _rng(config.seed, _POSITIVE, epoch, int(i))
            p = int(rng.integers(len(ex.references)))
            positives.append(ex.references[p])
            hn = sample_hard_negative(_pool_ids(hard_neg_pools[i]), ex.raw_references[p], rng, corpus)
            hard.append(corpus[hn].tokens)
        b = len(batch)
        q, q_cache = model.encode_concepts([dataset[i].concept_set.concepts for i in batch])
        s, s_cache = model.encode_sentences(positives + hard)
        s_pos, s_hard = s[:b], s[b:]
        in_batch = q @ s_pos.T
        hard_sims = (q * s_hard).sum(axis=1)
        d_in_batch = np.zeros_like(in_batch)
        d_hard = np.zeros(b)
        total = 0.0
        for r in range(b):
            others = [c for c in range(b) if c != r]
            loss, g = contrastive_loss(in_batch[r, r], np.concatenate([in_batch[r, others], [hard_sims[r]]]))
            total += loss
            d_in_batch[r, r] = g[0]
            d_in_batch[r, others] = g[1:-1]
            d_hard[r] = g[-1]
        d_in_batch /= b
        d_hard /= b
        d_q = d_in_batch @ s_pos + d_hard[:, None] * s_hard
        d_s = np.vstack([d_in_batch.T @ q, d_hard[:, None] * q])
        return total / b, model.backward(q_cache, d_q, s_cache, d_s)

    def validate(model: DualEncoderModel) -> float:
        return recall_at_1(model.score_candidates, eval_set)

    return _fit(model, len(dataset), step, validate, config, "warmup")


# --- listwise candidate sampling -------------------------------------------


class _ListSampler:
    """Builds per-(example, epoch) candidate lists: one positive plus sampled pool negatives."""

    def __init__(self, dataset, corpus: Corpus, pools, config: TrainingConfig):
        self.dataset, self.corpus, self.config = dataset, corpus, config
        need = config.pool_size - 1
        self.negatives = []
        for idx, (ex, pool) in enumerate(zip(dataset, pools)):
            negs = _negatives(pool, ex, corpus)
            if len(negs) < need:
                raise ValueError(f"pool {idx} has {len(negs)} usable negatives; need {need}")
            self.negatives.append(negs)

    def draw(self, i: int, epoch: int) -> tuple[tuple[str, ...], list[int]]:
        ex = self.dataset[i]
        rng = _rng(self.config.seed, _NEGATIVES, epoch, i)
        pos = ex.references[int(rng.integers(len(ex.references)))]
        negs = self.negatives[i]
        picked = rng.choice(len(negs), size=self.config.pool_size - 1, replace=False)
        return pos, [negs[j] for j in sorted(picked)]


class _MetricCache:
    def __init__(self, dataset, corpus: Corpus, metric: Metric):
        self.dataset, self.corpus, self.metric = dataset, corpus, metric
        self._scores: dict[tuple[int, int], float] = {}

    def ordering(self, i: int, neg_ids: Sequence[int]) -> QualityOrdering:
        """Quality ordering of [positive, *negatives]; the positive scores 1.0."""
        refs = self.dataset[i].references
        scores = [1.0]
        for sid in neg_ids:
            key = (i, sid)
            if key not in self._scores:
                self._scores[key] = self.metric(self.corpus[sid].tokens, refs)
            scores.append(self._scores[key])
        return QualityOrdering.from_scores(scores)


# --- ranker ----------------------------------------------------------------

RANKER_OBJECTIVES = ("listmle", "contrastive")


def train_ranker(
    dataset: Sequence[DatasetExample],
    corpus: Corpus,
    pools_p0: Sequence,
    metric: Metric | str,
    config: TrainingConfig,
    *,
    validation: tuple[Sequence[DatasetExample], Sequence] | None = None,
    vocab: Vocabulary | None = None,
    objective: str = "listmle",
) -> CrossEncoderModel:
    """Train the cross-encoder ranker to reproduce the metric's quality ordering (ListMLE).

    ``objective="contrastive"`` trains the undistilled baseline instead:
    the positive against all negatives with no order among negatives.
    """
    if objective not in RANKER_OBJECTIVES:
        raise ValueError(f"unknown ranker objective {objective!r}")
    _check_nonempty(dataset, pools_p0)
    metric = get_metric(metric)
    vocab = vocab or Vocabulary.build(corpus, dataset)
    model = CrossEncoderModel.init(vocab, config.seed)
    sampler = _ListSampler(dataset, corpus, pools_p0, config)
    cache = _MetricCache(dataset, corpus, metric)
    val_data, val_pools = validation or (dataset, pools_p0)
    eval_set = metric_eval_set(val_data, val_pools, corpus, config.pool_size - 1, metric)
    n = config.pool_size

    def step(model: CrossEncoderModel, batch: np.ndarray, epoch: int):
        concepts, sentences, orderings = [], [], []
        for i in batch:
            pos, negs = sampler.draw(int(i), epoch)
            concepts.extend([dataset[i].concept_set.concepts] * n)
            sentences.extend([pos] + [corpus[s].tokens for s in negs])
            if objective == "listmle":
                orderings.append(cache.ordering(int(i), negs))
        z, fwd = model.forward(concepts, sentences)
        d_z = np.zeros_like(z)
        total = 0.0
        for b in range(len(batch)):
            zb = z[b * n : (b + 1) * n]
            if objective == "listmle":
                loss, g = list_mle_loss(zb, orderings[b])
            else:
                loss, g = contrastive_loss(zb[0], zb[1:])
            total += loss
            d_z[b * n : (b + 1) * n] = g / len(batch)
        return total / len(batch), model.backward(fwd, d_z)

    def validate(model: CrossEncoderModel) -> float:
        return recall_at_1(model.score_candidates, eval_set)

    return _fit(model, len(dataset), step, validate, config, f"ranker[{objective}]")


# --- retriever distillation ------------------------------------------------


def _distill(
    warm: DualEncoderModel,
    dataset,
    corpus: Corpus,
    pools_p0,
    config: TrainingConfig,
    list_loss: Callable[[int, np.ndarray, list[tuple[str, ...]], list[int]], tuple[float, np.ndarray]],
    validation,
    metric: Metric,
    name: str,
) -> DualEncoderModel:
    _check_nonempty(dataset, pools_p0)
    model = warm.copy()
    sampler = _ListSampler(dataset, corpus, pools_p0, config)
    val_data, val_pools = validation or (dataset, pools_p0)
    eval_set = metric_eval_set(val_data, val_pools, corpus, config.pool_size - 1, metric)
    n = config.pool_size

    def step(model: DualEncoderModel, batch: np.ndarray, epoch: int):
        lists = []
        for i in batch:
            pos, negs = sampler.draw(int(i), epoch)
            lists.append((pos, negs, [pos] + [corpus[s].tokens for s in negs]))
        q, q_cache = model.encode_concepts([dataset[i].concept_set.concepts for i in batch])
        s, s_cache = model.encode_sentences([t for _, _, toks in lists for t in toks])
        d_q = np.zeros_like(q)
        d_s = np.zeros_like(s)
        total = 0.0
        for b, (i, (_, negs, toks)) in enumerate(zip(batch, lists)):
            sb = s[b * n : (b + 1) * n]
            zb = (sb * q[b]).sum(axis=1)
            loss, g = list_loss(int(i), zb, toks, negs)
            total += loss
            g = g / len(batch)
            d_q[b] = g @ sb
            d_s[b * n : (b + 1) * n] = g[:, None] * q[b]
        return total / len(batch), model.backward(q_cache, d_q, s_cache, d_s)

    def validate(model: DualEncoderModel) -> float:
        return recall_at_1(model.score_candidates, eval_set)

    return _fit(model, len(dataset), step, validate, config, name)


def distill_retriever(
    warm_retriever: DualEncoderModel,
    ranker: CrossEncoderModel,
    dataset: Sequence[DatasetExample],
    corpus: Corpus,
    pools_p0: Sequence,
    config: TrainingConfig,
    *,
    validation: tuple[Sequence[DatasetExample], Sequence] | None = None,
) -> DualEncoderModel:
    """Distill the ranker into the warm retriever: KL(ranker || retriever) over candidate lists."""
    teacher_cache: dict[tuple[int, tuple[str, ...]], float] = {}

    def kl(i: int, z: np.ndarray, toks: list[tuple[str, ...]], negs: list[int]):
        concepts = dataset[i].concept_set.concepts
        missing = [t for t in toks if (i, t) not in teacher_cache]
        if missing:
            for t, score in zip(missing, ranker.score_candidates(concepts, missing)):
                teacher_cache[(i, t)] = float(score)
        teacher = np.array([teacher_cache[(i, t)] for t in toks])
        return kl_distill_loss(teacher, z)

    return _distill(
        warm_retriever, dataset, corpus, pools_p0, config, kl, validation, config.distill_metric, "distill[ranker]"
    )


def distill_retriever_direct(
    warm_retriever: DualEncoderModel,
    dataset: Sequence[DatasetExample],
    corpus: Corpus,
    pools_p0: Sequence,
    metric: Metric | str,
    config: TrainingConfig,
    *,
    validation: tuple[Sequence[DatasetExample], Sequence] | None = None,
) -> DualEncoderModel:
    """Distill the warm retriever straight from the metric ordering with ListMLE."""
    metric = get_metric(metric)
    cache = _MetricCache(dataset, corpus, metric)

    def mle(i: int, z: np.ndarray, toks, negs: list[int]):
        return list_mle_loss(z, cache.ordering(i, negs))

    return _distill(warm_retriever, dataset, corpus, pools_p0, config, mle, validation, metric, "distill[metric]")
