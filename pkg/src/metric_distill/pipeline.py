"""End-to-end orchestration: stages, artifacts, export and evaluation.

A run is described by a flat ``PipelineConfig``. Stages execute in a fixed
order, read their inputs from the output directory and write their own
artifacts there, so any suffix of the pipeline can be resumed. Every
artifact carries the config hash and seed.

Stage        Reads                         Writes
-----------  ----------------------------  -------------------------------
pools        corpus, datasets              pools.<split>.jsonl
warmup       pools                         retriever0.ckpt.json
retrieve     retriever0                    retriever0.index, p0.<split>.jsonl
train-ranker p0                            ranker0.ckpt.json
rerank       ranker0, p0                   p0_reranked.<split>.jsonl
distill      retriever0, ranker0, p0       retriever1.ckpt.json
retrieve-distilled  retriever1             retriever1.index, p1.<split>.jsonl
export       p1                            generator.<split>.tsv
eval         p0, p0_reranked, p1           report.json
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .candidates import CandidatePool, read_candidate_pools, write_candidate_pools
from .corpus import Corpus, DatasetExample, dataset_sentences, load_dataset, read_corpus_file, write_dataset
from .dense import DualEncoderModel, FlatIPIndex, Vocabulary, rerank
from .metrics import Metric, get_metric, kendall_tau, quality_order
from .sparse import HardNegativePool, build_pools, read_pools, write_pools
from .training import (
    TrainingConfig,
    distill_retriever,
    distill_retriever_direct,
    load_checkpoint,
    save_checkpoint,
    train_ranker,
    warmup_retriever,
)

logger = logging.getLogger(__name__)

STAGES = (
    "pools",
    "warmup",
    "retrieve",
    "train-ranker",
    "rerank",
    "distill",
    "retrieve-distilled",
    "export",
    "eval",
)
SPLITS = ("train", "validation", "test")
HARD_NEGATIVE_SOURCES = ("concept_match", "tfidf")
START, END = "<S>", "</S>"


class PipelineError(RuntimeError):
    """A stage could not run; the message names the stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage


# --- configuration ---------------------------------------------------------


@dataclass
class PipelineConfig:
    """Paths, stage selection and training settings for one run.

    Serialized as a flat JSON object: the training fields sit next to the
    path keys. Relative paths in a config file resolve against the file's
    directory.
    """

    corpus: str
    train: str
    output_dir: str
    validation: str | None = None
    test: str | None = None
    stages: tuple[str, ...] = STAGES
    hard_negative_source: str = "concept_match"
    training: TrainingConfig = field(default_factory=TrainingConfig)

    def __post_init__(self) -> None:
        self.stages = tuple(self.stages)
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise ValueError(f"unknown stage(s) {unknown}; choose from {list(STAGES)}")
        if self.hard_negative_source not in HARD_NEGATIVE_SOURCES:
            raise ValueError(f"hard_negative_source must be one of {HARD_NEGATIVE_SOURCES}")

    @classmethod
    def from_dict(cls, obj: dict, base_dir: str | Path | None = None) -> "PipelineConfig":
        obj = dict(obj)
        train_keys = {f.name for f in fields(TrainingConfig)}
        own_keys = {f.name for f in fields(cls)} - {"training"}
        unknown = set(obj) - train_keys - own_keys
        if unknown:
            raise ValueError(f"unknown config key(s): {sorted(unknown)}")
        training = TrainingConfig(**{k: obj.pop(k) for k in list(obj) if k in train_keys})
        if base_dir is not None:
            for key in ("corpus", "train", "validation", "test", "output_dir"):
                if obj.get(key) is not None:
                    obj[key] = str(Path(base_dir) / obj[key])
        missing = {"corpus", "train", "output_dir"} - set(obj)
        if missing:
            raise ValueError(f"missing config key(s): {sorted(missing)}")
        return cls(training=training, **obj)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        if not isinstance(obj, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        return cls.from_dict(obj, base_dir=path.parent)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "training"}
        d["stages"] = list(self.stages)
        d.update(self.training.to_dict())
        return d

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def config_hash(self) -> str:
        """Hash of everything that influences artifacts (not stages or output_dir)."""
        d = self.to_dict()
        del d["stages"], d["output_dir"]
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def splits(self) -> dict[str, str]:
        return {s: getattr(self, s) for s in SPLITS if getattr(self, s) is not None}


# --- export ----------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorRecord:
    concepts: tuple[str, ...]
    sentences: tuple[str, ...]
    target: str


def _segment(text: str) -> str:
    if START in text or END in text or "\t" in text or "\n" in text:
        raise ValueError(f"text cannot be serialized: {text!r}")
    return f"{START} {text} {END}"


def format_record(record: GeneratorRecord) -> str:
    source = " ".join([_segment(" ".join(record.concepts))] + [_segment(s) for s in record.sentences])
    return f"{source}\t{_segment(record.target)}"


def generator_records(
    pools: Sequence[CandidatePool], dataset: Sequence[DatasetExample], corpus: Corpus, k: int = 2
) -> list[GeneratorRecord]:
    """One record per (concept set, reference), carrying the top-k pool sentences."""
    if len(pools) != len(dataset):
        raise ValueError(f"{len(pools)} pools for {len(dataset)} examples")
    out = []
    for pool, ex in zip(pools, dataset):
        if len(pool) < k:
            raise ValueError(f"pool {pool.concept_set_id} has {len(pool)} entries; need {k}")
        sentences = tuple(corpus[i].raw for i in pool.top(k))
        for ref in ex.raw_references:
            out.append(GeneratorRecord(ex.concept_set.concepts, sentences, ref))
    return out


def export_generator_file(
    pools: Sequence[CandidatePool],
    dataset: Sequence[DatasetExample],
    corpus: Corpus,
    k: int = 2,
    path: str | Path | None = None,
    header: dict | None = None,
) -> str:
    """Serialize generator inputs, one tab-separated source/target line per reference.

    Source: ``<S> c1 ... cm </S> <S> s1 </S> ... <S> sk </S>`` with concepts
    in lexicographic order; target: ``<S> reference </S>``. An optional
    header becomes a leading ``#`` line. Returns the text and writes it to
    ``path`` when given.
    """
    lines = [format_record(r) for r in generator_records(pools, dataset, corpus, k)]
    if header is not None:
        lines.insert(0, "# " + json.dumps(header, sort_keys=True))
    text = "".join(line + "\n" for line in lines)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


def _unwrap(segment: str) -> str:
    if not (segment.startswith(START + " ") and segment.endswith(" " + END)):
        raise ValueError(f"malformed segment {segment!r}")
    return segment[len(START) + 1 : -len(END) - 1]


def parse_generator_file(text: str) -> list[GeneratorRecord]:
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line or line.startswith("#"):
            continue
        try:
            source, target = line.split("\t")
            parts = _unwrap(source).split(f" {END} {START} ")
            records.append(GeneratorRecord(tuple(parts[0].split(" ")), tuple(parts[1:]), _unwrap(target)))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return records


# --- evaluation ------------------------------------------------------------


@dataclass(frozen=True)
class EvalReport:
    """Pool quality measured against the references with one metric.

    Attributes:
        top1: mean metric score of each pool's first sentence, in [0, 1].
        topk: mean metric score over each pool's first k sentences, in [0, 1].
        kendall_tau: mean Kendall tau between pool order and metric order, in [-1, 1].
        recall_at_1: fraction of pools whose first sentence is the metric argmax.
    """

    metric: str
    k: int
    n_pools: int
    top1: float
    topk: float
    kendall_tau: float
    recall_at_1: float

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_pools(
    pools: Sequence[CandidatePool | HardNegativePool],
    dataset: Sequence[DatasetExample],
    corpus: Corpus,
    metric: Metric | str = Metric.BLEU4,
    k: int = 2,
) -> EvalReport:
    """Score pools against references. Single-entry pools count as tau = 1."""
    metric = get_metric(metric)
    if len(pools) != len(dataset):
        raise ValueError(f"{len(pools)} pools for {len(dataset)} examples")
    if not pools:
        raise ValueError("no pools to evaluate")
    top1, topk, taus, hits = [], [], [], []
    for pool, ex in zip(pools, dataset):
        ids = pool.sentence_ids if isinstance(pool, HardNegativePool) else pool.ids
        if not ids:
            raise ValueError(f"empty pool for concept set {pool.concept_set_id}")
        qo = quality_order([corpus[i].tokens for i in ids], ex.references, metric)
        top1.append(qo.scores[0])
        topk.append(float(np.mean(qo.scores[: max(k, 1)])))
        taus.append(kendall_tau(list(range(len(ids))), qo.order) if len(ids) > 1 else 1.0)
        hits.append(qo.order[0] == 0)
    return EvalReport(
        metric.value,
        k,
        len(pools),
        float(np.mean(top1)),
        float(np.mean(topk)),
        float(np.mean(taus)),
        float(np.mean(hits)),
    )


def retrieve_pools(
    model: DualEncoderModel, index: FlatIPIndex, dataset: Sequence[DatasetExample], k: int
) -> list[CandidatePool]:
    """Top-k corpus sentences for every concept set, by retriever dot product."""
    if not dataset:
        return []
    queries, _ = model.encode_concepts([ex.concept_set.concepts for ex in dataset])
    return [CandidatePool.from_hits(i, index.search(q, k)) for i, q in enumerate(queries)]


def corpus_index(model: DualEncoderModel, corpus: Corpus) -> FlatIPIndex:
    return FlatIPIndex(model.embed_corpus(corpus), range(len(corpus)))


# --- stage runner ----------------------------------------------------------


class _Run:
    """Lazily loaded inputs and artifact paths shared by the stages of one run."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.out = Path(config.output_dir)
        self.header = {"config_hash": config.config_hash(), "seed": config.training.seed}
        self._corpus: Corpus | None = None
        self._data: dict[str, list[DatasetExample]] = {}
        self.stage = "setup"

    def fail(self, message: str) -> PipelineError:
        return PipelineError(self.stage, message)

    # inputs

    def dataset(self, split: str) -> list[DatasetExample]:
        if split not in self._data:
            path = self.config.splits().get(split)
            if path is None:
                raise self.fail(f"no {split} dataset configured")
            if not Path(path).exists():
                raise self.fail(f"{split} dataset not found: {path}")
            self._data[split] = load_dataset(path)
        return self._data[split]

    @property
    def splits(self) -> list[str]:
        return list(self.config.splits())

    @property
    def val_split(self) -> str:
        return "validation" if self.config.validation is not None else "train"

    @property
    def corpus(self) -> Corpus:
        if self._corpus is None:
            path = Path(self.config.corpus)
            if not path.exists():
                raise self.fail(f"corpus not found: {path}")
            excluded: set[str] = set()
            for split in self.splits:
                excluded |= dataset_sentences(self.dataset(split))
            self._corpus = read_corpus_file(path, excluded)
            if len(self._corpus) == 0:
                raise self.fail("corpus is empty after filtering")
        return self._corpus

    def vocab(self) -> Vocabulary:
        examples = self.dataset("train") + (self.dataset("validation") if self.config.validation else [])
        return Vocabulary.build(self.corpus, examples)

    # artifacts

    def path(self, name: str) -> Path:
        return self.out / name

    def require(self, name: str, producer: str) -> Path:
        path = self.path(name)
        if not path.exists():
            raise self.fail(f"missing artifact {name}; run stage '{producer}' first")
        return path

    def check_header(self, path: Path) -> None:
        with open(path, encoding="utf-8") as fh:
            first = fh.readline()
        try:
            header = json.loads(first).get("header")
        except (json.JSONDecodeError, AttributeError):
            header = None
        if header != self.header:
            raise self.fail(f"{path.name} was produced by a different config or seed; rerun its stage")

    def read_pools(self, prefix: str, split: str, producer: str) -> list:
        path = self.require(f"{prefix}.{split}.jsonl", producer)
        self.check_header(path)
        return read_pools(path) if prefix == "pools" else read_candidate_pools(path)

    def write_pools(self, prefix: str, split: str, pools: Sequence) -> None:
        path = self.path(f"{prefix}.{split}.jsonl")
        if prefix == "pools":
            write_pools(pools, path, self.header)
        else:
            write_candidate_pools(pools, path, self.header)

    def load_model(self, name: str, producer: str):
        path = self.require(name, producer)
        model, meta = load_checkpoint(path)
        if meta["config"].get("config_hash") != self.header["config_hash"] or meta["seed"] != self.header["seed"]:
            raise self.fail(f"{name} was produced by a different config or seed; rerun stage '{producer}'")
        return model

    def save_model(self, model, name: str) -> None:
        echo = dict(self.config.training.to_dict(), config_hash=self.header["config_hash"])
        save_checkpoint(model, self.path(name), echo, self.config.training.seed)

    def validation(self, prefix: str, producer: str) -> tuple[list[DatasetExample], list]:
        split = self.val_split
        return self.dataset(split), self.read_pools(prefix, split, producer)


def _stage_pools(run: _Run) -> None:
    cfg = run.config
    for split in run.splits:
        concept_sets = [ex.concept_set for ex in run.dataset(split)]
        run.write_pools("pools", split, build_pools(run.corpus, concept_sets, cfg.hard_negative_source, cfg.training.K))


def _stage_warmup(run: _Run) -> None:
    pools = run.read_pools("pools", "train", "pools")
    model = warmup_retriever(
        run.dataset("train"),
        run.corpus,
        pools,
        run.config.training,
        validation=run.validation("pools", "pools"),
        vocab=run.vocab(),
    )
    run.save_model(model, "retriever0.ckpt.json")


def _retrieve_with(run: _Run, checkpoint: str, producer: str, prefix: str) -> None:
    model = run.load_model(checkpoint, producer)
    index = corpus_index(model, run.corpus)
    index.save(run.path(checkpoint.split(".")[0] + ".index"))
    for split in run.splits:
        run.write_pools(prefix, split, retrieve_pools(model, index, run.dataset(split), run.config.training.K))


def _stage_retrieve(run: _Run) -> None:
    _retrieve_with(run, "retriever0.ckpt.json", "warmup", "p0")


def _stage_train_ranker(run: _Run) -> None:
    cfg = run.config.training
    model = train_ranker(
        run.dataset("train"),
        run.corpus,
        run.read_pools("p0", "train", "retrieve"),
        cfg.distill_metric,
        cfg,
        validation=run.validation("p0", "retrieve"),
        vocab=run.vocab(),
    )
    run.save_model(model, "ranker0.ckpt.json")


def _stage_rerank(run: _Run) -> None:
    ranker = run.load_model("ranker0.ckpt.json", "train-ranker")
    for split in run.splits:
        pools = run.read_pools("p0", split, "retrieve")
        dataset = run.dataset(split)
        run.write_pools(
            "p0_reranked", split, [rerank(ranker, ex.concept_set.concepts, p, run.corpus) for p, ex in zip(pools, dataset)]
        )


def _stage_distill(run: _Run) -> None:
    warm = run.load_model("retriever0.ckpt.json", "warmup")
    ranker = run.load_model("ranker0.ckpt.json", "train-ranker")
    model = distill_retriever(
        warm,
        ranker,
        run.dataset("train"),
        run.corpus,
        run.read_pools("p0", "train", "retrieve"),
        run.config.training,
        validation=run.validation("p0", "retrieve"),
    )
    run.save_model(model, "retriever1.ckpt.json")


def _stage_retrieve_distilled(run: _Run) -> None:
    _retrieve_with(run, "retriever1.ckpt.json", "distill", "p1")


def _stage_export(run: _Run) -> None:
    for split in run.splits:
        pools = run.read_pools("p1", split, "retrieve-distilled")
        export_generator_file(
            pools,
            run.dataset(split),
            run.corpus,
            run.config.training.top_k_export,
            run.path(f"generator.{split}.tsv"),
            run.header,
        )


_EVAL_SOURCES = (("p0", "retrieve"), ("p0_reranked", "rerank"), ("p1", "retrieve-distilled"))


def _stage_eval(run: _Run) -> None:
    cfg = run.config.training
    splits = [s for s in ("validation", "test") if s in run.splits] or ["train"]
    reports = {}
    for split in splits:
        for prefix, producer in _EVAL_SOURCES:
            pools = run.read_pools(prefix, split, producer)
            report = evaluate_pools(pools, run.dataset(split), run.corpus, cfg.distill_metric, cfg.top_k_export)
            reports[f"{prefix}.{split}"] = report.to_dict()
            logger.info("eval %s.%s: %s", prefix, split, report)
    with open(run.path("report.json"), "w", encoding="utf-8") as fh:
        json.dump({"header": run.header, "reports": reports}, fh, indent=2, sort_keys=True)
        fh.write("\n")


STAGE_FUNCTIONS: dict[str, Callable[[_Run], None]] = {
    "pools": _stage_pools,
    "warmup": _stage_warmup,
    "retrieve": _stage_retrieve,
    "train-ranker": _stage_train_ranker,
    "rerank": _stage_rerank,
    "distill": _stage_distill,
    "retrieve-distilled": _stage_retrieve_distilled,
    "export": _stage_export,
    "eval": _stage_eval,
}


def run_pipeline(config: PipelineConfig) -> Path:
    """Run the configured stages in pipeline order; returns the output directory.

    Raises:
        PipelineError: naming the failing stage, e.g. when an upstream
            artifact is missing or stale.
    """
    run = _Run(config)
    run.out.mkdir(parents=True, exist_ok=True)
    for stage in STAGES:
        if stage not in config.stages:
            continue
        run.stage = stage
        logger.info("running stage %s", stage)
        try:
            STAGE_FUNCTIONS[stage](run)
        except PipelineError:
            raise
        except (OSError, ValueError) as exc:
            raise PipelineError(stage, str(exc)) from exc
    return run.out


# --- hard-negative ablation ------------------------------------------------


def ablation_hard_negatives(config: PipelineConfig) -> dict[str, EvalReport]:
    """Warm up one retriever per hard-negative source and evaluate its retrieval.

    Evaluation uses the test split when configured, else validation, else
    train. Also writes ``ablation_hard_negatives.json`` to the output dir.
    """
    run = _Run(config)
    run.stage = "ablate-negatives"
    run.out.mkdir(parents=True, exist_ok=True)
    cfg = config.training
    eval_split = next(s for s in ("test", "validation", "train") if s in run.splits)
    try:
        corpus = run.corpus
        vocab = run.vocab()
        reports: dict[str, EvalReport] = {}
        for source in ("tfidf", "concept_match"):
            pools = {
                split: build_pools(corpus, [ex.concept_set for ex in run.dataset(split)], source, cfg.K)
                for split in {"train", run.val_split}
            }
            model = warmup_retriever(
                run.dataset("train"),
                corpus,
                pools["train"],
                cfg,
                validation=(run.dataset(run.val_split), pools[run.val_split]),
                vocab=vocab,
            )
            retrieved = retrieve_pools(model, corpus_index(model, corpus), run.dataset(eval_split), cfg.K)
            reports[source] = evaluate_pools(retrieved, run.dataset(eval_split), corpus, cfg.distill_metric, cfg.top_k_export)
    except (OSError, ValueError) as exc:
        raise PipelineError(run.stage, str(exc)) from exc
    with open(run.path("ablation_hard_negatives.json"), "w", encoding="utf-8") as fh:
        body = {"header": run.header, "split": eval_split, "rows": {k: v.to_dict() for k, v in reports.items()}}
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return reports


# --- distillation trend study ---------------------------------------------

TREND_METRICS = (Metric.BLEU4, Metric.ROUGE2, Metric.ROUGEL)


def trend_study(
    corpus: Corpus,
    train: Sequence[DatasetExample],
    validation: Sequence[DatasetExample],
    test: Sequence[DatasetExample],
    config: TrainingConfig,
    *,
    vocab: Vocabulary | None = None,
) -> dict:
    """Compare distilled and undistilled models on held-out concept sets.

    Warms up a retriever, then on its pools:

    * rankers distilled from each metric in ``TREND_METRICS`` with ListMLE,
      plus a contrastive (positive vs all) baseline ranker;
    * the warm retriever distilled from the bleu4 ranker (KL) and straight from
      the metric (ListMLE).

    Returns ``{"rankers": {name: {metric: top1}}, "retrievers": {name: top1}}``
    where rankers are scored by reranking the warm retriever's test pools and
    retrievers by their own test retrieval; ``top1`` is the mean metric
    score of the first sentence.
    """
    vocab = vocab or Vocabulary.build(corpus, list(train) + list(validation))
    concept_sets = lambda exs: [ex.concept_set for ex in exs]  # noqa: E731
    hn_train = build_pools(corpus, concept_sets(train), "concept_match", config.K)
    hn_val = build_pools(corpus, concept_sets(validation), "concept_match", config.K)
    r0 = warmup_retriever(train, corpus, hn_train, config, validation=(validation, hn_val), vocab=vocab)
    index0 = corpus_index(r0, corpus)
    p0 = {name: retrieve_pools(r0, index0, exs, config.K) for name, exs in (("train", train), ("val", validation), ("test", test))}

    def top1(pools, metric) -> float:
        return evaluate_pools(pools, test, corpus, metric, 1).top1

    rankers = {}
    variants = [("contrastive", Metric.BLEU4, "contrastive")] + [(m.value, m, "listmle") for m in TREND_METRICS]
    trained = {}
    for name, metric, objective in variants:
        ranker = train_ranker(
            train, corpus, p0["train"], metric, config, validation=(validation, p0["val"]), vocab=vocab, objective=objective
        )
        trained[name] = ranker
        reranked = [rerank(ranker, ex.concept_set.concepts, p, corpus) for p, ex in zip(p0["test"], test)]
        rankers[name] = {m.value: top1(reranked, m) for m in TREND_METRICS}

    progressive = distill_retriever(
        r0, trained[Metric.BLEU4.value], train, corpus, p0["train"], config, validation=(validation, p0["val"])
    )
    direct = distill_retriever_direct(
        r0, train, corpus, p0["train"], Metric.BLEU4, config, validation=(validation, p0["val"])
    )
    retrievers = {}
    for name, model in (("retriever0", r0), ("retriever1_progressive", progressive), ("retriever1_direct", direct)):
        retrievers[name] = top1(retrieve_pools(model, corpus_index(model, corpus), test, config.K), Metric.BLEU4)
    return {"rankers": rankers, "retrievers": retrievers}


# --- fixture files ---------------------------------------------------------


def write_fixture(fixture, directory: str | Path, training: TrainingConfig | None = None) -> PipelineConfig:
    """Write a synthetic fixture as corpus/dataset files plus a ``config.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "corpus.txt", "w", encoding="utf-8") as fh:
        fh.writelines(s + "\n" for s in fixture.raw_corpus)
    for split in SPLITS:
        write_dataset(getattr(fixture, split), directory / f"{split}.jsonl")
    rel = PipelineConfig(
        corpus="corpus.txt",
        train="train.jsonl",
        validation="validation.jsonl",
        test="test.jsonl",
        output_dir="out",
        training=training or TrainingConfig(),
    )
    rel.save(directory / "config.json")
    return PipelineConfig.load(directory / "config.json")
