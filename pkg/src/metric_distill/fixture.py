"""Seeded synthetic corpus and concept-set dataset.

The generator draws a 500-word vocabulary split into topics; every concept
word has a few collocates among its topic's context words. A concept set
owns a latent scene built from its concepts and their collocates, and its
references are light paraphrases of that scene. References and corpus are
written in different registers (disjoint function-word sets related by a
fixed mapping), as crowd-written references differ from caption-style
corpora. For every concept set the corpus holds copies of the scene corrupted at graded levels (so metric
quality varies smoothly among candidates), concept-heavy distractors
padded with non-collocate words (what concept matching ranks first),
collocate-only neighbours, and background filler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus, DatasetExample, filter_corpus, parse_example
from .training import TrainingConfig

N_TOPICS = 10
N_FUNCTION = 20
CONCEPTS_PER_TOPIC = 10
CONTEXT_PER_TOPIC = 38
CORRUPTION_LEVELS = (0.1, 0.25, 0.4, 0.55, 0.7)
COLLOCATES = 3

# small batches and a longer patience suit the 140-example training split
FIXTURE_TRAINING = {"batch_size": 8, "epochs": 40, "patience": 4, "learning_rate": 1e-2}

_CONSONANTS = "bcfghjklmnprtvz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class Fixture:
    corpus: Corpus
    train: list[DatasetExample]
    validation: list[DatasetExample]
    test: list[DatasetExample]
    raw_corpus: list[str]

    @property
    def examples(self) -> list[DatasetExample]:
        return self.train + self.validation + self.test


def _words(rng: np.random.Generator, n: int) -> list[str]:
    # vowel-final words never look like an inflected form of another word
    out: list[str] = []
    seen: set[str] = set()
    while len(out) < n:
        syllables = int(rng.integers(2, 4))
        w = "".join(rng.choice(list(_CONSONANTS)) + rng.choice(list(_VOWELS)) for _ in range(syllables))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


class _Generator:
    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)
        words = _words(self.rng, N_FUNCTION + N_TOPICS * (CONCEPTS_PER_TOPIC + CONTEXT_PER_TOPIC))
        half = N_FUNCTION // 2
        self.function = words[:half]  # reference register
        self.corpus_function = words[half:N_FUNCTION]
        self.register = dict(zip(self.function, self.corpus_function))
        rest = words[N_FUNCTION:]
        per = CONCEPTS_PER_TOPIC + CONTEXT_PER_TOPIC
        self.concepts = [rest[t * per : t * per + CONCEPTS_PER_TOPIC] for t in range(N_TOPICS)]
        self.context = [rest[t * per + CONCEPTS_PER_TOPIC : (t + 1) * per] for t in range(N_TOPICS)]
        self.topic_of = {c: t for t in range(N_TOPICS) for c in self.concepts[t]}
        self.collocates = {c: self.pick(self.context[self.topic_of[c]], COLLOCATES) for c in self.topic_of}

    def pick(self, seq, k=None):
        if k is None:
            return seq[int(self.rng.integers(len(seq)))]
        return [seq[i] for i in self.rng.choice(len(seq), size=k, replace=False)]

    def scene(self, concepts: list[str]) -> list[str]:
        chunks = []
        for c in concepts:
            chunk = [c] + self.pick(self.collocates[c], int(self.rng.integers(1, 3)))
            if self.rng.random() < 0.6:
                chunk.insert(0, self.pick(self.function))
            chunks.append(chunk)
        self.rng.shuffle(chunks)
        return [w for chunk in chunks for w in chunk]

    def paraphrase(self, scene: list[str]) -> list[str]:
        out = [self.pick(self.function) if w in self.function and self.rng.random() < 0.3 else w for w in scene]
        if len(out) > 3 and self.rng.random() < 0.5:
            i = int(self.rng.integers(len(out) - 1))
            out[i], out[i + 1] = out[i + 1], out[i]
        return out

    def corrupt(self, scene: list[str], topic: int, concepts: list[str], level: float) -> list[str]:
        out = []
        for w in (self.register.get(w, w) for w in scene):
            r = self.rng.random()
            if w in concepts:
                out.append(self.pick(self.concepts[topic]) if r < level / 2 else w)
            elif r < level:
                out.append(self.pick(self.context[topic] + self.corpus_function))
            else:
                out.append(w)
            if self.rng.random() < level / 3:
                out.append(self.pick(self.context[topic]))
        return out

    def distractor(self, topic: int, concepts: list[str]) -> list[str]:
        related = {w for c in concepts for w in self.collocates[c]}
        fillers = [w for w in self.context[topic] if w not in related]
        words = list(concepts) + self.pick(fillers, int(self.rng.integers(3, 7)))
        self.rng.shuffle(words)
        return words

    def neighbour(self, concepts: list[str]) -> list[str]:
        words = [w for c in concepts for w in self.collocates[c]]
        self.rng.shuffle(words)
        return [w if self.rng.random() < 0.7 else self.pick(self.corpus_function) for w in words]

    def background(self) -> list[str]:
        topic = int(self.rng.integers(N_TOPICS))
        n = int(self.rng.integers(5, 12))
        pool = self.concepts[topic] + self.context[topic] + self.corpus_function
        return [self.pick(pool) for _ in range(n)]


def make_fixture(
    seed: int = 0,
    n_concept_sets: int = 200,
    n_sentences: int = 2000,
    split: tuple[int, int] = (140, 20),
) -> Fixture:
    """Build the synthetic benchmark; train/validation sizes given by ``split``, rest is test."""
    g = _Generator(seed)
    examples: list[DatasetExample] = []
    raw: list[str] = []
    seen_sets: set[tuple[str, ...]] = set()
    while len(examples) < n_concept_sets:
        topic = int(g.rng.integers(N_TOPICS))
        concepts = g.pick(g.concepts[topic], int(g.rng.integers(3, 5)))
        key = tuple(sorted(concepts))
        if key in seen_sets:
            continue
        seen_sets.add(key)
        scene = g.scene(concepts)
        refs = [" ".join(g.paraphrase(scene)) for _ in range(int(g.rng.integers(2, 4)))]
        examples.append(parse_example({"concepts": concepts, "references": refs}))
        for level in CORRUPTION_LEVELS:
            raw.append(" ".join(g.corrupt(scene, topic, concepts, level)))
        for _ in range(2):
            raw.append(" ".join(g.distractor(topic, concepts)))
        raw.append(" ".join(g.neighbour(concepts)))

    excluded = {r for ex in examples for r in ex.raw_references}
    unique: list[str] = []
    seen_raw: set[str] = set(excluded)
    for s in raw:
        if s not in seen_raw:
            seen_raw.add(s)
            unique.append(s)
    kept = filter_corpus(unique, excluded).raw_sentences[:n_sentences]
    while len(kept) < n_sentences:
        s = " ".join(g.background())
        if s not in seen_raw:
            seen_raw.add(s)
            kept.extend(filter_corpus([s], excluded).raw_sentences)
    corpus = filter_corpus([kept[i] for i in g.rng.permutation(len(kept))], excluded)
    n_train, n_val = split
    return Fixture(
        corpus,
        examples[:n_train],
        examples[n_train : n_train + n_val],
        examples[n_train + n_val :],
        corpus.raw_sentences,
    )


def fixture_training_config(seed: int = 0) -> TrainingConfig:
    return TrainingConfig(seed=seed, **FIXTURE_TRAINING)
