import numpy as np
import pytest

from metric_distill.corpus import ConceptSet, DatasetExample, filter_corpus, tokenize


def make_example(concepts, references):
    return DatasetExample(
        ConceptSet.from_iterable(concepts),
        tuple(tuple(tokenize(r)) for r in references),
        tuple(references),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_corpus():
    return filter_corpus(
        [
            "a dog runs in the park",
            "a dog sleeps on the mat",
            "the cat runs after a mouse",
            "children play football in the park",
            "a man walks his dog every morning",
            "the dog and the cat run together",
        ]
    )


def ladder_task(n_examples=10, n_negatives=4):
    """Examples whose negatives keep shrinking prefixes of the single reference.

    Example i owns tokens unseen elsewhere; negative j keeps the first
    6 - j - 1 reference tokens and pads with fillers, so metric quality
    decreases strictly with j. Returns (corpus, dataset, pools) where each
    pool lists exactly the example's negatives.
    """
    raws, dataset, pools = [], [], []
    for i in range(n_examples):
        ref = [f"w{i}x{k}" for k in range(6)]
        dataset.append(make_example([ref[0], ref[1]], [" ".join(ref)]))
        ids = []
        for j in range(n_negatives):
            keep = 5 - j
            raws.append(" ".join(ref[:keep] + [f"f{i}y{j}z{k}" for k in range(6 - keep)]))
            ids.append(len(raws) - 1)
        pools.append(ids)
    corpus = filter_corpus(raws)
    assert len(corpus) == len(raws)
    return corpus, dataset, pools


def separable_task(n_examples=50, n_background=60):
    """Each concept set shares tokens only with its own reference."""
    raws = [" ".join(f"bg{j}t{k}" for k in range(5)) for j in range(n_background)]
    dataset = [make_example([f"c{i}a", f"c{i}b"], [f"c{i}a c{i}b r{i}c r{i}d"]) for i in range(n_examples)]
    return filter_corpus(raws), dataset


ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
