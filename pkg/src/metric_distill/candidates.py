"""Candidate pools: ranked (sentence id, score) lists per concept set."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence


@dataclass(frozen=True)
class CandidatePool:
    concept_set_id: int
    ids: tuple[int, ...]
    scores: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if len(set(self.ids)) != len(self.ids):
            raise ValueError(f"duplicate sentence ids in pool {self.concept_set_id}")
        if self.scores is not None:
            if len(self.scores) != len(self.ids):
                raise ValueError("scores and ids differ in length")
            if not all(math.isfinite(s) for s in self.scores):
                raise ValueError("non-finite pool score")

    def __len__(self) -> int:
        return len(self.ids)

    def top(self, k: int) -> tuple[int, ...]:
        return self.ids[:k]

    @classmethod
    def from_hits(cls, concept_set_id: int, hits: Sequence[tuple[int, float]]) -> "CandidatePool":
        return cls(concept_set_id, tuple(h[0] for h in hits), tuple(h[1] for h in hits))


def write_candidate_pools(pools: Sequence[CandidatePool], path: str | Path, header: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for pool in pools:
            obj: dict = {"qid": pool.concept_set_id, "ids": list(pool.ids)}
            if pool.scores is not None:
                obj["scores"] = list(pool.scores)
            fh.write(json.dumps(obj) + "\n")


def read_candidate_pools(path: str | Path) -> list[CandidatePool]:
    pools = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if "header" in obj:
                continue
            scores = obj.get("scores")
            pools.append(
                CandidatePool(
                    int(obj["qid"]),
                    tuple(int(i) for i in obj["ids"]),
                    None if scores is None else tuple(float(s) for s in scores),
                )
            )
    return pools
