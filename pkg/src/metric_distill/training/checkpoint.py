"""JSON checkpoints for numpy models.

Floats are written with ``repr`` precision, so save/load is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..dense import CrossEncoderModel, DualEncoderModel, Model, Vocabulary

_KINDS = {cls.kind: cls for cls in (DualEncoderModel, CrossEncoderModel)}


def checkpoint_dict(model: Model, config: dict | None = None, seed: int | None = None) -> dict:
    return {
        "kind": model.kind,
        "seed": seed,
        "config": config or {},
        "vocab": list(model.vocab.tokens),
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in sorted(model.params.items())
        },
    }


def save_checkpoint(model: Model, path: str | Path, config: dict | None = None, seed: int | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(checkpoint_dict(model, config, seed), fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path: str | Path) -> tuple[Model, dict]:
    """Return the model and the checkpoint metadata (kind, seed, config)."""
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    try:
        cls = _KINDS[obj["kind"]]
    except KeyError:
        raise ValueError(f"{path}: unknown model kind {obj.get('kind')!r}") from None
    params = {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in obj["params"].items()
    }
    model = cls(params, Vocabulary(tuple(obj["vocab"])))
    meta = {k: obj[k] for k in ("kind", "seed", "config")}
    return model, meta
