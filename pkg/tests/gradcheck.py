"""Finite-difference checks of the losses composed with both encoders."""

import numpy as np

from metric_distill.dense import CrossEncoderModel, DualEncoderModel, Vocabulary
from metric_distill.training import contrastive_loss, kl_distill_loss, list_mle_loss

VOCAB = Vocabulary(("<unk>",) + tuple(f"w{i}" for i in range(12)))
LOSSES = ("contrastive", "listmle", "kl")


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def _instance(rng: np.random.Generator, loss_name: str):
    n = int(rng.integers(2, 6))
    concepts = tuple(rng.choice(VOCAB.tokens[1:], size=int(rng.integers(1, 4))))
    sentences = [tuple(rng.choice(VOCAB.tokens, size=int(rng.integers(1, 6)))) for _ in range(n)]
    if loss_name == "contrastive":
        loss = lambda z: contrastive_loss(z[0], z[1:])  # noqa: E731
    elif loss_name == "listmle":
        order = rng.permutation(n)
        loss = lambda z: list_mle_loss(z, order)  # noqa: E731
    else:
        teacher = rng.normal(0, 1, n)
        loss = lambda z: kl_distill_loss(teacher, z)  # noqa: E731
    return concepts, sentences, loss


def _bags(id_lists) -> np.ndarray:
    out = np.zeros((len(id_lists), len(VOCAB)))
    for r, ids in enumerate(id_lists):
        np.add.at(out[r], ids, 1.0 / len(ids))
    return out


def _dense_dual(p, bq, bs):
    # independent dense re-statement of the dual-encoder scorer
    q = np.tanh(bq @ p["concept.emb"] @ p["concept.proj"] + p["concept.bias"])[0]
    s = np.tanh(bs @ p["sentence.emb"] @ p["sentence.proj"] + p["sentence.bias"])
    return s @ q


def _dense_cross(p, bq, bs):
    u = np.repeat(bq @ p["emb"], bs.shape[0], axis=0)
    v = bs @ p["emb"]
    h = np.tanh(np.hstack([u, v, u * v, np.abs(u - v)]) @ p["w1"] + p["b1"])
    return h @ p["w2"] + p["b2"][0]


def _dual(model: DualEncoderModel, concepts, sentences, loss):
    q, qc = model.encode_concepts([concepts])
    s, sc = model.encode_sentences(sentences)
    z = s @ q[0]
    _, g = loss(z)
    return z, model.backward(qc, (g @ s)[None, :], sc, g[:, None] * q[0])


def _cross(model: CrossEncoderModel, concepts, sentences, loss):
    z, cache = model.forward([concepts] * len(sentences), sentences)
    _, g = loss(z)
    return z, model.backward(cache, g)


def check(encoder: str, loss_name: str, n_instances: int = 100, step: float = 1e-4, seed: int = 0) -> float:
    """Worst relative error between analytic and central-difference parameter gradients."""
    rng = np.random.default_rng([seed, LOSSES.index(loss_name), encoder == "cross"])
    worst = 0.0
    for i in range(n_instances):
        if encoder == "dual":
            model, run, dense = DualEncoderModel.init(VOCAB, seed=i, d_emb=4, d_out=3), _dual, _dense_dual
            # untie the two sides so both receive distinct gradients
            for k in model.params:
                model.params[k] = model.params[k] + rng.normal(0, 0.3, model.params[k].shape)
        else:
            model, run, dense = CrossEncoderModel.init(VOCAB, seed=i, d_emb=4, hidden=5), _cross, _dense_cross
            model.params["b2"] = rng.normal(0, 1, 1)
        concepts, sentences, loss = _instance(rng, loss_name)
        z, grads = run(model, concepts, sentences, loss)
        bq, bs = _bags([VOCAB.ids(concepts)]), _bags([VOCAB.ids(t) for t in sentences])
        p = model.params
        if not np.allclose(dense(p, bq, bs), z, rtol=1e-12, atol=1e-12):
            raise AssertionError("reference forward pass disagrees with the model")
        f = lambda: loss(dense(p, bq, bs))[0]  # noqa: E731
        analytic, numeric = [], []
        for name in sorted(p):
            arr = p[name]
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + step
                up = f()
                arr[idx] = orig - step
                down = f()
                arr[idx] = orig
                numeric.append((up - down) / (2 * step))
                analytic.append(grads[name][idx])
        worst = max(worst, rel_err(np.array(analytic), np.array(numeric)))
    return worst
