"""Downstream protocols: linear probe, nearest-neighbour retrieval, two-stream
fusion and end-to-end fine-tuning of the backbone.

Retrieval uses test clips as queries against the training gallery; the
probe is fitted on training features and scored on test features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from .numerics import as_matrix, l2_normalize_rows

RETRIEVAL_KS = (1, 5, 10, 20)


class EvalError(ValueError):
    pass


@dataclass(frozen=True)
class ProbeHyper:
    steps: int = 300
    lr: float = 0.5
    l2: float = 1e-4
    tol: float = 1e-6
    standardize: bool = True


@dataclass
class ProbeResult:
    accuracy: float
    weights: np.ndarray
    bias: np.ndarray
    per_class: list = field(default_factory=list)
    test_logits: np.ndarray | None = None
    steps_run: int = 0


@dataclass
class RetrievalResult:
    recall: dict

    def __post_init__(self):
        ks = sorted(self.recall)
        vals = [self.recall[k] for k in ks]
        if any(a > b for a, b in zip(vals, vals[1:])):
            raise EvalError(f"R@k must be nondecreasing in k: {self.recall}")

    def __getitem__(self, k: int) -> float:
        return self.recall[k]


def _standardizer(train: np.ndarray):
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    return mu, sd


def cross_entropy(w: np.ndarray, b: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float = 0.0):
    """Mean softmax cross-entropy plus ``l2/2 * ||w||^2``; returns ``(loss, dw, db, dlogits)``."""
    logits = x @ w + b
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    p = e / e.sum(axis=1, keepdims=True)
    n = len(y)
    loss = float(-np.mean(np.log(p[np.arange(n), y])) + 0.5 * l2 * np.sum(w * w))
    d = p.copy()
    d[np.arange(n), y] -= 1.0
    d /= n
    return loss, x.T @ d + l2 * w, d.sum(axis=0), d


def _per_class(pred: np.ndarray, y: np.ndarray, n_classes: int) -> list:
    out = []
    for c in range(n_classes):
        sel = y == c
        out.append(float(np.mean(pred[sel] == c)) if sel.any() else float("nan"))
    return out


def _check_labels(train_y: np.ndarray) -> int:
    if len(np.unique(train_y)) < 2:
        raise EvalError("linear probe needs at least two classes in the training set")
    return int(train_y.max()) + 1


def linear_probe(train_x, train_y, test_x, test_y, hyper: ProbeHyper = ProbeHyper(),
                 n_classes: int | None = None) -> ProbeResult:
    """Multinomial logistic regression by full-batch gradient descent.

    Starts from zero weights and stops after ``hyper.steps`` steps or once the
    gradient max-norm drops below ``hyper.tol``.  Features are z-scored with
    training statistics when ``hyper.standardize`` is set.
    """
    train_x = as_matrix(train_x, "train features")
    test_x = as_matrix(test_x, "test features")
    train_y = np.asarray(train_y, dtype=np.int64)
    test_y = np.asarray(test_y, dtype=np.int64)
    n_classes = n_classes or max(_check_labels(train_y), int(test_y.max()) + 1)
    _check_labels(train_y)
    if hyper.standardize:
        mu, sd = _standardizer(train_x)
        train_x = (train_x - mu) / sd
        test_x = (test_x - mu) / sd
    w = np.zeros((train_x.shape[1], n_classes))
    b = np.zeros(n_classes)
    steps = 0
    for steps in range(1, hyper.steps + 1):
        _, dw, db, _ = cross_entropy(w, b, train_x, train_y, hyper.l2)
        w -= hyper.lr * dw
        b -= hyper.lr * db
        if max(np.abs(dw).max(), np.abs(db).max()) < hyper.tol:
            break
    logits = test_x @ w + b
    pred = np.argmax(logits, axis=1)
    correct = int(np.sum(pred == test_y))
    return ProbeResult(correct / len(test_y), w, b, _per_class(pred, test_y, n_classes), logits, steps)


def fused_probe_accuracy(r1: ProbeResult, r2: ProbeResult, test_y) -> float:
    """Accuracy of the averaged per-stream probe logits."""
    logits = two_stream_fuse(r1.test_logits, r2.test_logits)
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(test_y)))


def cosine_similarity(query, gallery) -> np.ndarray:
    return l2_normalize_rows(query) @ l2_normalize_rows(gallery).T


def retrieval_from_similarity(sim, query_y, gallery_y, ks=RETRIEVAL_KS) -> RetrievalResult:
    """R@k from a precomputed query x gallery similarity matrix.

    A query counts as correct at ``k`` if any of its ``k`` most similar gallery
    items shares its class.  Ties rank the lower gallery index first.
    """
    sim = as_matrix(sim, "similarities")
    query_y = np.asarray(query_y)
    gallery_y = np.asarray(gallery_y)
    if sim.shape[1] == 0:
        raise EvalError("gallery is empty")
    if sim.shape != (len(query_y), len(gallery_y)):
        raise EvalError(f"similarity shape {sim.shape} does not match labels")
    ks = tuple(int(k) for k in ks)
    if max(ks) > sim.shape[1] or min(ks) < 1:
        raise EvalError(f"k values {ks} out of range for gallery of {sim.shape[1]}")
    order = np.argsort(-sim, axis=1, kind="stable")[:, :max(ks)]
    hit = gallery_y[order] == query_y[:, None]
    first = np.where(hit.any(axis=1), hit.argmax(axis=1), max(ks))
    return RetrievalResult({k: float(np.mean(first < k)) for k in ks})


def retrieval(query_x, query_y, gallery_x, gallery_y, ks=RETRIEVAL_KS) -> RetrievalResult:
    return retrieval_from_similarity(cosine_similarity(query_x, gallery_x), query_y, gallery_y, ks)


def two_stream_fuse(sim1, sim2) -> np.ndarray:
    sim1 = as_matrix(sim1)
    sim2 = as_matrix(sim2)
    if sim1.shape != sim2.shape:
        raise EvalError(f"cannot fuse shapes {sim1.shape} and {sim2.shape}")
    return (sim1 + sim2) / 2.0


@dataclass(frozen=True)
class FinetuneHyper:
    steps: int = 300
    lr: float = 0.5
    encoder_lr: float = 0.05
    l2: float = 1e-4


def finetune(params: enc.MlpParams, train_x, train_y, test_x, test_y, hyper: FinetuneHyper = FinetuneHyper(),
             n_classes: int | None = None):
    """Train backbone and a linear head jointly; return ``(ProbeResult, tuned backbone)``.

    The projection head is dropped.  Backbone outputs are z-scored with the
    statistics of the initial backbone on the training set (a fixed affine
    map), mirroring the probe's preprocessing.  The head starts at zero, so
    with ``steps=0`` the result equals an untrained probe.
    """
    train_y = np.asarray(train_y, dtype=np.int64)
    test_y = np.asarray(test_y, dtype=np.int64)
    n_classes = n_classes or max(_check_labels(train_y), int(test_y.max()) + 1)
    _check_labels(train_y)
    depth = params.n_backbone or len(params.weights)
    backbone = enc.MlpParams([w.copy() for w in params.weights[:depth]], [b.copy() for b in params.biases[:depth]],
                             list(params.relu[:depth]), depth)
    mu, sd = _standardizer(enc.features(backbone, train_x))
    w = np.zeros((backbone.embed_dim, n_classes))
    b = np.zeros(n_classes)
    for _ in range(hyper.steps):
        h, tape = enc.forward(backbone, train_x, record=True, normalize=False)
        hs = (h - mu) / sd
        _, dw, db, dlogits = cross_entropy(w, b, hs, train_y, hyper.l2)
        dh = (dlogits @ w.T) / sd
        grads = enc.backward(backbone, tape, dh)
        w -= hyper.lr * dw
        b -= hyper.lr * db
        backbone = enc.sgd_step(backbone, grads, hyper.encoder_lr, 0.0)
    logits = ((enc.features(backbone, test_x) - mu) / sd) @ w + b
    pred = np.argmax(logits, axis=1)
    result = ProbeResult(int(np.sum(pred == test_y)) / len(test_y), w, b, _per_class(pred, test_y, n_classes),
                         logits, hyper.steps)
    return result, backbone


def evaluate_state(state, data, hyper: ProbeHyper = ProbeHyper()) -> dict:
    """Probe and retrieval metrics for both views and their two-stream fusion."""
    tr, te, y = data.train_idx, data.test_idx, data.labels
    ks = tuple(k for k in RETRIEVAL_KS if k <= len(tr))
    out = {}
    probes, sims = {}, {}
    for v, x in ((1, data.view1), (2, data.view2)):
        params = state.pairs[v].query
        f_tr, f_te = enc.features(params, x[tr]), enc.features(params, x[te])
        probes[v] = linear_probe(f_tr, y[tr], f_te, y[te], hyper, n_classes=int(y.max()) + 1)
        out[f"probe_v{v}"] = probes[v].accuracy
        sims[v] = cosine_similarity(f_te, f_tr)
        for k, val in retrieval_from_similarity(sims[v], y[te], y[tr], ks).recall.items():
            out[f"R@{k}_v{v}"] = val
    out["probe_fused"] = fused_probe_accuracy(probes[1], probes[2], y[te])
    for k, val in retrieval_from_similarity(two_stream_fuse(sims[1], sims[2]), y[te], y[tr], ks).recall.items():
        out[f"R@{k}_fused"] = val
    return out
