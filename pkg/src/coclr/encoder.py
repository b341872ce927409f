"""MLP encoders with a projection head, plus their momentum-updated key twins.

An encoder is a stack of fully connected layers.  The first ``n_backbone``
layers form the backbone whose activations are used downstream; the rest is
the projection head (FC -> ReLU -> FC).  ``forward`` returns
L2-normalised embeddings so that dot products are cosine similarities.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .numerics import DEFAULT_EPS, NumericsError, Rng, as_matrix, check_finite


class EncoderError(ValueError):
    pass


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    relu: list[bool]
    n_backbone: int = 0

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.relu)) or not self.weights:
            raise EncoderError("weights, biases and activation flags must be non-empty and aligned")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise EncoderError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise EncoderError(f"layer {i}: input dim {w.shape[0]} does not chain from {self.weights[i - 1].shape[1]}")

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def embed_dim(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         list(self.relu), self.n_backbone)

    def same_shape(self, other: "MlpParams") -> bool:
        return [a.shape for a in self.arrays()] == [a.shape for a in other.arrays()]

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in self.arrays():
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()

    def equals(self, other: "MlpParams") -> bool:
        return self.same_shape(other) and all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


@dataclass
class Grads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


@dataclass
class EncoderPair:
    query: MlpParams
    key: MlpParams
    momentum: float = 0.999

    def __post_init__(self):
        if not self.query.same_shape(self.key):
            raise EncoderError("query and key encoders must have identical shapes")
        if not 0.0 <= self.momentum <= 1.0:
            raise EncoderError(f"momentum must lie in [0, 1], got {self.momentum}")

    @classmethod
    def from_query(cls, query: MlpParams, momentum: float = 0.999) -> "EncoderPair":
        return cls(query, query.copy(), momentum)


@dataclass
class Tape:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    out: np.ndarray | None = None
    norms: np.ndarray | None = None
    eps: float = DEFAULT_EPS
    normalized: bool = True


def encoder_dims(input_dim: int, backbone: tuple[int, ...] = (64, 64), head: tuple[int, ...] = (32, 16)) -> list[int]:
    return [input_dim, *backbone, *head]


def init_params(layer_dims, rng: Rng, scale_rule: str = "uniform_fan", n_backbone: int | None = None,
                last_relu: bool = False) -> MlpParams:
    """Draw weights uniformly in ``[-s, s]`` with ``s = sqrt(6 / (fan_in + fan_out))``.

    Biases start at zero.  Every layer but the last is followed by a ReLU.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d <= 0 for d in dims):
        raise EncoderError(f"need at least two positive layer dims, got {layer_dims!r}")
    if scale_rule != "uniform_fan":
        raise EncoderError(f"unknown scale rule {scale_rule!r}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-s, s, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    n_layers = len(weights)
    relu = [True] * (n_layers - 1) + [last_relu]
    if n_backbone is None:
        n_backbone = n_layers
    return MlpParams(weights, biases, relu, n_backbone)


def _check_input(params: MlpParams, x) -> np.ndarray:
    x = as_matrix(x, "input")
    if x.shape[1] != params.weights[0].shape[0]:
        raise EncoderError(f"input has {x.shape[1]} columns, encoder expects {params.weights[0].shape[0]}")
    return x


def forward(params: MlpParams, x, record: bool = False, eps: float = DEFAULT_EPS, normalize: bool = True):
    """Return ``(embeddings, tape)``; ``tape`` is None unless ``record``.

    ``normalize=False`` skips the final L2 normalisation (used by tests and
    by the fine-tuning head, which reads raw backbone outputs).
    """
    h = _check_input(params, x)
    tape = Tape(eps=eps, normalized=normalize) if record else None
    for w, b, act in zip(params.weights, params.biases, params.relu):
        a = h @ w + b
        if tape is not None:
            tape.inputs.append(h)
            tape.pre.append(a)
        h = np.maximum(a, 0.0) if act else a
    if not normalize:
        if tape is not None:
            tape.out = h
        return check_finite(h, "embeddings"), tape
    norms = np.sqrt(np.sum(h * h, axis=1, keepdims=True))
    z = h / np.maximum(norms, eps)
    if tape is not None:
        tape.out = h
        tape.norms = norms
    return check_finite(z, "embeddings"), tape


def features(params: MlpParams, x) -> np.ndarray:
    """Backbone activations (projection head removed), as used by the evaluators."""
    h = _check_input(params, x)
    depth = params.n_backbone or len(params.weights)
    for w, b, act in zip(params.weights[:depth], params.biases[:depth], params.relu[:depth]):
        a = h @ w + b
        h = np.maximum(a, 0.0) if act else a
    return h


def backward(params: MlpParams, tape: Tape | None, d_embed) -> Grads:
    """Reverse-mode gradients of a scalar loss given ``dLoss/dEmbedding``."""
    if tape is None or tape.out is None:
        raise EncoderError("backward needs the tape recorded by forward(..., record=True)")
    g = as_matrix(d_embed, "embedding gradient")
    if g.shape != tape.out.shape:
        raise EncoderError(f"gradient shape {g.shape} does not match embeddings {tape.out.shape}")
    if tape.normalized:
        # d/dh of h / max(|h|, eps)
        norms = tape.norms
        z = tape.out / np.maximum(norms, tape.eps)
        active = norms >= tape.eps
        radial = np.sum(z * g, axis=1, keepdims=True)
        g = np.where(active, (g - z * radial) / np.maximum(norms, tape.eps), g / tape.eps)

    n = len(params.weights)
    dws, dbs = [None] * n, [None] * n
    for i in range(n - 1, -1, -1):
        if params.relu[i]:
            g = g * (tape.pre[i] > 0)
        dws[i] = tape.inputs[i].T @ g
        dbs[i] = g.sum(axis=0)
        if i:
            g = g @ params.weights[i].T
    return Grads(dws, dbs)


def zero_grads(params: MlpParams) -> Grads:
    return Grads([np.zeros_like(w) for w in params.weights], [np.zeros_like(b) for b in params.biases])


def add_grads(a: Grads, b: Grads) -> Grads:
    return Grads([x + y for x, y in zip(a.weights, b.weights)], [x + y for x, y in zip(a.biases, b.biases)])


def momentum_update(pair: EncoderPair) -> EncoderPair:
    """key <- m * key + (1 - m) * query; the query encoder is shared, not copied."""
    if not pair.query.same_shape(pair.key):
        raise EncoderError("momentum update needs congruent query and key shapes")
    m = pair.momentum
    key = MlpParams([m * kw + (1.0 - m) * qw for kw, qw in zip(pair.key.weights, pair.query.weights)],
                    [m * kb + (1.0 - m) * qb for kb, qb in zip(pair.key.biases, pair.query.biases)],
                    list(pair.key.relu), pair.key.n_backbone)
    return EncoderPair(pair.query, key, m)


def sgd_step(params: MlpParams, grads: Grads, lr: float, weight_decay: float = 0.0) -> MlpParams:
    if lr <= 0 or weight_decay < 0:
        raise EncoderError(f"need lr > 0 and weight_decay >= 0, got lr={lr}, weight_decay={weight_decay}")
    if [a.shape for a in params.arrays()] != [a.shape for a in grads.arrays()]:
        raise EncoderError("gradient shapes do not match parameters")
    return MlpParams([w - lr * (g + weight_decay * w) for w, g in zip(params.weights, grads.weights)],
                     [b - lr * (g + weight_decay * b) for b, g in zip(params.biases, grads.biases)],
                     list(params.relu), params.n_backbone)


__all__ = [
    "EncoderError", "EncoderPair", "Grads", "MlpParams", "NumericsError", "Tape",
    "add_grads", "backward", "encoder_dims", "features", "forward", "init_params",
    "momentum_update", "sgd_step", "zero_grads",
]
