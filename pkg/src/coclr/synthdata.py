"""Synthetic two-view dataset whose second view clusters by class while the first
view is dominated by per-sample nuisance.

View 2 is a unit class centroid plus small isotropic noise, so nearest
neighbours in view 2 mostly share a class.  View 1 carries the class in a
few "signal" coordinates and a large independent nuisance vector in the
rest, so raw view-1 neighbours are mostly decided by nuisance.  The class
label never enters a training path; it is kept for the oracle loss and the
evaluators.
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .numerics import Rng, as_matrix, make_rng


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    n_classes: int = 10
    per_class: int = 40
    d_signal: int = 8
    d_nuisance: int = 24
    d2: int = 16
    signal_scale: float = 1.0
    signal_spread: float = 0.25
    sigma2: float = 0.12
    sigma_nuis: float = 2.0
    train_fraction: float = 0.8
    seed: int = 0

    @property
    def d1(self) -> int:
        return self.d_signal + self.d_nuisance

    @property
    def n(self) -> int:
        return self.n_classes * self.per_class

    def validate(self) -> None:
        if self.n_classes < 2:
            raise DatasetError("need at least 2 classes")
        if self.per_class < 2:
            raise DatasetError("need at least 2 samples per class")
        if self.d_signal < 1 or self.d_nuisance < 0 or self.d1 < 2 or self.d2 < 2:
            raise DatasetError("view dimensions must be at least 2")
        if self.d2 < self.n_classes:
            raise DatasetError("view 2 needs d2 >= n_classes for orthonormal class centroids")
        if min(self.signal_scale, self.signal_spread, self.sigma2, self.sigma_nuis) < 0:
            raise DatasetError("scales and spreads must be non-negative")
        n_train = round(self.per_class * self.train_fraction)
        if not 1 <= n_train < self.per_class:
            raise DatasetError("train_fraction must leave at least one train and one test sample per class")


@dataclass
class TwoViewDataset:
    view1: np.ndarray
    view2: np.ndarray
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    spec: DatasetSpec = field(default_factory=DatasetSpec)

    def __post_init__(self):
        if not (len(self.view1) == len(self.view2) == len(self.labels)):
            raise DatasetError("views and labels must be row-aligned")

    @property
    def n(self) -> int:
        return len(self.labels)

    def with_labels(self, labels) -> "TwoViewDataset":
        return TwoViewDataset(self.view1, self.view2, np.asarray(labels), self.train_idx, self.test_idx, self.spec)

    def equals(self, other: "TwoViewDataset") -> bool:
        return (self.spec == other.spec and np.array_equal(self.view1, other.view1)
                and np.array_equal(self.view2, other.view2) and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.train_idx, other.train_idx) and np.array_equal(self.test_idx, other.test_idx))


@dataclass(frozen=True)
class AugmentSpec:
    sigma: float = 0.1
    dropout: float = 0.3

    def validate(self) -> None:
        if self.sigma < 0 or not 0.0 <= self.dropout < 1.0:
            raise DatasetError(f"invalid augmentation sigma={self.sigma} dropout={self.dropout}")


def generate(spec: DatasetSpec = DatasetSpec(), rng: Rng | None = None) -> TwoViewDataset:
    spec.validate()
    rng = make_rng(spec.seed, 0) if rng is None else rng
    c, m = spec.n_classes, spec.per_class
    labels = np.repeat(np.arange(c), m)

    q, _ = np.linalg.qr(rng.standard_normal((spec.d2, c)))
    centroids2 = q.T
    view2 = centroids2[labels] + spec.sigma2 * rng.standard_normal((spec.n, spec.d2))

    means1 = spec.signal_scale * rng.standard_normal((c, spec.d_signal)) / np.sqrt(spec.d_signal)
    signal = means1[labels] + spec.signal_spread * rng.standard_normal((spec.n, spec.d_signal)) / np.sqrt(spec.d_signal)
    nuisance = spec.sigma_nuis * rng.standard_normal((spec.n, spec.d_nuisance)) / np.sqrt(max(spec.d_nuisance, 1))
    view1 = np.concatenate([signal, nuisance], axis=1)

    n_train = round(m * spec.train_fraction)
    train, test = [], []
    for k in range(c):
        members = rng.permutation(np.flatnonzero(labels == k))
        train.append(members[:n_train])
        test.append(members[n_train:])
    train_idx = np.sort(np.concatenate(train))
    test_idx = np.sort(np.concatenate(test))
    return TwoViewDataset(view1, view2, labels, train_idx, test_idx, spec)


def augment(x, spec: AugmentSpec, rng: Rng) -> np.ndarray:
    """Additive Gaussian noise followed by independent coordinate dropout (no rescaling)."""
    spec.validate()
    x = as_matrix(x, "input")
    out = x + spec.sigma * rng.standard_normal(x.shape) if spec.sigma > 0 else x.copy()
    if spec.dropout > 0:
        out = out * (rng.random(x.shape) >= spec.dropout)
    return out


def nearest_neighbor_accuracy(train_x, train_y, test_x, test_y) -> float:
    """Exact Euclidean 1-NN accuracy, ties to the lowest train index."""
    train_x = as_matrix(train_x)
    test_x = as_matrix(test_x)
    d = (np.sum(test_x ** 2, axis=1)[:, None] - 2.0 * test_x @ train_x.T
         + np.sum(train_x ** 2, axis=1)[None, :])
    nn = np.argmin(d, axis=1)
    return float(np.mean(np.asarray(train_y)[nn] == np.asarray(test_y)))


def raw_view_accuracies(data: TwoViewDataset) -> tuple[float, float]:
    tr, te, y = data.train_idx, data.test_idx, data.labels
    return (nearest_neighbor_accuracy(data.view1[tr], y[tr], data.view1[te], y[te]),
            nearest_neighbor_accuracy(data.view2[tr], y[tr], data.view2[te], y[te]))


# Text format: line 1 "#coclr-dataset v1 <spec json>", line 2 column header,
# then one row per sample with floats written by repr() (exact round trip).

def export_dataset(data: TwoViewDataset, fh) -> None:
    split = np.empty(data.n, dtype=object)
    split[data.train_idx] = "train"
    split[data.test_idx] = "test"
    d1, d2 = data.view1.shape[1], data.view2.shape[1]
    fh.write("#coclr-dataset v1 " + json.dumps(asdict(data.spec), sort_keys=True) + "\n")
    header = ["index", "split", "label"] + [f"v1_{j}" for j in range(d1)] + [f"v2_{j}" for j in range(d2)]
    fh.write("\t".join(header) + "\n")
    for i in range(data.n):
        row = [str(i), split[i], str(int(data.labels[i]))]
        row += [repr(float(v)) for v in data.view1[i]] + [repr(float(v)) for v in data.view2[i]]
        fh.write("\t".join(row) + "\n")


def import_dataset(fh) -> TwoViewDataset:
    first = fh.readline()
    prefix = "#coclr-dataset v1 "
    if not first.startswith(prefix):
        raise DatasetError("not a coclr-dataset v1 file")
    spec = DatasetSpec(**json.loads(first[len(prefix):]))
    header = fh.readline().rstrip("\n").split("\t")
    d1 = sum(h.startswith("v1_") for h in header)
    d2 = sum(h.startswith("v2_") for h in header)
    rows = [line.rstrip("\n").split("\t") for line in fh if line.strip()]
    splits = np.array([r[1] for r in rows])
    labels = np.array([int(r[2]) for r in rows])
    values = np.array([[float(v) for v in r[3:]] for r in rows]).reshape(len(rows), d1 + d2)
    return TwoViewDataset(values[:, :d1], values[:, d1:], labels, np.flatnonzero(splits == "train"),
                          np.flatnonzero(splits == "test"), spec)


def dumps_dataset(data: TwoViewDataset) -> str:
    buf = io.StringIO()
    export_dataset(data, buf)
    return buf.getvalue()
