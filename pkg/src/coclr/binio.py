"""Little-endian binary container for encoder checkpoints and queue snapshots.

Layout (all integers unsigned little-endian unless noted)::

    magic      8 bytes  b"COCLRBIN"
    version    u32      1
    kind       u32      1 = MLP parameters, 2 = queue snapshot

    kind 1:
      layers     u32    L
      n_backbone u32
      dims       (L+1) x u32
      relu       L x u8
      per layer  weight (dims[i] x dims[i+1], row-major f64), bias (dims[i+1] x f64)

    kind 2:
      capacity u32, dim u32, fill u32, pushed u64
      entries  fill x dim f64 (oldest first)
      ages     fill x i64
      ids      fill x i64

Example: a 1-layer 2->1 network with weight [[1.0], [2.0]], bias [0.5] and
no ReLU is 8 + 4 + 4 + 4 + 4 + 8 + 1 + 24 = 57 bytes, starting
``434f434c5242494e 01000000 01000000 01000000 01000000 02000000 01000000 00``
followed by the three doubles 1.0, 2.0, 0.5.
"""

from __future__ import annotations

import struct

import numpy as np

from .encoder import MlpParams
from .queue import QueueState

MAGIC = b"COCLRBIN"
VERSION = 1
KIND_PARAMS = 1
KIND_QUEUE = 2


class FormatError(ValueError):
    pass


def _f64(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def params_to_bytes(params: MlpParams) -> bytes:
    dims = params.dims
    out = [MAGIC, struct.pack("<III", VERSION, KIND_PARAMS, len(params.weights)),
           struct.pack("<I", params.n_backbone), struct.pack(f"<{len(dims)}I", *dims),
           bytes(int(r) for r in params.relu)]
    for w, b in zip(params.weights, params.biases):
        out += [_f64(w), _f64(b)]
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated file")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return bytes(chunk)

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, shape) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self.take(8 * count), dtype=dtype).astype(dtype[1:]).reshape(shape)


def _header(r: _Reader, kind: int) -> None:
    if r.take(8) != MAGIC:
        raise FormatError("bad magic")
    version, got = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if got != kind:
        raise FormatError(f"expected kind {kind}, found {got}")


def params_from_bytes(data: bytes) -> MlpParams:
    r = _Reader(data)
    _header(r, KIND_PARAMS)
    (layers,) = r.unpack("<I")
    (n_backbone,) = r.unpack("<I")
    dims = r.unpack(f"<{layers + 1}I")
    relu = [bool(b) for b in r.take(layers)]
    weights, biases = [], []
    for i in range(layers):
        weights.append(r.array("<f8", (dims[i], dims[i + 1])))
        biases.append(r.array("<f8", (dims[i + 1],)))
    if r.pos != len(r.data):
        raise FormatError("trailing bytes")
    return MlpParams(weights, biases, relu, n_backbone)


def queue_to_bytes(q: QueueState) -> bytes:
    try:
        ids = np.asarray(q.ids, dtype="<i8")
    except (TypeError, ValueError) as exc:
        raise FormatError("queue ids must be integers to be serialised") from exc
    return b"".join([MAGIC, struct.pack("<II", VERSION, KIND_QUEUE),
                     struct.pack("<IIIQ", q.capacity, q.dim, q.fill, q.pushed),
                     _f64(q.entries), np.asarray(q.ages, dtype="<i8").tobytes(), ids.tobytes()])


def queue_from_bytes(data: bytes) -> QueueState:
    r = _Reader(data)
    _header(r, KIND_QUEUE)
    capacity, dim, fill, pushed = r.unpack("<IIIQ")
    entries = r.array("<f8", (fill, dim))
    ages = r.array("<i8", (fill,))
    ids = tuple(int(i) for i in r.array("<i8", (fill,)))
    return QueueState(capacity, dim, entries, ids, ages, pushed)


def save_params(path, params: MlpParams) -> None:
    with open(path, "wb") as fh:
        fh.write(params_to_bytes(params))


def load_params(path) -> MlpParams:
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read())


def save_queue(path, q: QueueState) -> None:
    with open(path, "wb") as fh:
        fh.write(queue_to_bytes(q))


def load_queue(path) -> QueueState:
    with open(path, "rb") as fh:
        return queue_from_bytes(fh.read())
