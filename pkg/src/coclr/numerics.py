"""Dense float64 kernels, seeded randomness and a finite-difference checker.

Matrices are plain 2-D ``numpy.ndarray`` objects of dtype float64.  Random
streams use numpy's PCG64 bit generator, whose output for a given seed is
fixed by its published algorithm and identical across platforms.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

DEFAULT_EPS = 1e-12

Rng = np.random.Generator


class NumericsError(ValueError):
    """Raised on shape mismatches or non-finite values."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise NumericsError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def check_finite(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(a))[0]
        raise NumericsError(f"{name} has a non-finite entry at {tuple(int(i) for i in bad)}")
    return a


def make_rng(seed: int, *stream: int) -> Rng:
    """Return an independent PCG64 stream keyed by ``seed`` and ``stream`` ids.

    ``make_rng(7, 2)`` and ``make_rng(7, 3)`` are statistically independent
    but both fully determined by their keys.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, stream)])))


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise NumericsError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul result")


def l2_normalize_rows(a, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Divide each row by ``max(||row||, eps)``; zero rows stay zero."""
    if eps <= 0:
        raise NumericsError("eps must be positive")
    a = as_matrix(a)
    norms = np.sqrt(np.sum(a * a, axis=1, keepdims=True))
    return a / np.maximum(norms, eps)


def softmax_rows(logits) -> np.ndarray:
    logits = check_finite(as_matrix(logits, "logits"), "logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def finite_difference_grad(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x``, one coordinate at a time."""
    if h <= 0:
        raise NumericsError("step h must be positive")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            coord = np.unravel_index(i, x.shape)
            raise NumericsError(f"f is non-finite near coordinate {tuple(int(c) for c in coord)}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def relative_error(a, b, floor: float = 1e-8) -> float:
    """Max-norm relative error ``|a-b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)), floor)
    return float(np.max(np.abs(a - b), initial=0.0)) / scale
