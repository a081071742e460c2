"""Dense float64 numerics shared by the attention, loss and context modules.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64
(2-D and 1-D respectively).  The helpers here add the shape checks and
error messages the rest of the package relies on; they never mutate their
inputs.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "as_matrix",
    "as_vector",
    "matmul",
    "softmax",
    "dot",
    "l2_norm_sq",
    "tanh_elem",
    "add",
    "sub",
    "hadamard",
    "scale",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_matrix(a) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def as_vector(v) -> np.ndarray:
    x = np.asarray(v, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"expected a 1-D vector, got shape {x.shape}")
    return x


def matmul(a, b) -> np.ndarray:
    """Matrix product ``a @ b`` for 2-D operands."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def softmax(v, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis`` (max-subtracted).

    A 1-D input gives a probability vector; for stacked inputs each slice
    along ``axis`` is normalised independently.
    """
    x = np.asarray(v, dtype=np.float64)
    if x.size == 0 or x.shape[axis] == 0:
        raise ShapeError("softmax of an empty vector")
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _same_length(name: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{name}: length mismatch {a.shape} vs {b.shape}")


def dot(a, b) -> float:
    a = as_vector(a)
    b = as_vector(b)
    _same_length("dot", a, b)
    return float(a @ b)


def l2_norm_sq(a) -> float:
    a = as_vector(a)
    return float(a @ a)


def tanh_elem(a) -> np.ndarray:
    return np.tanh(np.asarray(a, dtype=np.float64))


def add(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _same_length("add", a, b)
    return a + b


def sub(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _same_length("sub", a, b)
    return a - b


def hadamard(a, b) -> np.ndarray:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _same_length("hadamard", a, b)
    return a * b


def scale(a, c: float) -> np.ndarray:
    return np.asarray(a, dtype=np.float64) * float(c)
