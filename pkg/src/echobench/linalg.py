"""Small dense vector and matrix helpers shared across the package.

All public functions validate their inputs and work in float64. The cosine
here is the similarity used everywhere: both norms in the denominator are
offset by a tiny epsilon so that zero vectors score zero instead of dividing
by zero.
"""

from __future__ import annotations

import numpy as np

from .errors import (
    DimensionError,
    EmptyInputError,
    InvalidInputError,
    NonFiniteError,
)

#: Offset added to each norm factor in the cosine denominator.
COSINE_EPS = 1e-12


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float64 array, validating shape and content."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise EmptyInputError(f"{name} must have at least one element")
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name} contains non-finite values")
    return arr


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array, validating shape and content."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0:
        raise EmptyInputError(f"{name} must be non-empty")
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{name} contains non-finite values")
    return arr


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, safe at zero.

    Returns dot(a, b) / ((|a| + eps) * (|b| + eps)); two zero vectors give
    exactly 0.0.
    """
    va = as_vector(a, "a")
    vb = as_vector(b, "b")
    if va.shape != vb.shape:
        raise DimensionError(f"length mismatch: {va.shape[0]} vs {vb.shape[0]}")
    dot = float(np.dot(va, vb))
    denom = (float(np.linalg.norm(va)) + COSINE_EPS) * (
        float(np.linalg.norm(vb)) + COSINE_EPS
    )
    return dot / denom


def mean_vectors(vectors) -> np.ndarray:
    """Arithmetic mean of equal-length vectors.

    Computed centered on the first vector so that n identical inputs return
    that vector bit-exactly, for every n.
    """
    vecs = [as_vector(v, f"vectors[{i}]") for i, v in enumerate(vectors)]
    if not vecs:
        raise EmptyInputError("mean_vectors needs at least one vector")
    length = vecs[0].shape[0]
    for i, v in enumerate(vecs[1:], start=1):
        if v.shape[0] != length:
            raise DimensionError(
                f"vectors[{i}] has length {v.shape[0]}, expected {length}"
            )
    stacked = np.stack(vecs)
    ref = stacked[0]
    return ref + (stacked - ref).mean(axis=0)


def mean_rows(matrix: np.ndarray) -> np.ndarray:
    """Mean over axis 0 of a 2-D array, centered on the first row.

    Same exactness property as :func:`mean_vectors`; no validation, for
    internal hot paths.
    """
    ref = matrix[0]
    return ref + (matrix - ref).mean(axis=0)


def softmax_rows(matrix, scale: float = 1.0) -> np.ndarray:
    """Row-wise softmax of ``scale * matrix`` with max-subtraction.

    Every row of the result is positive and sums to 1 within float64
    round-off, regardless of input magnitude.
    """
    m = as_matrix(matrix)
    if not (np.isfinite(scale) and scale > 0.0):
        raise InvalidInputError(f"scale must be finite and positive, got {scale}")
    z = scale * m
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_sum_exp(values) -> float:
    """log(sum(exp(values))) computed via max-shift; exact on singletons."""
    v = as_vector(values, "values")
    m = float(v.max())
    return m + float(np.log(np.exp(v - m).sum()))
