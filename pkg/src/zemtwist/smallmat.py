"""Small dense linear algebra (2x2 up to 6x6) and the matrix exponential.

Everything downstream (linear models, ZEM, equivalent control) goes through
these few functions so there is a single numeric core to audit.
Matrices are plain ``numpy.ndarray`` objects of dtype float64.
"""

from __future__ import annotations

import math

import numpy as np

MAX_DIM = 6

# Pade(6,6) numerator coefficients c_k = (2m-k)! m! / ((2m)! k! (m-k)!)
_PADE6 = (
    1.0,
    1.0 / 2.0,
    5.0 / 44.0,
    1.0 / 66.0,
    1.0 / 792.0,
    1.0 / 15840.0,
    1.0 / 665280.0,
)
# scaled 1-norm target before the rational core is applied
_THETA = 0.5


class InputDomainError(ValueError):
    """Non-finite or wrongly shaped input to a linear algebra routine."""


class DimensionError(ValueError):
    """Operands do not conform."""


def as_matrix(a) -> np.ndarray:
    """Validate and return ``a`` as a square float matrix of dimension 1..6."""
    m = np.array(a, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {m.shape}")
    if not 1 <= m.shape[0] <= MAX_DIM:
        raise DimensionError(f"dimension {m.shape[0]} outside 1..{MAX_DIM}")
    if not np.all(np.isfinite(m)):
        raise InputDomainError("matrix has non-finite entries")
    return m


def as_vector(x) -> np.ndarray:
    v = np.array(x, dtype=float)
    if v.ndim != 1 or not 1 <= v.shape[0] <= MAX_DIM:
        raise DimensionError(f"expected a vector of length 1..{MAX_DIM}, got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InputDomainError("vector has non-finite entries")
    return v


def identity(n: int) -> np.ndarray:
    if not 1 <= n <= MAX_DIM:
        raise DimensionError(f"dimension {n} outside 1..{MAX_DIM}")
    return np.eye(n)


def mat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def mat_vec(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    if a.shape[1] != x.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by vector of length {x.shape[0]}")
    return a @ x


def _squarings(norm: float) -> int:
    if norm <= _THETA:
        return 0
    return int(math.ceil(math.log2(norm / _THETA)))


def mat_exp(a: np.ndarray, t: float = 1.0) -> np.ndarray:
    """Return ``exp(a * t)``.

    Scaling and squaring around a diagonal Pade(6,6) approximant. The scaling
    exponent ``s`` is chosen so that ``||a t|| / 2**s <= 0.5`` in the 1-norm,
    where the Pade truncation error is far below double precision.
    ``t == 0`` returns the identity exactly.
    """
    if not math.isfinite(t):
        raise InputDomainError(f"non-finite time argument {t!r}")
    n = a.shape[0]
    if a.shape != (n, n):
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    at = a * t
    if not np.all(np.isfinite(at)):
        raise InputDomainError("matrix has non-finite entries")
    if t == 0.0:
        return np.eye(n)

    s = _squarings(float(np.abs(at).sum(axis=0).max()))
    x = at / (2.0 ** s)

    eye = np.eye(n)
    x2 = x @ x
    x4 = x2 @ x2
    x6 = x4 @ x2
    c = _PADE6
    even = c[0] * eye + c[2] * x2 + c[4] * x4 + c[6] * x6
    odd = x @ (c[1] * eye + c[3] * x2 + c[5] * x4)
    r = np.linalg.solve(even - odd, even + odd)
    for _ in range(s):
        r = r @ r
    return r
