"""Dense tensor utilities.

Tensors are plain ``float64`` numpy arrays. Where an ordering of entries
matters (vectorization, matricization, files) it is the column-major one,
first index fastest:

    i = i_1 + sum_{k>=2} (i_k - 1) * I_1 * ... * I_{k-1}

so :func:`vec` / :func:`unvec` are ``order="F"`` reshapes.  Index helpers and
:func:`contract` use 1-based mode and index numbers.
"""
from math import prod

import numpy as np

from . import _backend
from .errors import ContractionShapeError, IndexBoundsError, ShapeError

__all__ = [
    "linear_index",
    "multi_index",
    "contract",
    "elementwise",
    "sigmoid",
    "vec",
    "unvec",
]


def _check_dims(dims):
    dims = tuple(int(d) for d in dims)
    if not dims or any(d < 1 for d in dims):
        raise ShapeError(f"dims must be a non-empty list of positive integers, got {dims}")
    return dims


def linear_index(multi, dims):
    """1-based linear index of the 1-based multi-index ``multi`` in a ``dims`` box."""
    dims = _check_dims(dims)
    if len(multi) != len(dims):
        raise IndexBoundsError(f"multi-index has {len(multi)} components, box has {len(dims)}")
    i = 1
    stride = 1
    for ik, nk in zip(multi, dims):
        if not 1 <= ik <= nk:
            raise IndexBoundsError(f"index component {ik} outside 1..{nk}")
        i += (ik - 1) * stride
        stride *= nk
    return i


def multi_index(i, dims):
    """Inverse of :func:`linear_index`."""
    dims = _check_dims(dims)
    if not 1 <= i <= prod(dims):
        raise IndexBoundsError(f"linear index {i} outside 1..{prod(dims)}")
    rem = i - 1
    out = []
    for nk in dims:
        rem, ik = divmod(rem, nk)
        out.append(ik + 1)
    return tuple(out)


def contract(a, b, pairs):
    """Sum over paired modes of ``a`` and ``b``.

    Parameters
    ----------
    a, b : array_like
    pairs : list of (int, int)
        1-based ``(mode of a, mode of b)`` pairs to contract.

    Returns
    -------
    ndarray
        Free modes of ``a`` followed by free modes of ``b``.  A full
        contraction gives a one-entry tensor of shape ``(1,)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    axes_a, axes_b = [], []
    for ma, mb in pairs:
        if not (1 <= ma <= a.ndim and 1 <= mb <= b.ndim):
            raise ContractionShapeError(f"mode pair ({ma}, {mb}) out of range")
        if a.shape[ma - 1] != b.shape[mb - 1]:
            raise ContractionShapeError(
                f"mode {ma} of a has size {a.shape[ma - 1]}, mode {mb} of b has size {b.shape[mb - 1]}"
            )
        axes_a.append(ma - 1)
        axes_b.append(mb - 1)
    if len(set(axes_a)) != len(axes_a) or len(set(axes_b)) != len(axes_b):
        raise ContractionShapeError("a mode may appear in at most one pair")
    out = np.tensordot(a, b, axes=(axes_a, axes_b))
    return out.reshape(1) if out.ndim == 0 else out


def sigmoid(x):
    """Logistic function, evaluated without overflow for any finite input."""
    return _backend.sigmoid(x).reshape(np.shape(x))


def elementwise(op, *operands, alpha=None):
    """Apply ``op`` (add, sub, hadamard, sigmoid, scale) entrywise."""
    arrays = [np.asarray(x, dtype=np.float64) for x in operands]
    if op in ("add", "sub", "hadamard"):
        if len(arrays) != 2:
            raise ValueError(f"{op} takes two operands")
        x, y = arrays
        if x.shape != y.shape:
            raise ShapeError(f"shape mismatch {x.shape} vs {y.shape}")
        if op == "add":
            return x + y
        if op == "sub":
            return x - y
        return x * y
    if len(arrays) != 1:
        raise ValueError(f"{op} takes one operand")
    if op == "sigmoid":
        return sigmoid(arrays[0])
    if op == "scale":
        if alpha is None:
            raise ValueError("scale needs alpha")
        return alpha * arrays[0]
    raise ValueError(f"unknown elementwise op {op!r}")


def vec(x, batched=False):
    """Column-major vectorization; with ``batched`` the leading axis is kept."""
    x = np.asarray(x)
    if batched:
        return x.reshape(x.shape[0], -1, order="F")
    return x.reshape(-1, order="F")


def unvec(x, dims, batched=False):
    x = np.asarray(x)
    dims = tuple(dims)
    if batched:
        return x.reshape((x.shape[0],) + dims, order="F")
    return x.reshape(dims, order="F")
