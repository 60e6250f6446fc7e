"""Matrix product operators for the visible-hidden weight tensor.

An :class:`Mpo` with cores ``W1..Wd`` of shape ``(R_k, I_k, J_k, R_{k+1})``
and ``R_1 = R_{d+1} = 1`` stands for the ``2d``-way tensor

    W(i1..id, j1..jd) = sum_r W1(1, i1, j1, r2) W2(r2, i2, j2, r3) ... Wd(rd, id, jd, 1).

Layer tensors are never multiplied against a materialized ``W``: all products
run core by core through the backend ``sweep`` kernel.  Every layer argument
may carry a leading batch axis.
"""
import warnings
from dataclasses import dataclass
from math import prod

import numpy as np

from . import _backend
from .errors import MaterializationTooLarge, RankShapeError, ShapeError

DEFAULT_MATERIALIZE_CAP = 10**8


def check_ranks(ranks, d):
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) != d + 1:
        raise RankShapeError(f"need {d + 1} ranks for {d} cores, got {len(ranks)}")
    if ranks[0] != 1 or ranks[-1] != 1:
        raise RankShapeError(f"boundary ranks must be 1, got {ranks}")
    if any(r < 1 for r in ranks):
        raise RankShapeError(f"ranks must be positive, got {ranks}")
    return ranks


def max_useful_ranks(in_dims, out_dims):
    sizes = [i * j for i, j in zip(in_dims, out_dims)]
    return tuple(min(prod(sizes[:k]), prod(sizes[k:])) for k in range(len(sizes) + 1))


@dataclass
class Mpo:
    cores: list

    def __post_init__(self):
        self.cores = [np.asarray(c, dtype=np.float64) for c in self.cores]
        if not self.cores:
            raise RankShapeError("an MPO needs at least one core")
        for k, c in enumerate(self.cores):
            if c.ndim != 4:
                raise RankShapeError(f"core {k + 1} has {c.ndim} modes, expected 4")
        for k in range(len(self.cores) - 1):
            if self.cores[k].shape[3] != self.cores[k + 1].shape[0]:
                raise RankShapeError(
                    f"rank mismatch between core {k + 1} {self.cores[k].shape} "
                    f"and core {k + 2} {self.cores[k + 1].shape}"
                )
        check_ranks(self.ranks, self.d)
        limits = max_useful_ranks(self.in_dims, self.out_dims)
        if any(r > m for r, m in zip(self.ranks, limits)):
            warnings.warn(f"MPO ranks {self.ranks} exceed the maximal useful ranks {limits}", stacklevel=2)

    @property
    def d(self):
        return len(self.cores)

    @property
    def in_dims(self):
        return tuple(c.shape[1] for c in self.cores)

    @property
    def out_dims(self):
        return tuple(c.shape[2] for c in self.cores)

    @property
    def ranks(self):
        return tuple(c.shape[0] for c in self.cores) + (self.cores[-1].shape[3],)

    @property
    def n_params(self):
        return sum(c.size for c in self.cores)

    def copy(self):
        return Mpo([c.copy() for c in self.cores])

    def materialize(self, cap=DEFAULT_MATERIALIZE_CAP):
        """Dense ``(I1..Id, J1..Jd)`` weight tensor.

        ``vec``-style reshaping to ``(prod(I), prod(J))`` with ``order="F"``
        gives the equivalent full RBM weight matrix.
        """
        size = prod(self.in_dims) * prod(self.out_dims)
        if size > cap:
            raise MaterializationTooLarge(f"materialized MPO would have {size} entries (cap {cap})")
        full = self.cores[0][0]  # (I1, J1, R2)
        for core in self.cores[1:]:
            full = np.tensordot(full, core, axes=([-1], [0]))
        full = full[..., 0]  # (I1, J1, I2, J2, ..., Id, Jd)
        d = self.d
        return full.transpose(list(range(0, 2 * d, 2)) + list(range(1, 2 * d, 2))).copy()

    def as_matrix(self, cap=DEFAULT_MATERIALIZE_CAP):
        return self.materialize(cap).reshape(prod(self.in_dims), prod(self.out_dims), order="F")


def random_mpo(in_dims, out_dims, ranks, scale=0.01, seed=None):
    """MPO with i.i.d. ``N(0, scale**2)`` core entries."""
    in_dims, out_dims = tuple(in_dims), tuple(out_dims)
    if len(in_dims) != len(out_dims):
        raise ShapeError(f"in_dims {in_dims} and out_dims {out_dims} differ in order")
    ranks = check_ranks(ranks, len(in_dims))
    rng = np.random.default_rng(seed)
    cores = [
        scale * rng.standard_normal((ranks[k], in_dims[k], out_dims[k], ranks[k + 1]))
        for k in range(len(in_dims))
    ]
    return Mpo(cores)


def _batch(x, dims, what):
    x = np.asarray(x, dtype=np.float64)
    dims = tuple(dims)
    if x.shape == dims:
        return x[None], True
    if x.shape[1:] == dims:
        return x, False
    raise ShapeError(f"{what} has shape {x.shape}, expected {dims} or (batch, *{dims})")


def _forward(w, x, orient):
    # orient "in": consume visible modes, emit hidden ones (W^T v analogue)
    mats, shapes = [], []
    for c in w.cores:
        if orient == "out":
            c = c.transpose(0, 2, 1, 3)
        r, i, j, rn = c.shape
        mats.append(np.ascontiguousarray(c).reshape(r * i, j * rn))
        shapes.append((r, i, j, rn))
    return _backend.sweep(x.reshape(x.shape[0], -1), mats, shapes)


def mpo_times_layer(w, x, side="in"):
    """Contract a layer tensor against the MPO.

    ``side="in"`` sums over the visible modes of ``W`` (``x`` is visible-shaped,
    result hidden-shaped); ``side="out"`` sums over the hidden modes.
    """
    if side in ("in", "contract-in-modes"):
        dims, free, orient = w.in_dims, w.out_dims, "in"
    elif side in ("out", "contract-out-modes"):
        dims, free, orient = w.out_dims, w.in_dims, "out"
    else:
        raise ValueError(f"side must be 'in' or 'out', got {side!r}")
    xb, single = _batch(x, dims, "layer")
    out = _forward(w, xb, orient).reshape((xb.shape[0],) + free)
    return out[0] if single else out


def scalar(w, v, h):
    """The scalar ``sum W(i, j) v(i) h(j)``, per batch item."""
    vb, single = _batch(v, w.in_dims, "visible layer")
    hb, _ = _batch(h, w.out_dims, "hidden layer")
    t = mpo_times_layer(w, vb, "in")
    s = (t.reshape(len(t), -1) * hb.reshape(len(hb), -1)).sum(axis=1)
    return s[0] if single else s


def gradient_environment(w, v, h, k):
    """Derivative of the ``v``-``W``-``h`` scalar with respect to core ``k``.

    ``k`` is 1-based.  With batched ``v`` and ``h`` the environments are
    summed over the batch.  Returns an array shaped like core ``k``.

    The visible tensor is swept through cores ``1..k-1`` from the left and
    ``d..k+1`` from the right, leaving ``(r_k, i_k, r_{k+1})`` open next to
    the emitted hidden modes, which are then closed against ``h``.
    """
    d = w.d
    if not 1 <= k <= d:
        raise ValueError(f"core index {k} outside 1..{d}")
    vb, _ = _batch(v, w.in_dims, "visible layer")
    hb, _ = _batch(h, w.out_dims, "hidden layer")
    if len(vb) != len(hb):
        raise ShapeError(f"batch sizes differ: {len(vb)} visible vs {len(hb)} hidden")
    batch = len(vb)
    k0 = k - 1
    I, J, R = w.in_dims, w.out_dims, w.ranks
    j_pre, j_post = prod(J[:k0]), prod(J[k0 + 1:])

    # left sweep: [b, j_1..j_{k-1}, r_k, i_k, i_{k+1}..i_d]
    mats, shapes = [], []
    for c in w.cores[:k0]:
        r, i, j, rn = c.shape
        mats.append(c.reshape(r * i, j * rn))
        shapes.append((r, i, j, rn))
    state = _backend.sweep(vb.reshape(batch, -1), mats, shapes)

    # right sweep over reversed tail modes: [.., j_d..j_{k+1}, r_{k+1}]
    tail = I[k0 + 1:]
    spectator = batch * j_pre * R[k0] * I[k0]
    state = state.reshape((spectator,) + tail)
    state = state.transpose([0] + list(range(len(tail), 0, -1))).reshape(spectator, -1)
    mats, shapes = [], []
    for c in reversed(w.cores[k0 + 1:]):
        c = c.transpose(3, 1, 2, 0)
        rn, i, j, r = c.shape
        mats.append(np.ascontiguousarray(c).reshape(rn * i, j * r))
        shapes.append((rn, i, j, r))
    state = _backend.sweep(state, mats, shapes)

    u = state.reshape(batch, j_pre, R[k0], I[k0], j_post, R[k0 + 1])
    hh = hb.reshape((batch, j_pre, J[k0]) + J[k0 + 1:])
    hh = hh.transpose([0, 1, 2] + list(range(hh.ndim - 1, 2, -1))).reshape(batch, j_pre, J[k0], j_post)
    env = np.tensordot(u, hh, axes=([0, 1, 4], [0, 1, 3]))  # (r_k, i_k, r_{k+1}, j_k)
    return env.transpose(0, 1, 3, 2).copy()
