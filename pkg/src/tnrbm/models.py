"""Binary RBM variants: vector RBM, matrix-variate MvRBM, and MPO-RBM.

All three share the bipartite energy

    E(V, H) = -<V, W H> - <V, B> - <C, H>

and differ only in how the visible-hidden coupling ``W`` is stored.  Layer
arguments may be a single tensor shaped like the layer or a batch with a
leading axis; results follow the input.
"""
from itertools import product
from math import prod

import numpy as np
from scipy.special import logsumexp

from . import _backend
from .errors import DomainError, EnumerationCapError, ShapeError, VariantError
from .mpo import Mpo, gradient_environment, mpo_times_layer, random_mpo
from .tensor import sigmoid, unvec, vec

DEFAULT_ENUMERATION_CAP = 2**24


def _as_batch(x, dims, what):
    x = np.asarray(x, dtype=np.float64)
    if x.shape == dims:
        return x[None], True
    if x.shape[1:] == dims:
        return x, False
    raise ShapeError(f"{what} has shape {x.shape}, expected {dims} or (batch, *{dims})")


def _flat_dot(a, b):
    return (a.reshape(len(a), -1) * b.reshape(len(b), -1)).sum(axis=1)


class BoltzmannModel:
    """Shared machinery; subclasses provide the two coupling products."""

    variant = None

    def __init__(self, visible_bias, hidden_bias):
        self.visible_bias = np.array(visible_bias, dtype=np.float64)
        self.hidden_bias = np.array(hidden_bias, dtype=np.float64)
        if self.visible_bias.shape != self.visible_dims:
            raise ShapeError(f"visible bias {self.visible_bias.shape} != visible dims {self.visible_dims}")
        if self.hidden_bias.shape != self.hidden_dims:
            raise ShapeError(f"hidden bias {self.hidden_bias.shape} != hidden dims {self.hidden_dims}")

    # subclasses: visible_dims, hidden_dims, _up, _down, _weight_stats, weights()

    def params(self):
        """Name -> array mapping of every trainable tensor (live views)."""
        out = dict(self.weights())
        out["B"] = self.visible_bias
        out["C"] = self.hidden_bias
        return out

    @property
    def n_weight_params(self):
        return sum(w.size for w in self.weights().values())

    def copy(self):
        return self.from_params({k: v.copy() for k, v in self.params().items()})

    def energy(self, v, h):
        vb, single = _as_batch(v, self.visible_dims, "visible layer")
        hb, _ = _as_batch(h, self.hidden_dims, "hidden layer")
        e = -_flat_dot(self._up(vb), hb) - _flat_dot(vb, self.visible_bias[None]) - _flat_dot(
            hb, self.hidden_bias[None]
        )
        return float(e[0]) if single else e

    def cond_hidden(self, v):
        """``p(h = 1 | v)`` entrywise."""
        vb, single = _as_batch(v, self.visible_dims, "visible layer")
        p = sigmoid(self._up(vb) + self.hidden_bias)
        return p[0] if single else p

    def cond_visible(self, h):
        """``p(v = 1 | h)`` entrywise."""
        hb, single = _as_batch(h, self.hidden_dims, "hidden layer")
        p = sigmoid(self._down(hb) + self.visible_bias)
        return p[0] if single else p

    def free_energy_terms(self, v):
        """``log sum_h exp(-E(v, h))`` per visible configuration."""
        vb, single = _as_batch(v, self.visible_dims, "visible layer")
        pre = (self._up(vb) + self.hidden_bias).reshape(len(vb), -1)
        out = _flat_dot(vb, self.visible_bias[None]) + np.logaddexp(0.0, pre).sum(axis=1)
        return out[0] if single else out

    def statistics(self, v, h, names=None):
        """Batch sums of ``-dE/dtheta`` evaluated at ``(v, h)``.

        ``h`` may hold probabilities: the energy is linear in ``h``, so the
        result is then the conditional expectation.  ``names`` restricts the
        output to a subset of :meth:`params` keys.
        """
        vb, _ = _as_batch(v, self.visible_dims, "visible layer")
        hb, _ = _as_batch(h, self.hidden_dims, "hidden layer")
        names = list(self.params()) if names is None else list(names)
        out = {}
        for name in names:
            if name == "B":
                out[name] = vb.sum(axis=0)
            elif name == "C":
                out[name] = hb.sum(axis=0)
            else:
                out[name] = self._weight_stats(name, vb, hb)
        return out


class RBM(BoltzmannModel):
    variant = "rbm"

    def __init__(self, W, visible_bias, hidden_bias):
        self.W = np.array(W, dtype=np.float64)
        if self.W.ndim != 2:
            raise ShapeError(f"RBM weight must be a matrix, got shape {self.W.shape}")
        super().__init__(visible_bias, hidden_bias)

    @property
    def visible_dims(self):
        return (self.W.shape[0],)

    @property
    def hidden_dims(self):
        return (self.W.shape[1],)

    @classmethod
    def random(cls, n_visible, n_hidden, scale=0.01, seed=None):
        rng = np.random.default_rng(seed)
        return cls(scale * rng.standard_normal((n_visible, n_hidden)), np.zeros(n_visible), np.zeros(n_hidden))

    @classmethod
    def from_params(cls, p):
        return cls(p["W"], p["B"], p["C"])

    def weights(self):
        return {"W": self.W}

    def _up(self, vb):
        return vb @ self.W

    def _down(self, hb):
        return hb @ self.W.T

    def _weight_stats(self, name, vb, hb):
        return vb.T @ hb


class MvRBM(BoltzmannModel):
    """Matrix layers with the Kronecker-structured coupling ``W2 (x) W1``."""

    variant = "mvrbm"

    def __init__(self, W1, W2, visible_bias, hidden_bias):
        self.W1 = np.array(W1, dtype=np.float64)
        self.W2 = np.array(W2, dtype=np.float64)
        if self.W1.ndim != 2 or self.W2.ndim != 2:
            raise ShapeError("MvRBM factors must be matrices")
        super().__init__(visible_bias, hidden_bias)

    @property
    def visible_dims(self):
        return (self.W1.shape[0], self.W2.shape[0])

    @property
    def hidden_dims(self):
        return (self.W1.shape[1], self.W2.shape[1])

    @classmethod
    def random(cls, visible_dims, hidden_dims, scale=0.01, seed=None):
        rng = np.random.default_rng(seed)
        (m1, m2), (n1, n2) = visible_dims, hidden_dims
        return cls(
            scale * rng.standard_normal((m1, n1)),
            scale * rng.standard_normal((m2, n2)),
            np.zeros((m1, m2)),
            np.zeros((n1, n2)),
        )

    @classmethod
    def from_params(cls, p):
        return cls(p["W1"], p["W2"], p["B"], p["C"])

    def weights(self):
        return {"W1": self.W1, "W2": self.W2}

    def _up(self, vb):
        return self.W1.T @ vb @ self.W2

    def _down(self, hb):
        return self.W1 @ hb @ self.W2.T

    def _weight_stats(self, name, vb, hb):
        if name == "W1":
            return np.einsum("bik,kl,bjl->ij", vb, self.W2, hb, optimize=True)
        return np.einsum("bki,kl,blj->ij", vb, self.W1, hb, optimize=True)

    def to_mporbm(self):
        """The equivalent rank-1 MPO-RBM."""
        cores = [self.W1[None, :, :, None], self.W2[None, :, :, None]]
        return MPORBM(Mpo(cores), self.visible_bias, self.hidden_bias)


class MPORBM(BoltzmannModel):
    variant = "mporbm"

    def __init__(self, mpo, visible_bias, hidden_bias):
        self.mpo = mpo if isinstance(mpo, Mpo) else Mpo(mpo)
        super().__init__(visible_bias, hidden_bias)

    @property
    def visible_dims(self):
        return self.mpo.in_dims

    @property
    def hidden_dims(self):
        return self.mpo.out_dims

    @property
    def ranks(self):
        return self.mpo.ranks

    @classmethod
    def random(cls, visible_dims, hidden_dims, ranks, scale=0.01, seed=None):
        w = random_mpo(visible_dims, hidden_dims, ranks, scale=scale, seed=seed)
        return cls(w, np.zeros(tuple(visible_dims)), np.zeros(tuple(hidden_dims)))

    @classmethod
    def from_params(cls, p):
        cores = [p[f"core{k}"] for k in range(1, len(p) - 1)]
        return cls(Mpo(cores), p["B"], p["C"])

    def weights(self):
        return {f"core{k}": c for k, c in enumerate(self.mpo.cores, start=1)}

    def _up(self, vb):
        return mpo_times_layer(self.mpo, vb, "in")

    def _down(self, hb):
        return mpo_times_layer(self.mpo, hb, "out")

    def _weight_stats(self, name, vb, hb):
        return gradient_environment(self.mpo, vb, hb, int(name[4:]))

    def to_rbm(self, cap=None):
        """Vector RBM with the materialized weight matrix (column-major layer vectorization)."""
        w = self.mpo.as_matrix() if cap is None else self.mpo.as_matrix(cap)
        return RBM(w, vec(self.visible_bias), vec(self.hidden_bias))


def to_vector_layer(x, dims):
    """Vectorize a (batched) layer tensor of shape ``dims``."""
    xb, single = _as_batch(x, tuple(dims), "layer")
    out = vec(xb, batched=True)
    return out[0] if single else out


def from_vector_layer(x, dims):
    x = np.asarray(x)
    if x.ndim == 1:
        return unvec(x, dims)
    return unvec(x, dims, batched=True)


def sample_layer(probs, rng):
    """Independent Bernoulli draws, one per entry of ``probs``."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size and (not np.all(probs >= 0.0) or not np.all(probs <= 1.0)):
        raise DomainError("probabilities must lie in [0, 1]")
    u = rng.random(probs.shape)
    return _backend.bernoulli(probs, u).reshape(probs.shape)


def all_states(dims):
    """Every binary tensor of shape ``dims``, stacked along a leading axis."""
    n = prod(dims)
    states = np.array(list(product((0.0, 1.0), repeat=n)), dtype=np.float64).reshape(2**n, n)
    return states.reshape((2**n,) + tuple(dims))


def _check_cap(m, cap):
    n = prod(m.visible_dims) + prod(m.hidden_dims)
    if 2**n > cap:
        raise EnumerationCapError(f"{n} binary units means {2**n} states, above the cap of {cap}")


def joint_energies(m, cap=DEFAULT_ENUMERATION_CAP):
    """Energies of every ``(V, H)`` pair: ``(vs, hs, E)`` with ``E[a, b] = E(vs[a], hs[b])``."""
    _check_cap(m, cap)
    vs, hs = all_states(m.visible_dims), all_states(m.hidden_dims)
    up = m._up(vs).reshape(len(vs), -1)
    hflat = hs.reshape(len(hs), -1)
    e = -(up @ hflat.T)
    e -= _flat_dot(vs, m.visible_bias[None])[:, None]
    e -= _flat_dot(hs, m.hidden_bias[None])[None, :]
    return vs, hs, e


def log_partition(m, cap=DEFAULT_ENUMERATION_CAP):
    return float(logsumexp(-joint_energies(m, cap)[2]))


def exact_log_likelihood(m, data, cap=DEFAULT_ENUMERATION_CAP):
    """Sum over ``data`` of ``log p(V)``, with ``Z`` by exhaustive enumeration.

    Test oracle only: the cost is exponential in the number of units.
    """
    vs, hs, e = joint_energies(m, cap)
    log_z = logsumexp(-e)
    data, _ = _as_batch(data, m.visible_dims, "data")
    if not np.all(np.isin(data, (0.0, 1.0))):
        raise DomainError("log-likelihood is defined for binary data only")
    # row index of each data tensor among the enumerated states (first unit most significant)
    n = prod(m.visible_dims)
    codes = (data.reshape(len(data), n) @ (2 ** np.arange(n - 1, -1, -1))).astype(np.int64)
    marg = logsumexp(-e, axis=1)
    return float(np.sum(marg[codes]) - len(data) * log_z)


def model_for(variant, visible_dims, hidden_dims, ranks=None, scale=0.01, seed=None):
    """Randomly initialized model of the requested variant (biases zero)."""
    visible_dims, hidden_dims = tuple(visible_dims), tuple(hidden_dims)
    if variant == "rbm":
        if len(visible_dims) != 1 or len(hidden_dims) != 1:
            raise ShapeError("rbm layers are vectors: give one visible and one hidden dimension")
        return RBM.random(visible_dims[0], hidden_dims[0], scale=scale, seed=seed)
    if variant == "mvrbm":
        if len(visible_dims) != 2 or len(hidden_dims) != 2:
            raise ShapeError("mvrbm layers are matrices: give two visible and two hidden dimensions")
        return MvRBM.random(visible_dims, hidden_dims, scale=scale, seed=seed)
    if variant == "mporbm":
        if ranks is None:
            raise ShapeError("mporbm needs a rank vector")
        return MPORBM.random(visible_dims, hidden_dims, ranks, scale=scale, seed=seed)
    raise VariantError(f"unknown variant {variant!r}")
