"""Contrastive-divergence training for all model variants.

``cd-aop`` follows the alternating schedule: for every mini-batch the MPO
cores are visited one at a time, each visit running fresh Gibbs chains and
updating only that core (plus the biases).  ``cd-su`` updates every core from
one chain per batch.  The vector RBM and MvRBM always use the plain
single-update CD step.

Gradients use the hidden probability tensors rather than hidden samples in
both phases; the visible negative phase uses the sampled chain end.
"""
import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ShapeError, VariantError
from .models import DEFAULT_ENUMERATION_CAP, _as_batch, exact_log_likelihood, joint_energies, sample_layer

ALGORITHMS = ("cd-aop", "cd-su")
DEFAULT_LEARNING_RATE_GRID = (0.5, 0.1, 0.05, 0.01)


@dataclass(frozen=True)
class TrainConfig:
    max_iterations: int = 100
    batch_size: int = 10
    momentum: float = 0.5
    learning_rate: float = 0.05
    cd_steps: int = 1
    algorithm: str = "cd-aop"
    seed: int = 0
    learning_rate_grid: tuple = ()
    bias_in_core_loop: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.cd_steps < 1:
            raise ValueError("cd_steps must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if any(lr <= 0 for lr in self.learning_rate_grid):
            raise ValueError("learning rates in the grid must be positive")


@dataclass
class GibbsChain:
    """States ``V0, H0, V1, ..., VK`` and the conditionals that produced them.

    ``hidden_probs[k]`` is ``p(H | V_k)`` for ``k = 0..K``;
    ``visible_probs[k]`` is ``p(V | H_k)``, the law of ``V_{k+1}``.
    """

    visible: list
    hidden: list
    hidden_probs: list
    visible_probs: list
    batched: bool = False

    @property
    def steps(self):
        return len(self.hidden)


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    learning_rate: float = None
    validation_scores: dict = field(default_factory=dict)

    def to_csv(self, timing=False):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        header = ["epoch", "batches", "recon_error"] + (["wall_ms"] if timing else [])
        writer.writerow(header)
        for row in self.rows:
            out = [row["epoch"], row["batches"], repr(row["recon_error"])]
            if timing:
                out.append(f"{row['wall_ms']:.3f}")
            writer.writerow(out)
        return buf.getvalue()


def run_gibbs(m, v0, K, rng):
    """K alternating Gibbs steps started at the (batched) visible state ``v0``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    v = np.asarray(v0, dtype=np.float64)
    visible, hidden, hprobs, vprobs = [v], [], [], []
    for _ in range(K):
        ph = m.cond_hidden(v)
        h = sample_layer(ph, rng)
        pv = m.cond_visible(h)
        v = sample_layer(pv, rng)
        hprobs.append(ph)
        hidden.append(h)
        vprobs.append(pv)
        visible.append(v)
    hprobs.append(m.cond_hidden(v))
    batched = visible[0].ndim > len(m.visible_dims)
    return GibbsChain(visible, hidden, hprobs, vprobs, batched)


def chain_gradients(m, chain, names=None):
    """Batch-mean CD estimate of ``d log L / d theta`` for the requested parameters."""
    v0, vk = chain.visible[0], chain.visible[-1]
    p0, pk = chain.hidden_probs[0], chain.hidden_probs[-1]
    vb, _ = _as_batch(v0, m.visible_dims, "visible layer")
    n = len(vb)
    pos = m.statistics(v0, p0, names)
    neg = m.statistics(vk, pk, names)
    return {name: (pos[name] - neg[name]) / n for name in pos}


def core_gradient(m, chain, k):
    if m.variant != "mporbm":
        raise VariantError(f"core gradients need an mporbm, got {m.variant}")
    if not 1 <= k <= m.mpo.d:
        raise ValueError(f"core index {k} outside 1..{m.mpo.d}")
    name = f"core{k}"
    return chain_gradients(m, chain, [name])[name]


def bias_gradients(chain):
    """Batch means of ``V_0 - V_K`` and ``p(H|V_0) - p(H|V_K)``."""
    db = np.asarray(chain.visible[0]) - np.asarray(chain.visible[-1])
    dc = np.asarray(chain.hidden_probs[0]) - np.asarray(chain.hidden_probs[-1])
    if chain.batched:
        return db.mean(axis=0), dc.mean(axis=0)
    return db, dc


class _Momentum:
    """``inc <- gamma * inc + alpha * grad; theta <- theta + inc`` per parameter."""

    def __init__(self, params, momentum, learning_rate):
        self.params = params
        self.gamma = momentum
        self.alpha = learning_rate
        self.increments = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, name, grad):
        inc = self.gamma * self.increments[name] + self.alpha * grad
        self.increments[name] = inc
        self.params[name] += inc
        return inc


def _train_once(model, data, cfg, learning_rate):
    model = model.copy()
    params = model.params()
    opt = _Momentum(params, cfg.momentum, learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7472]))  # "tr"
    n = len(data)
    alternating = model.variant == "mporbm" and cfg.algorithm == "cd-aop"
    d = model.mpo.d if model.variant == "mporbm" else 0
    log = TrainLog(learning_rate=learning_rate)
    for epoch in range(1, cfg.max_iterations + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        batches = [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
        sq_err, count = 0.0, 0
        for idx in batches:
            v0 = data[idx]
            if alternating:
                for c in range(1, d + 1):
                    chain = run_gibbs(model, v0, cfg.cd_steps, rng)
                    names = [f"core{c}"]
                    if cfg.bias_in_core_loop or c == d:
                        names += ["B", "C"]
                    grads = chain_gradients(model, chain, names)
                    for name in names:
                        opt.step(name, grads[name])
                    if c == 1:
                        sq_err += float(np.sum((v0 - chain.visible_probs[0]) ** 2))
                        count += v0.size
            else:
                chain = run_gibbs(model, v0, cfg.cd_steps, rng)
                grads = chain_gradients(model, chain)
                for name, g in grads.items():
                    opt.step(name, g)
                sq_err += float(np.sum((v0 - chain.visible_probs[0]) ** 2))
                count += v0.size
        log.rows.append(
            {
                "epoch": epoch,
                "batches": len(batches),
                "recon_error": sq_err / count,
                "wall_ms": 1000.0 * (time.perf_counter() - start),
            }
        )
    return model, log


def train(model, data, cfg, validation=None):
    """Fit ``model`` to ``data`` (a batch of visible tensors).

    Parameters
    ----------
    model : BoltzmannModel
        Initial parameters; not modified.
    data : ndarray, shape (N, *visible_dims)
    cfg : TrainConfig
    validation : callable, optional
        ``validation(model) -> score`` (higher is better).  When given, one
        model is trained per learning rate in ``cfg.learning_rate_grid`` (or
        the default grid) and the best-scoring one is returned.

    Returns
    -------
    (BoltzmannModel, TrainLog)
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 0 or len(data) == 0:
        raise ValueError("training data is empty")
    if data.shape[1:] != tuple(model.visible_dims):
        raise ShapeError(f"samples have shape {data.shape[1:]}, model expects {model.visible_dims}")
    if validation is None:
        return _train_once(model, data, cfg, cfg.learning_rate)
    best = None
    scores = {}
    for lr in cfg.learning_rate_grid or DEFAULT_LEARNING_RATE_GRID:
        fitted, log = _train_once(model, data, cfg, lr)
        scores[lr] = score = float(validation(fitted))
        if best is None or score > best[0]:
            best = (score, fitted, log)
    _, fitted, log = best
    log.validation_scores = scores
    return fitted, log


def exact_gradient(m, data, cap=DEFAULT_ENUMERATION_CAP):
    """Gradient of :func:`exact_log_likelihood` by exhaustive enumeration.

    Data term ``E_{H|V}[-dE]`` uses ``p(H|V)``; the model term sums
    ``p(V, H) * (-dE)`` over every joint configuration.
    """
    data, _ = _as_batch(data, m.visible_dims, "data")
    n = len(data)
    pos = m.statistics(data, m.cond_hidden(data))
    vs, hs, e = joint_energies(m, cap)
    p = np.exp(-e - logsumexp(-e))
    nv, nh = p.shape
    vrep = np.repeat(vs, nh, axis=0)
    hrep = np.tile(hs, (nv,) + (1,) * (hs.ndim - 1)) * p.reshape((-1,) + (1,) * (hs.ndim - 1))
    names = [k for k in m.params() if k != "B"]
    neg = m.statistics(vrep, hrep, names)
    neg["B"] = np.tensordot(p.sum(axis=1), vs, axes=1)
    return {name: pos[name] - n * neg[name] for name in pos}


def _rel_err(a, b):
    denom = np.maximum(np.abs(a), np.abs(b))
    return np.where(denom > 0, np.abs(a - b) / np.where(denom > 0, denom, 1.0), 0.0)


def gradient_check(m, data, step=1e-5, gradient_fn=exact_gradient):
    """Compare ``gradient_fn`` with central differences of the exact log-likelihood.

    Returns a list of ``(name, max_rel_err, max_abs_err)`` rows, one per parameter.
    """
    analytic = gradient_fn(m, data)
    params = m.params()
    rows = []
    for name, arr in params.items():
        fd = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + step
            up = exact_log_likelihood(m, data)
            arr[idx] = old - step
            down = exact_log_likelihood(m, data)
            arr[idx] = old
            fd[idx] = (up - down) / (2 * step)
        g = analytic[name]
        rows.append((name, float(_rel_err(g, fd).max()), float(np.abs(g - fd).max())))
    return rows
