"""Evaluation tasks: hidden-feature 1-NN classification, completion, denoising."""
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ShapeError
from .models import model_for, sample_layer, to_vector_layer
from .training import train


def extract_features(m, x):
    """Hidden-layer probabilities of ``x`` as (batched) column-major vectors."""
    return to_vector_layer(m.cond_hidden(x), m.hidden_dims)


def knn_predict(train_feats, train_labels, queries, k=1, chunk=2048):
    """Majority label of the ``k`` Euclidean-nearest training features per query.

    Distance ties go to the lower training index; vote ties to the label of
    the nearest tied neighbour.
    """
    train_feats = np.atleast_2d(np.asarray(train_feats, dtype=np.float64))
    train_labels = np.asarray(train_labels)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if len(train_feats) == 0:
        raise ValueError("empty training set")
    if len(train_feats) != len(train_labels):
        raise ShapeError("features and labels differ in length")
    if queries.shape[1] != train_feats.shape[1]:
        raise ShapeError(f"query length {queries.shape[1]} != feature length {train_feats.shape[1]}")
    k = min(k, len(train_feats))
    out = np.empty(len(queries), dtype=train_labels.dtype)
    for lo in range(0, len(queries), chunk):
        dist = cdist(queries[lo:lo + chunk], train_feats, "sqeuclidean")
        if k == 1:
            out[lo:lo + chunk] = train_labels[np.argmin(dist, axis=1)]
            continue
        nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
        for row, idx in enumerate(nearest):
            labels = list(train_labels[idx])
            counts = {lab: labels.count(lab) for lab in labels}
            top = max(counts.values())
            out[lo + row] = next(lab for lab in labels if counts[lab] == top)
    return out


def knn_classify(train_feats, train_labels, query_feat, k=1):
    return knn_predict(train_feats, train_labels, np.asarray(query_feat)[None], k)[0]


def classification_error(predicted, labels):
    return float(np.mean(np.asarray(predicted) != np.asarray(labels)))


def knn_validation_score(train_x, train_y, val_x, val_y):
    """``model -> 1-NN accuracy`` on a validation split, for learning-rate selection."""

    def score(m):
        pred = knn_predict(extract_features(m, train_x), train_y, extract_features(m, val_x))
        return 1.0 - classification_error(pred, val_y)

    return score


@dataclass
class CompletionTask:
    mask: np.ndarray  # 1 = observed
    gibbs_rounds: int = 100
    readout: str = "threshold"

    def __post_init__(self):
        self.mask = np.asarray(self.mask).astype(bool)
        if self.mask.all():
            raise ValueError("mask observes every pixel; nothing to complete")
        if not self.mask.any():
            raise ValueError("mask observes no pixel")
        if self.gibbs_rounds < 1:
            raise ValueError("gibbs_rounds must be >= 1")
        if self.readout not in ("threshold", "sample"):
            raise ValueError("readout must be 'threshold' or 'sample'")


def half_mask(dims, given):
    """Observation mask exposing one half of a 2-D image (``left/right/top/bottom``)."""
    rows, cols = dims
    mask = np.zeros((rows, cols), dtype=bool)
    if given == "left":
        mask[:, : cols // 2] = True
    elif given == "right":
        mask[:, cols // 2:] = True
    elif given == "top":
        mask[: rows // 2] = True
    elif given == "bottom":
        mask[rows // 2:] = True
    else:
        raise ValueError(f"unknown half {given!r}")
    return mask


def complete(m, x_observed, task, rng):
    """Fill in the unobserved pixels by clamped Gibbs sampling.

    Unobserved pixels start as fair coin flips.  Each round samples
    ``H ~ p(H|V)`` then ``V ~ p(V|H)`` and re-clamps the observed pixels.
    """
    x = np.asarray(x_observed, dtype=np.float64)
    if task.mask.shape != tuple(m.visible_dims):
        raise ShapeError(f"mask {task.mask.shape} does not match visible dims {m.visible_dims}")
    mask = np.broadcast_to(task.mask, x.shape)
    v = np.where(mask, x, sample_layer(np.full(x.shape, 0.5), rng))
    for _ in range(task.gibbs_rounds):
        h = sample_layer(m.cond_hidden(v), rng)
        pv = m.cond_visible(h)
        v = np.where(mask, x, sample_layer(pv, rng))
    if task.readout == "sample":
        return v
    return np.where(mask, x, (pv >= 0.5).astype(np.float64))


def add_salt_pepper(x, p, rng):
    """Reset ``floor(p * size)`` distinct pixels per image to a fair 0/1 coin.

    A leading batch axis is allowed when ``x.ndim > 1``; pass single images
    through ``x[None]`` if they are 1-D.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"noise fraction {p} outside [0, 1]")
    x = np.array(x, dtype=np.float64)
    single = x.ndim <= 2
    xb = x[None] if single else x
    flat = xb.reshape(len(xb), -1)
    k = int(math.floor(p * flat.shape[1]))
    for row in flat:
        pos = rng.choice(flat.shape[1], size=k, replace=False)
        row[pos] = rng.integers(0, 2, size=k)
    out = flat.reshape(xb.shape)
    return out[0] if single else out


def denoise(m, x_noisy, rounds=5, rng=None):
    """Unclamped Gibbs passes from ``x_noisy``; thresholded final ``p(V|H)``."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    v = np.asarray(x_noisy, dtype=np.float64)
    for _ in range(rounds):
        h = sample_layer(m.cond_hidden(v), rng)
        pv = m.cond_visible(h)
        v = sample_layer(pv, rng)
    return (pv >= 0.5).astype(np.float64)


def psnr(reference, candidate, max_value=1.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    reference = np.asarray(reference, dtype=np.float64)
    candidate = np.asarray(candidate, dtype=np.float64)
    if reference.shape != candidate.shape:
        raise ShapeError(f"shape mismatch {reference.shape} vs {candidate.shape}")
    mse = float(np.mean((reference - candidate) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(max_value**2 / mse)


def mean_psnr(values):
    """Mean of the finite per-image PSNRs and the count of exact reconstructions."""
    values = np.asarray(values, dtype=np.float64)
    finite = values[np.isfinite(values)]
    return (float(finite.mean()) if finite.size else math.inf), int(np.sum(~np.isfinite(values)))


def rank_sweep(train_x, train_y, test_x, test_y, hidden_dims, ranks, cfg, scale=0.01, seed=0):
    """1-NN test error of an MPO-RBM per interior rank value.

    Every interior rank of the MPO is set to the swept value; all models share
    the initialization seed.  Returns ``[(rank, error), ...]``.
    """
    visible_dims = tuple(train_x.shape[1:])
    d = len(visible_dims)
    rows = []
    for r in ranks:
        rank_vec = (1,) + (int(r),) * (d - 1) + (1,)
        m0 = model_for("mporbm", visible_dims, hidden_dims, rank_vec, scale=scale, seed=seed)
        m, _ = train(m0, train_x, cfg)
        pred = knn_predict(extract_features(m, train_x), train_y, extract_features(m, test_x))
        rows.append((int(r), classification_error(pred, test_y)))
    return rows
