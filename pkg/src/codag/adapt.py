"""Source-free adaptation of the DA model to the current target domain.

Starts from the previous generalization model, freezes the classifier head,
and updates only the feature extractor with an information-maximization
objective plus cross-entropy against self-supervised centroid pseudo-labels.
The adapted model then exports argmax pseudo-labels for the DG model.
"""

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .generalize import PseudoLabeledDataset
from .nnmodel import (
    HEAD_BLOCKS,
    ClassifierParams,
    Sgd,
    features,
    forward,
    gradient,
    log_softmax,
    softmax,
)


@dataclass(frozen=True)
class AdaptConfig:
    epochs: int = 60
    lr: float = 0.01
    batch_size: int = 64
    im_weight: float = 1.0
    pl_weight: float = 0.3  # weight of the centroid pseudo-label term
    pl_refresh_interval: int = 5  # epochs between centroid refreshes
    distance: str = "cosine"

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.im_weight < 0 or self.pl_weight < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.pl_refresh_interval < 1:
            raise ValueError("pl_refresh_interval must be at least 1")
        if self.distance != "cosine":
            raise ValueError(f"unsupported distance {self.distance!r}")


def im_loss(probs) -> float:
    """Mean per-sample entropy minus entropy of the mean prediction.

    Minimizing drives individual predictions confident while keeping the
    batch-level marginal diverse. Bounds: [-ln K, ln K].
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError("probs must be a nonempty (n, K) array")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ValueError("rows must be valid probability vectors")
    if not np.allclose(p.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("rows must sum to 1")
    h_cond = float(np.mean(_entropy(p)))
    h_marg = float(_entropy(p.mean(axis=0)[None, :])[0])
    return h_cond - h_marg


def _entropy(p: np.ndarray) -> np.ndarray:
    terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


def _cosine_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    an = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)
    bn = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-12)
    return 1.0 - an @ bn.T


def centroid_pseudo_labels(params: ClassifierParams, dataset) -> np.ndarray:
    """Two-round nearest-centroid labels over extractor features.

    Round one weights features by softmax responsibility to seed per-class
    centroids; round two recomputes centroids from the hard assignment
    (empty classes keep their seed centroid) and re-assigns. Cosine distance,
    ties to the lowest class index.
    """
    x = dataset.x if isinstance(dataset, (Dataset, PseudoLabeledDataset)) else np.asarray(dataset)
    if x.shape[0] == 0:
        raise ValueError("dataset must be nonempty")
    feats = features(params, x)
    probs = softmax(forward(params, x))
    k = probs.shape[1]

    weight_sums = probs.sum(axis=0)
    seed_centroids = (probs.T @ feats) / (weight_sums[:, None] + 1e-8)
    labels = np.argmin(_cosine_distances(feats, seed_centroids), axis=1)

    onehot = np.eye(k)[labels]
    counts = onehot.sum(axis=0)
    centroids = (onehot.T @ feats) / (counts[:, None] + 1e-8)
    empty = counts == 0
    centroids[empty] = seed_centroids[empty]
    return np.argmin(_cosine_distances(feats, centroids), axis=1)


def _im_pl_logit_loss(pl_labels: np.ndarray, im_weight: float, beta: float):
    """Information maximization plus pseudo-label cross-entropy on logits."""

    def loss_fn(logits):
        logp = log_softmax(logits)
        p = np.exp(logp)
        n, _ = p.shape

        rowdot = (p * logp).sum(axis=1)  # = -H(p_i)
        h_cond = float(-rowdot.mean())
        pbar = p.mean(axis=0)
        log_pbar = np.log(pbar)
        h_marg = float(-(pbar * log_pbar).sum())
        im = h_cond - h_marg
        cross = p @ log_pbar  # per-row sum_k p_ik log pbar_k
        d_im = (p / n) * (-logp + rowdot[:, None] - cross[:, None] + log_pbar[None, :])

        ce = float(-logp[np.arange(n), pl_labels].mean())
        d_ce = p.copy()
        d_ce[np.arange(n), pl_labels] -= 1.0
        d_ce /= n

        return im_weight * im + beta * ce, im_weight * d_im + beta * d_ce

    return loss_fn


def adapt_domain(dg_params: ClassifierParams, target, config: AdaptConfig,
                 rng: np.random.Generator, on_epoch=None) -> ClassifierParams:
    """Adapt on unlabeled target data; the head stays bit-identical."""
    x = target.x
    if x.shape[0] == 0:
        raise ValueError("target dataset is empty")
    params = dg_params.copy()
    if config.epochs == 0:
        return params
    opt = Sgd(params, config.lr, frozen=HEAD_BLOCKS)
    n = x.shape[0]
    pl = centroid_pseudo_labels(params, target)
    for epoch in range(config.epochs):
        if epoch > 0 and epoch % config.pl_refresh_interval == 0:
            pl = centroid_pseudo_labels(params, target)
        losses = []
        perm = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            loss_fn = _im_pl_logit_loss(pl[idx], config.im_weight, config.pl_weight)
            loss, grads = gradient(loss_fn, params, x[idx], freeze_head=True)
            opt.step(params, grads)
            losses.append(loss)
        if on_epoch is not None:
            on_epoch(epoch, params, float(np.mean(losses)))
    return params


def generate_pseudo_labels(da_params: ClassifierParams, target) -> PseudoLabeledDataset:
    """Argmax-of-softmax labels (ties to lowest index) with max-prob confidence."""
    probs = softmax(forward(da_params, target.x))
    labels = probs.argmax(axis=1)
    confidences = probs.max(axis=1)
    return PseudoLabeledDataset(
        target.x, labels, confidences, target.k, source_domain_id=target.domain_id
    )
