"""Appearance embedding: a single affine map over detector-supplied raw
feature vectors, L2-normalized, trained with the triplet hinge loss.

For one triplet (anchor a, positive p, negative n) the loss term is

    [ ||f(a) - f(p)||^2 - ||f(a) - f(n)||^2 + margin ]_+

summed over the batch. Gradients flow exactly through the normalization
(Jacobian of x/||x||), not via any approximation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, DegenerateEmbeddingError, NumericError

# Outputs with norm below this cannot be normalized meaningfully.
_MIN_NORM = 1e-12


@dataclass
class EmbeddingModel:
    """Affine map W x + b followed by L2 normalization."""

    W: np.ndarray
    b: np.ndarray
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2:
            raise ValueError("W must be a 2-D matrix")
        if self.b.shape != (self.W.shape[0],):
            raise ValueError("b must match the output dimension of W")
        if self.W.shape[0] < 2:
            raise ValueError("embedding dimension must be at least 2")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValueError("model weights must be finite")

    @property
    def embed_dim(self) -> int:
        return int(self.W.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.W.shape[1])

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(self.W.copy(), self.b.copy(), dict(self.metadata))


@dataclass(frozen=True)
class TripletTrainConfig:
    margin: float = 0.2
    learning_rate: float = 0.05
    batch_size: int = 128
    epochs: int = 20
    seed: int = 0
    embed_dim: int = 256

    def __post_init__(self) -> None:
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


def initialize_model(input_dim: int, embed_dim: int, seed: int) -> EmbeddingModel:
    """Scaled uniform init: W ~ U[-1/sqrt(D), 1/sqrt(D)], b = 0."""
    rng = np.random.default_rng(seed)
    limit = 1.0 / np.sqrt(input_dim)
    W = rng.uniform(-limit, limit, size=(embed_dim, input_dim))
    return EmbeddingModel(W=W, b=np.zeros(embed_dim), metadata={"seed": seed})


def embed(model: EmbeddingModel, raw_feature: Sequence[float]) -> np.ndarray:
    """Map one raw feature vector to a unit-norm embedding."""
    x = np.asarray(raw_feature, dtype=np.float64)
    if x.shape != (model.input_dim,):
        raise DataError(
            f"raw feature has dimension {x.shape}, model expects ({model.input_dim},)"
        )
    y = model.W @ x + model.b
    norm = float(np.linalg.norm(y))
    if norm < _MIN_NORM:
        raise DegenerateEmbeddingError(f"embedding norm {norm:.3e} below {_MIN_NORM:.0e}")
    return y / norm


def embed_batch(model: EmbeddingModel, X: np.ndarray) -> np.ndarray:
    """Embed rows of X, shape (N, D) -> (N, d)."""
    X = np.asarray(X, dtype=np.float64)
    Y = X @ model.W.T + model.b
    norms = np.linalg.norm(Y, axis=1)
    if np.any(norms < _MIN_NORM):
        raise DegenerateEmbeddingError("batch contains an embedding with near-zero norm")
    return Y / norms[:, None]


def triplet_loss(
    model: EmbeddingModel,
    anchors: np.ndarray,
    positives: np.ndarray,
    negatives: np.ndarray,
    margin: float,
) -> float:
    """Total hinge loss over a batch of raw-feature triplets."""
    fa = embed_batch(model, anchors)
    fp = embed_batch(model, positives)
    fn = embed_batch(model, negatives)
    d_pos = ((fa - fp) ** 2).sum(axis=1)
    d_neg = ((fa - fn) ** 2).sum(axis=1)
    return float(np.clip(d_pos - d_neg + margin, 0.0, None).sum())


def _normalize_rows_with_cache(Y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(Y, axis=1)
    if np.any(norms < _MIN_NORM):
        raise DegenerateEmbeddingError("batch contains an embedding with near-zero norm")
    return Y / norms[:, None], norms


def _backprop_normalize(grad_f: np.ndarray, f: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # Jacobian of y/||y||: (I - f f^T) / ||y|| applied row-wise.
    return (grad_f - (grad_f * f).sum(axis=1, keepdims=True) * f) / norms[:, None]


def triplet_loss_and_grads(
    model: EmbeddingModel,
    anchors: np.ndarray,
    positives: np.ndarray,
    negatives: np.ndarray,
    margin: float,
) -> Tuple[float, np.ndarray, np.ndarray]:
    """Loss plus exact gradients wrt W and b.

    Only triplets with a strictly positive hinge contribute gradient.
    """
    A = np.asarray(anchors, dtype=np.float64)
    P = np.asarray(positives, dtype=np.float64)
    N = np.asarray(negatives, dtype=np.float64)
    fa, na = _normalize_rows_with_cache(A @ model.W.T + model.b)
    fp, np_ = _normalize_rows_with_cache(P @ model.W.T + model.b)
    fn, nn = _normalize_rows_with_cache(N @ model.W.T + model.b)

    d_pos = ((fa - fp) ** 2).sum(axis=1)
    d_neg = ((fa - fn) ** 2).sum(axis=1)
    hinge = d_pos - d_neg + margin
    active = hinge > 0.0
    loss = float(np.clip(hinge, 0.0, None).sum())
    if not np.any(active):
        return loss, np.zeros_like(model.W), np.zeros_like(model.b)

    mask = active[:, None].astype(np.float64)
    grad_fa = 2.0 * (fn - fp) * mask
    grad_fp = -2.0 * (fa - fp) * mask
    grad_fn = 2.0 * (fa - fn) * mask

    grad_ya = _backprop_normalize(grad_fa, fa, na)
    grad_yp = _backprop_normalize(grad_fp, fp, np_)
    grad_yn = _backprop_normalize(grad_fn, fn, nn)

    grad_W = grad_ya.T @ A + grad_yp.T @ P + grad_yn.T @ N
    grad_b = grad_ya.sum(axis=0) + grad_yp.sum(axis=0) + grad_yn.sum(axis=0)
    return loss, grad_W, grad_b


def triplet_accuracy(
    model: EmbeddingModel, anchors: np.ndarray, positives: np.ndarray, negatives: np.ndarray
) -> float:
    """Fraction of triplets with d(anchor, positive) < d(anchor, negative)."""
    fa = embed_batch(model, anchors)
    fp = embed_batch(model, positives)
    fn = embed_batch(model, negatives)
    d_pos = ((fa - fp) ** 2).sum(axis=1)
    d_neg = ((fa - fn) ** 2).sum(axis=1)
    return float(np.mean(d_pos < d_neg))


@dataclass
class EmbedTrainLog:
    epochs: List[int] = field(default_factory=list)
    train_loss: List[float] = field(default_factory=list)
    val_accuracy: List[float] = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = float("nan")

    def rows(self) -> List[Tuple[int, float, float]]:
        return list(zip(self.epochs, self.train_loss, self.val_accuracy))


def train_embedding(
    train_triplets: Tuple[np.ndarray, np.ndarray, np.ndarray],
    val_triplets: Tuple[np.ndarray, np.ndarray, np.ndarray],
    config: TripletTrainConfig = TripletTrainConfig(),
) -> Tuple[EmbeddingModel, EmbedTrainLog]:
    """Mini-batch SGD on the triplet loss; single-threaded and seed-deterministic.

    Returns the model snapshot with the best validation triplet accuracy.
    Triplet tensors are (anchors, positives, negatives), each (N, D).
    """
    A, P, N = (np.asarray(t, dtype=np.float64) for t in train_triplets)
    if not (A.shape == P.shape == N.shape) or A.ndim != 2 or A.shape[0] == 0:
        raise DataError("triplet arrays must be non-empty and of equal (N, D) shape")
    model = initialize_model(A.shape[1], config.embed_dim, config.seed)
    log = EmbedTrainLog()
    best = model.copy()
    best_acc = -1.0
    rng = np.random.default_rng(config.seed + 1)

    for epoch in range(config.epochs):
        order = rng.permutation(A.shape[0])
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, grad_W, grad_b = triplet_loss_and_grads(
                model, A[idx], P[idx], N[idx], config.margin
            )
            if not np.isfinite(loss):
                raise NumericError(f"embedding training diverged at epoch {epoch}")
            scale = config.learning_rate / len(idx)
            model.W -= scale * grad_W
            model.b -= scale * grad_b
            epoch_loss += loss
        val_acc = triplet_accuracy(model, *val_triplets)
        log.epochs.append(epoch)
        log.train_loss.append(epoch_loss / A.shape[0])
        log.val_accuracy.append(val_acc)
        if val_acc > best_acc:
            best_acc = val_acc
            best = model.copy()
            log.best_epoch = epoch

    if config.epochs == 0:
        best = model
        best_acc = triplet_accuracy(model, *val_triplets)
    log.best_val_accuracy = best_acc
    best.metadata.update(
        {
            "margin": config.margin,
            "learning_rate": config.learning_rate,
            "batch_size": config.batch_size,
            "epochs": config.epochs,
            "seed": config.seed,
            "best_val_accuracy": best_acc,
        }
    )
    return best, log
