"""Learned link similarity: a logistic regression over the pairwise
location/geometry/appearance features, gated multiplicatively by the
semantic feature.

``link_score = f_sem * sigmoid(w . standardize(x) + bias)``

The classifier never sees ``f_sem``; it acts as an outer gate. Feature
standardization statistics are computed on the training pairs and frozen
into the model so saved and in-memory models score identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, ModelInputError, NumericError
from .linkfeat import PairFeatureMatrices, PairFeatures

N_FEATURES_APPEARANCE = 5
N_FEATURES_NO_APPEARANCE = 4

# Standard deviations below this are treated as constant features and
# replaced by 1.0 so standardization stays well-defined.
_MIN_STD = 1e-12


@dataclass
class LinkScorerModel:
    """Logistic-regression weights plus frozen standardization statistics."""

    weights: np.ndarray
    bias: float
    feature_means: np.ndarray
    feature_stds: np.ndarray
    uses_appearance: bool
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.feature_means = np.asarray(self.feature_means, dtype=np.float64)
        self.feature_stds = np.asarray(self.feature_stds, dtype=np.float64)
        expected = N_FEATURES_APPEARANCE if self.uses_appearance else N_FEATURES_NO_APPEARANCE
        if self.weights.size != expected:
            raise ValueError(f"expected {expected} weights, got {self.weights.size}")
        if not (self.feature_means.size == self.feature_stds.size == expected):
            raise ValueError("standardization statistics must match weight length")
        if np.any(self.feature_stds <= 0):
            raise ValueError("feature stds must be strictly positive")
        if not np.all(np.isfinite(self.weights)) or not np.isfinite(self.bias):
            raise ValueError("weights must be finite")

    @property
    def n_features(self) -> int:
        return int(self.weights.size)

    @staticmethod
    def untrained(uses_appearance: bool, metadata: Optional[Dict] = None) -> "LinkScorerModel":
        n = N_FEATURES_APPEARANCE if uses_appearance else N_FEATURES_NO_APPEARANCE
        return LinkScorerModel(
            weights=np.zeros(n),
            bias=0.0,
            feature_means=np.zeros(n),
            feature_stds=np.ones(n),
            uses_appearance=uses_appearance,
            metadata=metadata or {},
        )


@dataclass(frozen=True)
class LinkScorerTrainConfig:
    learning_rate: float = 0.1
    epochs: int = 500
    l2_lambda: float = 1e-4
    seed: int = 0
    val_fraction: float = 0.2

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be non-negative")
        if not (0.0 < self.val_fraction < 1.0):
            raise ValueError("val_fraction must be in (0, 1)")


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def scorer_probability(model: LinkScorerModel, pf: PairFeatures) -> float:
    """Probability that the two detections are the same object instance."""
    if model.uses_appearance and pf.d_app is None:
        raise ModelInputError("model uses appearance but pair has no d_app")
    if not model.uses_appearance and pf.d_app is not None:
        raise ModelInputError("model does not use appearance but pair carries d_app")
    x = pf.x_vector(model.uses_appearance)
    z = float(model.weights @ ((x - model.feature_means) / model.feature_stds) + model.bias)
    return float(sigmoid(np.array([z]))[0])


def link_score(model: LinkScorerModel, pf: PairFeatures) -> float:
    """Semantic-gated link score: ``f_sem * P(same instance)``."""
    if pf.f_sem == 0.0:
        return 0.0
    return pf.f_sem * scorer_probability(model, pf)


def probability_matrix(model: LinkScorerModel, feats: PairFeatureMatrices) -> np.ndarray:
    """Vectorized classifier probabilities over all pairs of two frames."""
    x = feats.x_stack(model.uses_appearance)
    z = ((x - model.feature_means) / model.feature_stds) @ model.weights + model.bias
    return sigmoid(z)


def link_score_matrix(model: LinkScorerModel, feats: PairFeatureMatrices) -> np.ndarray:
    if feats.f_sem.size == 0:
        return feats.f_sem.copy()
    return feats.f_sem * probability_matrix(model, feats)


def logistic_loss_and_grad(
    w: np.ndarray, bias: float, X: np.ndarray, y: np.ndarray, l2_lambda: float
) -> Tuple[float, np.ndarray, float]:
    """Mean log-loss with L2 penalty on ``w`` and its exact gradient.

    Uses the softplus form ``loss_i = softplus(z_i) - y_i z_i`` which is
    stable for large |z|.
    """
    z = X @ w + bias
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    loss = float(np.mean(softplus - y * z) + 0.5 * l2_lambda * float(w @ w))
    residual = sigmoid(z) - y
    grad_w = X.T @ residual / len(y) + l2_lambda * w
    grad_b = float(np.mean(residual))
    return loss, grad_w, grad_b


def roc_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    """Rank-based AUC with tie-aware average ranks."""
    labels = np.asarray(labels, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC undefined: need both labels present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum_pos = float(ranks[labels == 1].sum())
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass
class LinkScorerTrainLog:
    epochs: List[int] = field(default_factory=list)
    train_loss: List[float] = field(default_factory=list)
    val_auc: float = float("nan")
    val_accuracy: float = float("nan")


def _pairs_to_arrays(pairs: Sequence, uses_appearance: bool) -> Tuple[np.ndarray, np.ndarray]:
    X = np.array([p.features.x_vector(uses_appearance) for p in pairs], dtype=np.float64)
    y = np.array([p.label for p in pairs], dtype=np.float64)
    return X, y


def train_link_scorer(
    pairs: Sequence,
    config: LinkScorerTrainConfig = LinkScorerTrainConfig(),
    uses_appearance: Optional[bool] = None,
    val_pairs: Optional[Sequence] = None,
) -> Tuple[LinkScorerModel, LinkScorerTrainLog]:
    """Full-batch gradient descent on standardized features.

    ``uses_appearance`` defaults to whatever the pairs carry. When
    ``val_pairs`` is None a validation split is held out of ``pairs``
    (deterministic given the seed).
    """
    pairs = list(pairs)
    if not pairs:
        raise DataError("no training pairs")
    if uses_appearance is None:
        uses_appearance = pairs[0].features.d_app is not None
    labels = {p.label for p in pairs}
    if labels != {0, 1}:
        raise DataError(f"training pairs must contain both labels, got {sorted(labels)}")

    rng = np.random.default_rng(config.seed)
    if val_pairs is None:
        index = rng.permutation(len(pairs))
        n_val = max(1, int(round(len(pairs) * config.val_fraction)))
        if n_val >= len(pairs):
            raise DataError("not enough pairs to hold out a validation split")
        val_idx = set(index[:n_val].tolist())
        train_pairs = [pairs[i] for i in range(len(pairs)) if i not in val_idx]
        val_list = [pairs[i] for i in sorted(val_idx)]
    else:
        train_pairs = pairs
        val_list = list(val_pairs)

    X, y = _pairs_to_arrays(train_pairs, uses_appearance)
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    stds = np.where(stds < _MIN_STD, 1.0, stds)
    Xs = (X - means) / stds

    w = np.zeros(X.shape[1])
    b = 0.0
    log = LinkScorerTrainLog()
    for epoch in range(config.epochs):
        loss, grad_w, grad_b = logistic_loss_and_grad(w, b, Xs, y, config.l2_lambda)
        if not np.isfinite(loss):
            raise NumericError(f"link-scorer training diverged at epoch {epoch}")
        w -= config.learning_rate * grad_w
        b -= config.learning_rate * grad_b
        log.epochs.append(epoch)
        log.train_loss.append(loss)

    model = LinkScorerModel(
        weights=w,
        bias=b,
        feature_means=means,
        feature_stds=stds,
        uses_appearance=uses_appearance,
        metadata={
            "learning_rate": config.learning_rate,
            "epochs": config.epochs,
            "l2_lambda": config.l2_lambda,
            "seed": config.seed,
            "n_train_pairs": len(train_pairs),
        },
    )
    if val_list:
        Xv, yv = _pairs_to_arrays(val_list, uses_appearance)
        pv = sigmoid(((Xv - means) / stds) @ w + b)
        if len(set(yv.tolist())) == 2:
            log.val_auc = roc_auc(yv, pv)
        log.val_accuracy = float(np.mean((pv >= 0.5) == (yv == 1.0)))
    return model, log
