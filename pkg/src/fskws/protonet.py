"""Prototypical episode math: prototypes, distances, the query
distribution, loss, prediction and accuracy.

Every function here is differentiable through `tensor` so the episode loss
backpropagates into the embedding network. Distances are squared Euclidean
(not square-rooted): smooth at zero and the convention the episodic
formulation assumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .features import FeatureMatrix
from .tensor import Tensor

ROLE_CORE = "CORE"
ROLE_UNKNOWN = "UNKNOWN"
ROLE_SILENCE = "SILENCE"


class EmptyCategory(ValueError):
    """A category has no support embeddings to average."""


class DimensionMismatch(ValueError):
    pass


class LabelOutOfRange(IndexError):
    pass


@dataclass
class EpisodeItem:
    path: str
    label: int
    role: str
    keyword: str | None = None
    features: FeatureMatrix | None = None


@dataclass
class Episode:
    """One N-way K-shot task: support and query items plus category metadata.

    `category_roles[c]` says whether label c is a core keyword, the pooled
    unknown class or silence; optional classes occupy uniformly random
    positions in the ordering.
    """

    support: list[EpisodeItem]
    query: list[EpisodeItem]
    n_core: int
    category_roles: list[str]
    category_names: list[str] = field(default_factory=list)

    @property
    def way_total(self) -> int:
        return len(self.category_roles)

    def core_query_mask(self) -> np.ndarray:
        return np.array([self.category_roles[it.label] == ROLE_CORE for it in self.query])

    def support_labels(self) -> np.ndarray:
        return np.array([it.label for it in self.support], dtype=np.int64)

    def query_labels(self) -> np.ndarray:
        return np.array([it.label for it in self.query], dtype=np.int64)


def compute_prototypes(support_embeddings: Tensor, labels, n_classes: int) -> Tensor:
    """Per-class mean of support embeddings, rows ordered by class index."""
    labels = np.asarray(labels, dtype=np.int64)
    if support_embeddings.data.ndim != 2 or labels.shape != (support_embeddings.shape[0],):
        raise DimensionMismatch(
            f"embeddings {support_embeddings.shape} with labels {labels.shape}")
    counts = np.bincount(labels, minlength=n_classes)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelOutOfRange(f"support label outside [0, {n_classes})")
    if np.any(counts == 0):
        raise EmptyCategory(f"classes without support: {np.flatnonzero(counts == 0).tolist()}")
    averager = np.zeros((n_classes, labels.size), dtype=support_embeddings.dtype)
    averager[labels, np.arange(labels.size)] = 1.0
    averager /= counts[:, None]
    return T.matmul(Tensor(averager), support_embeddings)


def squared_euclidean(query_embeddings: Tensor, prototypes: Tensor) -> Tensor:
    """dist[m, c] = sum_d (q[m,d] - p[c,d])^2, shape (M, C)."""
    if query_embeddings.shape[-1] != prototypes.shape[-1]:
        raise DimensionMismatch(
            f"embedding dims {query_embeddings.shape} vs {prototypes.shape}")
    return T.pairwise_sqdist(query_embeddings, prototypes)


def episode_log_probs(distances: Tensor) -> Tensor:
    """log P[m, c] = -d[m,c] - logsumexp_n(-d[m,n]), max-subtracted."""
    if not np.all(np.isfinite(distances.data)):
        raise FloatingPointError("non-finite distances")
    return T.log_softmax(T.neg(distances))


def episode_loss(log_probs: Tensor, query_labels) -> Tensor:
    """Mean negative log-likelihood of the true category of each query."""
    labels = np.asarray(query_labels, dtype=np.int64)
    n_classes = log_probs.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelOutOfRange(f"query label outside [0, {n_classes})")
    return T.nll_mean(log_probs, labels)


def classify(log_probs: Tensor | np.ndarray) -> np.ndarray:
    """Argmax category per query row; ties go to the lowest index."""
    data = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    return np.argmax(data, axis=1)


def episode_accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise DimensionMismatch(f"{predictions.shape} vs {labels.shape}")
    return float(np.mean(predictions == labels))
