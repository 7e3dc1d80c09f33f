"""Sentence pooling, softmax relation classifier and the training objective."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .nn import ParamStore
from .tensor import Tensor


def sentence_pool(hf: Tensor, mask: np.ndarray, mode: str = "max") -> Tensor:
    """Merge token features ``[..., t, d]`` into ``[..., d]`` over unmasked tokens."""
    if mode == "max":
        return T.max_pool(hf, mask)
    if mode == "mean":
        return T.masked_mean(hf, mask)
    raise ConfigError(f"unknown pooling {mode!r}")


class Classifier:
    """``P(y|S) = softmax(W H + b)`` with ``W`` of shape ``[Y, d]``."""

    def __init__(self, store: ParamStore, n_labels: int, d_in: int = 100, prefix: str = "classifier"):
        self.weight = store.uniform(f"{prefix}.weight", (n_labels, d_in), fan_in=d_in)
        self.bias = store.uniform(f"{prefix}.bias", (n_labels,), fan_in=d_in)
        self.n_labels = n_labels

    def logits(self, pooled: Tensor) -> Tensor:
        x = pooled if pooled.ndim == 2 else pooled.reshape(1, -1)
        out = x @ T.transpose(self.weight) + self.bias
        return out if pooled.ndim == 2 else out.reshape(self.n_labels)

    def __call__(self, pooled: Tensor) -> Tensor:
        return T.softmax(self.logits(pooled), axis=-1)


def classify(pooled: Tensor, classifier: Classifier) -> Tensor:
    return classifier(pooled)


def predict(probs: np.ndarray) -> np.ndarray:
    """Arg-max label ids; ``np.argmax`` already returns the lowest index on ties."""
    return np.argmax(np.asarray(probs), axis=-1)


def nll_from_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Batch-mean negative log-likelihood, computed through log-softmax."""
    labels = np.asarray(labels, dtype=np.int64)
    logp = T.log_softmax(logits, axis=-1)
    picked = logp[np.arange(len(labels)), labels]
    return T.neg(T.mean(picked))


def loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Batch-mean NLL of given probability rows."""
    labels = np.asarray(labels, dtype=np.int64)
    picked = T.log(probs[np.arange(len(labels)), labels])
    return T.neg(T.mean(picked))
