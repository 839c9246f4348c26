"""Single-head linear softmax classifier that grows with the label space."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, TrainingError, UsageError
from .numeric import AdamState, adam_step


@dataclass
class ClassifierConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-2
    warm_start: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("classifier epochs and batch_size must be positive")


class LinearSoftmaxClassifier:
    """``softmax(W z + b)`` over an ordered list of global class ids."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, class_ids):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.class_ids = [int(c) for c in class_ids]
        if self.weight.ndim != 2 or self.weight.shape[0] != len(self.class_ids):
            raise ShapeError(f"weight {self.weight.shape} vs {len(self.class_ids)} class ids")
        if self.bias.shape != (len(self.class_ids),):
            raise ShapeError(f"bias {self.bias.shape} vs {len(self.class_ids)} class ids")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise UsageError("class ids must be unique")

    @classmethod
    def empty(cls, input_dim: int) -> "LinearSoftmaxClassifier":
        return cls(np.zeros((0, input_dim)), np.zeros(0), [])

    @property
    def input_dim(self) -> int:
        return self.weight.shape[1]

    def copy(self) -> "LinearSoftmaxClassifier":
        return LinearSoftmaxClassifier(self.weight.copy(), self.bias.copy(), list(self.class_ids))

    def logits(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.input_dim:
            raise ShapeError(f"expected inputs with {self.input_dim} columns, got {z.shape}")
        return z @ self.weight.T + self.bias

    def probabilities(self, z: np.ndarray) -> np.ndarray:
        return softmax(self.logits(z))

    def predict(self, z: np.ndarray) -> np.ndarray:
        return predict(self, z)[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def predict(classifier: LinearSoftmaxClassifier, latents: np.ndarray):
    """Global class ids and probability rows; task identity is never an input."""
    if not classifier.class_ids:
        raise UsageError("classifier has no classes")
    probs = classifier.probabilities(latents)
    ids = np.asarray(classifier.class_ids, dtype=np.int64)
    return ids[np.argmax(probs, axis=1)], probs


def extend_classes(classifier: LinearSoftmaxClassifier, new_class_ids,
                   rng: np.random.Generator) -> LinearSoftmaxClassifier:
    """Append Glorot-uniform rows (zero bias) for new classes; old rows are copied bitwise."""
    new = [int(c) for c in new_class_ids]
    dup = set(new) & set(classifier.class_ids)
    if dup or len(set(new)) != len(new):
        raise UsageError(f"classes already present or repeated: {sorted(dup) or new}")
    if not new:
        return classifier.copy()
    fan_in, fan_out = classifier.input_dim, len(classifier.class_ids) + len(new)
    s = np.sqrt(6.0 / (fan_in + fan_out))
    rows = rng.uniform(-s, s, size=(len(new), fan_in))
    return LinearSoftmaxClassifier(np.vstack([classifier.weight, rows]),
                                   np.concatenate([classifier.bias, np.zeros(len(new))]),
                                   classifier.class_ids + new)


def cross_entropy(classifier: LinearSoftmaxClassifier, z: np.ndarray, targets: np.ndarray):
    """Mean cross-entropy and gradients ``(dW, db)``; ``targets`` are row positions."""
    logits = classifier.logits(z)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    B = z.shape[0]
    loss = -log_probs[np.arange(B), targets].mean()
    d = np.exp(log_probs)
    d[np.arange(B), targets] -= 1.0
    d /= B
    return float(loss), d.T @ z, d.sum(axis=0)


def fit_classifier(classifier: LinearSoftmaxClassifier, latents: np.ndarray, labels: np.ndarray,
                   config: ClassifierConfig, rng: np.random.Generator) -> LinearSoftmaxClassifier:
    """Minimise cross-entropy with Adam; returns a new classifier, the input is left as is."""
    labels = np.asarray(labels, dtype=np.int64)
    pos = {c: i for i, c in enumerate(classifier.class_ids)}
    unknown = sorted(set(labels.tolist()) - set(pos))
    if unknown:
        raise TrainingError(f"labels {unknown} are not among the classifier's classes")
    counts = np.bincount([pos[c] for c in labels.tolist()], minlength=len(pos))
    if (counts == 0).any():
        missing = classifier.class_ids[int(np.flatnonzero(counts == 0)[0])]
        raise TrainingError(f"class {missing} has no training samples")
    clf = classifier.copy()
    targets = np.array([pos[c] for c in labels.tolist()], dtype=np.int64)
    params = [clf.weight, clf.bias]
    adam = AdamState.for_params(params, learning_rate=config.learning_rate)
    n = latents.shape[0]
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            sel = order[start:start + config.batch_size]
            _, dW, db = cross_entropy(clf, latents[sel], targets[sel])
            adam_step(adam, params, [dW, db])
    return clf
