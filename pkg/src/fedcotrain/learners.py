"""Black-box classifier contract and four built-in heterogeneous learners.

Participants may bring any classifier that honors the contract: train on a
labeled dataset, then predict categories from the participant's own label
space, deterministically, for arbitrary instances. The built-ins cover four
model families (multinomial logistic regression, k-nearest neighbors,
Gaussian naive Bayes, one-hidden-layer network) so a federation can exercise
model, training, and task heterogeneity without external dependencies.

All score-based predictions break ties toward the lowest category id, and a
classifier trained with a given seed is a pure function: repeated runs are
byte-identical.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, replace

import numpy as np

from .aggregation import PseudolabelBundle
from .domain import DomainError, LabeledDataset, LabelSpace, UnlabeledDataset
from .seeding import derive_seed


class LearnerError(ValueError):
    """Contract violation: bad config, empty data, untrained use."""


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared across learner kinds; unused fields are ignored.

    ``batch_size`` applies to local training; update training caps its
    minibatch at ``update_batch_size`` (or the combined dataset size if
    smaller).
    """

    seed: int = 0
    learning_rate: float = 0.5
    epochs: int = 100
    batch_size: int = 50
    update_batch_size: int = 1000
    k: int = 5
    smoothing: float = 1e-9
    hidden_width: int = 32

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise LearnerError("learning_rate must be > 0")
        for name in ("epochs", "batch_size", "update_batch_size", "k", "hidden_width"):
            if getattr(self, name) < 1:
                raise LearnerError(f"{name} must be >= 1")
        if self.smoothing <= 0:
            raise LearnerError("smoothing must be > 0")


class Classifier(ABC):
    """Contract: closed-world, deterministic prediction after training."""

    kind: str = "abstract"

    def __init__(self, label_space: LabelSpace, config: TrainConfig):
        self.label_space = label_space
        self.config = config
        # Ascending class order makes argmax tie-breaking resolve to the
        # lowest category id.
        self.classes = np.array(sorted(label_space.categories), dtype=np.int64)
        self.trained = False

    def train(self, dataset: LabeledDataset) -> "Classifier":
        if len(dataset) == 0:
            raise LearnerError("cannot train on an empty dataset")
        outside = np.setdiff1d(dataset.labels, self.classes)
        if len(outside):
            raise LearnerError(
                f"training labels {outside.tolist()} outside the classifier's label space"
            )
        self._fit(dataset.features, dataset.labels)
        self.trained = True
        return self

    def predict_batch(self, data: UnlabeledDataset | np.ndarray) -> np.ndarray:
        if not self.trained:
            raise LearnerError("classifier is untrained")
        X = data.features if isinstance(data, UnlabeledDataset) else np.asarray(data, dtype=np.float64)
        if X.ndim != 2:
            raise LearnerError("predict_batch expects a 2-D feature matrix")
        scores = self._scores(X)
        return self.classes[np.argmax(scores, axis=1)]

    def predict(self, instance) -> int:
        return int(self.predict_batch(np.asarray(instance, dtype=np.float64)[None, :])[0])

    @abstractmethod
    def _fit(self, X: np.ndarray, y: np.ndarray) -> None: ...

    @abstractmethod
    def _scores(self, X: np.ndarray) -> np.ndarray:
        """Per-class scores, columns ordered by ascending category id."""


def _standardizer(X: np.ndarray):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return mean, std


def _one_hot(y_idx: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(y_idx), n_classes))
    out[np.arange(len(y_idx)), y_idx] = 1.0
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _minibatches(rng: np.random.Generator, n: int, batch_size: int):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


class LogisticRegressionClassifier(Classifier):
    """Multinomial logistic regression via minibatch gradient descent."""

    kind = "logreg"

    def _fit(self, X, y):
        rng = np.random.default_rng(self.config.seed)
        self.mean, self.std = _standardizer(X)
        Z = (X - self.mean) / self.std
        n, d = Z.shape
        k = len(self.classes)
        y_idx = np.searchsorted(self.classes, y)
        self.weights = rng.normal(0.0, 0.01, (d + 1, k))
        batch = min(self.config.batch_size, n)
        for _ in range(self.config.epochs):
            for rows in _minibatches(rng, n, batch):
                zb = np.hstack([np.ones((len(rows), 1)), Z[rows]])
                probs = _softmax(zb @ self.weights)
                grad = zb.T @ (probs - _one_hot(y_idx[rows], k)) / len(rows)
                self.weights -= self.config.learning_rate * grad

    def _scores(self, X):
        Z = (X - self.mean) / self.std
        return np.hstack([np.ones((len(Z), 1)), Z]) @ self.weights


class KNearestNeighborsClassifier(Classifier):
    """k-NN with Euclidean distance; neighbor votes break ties to lowest id."""

    kind = "knn"

    def _fit(self, X, y):
        self.train_X = X.copy()
        self.train_y_idx = np.searchsorted(self.classes, y)
        self.train_sq = np.einsum("ij,ij->i", self.train_X, self.train_X)

    def _scores(self, X):
        sq = np.einsum("ij,ij->i", X, X)
        d2 = sq[:, None] + self.train_sq[None, :] - 2.0 * (X @ self.train_X.T)
        k = min(self.config.k, len(self.train_X))
        # Stable sort keeps equidistant neighbors in training order, so
        # prediction is deterministic under distance ties.
        neighbors = np.argsort(d2, axis=1, kind="stable")[:, :k]
        votes = np.zeros((len(X), len(self.classes)))
        for j in range(k):
            np.add.at(votes, (np.arange(len(X)), self.train_y_idx[neighbors[:, j]]), 1.0)
        return votes


class GaussianNaiveBayesClassifier(Classifier):
    """Per-class diagonal Gaussians with a variance floor."""

    kind = "gnb"

    def _fit(self, X, y):
        k = len(self.classes)
        d = X.shape[1]
        self.log_prior = np.full(k, -np.inf)
        self.mu = np.zeros((k, d))
        self.var = np.ones((k, d))
        self.fitted = np.zeros(k, dtype=bool)
        floor = self.config.smoothing * max(X.var(axis=0).max(), 1e-12)
        for idx, c in enumerate(self.classes):
            rows = X[y == c]
            if len(rows) == 0:
                continue
            self.fitted[idx] = True
            self.log_prior[idx] = np.log(len(rows) / len(X))
            self.mu[idx] = rows.mean(axis=0)
            self.var[idx] = rows.var(axis=0) + floor

    def _scores(self, X):
        scores = np.full((len(X), len(self.classes)), -np.inf)
        for idx in range(len(self.classes)):
            if not self.fitted[idx]:
                continue
            log_lik = -0.5 * (np.log(2.0 * np.pi * self.var[idx])
                              + (X - self.mu[idx]) ** 2 / self.var[idx]).sum(axis=1)
            scores[:, idx] = self.log_prior[idx] + log_lik
        return scores


class OneLayerNetworkClassifier(Classifier):
    """One-hidden-layer tanh network trained with minibatch gradient descent."""

    kind = "mlp"

    def _fit(self, X, y):
        rng = np.random.default_rng(self.config.seed)
        self.mean, self.std = _standardizer(X)
        Z = (X - self.mean) / self.std
        n, d = Z.shape
        h = self.config.hidden_width
        k = len(self.classes)
        y_idx = np.searchsorted(self.classes, y)
        self.w1 = rng.normal(0.0, 1.0 / np.sqrt(d), (d, h))
        self.b1 = np.zeros(h)
        self.w2 = rng.normal(0.0, 1.0 / np.sqrt(h), (h, k))
        self.b2 = np.zeros(k)
        batch = min(self.config.batch_size, n)
        lr = self.config.learning_rate
        for _ in range(self.config.epochs):
            for rows in _minibatches(rng, n, batch):
                zb = Z[rows]
                hidden = np.tanh(zb @ self.w1 + self.b1)
                probs = _softmax(hidden @ self.w2 + self.b2)
                delta_out = (probs - _one_hot(y_idx[rows], k)) / len(rows)
                delta_hidden = (delta_out @ self.w2.T) * (1.0 - hidden ** 2)
                self.w2 -= lr * (hidden.T @ delta_out)
                self.b2 -= lr * delta_out.sum(axis=0)
                self.w1 -= lr * (zb.T @ delta_hidden)
                self.b1 -= lr * delta_hidden.sum(axis=0)

    def _scores(self, X):
        Z = (X - self.mean) / self.std
        hidden = np.tanh(Z @ self.w1 + self.b1)
        return hidden @ self.w2 + self.b2


LEARNER_KINDS = {
    "logreg": LogisticRegressionClassifier,
    "knn": KNearestNeighborsClassifier,
    "gnb": GaussianNaiveBayesClassifier,
    "mlp": OneLayerNetworkClassifier,
}


def make_classifier(kind: str, label_space: LabelSpace, config: TrainConfig) -> Classifier:
    if kind not in LEARNER_KINDS:
        raise LearnerError(f"unknown learner kind {kind!r}; choose from {sorted(LEARNER_KINDS)}")
    return LEARNER_KINDS[kind](label_space, config)


def train_local(kind: str, label_space: LabelSpace, dataset: LabeledDataset,
                config: TrainConfig) -> Classifier:
    """Phase 1: fit a fresh classifier on the participant's private data."""
    return make_classifier(kind, label_space, config).train(dataset)


def pseudolabel(classifier: Classifier, public: UnlabeledDataset) -> np.ndarray:
    """Phase 2: label the public dataset; pure in (classifier state, data)."""
    return classifier.predict_batch(public)


def materialize_bundle(bundle: PseudolabelBundle, public: UnlabeledDataset) -> LabeledDataset:
    """Turn index sets into a labeled dataset of public instances."""
    rows = []
    labels = []
    for entry in bundle.entries:
        for index in entry.indices:
            if not 0 <= index < len(public):
                raise LearnerError(
                    f"bundle index {index} outside public dataset of size {len(public)}"
                )
            rows.append(index)
            labels.append(entry.category)
    if not rows:
        raise LearnerError("cannot materialize an empty bundle")
    return LabeledDataset(
        features=public.features[np.array(rows, dtype=np.int64)],
        labels=np.array(labels, dtype=np.int64),
        provenance=f"pseudolabels:{bundle.owner}",
    )


def update_train(kind: str, label_space: LabelSpace, local: LabeledDataset,
                 bundle: PseudolabelBundle, public: UnlabeledDataset,
                 config: TrainConfig) -> Classifier:
    """Phase 4: retrain from scratch on local data plus the materialized bundle.

    The retrain uses a fresh seed derived from the configured one and a
    minibatch capped at ``update_batch_size``, so an empty bundle reproduces a
    plain retrain of the local model exactly.
    """
    if len(bundle) > 0:
        pseudo = materialize_bundle(bundle, public)
        combined = LabeledDataset(
            features=np.vstack([local.features, pseudo.features]),
            labels=np.concatenate([local.labels, pseudo.labels]),
            provenance=f"combined:{bundle.owner}",
        )
    else:
        combined = local
    if len(combined) == 0:
        raise LearnerError("combined update-training dataset is empty")
    update_config = replace(
        config,
        seed=derive_seed(config.seed, "update"),
        batch_size=min(config.update_batch_size, len(combined)),
    )
    return make_classifier(kind, label_space, update_config).train(combined)


def evaluate(classifier: Classifier, test: LabeledDataset) -> float:
    """Fraction of test instances the classifier labels correctly."""
    if len(test) == 0:
        raise LearnerError("cannot evaluate on an empty test set")
    outside = np.setdiff1d(test.labels, classifier.classes)
    if len(outside):
        raise DomainError(
            f"test labels {outside.tolist()} outside the classifier's label space"
        )
    predictions = classifier.predict_batch(test.features)
    return float(np.mean(predictions == test.labels))
