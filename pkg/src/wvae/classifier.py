"""Small MLP digit classifier used for the augmentation experiment and as a feature extractor."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from ._validation import check_images, check_labels
from .autodiff import Tensor
from .idx import PIXELS, ImageSet, batches, merge
from .optim import Adam

N_CLASSES = 10


@dataclass
class ClassifierParams:
    layers: list[tuple[Tensor, Tensor]]

    def tensors(self) -> list[Tensor]:
        return [t for layer in self.layers for t in layer]

    def arrays(self) -> list[np.ndarray]:
        return [t.values for t in self.tensors()]

    @classmethod
    def from_arrays(cls, arrays) -> ClassifierParams:
        ts = [Tensor(np.array(a, dtype=np.float64)) for a in arrays]
        return cls([(ts[i], ts[i + 1]) for i in range(0, len(ts), 2)])


@dataclass(frozen=True)
class ClassifierConfig:
    epochs: int = 5
    batch_size: int = 100
    learning_rate: float = 1e-3
    seed: int = 0
    hidden_sizes: tuple[int, int] = (256, 64)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d


def init_classifier(hidden_sizes=(256, 64), rng=None) -> ClassifierParams:
    rng = rng if rng is not None else np.random.default_rng(0)
    dims = [PIXELS, *hidden_sizes, N_CLASSES]
    layers = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        layers.append(
            (Tensor(rng.uniform(-bound, bound, (fan_in, fan_out))),
             Tensor(rng.uniform(-bound, bound, (1, fan_out))))
        )
    return ClassifierParams(layers)


def _forward(params: ClassifierParams, x: np.ndarray) -> tuple[Tensor, Tensor]:
    """Return ``(logits, penultimate activations)``."""
    h = ad.constant(x)
    penultimate = h
    for i, (w, b) in enumerate(params.layers):
        h = ad.add(ad.matmul(h, w), b)
        if i < len(params.layers) - 1:
            h = ad.relu(h)
            penultimate = h
    return h, penultimate


def cross_entropy(logits: Tensor, y: np.ndarray) -> Tensor:
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(y)), y] = 1.0
    picked = ad.sum_(ad.mul(logits, ad.constant(onehot)), axis=1)
    return ad.mean(ad.sub(ad.logsumexp(logits, axis=1), picked))


def train_classifier(data: ImageSet, config: ClassifierConfig = ClassifierConfig()) -> ClassifierParams:
    if data.labels is None:
        raise ValueError("classifier training needs labels")
    init_seq, shuffle_seq = np.random.SeedSequence(config.seed).spawn(2)
    params = init_classifier(config.hidden_sizes, np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    opt = Adam(params.tensors(), lr=config.learning_rate)
    X, y = data.images, data.labels
    for _ in range(config.epochs):
        for idx in batches(X, config.batch_size, shuffle_rng):
            opt.zero_grad()
            logits, _ = _forward(params, X[idx])
            ad.backward(cross_entropy(logits, y[idx]))
            opt.step()
    return params


def predict_logits(params: ClassifierParams, X: np.ndarray) -> np.ndarray:
    return _forward(params, X)[0].values


def features(params: ClassifierParams, X: np.ndarray) -> np.ndarray:
    """Penultimate-layer (post-ReLU) activations."""
    return _forward(params, X)[1].values


def accuracy(params: ClassifierParams, test: ImageSet) -> float:
    if test.labels is None:
        raise ValueError("accuracy needs labels")
    # argmax breaks ties toward the lowest class index
    pred = predict_logits(params, test.images).argmax(axis=1)
    return float(np.mean(pred == test.labels))


class DigitClassifier(ClassifierMixin, BaseEstimator):
    """784 -> 256 -> 64 -> 10 ReLU network; ``transform`` gives the 64 penultimate features."""

    def __init__(self, hidden_sizes=(256, 64), epochs: int = 5, batch_size: int = 100, learning_rate: float = 1e-3, seed: int = 0):
        self.hidden_sizes = hidden_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed

    def fit(self, X, y):
        X = check_images(X)
        y = check_labels(y, len(X))
        if y.min() < 0 or y.max() >= N_CLASSES:
            raise ValueError("labels must lie in 0..9")
        config = ClassifierConfig(self.epochs, self.batch_size, self.learning_rate, self.seed, tuple(self.hidden_sizes))
        self.params_ = train_classifier(ImageSet(X, y), config)
        self.classes_ = np.arange(N_CLASSES)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        return predict_logits(self.params_, check_images(X))

    def predict_proba(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.decision_function(X).argmax(axis=1)

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        return features(self.params_, check_images(X))


@dataclass
class AugmentationResult:
    sizes: list[int]
    conditions: tuple[str, ...]
    accuracy: np.ndarray  # (len(sizes), len(conditions))
    metadata: dict

    def gain(self, size: int, condition: str = "+W") -> float:
        i = self.sizes.index(size)
        return float(self.accuracy[i, self.conditions.index(condition)] - self.accuracy[i, 0])

    def rows(self) -> list[dict]:
        return [
            {"train_size": n, **{c: float(a) for c, a in zip(self.conditions, acc)}}
            for n, acc in zip(self.sizes, self.accuracy)
        ]


CONDITIONS = ("baseline", "+KL", "+W")


def augmentation_experiment(
    original: ImageSet,
    sizes,
    gen_w: ImageSet,
    gen_kl: ImageSet,
    test: ImageSet,
    config: ClassifierConfig = ClassifierConfig(),
    seed: int = 0,
) -> AugmentationResult:
    """Accuracy of classifiers trained on the first ``n`` originals alone and merged with each generated set.

    Originals are taken in a fixed seeded order so every size nests the smaller ones.
    """
    for g in (gen_w, gen_kl):
        if g.labels is None:
            raise ValueError("generated sets must be labelled")
    order = np.random.default_rng(seed).permutation(len(original))
    sizes = [int(n) for n in sizes]
    if max(sizes) > len(original):
        raise ValueError(f"requested {max(sizes)} originals, only {len(original)} available")
    acc = np.zeros((len(sizes), len(CONDITIONS)))
    for i, n in enumerate(sizes):
        base = original.subset(order[:n])
        for j, train_set in enumerate((base, merge(base, gen_kl), merge(base, gen_w))):
            acc[i, j] = accuracy(train_classifier(train_set, config), test)
    meta = {"classifier": config.as_dict(), "subset_seed": seed, "test_size": len(test),
            "generated_sizes": {"+KL": len(gen_kl), "+W": len(gen_w)}}
    return AugmentationResult(sizes, CONDITIONS, acc, meta)
