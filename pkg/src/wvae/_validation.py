from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .idx import PIXELS, ImageSet


def check_images(X, name: str = "X") -> np.ndarray:
    """Coerce ``X`` (array or :class:`ImageSet`) to a float64 ``(N, 784)`` array in [0, 1]."""
    if isinstance(X, ImageSet):
        X = X.images
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != PIXELS:
        raise ValueError(f"{name} must have {PIXELS} columns, got {X.shape[1]}")
    if X.min() < 0.0 or X.max() > 1.0:
        raise ValueError(f"{name} values must lie in [0, 1]")
    return X


def check_labels(y, n: int) -> np.ndarray:
    if y is None:
        raise ValueError("labels are required")
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise ValueError("labels must be integers")
        y = y.astype(np.int64)
    return y.astype(np.int64)


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
