"""Fréchet distance between fitted feature Gaussians, and loss-profile tables."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._validation import check_images

RIDGE = 1e-6
SYMMETRY_TOL = 1e-10
_EPS = np.finfo(np.float64).eps
_TINY = np.finfo(np.float64).tiny


class NotSymmetricError(ValueError):
    pass


class NoConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class GaussianFit:
    mean: np.ndarray
    cov: np.ndarray
    n_samples: int

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def fit_gaussian(features, ridge: float = RIDGE) -> GaussianFit:
    """Sample mean and unbiased covariance plus ``ridge * I``."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least two samples to fit a Gaussian")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    cov = 0.5 * (cov + cov.T) + ridge * np.eye(x.shape[1])
    return GaussianFit(mean, cov, n)


def _rotation(x: float, y: float, z: float) -> tuple[float, float]:
    """Cosine and sine of the Jacobi rotation annihilating ``z`` in [[x, z], [z, y]]."""
    theta = (y - x) / (2.0 * z)
    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
    c = 1.0 / math.sqrt(t * t + 1.0)
    return c, t * c


def jacobi_eigh(a, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    A pair (p, q) is rotated unless ``|a_pq| <= eps * sqrt(|a_pp a_qq|)``,
    which keeps small eigenvalues of PSD matrices relatively accurate.
    Sweeps end when nothing is rotated; running out of sweeps is an error
    only if the off-diagonal norm is still above ``tol * ||A||_F``.
    Returns ``(eigenvalues, eigenvectors)`` with eigenvectors as columns,
    in ascending eigenvalue order.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got {a.shape}")
    n = a.shape[0]
    scale = np.linalg.norm(a)
    if not np.allclose(a, a.T, rtol=0.0, atol=SYMMETRY_TOL * max(scale, 1.0)):
        raise NotSymmetricError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if scale == 0.0:
        return np.zeros(n), v

    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= _EPS * math.sqrt(abs(a[p, p] * a[q, q])) or abs(apq) < _TINY:
                    continue
                rotated = True
                c, s = _rotation(a[p, p], a[q, q], apq)
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if not rotated:
            break
    else:
        off = np.linalg.norm(a[~np.eye(n, dtype=bool)])
        if off >= tol * scale:
            raise NoConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")

    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def jacobi_singular_values(m, max_sweeps: int = 100) -> np.ndarray:
    """Singular values (descending) by one-sided Jacobi: orthogonalise the columns, read off their norms.

    Works on ``m`` directly rather than on ``m.T @ m``, so small singular
    values keep absolute accuracy near ``eps * ||m||``.
    """
    u = np.array(m, dtype=np.float64)
    if u.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {u.shape}")
    if u.shape[1] > u.shape[0]:
        u = u.T.copy()
    n = u.shape[1]
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                up, uq = u[:, p], u[:, q]
                alpha, beta, gamma = up @ up, uq @ uq, up @ uq
                if abs(gamma) <= _EPS * math.sqrt(alpha * beta) or abs(gamma) < _TINY:
                    continue
                rotated = True
                c, s = _rotation(alpha, beta, gamma)
                new_p = c * up - s * uq
                u[:, q] = s * up + c * uq
                u[:, p] = new_p
        if not rotated:
            break
    else:
        raise NoConvergenceError(f"one-sided Jacobi did not converge in {max_sweeps} sweeps")
    return np.sort(np.linalg.norm(u, axis=0))[::-1]


def sym_psd_sqrt(a) -> np.ndarray:
    """Principal square root V sqrt(L) V^T; negative eigenvalues are clamped to 0."""
    w, v = jacobi_eigh(a)
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (root + root.T)


def frechet_distance_sq(a: GaussianFit, b: GaussianFit) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_b^1/2 S_a S_b^1/2)^1/2).

    The trace of the cross term is the sum of singular values of
    S_b^1/2 S_a^1/2, which avoids a second square root and is symmetric
    in (a, b).
    """
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    cross = jacobi_singular_values(sym_psd_sqrt(b.cov) @ sym_psd_sqrt(a.cov)).sum()
    diff = a.mean - b.mean
    value = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * cross)
    return max(value, 0.0)


def pooled_pixels(images: np.ndarray) -> np.ndarray:
    """Fallback features: 4x4 average pooling of the 28x28 image (49 values)."""
    x = np.asarray(images, dtype=np.float64).reshape(-1, 7, 4, 7, 4)
    return x.mean(axis=(2, 4)).reshape(-1, 49)


def fid_surrogate(real, generated, extractor: Callable[[np.ndarray], np.ndarray] | None = None) -> float:
    """Fréchet distance between Gaussians fitted to extracted features.

    ``extractor`` maps ``(N, 784)`` pixels to ``(N, d)`` features; the
    default is :func:`pooled_pixels`. Values are only comparable between
    calls that use the same extractor.
    """
    extractor = extractor or pooled_pixels
    real = check_images(real, "real")
    generated = check_images(generated, "generated")
    return frechet_distance_sq(fit_gaussian(extractor(real)), fit_gaussian(extractor(generated)))


DEFAULT_CHECKPOINTS = (100, 1000, 2000, 5000)


def loss_profile(logs, checkpoints: Sequence[int] = DEFAULT_CHECKPOINTS, column: str = "total") -> dict[int, float]:
    """Logged ``column`` at each checkpoint iteration, averaged over runs."""
    if not isinstance(logs, (list, tuple)):
        logs = [logs]
    if not logs:
        raise ValueError("no run logs given")
    table = {}
    for k in checkpoints:
        values = []
        for log in logs:
            if k < 1 or k > len(log):
                raise ValueError(f"checkpoint {k} beyond run length {len(log)}")
            values.append(getattr(log.at(k), column))
        table[int(k)] = float(np.mean(values))
    return table
