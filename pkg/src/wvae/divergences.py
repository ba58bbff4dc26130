"""Closed-form divergences between a diagonal Gaussian and N(0, I).

Every function accepts ``mu``/``sigma`` with the latent axis last, so a
single posterior ``(m,)`` and a batch ``(B, m)`` both work; batched inputs
give one value per row. ``sigma`` holds standard deviations, not variances.

The ``*_tensor`` variants compute the same quantities on autodiff tensors
of shape ``(B, m)`` and return per-example ``(B,)`` tensors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DomainError, Tensor

SIGMA_MIN = 1e-4
SIGMA_MAX = 1.0


@dataclass(frozen=True)
class DiagGaussian:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if mu.shape != sigma.shape or mu.ndim == 0 or mu.shape[-1] < 1:
            raise ValueError(f"mu {mu.shape} and sigma {sigma.shape} must share a nonempty shape")
        if np.any(~(sigma > 0)):
            raise DomainError("sigma must be strictly positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.mu.shape[-1]


@dataclass(frozen=True)
class DivergenceValues:
    kl: float
    w2sq: float
    t: float


def _unpack(q) -> tuple[np.ndarray, np.ndarray]:
    if not isinstance(q, DiagGaussian):
        q = DiagGaussian(*q)
    return q.mu, q.sigma


def _scalarize(x: np.ndarray):
    return float(x) if np.ndim(x) == 0 else x


def kl_to_std(q) -> float | np.ndarray:
    """KL(q || N(0, I)) = ½(−Σ log σ² + Σ(μ² + σ²) − m)."""
    mu, sigma = _unpack(q)
    m = mu.shape[-1]
    var = sigma**2
    return _scalarize(0.5 * (-np.log(var).sum(-1) + (mu**2 + var).sum(-1) - m))


def w2sq_to_std(q) -> float | np.ndarray:
    """Squared 2-Wasserstein distance to N(0, I): ‖μ‖² + Σ(σ − 1)²."""
    mu, sigma = _unpack(q)
    return _scalarize((mu**2).sum(-1) + ((sigma - 1.0) ** 2).sum(-1))


def t_gap(q) -> float | np.ndarray:
    """Gap T = log Π σ² + Σ(σ − 2)² + Σ μ² − m.

    Equals ``2 * (w2sq_to_std(q) - kl_to_std(q))``; zero at the prior and
    nonpositive when μ = 0 and every σ lies in (0, 1].
    """
    mu, sigma = _unpack(q)
    m = mu.shape[-1]
    return _scalarize(
        np.log(sigma**2).sum(-1) + ((sigma - 2.0) ** 2).sum(-1) + (mu**2).sum(-1) - m
    )


def divergences(q) -> DivergenceValues:
    return DivergenceValues(kl=kl_to_std(q), w2sq=w2sq_to_std(q), t=t_gap(q))


def sigma_constrain(raw) -> np.ndarray:
    """Map unconstrained encoder outputs into (0, 1] via clamp(softplus(raw), 1e-4, 1)."""
    raw = np.asarray(raw, dtype=np.float64)
    return np.clip(ad._softplus(raw), SIGMA_MIN, SIGMA_MAX)


# --- tensor versions -----------------------------------------------------------


def sigma_constrain_tensor(raw: Tensor) -> Tensor:
    return ad.clamp(ad.softplus(raw), SIGMA_MIN, SIGMA_MAX)


def kl_tensor(mu: Tensor, sigma: Tensor) -> Tensor:
    m = mu.shape[-1]
    log_var = ad.scale(ad.log(sigma), 2.0)
    inner = ad.sum_(ad.square(mu) + ad.square(sigma) - log_var, axis=-1)
    return ad.scale(ad.add_scalar(inner, -m), 0.5)


def w2sq_tensor(mu: Tensor, sigma: Tensor) -> Tensor:
    return ad.sum_(ad.square(mu) + ad.square(ad.add_scalar(sigma, -1.0)), axis=-1)


def t_gap_tensor(mu: Tensor, sigma: Tensor) -> Tensor:
    m = mu.shape[-1]
    log_var = ad.scale(ad.log(sigma), 2.0)
    inner = log_var + ad.square(ad.add_scalar(sigma, -2.0)) + ad.square(mu)
    return ad.add_scalar(ad.sum_(inner, axis=-1), -m)
