"""Independent reference computations used as test oracles."""
import numpy as np
from scipy import integrate, special


def kl_1d_quadrature(mu: float, sigma: float) -> float:
    """KL(N(mu, sigma^2) || N(0, 1)) by adaptive quadrature of q log(q/p)."""

    def integrand(x):
        log_q = -0.5 * ((x - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * np.log(2 * np.pi)
        log_p = -0.5 * x**2 - 0.5 * np.log(2 * np.pi)
        return np.exp(log_q) * (log_q - log_p)

    lo, hi = mu - 40 * sigma, mu + 40 * sigma
    value, _ = integrate.quad(integrand, lo, hi, points=[mu], limit=500, epsabs=1e-13, epsrel=1e-12)
    return value


def kl_quadrature(mu, sigma) -> float:
    return sum(kl_1d_quadrature(m, s) for m, s in zip(mu, sigma))


def w2sq_transport(mu, sigma, n: int = 10**6, rng=None) -> float:
    """Monotone (quantile) coupling of each 1-D marginal with N(0, 1), stratified uniforms."""
    rng = rng if rng is not None else np.random.default_rng(0)
    total = 0.0
    for m, s in zip(mu, sigma):
        u = (np.arange(n) + rng.random(n)) / n
        z = special.ndtri(u)
        total += float(np.mean((m + s * z - z) ** 2))
    return total


def random_psd(d: int, rng, rank: int | None = None) -> np.ndarray:
    g = rng.standard_normal((d, rank or d))
    return g @ g.T / (rank or d)
