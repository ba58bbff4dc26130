"""MLP variational autoencoder with KL or Wasserstein latent penalties.

Losses are negated ELBOs (minimized). Per-example terms are summed over
pixels / latent dimensions and averaged over the batch:

* ``ELBO_KL``        recon + KL
* ``ELBO_W``         recon + W2^2
* ``ELBO_W_LAMBDA``  recon + lambda * W2^2
* ``ELBO_W_REG``     recon + W2^2 + rho * T^2   (T is the batch-mean gap)
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from . import divergences as dv
from . import scheduler as sch
from ._validation import as_rng, check_images
from .autodiff import ShapeError, Tensor
from .idx import PIXELS, batches
from .optim import Adam

VARIANTS = ("ELBO_KL", "ELBO_W", "ELBO_W_LAMBDA", "ELBO_W_REG")
OVERFIT_RUN = 100


class TrainingDivergedError(RuntimeError):
    """Raised when the loss turns non-finite; carries the partial run log."""

    def __init__(self, message: str, log: RunLog):
        super().__init__(message)
        self.log = log


# --- parameters -----------------------------------------------------------------


@dataclass
class VaeParams:
    encoder: list[tuple[Tensor, Tensor]]
    decoder: list[tuple[Tensor, Tensor]]

    def __post_init__(self):
        if len(self.encoder) != 3 or len(self.decoder) != 3:
            raise ShapeError("encoder and decoder need three affine layers each")
        m = self.latent_dim
        if self.encoder[-1][0].shape[1] != 2 * m:
            raise ShapeError("encoder head must have width 2 * latent_dim")
        if self.encoder[0][0].shape[0] != PIXELS or self.decoder[-1][0].shape[1] != PIXELS:
            raise ShapeError(f"input/output width must be {PIXELS}")

    @property
    def latent_dim(self) -> int:
        return self.decoder[0][0].shape[0]

    @property
    def hidden_sizes(self) -> tuple[int, int]:
        return self.encoder[0][0].shape[1], self.encoder[1][0].shape[1]

    def tensors(self) -> list[Tensor]:
        return [t for layer in self.encoder + self.decoder for t in layer]

    def arrays(self) -> list[np.ndarray]:
        return [t.values for t in self.tensors()]

    @classmethod
    def from_arrays(cls, arrays) -> VaeParams:
        if len(arrays) != 12:
            raise ShapeError(f"expected 12 arrays, got {len(arrays)}")
        ts = [Tensor(np.array(a, dtype=np.float64)) for a in arrays]
        layers = [(ts[i], ts[i + 1]) for i in range(0, 12, 2)]
        return cls(layers[:3], layers[3:])

    def copy(self) -> VaeParams:
        return VaeParams.from_arrays([a.copy() for a in self.arrays()])


def _affine(fan_in: int, fan_out: int, rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    bound = 1.0 / math.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = rng.uniform(-bound, bound, size=(1, fan_out))
    return Tensor(w), Tensor(b)


def init_params(latent_dim: int = 20, hidden_sizes=(512, 256), seed=0) -> VaeParams:
    rng = as_rng(seed)
    h1, h2 = hidden_sizes
    enc_dims = [PIXELS, h1, h2, 2 * latent_dim]
    dec_dims = [latent_dim, h2, h1, PIXELS]
    encoder = [_affine(a, b, rng) for a, b in zip(enc_dims, enc_dims[1:])]
    decoder = [_affine(a, b, rng) for a, b in zip(dec_dims, dec_dims[1:])]
    return VaeParams(encoder, decoder)


def zero_params(latent_dim: int = 20, hidden_sizes=(512, 256)) -> VaeParams:
    params = init_params(latent_dim, hidden_sizes, seed=0)
    for t in params.tensors():
        t.values[...] = 0.0
    return params


def _mlp(layers, h: Tensor) -> Tensor:
    for i, (w, b) in enumerate(layers):
        h = ad.add(ad.matmul(h, w), b)
        if i < len(layers) - 1:
            h = ad.relu(h)
    return h


# --- model pieces ------------------------------------------------------------------


@dataclass
class Posterior:
    """Batch of diagonal Gaussians as graph nodes, each ``(B, m)``."""

    mu: Tensor
    sigma: Tensor

    def detach(self) -> dv.DiagGaussian:
        return dv.DiagGaussian(self.mu.values.copy(), self.sigma.values.copy())


def _as_batch(x) -> Tensor:
    if not isinstance(x, Tensor):
        x = ad.constant(x)
    if x.values.ndim == 1:
        x = ad.constant(x.values[None, :])
    return x


def encode(params: VaeParams, x) -> Posterior:
    x = _as_batch(x)
    if x.shape[1] != PIXELS or x.shape[0] == 0:
        raise ShapeError(f"encode expects a nonempty (B, {PIXELS}) batch, got {x.shape}")
    head = _mlp(params.encoder, x)
    m = params.latent_dim
    mu = ad.slice_(head, (slice(None), slice(0, m)))
    sigma = dv.sigma_constrain_tensor(ad.slice_(head, (slice(None), slice(m, 2 * m))))
    return Posterior(mu, sigma)


def reparameterize(q: Posterior, eps) -> Tensor:
    """z = mu + sigma * eps, differentiable in mu and sigma."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim == 1:
        eps = np.broadcast_to(eps, q.mu.shape)
    if eps.shape != q.mu.shape:
        raise ShapeError(f"noise shape {eps.shape} does not match posterior {q.mu.shape}")
    return ad.add(q.mu, ad.mul(q.sigma, ad.constant(eps)))


def decode(params: VaeParams, z) -> Tensor:
    z = _as_batch(z)
    if z.shape[1] != params.latent_dim:
        raise ShapeError(f"decode expects latent width {params.latent_dim}, got {z.shape[1]}")
    return _mlp(params.decoder, z)


def recon_loss(logits, x) -> Tensor:
    """Bernoulli cross-entropy summed over pixels: softplus(l) - x * l.

    Returns one value per row for batched input, a scalar for a single image.
    """
    logits = logits if isinstance(logits, Tensor) else Tensor(logits)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != logits.shape:
        raise ShapeError(f"logits {logits.shape} vs targets {x.shape}")
    per_pixel = ad.sub(ad.softplus(logits), ad.mul(logits, ad.constant(x)))
    return ad.sum_(per_pixel, axis=-1)


@dataclass(frozen=True)
class LossBreakdown:
    iteration: int
    recon: float
    kl: float
    w2sq: float
    t: float
    lam: float
    total: float
    t_hat: float | None = None
    beta: float | None = None

    def divergence_term(self, variant: str, rho: float) -> float:
        if variant == "ELBO_KL":
            return self.kl
        if variant == "ELBO_W":
            return self.w2sq
        if variant == "ELBO_W_LAMBDA":
            return self.lam * self.w2sq
        if variant == "ELBO_W_REG":
            return self.w2sq + rho * self.t**2
        raise ValueError(f"unknown variant {variant!r}")


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")


def loss_graph(variant: str, params: VaeParams, x, lam: float = 1.0, rho: float = 0.1, rng=None, eps=None, iteration: int = 0):
    """Build the loss graph; returns ``(total_node, breakdown)``.

    Noise comes from ``eps`` when given, otherwise ``rng`` (Generator or seed).
    """
    _check_variant(variant)
    if lam < 0 or rho < 0:
        raise ValueError("lambda and rho must be nonnegative")
    x = np.asarray(x.values if isinstance(x, Tensor) else x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    q = encode(params, x)
    if eps is None:
        eps = as_rng(rng).standard_normal(q.mu.shape)
    logits = decode(params, reparameterize(q, eps))

    recon = ad.mean(recon_loss(logits, x))
    kl = ad.mean(dv.kl_tensor(q.mu, q.sigma))
    w2sq = ad.mean(dv.w2sq_tensor(q.mu, q.sigma))
    t = ad.mean(dv.t_gap_tensor(q.mu, q.sigma))

    if variant == "ELBO_KL":
        total = ad.add(recon, kl)
    elif variant == "ELBO_W":
        total = ad.add(recon, w2sq)
    elif variant == "ELBO_W_LAMBDA":
        total = ad.add(recon, ad.scale(w2sq, lam))
    else:
        total = ad.add(ad.add(recon, w2sq), ad.scale(ad.square(t), rho))

    breakdown = LossBreakdown(
        iteration=iteration,
        recon=recon.item(),
        kl=kl.item(),
        w2sq=w2sq.item(),
        t=t.item(),
        lam=float(lam),
        total=total.item(),
    )
    return total, breakdown


def loss(variant: str, params: VaeParams, x, lam: float = 1.0, rho: float = 0.1, rng=None, eps=None) -> LossBreakdown:
    return loss_graph(variant, params, x, lam, rho, rng, eps)[1]


# --- training ------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 100
    learning_rate: float = 1e-3
    seed: int = 0
    latent_dim: int = 20
    hidden_sizes: tuple[int, int] = (512, 256)
    lam: float = 1.0
    rho: float = 0.1
    scheduler: bool = False
    c: float = 0.05
    lam_max: float = sch.LAMBDA_MAX
    ar_order: int = 2
    ar_window: int = 200
    min_history: int = 8
    max_iterations: int | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("invalid epochs / batch_size / learning_rate")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d


@dataclass
class RunLog:
    rows: list[LossBreakdown] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    overfit: bool = False
    overfit_iteration: int | None = None

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)

    def at(self, iteration: int) -> LossBreakdown:
        row = self.rows[iteration - 1]
        if row.iteration != iteration:
            row = next(r for r in self.rows if r.iteration == iteration)
        return row


BREAKDOWN_FIELDS = tuple(f.name for f in fields(LossBreakdown))


def overfit_iteration(t_values, per_epoch: int, run: int = OVERFIT_RUN) -> int | None:
    """First 1-based iteration completing ``run`` consecutive t > 0 values after the first epoch."""
    streak = 0
    for it, t in enumerate(t_values, 1):
        streak = streak + 1 if (it > per_epoch and t > 0) else 0
        if streak >= run:
            return it
    return None


def train(variant: str, data, config: TrainConfig = TrainConfig(), callback=None) -> tuple[VaeParams, RunLog]:
    """Adam training on ``data`` (array or ImageSet); logs every iteration.

    Seeds for initialization, shuffling and sampling noise are spawned
    from ``config.seed`` so runs are bit-reproducible.
    """
    _check_variant(variant)
    if config.scheduler and variant != "ELBO_W_LAMBDA":
        raise ValueError("the lambda scheduler only applies to ELBO_W_LAMBDA")
    X = check_images(data, "data")
    init_seq, shuffle_seq, noise_seq = np.random.SeedSequence(config.seed).spawn(3)
    params = init_params(config.latent_dim, config.hidden_sizes, np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)
    noise_rng = np.random.default_rng(noise_seq)
    opt = Adam(params.tensors(), lr=config.learning_rate)

    state = None
    if config.scheduler:
        state = sch.SchedulerState(
            lam=config.lam, c=config.c, lam_max=config.lam_max, order=config.ar_order,
            window=config.ar_window, min_history=config.min_history,
        )
    log = RunLog(metadata={"variant": variant, "n_train": len(X), **config.as_dict()})
    per_epoch = math.ceil(len(X) / config.batch_size)
    positive_run = 0
    it = 0
    for _epoch in range(config.epochs):
        for idx in batches(X, config.batch_size, shuffle_rng):
            if config.max_iterations is not None and it >= config.max_iterations:
                break
            it += 1
            lam = state.lam if state else config.lam
            opt.zero_grad()
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    total, row = loss_graph(variant, params, X[idx], lam, config.rho, noise_rng, iteration=it)
            except ad.DomainError:
                nan = float("nan")
                row = LossBreakdown(it, nan, nan, nan, nan, float(lam), nan)
            if not math.isfinite(row.total):
                log.rows.append(row)
                raise TrainingDivergedError(f"non-finite loss at iteration {it}", log)
            ad.backward(total)
            opt.step()
            if state is not None:
                sch.update(state, row.t)
                row = replace(row, t_hat=state.last_forecast, beta=state.last_beta)
            log.rows.append(row)

            positive_run = positive_run + 1 if (it > per_epoch and row.t > 0) else 0
            if positive_run >= OVERFIT_RUN and not log.overfit:
                log.overfit = True
                log.overfit_iteration = it
            if callback is not None:
                callback(row)
    return params, log


def generate(params: VaeParams, n: int, seed=0, chunk: int = 1000) -> np.ndarray:
    """Decode ``n`` prior draws z ~ N(0, I) into pixel probabilities."""
    if n < 1:
        raise ValueError("n must be >= 1")
    z = as_rng(seed).standard_normal((n, params.latent_dim))
    out = np.empty((n, PIXELS))
    for start in range(0, n, chunk):
        out[start : start + chunk] = ad._sigmoid(decode(params, z[start : start + chunk]).values)
    return out


# --- estimator ---------------------------------------------------------------------------


class WassersteinVAE(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` trains, ``transform`` returns posterior means.

    ``variant`` selects the latent penalty (see module docstring). With
    ``scheduler=True`` the weight ``lam`` follows the dynamic schedule.
    """

    def __init__(
        self,
        variant: str = "ELBO_W",
        latent_dim: int = 20,
        hidden_sizes=(512, 256),
        epochs: int = 15,
        batch_size: int = 100,
        learning_rate: float = 1e-3,
        lam: float = 1.0,
        rho: float = 0.1,
        scheduler: bool = False,
        c: float = 0.05,
        max_iterations: int | None = None,
        seed: int = 0,
    ):
        self.variant = variant
        self.latent_dim = latent_dim
        self.hidden_sizes = hidden_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lam = lam
        self.rho = rho
        self.scheduler = scheduler
        self.c = c
        self.max_iterations = max_iterations
        self.seed = seed

    def _config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
            seed=self.seed, latent_dim=self.latent_dim, hidden_sizes=self.hidden_sizes,
            lam=self.lam, rho=self.rho, scheduler=self.scheduler, c=self.c,
            max_iterations=self.max_iterations,
        )

    def fit(self, X, y=None):
        X = check_images(X)
        self.params_, self.run_log_ = train(self.variant, X, self._config())
        self.n_features_in_ = X.shape[1]
        return self

    def encode(self, X) -> dv.DiagGaussian:
        check_is_fitted(self, "params_")
        return encode(self.params_, check_images(X)).detach()

    def transform(self, X) -> np.ndarray:
        return self.encode(X).mu

    def inverse_transform(self, Z) -> np.ndarray:
        check_is_fitted(self, "params_")
        return ad._sigmoid(decode(self.params_, np.asarray(Z, dtype=np.float64)).values)

    def sample(self, n: int, seed=0) -> np.ndarray:
        check_is_fitted(self, "params_")
        return generate(self.params_, n, seed)

    def score(self, X, y=None) -> float:
        """Negated mean loss under the fitted variant, with fixed noise (higher is better)."""
        check_is_fitted(self, "params_")
        X = check_images(X)
        return -loss(self.variant, self.params_, X, self.lam, self.rho, rng=0).total
