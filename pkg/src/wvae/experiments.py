"""Experiment pipelines shared by the CLI and the acceptance suite."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import artifacts as art
from . import classifier as clf
from . import metrics
from . import vae
from .divergences import t_gap
from .idx import ImageSet

log = logging.getLogger(__name__)


# --- T surface ---------------------------------------------------------------------------


def sigma_grid(lo: float, hi: float, step: float) -> np.ndarray:
    if not (0.0 < lo <= hi <= 2.0) or step <= 0:
        raise ValueError("grid bounds must satisfy 0 < lo <= hi <= 2 and step > 0")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return np.round(lo + step * np.arange(count), 10)


def t_surface(lo: float = 0.05, hi: float = 2.0, step: float = 0.05) -> list[tuple[float, float, float]]:
    """Rows ``(sigma1, sigma2, T)`` with mu = 0 and m = 2."""
    grid = sigma_grid(lo, hi, step)
    return [(float(a), float(b), float(t_gap(([0.0, 0.0], [a, b])))) for a in grid for b in grid]


# --- training helpers --------------------------------------------------------------------


def train_and_generate(variant: str, data: np.ndarray, config: vae.TrainConfig, n: int, seed: int):
    params, run_log = vae.train(variant, data, config)
    return params, run_log, vae.generate(params, n, seed)


def classifier_extractor(params: clf.ClassifierParams) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: clf.features(params, x)


# --- lambda sweep ------------------------------------------------------------------------


@dataclass
class SweepRow:
    run: int
    seed: int
    lam: float
    fid: float | None
    final_total: float | None
    final_recon: float | None
    overfit: bool
    status: str


def sweep_lambdas(runs: int, lo: float, hi: float, seed: int) -> np.ndarray:
    if runs < 1:
        raise ValueError("runs must be >= 1")
    return np.random.default_rng(seed).uniform(lo, hi, size=runs)


def _sweep_one(args) -> SweepRow:
    i, lam, data, real, config, n_fid, extractor_arrays, run_dir = args
    seed = config.seed + i
    cfg = replace(config, lam=float(lam), seed=seed, scheduler=False)
    extractor = None
    if extractor_arrays is not None:
        extractor = classifier_extractor(clf.ClassifierParams.from_arrays(extractor_arrays))
    try:
        params, run_log = vae.train("ELBO_W_LAMBDA", data, cfg)
    except vae.TrainingDivergedError as exc:
        if run_dir is not None:
            Path(run_dir).mkdir(parents=True, exist_ok=True)
            art.write_runlog(Path(run_dir) / "runlog.csv", exc.log, {"config": cfg.as_dict()})
        return SweepRow(i, seed, float(lam), None, None, None, False, "diverged")
    samples = vae.generate(params, n_fid, seed)
    fid = metrics.fid_surrogate(real, samples, extractor)
    last = run_log.rows[-1]
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        art.write_params(run_dir / "params.wvae", params.arrays())
        art.write_runlog(run_dir / "runlog.csv", run_log, {"config": cfg.as_dict()})
    status = "excluded-overfit" if run_log.overfit else "ok"
    return SweepRow(i, seed, float(lam), fid, last.total, last.recon, run_log.overfit, status)


def run_sweep(
    data: np.ndarray,
    real: np.ndarray,
    config: vae.TrainConfig,
    runs: int = 30,
    lam_range=(0.0, 20.0),
    n_fid: int = 2000,
    extractor_params: clf.ClassifierParams | None = None,
    jobs: int = 1,
    out_dir=None,
) -> tuple[list[SweepRow], dict]:
    """Train one fixed-lambda model per run with lambda ~ U(lam_range) and score it."""
    lams = sweep_lambdas(runs, *lam_range, seed=config.seed)
    ext = None if extractor_params is None else extractor_params.arrays()
    tasks = [
        (i, lam, data, real, config, n_fid, ext, None if out_dir is None else Path(out_dir) / f"run_{i:03d}")
        for i, lam in enumerate(lams)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_one, tasks))
    else:
        rows = [_sweep_one(t) for t in tasks]
    return rows, summarize_sweep(rows)


def summarize_sweep(rows: list[SweepRow]) -> dict:
    kept = [r for r in rows if r.status == "ok"]
    fids = np.array([r.fid for r in kept])
    summary = {"runs": len(rows), "kept": len(kept), "excluded": len(rows) - len(kept)}
    if kept:
        best = min(kept, key=lambda r: r.fid)
        summary.update(
            fid_mean=float(fids.mean()),
            fid_std=float(fids.std(ddof=1)) if len(fids) > 1 else 0.0,
            best_lambda=best.lam,
            best_fid=best.fid,
            best_run=best.run,
        )
    return summary


# --- augmentation ------------------------------------------------------------------------


def train_class_vaes(data: ImageSet, variant: str, config: vae.TrainConfig) -> list[vae.VaeParams]:
    """One VAE per digit, each trained on that digit's images only."""
    if data.labels is None:
        raise ValueError("class-conditional training needs labels")
    models = []
    for k in range(clf.N_CLASSES):
        subset = data.images[data.labels == k]
        if len(subset) == 0:
            raise ValueError(f"no training images for class {k}")
        params, _ = vae.train(variant, subset, replace(config, seed=config.seed + k))
        models.append(params)
    return models


def generate_labeled(models: list[vae.VaeParams], n_total: int, seed: int, tag: str) -> ImageSet:
    """Draw ``n_total`` images split evenly over the per-class models (remainder to low classes)."""
    k = len(models)
    counts = [n_total // k + (1 if c < n_total % k else 0) for c in range(k)]
    images, labels = [], []
    for c, (params, n) in enumerate(zip(models, counts)):
        if n:
            images.append(vae.generate(params, n, seed=seed * 1000 + c))
            labels.append(np.full(n, c))
    n = sum(counts)
    return ImageSet(np.concatenate(images), np.concatenate(labels), np.full(n, tag))


def holdout_test(test: ImageSet, size: int, seed: int) -> ImageSet:
    idx = np.sort(np.random.default_rng(seed).permutation(len(test))[:size])
    return test.subset(idx)
