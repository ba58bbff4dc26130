"""Command-line entry point: ``wvae <command> [--config FILE] [--key value ...]``.

Each command has a flat set of keys. Values resolve as: built-in
defaults, then the ``key = value`` config file, then command-line flags.
The dataset directory additionally falls back to ``$WVAE_DATA_ROOT``
when neither the file nor the flags set it.

Exit codes: 0 success, 2 configuration error, 3 I/O or file-format
error, 4 training diverged, 5 invalid data or arguments.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import artifacts as art
from . import classifier as clf
from . import experiments as exp
from . import idx
from . import metrics
from . import vae

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_DATA = 5

log = logging.getLogger("wvae")

_TRAIN_KEYS = {
    "data_root": "",
    "n_train": 0,
    "class_label": -1,
    "variant": "ELBO_W",
    "lam": 1.0,
    "c": 0.05,
    "rho": 0.1,
    "epochs": 15,
    "batch_size": 100,
    "lr": 1e-3,
    "seed": 0,
    "latent_dim": 20,
    "hidden1": 512,
    "hidden2": 256,
    "scheduler": False,
    "max_iterations": 0,
}

DEFAULTS = {
    "train": {**_TRAIN_KEYS, "out_dir": ""},
    "generate": {"params": "", "n": 10000, "seed": 0, "label": -1, "pgm": True, "out_dir": ""},
    "fid": {
        "data_root": "",
        "real": "",
        "generated": "",
        "n": 10000,
        "extractor": "classifier",
        "classifier": "",
        "clf_train": 10000,
        "clf_epochs": 5,
        "seed": 0,
        "out": "",
    },
    "sweep": {
        **_TRAIN_KEYS,
        "variant": "ELBO_W_LAMBDA",
        "runs": 30,
        "lam_min": 0.0,
        "lam_max": 20.0,
        "n_fid": 10000,
        "extractor": "classifier",
        "clf_epochs": 5,
        "jobs": 1,
        "out_dir": "",
    },
    "tsurface": {"sigma_min": 0.05, "sigma_max": 2.0, "sigma_step": 0.05, "out": ""},
    "augment-eval": {
        "data_root": "",
        "sizes": (10000, 20000, 60000),
        "n_generated": 10000,
        "vae_train_size": 10000,
        "vae_epochs": 50,
        "w_variant": "ELBO_W_LAMBDA",
        "lam": 0.3,
        "latent_dim": 20,
        "hidden1": 512,
        "hidden2": 256,
        "clf_epochs": 5,
        "clf_lr": 1e-3,
        "test_size": 3000,
        "seed": 0,
        "out_dir": "",
    },
    "trace": {"runlog": "", "out": ""},
}


class UsageError(ValueError):
    pass


# --- helpers -------------------------------------------------------------------------------


def _require(cfg: dict, *keys: str) -> None:
    missing = [k for k in keys if cfg.get(k) in ("", None)]
    if missing:
        raise art.ConfigError(f"missing required setting(s): {', '.join(missing)}")


def _data_root(cfg: dict) -> str:
    root = cfg.get("data_root") or os.environ.get(idx.DATA_ROOT_ENV, "")
    if not root:
        raise art.ConfigError(f"set data_root or ${idx.DATA_ROOT_ENV}")
    return root


def _train_config(cfg: dict) -> vae.TrainConfig:
    return vae.TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"], learning_rate=cfg["lr"],
        seed=cfg["seed"], latent_dim=cfg["latent_dim"], hidden_sizes=(cfg["hidden1"], cfg["hidden2"]),
        lam=cfg["lam"], rho=cfg["rho"], scheduler=cfg["scheduler"], c=cfg["c"],
        max_iterations=cfg["max_iterations"] or None,
    )


def _training_set(cfg: dict) -> idx.ImageSet:
    data = idx.load_mnist("train", _data_root(cfg))
    if cfg["class_label"] >= 0:
        data = data.subset(np.flatnonzero(data.labels == cfg["class_label"]))
    if cfg["n_train"] > 0:
        data = data.subset(np.arange(min(cfg["n_train"], len(data))))
    return data


def _load_vae(path) -> vae.VaeParams:
    return vae.VaeParams.from_arrays(art.read_params(path))


# --- commands --------------------------------------------------------------------------------


def cmd_train(cfg: dict) -> int:
    _require(cfg, "out_dir")
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    data = _training_set(cfg)
    meta = {"config": cfg, "dataset_sha256": data.content_hash()}
    summary = {**meta, "config_sha256": art.config_hash(cfg)}
    try:
        params, run_log = vae.train(cfg["variant"], data, _train_config(cfg))
    except vae.TrainingDivergedError as exc:
        art.write_runlog(out / "runlog.csv", exc.log, meta)
        art.write_json(out / "summary.json", {**summary, "status": "diverged", "error": str(exc),
                                              "iterations": len(exc.log)})
        log.error("%s", exc)
        return EXIT_DIVERGED
    art.write_params(out / "params.wvae", params.arrays())
    art.write_runlog(out / "runlog.csv", run_log, meta)
    summary.update(
        status="ok",
        iterations=len(run_log),
        final=asdict(run_log.rows[-1]),
        overfit=run_log.overfit,
        overfit_iteration=run_log.overfit_iteration,
        params_sha256=art.file_hash(out / "params.wvae"),
        runlog_sha256=art.file_hash(out / "runlog.csv"),
    )
    art.write_json(out / "summary.json", summary)
    return EXIT_OK


def cmd_generate(cfg: dict) -> int:
    _require(cfg, "params", "out_dir")
    if cfg["n"] < 1:
        raise UsageError("n must be >= 1")
    params = _load_vae(cfg["params"])
    images = vae.generate(params, cfg["n"], cfg["seed"])
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    if cfg["pgm"]:
        width = max(5, len(str(cfg["n"] - 1)))
        for i, image in enumerate(images):
            art.write_pgm(out / f"sample_{i:0{width}d}.pgm", image)
    idx.write_idx(idx.ImageSet(images), out / "generated-images-idx3-ubyte")
    manifest = {"config": cfg, "params_sha256": art.file_hash(cfg["params"]), "count": cfg["n"],
                "images_sha256": art.file_hash(out / "generated-images-idx3-ubyte")}
    if cfg["label"] >= 0:
        Path(out / "generated-labels-idx1-ubyte").write_bytes(idx.idx_label_bytes(np.full(cfg["n"], cfg["label"])))
        manifest["labels_sha256"] = art.file_hash(out / "generated-labels-idx1-ubyte")
    art.write_json(out / "manifest.json", manifest)
    return EXIT_OK


def _extractor(cfg: dict):
    if cfg["extractor"] == "pixels":
        return None, "pixels-avgpool4"
    if cfg["extractor"] != "classifier":
        raise art.ConfigError(f"unknown extractor {cfg['extractor']!r}")
    if cfg.get("classifier"):
        params = clf.ClassifierParams.from_arrays(art.read_params(cfg["classifier"]))
        return exp.classifier_extractor(params), f"classifier:{art.file_hash(cfg['classifier'])}"
    train = idx.load_mnist("train", _data_root(cfg))
    n = cfg.get("clf_train", 10000) or len(train)
    params = clf.train_classifier(train.subset(np.arange(min(n, len(train)))),
                                  clf.ClassifierConfig(epochs=cfg["clf_epochs"], seed=cfg["seed"]))
    ident = f"classifier:mlp-784-256-64-10:n{n}:e{cfg['clf_epochs']}:seed{cfg['seed']}"
    return exp.classifier_extractor(params), ident


def cmd_fid(cfg: dict) -> int:
    _require(cfg, "generated")
    if cfg["real"]:
        real = idx.ImageSet(idx.read_idx_images(cfg["real"]))
        real_id = {"path": cfg["real"], "sha256": real.content_hash()}
    else:
        real = idx.load_mnist("test", _data_root(cfg))
        real_id = {"path": "mnist:test", "sha256": real.content_hash()}
    gen = idx.ImageSet(idx.read_idx_images(cfg["generated"]))
    n = cfg["n"]
    if n > 0:
        real, gen = real.subset(np.arange(min(n, len(real)))), gen.subset(np.arange(min(n, len(gen))))
    extractor, ident = _extractor(cfg)
    value = metrics.fid_surrogate(real, gen, extractor)
    record = {
        "metric": "fid_surrogate",
        "value": value,
        "real_set": {**real_id, "count": len(real)},
        "gen_set": {"path": cfg["generated"], "sha256": gen.content_hash(), "count": len(gen)},
        "extractor_id": ident,
        "config": cfg,
    }
    text = art.canonical_json(record)
    if cfg["out"]:
        Path(cfg["out"]).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


SWEEP_COLUMNS = ("run", "seed", "lambda", "fid", "final_total", "final_recon", "overfit", "status")


def cmd_sweep(cfg: dict) -> int:
    _require(cfg, "out_dir")
    if cfg["runs"] < 1:
        raise UsageError("runs must be >= 1")
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    data = _training_set(cfg)
    extractor_params = None
    if cfg["extractor"] == "classifier":
        extractor_params = clf.train_classifier(data, clf.ClassifierConfig(epochs=cfg["clf_epochs"], seed=cfg["seed"]))
    elif cfg["extractor"] != "pixels":
        raise art.ConfigError(f"unknown extractor {cfg['extractor']!r}")
    real = idx.load_mnist("test", _data_root(cfg))
    real = real.images[: cfg["n_fid"]]
    rows, summary = exp.run_sweep(
        data.images, real, _train_config(cfg), runs=cfg["runs"],
        lam_range=(cfg["lam_min"], cfg["lam_max"]), n_fid=cfg["n_fid"],
        extractor_params=extractor_params, jobs=cfg["jobs"], out_dir=out,
    )
    meta = {"config": cfg, "dataset_sha256": data.content_hash()}
    art.write_table(
        out / "sweep.csv", SWEEP_COLUMNS,
        [(r.run, r.seed, r.lam, r.fid, r.final_total, r.final_recon, int(r.overfit), r.status) for r in rows],
        "wvae-sweep/1", meta,
    )
    art.write_json(out / "sweep.json", {**meta, "rows": [asdict(r) for r in rows], "summary": summary})
    return EXIT_OK


def cmd_tsurface(cfg: dict) -> int:
    _require(cfg, "out")
    try:
        rows = exp.t_surface(cfg["sigma_min"], cfg["sigma_max"], cfg["sigma_step"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    art.write_table(cfg["out"], ("sigma1", "sigma2", "T"), rows, "wvae-tsurface/1", {"config": cfg})
    return EXIT_OK


def cmd_augment_eval(cfg: dict) -> int:
    _require(cfg, "out_dir")
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    root = _data_root(cfg)
    train, test = idx.load_mnist("train", root), idx.load_mnist("test", root)
    seed = cfg["seed"]
    order = np.random.default_rng(seed).permutation(len(train))
    vae_data = train.subset(order[: cfg["vae_train_size"]])
    vcfg = vae.TrainConfig(epochs=cfg["vae_epochs"], seed=seed, latent_dim=cfg["latent_dim"],
                           hidden_sizes=(cfg["hidden1"], cfg["hidden2"]), lam=cfg["lam"])
    generated = {}
    for variant, tag in ((cfg["w_variant"], "generated-W"), ("ELBO_KL", "generated-KL")):
        models = exp.train_class_vaes(vae_data, variant, vcfg)
        for k, params in enumerate(models):
            art.write_params(out / f"{tag}_class{k}.wvae", params.arrays())
        generated[tag] = exp.generate_labeled(models, cfg["n_generated"], seed, tag)
    held_out = exp.holdout_test(test, cfg["test_size"], seed)
    result = clf.augmentation_experiment(
        train, cfg["sizes"], generated["generated-W"], generated["generated-KL"], held_out,
        clf.ClassifierConfig(epochs=cfg["clf_epochs"], learning_rate=cfg["clf_lr"], seed=seed),
        seed=seed,
    )
    meta = {"config": cfg, "config_sha256": art.config_hash(cfg), "dataset_sha256": train.content_hash(),
            "seeds": {"subset": seed, "vae_base": seed, "classifier": seed, "test_holdout": seed,
                      "generation": seed}}
    art.write_table(out / "augment.csv", ("train_size",) + clf.CONDITIONS,
                    [(r["train_size"], *(r[c] for c in clf.CONDITIONS)) for r in result.rows()],
                    "wvae-augment/1", meta)
    art.write_json(out / "augment.json", {**meta, "rows": result.rows(), "details": result.metadata})
    return EXIT_OK


def cmd_trace(cfg: dict) -> int:
    _require(cfg, "runlog", "out")
    art.write_trace(cfg["out"], cfg["runlog"])
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "generate": cmd_generate,
    "fid": cmd_fid,
    "sweep": cmd_sweep,
    "tsurface": cmd_tsurface,
    "augment-eval": cmd_augment_eval,
    "trace": cmd_trace,
}


# --- argument parsing ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wvae", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, defaults in DEFAULTS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value file")
        for key, default in defaults.items():
            flag = "--" + key.replace("_", "-")
            if isinstance(default, bool):
                p.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction, default=None)
            else:
                p.add_argument(flag, dest=key, default=None, metavar=type(default).__name__.upper(),
                               help=f"default: {default!r}")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    defaults = DEFAULTS[args.command]
    overrides = {k: getattr(args, k) for k in defaults if getattr(args, k) is not None}
    return art.resolve_config(defaults, args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except art.ConfigError as exc:
        log.error("config: %s", exc)
        return EXIT_CONFIG
    except (OSError, idx.IdxFormatError, art.ParamsFormatError, art.SchemaVersionError) as exc:
        log.error("io: %s", exc)
        return EXIT_IO
    except vae.TrainingDivergedError as exc:
        log.error("%s", exc)
        return EXIT_DIVERGED
    except ValueError as exc:
        log.error("data: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
