"""Experiment runner: synth, train, attack, eval, grad-check, reproduce.

Every command takes one JSON config (see config.py) plus a few overriding
flags, writes its outputs under a run-id directory derived from the config
hash and the effective seed, and echoes that seed into a run_info file.
Exit codes: 0 success, 1 validation error, 2 runtime or numeric failure,
3 acceptance failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import acceptance as acceptance_mod
from .attacks import BudgetError, PerturbationBudget, blur_attack, pgd, spatial_attack
from .blurcore import BlurSpec, DomainError, ShapeError, blur_gradient_check
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from .data import DataError, load_images, load_manifest, synth_generate
from .detector import Detector, NumericError, ValidationError
from .evaluate import EvalReport, MetricError, accuracy, auc, plot_metric_bars
from .training import build_generators, train

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_ACCEPTANCE = 3

_VALIDATION_ERRORS = (
    ConfigError, ValidationError, BudgetError, DataError, DomainError, ShapeError,
    CheckpointError, MetricError, FileNotFoundError,
)


def _apply_threads(cfg: ExperimentConfig) -> None:
    if cfg.threads > 0:
        torch.set_num_threads(cfg.threads)


def _write_run_info(run_dir: Path, cfg: ExperimentConfig, command: str, extra=None) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    info = {
        "command": command,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash,
        "threads": cfg.threads,
    }
    if extra:
        info.update(extra)
    (run_dir / "run_info.json").write_text(json.dumps(info, sort_keys=True, indent=2) + "\n")


def _require_dataset(cfg: ExperimentConfig) -> Path:
    manifest = cfg.dataset_dir() / "manifest.jsonl"
    if not manifest.exists():
        raise DataError(
            f"dataset manifest {manifest} not found; run `advblur synth --config ...` first"
        )
    return manifest


def _load_cell(cfg, manifest, split, family, quality):
    records = load_manifest(manifest, split=split, family=family, quality=quality)
    return load_images(records, manifest.parent)


def _detector_from_config(cfg: ExperimentConfig) -> Detector:
    return Detector(
        backbone=cfg.detector["backbone"],
        channels_in=cfg.detector["channels_in"],
        width=cfg.detector["width"],
        init_seed=cfg.seed,
    )


def _detector_from_checkpoint(path) -> tuple[Detector, dict]:
    meta, arrays = load_checkpoint(path)
    arch = meta["arch"]
    det = Detector(
        backbone=arch["backbone"], channels_in=arch["channels_in"], width=arch["width"],
        init_seed=int(meta.get("seed", 0)),
    )
    det.load_parameter_arrays(
        {
            k[len("detector."):]: v
            for k, v in arrays.items()
            if k.startswith("detector.") and not k.startswith("detector.opt.")
        }
    )
    return det, meta


def cmd_synth(cfg: ExperimentConfig) -> int:
    _apply_threads(cfg)
    out = cfg.dataset_dir()
    records = synth_generate(cfg.data, out)
    _write_run_info(out, cfg, "synth", {"n_records": len(records)})
    print(f"dataset: {out} ({len(records)} records)")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, resume: bool) -> int:
    _apply_threads(cfg)
    manifest = _require_dataset(cfg)
    family, quality = cfg.eval["train_cell"]
    train_set = _load_cell(cfg, manifest, "train", family, quality)
    try:
        val_set = _load_cell(cfg, manifest, "val", family, quality)
    except DataError:
        val_set = None

    run_dir = cfg.run_dir(f"train-{cfg.train.regime}")
    detector = _detector_from_config(cfg)
    generators = build_generators(cfg.train, channels_in=cfg.detector["channels_in"])
    result = train(
        detector, train_set, cfg.train, val_set=val_set, generators=generators,
        out_dir=run_dir, resume=resume,
    )

    with open(run_dir / "log.jsonl", "w", encoding="utf-8") as fh:
        for record in result.log:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    _write_run_info(run_dir, cfg, "train", {"regime": cfg.train.regime})
    print(f"trained {cfg.train.regime}: checkpoints and log in {run_dir}")
    return EXIT_OK


def _craft(cfg, detector, images, labels, kernel_size):
    attack = cfg.attack
    family = attack["family"]
    if family == "blur":
        budget = PerturbationBudget(
            family="blur", epsilon=attack["epsilon"], steps=attack["steps"],
            step_size=attack.get("step_size"),
        )
        example, sigma = blur_attack(
            detector, images, labels, budget,
            sigma_init=attack["sigma_init"], spec=BlurSpec(k=kernel_size),
        )
        return example, {"sigma_map": sigma.numpy()}
    if family == "additive":
        budget = PerturbationBudget(
            family="additive", epsilon=attack["epsilon"], steps=attack["steps"],
            step_size=attack.get("step_size"),
        )
        return pgd(detector, images, labels, budget), {}
    if family == "spatial":
        budget = PerturbationBudget(
            family="spatial", epsilon=attack["epsilon"], steps=attack["steps"],
            step_size=attack.get("step_size"), flow_reg=attack.get("flow_reg", 0.05),
        )
        example, (du, dv) = spatial_attack(detector, images, labels, budget)
        return example, {"flow_du": du.numpy(), "flow_dv": dv.numpy()}
    raise ConfigError(f"unknown attack family {family!r}")


def cmd_attack(cfg: ExperimentConfig, checkpoint: str) -> int:
    _apply_threads(cfg)
    manifest = _require_dataset(cfg)
    detector, _ = _detector_from_checkpoint(checkpoint)
    family, quality = cfg.eval["train_cell"]
    images, labels = _load_cell(cfg, manifest, cfg.eval["split"], family, quality)

    run_dir = cfg.run_dir("attack")
    run_dir.mkdir(parents=True, exist_ok=True)
    report = EvalReport(metadata={"seed": cfg.seed, "config_hash": cfg.config_hash,
                                  "attack": cfg.attack["family"]})
    clean_scores = detector.fake_scores(images)
    report.cells["clean"] = {
        "auc": auc(clean_scores, labels.numpy()),
        "acc": accuracy(clean_scores, labels.numpy(), cfg.eval["threshold"]),
    }

    sweep = cfg.attack["kernel_sweep"] if cfg.attack["family"] == "blur" else [cfg.attack["kernel_size"]]
    for k in sweep:
        example, extras = _craft(cfg, detector, images, labels, k)
        scores = detector.fake_scores(example.image)
        key = f"adversarial|k={k}" if cfg.attack["family"] == "blur" else "adversarial"
        report.cells[key] = {
            "auc": auc(scores, labels.numpy()),
            "acc": accuracy(scores, labels.numpy(), cfg.eval["threshold"]),
        }
        arrays = {"images": example.image.numpy(), "labels": labels.numpy()}
        arrays.update(extras)
        save_checkpoint(
            run_dir / f"adversarial_k{k}.ckpt",
            {"provenance": _jsonable(example.provenance), "seed": cfg.seed}, arrays,
        )

    report.save(run_dir / "report.json")
    _write_run_info(run_dir, cfg, "attack")
    print(report.flat_table())
    print(f"attack outputs in {run_dir}")
    return EXIT_OK


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def cmd_eval(cfg: ExperimentConfig, checkpoints: list[str], plot: bool) -> int:
    _apply_threads(cfg)
    manifest = _require_dataset(cfg)
    run_dir = cfg.run_dir("eval")
    run_dir.mkdir(parents=True, exist_ok=True)

    report = EvalReport(metadata={"seed": cfg.seed, "config_hash": cfg.config_hash})
    split = cfg.eval["split"]
    cells = [tuple(cfg.eval["train_cell"])]
    cells += [tuple(c) for c in cfg.eval["unseen_family_cells"]]
    cells += [tuple(c) for c in cfg.eval["unseen_quality_cells"]]

    for ckpt in checkpoints:
        detector, meta = _detector_from_checkpoint(ckpt)
        condition = f"{meta.get('regime', 'model')}-s{meta.get('seed', 0)}"
        for family, quality in cells:
            key = EvalReport.cell_key(condition, family, quality)
            try:
                images, labels = _load_cell(cfg, manifest, split, family, quality)
            except DataError as exc:
                report.mark_skipped(key, str(exc))
                continue
            scores = detector.fake_scores(images)
            report.add_cell(key, scores, labels.numpy())

    report.save(run_dir / "report.json")
    if plot:
        plot_metric_bars(report, run_dir / "report.svg")
    _write_run_info(run_dir, cfg, "eval", {"n_models": len(checkpoints)})
    print(report.flat_table())
    print(f"eval report in {run_dir}")
    return EXIT_OK


def cmd_grad_check(cfg: ExperimentConfig) -> int:
    _apply_threads(cfg)
    rng = np.random.default_rng(cfg.seed)
    worst_sigma = worst_rho = 0.0
    for _ in range(5):
        img = torch.as_tensor(rng.uniform(0, 1, size=(8, 8, 1)))
        sig = torch.as_tensor(rng.uniform(0.5, 2.0, size=(8, 8)))
        worst_sigma = max(worst_sigma, blur_gradient_check(
            img, sig, BlurSpec(k=3), lambda x: (x * x).sum(), fd_step=1e-3))
        worst_rho = max(worst_rho, blur_gradient_check(
            img, sig, BlurSpec(k=3), lambda x: (x * x).sum(), fd_step=1e-3,
            parameterization="rho"))
    ok = worst_sigma < 1e-4 and worst_rho < 1e-4
    print(f"sigma-gradient max relative error: {worst_sigma:.3g}")
    print(f"rho-gradient   max relative error: {worst_rho:.3g}")
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_reproduce(cfg: ExperimentConfig, only: str | None) -> int:
    _apply_threads(cfg)
    run_dir = cfg.run_dir("reproduce")
    run_dir.mkdir(parents=True, exist_ok=True)
    results = acceptance_mod.run_criteria(cfg, only=only, workspace=run_dir)
    doc = {
        r.name: {"passed": r.passed, "details": r.details} for r in results
    }
    (run_dir / "acceptance.json").write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    _write_run_info(run_dir, cfg, "reproduce", {"only": only})
    failed = [r for r in results if not r.passed]
    return EXIT_ACCEPTANCE if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advblur",
        description="Adversarial-game training experiments for forgery detectors",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="overrides config and env seed")
        p.add_argument("--out", default=None, help="output root directory")

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    common(p)

    p = sub.add_parser("train", help="train a detector under a regime")
    common(p)
    p.add_argument("--regime", default=None, help="override the training regime")
    p.add_argument("--resume", action="store_true", help="resume from the newest epoch checkpoint")

    p = sub.add_parser("attack", help="craft adversarial examples against a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("eval", help="evaluate checkpoints over the benchmark grid")
    common(p)
    p.add_argument("--checkpoint", required=True, nargs="+")
    p.add_argument("--plot", action="store_true", help="also render a bar chart (SVG)")

    p = sub.add_parser("grad-check", help="finite-difference check of the blur gradients")
    common(p)

    p = sub.add_parser("reproduce", help="run the acceptance suite")
    common(p)
    p.add_argument("--only", default=None, help="run a single criterion by name")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(
            args.config, seed_flag=args.seed, out_flag=args.out,
            regime_flag=getattr(args, "regime", None),
        )
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "train":
            return cmd_train(cfg, resume=args.resume)
        if args.command == "attack":
            return cmd_attack(cfg, args.checkpoint)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.plot)
        if args.command == "grad-check":
            return cmd_grad_check(cfg)
        if args.command == "reproduce":
            return cmd_reproduce(cfg, args.only)
        raise ConfigError(f"unknown command {args.command!r}")
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, RuntimeError, ArithmeticError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
