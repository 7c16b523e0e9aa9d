"""Training regimes for the detector: clean, attack-based, game-based, augmented.

One function drives every regime from a TrainConfig: clean empirical risk,
per-batch crafting with any attack family mixed into the loss, alternating
generator/detector game steps (single or two-generator, optionally with an
additive step stacked on the generated examples), and classical augmentation.
Runs are deterministic for a fixed config and seed in single-threaded mode,
and per-epoch checkpoints carry enough state to resume bit-exactly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .attacks import PerturbationBudget, blur_attack, fgsm, pgd, spatial_attack
from .blurcore import BlurSpec, blur_apply
from .checkpoint import load_checkpoint, save_checkpoint
from .detector import Detector, NumericError, ValidationError, augment_traditional
from .evaluate import accuracy, auc
from .generators import GeneratorPair, SigmaGenerator, detector_step_on_game, gen_adv_step
from .seeding import derive_rng

REGIMES = (
    "normal",
    "aat",
    "sat",
    "bat_grad",
    "bat_gen",
    "bat_twogen",
    "combined",
    "aug_noise",
    "aug_blur",
    "aug_jpeg",
    "aug_combined",
)
GENERATOR_REGIMES = ("bat_gen", "bat_twogen", "combined")


@dataclass(frozen=True)
class OptimizerSettings:
    """RAdam settings; defaults follow the validated recipe."""

    lr: float = 5e-4
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 5e-4
    decay_gamma: float = 0.1
    decay_every: int = 10  # epochs


@dataclass(frozen=True)
class TrainConfig:
    regime: str = "normal"
    epochs: int = 10
    batch_size: int = 16
    seed: int = 0
    lambda_weight: float = 1.0  # clean + lambda * adversarial mixing
    optimizer: OptimizerSettings = OptimizerSettings()
    generator_lr: float = 2e-3
    gen_steps: int = 1  # generator steps per detector step
    kernel_size: int = 9
    sigma_init: float = 1.0
    gen_rho_min: float = 0.1
    gen_rho_max: float = 1000.0
    gen_width: int = 16
    additive_epsilon: float = 16.0 / 255.0
    additive_steps: int = 1
    spatial_epsilon: float = 2.0
    spatial_steps: int = 3
    spatial_flow_reg: float = 0.05
    blur_epsilon: float = 0.1
    blur_steps: int = 1

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValidationError(f"unknown regime {self.regime!r}; have {REGIMES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be positive")
        if self.lambda_weight < 0:
            raise ValidationError("lambda must be nonnegative")

    def blur_spec(self) -> BlurSpec:
        return BlurSpec(k=self.kernel_size)

    def budget(self, family: str) -> PerturbationBudget:
        if family == "additive":
            return PerturbationBudget(family="additive", epsilon=self.additive_epsilon,
                                      steps=self.additive_steps)
        if family == "spatial":
            return PerturbationBudget(family="spatial", epsilon=self.spatial_epsilon,
                                      steps=self.spatial_steps, flow_reg=self.spatial_flow_reg)
        if family == "blur":
            return PerturbationBudget(family="blur", epsilon=self.blur_epsilon,
                                      steps=self.blur_steps)
        raise ValidationError(f"unknown budget family {family!r}")


@dataclass
class TrainResult:
    detector: Detector
    generators: object  # None | SigmaGenerator | GeneratorPair
    log: list = field(default_factory=list)


def build_generators(config: TrainConfig, channels_in: int = 3):
    """Generators required by the regime, seeded from the config."""
    kwargs = dict(
        channels_in=channels_in,
        width=config.gen_width,
        rho_min=config.gen_rho_min,
        rho_max=config.gen_rho_max,
        init_sigma=config.sigma_init,
        init_seed=config.seed,
    )
    if config.regime == "bat_gen":
        return SigmaGenerator(role="shared", **kwargs)
    if config.regime in ("bat_twogen", "combined"):
        return GeneratorPair(
            g_real=SigmaGenerator(role="real", **kwargs),
            g_fake=SigmaGenerator(role="fake", **kwargs),
        )
    return None


def _epoch_lr(settings: OptimizerSettings, epoch: int) -> float:
    return settings.lr * settings.decay_gamma ** (epoch // settings.decay_every)


def _craft_adversarial(detector, x, y, config: TrainConfig):
    regime = config.regime
    if regime == "aat":
        budget = config.budget("additive")
        if budget.steps == 1:
            return fgsm(detector, x, y, budget.epsilon).image
        return pgd(detector, x, y, budget).image
    if regime == "sat":
        example, _ = spatial_attack(detector, x, y, config.budget("spatial"))
        return example.image
    if regime == "bat_grad":
        example, _ = blur_attack(
            detector, x, y, config.budget("blur"),
            sigma_init=config.sigma_init, spec=config.blur_spec(),
        )
        return example.image
    raise ValidationError(f"regime {regime!r} does not craft per-batch examples")


def _optimizer_state_arrays(optimizer) -> dict:
    arrays = {}
    state = optimizer.state_dict()["state"]
    for idx in sorted(state):
        for key in sorted(state[idx]):
            value = state[idx][key]
            tensor = value if isinstance(value, torch.Tensor) else torch.tensor(value)
            arrays[f"opt.{idx}.{key}"] = tensor.detach().cpu().numpy()
    return arrays


def _load_optimizer_state(optimizer, arrays: dict) -> None:
    state_dict = optimizer.state_dict()
    state = {}
    for name, arr in arrays.items():
        if not name.startswith("opt."):
            continue
        _, idx, key = name.split(".", 2)
        entry = state.setdefault(int(idx), {})
        tensor = torch.as_tensor(arr)
        entry[key] = tensor.reshape(()) if tensor.ndim == 0 or key == "step" else tensor
    state_dict["state"] = state
    optimizer.load_state_dict(state_dict)


def _checkpoint_payload(detector, generators, optimizers) -> dict:
    arrays = {f"detector.{k}": v for k, v in detector.parameter_arrays().items()}
    gens = _generator_list(generators)
    for tag, gen in gens:
        for k, v in gen.state_dict().items():
            arrays[f"{tag}.{k}"] = v.detach().numpy().copy()
    for tag, opt in optimizers.items():
        for k, v in _optimizer_state_arrays(opt).items():
            arrays[f"{tag}.{k}"] = v
    return arrays


def _generator_list(generators):
    if generators is None:
        return []
    if isinstance(generators, GeneratorPair):
        return [("gen_real", generators.g_real), ("gen_fake", generators.g_fake)]
    return [("gen", generators)]


def _restore_from_arrays(detector, generators, optimizers, arrays: dict) -> None:
    det_arrays = {
        k[len("detector."):]: v
        for k, v in arrays.items()
        if k.startswith("detector.") and not k.startswith("detector.opt.")
    }
    detector.load_parameter_arrays(det_arrays)
    for tag, gen in _generator_list(generators):
        prefix = f"{tag}."
        gen_arrays = {
            k[len(prefix):]: v
            for k, v in arrays.items()
            if k.startswith(prefix) and not k[len(prefix):].startswith("opt.")
        }
        gen.load_state_dict({k: torch.as_tensor(v) for k, v in gen_arrays.items()})
    for tag, opt in optimizers.items():
        prefix = f"{tag}.opt."
        opt_arrays = {
            "opt." + k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)
        }
        if opt_arrays:
            _load_optimizer_state(opt, opt_arrays)


def latest_epoch_checkpoint(out_dir) -> Path | None:
    out = Path(out_dir)
    if not out.exists():
        return None
    candidates = sorted(out.glob("epoch_*.ckpt"))
    return candidates[-1] if candidates else None


def train(detector: Detector, train_set, config: TrainConfig, val_set=None,
          generators=None, out_dir=None, resume: bool = False) -> TrainResult:
    """Run one training regime end to end.

    ``train_set`` and ``val_set`` are (images, labels) pairs with images
    shaped (n, h, w, c) in [0, 1]. Generator regimes require
    ``generators`` (build with :func:`build_generators`). When ``out_dir`` is
    set, a checkpoint is written after every epoch; with ``resume`` the run
    continues from the newest epoch checkpoint in that directory.
    """
    x_train, y_train = train_set
    x_train = torch.as_tensor(x_train)
    y_train = torch.as_tensor(y_train, dtype=torch.long)
    needs_gen = config.regime in GENERATOR_REGIMES
    if needs_gen and generators is None:
        raise ValidationError(f"regime {config.regime!r} requires generators")
    if not needs_gen and generators is not None:
        raise ValidationError(f"regime {config.regime!r} does not accept generators")

    settings = config.optimizer
    d_opt = torch.optim.RAdam(
        detector.parameters(), lr=settings.lr, betas=tuple(settings.betas),
        weight_decay=settings.weight_decay,
    )
    optimizers = {"detector": d_opt}
    if needs_gen:
        g_opt = torch.optim.RAdam(
            list(generators.parameters()), lr=config.generator_lr, betas=tuple(settings.betas)
        )
        optimizers["gen_opt"] = g_opt

    start_epoch = 0
    log: list[dict] = []
    if resume and out_dir is not None:
        ckpt = latest_epoch_checkpoint(out_dir)
        if ckpt is not None:
            meta, arrays = load_checkpoint(ckpt)
            _restore_from_arrays(detector, generators, optimizers, arrays)
            start_epoch = int(meta["epoch"]) + 1
            log = list(meta.get("log", []))

    n = len(y_train)
    spec = config.blur_spec()
    step_counter = start_epoch * max(1, (n + config.batch_size - 1) // config.batch_size)

    for epoch in range(start_epoch, config.epochs):
        t0 = time.time()
        lr = _epoch_lr(settings, epoch)
        for group in d_opt.param_groups:
            group["lr"] = lr

        order = derive_rng(config.seed, "order", epoch).permutation(n)
        epoch_loss = 0.0
        epoch_adv_loss = 0.0
        n_batches = 0

        for b_start in range(0, n, config.batch_size):
            idx = order[b_start : b_start + config.batch_size]
            x = x_train[idx]
            y = y_train[idx]
            b_index = b_start // config.batch_size

            if config.regime == "normal":
                loss = detector.loss(x, y)
                d_opt.zero_grad()
                loss.backward()
                d_opt.step()
                batch_loss, batch_adv = loss.item(), 0.0

            elif config.regime.startswith("aug_"):
                kind = config.regime.split("_", 1)[1]
                rng = derive_rng(config.seed, "augment", epoch, b_index)
                x_aug = augment_traditional(x, kind, rng)
                loss = detector.loss(x_aug, y)
                d_opt.zero_grad()
                loss.backward()
                d_opt.step()
                batch_loss, batch_adv = loss.item(), 0.0

            elif config.regime in ("aat", "sat", "bat_grad"):
                x_adv = _craft_adversarial(detector, x, y, config)
                clean_loss = detector.loss(x, y)
                adv_loss = detector.loss(x_adv, y)
                total = clean_loss + config.lambda_weight * adv_loss
                d_opt.zero_grad()
                total.backward()
                d_opt.step()
                batch_loss, batch_adv = clean_loss.item(), adv_loss.item()

            elif config.regime in ("bat_gen", "bat_twogen"):
                for _ in range(config.gen_steps):
                    gen_adv_step(detector, generators, x, y, optimizers["gen_opt"], spec)
                batch_loss, batch_adv = detector_step_on_game(
                    detector, generators, x, y, d_opt, spec
                )

            elif config.regime == "combined":
                for _ in range(config.gen_steps):
                    gen_adv_step(detector, generators, x, y, optimizers["gen_opt"], spec)
                with torch.no_grad():
                    rho = generators.rho_for_batch(x, y)
                    x_blur = blur_apply(x, 1.0 / rho, spec)
                x_adv = fgsm(detector, x_blur, y, config.additive_epsilon).image
                clean_loss = detector.loss(x, y)
                adv_loss = detector.loss(x_adv, y)
                total = clean_loss + config.lambda_weight * adv_loss
                d_opt.zero_grad()
                total.backward()
                d_opt.step()
                batch_loss, batch_adv = clean_loss.item(), adv_loss.item()

            else:
                raise ValidationError(f"unhandled regime {config.regime!r}")

            if not np.isfinite(batch_loss) or not np.isfinite(batch_adv):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {b_index}: "
                    f"clean={batch_loss} adv={batch_adv}"
                )
            epoch_loss += batch_loss
            epoch_adv_loss += batch_adv
            n_batches += 1
            step_counter += 1

        record = {
            "epoch": epoch,
            "regime": config.regime,
            "seed": config.seed,
            "lr": lr,
            "train_loss": epoch_loss / max(1, n_batches),
            "adv_loss": epoch_adv_loss / max(1, n_batches),
            "wall_time": time.time() - t0,
        }
        if val_set is not None:
            x_val, y_val = val_set
            scores = detector.fake_scores(torch.as_tensor(x_val))
            y_np = torch.as_tensor(y_val).numpy()
            record["val_acc"] = accuracy(scores, y_np)
            if 0 < y_np.sum() < len(y_np):
                record["val_auc"] = auc(scores, y_np)
        log.append(record)

        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            clean_log = [{k: v for k, v in r.items() if k != "wall_time"} for r in log]
            meta = {
                "epoch": epoch,
                "seed": config.seed,
                "regime": config.regime,
                "step": step_counter,
                "arch": detector.arch,
                "log": clean_log,
            }
            save_checkpoint(out / f"epoch_{epoch:04d}.ckpt", meta,
                            _checkpoint_payload(detector, generators, optimizers))

    return TrainResult(detector=detector, generators=generators, log=log)
