"""Experiment configuration: one JSON file, strictly validated.

Unknown keys anywhere in the file are errors, so typos never silently fall
back to defaults. Sections map onto the dataclasses they configure.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .data import SynthSpec
from .training import OptimizerSettings, TrainConfig

SEED_ENV_VAR = "ADVBLUR_SEED"


class ConfigError(ValueError):
    pass


_TOP_KEYS = {"seed", "out", "threads", "data", "train", "detector", "attack", "eval", "acceptance"}
_DETECTOR_KEYS = {"backbone", "width", "channels_in"}
_ATTACK_KEYS = {
    "family", "epsilon", "steps", "step_size", "flow_reg", "kernel_size", "sigma_init",
    "kernel_sweep",
}
_EVAL_KEYS = {"train_cell", "unseen_family_cells", "unseen_quality_cells", "split", "threshold"}
_ACCEPTANCE_KEYS = {"seeds", "epochs", "counts", "detector_lr", "generator_lr", "gen_width",
                    "gen_rho_min", "blur_eval_epsilon", "blur_eval_steps"}


def _check_keys(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def _build(cls, section: dict, where: str, **overrides):
    allowed = {f.name for f in dataclasses.fields(cls)}
    _check_keys(section, allowed - set(overrides), where)
    try:
        return cls(**{**section, **overrides})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


@dataclass
class ExperimentConfig:
    seed: int
    out: Path
    threads: int
    data: SynthSpec
    train: TrainConfig
    detector: dict
    attack: dict
    eval: dict
    acceptance: dict
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True).encode("utf-8")
        return hashlib.sha256(canon).hexdigest()[:8]

    def section_hash(self, *sections: str) -> str:
        doc = {s: self.raw.get(s) for s in sections}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8")).hexdigest()[:8]

    def dataset_dir(self) -> Path:
        return self.out / f"dataset-{self.section_hash('data')}-s{self.seed}"

    def run_dir(self, command: str) -> Path:
        return self.out / f"{command}-{self.config_hash}-s{self.seed}"


def resolve_seed(flag_seed, config_seed) -> int:
    """Flag wins, then the environment variable, then the config file."""
    if flag_seed is not None:
        return int(flag_seed)
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from exc
    return int(config_seed)


def load_config(path, seed_flag=None, out_flag=None, regime_flag=None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    _check_keys(raw, _TOP_KEYS, str(path))

    seed = resolve_seed(seed_flag, raw.get("seed", 0))
    out = Path(out_flag) if out_flag is not None else Path(raw.get("out", "runs"))
    threads = int(raw.get("threads", 1))
    if threads < 0:
        raise ConfigError("threads must be >= 0 (0 keeps the runtime default)")

    data_section = dict(raw.get("data", {}))
    data_section["seed"] = seed
    data = _build(SynthSpec, data_section, "data section")

    train_section = dict(raw.get("train", {}))
    if regime_flag is not None:
        train_section["regime"] = regime_flag
    opt_section = train_section.pop("optimizer", {})
    optimizer = _build(OptimizerSettings, dict(opt_section), "train.optimizer")
    train = _build(TrainConfig, train_section, "train section", seed=seed, optimizer=optimizer)

    detector = dict(raw.get("detector", {}))
    _check_keys(detector, _DETECTOR_KEYS, "detector section")
    detector.setdefault("backbone", "small_cnn")
    detector.setdefault("width", 16)
    detector.setdefault("channels_in", data.channels)

    attack = dict(raw.get("attack", {}))
    _check_keys(attack, _ATTACK_KEYS, "attack section")
    attack.setdefault("family", "blur")
    attack.setdefault("epsilon", 0.1)
    attack.setdefault("steps", 1)
    attack.setdefault("kernel_size", 9)
    attack.setdefault("sigma_init", 1.0)
    attack.setdefault("kernel_sweep", [3, 5, 9])

    eval_section = dict(raw.get("eval", {}))
    _check_keys(eval_section, _EVAL_KEYS, "eval section")
    eval_section.setdefault("train_cell", ["checker", "q_mid"])
    eval_section.setdefault("unseen_family_cells", [["seam", "q_mid"], ["residual", "q_mid"]])
    eval_section.setdefault("unseen_quality_cells", [["checker", "q_raw"], ["checker", "q_low"]])
    eval_section.setdefault("split", "test")
    eval_section.setdefault("threshold", 0.5)

    acceptance = dict(raw.get("acceptance", {}))
    _check_keys(acceptance, _ACCEPTANCE_KEYS, "acceptance section")

    return ExperimentConfig(
        seed=seed, out=out, threads=threads, data=data, train=train,
        detector=detector, attack=attack, eval=eval_section, acceptance=acceptance,
        raw=raw,
    )
