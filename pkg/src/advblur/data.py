"""Synthetic forgery benchmark: generation, manifests, and loading.

Real samples are smooth random low-frequency fields with mild sensor noise.
Fake samples add, inside a random elliptical "manipulated" region, a subtle
low-frequency blending trace that every family shares, plus one
family-specific high-frequency artifact: a checkerboard patch (upsampling
artifacts), a seam ring along the region boundary (blending boundary), or a
high-variance noise patch (generator residue). Every sample is rendered at
three quality tiers through the JPEG simulator; same content, different
compression, mirroring a RAW / mid / low quality grid.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from .blurcore import DTYPE
from .jpegsim import jpeg_compress
from .seeding import derive_rng

FAMILIES = ("checker", "seam", "residual")
QUALITIES = ("q_raw", "q_mid", "q_low")
SPLITS = ("train", "val", "test")

MANIFEST_NAME = "manifest.jsonl"
SCHEMA_NAME = "schema.json"
MANIFEST_FIELDS = ("path", "label", "family", "quality", "split")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class SampleRecord:
    path: str
    label: str  # "real" | "fake"
    family: str  # artifact family for fakes, "none" for reals
    quality: str
    split: str

    def __post_init__(self):
        if self.label not in ("real", "fake"):
            raise DataError(f"label must be real/fake, got {self.label!r}")
        if self.label == "real" and self.family != "none":
            raise DataError("real samples must carry family=none")
        if self.label == "fake" and self.family == "none":
            raise DataError("fake samples need an artifact family")

    @property
    def cell_family(self) -> str:
        """Family of the benchmark cell this record belongs to.

        Reals are paired with the fakes generated from the same bases; the
        pairing is encoded in the directory layout (split/family/quality).
        """
        parts = Path(self.path).parts
        return parts[-3] if len(parts) >= 4 else self.family

    @property
    def label_index(self) -> int:
        return 1 if self.label == "fake" else 0

    def to_json(self) -> str:
        return json.dumps(
            {k: getattr(self, k) for k in MANIFEST_FIELDS}, sort_keys=True
        )


@dataclass(frozen=True)
class SynthSpec:
    """Benchmark geometry, texture statistics, and artifact strengths."""

    size: int = 64
    channels: int = 3
    counts: dict = field(default_factory=lambda: {"train": 40, "val": 16, "test": 32})
    families: tuple = FAMILIES
    qualities: dict = field(default_factory=lambda: {"q_mid": 75.0, "q_low": 22.0})
    # real texture: smooth base field plus mid-frequency grain whose energy
    # varies per image, so raw high-frequency energy alone does not separate
    # reals from weak artifacts
    n_waves: int = 6
    max_cycles: float = 2.5  # wavelengths across the image
    contrast: float = 0.12
    color_variation: float = 0.04
    texture_waves: int = 12
    texture_cycles: tuple = (8.0, 16.0)
    texture_amplitude: tuple = (0.01, 0.05)
    grain_noise_amplitude: tuple = (0.005, 0.025)
    sensor_noise: float = 0.02
    # manipulated region
    region_radius: tuple = (0.18, 0.30)  # fraction of image size
    region_center: tuple = (0.35, 0.65)
    # family-agnostic blending trace
    trace_amplitude: tuple = (0.035, 0.06)
    trace_feather: float = 0.22
    # per-family artifacts
    checker_amplitude: float = 0.05
    seam_amplitude: float = 0.06
    seam_width: float = 0.08
    seam_contrast_mismatch: float = 0.20
    residual_noise: float = 0.025
    seed: int = 0

    def __post_init__(self):
        if self.size % 4 != 0:
            raise DataError("image size must be divisible by 4 for the generators")
        for split in self.counts:
            if split not in SPLITS:
                raise DataError(f"unknown split {split!r}")
        for fam in self.families:
            if fam not in FAMILIES:
                raise DataError(f"unknown family {fam!r}")
        for q in self.qualities:
            if q not in ("q_mid", "q_low"):
                raise DataError(f"unknown compressed quality tier {q!r}")


def _smooth_field(rng: np.random.Generator, size: int, n_waves: int, max_cycles: float) -> np.ndarray:
    """Sum of random low-frequency plane waves, roughly unit amplitude."""
    ii, jj = np.indices((size, size), dtype=np.float64)
    out = np.zeros((size, size))
    for _ in range(n_waves):
        fi, fj = rng.uniform(-max_cycles, max_cycles, size=2) / size
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.5, 1.0)
        out += amp * np.cos(2 * np.pi * (fi * ii + fj * jj) + phase)
    return out / math.sqrt(n_waves)


def _texture_field(rng: np.random.Generator, size: int, n_waves: int, cycles: tuple) -> np.ndarray:
    """Band-limited mid-frequency grain; wavelengths of a few pixels."""
    ii, jj = np.indices((size, size), dtype=np.float64)
    out = np.zeros((size, size))
    for _ in range(n_waves):
        f = rng.uniform(*cycles) / size
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        out += np.cos(2 * np.pi * f * (np.cos(theta) * ii + np.sin(theta) * jj) + phase)
    return out / math.sqrt(n_waves)


def _region(rng: np.random.Generator, spec: SynthSpec):
    """Normalized elliptical radius map of a random manipulated region."""
    size = spec.size
    cy, cx = rng.uniform(*spec.region_center, size=2) * size
    ry, rx = rng.uniform(*spec.region_radius, size=2) * size
    theta = rng.uniform(0, np.pi)
    ii, jj = np.indices((size, size), dtype=np.float64)
    di, dj = ii - cy, jj - cx
    u = di * np.cos(theta) + dj * np.sin(theta)
    v = -di * np.sin(theta) + dj * np.cos(theta)
    return np.sqrt((u / ry) ** 2 + (v / rx) ** 2)


def _base_image(rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    lum = 0.5 + spec.contrast * _smooth_field(rng, spec.size, spec.n_waves, spec.max_cycles)
    grain_amp = rng.uniform(*spec.texture_amplitude)
    lum = lum + grain_amp * _texture_field(rng, spec.size, spec.texture_waves, spec.texture_cycles)
    noise_amp = rng.uniform(*spec.grain_noise_amplitude)
    lum = lum + noise_amp * rng.standard_normal(lum.shape)
    chans = []
    for _ in range(spec.channels):
        offset = spec.color_variation * _smooth_field(rng, spec.size, 3, spec.max_cycles)
        chans.append(lum + offset)
    return np.stack(chans, axis=2)


def _apply_family_artifact(fake: np.ndarray, family: str, r: np.ndarray,
                           rng: np.random.Generator, spec: SynthSpec) -> np.ndarray:
    interior = (r < 0.85).astype(np.float64)[:, :, None]
    if family == "checker":
        ii, jj = np.indices(r.shape)
        pi, pj = rng.integers(0, 2, size=2)
        pattern = (((ii + pi) + (jj + pj)) % 2 * 2.0 - 1.0)[:, :, None]
        return fake + spec.checker_amplitude * pattern * interior
    if family == "seam":
        ring = np.exp(-(((r - 1.0) / spec.seam_width) ** 2))[:, :, None]
        edge_sign = 1.0 if rng.uniform() < 0.5 else -1.0
        out = fake + edge_sign * spec.seam_amplitude * ring
        # statistics mismatch: contrast rescaled toward the mean inside the region
        soft = (1.0 / (1.0 + np.exp((r - 1.0) / 0.05)))[:, :, None]
        mean_in = out.mean(axis=(0, 1), keepdims=True)
        return out + soft * spec.seam_contrast_mismatch * (out - mean_in)
    if family == "residual":
        noise = rng.standard_normal(fake.shape)
        return fake + spec.residual_noise * noise * interior
    raise DataError(f"unknown family {family!r}")


def _make_pair(rng: np.random.Generator, family: str, spec: SynthSpec):
    """One (real, fake) float pair sharing the same base content."""
    base = _base_image(rng, spec)
    real = base + rng.normal(0, spec.sensor_noise, size=base.shape)

    r = _region(rng, spec)
    trace_amp = rng.uniform(*spec.trace_amplitude)
    trace_mask = 1.0 / (1.0 + np.exp((r - 1.0) / spec.trace_feather))
    fake = base + trace_amp * trace_mask[:, :, None]
    fake = _apply_family_artifact(fake, family, r, rng, spec)
    fake = fake + rng.normal(0, spec.sensor_noise, size=base.shape)
    return np.clip(real, 0.0, 1.0), np.clip(fake, 0.0, 1.0)


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def render_quality(img: np.ndarray, quality_tier: str, spec: SynthSpec) -> np.ndarray:
    """8-bit rendition of a float image at a quality tier."""
    q8 = _quantize(img)
    if quality_tier == "q_raw":
        return q8
    quality = spec.qualities[quality_tier]
    return _quantize(jpeg_compress(q8.astype(np.float64) / 255.0, quality))


def _save_png(arr: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "RGB" if arr.ndim == 3 and arr.shape[2] == 3 else "L"
    img = PILImage.fromarray(arr.squeeze() if mode == "L" else arr, mode=mode)
    img.save(path, format="PNG", compress_level=6)


def synth_generate(spec: SynthSpec, out_dir) -> list[SampleRecord]:
    """Write the benchmark to disk; returns the manifest records.

    Deterministic: identical spec and seed produce byte-identical trees. The
    per-sample generator streams are keyed by (seed, split, family, index), so
    splits draw from disjoint randomness and no test base can leak into train.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records: list[SampleRecord] = []
    tiers = ("q_raw",) + tuple(sorted(spec.qualities))

    for split in (s for s in SPLITS if s in spec.counts):
        for family in spec.families:
            for i in range(spec.counts[split]):
                rng = derive_rng(spec.seed, "sample", split, family, i)
                real, fake = _make_pair(rng, family, spec)
                for tier in tiers:
                    for label, img in (("real", real), ("fake", fake)):
                        rel = Path(split) / family / tier / f"{label}_{i:04d}.png"
                        _save_png(render_quality(img, tier, spec), out / rel)
                        records.append(
                            SampleRecord(
                                path=str(rel),
                                label=label,
                                family=family if label == "fake" else "none",
                                quality=tier,
                                split=split,
                            )
                        )

    with open(out / MANIFEST_NAME, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    with open(out / SCHEMA_NAME, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "version": 1,
                "fields": list(MANIFEST_FIELDS),
                "labels": ["real", "fake"],
                "families": list(FAMILIES) + ["none"],
                "qualities": list(QUALITIES),
                "splits": list(SPLITS),
            },
            fh,
            sort_keys=True,
            indent=2,
        )
        fh.write("\n")
    return records


def load_manifest(manifest_path, split=None, family=None, quality=None, label=None) -> list[SampleRecord]:
    """Records matching the filters, in manifest order; paths are verified.

    The family filter selects a benchmark cell: fakes of that family plus the
    reals paired with them (reals carry family=none but live in the cell
    directory of the family they were generated against).
    """
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    root = manifest_path.parent
    records = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            raw = json.loads(line)
            unknown = set(raw) - set(MANIFEST_FIELDS)
            if unknown:
                raise DataError(f"manifest line {line_no}: unknown fields {sorted(unknown)}")
            rec = SampleRecord(**raw)
            if split is not None and rec.split != split:
                continue
            if family is not None and rec.cell_family != family:
                continue
            if quality is not None and rec.quality != quality:
                continue
            if label is not None and rec.label != label:
                continue
            if not (root / rec.path).exists():
                raise DataError(f"missing file for record {rec.path} (line {line_no})")
            records.append(rec)
    return records


def load_images(records: list[SampleRecord], root) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack records into (images, labels) tensors; images in [0, 1] float64."""
    root = Path(root)
    imgs, labels = [], []
    for rec in records:
        arr = np.asarray(PILImage.open(root / rec.path), dtype=np.float64) / 255.0
        if arr.ndim == 2:
            arr = arr[:, :, None]
        imgs.append(arr)
        labels.append(rec.label_index)
    if not imgs:
        raise DataError("no records to load")
    return torch.as_tensor(np.stack(imgs), dtype=DTYPE), torch.tensor(labels, dtype=torch.long)


def audit_no_leakage(records: list[SampleRecord]) -> None:
    """Paths are unique and each lives under its own split directory."""
    seen = set()
    for rec in records:
        if rec.path in seen:
            raise DataError(f"duplicate path {rec.path}")
        seen.add(rec.path)
        top = Path(rec.path).parts[0]
        if top != rec.split:
            raise DataError(f"record {rec.path} claims split {rec.split} but lives in {top}/")


def validate_cells(records: list[SampleRecord], cells) -> None:
    """Every requested (family, quality, split) cell exists and is non-empty."""
    have = {(r.cell_family, r.quality, r.split) for r in records}
    for cell in cells:
        if tuple(cell) not in have:
            raise DataError(f"benchmark cell {cell} is empty or missing")
