"""Binary forgery detector: backbone, loss, and traditional augmentation.

The default backbone is a small CNN (4 conv blocks, global average pool,
2-logit head) so experiments run in minutes on a CPU; any module mapping an
NCHW float64 batch to (n, 2) logits can be registered as a replacement
without touching the training regimes.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blurcore import DTYPE, BlurSpec, blur_apply
from .jpegsim import jpeg_compress
from .seeding import derive_int_seed


class ValidationError(ValueError):
    pass


class NumericError(RuntimeError):
    """Non-finite values in a model evaluation, with context for debugging."""


class SmallConvNet(nn.Module):
    """4 conv blocks + global average pool + linear head emitting 2 logits."""

    def __init__(self, channels_in: int = 3, width: int = 16):
        super().__init__()
        w = width
        self.features = nn.Sequential(
            nn.Conv2d(channels_in, w, 3, padding=1),
            nn.GroupNorm(4, w),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(w, 2 * w, 3, padding=1),
            nn.GroupNorm(4, 2 * w),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(2 * w, 4 * w, 3, padding=1),
            nn.GroupNorm(4, 4 * w),
            nn.ReLU(),
            nn.MaxPool2d(2),
            nn.Conv2d(4 * w, 4 * w, 3, padding=1),
            nn.GroupNorm(4, 4 * w),
            nn.ReLU(),
        )
        self.head = nn.Linear(4 * w, 2)

    def forward(self, x):
        feats = self.features(x)
        pooled = feats.mean(dim=(2, 3))
        return self.head(pooled)


BACKBONES = {"small_cnn": SmallConvNet}


def register_backbone(name: str, factory) -> None:
    BACKBONES[name] = factory


class Detector(nn.Module):
    """Wraps a backbone with the image-layout and loss conventions used here.

    Images are (n, h, w, c) float64 in [0, 1]; labels are 0 = real, 1 = fake.
    Evaluation-mode forward is deterministic for fixed parameters and input.
    """

    def __init__(self, backbone: str = "small_cnn", channels_in: int = 3, width: int = 16,
                 init_seed: int = 0):
        super().__init__()
        if backbone not in BACKBONES:
            raise ValidationError(f"unknown backbone {backbone!r}; have {sorted(BACKBONES)}")
        self.arch = {"backbone": backbone, "channels_in": channels_in, "width": width}
        torch.manual_seed(derive_int_seed(init_seed, "detector-init"))
        self.net = BACKBONES[backbone](channels_in=channels_in, width=width).to(DTYPE)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        x = torch.as_tensor(images, dtype=DTYPE)
        if x.ndim == 3:
            x = x.unsqueeze(0)
        logits = self.net(x.permute(0, 3, 1, 2))
        if not torch.isfinite(logits).all():
            raise NumericError(
                f"non-finite logits (input range [{x.min().item():.3g}, {x.max().item():.3g}])"
            )
        return logits

    def loss(self, images, labels, reduction: str = "mean") -> torch.Tensor:
        """Cross-entropy over the batch; labels must be in {0, 1}."""
        y = torch.as_tensor(labels, dtype=torch.long)
        if y.ndim == 0:
            y = y.unsqueeze(0)
        if not ((y == 0) | (y == 1)).all():
            raise ValidationError(f"labels must be 0 (real) or 1 (fake), got {y.unique().tolist()}")
        logits = self(images)
        return F.cross_entropy(logits, y, reduction=reduction)

    @torch.no_grad()
    def fake_scores(self, images) -> np.ndarray:
        """P(fake) per sample, as a numpy vector."""
        logits = self(images)
        return torch.softmax(logits, dim=1)[:, 1].numpy()

    def parameter_arrays(self) -> dict:
        return {k: v.detach().numpy().copy() for k, v in self.state_dict().items()}

    def load_parameter_arrays(self, arrays: dict) -> None:
        state = {k: torch.as_tensor(v) for k, v in arrays.items()}
        self.load_state_dict(state)


AUGMENT_KINDS = ("noise", "blur", "jpeg", "combined")

# validated augmentation settings: noise applied with probability 0.5, zero
# mean, per-image variance uniform in [0, 30] on the 0-255 pixel scale; blur
# with kernel size 9 and the same variance range; jpeg quality in [60, 100]
NOISE_P = 0.5
VARIANCE_RANGE = (0.0, 30.0)
JPEG_QUALITY_RANGE = (60.0, 100.0)
AUG_BLUR_KERNEL = 9


def _augment_noise(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    coin = rng.uniform()
    var = rng.uniform(*VARIANCE_RANGE)
    field = rng.standard_normal(img.shape)
    if coin >= NOISE_P:
        return img
    return np.clip(img + np.sqrt(var) / 255.0 * field, 0.0, 1.0)


def _augment_blur(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    var = rng.uniform(*VARIANCE_RANGE)
    sigma = max(float(np.sqrt(var)), 1e-3)
    spec = BlurSpec(k=AUG_BLUR_KERNEL)
    out = blur_apply(torch.as_tensor(img), torch.tensor(sigma, dtype=DTYPE), spec)
    return out.numpy()


def _augment_jpeg(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    quality = rng.uniform(*JPEG_QUALITY_RANGE)
    return jpeg_compress(img, quality)


def augment_traditional(images, kind: str, rng: np.random.Generator):
    """Classical augmentation on a copy of the batch (never in place)."""
    if kind not in AUGMENT_KINDS:
        raise ValidationError(f"augmentation kind must be one of {AUGMENT_KINDS}, got {kind!r}")
    batch = torch.as_tensor(images, dtype=DTYPE)
    single = batch.ndim == 3
    if single:
        batch = batch.unsqueeze(0)
    out = []
    for img in batch.numpy():
        if kind in ("noise", "combined"):
            img = _augment_noise(img, rng)
        if kind in ("blur", "combined"):
            img = _augment_blur(img, rng)
        if kind in ("jpeg", "combined"):
            img = _augment_jpeg(img, rng)
        out.append(torch.as_tensor(img, dtype=DTYPE))
    result = torch.stack(out)
    return result.squeeze(0) if single else result
