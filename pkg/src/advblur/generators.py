"""Learned sigma-map generators and the adversarial game against the detector.

A small encoder-decoder CNN maps an image to a per-pixel reciprocal-sigma map
(bounded by construction), the blur operator turns that into an "enhanced"
image, and generator/detector steps alternate on the resulting min-max
objective: the generator ascends the detector loss on generated examples, the
detector descends the sum of clean and generated losses.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .blurcore import DTYPE, RHO_MAX, RHO_MIN, BlurSpec, ShapeError, blur_apply
from .detector import NumericError
from .seeding import derive_int_seed


class _ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.InstanceNorm2d(channels, affine=True),
            nn.ReLU(),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.InstanceNorm2d(channels, affine=True),
        )

    def forward(self, x):
        return x + self.body(x)


class SigmaGenerator(nn.Module):
    """Encoder-decoder producing a bounded reciprocal-sigma map per pixel.

    Two stride-2 downsampling convolutions, ``n_residual`` residual blocks,
    two nearest-neighbor upsampling stages, and a 1-channel head squashed
    through a sigmoid onto [rho_min, rho_max] in log space. The head bias is
    set so a fresh generator emits sigma close to ``init_sigma`` everywhere.
    """

    def __init__(self, channels_in: int = 3, width: int = 16, n_residual: int = 3,
                 rho_min: float = RHO_MIN, rho_max: float = RHO_MAX,
                 init_sigma: float = 1.0, init_seed: int = 0, role: str = "shared"):
        super().__init__()
        if not (rho_min < 1.0 / init_sigma < rho_max):
            raise ValueError(f"init_sigma {init_sigma} not strictly inside sigma bounds")
        self.arch = {
            "channels_in": channels_in,
            "width": width,
            "n_residual": n_residual,
            "rho_min": rho_min,
            "rho_max": rho_max,
            "init_sigma": init_sigma,
            "role": role,
        }
        self.rho_min = rho_min
        self.rho_max = rho_max
        torch.manual_seed(derive_int_seed(init_seed, "generator-init", role))
        w = width
        self.encoder = nn.Sequential(
            nn.Conv2d(channels_in, w, 7, padding=3, padding_mode="reflect"),
            nn.InstanceNorm2d(w, affine=True),
            nn.ReLU(),
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1),
            nn.InstanceNorm2d(2 * w, affine=True),
            nn.ReLU(),
            nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1),
            nn.InstanceNorm2d(4 * w, affine=True),
            nn.ReLU(),
        )
        self.blocks = nn.Sequential(*[_ResidualBlock(4 * w) for _ in range(n_residual)])
        self.decoder = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(4 * w, 2 * w, 3, padding=1),
            nn.InstanceNorm2d(2 * w, affine=True),
            nn.ReLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * w, w, 3, padding=1),
            nn.InstanceNorm2d(w, affine=True),
            nn.ReLU(),
        )
        self.head = nn.Conv2d(w, 1, 3, padding=1)

        # small head weights + matched bias keep the initial map near init_sigma
        t0 = (math.log(1.0 / init_sigma) - math.log(rho_min)) / (
            math.log(rho_max) - math.log(rho_min)
        )
        with torch.no_grad():
            self.head.weight.normal_(0.0, 0.02)
            self.head.bias.fill_(math.log(t0 / (1.0 - t0)))
        self.to(DTYPE)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        """Reciprocal-sigma map of shape (n, h, w), inside [rho_min, rho_max]."""
        x = torch.as_tensor(images, dtype=DTYPE)
        single = x.ndim == 3
        if single:
            x = x.unsqueeze(0)
        h, w = x.shape[1], x.shape[2]
        if h % 4 != 0 or w % 4 != 0:
            raise ShapeError(f"generator needs h, w divisible by 4, got {h}x{w}")
        z = self.head(self.decoder(self.blocks(self.encoder(x.permute(0, 3, 1, 2)))))
        t = torch.sigmoid(z.squeeze(1))
        log_rho = math.log(self.rho_min) + t * (math.log(self.rho_max) - math.log(self.rho_min))
        rho = torch.exp(log_rho)
        return rho.squeeze(0) if single else rho


@dataclass
class GeneratorPair:
    """One generator per class; the training loop routes samples by label."""

    g_real: SigmaGenerator
    g_fake: SigmaGenerator

    def rho_for_batch(self, images: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        x = torch.as_tensor(images, dtype=DTYPE)
        y = torch.as_tensor(labels).reshape(-1)
        n, h, w, _ = x.shape
        rho = torch.zeros(n, h, w, dtype=DTYPE)
        real = y == 0
        fake = y == 1
        parts = []
        if real.any():
            parts.append((real, self.g_real(x[real])))
        if fake.any():
            parts.append((fake, self.g_fake(x[fake])))
        for mask, values in parts:
            rho = rho.index_put((mask.nonzero(as_tuple=True)[0],), values)
        return rho

    def parameters(self):
        yield from self.g_real.parameters()
        yield from self.g_fake.parameters()


def _rho_for(gen_or_pair, images, labels):
    if isinstance(gen_or_pair, GeneratorPair):
        return gen_or_pair.rho_for_batch(images, labels)
    return gen_or_pair(images)


def generate_sigma(generator, image) -> torch.Tensor:
    """Sigma map for an image (or batch); deterministic for fixed parameters."""
    rho = generator(torch.as_tensor(image, dtype=DTYPE))
    return 1.0 / rho


def generated_examples(gen_or_pair, images, labels, spec: BlurSpec) -> torch.Tensor:
    """Blur the batch with generator-produced sigma maps."""
    rho = _rho_for(gen_or_pair, images, labels)
    return blur_apply(images, 1.0 / rho, spec)


@contextlib.contextmanager
def _frozen(module: nn.Module):
    states = [p.requires_grad for p in module.parameters()]
    for p in module.parameters():
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, state in zip(module.parameters(), states):
            p.requires_grad_(state)


def gen_adv_step(detector, gen_or_pair, images, labels, optimizer,
                 spec: BlurSpec = BlurSpec(k=9)) -> float:
    """One ascent step on the generator parameters; detector stays frozen.

    Returns the detector loss on the generated examples (the quantity the
    generator is maximizing).
    """
    with _frozen(detector):
        loss = detector.loss(generated_examples(gen_or_pair, images, labels, spec), labels)
        if not torch.isfinite(loss):
            raise NumericError(f"non-finite generator-game loss on batch of {len(labels)}")
        optimizer.zero_grad()
        (-loss).backward()
        optimizer.step()
    return loss.item()


def detector_step_on_game(detector, gen_or_pair, images, labels, optimizer,
                          spec: BlurSpec = BlurSpec(k=9)):
    """One descent step on clean loss plus generated-example loss (equal weights)."""
    with torch.no_grad():
        blurred = generated_examples(gen_or_pair, images, labels, spec)
    clean_loss = detector.loss(images, labels)
    gen_loss = detector.loss(blurred, labels)
    total = clean_loss + gen_loss
    if not torch.isfinite(total):
        raise NumericError(f"non-finite detector-game loss on batch of {len(labels)}")
    optimizer.zero_grad()
    total.backward()
    optimizer.step()
    return clean_loss.item(), gen_loss.item()
