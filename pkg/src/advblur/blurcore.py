"""Differentiable pixel-wise Gaussian blurring.

Every pixel (i, j) of an image is replaced by the inner product of a k x k
Gaussian kernel, whose standard deviation comes from a per-pixel sigma map,
with the k x k neighborhood centred at that pixel. All tensors are float64
and the whole operation stays inside torch autograd, so gradients with
respect to the sigma map (or its reciprocal parameterization) are available.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

DTYPE = torch.float64

# Bounds for the reciprocal parameterization rho = 1/sigma. Optimizing rho
# instead of sigma keeps kernels well conditioned: sigma stays inside
# [1/RHO_MAX, 1/RHO_MIN] = [1e-3, 10].
RHO_MIN = 0.1
RHO_MAX = 1000.0

_BOUNDARY_MODES = {"reflect": "reflect", "replicate": "replicate", "zero": "constant"}


class BlurSpecError(ValueError):
    """Invalid blur-operator configuration (e.g. even kernel size)."""


class DomainError(ValueError):
    """Numeric argument outside its valid domain (e.g. sigma <= 0)."""


class ShapeError(ValueError):
    """Image / sigma-map shape mismatch."""


@dataclass(frozen=True)
class BlurSpec:
    """Kernel side length, padding mode, and renormalization flag."""

    k: int = 9
    boundary: str = "reflect"
    normalize: bool = True

    def __post_init__(self):
        if self.k < 1 or self.k % 2 == 0:
            raise BlurSpecError(f"kernel size must be odd and >= 1, got {self.k}")
        if self.boundary not in _BOUNDARY_MODES:
            raise BlurSpecError(
                f"boundary must be one of {sorted(_BOUNDARY_MODES)}, got {self.boundary!r}"
            )

    @property
    def radius(self) -> int:
        return (self.k - 1) // 2


def as_image(x) -> torch.Tensor:
    """Coerce to a float64 tensor shaped (h, w, c) or (n, h, w, c)."""
    t = torch.as_tensor(x, dtype=DTYPE)
    if t.ndim not in (3, 4):
        raise ShapeError(f"image must have shape (h, w, c) or (n, h, w, c), got {tuple(t.shape)}")
    return t


def validate_image(x: torch.Tensor, clamp_range: bool = True) -> None:
    if not torch.isfinite(x).all():
        raise DomainError("image contains non-finite entries")
    if clamp_range and (x.min() < 0.0 or x.max() > 1.0):
        raise DomainError("image entries must lie in [0, 1]")


def sigma_to_rho(sigma, rho_min: float = RHO_MIN, rho_max: float = RHO_MAX) -> torch.Tensor:
    """Map sigma to the bounded reciprocal parameterization rho = 1/sigma."""
    sigma = torch.as_tensor(sigma, dtype=DTYPE)
    if (sigma <= 0).any():
        raise DomainError("sigma must be strictly positive")
    return torch.clamp(1.0 / sigma, rho_min, rho_max)


def rho_to_sigma(rho, rho_min: float = RHO_MIN, rho_max: float = RHO_MAX) -> torch.Tensor:
    rho = torch.as_tensor(rho, dtype=DTYPE)
    if (rho < rho_min - 1e-12).any() or (rho > rho_max + 1e-12).any():
        raise DomainError(f"rho must lie in [{rho_min}, {rho_max}]")
    return 1.0 / rho


def _offset_grid(k: int) -> torch.Tensor:
    # squared distance u^2 + v^2 of every kernel cell to the centre, flattened
    offs = torch.arange(k, dtype=DTYPE) - (k - 1) / 2
    u = offs.view(k, 1).expand(k, k)
    v = offs.view(1, k).expand(k, k)
    return (u * u + v * v).reshape(-1)


def gaussian_kernel(sigma, spec: BlurSpec = BlurSpec()) -> torch.Tensor:
    """Evaluate the isotropic Gaussian kernel at integer offsets.

    With ``spec.normalize`` the entries are divided by their sum so the kernel
    sums to one; otherwise the continuous-density scale 1/(2*pi*sigma^2) is
    kept, which does not sum to one on a finite grid.
    """
    sigma_t = torch.as_tensor(sigma, dtype=DTYPE)
    if sigma_t.ndim != 0:
        raise ShapeError("gaussian_kernel takes a scalar sigma; use blur_apply for maps")
    if sigma_t.item() <= 0:
        raise DomainError(f"sigma must be positive, got {sigma_t.item()}")
    r2 = _offset_grid(spec.k).reshape(spec.k, spec.k)
    kern = torch.exp(-r2 / (2.0 * sigma_t * sigma_t))
    if spec.normalize:
        return kern / kern.sum()
    return kern / (2.0 * math.pi * sigma_t * sigma_t)


def _check_shapes(image: torch.Tensor, sigma_map: torch.Tensor, spec: BlurSpec):
    batched = image.ndim == 4
    if not batched and image.ndim != 3:
        raise ShapeError(f"image must be (h, w, c) or (n, h, w, c), got {tuple(image.shape)}")
    expect = image.shape[:-1] if batched else image.shape[:2]
    if tuple(sigma_map.shape) != tuple(expect):
        raise ShapeError(
            f"sigma map shape {tuple(sigma_map.shape)} does not match image plane {tuple(expect)}"
        )
    h, w = image.shape[-3], image.shape[-2]
    if h < spec.k or w < spec.k:
        raise ShapeError(f"image plane {h}x{w} smaller than kernel size {spec.k}")
    return batched


def blur_apply(image, sigma_map, spec: BlurSpec = BlurSpec()) -> torch.Tensor:
    """Blur each pixel with its own Gaussian kernel.

    ``image`` is (h, w, c) or (n, h, w, c); ``sigma_map`` is (h, w) or
    (n, h, w) with strictly positive entries. Every channel shares the same
    per-pixel kernel. Boundary neighborhoods are completed by ``spec.boundary``
    padding. The result is differentiable with respect to both inputs and is
    never clamped: with a normalized kernel each output pixel is a convex
    combination of its neighborhood, so the image range is preserved.
    """
    img = torch.as_tensor(image, dtype=DTYPE)
    sig = torch.as_tensor(sigma_map, dtype=DTYPE)
    if sig.ndim == 0:
        plane = img.shape[:-1] if img.ndim == 4 else img.shape[:2]
        sig = sig.expand(plane)
    batched = _check_shapes(img, sig, spec)
    with torch.no_grad():
        if (sig <= 0).any():
            raise DomainError("sigma map entries must be strictly positive")

    x = img if batched else img.unsqueeze(0)
    s = sig if batched else sig.unsqueeze(0)
    n, h, w, c = x.shape
    k, pad = spec.k, spec.radius

    xp = x.permute(0, 3, 1, 2)  # NCHW for padding
    if pad > 0:
        xp = F.pad(xp, (pad, pad, pad, pad), mode=_BOUNDARY_MODES[spec.boundary])

    # neighborhood stack: one shifted view per kernel cell, (k^2, n, c, h, w)
    patches = torch.stack(
        [xp[:, :, du : du + h, dv : dv + w] for du in range(k) for dv in range(k)], dim=0
    )

    sig2 = s * s  # (n, h, w)
    r2 = _offset_grid(k).view(-1, 1, 1, 1)
    weights = torch.exp(-r2 / (2.0 * sig2.unsqueeze(0)))  # (k^2, n, h, w)
    if spec.normalize:
        weights = weights / weights.sum(dim=0, keepdim=True)
    else:
        weights = weights / (2.0 * math.pi * sig2.unsqueeze(0))

    out = (patches * weights.unsqueeze(2)).sum(dim=0)  # (n, c, h, w)
    out = out.permute(0, 2, 3, 1)
    return out if batched else out.squeeze(0)


def blur_gradient_check(
    image,
    sigma_map,
    spec: BlurSpec,
    loss_fn,
    n_samples: int = 16,
    fd_step: float = 1e-3,
    parameterization: str = "sigma",
    seed: int = 0,
) -> float:
    """Max relative error between autograd and central finite differences.

    ``loss_fn`` maps the blurred image to a scalar. The derivative of that
    scalar with respect to sampled entries of the sigma map (or the rho map
    when ``parameterization == "rho"``) is compared against a central
    difference with step ``fd_step``; the return value is the worst
    ``|analytic - fd| / (|fd| + 1e-8)`` over the sampled entries.
    """
    if parameterization not in ("sigma", "rho"):
        raise ValueError(f"unknown parameterization {parameterization!r}")
    img = torch.as_tensor(image, dtype=DTYPE)
    sig = torch.as_tensor(sigma_map, dtype=DTYPE)

    if parameterization == "rho":
        base = sigma_to_rho(sig)
        to_sigma = lambda p: 1.0 / p
    else:
        base = sig.clone()
        to_sigma = lambda p: p

    leaf = base.clone().requires_grad_(True)
    loss = loss_fn(blur_apply(img, to_sigma(leaf), spec))
    (analytic,) = torch.autograd.grad(loss, leaf)

    gen = torch.Generator().manual_seed(seed)
    flat = base.reshape(-1)
    idx = torch.randperm(flat.numel(), generator=gen)[: min(n_samples, flat.numel())]

    worst = 0.0
    for i in idx.tolist():
        for direction, store in ((+1.0, "hi"), (-1.0, "lo")):
            probe = flat.clone()
            probe[i] = probe[i] + direction * fd_step
            val = loss_fn(blur_apply(img, to_sigma(probe.reshape(base.shape)), spec)).item()
            if store == "hi":
                hi = val
            else:
                lo = val
        fd = (hi - lo) / (2.0 * fd_step)
        a = analytic.reshape(-1)[i].item()
        worst = max(worst, abs(a - fd) / (abs(fd) + 1e-8))
    return worst
