"""Gradient-based adversarial example crafting under explicit budgets.

Three families: additive (FGSM / PGD under an l-infinity ball), spatial
(per-pixel optical flow with bilinear resampling), and blur (ascent on the
reciprocal sigma parameterization of the pixel-wise Gaussian operator).
Crafting never mutates model parameters; losses are summed over the batch so
each sample's update depends only on its own gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .blurcore import DTYPE, RHO_MAX, RHO_MIN, BlurSpec, blur_apply, sigma_to_rho
from .detector import NumericError

FAMILIES = ("additive", "spatial", "blur")


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class PerturbationBudget:
    """Attack family, strength, step count, and regularization knobs."""

    family: str
    epsilon: float
    steps: int = 1
    step_size: float | None = None
    flow_reg: float = 0.05

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise BudgetError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.epsilon < 0:
            raise BudgetError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.steps < 1:
            raise BudgetError(f"steps must be >= 1, got {self.steps}")
        if self.step_size is not None and self.step_size <= 0:
            raise BudgetError(f"step_size must be positive, got {self.step_size}")
        if self.flow_reg < 0:
            raise BudgetError(f"flow_reg must be >= 0, got {self.flow_reg}")

    @property
    def per_step(self) -> float:
        return self.step_size if self.step_size is not None else self.epsilon / self.steps


@dataclass
class AdversarialExample:
    """Crafted image plus provenance; construction re-verifies the budget."""

    image: torch.Tensor
    provenance: dict = field(default_factory=dict)

    @classmethod
    def create(cls, image, clean, budget: PerturbationBudget, provenance: dict,
               sigma_map=None, flow=None) -> "AdversarialExample":
        verify_budget(image, clean, budget, sigma_map=sigma_map, flow=flow)
        return cls(image=image, provenance=provenance)


def verify_budget(image, clean, budget: PerturbationBudget, sigma_map=None, flow=None) -> None:
    """Reject constraint violations; raises BudgetError."""
    if budget.family == "additive":
        eps = budget.epsilon
        projected = torch.clamp(
            torch.min(torch.max(image, clean - eps), clean + eps), 0.0, 1.0
        )
        if not torch.equal(image, projected):
            gap = (image - clean).abs().max().item()
            raise BudgetError(f"l-inf budget violated: max|delta| = {gap:.6g} vs eps = {eps}")
    elif budget.family == "blur":
        if sigma_map is None:
            raise BudgetError("blur example requires its sigma map for verification")
        lo, hi = 1.0 / RHO_MAX, 1.0 / RHO_MIN
        if (sigma_map < lo * (1 - 1e-12)).any() or (sigma_map > hi * (1 + 1e-12)).any():
            raise BudgetError(
                f"sigma map outside [{lo:.4g}, {hi:.4g}]: "
                f"range [{sigma_map.min().item():.4g}, {sigma_map.max().item():.4g}]"
            )
    elif budget.family == "spatial":
        if flow is None:
            raise BudgetError("spatial example requires its flow field for verification")
        du, dv = flow
        bound = budget.epsilon
        if (du.abs() > bound).any() or (dv.abs() > bound).any():
            mag = max(du.abs().max().item(), dv.abs().max().item())
            raise BudgetError(f"flow magnitude {mag:.6g} exceeds bound {bound}")


def _ensure_batch(image, label):
    x = torch.as_tensor(image, dtype=DTYPE)
    y = torch.as_tensor(label, dtype=torch.long)
    single = x.ndim == 3
    if single:
        x = x.unsqueeze(0)
        y = y.reshape(1)
    return x, y, single


def _input_gradient(detector, x, y):
    leaf = x.detach().clone().requires_grad_(True)
    loss = detector.loss(leaf, y, reduction="sum")
    (grad,) = torch.autograd.grad(loss, leaf)
    if not torch.isfinite(grad).all():
        raise NumericError(
            f"non-finite input gradient (loss={loss.item():.6g}, labels={y.tolist()})"
        )
    return grad


def _batch_loss(detector, x, y) -> float:
    with torch.no_grad():
        return detector.loss(x, y, reduction="mean").item()


def pgd(detector, image, label, budget: PerturbationBudget) -> AdversarialExample:
    """Projected signed-gradient ascent inside the l-infinity ball.

    With steps=1 and step_size=epsilon this is exactly FGSM: the iterate adds
    epsilon * sign(grad) and the projection is a no-op on that point.
    """
    if budget.family != "additive":
        raise BudgetError(f"pgd needs an additive budget, got {budget.family!r}")
    x0, y, single = _ensure_batch(image, label)
    eps, alpha = budget.epsilon, budget.per_step
    loss_before = _batch_loss(detector, x0, y)
    x = x0.clone()
    for _ in range(budget.steps):
        grad = _input_gradient(detector, x, y)
        x = x + alpha * grad.sign()
        x = torch.min(torch.max(x, x0 - eps), x0 + eps)
        x = torch.clamp(x, 0.0, 1.0).detach()
    provenance = {
        "attack": "pgd" if budget.steps > 1 else "fgsm",
        "epsilon": eps,
        "steps": budget.steps,
        "step_size": alpha,
        "loss_before": loss_before,
        "loss_after": _batch_loss(detector, x, y),
    }
    out = x.squeeze(0) if single else x
    clean = x0.squeeze(0) if single else x0
    return AdversarialExample.create(out, clean, budget, provenance)


def fgsm(detector, image, label, epsilon: float) -> AdversarialExample:
    """One signed-gradient step scaled by epsilon, clamped to valid pixels."""
    budget = PerturbationBudget(family="additive", epsilon=epsilon, steps=1)
    return pgd(detector, image, label, budget)


def blur_attack(detector, image, label, budget: PerturbationBudget, sigma_init=1.0,
                spec: BlurSpec = BlurSpec(k=9), rho_min: float = RHO_MIN,
                rho_max: float = RHO_MAX):
    """Ascend the detector loss over the per-pixel blur map.

    The optimization variable is rho = 1/sigma; each step adds
    (epsilon / steps) times the raw loss gradient (no sign function) and
    clamps rho back into [rho_min, rho_max]. Returns the adversarial example
    and the final sigma map.
    """
    if budget.family != "blur":
        raise BudgetError(f"blur_attack needs a blur budget, got {budget.family!r}")
    x0, y, single = _ensure_batch(image, label)
    n, h, w, _ = x0.shape

    sigma0 = torch.as_tensor(sigma_init, dtype=DTYPE)
    if sigma0.ndim == 0:
        sigma0 = sigma0.expand(n, h, w)
    elif sigma0.ndim == 2:
        sigma0 = sigma0.unsqueeze(0).expand(n, h, w)
    rho = sigma_to_rho(sigma0, rho_min, rho_max).contiguous()

    loss_before = _batch_loss(detector, blur_apply(x0, 1.0 / rho, spec), y)
    step = budget.per_step
    for _ in range(budget.steps):
        leaf = rho.detach().clone().requires_grad_(True)
        loss = detector.loss(blur_apply(x0, 1.0 / leaf, spec), y, reduction="sum")
        (grad,) = torch.autograd.grad(loss, leaf)
        if not torch.isfinite(grad).all():
            raise NumericError(f"non-finite sigma gradient (loss={loss.item():.6g})")
        rho = torch.clamp(rho + step * grad, rho_min, rho_max).detach()

    sigma_map = 1.0 / rho
    x_adv = blur_apply(x0, sigma_map, spec)
    provenance = {
        "attack": "blur",
        "epsilon": budget.epsilon,
        "steps": budget.steps,
        "kernel_size": spec.k,
        "loss_before": loss_before,
        "loss_after": _batch_loss(detector, x_adv, y),
    }
    if single:
        x_adv, x0, sigma_map = x_adv.squeeze(0), x0.squeeze(0), sigma_map.squeeze(0)
    example = AdversarialExample.create(x_adv, x0, budget, provenance, sigma_map=sigma_map)
    return example, sigma_map


def bilinear_warp(image, du, dv) -> torch.Tensor:
    """Sample image at (i + du, j + dv) with bilinear interpolation.

    Coordinates are clamped inside the image, so out-of-range flow replicates
    the border. Differentiable in the flow; exact at integer coordinates.
    """
    x = torch.as_tensor(image, dtype=DTYPE)
    single = x.ndim == 3
    if single:
        x = x.unsqueeze(0)
        du = du.unsqueeze(0) if du.ndim == 2 else du
        dv = dv.unsqueeze(0) if dv.ndim == 2 else dv
    n, h, w, c = x.shape

    gi = torch.arange(h, dtype=DTYPE).view(1, h, 1)
    gj = torch.arange(w, dtype=DTYPE).view(1, 1, w)
    ci = torch.clamp(gi + du, 0.0, h - 1.0)
    cj = torch.clamp(gj + dv, 0.0, w - 1.0)

    i0 = ci.floor().long().clamp(0, h - 1)
    j0 = cj.floor().long().clamp(0, w - 1)
    i1 = (i0 + 1).clamp(0, h - 1)
    j1 = (j0 + 1).clamp(0, w - 1)
    ai = (ci - i0.to(DTYPE)).unsqueeze(-1)
    aj = (cj - j0.to(DTYPE)).unsqueeze(-1)

    idx = torch.arange(n).view(n, 1, 1)
    top = x[idx, i0, j0] * (1 - aj) + x[idx, i0, j1] * aj
    bot = x[idx, i1, j0] * (1 - aj) + x[idx, i1, j1] * aj
    out = top * (1 - ai) + bot * ai
    return out.squeeze(0) if single else out


def flow_total_variation(du, dv) -> torch.Tensor:
    """Anisotropic total variation of the flow components."""
    tv = du.new_zeros(())
    for comp in (du, dv):
        tv = tv + (comp[..., 1:, :] - comp[..., :-1, :]).abs().sum()
        tv = tv + (comp[..., :, 1:] - comp[..., :, :-1]).abs().sum()
    return tv


def spatial_attack(detector, image, label, budget: PerturbationBudget):
    """Signed-gradient ascent on an adversarial flow field.

    Maximizes the detector loss minus flow_reg times the total variation of
    the flow; flow magnitude stays within budget.epsilon pixels.
    """
    if budget.family != "spatial":
        raise BudgetError(f"spatial_attack needs a spatial budget, got {budget.family!r}")
    x0, y, single = _ensure_batch(image, label)
    n, h, w, _ = x0.shape
    du = torch.zeros(n, h, w, dtype=DTYPE)
    dv = torch.zeros(n, h, w, dtype=DTYPE)
    eps, alpha = budget.epsilon, budget.per_step

    loss_before = _batch_loss(detector, x0, y)
    for _ in range(budget.steps):
        du_l = du.detach().clone().requires_grad_(True)
        dv_l = dv.detach().clone().requires_grad_(True)
        warped = bilinear_warp(x0, du_l, dv_l)
        objective = detector.loss(warped, y, reduction="sum") - budget.flow_reg * flow_total_variation(du_l, dv_l)
        g_du, g_dv = torch.autograd.grad(objective, (du_l, dv_l))
        if not (torch.isfinite(g_du).all() and torch.isfinite(g_dv).all()):
            raise NumericError("non-finite flow gradient")
        du = torch.clamp(du + alpha * g_du.sign(), -eps, eps).detach()
        dv = torch.clamp(dv + alpha * g_dv.sign(), -eps, eps).detach()

    x_adv = bilinear_warp(x0, du, dv)
    provenance = {
        "attack": "spatial",
        "epsilon": eps,
        "steps": budget.steps,
        "flow_reg": budget.flow_reg,
        "loss_before": loss_before,
        "loss_after": _batch_loss(detector, x_adv, y),
    }
    if single:
        x_adv, x0, du, dv = x_adv.squeeze(0), x0.squeeze(0), du.squeeze(0), dv.squeeze(0)
    example = AdversarialExample.create(x_adv, x0, budget, provenance, flow=(du, dv))
    return example, (du, dv)


def combined_attack(detector, image, label, blur_budget: PerturbationBudget,
                    additive_budget: PerturbationBudget, sigma_source,
                    spec: BlurSpec = BlurSpec(k=9)) -> AdversarialExample:
    """Blur first, then add an FGSM perturbation on top of the blurred image.

    ``sigma_source`` is either a sigma map / scalar (used as the start of the
    gradient-path blur attack) or a generator exposing ``generate_sigma``-style
    forwarding (its output map is used directly).
    """
    x0, y, single = _ensure_batch(image, label)
    if isinstance(sigma_source, torch.nn.Module):
        from .generators import generate_sigma

        sigma_map = generate_sigma(sigma_source, x0)
        x_adv1 = blur_apply(x0, sigma_map, spec)
        blur_prov = {"attack": "generator-blur", "kernel_size": spec.k}
    else:
        example1, sigma_map = blur_attack(
            detector, x0, y, blur_budget, sigma_init=sigma_source, spec=spec
        )
        x_adv1 = example1.image
        blur_prov = dict(example1.provenance)

    verify_budget(x_adv1, x0, blur_budget, sigma_map=sigma_map)
    step2 = fgsm(detector, x_adv1, y, additive_budget.epsilon)
    provenance = {
        "attack": "combined",
        "stage1": blur_prov,
        "stage2": dict(step2.provenance),
    }
    example = AdversarialExample.create(step2.image, x_adv1, additive_budget, provenance)
    if single:
        example.image = example.image.squeeze(0)
    return example
