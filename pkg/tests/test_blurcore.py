"""Blur operator contracts, checked against a naive per-pixel oracle."""

import math

import numpy as np
import pytest
import torch

from advblur.blurcore import (
    RHO_MAX,
    RHO_MIN,
    BlurSpec,
    BlurSpecError,
    DomainError,
    ShapeError,
    blur_apply,
    blur_gradient_check,
    gaussian_kernel,
    rho_to_sigma,
    sigma_to_rho,
)


def scalar_kernel(sigma, k, normalize):
    """Independent kernel evaluation with plain math.exp."""
    r = (k - 1) // 2
    kern = np.zeros((k, k))
    for a, u in enumerate(range(-r, r + 1)):
        for b, v in enumerate(range(-r, r + 1)):
            kern[a, b] = math.exp(-(u * u + v * v) / (2.0 * sigma * sigma))
    if normalize:
        return kern / kern.sum()
    return kern / (2.0 * math.pi * sigma * sigma)


def _border_index(idx, n, boundary):
    if 0 <= idx < n:
        return idx
    if boundary == "replicate":
        return min(max(idx, 0), n - 1)
    if boundary == "reflect":  # mirrored without repeating the edge pixel
        if idx < 0:
            return -idx
        return 2 * n - 2 - idx
    return None  # zero padding


def naive_blur(image, sigma_map, spec):
    """Brute-force double loop over pixels and kernel cells."""
    img = np.asarray(image, dtype=np.float64)
    sig = np.asarray(sigma_map, dtype=np.float64)
    h, w, c = img.shape
    r = spec.radius
    out = np.zeros_like(img)
    for i in range(h):
        for j in range(w):
            kern = scalar_kernel(sig[i, j], spec.k, spec.normalize)
            acc = np.zeros(c)
            for a, du in enumerate(range(-r, r + 1)):
                for b, dv in enumerate(range(-r, r + 1)):
                    ii = _border_index(i + du, h, spec.boundary)
                    jj = _border_index(j + dv, w, spec.boundary)
                    if ii is None or jj is None:
                        continue
                    acc += kern[a, b] * img[ii, jj]
            out[i, j] = acc
    return out


class TestGaussianKernel:
    def test_k1_normalized_is_one(self):
        kern = gaussian_kernel(1.0, BlurSpec(k=1))
        assert kern.shape == (1, 1)
        assert kern.item() == 1.0

    def test_unnormalized_matches_formula(self):
        # centre 1/(2*pi), corners exp(-1)/(2*pi), evaluated independently
        kern = gaussian_kernel(1.0, BlurSpec(k=3, normalize=False))
        centre = 1.0 / (2.0 * math.pi)
        corner = centre * math.exp(-1.0)
        assert kern[1, 1].item() == pytest.approx(0.15915494309189535, abs=1e-12)
        assert kern[1, 1].item() == pytest.approx(centre, abs=1e-15)
        for a, b in [(0, 0), (0, 2), (2, 0), (2, 2)]:
            assert kern[a, b].item() == pytest.approx(corner, abs=1e-15)
        assert corner == pytest.approx(0.058550, abs=1e-6)

    def test_small_sigma_approaches_delta(self):
        kern = gaussian_kernel(0.1, BlurSpec(k=9))
        grid = scalar_kernel(0.1, 9, normalize=True)
        assert kern[4, 4].item() >= 1.0 - 1e-6
        np.testing.assert_allclose(kern.numpy(), grid, atol=1e-15)

    @pytest.mark.parametrize("sigma", [1e-3, 0.1, 1.0, 7.3, 1e3])
    @pytest.mark.parametrize("k", [1, 3, 5, 9])
    def test_normalized_sums_to_one(self, sigma, k):
        kern = gaussian_kernel(sigma, BlurSpec(k=k))
        assert abs(kern.sum().item() - 1.0) < 1e-12

    def test_symmetry(self):
        kern = gaussian_kernel(1.7, BlurSpec(k=5)).numpy()
        np.testing.assert_array_equal(kern, kern[::-1, :])
        np.testing.assert_array_equal(kern, kern[:, ::-1])
        np.testing.assert_array_equal(kern, kern.T)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            gaussian_kernel(0.0, BlurSpec(k=3))
        with pytest.raises(DomainError):
            gaussian_kernel(-1.0, BlurSpec(k=3))
        with pytest.raises(BlurSpecError):
            BlurSpec(k=4)
        with pytest.raises(BlurSpecError):
            BlurSpec(k=-3)
        with pytest.raises(BlurSpecError):
            BlurSpec(boundary="wrap")


class TestRhoMap:
    def test_round_trip(self):
        sigma = torch.tensor([1.0 / RHO_MAX, 0.01, 0.5, 1.0, 3.0, 1.0 / RHO_MIN], dtype=torch.float64)
        back = rho_to_sigma(sigma_to_rho(sigma))
        assert torch.allclose(back, sigma, atol=1e-9, rtol=0)

    def test_clamping(self):
        rho = sigma_to_rho(torch.tensor([1e-9, 1e9], dtype=torch.float64))
        assert rho[0].item() == RHO_MAX
        assert rho[1].item() == RHO_MIN

    def test_invalid(self):
        with pytest.raises(DomainError):
            sigma_to_rho(torch.tensor([0.0]))
        with pytest.raises(DomainError):
            rho_to_sigma(torch.tensor([RHO_MAX * 2]))


class TestBlurApply:
    def test_constant_image_fixed_point(self):
        img = torch.full((10, 12, 3), 0.5, dtype=torch.float64)
        rng = np.random.default_rng(0)
        sig = torch.as_tensor(rng.uniform(0.2, 4.0, size=(10, 12)))
        out = blur_apply(img, sig, BlurSpec(k=5))
        assert (out - img).abs().max().item() < 1e-6

    def test_tiny_sigma_is_identity(self):
        rng = np.random.default_rng(1)
        img = torch.as_tensor(rng.uniform(0, 1, size=(12, 12, 3)))
        out = blur_apply(img, torch.full((12, 12), 1e-3, dtype=torch.float64), BlurSpec(k=9))
        assert (out - img).abs().max().item() < 1e-4

    def test_matches_naive_oracle_basic(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(0, 1, size=(8, 8, 1))
        spec = BlurSpec(k=3)
        out = blur_apply(torch.as_tensor(img), torch.ones(8, 8, dtype=torch.float64), spec)
        ref = naive_blur(img, np.ones((8, 8)), spec)
        np.testing.assert_allclose(out.numpy(), ref, atol=1e-9, rtol=0)

    @pytest.mark.parametrize("k", [1, 3, 5, 9])
    @pytest.mark.parametrize("boundary", ["reflect", "replicate", "zero"])
    def test_matches_naive_oracle_sweep(self, k, boundary):
        rng = np.random.default_rng(k * 31 + len(boundary))
        for norm in (True, False):
            h = int(rng.integers(k, 17))
            w = int(rng.integers(k, 17))
            c = int(rng.choice([1, 3]))
            img = rng.uniform(0, 1, size=(h, w, c))
            sig = rng.uniform(0.2, 3.0, size=(h, w))
            spec = BlurSpec(k=k, boundary=boundary, normalize=norm)
            out = blur_apply(torch.as_tensor(img), torch.as_tensor(sig), spec)
            np.testing.assert_allclose(out.numpy(), naive_blur(img, sig, spec), atol=1e-9, rtol=0)

    def test_batched_matches_per_image(self):
        rng = np.random.default_rng(3)
        imgs = torch.as_tensor(rng.uniform(0, 1, size=(4, 9, 9, 3)))
        sigs = torch.as_tensor(rng.uniform(0.3, 2.0, size=(4, 9, 9)))
        spec = BlurSpec(k=3)
        batch = blur_apply(imgs, sigs, spec)
        for i in range(4):
            single = blur_apply(imgs[i], sigs[i], spec)
            assert (batch[i] - single).abs().max().item() < 1e-12

    def test_range_preservation(self):
        rng = np.random.default_rng(4)
        img = rng.uniform(0, 1, size=(10, 10, 1))
        sig = rng.uniform(0.1, 5.0, size=(10, 10))
        spec = BlurSpec(k=3, boundary="replicate")
        out = blur_apply(torch.as_tensor(img), torch.as_tensor(sig), spec).numpy()
        r = spec.radius
        padded = np.pad(img, ((r, r), (r, r), (0, 0)), mode="edge")
        for i in range(10):
            for j in range(10):
                neigh = padded[i : i + spec.k, j : j + spec.k, 0]
                assert neigh.min() - 1e-12 <= out[i, j, 0] <= neigh.max() + 1e-12

    def test_linearity_in_image(self):
        rng = np.random.default_rng(5)
        x = torch.as_tensor(rng.uniform(0, 1, size=(8, 8, 3)))
        y = torch.as_tensor(rng.uniform(0, 1, size=(8, 8, 3)))
        sig = torch.as_tensor(rng.uniform(0.3, 2.0, size=(8, 8)))
        spec = BlurSpec(k=5)
        a, b = 0.3, 0.6
        lhs = blur_apply(a * x + b * y, sig, spec)
        rhs = a * blur_apply(x, sig, spec) + b * blur_apply(y, sig, spec)
        assert (lhs - rhs).abs().max().item() < 1e-9

    def test_large_sigma_is_local_mean(self):
        rng = np.random.default_rng(6)
        img = rng.uniform(0, 1, size=(8, 8, 1))
        spec = BlurSpec(k=3, boundary="replicate")
        out = blur_apply(torch.as_tensor(img), torch.full((8, 8), 1e3, dtype=torch.float64), spec)
        padded = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
        for i in range(8):
            for j in range(8):
                mean = padded[i : i + 3, j : j + 3, 0].mean()
                assert abs(out[i, j, 0].item() - mean) < 1e-3

    def test_scalar_sigma_broadcast(self):
        rng = np.random.default_rng(7)
        img = torch.as_tensor(rng.uniform(0, 1, size=(8, 8, 1)))
        out_scalar = blur_apply(img, torch.tensor(1.5, dtype=torch.float64), BlurSpec(k=3))
        out_map = blur_apply(img, torch.full((8, 8), 1.5, dtype=torch.float64), BlurSpec(k=3))
        assert torch.equal(out_scalar, out_map)

    def test_errors(self):
        img = torch.rand(8, 8, 3, dtype=torch.float64)
        with pytest.raises(ShapeError):
            blur_apply(img, torch.ones(7, 8, dtype=torch.float64), BlurSpec(k=3))
        with pytest.raises(DomainError):
            blur_apply(img, torch.zeros(8, 8, dtype=torch.float64), BlurSpec(k=3))
        with pytest.raises(ShapeError):
            blur_apply(torch.rand(4, 4, 1, dtype=torch.float64), torch.ones(4, 4, dtype=torch.float64), BlurSpec(k=5))


class TestGradientCheck:
    def test_constant_image_mean_loss_gradient_vanishes(self):
        img = torch.full((8, 8, 1), 0.4, dtype=torch.float64)
        sig = torch.full((8, 8), 1.0, dtype=torch.float64)
        leaf = sig.clone().requires_grad_(True)
        loss = blur_apply(img, leaf, BlurSpec(k=3)).mean()
        (grad,) = torch.autograd.grad(loss, leaf)
        assert grad.abs().max().item() < 1e-12

    def test_sum_of_squares_matches_fd(self):
        rng = np.random.default_rng(8)
        img = torch.as_tensor(rng.uniform(0, 1, size=(8, 8, 1)))
        sig = torch.as_tensor(rng.uniform(0.5, 2.0, size=(8, 8)))
        err = blur_gradient_check(img, sig, BlurSpec(k=3), lambda x: (x * x).sum(), fd_step=1e-3)
        assert err < 1e-4

    def test_rho_parameterization_matches_fd(self):
        rng = np.random.default_rng(9)
        img = torch.as_tensor(rng.uniform(0, 1, size=(8, 8, 1)))
        sig = torch.as_tensor(rng.uniform(0.5, 2.0, size=(8, 8)))
        err = blur_gradient_check(
            img, sig, BlurSpec(k=3), lambda x: (x * x).sum(), fd_step=1e-3, parameterization="rho"
        )
        assert err < 1e-4

    def test_chain_rule_identity(self):
        # dL/drho = -sigma^2 * dL/dsigma
        rng = np.random.default_rng(10)
        img = torch.as_tensor(rng.uniform(0, 1, size=(8, 8, 1)))
        sig0 = torch.as_tensor(rng.uniform(0.5, 2.0, size=(8, 8)))
        spec = BlurSpec(k=3)

        sig = sig0.clone().requires_grad_(True)
        (g_sigma,) = torch.autograd.grad((blur_apply(img, sig, spec) ** 2).sum(), sig)

        rho = (1.0 / sig0).clone().requires_grad_(True)
        (g_rho,) = torch.autograd.grad((blur_apply(img, 1.0 / rho, spec) ** 2).sum(), rho)

        expected = -(sig0**2) * g_sigma
        rel = (g_rho - expected).abs() / (expected.abs() + 1e-8)
        assert rel.max().item() < 1e-4
