import math

import numpy as np
import pytest
import torch

from advblur.detector import (
    Detector,
    ValidationError,
    augment_traditional,
    register_backbone,
)


def test_logits_shape_and_finiteness():
    det = Detector(width=8, init_seed=0)
    x = torch.rand(4, 16, 16, 3, dtype=torch.float64)
    logits = det(x)
    assert logits.shape == (4, 2)
    assert torch.isfinite(logits).all()


def test_forward_deterministic():
    det = Detector(width=8, init_seed=1)
    x = torch.rand(2, 16, 16, 3, dtype=torch.float64)
    assert torch.equal(det(x), det(x))


def test_same_seed_same_parameters():
    a = Detector(width=8, init_seed=5)
    b = Detector(width=8, init_seed=5)
    for (ka, va), (kb, vb) in zip(a.state_dict().items(), b.state_dict().items()):
        assert ka == kb
        assert torch.equal(va, vb)


def test_uniform_logits_loss_is_ln2():
    class Flat(torch.nn.Module):
        def __init__(self, channels_in=3, width=8):
            super().__init__()
            self.dummy = torch.nn.Parameter(torch.zeros(1, dtype=torch.float64))

        def forward(self, x):
            return torch.zeros(x.shape[0], 2, dtype=torch.float64) + self.dummy

    register_backbone("flat", Flat)
    det = Detector(backbone="flat")
    x = torch.rand(3, 8, 8, 3, dtype=torch.float64)
    loss = det.loss(x, torch.tensor([0, 1, 0]))
    assert loss.item() == pytest.approx(math.log(2.0), abs=1e-12)


def test_loss_matches_scalar_cross_entropy():
    det = Detector(width=8, init_seed=2)
    x = torch.rand(2, 16, 16, 3, dtype=torch.float64)
    y = torch.tensor([0, 1])
    logits = det(x).detach().numpy()

    def ce(row, label):
        m = max(row)
        logsumexp = m + math.log(sum(math.exp(v - m) for v in row))
        return logsumexp - row[label]

    expected = (ce(logits[0], 0) + ce(logits[1], 1)) / 2.0
    assert det.loss(x, y).item() == pytest.approx(expected, abs=1e-9)


def test_confident_correct_loss_approaches_zero():
    class Oracle(torch.nn.Module):
        def __init__(self, channels_in=3, width=8):
            super().__init__()
            self.dummy = torch.nn.Parameter(torch.zeros(1, dtype=torch.float64))

        def forward(self, x):
            # fires on mean brightness with a huge margin
            bright = x.mean(dim=(1, 2, 3)) > 0.5
            logits = torch.stack([torch.where(bright, -50.0, 50.0), torch.where(bright, 50.0, -50.0)], dim=1)
            return logits.to(torch.float64) + self.dummy

    register_backbone("oracle", Oracle)
    det = Detector(backbone="oracle")
    x = torch.cat([torch.full((1, 8, 8, 3), 0.9), torch.full((1, 8, 8, 3), 0.1)]).double()
    assert det.loss(x, torch.tensor([1, 0])).item() < 1e-20


def test_label_validation():
    det = Detector(width=8)
    x = torch.rand(2, 16, 16, 3, dtype=torch.float64)
    with pytest.raises(ValidationError):
        det.loss(x, torch.tensor([0, 2]))


def test_unknown_backbone():
    with pytest.raises(ValidationError):
        Detector(backbone="resnet-900")


def test_parameter_array_round_trip():
    a = Detector(width=8, init_seed=3)
    b = Detector(width=8, init_seed=4)
    b.load_parameter_arrays(a.parameter_arrays())
    x = torch.rand(2, 16, 16, 3, dtype=torch.float64)
    assert torch.equal(a(x), b(x))


class TestAugment:
    def _batch(self, seed=0, n=4, size=16):
        rng = np.random.default_rng(seed)
        return torch.as_tensor(rng.uniform(0.2, 0.8, size=(n, size, size, 3)))

    def test_never_mutates_input(self):
        x = self._batch()
        before = x.clone()
        for kind in ("noise", "blur", "jpeg", "combined"):
            augment_traditional(x, kind, np.random.default_rng(1))
            assert torch.equal(x, before)

    def test_outputs_in_range(self):
        x = self._batch(1)
        for kind in ("noise", "blur", "jpeg", "combined"):
            out = augment_traditional(x, kind, np.random.default_rng(2))
            assert out.min().item() >= 0.0 and out.max().item() <= 1.0
            assert out.shape == x.shape

    def test_noise_skipped_half_the_time(self):
        x = self._batch(2, n=200, size=8)
        out = augment_traditional(x, "noise", np.random.default_rng(3))
        unchanged = sum(torch.equal(out[i], x[i]) for i in range(200))
        assert 70 <= unchanged <= 130  # p = 0.5 coin

    def test_zero_variance_noise_is_identity(self):
        class ZeroVarRng:
            """uniform() drives the coin (apply) and the variance (0)."""

            def __init__(self):
                self.calls = 0

            def uniform(self, lo=0.0, hi=1.0):
                self.calls += 1
                return 0.0  # coin 0.0 < p applies; variance draw returns lo = 0

            def standard_normal(self, shape):
                return np.ones(shape)

        x = self._batch(3, n=1)
        out = augment_traditional(x, "noise", ZeroVarRng())
        assert torch.allclose(out, x, atol=0, rtol=0)

    def test_blur_smooths(self):
        rng = np.random.default_rng(4)
        x = torch.as_tensor(rng.uniform(0, 1, size=(1, 16, 16, 3)))

        class FixedVarRng:
            def uniform(self, lo=0.0, hi=1.0):
                return 25.0  # sigma = 5

            def standard_normal(self, shape):
                return np.zeros(shape)

        out = augment_traditional(x, "blur", FixedVarRng())
        assert out.var().item() < x.var().item()

    def test_deterministic_given_rng_seed(self):
        x = self._batch(5)
        a = augment_traditional(x, "combined", np.random.default_rng(6))
        b = augment_traditional(x, "combined", np.random.default_rng(6))
        assert torch.equal(a, b)

    def test_unknown_kind(self):
        with pytest.raises(ValidationError):
            augment_traditional(self._batch(), "mixup", np.random.default_rng(0))
