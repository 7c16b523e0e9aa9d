import numpy as np
import pytest

from advblur.jpegsim import LUMA_QTABLE, high_frequency_energy, jpeg_compress, quant_table


def dct2_reference(block):
    """Direct O(n^4) DCT-II for one 8x8 block."""
    out = np.zeros((8, 8))
    for u in range(8):
        for v in range(8):
            cu = 1.0 / np.sqrt(2.0) if u == 0 else 1.0
            cv = 1.0 / np.sqrt(2.0) if v == 0 else 1.0
            s = 0.0
            for x in range(8):
                for y in range(8):
                    s += (
                        block[x, y]
                        * np.cos((2 * x + 1) * u * np.pi / 16)
                        * np.cos((2 * y + 1) * v * np.pi / 16)
                    )
            out[u, v] = 0.25 * cu * cv * s
    return out


def test_quant_table_quality_50_is_base_table():
    np.testing.assert_array_equal(quant_table(50.0), LUMA_QTABLE)


def test_quant_table_monotone_in_quality():
    prev = quant_table(10.0)
    for q in (30.0, 50.0, 75.0, 95.0):
        cur = quant_table(q)
        assert (cur <= prev).all()
        prev = cur


def test_quality_100_nearly_lossless():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 1, size=(16, 16, 3))
    out = jpeg_compress(img, 100.0)
    # all quant steps are 1 at q=100, so error is bounded by rounding of DCT coefs
    assert np.abs(out - img).max() < 8.0 / 255.0
    assert np.abs(out - img).mean() < 2.0 / 255.0


def test_block_dct_matches_reference():
    # compress a single block image with a table that quantizes nothing away,
    # reconstructing through the same basis the reference uses
    rng = np.random.default_rng(1)
    block = rng.uniform(0, 1, size=(8, 8))
    shifted = block * 255.0 - 128.0
    ref_coef = dct2_reference(shifted)

    from advblur.jpegsim import _DCT

    coef = _DCT @ shifted @ _DCT.T
    np.testing.assert_allclose(coef, ref_coef, atol=1e-9)


def test_lower_quality_removes_more_noise_energy():
    # smooth base plus sensor noise; quantization strips noise progressively
    rng = np.random.default_rng(2)
    noise = rng.normal(0, 1, size=(48, 48))
    for _ in range(3):  # crude smoothing via repeated 3x3 box filters
        padded = np.pad(noise, 1, mode="edge")
        noise = sum(
            padded[du : du + 48, dv : dv + 48] for du in range(3) for dv in range(3)
        ) / 9.0
    img = np.clip(0.5 + 0.1 * noise + rng.normal(0, 0.03, size=(48, 48)), 0, 1)
    energies = [high_frequency_energy(img)]
    energies += [high_frequency_energy(jpeg_compress(img, q)) for q in (75.0, 30.0)]
    assert energies[0] >= energies[1] >= energies[2]


def test_pure_checkerboard_attenuated_at_strong_compression():
    base = np.full((32, 32), 0.5)
    checker = 0.05 * ((np.indices((32, 32)).sum(axis=0)) % 2 * 2 - 1)
    img = np.clip(base + checker, 0, 1)
    out = jpeg_compress(img, 20.0)
    # the alternating component is the highest DCT mode; a coarse table zeroes it
    residual = out - out.mean()
    assert np.abs(residual).max() < 0.01


def test_shapes_and_range():
    rng = np.random.default_rng(3)
    img = rng.uniform(0, 1, size=(20, 12, 3))  # not multiples of 8
    out = jpeg_compress(img, 60.0)
    assert out.shape == img.shape
    assert out.min() >= 0.0 and out.max() <= 1.0
    gray = jpeg_compress(img[:, :, 0], 60.0)
    assert gray.shape == (20, 12)


def test_quality_bounds():
    with pytest.raises(ValueError):
        jpeg_compress(np.zeros((8, 8)), 0.0)
    with pytest.raises(ValueError):
        jpeg_compress(np.zeros((8, 8)), 101.0)


def test_deterministic():
    rng = np.random.default_rng(4)
    img = rng.uniform(0, 1, size=(16, 16, 3))
    a = jpeg_compress(img, 42.0)
    b = jpeg_compress(img, 42.0)
    np.testing.assert_array_equal(a, b)
