"""JPEG-style compression simulator.

8x8 block DCT with the standard luminance quantization table scaled by a
quality factor, applied to every channel independently. This reproduces the
artifact class of JPEG (blocking, ringing, high-frequency loss) without an
external codec; bit-exactness with any particular codec is a non-goal.
"""

from __future__ import annotations

import numpy as np

# ITU-T81 Annex K luminance table
LUMA_QTABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


def _dct_matrix() -> np.ndarray:
    # orthonormal DCT-II basis, 8 points
    n = 8
    m = np.zeros((n, n))
    for k in range(n):
        for x in range(n):
            m[k, x] = np.cos(np.pi * (x + 0.5) * k / n)
    m *= np.sqrt(2.0 / n)
    m[0, :] /= np.sqrt(2.0)
    return m


_DCT = _dct_matrix()


def quant_table(quality: float) -> np.ndarray:
    """Luminance table scaled by the usual IJG quality mapping."""
    if not 1.0 <= quality <= 100.0:
        raise ValueError(f"quality must be in [1, 100], got {quality}")
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    table = np.floor((LUMA_QTABLE * scale + 50.0) / 100.0)
    return np.clip(table, 1.0, 255.0)


def jpeg_compress(image: np.ndarray, quality: float) -> np.ndarray:
    """Round-trip an image in [0, 1] through simulated JPEG compression.

    Accepts (h, w) or (h, w, c); channels are processed independently with the
    luminance table. Image planes whose sides are not multiples of 8 are
    edge-padded for the transform and cropped back.
    """
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    if img.ndim != 3:
        raise ValueError(f"expected (h, w) or (h, w, c), got shape {img.shape}")

    h, w, c = img.shape
    ph = (-h) % 8
    pw = (-w) % 8
    x = np.pad(img, ((0, ph), (0, pw), (0, 0)), mode="edge")
    x = x * 255.0 - 128.0

    qt = quant_table(quality)
    hh, ww = x.shape[0], x.shape[1]
    # (n_blocks_i, n_blocks_j, 8, 8, c) view for vectorized per-block matmuls
    blocks = x.reshape(hh // 8, 8, ww // 8, 8, c).transpose(0, 2, 4, 1, 3)
    coef = np.einsum("ab,ijcbd,ed->ijcae", _DCT, blocks, _DCT)
    coef = np.round(coef / qt) * qt
    rec = np.einsum("ba,ijcbd,de->ijcae", _DCT, coef, _DCT)
    out = rec.transpose(0, 3, 1, 4, 2).reshape(hh, ww, c)

    out = (out + 128.0) / 255.0
    out = np.clip(out[:h, :w, :], 0.0, 1.0)
    return out[:, :, 0] if squeeze else out


def high_frequency_energy(image: np.ndarray) -> float:
    """Mean squared residual after a 3x3 box filter; a scalar sharpness proxy."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img.mean(axis=2)
    padded = np.pad(img, 1, mode="edge")
    acc = np.zeros_like(img)
    for du in range(3):
        for dv in range(3):
            acc += padded[du : du + img.shape[0], dv : dv + img.shape[1]]
    residual = img - acc / 9.0
    return float((residual**2).mean())
