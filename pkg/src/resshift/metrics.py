"""Reference image-quality metrics: MSE, PSNR, SSIM.

All metrics operate on (C, H, W) arrays in [0, 1] and treat channels
symmetrically (PSNR uses the all-channel mean squared error; SSIM is
computed per channel and averaged).  Outputs should be clamped before
evaluation; no border crop is applied because the toy images are small.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

#: PSNR reported for a pixel-exact match (the mse=0 sentinel).
PSNR_CAP_DB = 99.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float
    mse: float


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1/mse) for unit peak; capped at 99 dB when mse = 0."""
    m = mse(a, b)
    if m == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / m)


def _ssim_window() -> np.ndarray:
    c = SSIM_WINDOW // 2
    ax = np.arange(SSIM_WINDOW) - c
    g = np.exp(-(ax ** 2) / (2.0 * SSIM_SIGMA ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_mean(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    win = sliding_window_view(x, w.shape)
    return np.tensordot(win, w, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM, 11x11 Gaussian window (sigma 1.5), per-channel averaged.

    Windows are fully interior ('valid'): an image smaller than the
    window cannot be scored.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ShapeError(f"expected (C, H, W), got {a.shape}")
    _, H, W = a.shape
    if H < SSIM_WINDOW or W < SSIM_WINDOW:
        raise ShapeError(f"image {H}x{W} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    w = _ssim_window()
    scores = []
    for ch in range(a.shape[0]):
        x, y = a[ch], b[ch]
        mu_x = _windowed_mean(x, w)
        mu_y = _windowed_mean(y, w)
        xx = _windowed_mean(x * x, w) - mu_x ** 2
        yy = _windowed_mean(y * y, w) - mu_y ** 2
        xy = _windowed_mean(x * y, w) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * xy + SSIM_C2)
        den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (xx + yy + SSIM_C2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def report(a: np.ndarray, b: np.ndarray) -> MetricReport:
    return MetricReport(psnr_db=psnr(a, b), ssim=ssim(a, b), mse=mse(a, b))


def report_csv(rows: list[tuple[str, MetricReport]]) -> str:
    """Evaluation CSV: index,psnr,ssim,mse rows plus a trailing mean row."""
    buf = io.StringIO()
    buf.write("index,psnr,ssim,mse\n")
    for name, r in rows:
        buf.write(f"{name},{r.psnr_db:.17g},{r.ssim:.17g},{r.mse:.17g}\n")
    if rows:
        mp = float(np.mean([r.psnr_db for _, r in rows]))
        ms = float(np.mean([r.ssim for _, r in rows]))
        mm = float(np.mean([r.mse for _, r in rows]))
        buf.write(f"mean,{mp:.17g},{ms:.17g},{mm:.17g}\n")
    return buf.getvalue()
