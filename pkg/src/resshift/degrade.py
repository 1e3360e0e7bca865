"""Randomized degradation pipeline synthesizing LR training inputs.

Each HR image is blurred with a randomly drawn Gaussian kernel
(isotropic with probability 0.6, otherwise anisotropic with independent
per-axis widths), downsampled by the scale factor with a randomly chosen
interpolation mode (area, bilinear, or bicubic), corrupted with either
Gaussian read noise (level drawn from [1, 15] on the 0-255 scale) or
Poisson shot noise (scale in [0.05, 0.3]) with equal probability, and
finally clamped to [0, 1].  The companion y0 tensor is the LR result
nearest-neighbor upsampled back to HR resolution.

Conventions, fixed so outputs are reproducible across implementations:

* blur kernels are axis-aligned, normalized to sum 1, applied as a true
  2-D convolution with reflective ('reflect', edge not repeated) border
  padding;
* bilinear and bicubic resampling use the align-corners-false source
  mapping src = (dst + 0.5) * factor - 0.5 with clamped borders, bicubic
  with Catmull-Rom coefficient a = -0.5;
* noise is added before the single final clamp;
* the random stream is consumed in a fixed order: kernel family, then
  width(s), interpolation mode, noise family, noise parameter, noise
  draw.

The JPEG compression stage present in some degradation models is
deliberately not implemented; `DegradationConfig` leaves room for an
extension hook but a bit-exact codec is out of scope here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidParameterError, ShapeError
from .rng import RandomStream

DOWN_MODES = ("area", "bilinear", "bicubic")


@dataclass(frozen=True)
class DegradationConfig:
    kernel_size: int = 13
    iso_prob: float = 0.6
    width_range: tuple[float, float] = (0.2, 0.8)
    down_modes: tuple[str, ...] = DOWN_MODES
    gaussian_prob: float = 0.5
    gaussian_level_range: tuple[float, float] = (1.0, 15.0)
    poisson_scale_range: tuple[float, float] = (0.05, 0.3)
    scale_factor: int = 4

    def validate(self) -> "DegradationConfig":
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise InvalidParameterError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        for name, p in (("iso_prob", self.iso_prob), ("gaussian_prob", self.gaussian_prob)):
            if not 0.0 <= p <= 1.0:
                raise InvalidParameterError(f"{name} must lie in [0, 1], got {p}")
        for name, (lo, hi) in (
            ("width_range", self.width_range),
            ("gaussian_level_range", self.gaussian_level_range),
            ("poisson_scale_range", self.poisson_scale_range),
        ):
            if not (lo <= hi):
                raise InvalidParameterError(f"{name} is empty: {lo}..{hi}")
        if self.width_range[0] <= 0:
            raise InvalidParameterError("kernel widths must be positive")
        if not self.down_modes or any(m not in DOWN_MODES for m in self.down_modes):
            raise InvalidParameterError(f"down_modes must be a nonempty subset of {DOWN_MODES}")
        if self.scale_factor < 1:
            raise InvalidParameterError(f"scale_factor must be >= 1, got {self.scale_factor}")
        return self


@dataclass(frozen=True)
class BlurKernel:
    size: int
    taps: np.ndarray  # (size, size), nonnegative, sums to 1
    # rank-1 factorization (taps = outer(row_taps, col_taps)) when the
    # kernel is separable; lets convolve() run as two 1-D passes
    row_taps: np.ndarray | None = None
    col_taps: np.ndarray | None = None


@dataclass(frozen=True)
class DegradationPlan:
    """The random draws of one pipeline invocation, for inspection/tests."""

    isotropic: bool
    width_x: float
    width_y: float
    mode: str
    gaussian: bool
    noise_param: float  # level for Gaussian, scale for Poisson


def gaussian_kernel(width_x: float, width_y: float, size: int) -> BlurKernel:
    """Discretized axis-aligned Gaussian, normalized to sum 1."""
    if width_x <= 0 or width_y <= 0:
        raise InvalidParameterError(f"kernel widths must be positive, got ({width_x}, {width_y})")
    if size < 1 or size % 2 == 0:
        raise InvalidParameterError(f"kernel size must be odd and positive, got {size}")
    c = size // 2
    ax = np.arange(size) - c
    gx = np.exp(-(ax ** 2) / (2.0 * width_x ** 2))
    gy = np.exp(-(ax ** 2) / (2.0 * width_y ** 2))
    gx /= gx.sum()
    gy /= gy.sum()
    taps = np.outer(gx, gy)
    return BlurKernel(size=size, taps=taps, row_taps=gx, col_taps=gy)


def convolve(img: np.ndarray, kernel: BlurKernel) -> np.ndarray:
    """True per-channel 2-D convolution with reflective padding.

    Output matches the input shape; constants are preserved because the
    taps sum to 1 and reflection introduces no new values.  Separable
    kernels (all the Gaussians used here) run as two 1-D passes.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ShapeError(f"expected (C, H, W), got {img.shape}")
    c = kernel.size // 2
    _, H, W = img.shape
    if c > H - 1 or c > W - 1:
        raise ShapeError(
            f"kernel {kernel.size} too large for {H}x{W} image with reflective padding"
        )
    if kernel.row_taps is not None and kernel.col_taps is not None:
        out = np.pad(img, ((0, 0), (c, c), (0, 0)), mode="reflect")
        out = np.tensordot(
            sliding_window_view(out, kernel.size, axis=1), kernel.row_taps[::-1], axes=(3, 0)
        )
        out = np.pad(out, ((0, 0), (0, 0), (c, c)), mode="reflect")
        return np.tensordot(
            sliding_window_view(out, kernel.size, axis=2), kernel.col_taps[::-1], axes=(3, 0)
        )
    flipped = kernel.taps[::-1, ::-1]
    padded = np.pad(img, ((0, 0), (c, c), (c, c)), mode="reflect")
    win = sliding_window_view(padded, (kernel.size, kernel.size), axis=(1, 2))
    return np.tensordot(win, flipped, axes=([3, 4], [0, 1]))


def _resample_matrix(n_in: int, n_out: int, mode: str) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix realizing 1-D resampling."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        if mode == "bilinear":
            lo = int(np.floor(src))
            frac = src - lo
            for tap, wgt in ((lo, 1.0 - frac), (lo + 1, frac)):
                m[i, min(max(tap, 0), n_in - 1)] += wgt
        else:  # bicubic, Catmull-Rom a = -0.5
            a = -0.5
            lo = int(np.floor(src))
            for tap in range(lo - 1, lo + 3):
                d = abs(src - tap)
                if d <= 1.0:
                    wgt = (a + 2.0) * d ** 3 - (a + 3.0) * d ** 2 + 1.0
                elif d < 2.0:
                    wgt = a * d ** 3 - 5.0 * a * d ** 2 + 8.0 * a * d - 4.0 * a
                else:
                    wgt = 0.0
                m[i, min(max(tap, 0), n_in - 1)] += wgt
    return m


def downsample(img: np.ndarray, factor: int, mode: str) -> np.ndarray:
    """Shrink H and W by an integer factor with the requested resampler."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ShapeError(f"expected (C, H, W), got {img.shape}")
    if mode not in DOWN_MODES:
        raise InvalidParameterError(f"unknown mode {mode!r}; expected one of {DOWN_MODES}")
    if factor < 1:
        raise InvalidParameterError(f"factor must be >= 1, got {factor}")
    C, H, W = img.shape
    if H % factor or W % factor:
        raise ShapeError(f"dims {H}x{W} not divisible by factor {factor}")
    if factor == 1:
        return img.copy()
    if mode == "area":
        return img.reshape(C, H // factor, factor, W // factor, factor).mean(axis=(2, 4))
    mh = _resample_matrix(H, H // factor, mode)
    mw = _resample_matrix(W, W // factor, mode)
    return np.einsum("ij,cjk,lk->cil", mh, img, mw, optimize=True)


def upsample_nearest(lr: np.ndarray, factor: int) -> np.ndarray:
    """Replicate every source pixel factor x factor."""
    lr = np.asarray(lr, dtype=np.float64)
    if factor < 1:
        raise InvalidParameterError(f"factor must be >= 1, got {factor}")
    return lr.repeat(factor, axis=-2).repeat(factor, axis=-1)


def add_gaussian_noise(img: np.ndarray, level: float, rng: RandomStream) -> np.ndarray:
    """img + (level/255) * xi; level is on the 8-bit scale, no clamping here."""
    img = np.asarray(img, dtype=np.float64)
    return img + (level / 255.0) * rng.normal(img.shape)


def add_poisson_noise(img: np.ndarray, scale: float, rng: RandomStream) -> np.ndarray:
    """Shot noise: k ~ Poisson(v / scale) per element, output k * scale.

    The output has mean v and variance v * scale, so larger scales mean
    coarser, stronger noise.
    """
    img = np.asarray(img, dtype=np.float64)
    counts = rng.poisson(img / scale)
    return counts * scale


def sample_plan(cfg: DegradationConfig, rng: RandomStream) -> DegradationPlan:
    """Draw the pipeline's random choices in their documented order."""
    isotropic = rng.uniform() < cfg.iso_prob
    lo, hi = cfg.width_range
    wx = lo + (hi - lo) * rng.uniform()
    wy = wx if isotropic else lo + (hi - lo) * rng.uniform()
    mode = cfg.down_modes[rng.integers(0, len(cfg.down_modes))]
    gaussian = rng.uniform() < cfg.gaussian_prob
    if gaussian:
        glo, ghi = cfg.gaussian_level_range
        param = glo + (ghi - glo) * rng.uniform()
    else:
        plo, phi = cfg.poisson_scale_range
        param = plo + (phi - plo) * rng.uniform()
    return DegradationPlan(
        isotropic=bool(isotropic), width_x=wx, width_y=wy, mode=mode,
        gaussian=bool(gaussian), noise_param=param,
    )


def apply_plan(
    hr: np.ndarray, plan: DegradationPlan, cfg: DegradationConfig, rng: RandomStream
) -> tuple[np.ndarray, np.ndarray]:
    """Run blur -> downsample -> noise -> clamp for fixed random choices."""
    hr = np.asarray(hr, dtype=np.float64)
    kern = gaussian_kernel(plan.width_x, plan.width_y, cfg.kernel_size)
    blurred = convolve(hr, kern)
    small = downsample(blurred, cfg.scale_factor, plan.mode)
    if plan.gaussian:
        noisy = add_gaussian_noise(small, plan.noise_param, rng)
    else:
        # bicubic overshoot can leave tiny negatives; Poisson rates cannot be negative
        noisy = add_poisson_noise(np.clip(small, 0.0, None), plan.noise_param, rng)
    lr = np.clip(noisy, 0.0, 1.0)
    return lr, upsample_nearest(lr, cfg.scale_factor)


def degrade(
    hr: np.ndarray, cfg: DegradationConfig, rng: RandomStream
) -> tuple[np.ndarray, np.ndarray]:
    """Full randomized pipeline; returns (lr, y0) with y0 at HR resolution."""
    cfg.validate()
    hr = np.asarray(hr, dtype=np.float64)
    if hr.ndim != 3:
        raise ShapeError(f"expected (C, H, W), got {hr.shape}")
    plan = sample_plan(cfg, rng)
    return apply_plan(hr, plan, cfg, rng)
