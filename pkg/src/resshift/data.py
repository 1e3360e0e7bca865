"""Procedural toy images and reproducible (x0, y0) batch streams.

Four pattern families stand in for natural image crops: oriented linear
gradients, checkerboards, sums of Gaussian blobs, and sinusoidal
stripes.  Every image is a pure function of (dataset seed, index), every
degradation of (dataset seed, index, epoch), and the train/validation
split of (dataset seed, index) alone, so runs are reproducible and
validation comparisons are paired across training runs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .degrade import DegradationConfig, degrade
from .errors import InvalidParameterError, ShapeError
from .rng import RandomStream

PATTERNS = ("gradient", "checker", "blob", "stripes")


@dataclass(frozen=True)
class ToyDatasetSpec:
    count: int = 2200
    height: int = 32
    width: int = 32
    channels: int = 1
    pattern_mix: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    seed: int = 0

    def validate(self, divisor: int = 1, scale_factor: int = 1) -> "ToyDatasetSpec":
        if self.count < 1:
            raise InvalidParameterError(f"count must be positive, got {self.count}")
        if self.channels not in (1, 3):
            raise InvalidParameterError(f"channels must be 1 or 3, got {self.channels}")
        for name, dim in (("height", self.height), ("width", self.width)):
            if dim < 1 or dim % divisor or dim % scale_factor:
                raise ShapeError(
                    f"{name}={dim} must be divisible by the denoiser divisor {divisor}"
                    f" and scale_factor={scale_factor}"
                )
        mix = np.asarray(self.pattern_mix, dtype=np.float64)
        if mix.shape != (4,) or np.any(mix < 0) or mix.sum() <= 0:
            raise InvalidParameterError(
                f"pattern_mix needs 4 nonnegative weights with positive sum, got {self.pattern_mix}"
            )
        return self


def _gradient(rng: RandomStream, h: int, w: int) -> np.ndarray:
    theta = 2.0 * np.pi * rng.uniform()
    yy, xx = np.mgrid[0:h, 0:w]
    g = np.cos(theta) * (xx / max(w - 1, 1) - 0.5) + np.sin(theta) * (yy / max(h - 1, 1) - 0.5)
    lo, hi = g.min(), g.max()
    return (g - lo) / (hi - lo) if hi > lo else np.full((h, w), 0.5)


def _checker(rng: RandomStream, h: int, w: int) -> np.ndarray:
    period = (2, 4, 8)[rng.integers(0, 3)]
    px = rng.integers(0, period)
    py = rng.integers(0, period)
    lo = 0.4 * rng.uniform()
    hi = 0.6 + 0.4 * rng.uniform()
    yy, xx = np.mgrid[0:h, 0:w]
    cells = ((xx + px) // period + (yy + py) // period) % 2
    return np.where(cells == 0, lo, hi)


def _blob(rng: RandomStream, h: int, w: int) -> np.ndarray:
    n = rng.integers(1, 5)
    yy, xx = np.mgrid[0:h, 0:w]
    img = np.zeros((h, w))
    for _ in range(n):
        cy = rng.uniform() * (h - 1)
        cx = rng.uniform() * (w - 1)
        sigma = 2.0 + rng.uniform() * (min(h, w) / 4.0 - 2.0)
        amp = 0.3 + 0.7 * rng.uniform()
        img += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma ** 2))
    return np.clip(img, 0.0, 1.0)


def _stripes(rng: RandomStream, h: int, w: int) -> np.ndarray:
    theta = 2.0 * np.pi * rng.uniform()
    cycles = 1.0 + 3.0 * rng.uniform()
    phase = 2.0 * np.pi * rng.uniform()
    yy, xx = np.mgrid[0:h, 0:w]
    u = (np.cos(theta) * xx + np.sin(theta) * yy) / max(w, h)
    return 0.5 + 0.45 * np.sin(2.0 * np.pi * cycles * u + phase)


_MAKERS = {"gradient": _gradient, "checker": _checker, "blob": _blob, "stripes": _stripes}


def generate_image(spec: ToyDatasetSpec, index: int) -> np.ndarray:
    """The index-th image of the dataset, shape (channels, H, W) in [0, 1]."""
    rng = RandomStream(spec.seed, "image", index)
    mix = np.asarray(spec.pattern_mix, dtype=np.float64)
    cdf = np.cumsum(mix / mix.sum())
    pattern = PATTERNS[int(np.searchsorted(cdf, rng.uniform(), side="right"))]
    maker = _MAKERS[pattern]
    planes = [maker(rng.child("ch", c), spec.height, spec.width) for c in range(spec.channels)]
    return np.stack(planes, axis=0)


def generate(spec: ToyDatasetSpec) -> np.ndarray:
    """All images as one (count, channels, H, W) array."""
    spec.validate()  # structural checks only here
    return np.stack([generate_image(spec, i) for i in range(spec.count)], axis=0)


def pattern_of(spec: ToyDatasetSpec, index: int) -> str:
    """Which family the index-th image belongs to (used by frequency tests)."""
    rng = RandomStream(spec.seed, "image", index)
    mix = np.asarray(spec.pattern_mix, dtype=np.float64)
    cdf = np.cumsum(mix / mix.sum())
    return PATTERNS[int(np.searchsorted(cdf, rng.uniform(), side="right"))]


def split_indices(count: int, val_count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic disjoint (train, val) index split.

    Each index is ranked by a hash of (seed, index); the `val_count`
    smallest ranks form the validation set.  Membership of an index
    never depends on `count`, so growing the dataset keeps prior
    validation members stable.
    """
    if not 0 <= val_count <= count:
        raise InvalidParameterError(f"val_count {val_count} outside 0..{count}")
    digests = np.array([
        int.from_bytes(
            hashlib.blake2b(f"split:{seed}:{i}".encode(), digest_size=8).digest(), "little"
        )
        for i in range(count)
    ], dtype=np.uint64)
    order = np.argsort(digests, kind="stable")
    val = np.sort(order[:val_count])
    train = np.sort(order[val_count:])
    return train, val


def degradation_stream(dataset_seed: int, index: int, epoch: int) -> RandomStream:
    """The rng used to degrade example `index` during `epoch`."""
    return RandomStream(dataset_seed, "degrade", epoch, index)


def val_degradation_stream(dataset_seed: int, index: int) -> RandomStream:
    """Epoch-independent rng for validation pairs (fixed y0 across a run)."""
    return RandomStream(dataset_seed, "val-degrade", index)


def export_pairs(
    root,
    split: str,
    spec: ToyDatasetSpec,
    cfg: DegradationConfig,
    indices: np.ndarray,
    dataset: np.ndarray,
) -> list[str]:
    """Write `{split}/{index}_hr` and `{split}/{index}_lr` image files.

    Validation-style epoch-independent degradation seeds are used so the
    exported pairs match what evaluation sees.  Returns the paths written.
    """
    from pathlib import Path

    from .imageio import write_image

    ext = "pgm" if spec.channels == 1 else "ppm"
    outdir = Path(root) / split
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    for pos, idx in enumerate(indices):
        hr = dataset[pos]
        lr, _ = degrade(hr, cfg, val_degradation_stream(spec.seed, int(idx)))
        for tag, img in (("hr", hr), ("lr", lr)):
            path = outdir / f"{int(idx):05d}_{tag}.{ext}"
            write_image(np.clip(img, 0.0, 1.0), path)
            written.append(str(path))
    return written


def batches(
    dataset: np.ndarray,
    batch_size: int,
    epoch_seed: int,
    spec: ToyDatasetSpec,
    cfg: DegradationConfig,
    indices: np.ndarray | None = None,
):
    """Yield shuffled (x0, y0) batches for one epoch; partial tail dropped.

    `indices` restricts the epoch to a subset (e.g. the training split);
    positions in `dataset` correspond to those dataset indices.
    """
    if dataset.shape[0] == 0:
        raise InvalidParameterError("empty dataset")
    if batch_size < 1 or batch_size > dataset.shape[0]:
        raise InvalidParameterError(
            f"batch_size {batch_size} outside 1..{dataset.shape[0]}"
        )
    if indices is None:
        indices = np.arange(dataset.shape[0])
    order = RandomStream(spec.seed, "shuffle", epoch_seed).shuffle_order(len(indices))
    for start in range(0, len(indices) - batch_size + 1, batch_size):
        pos = order[start:start + batch_size]
        idx = indices[pos]
        x0 = dataset[pos]
        y0 = np.stack([
            degrade(x0[j], cfg, degradation_stream(spec.seed, int(idx[j]), epoch_seed))[1]
            for j in range(batch_size)
        ])
        yield x0, y0
