"""Run configuration: defaults, flat config-file parsing, cross-checks.

The config file is a flat ``section.key = value`` text format with
``#`` comments, e.g.::

    # desk-scale run
    schedule.T = 15
    schedule.p = 0.3
    schedule.kappa = 2.0
    train.iterations = 20000
    dataset.count = 2200

Command-line flags override file values.  Defaults are the desk-scale
recipe (20K iterations, batch 16, 32x32 images, x4); the full-scale
values remain settable through the same keys.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace

from .data import ToyDatasetSpec
from .degrade import DegradationConfig
from .errors import InvalidParameterError, ShapeError
from .nn.denoiser import DenoiserConfig
from .schedule import ScheduleParams

SEED_ENV_VAR = "RESSHIFT_SEED"


@dataclass(frozen=True)
class TrainParams:
    iterations: int = 20000
    batch_size: int = 16
    lr: float = 5e-5
    weighted_loss: bool = False
    checkpoint_every: int = 2000
    val_count: int = 200
    val_psnr_subset: int = 16
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    schedule: ScheduleParams = field(default_factory=ScheduleParams)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    degradation: DegradationConfig = field(default_factory=DegradationConfig)
    dataset: ToyDatasetSpec = field(default_factory=ToyDatasetSpec)
    train: TrainParams = field(default_factory=TrainParams)

    def validate(self) -> "RunConfig":
        """Field-level checks plus the cross-field consistency rules."""
        self.schedule.validate()
        denoiser = self.denoiser
        if denoiser.T != self.schedule.T:
            raise InvalidParameterError(
                f"denoiser T={denoiser.T} must match schedule T={self.schedule.T}"
            )
        if denoiser.in_channels != 2 * self.dataset.channels:
            raise InvalidParameterError(
                f"denoiser in_channels={denoiser.in_channels} must be twice the"
                f" image channels ({self.dataset.channels})"
            )
        denoiser.validate()
        self.degradation.validate()
        self.dataset.validate(divisor=denoiser.divisor, scale_factor=self.degradation.scale_factor)
        t = self.train
        if t.iterations < 0:
            raise InvalidParameterError(f"iterations must be >= 0, got {t.iterations}")
        if t.lr <= 0:
            raise InvalidParameterError(f"lr must be positive, got {t.lr}")
        if t.checkpoint_every < 1:
            raise InvalidParameterError(f"checkpoint_every must be >= 1, got {t.checkpoint_every}")
        if not 0 <= t.val_count < self.dataset.count:
            raise InvalidParameterError(
                f"val_count={t.val_count} outside 0..{self.dataset.count - 1}"
            )
        n_train = self.dataset.count - t.val_count
        if not 1 <= t.batch_size <= n_train:
            raise ShapeError(f"batch_size={t.batch_size} outside 1..{n_train} (training split)")
        return self


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise InvalidParameterError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}")


def _parse_bool(raw: str) -> bool:
    if raw.lower() in ("true", "1", "yes", "on"):
        return True
    if raw.lower() in ("false", "0", "no", "off"):
        return False
    raise InvalidParameterError(f"expected a boolean, got {raw!r}")


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    """Apply ``section.key = value`` lines on top of `base` (or defaults)."""
    cfg = base or RunConfig()
    assignments: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise InvalidParameterError(f"config line {lineno}: expected 'section.key = value'")
        key, _, raw = stripped.partition("=")
        assignments[key.strip()] = raw.strip()
    for key, raw in assignments.items():
        cfg = apply_setting(cfg, key, raw)
    return cfg


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base=base)


_PATTERN_KEYS = {f"pattern_{name}": i for i, name in enumerate(("gradient", "checker", "blob", "stripes"))}

_RANGE_KEYS = {
    "width_min": ("width_range", 0), "width_max": ("width_range", 1),
    "gaussian_level_min": ("gaussian_level_range", 0), "gaussian_level_max": ("gaussian_level_range", 1),
    "poisson_scale_min": ("poisson_scale_range", 0), "poisson_scale_max": ("poisson_scale_range", 1),
}


def _to_float(raw: str, key: str) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise InvalidParameterError(f"config key {key!r}: {exc}") from exc


def apply_setting(cfg: RunConfig, dotted_key: str, raw: str) -> RunConfig:
    """Set one ``section.key`` from its textual value; returns a new config."""
    if "." not in dotted_key:
        raise InvalidParameterError(f"config key {dotted_key!r} must look like section.key")
    section_name, key = dotted_key.split(".", 1)
    section = getattr(cfg, section_name, None)
    if section is None or section_name not in {f.name for f in fields(cfg)}:
        raise InvalidParameterError(f"unknown config section {section_name!r}")

    if section_name == "dataset" and key in _PATTERN_KEYS:
        mix = list(section.pattern_mix)
        mix[_PATTERN_KEYS[key]] = _to_float(raw, dotted_key)
        return replace(cfg, dataset=replace(section, pattern_mix=tuple(mix)))
    if section_name == "degradation" and key in _RANGE_KEYS:
        attr, slot = _RANGE_KEYS[key]
        rng = list(getattr(section, attr))
        rng[slot] = _to_float(raw, dotted_key)
        return replace(cfg, degradation=replace(section, **{attr: tuple(rng)}))
    if section_name == "degradation" and key == "down_modes":
        modes = tuple(m.strip() for m in raw.split(",") if m.strip())
        return replace(cfg, degradation=replace(section, down_modes=modes))

    section_fields = {f.name: f for f in fields(section)}
    if key not in section_fields:
        raise InvalidParameterError(f"unknown config key {dotted_key!r}")
    current = getattr(section, key)
    try:
        if isinstance(current, bool):
            value = _parse_bool(raw)
        elif isinstance(current, int):
            value = int(raw)
        elif isinstance(current, float):
            value = float(raw)
        else:
            raise InvalidParameterError(f"config key {dotted_key!r} is not settable from text")
    except ValueError as exc:
        raise InvalidParameterError(f"config key {dotted_key!r}: {exc}") from exc
    new_section = replace(section, **{key: value})
    updated = replace(cfg, **{section_name: new_section})
    # keep the denoiser's T and channel count slaved to schedule/dataset
    if section_name == "schedule" and key == "T":
        updated = replace(updated, denoiser=replace(updated.denoiser, T=value))
    if section_name == "dataset" and key == "channels":
        updated = replace(updated, denoiser=replace(updated.denoiser, in_channels=2 * value))
    return updated


def config_text(cfg: RunConfig) -> str:
    """Serialize a RunConfig back to the flat key-value format."""
    lines = []
    for sec_field in fields(cfg):
        section = getattr(cfg, sec_field.name)
        for f in fields(section):
            val = getattr(section, f.name)
            if f.name == "pattern_mix":
                for pname, i in _PATTERN_KEYS.items():
                    lines.append(f"dataset.{pname} = {val[i]!r}")
                continue
            if f.name in ("width_range", "gaussian_level_range", "poisson_scale_range"):
                base = f.name.replace("_range", "")
                lines.append(f"degradation.{base}_min = {val[0]!r}")
                lines.append(f"degradation.{base}_max = {val[1]!r}")
                continue
            if f.name == "down_modes":
                lines.append(f"degradation.down_modes = {','.join(val)}")
                continue
            if isinstance(val, bool):
                lines.append(f"{sec_field.name}.{f.name} = {'true' if val else 'false'}")
            elif isinstance(val, float):
                lines.append(f"{sec_field.name}.{f.name} = {val!r}")
            else:
                lines.append(f"{sec_field.name}.{f.name} = {val}")
    return "\n".join(lines) + "\n"
