"""Command-line entry point.

Subcommands::

    schedule    emit the eta/alpha/relative-noise table as CSV
    diffuse     visualize forward-diffused states at chosen timesteps
    train       run or resume the training loop
    sample      super-resolve an LR image with a trained checkpoint
    eval        PSNR/SSIM/MSE report over image pairs or a checkpoint
    gradcheck   finite-difference audit of the denoiser backward pass

Exit codes: 0 success, 1 check failure, 2 usage/config error,
3 runtime divergence.  The environment variable RESSHIFT_SEED supplies
the default seed wherever --seed is omitted.  Every command's output is
a pure function of (flags, config file, seed).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import diffusion, metrics
from .config import (
    RunConfig,
    apply_setting,
    default_seed,
    load_config,
)
from .degrade import degrade, upsample_nearest
from .errors import (
    ConfigConflictError,
    InvalidParameterError,
    ResShiftError,
    TrainingDivergenceError,
)
from .imageio import load_checkpoint, read_image, write_image
from .nn import gradcheck as gradcheck_mod
from .nn.denoiser import DenoiserConfig
from .rng import RandomStream
from .schedule import ScheduleParams, build_schedule, schedule_csv
from .train import fit, restore_model

DEFAULT_DIFFUSE_STEPS = (1, 3, 5, 7, 9, 12, 15)
GRADCHECK_TOLERANCE = 1e-4


def _schedule_params(args) -> ScheduleParams:
    return ScheduleParams(T=args.T, p=args.p, kappa=args.kappa).validate()


def _add_schedule_flags(sp, with_defaults=True):
    sp.add_argument("--T", type=int, default=15 if with_defaults else None)
    sp.add_argument("--p", type=float, default=0.3 if with_defaults else None)
    sp.add_argument("--kappa", type=float, default=2.0 if with_defaults else None)


def _load_run_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, base=cfg)
    for key, value in getattr(args, "set", None) or []:
        cfg = apply_setting(cfg, key, value)
    return cfg


def cmd_schedule(args) -> int:
    if args.sweep:
        name, _, values = args.sweep.partition("=")
        if name not in ("p", "kappa", "T") or not values:
            raise InvalidParameterError(f"--sweep expects e.g. p=0.3,0.5,1,2,3; got {args.sweep!r}")
        outdir = Path(args.out_dir)
        outdir.mkdir(parents=True, exist_ok=True)
        for raw in values.split(","):
            value = int(raw) if name == "T" else float(raw)
            params = ScheduleParams(
                T=value if name == "T" else args.T,
                p=value if name == "p" else args.p,
                kappa=value if name == "kappa" else args.kappa,
            ).validate()
            table = schedule_csv(build_schedule(params))
            path = outdir / f"schedule_{name}{raw}.csv"
            path.write_text(table, encoding="utf-8", newline="\n")
            print(path)
        return 0
    table = schedule_csv(build_schedule(_schedule_params(args)))
    if args.out:
        Path(args.out).write_text(table, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(table)
    return 0


def _toy_pair(cfg: RunConfig, index: int):
    """(x0, y0) for one toy image, degraded with its validation stream."""
    spec = cfg.dataset
    if not 0 <= index < spec.count:
        raise InvalidParameterError(f"toy index {index} outside 0..{spec.count - 1}")
    x0 = data_mod.generate_image(spec, index)
    _, y0 = degrade(x0, cfg.degradation, data_mod.val_degradation_stream(spec.seed, index))
    return x0, y0


def _image_pair(args):
    hr = read_image(args.hr)
    lr = read_image(args.lr)
    factor = args.scale_factor
    if (hr.shape[0], hr.shape[1] // factor, hr.shape[2] // factor) != lr.shape:
        raise InvalidParameterError(
            f"hr {hr.shape} is not lr {lr.shape} scaled by {factor}"
        )
    return hr, upsample_nearest(lr, factor)


def cmd_diffuse(args) -> int:
    params = _schedule_params(args)
    schedule = build_schedule(params)
    steps = [int(s) for s in args.timesteps.split(",")] if args.timesteps else list(DEFAULT_DIFFUSE_STEPS)
    for t in steps:
        if not 1 <= t <= params.T:
            raise InvalidParameterError(f"timestep {t} outside 1..{params.T}")
    if args.hr or args.lr:
        if not (args.hr and args.lr):
            raise InvalidParameterError("--hr and --lr must be given together")
        x0, y0 = _image_pair(args)
    else:
        cfg = _load_run_config(args)
        x0, y0 = _toy_pair(cfg, args.toy_index)
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else default_seed()
    ext = "pgm" if x0.shape[0] == 1 else "ppm"
    for t in steps:
        x_t = diffusion.sample_marginal(
            x0, y0, t, schedule, RandomStream(seed, "diffuse", t)
        )
        write_image(np.clip(x_t, 0.0, 1.0), outdir / f"xt_{t:03d}.{ext}")
    print(f"wrote {len(steps)} states to {outdir}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    overrides = {
        "train.iterations": args.iterations,
        "train.batch_size": args.batch_size,
        "train.lr": args.lr,
        "train.checkpoint_every": args.checkpoint_every,
        "schedule.T": args.T,
        "schedule.p": args.p,
        "schedule.kappa": args.kappa,
    }
    for key, val in overrides.items():
        if val is not None:
            cfg = apply_setting(cfg, key, str(val))
    if args.weighted_loss:
        cfg = apply_setting(cfg, "train.weighted_loss", "true")
    seed = args.seed if args.seed is not None else default_seed()
    cfg = apply_setting(cfg, "train.seed", str(seed))
    cfg.validate()
    result = fit(cfg, args.out_dir, resume=args.resume)
    print(f"final step {result.final_step}, loss {result.final_loss!r}")
    print(f"val_loss {result.val_loss_initial!r} -> {result.val_loss_final!r}")
    print(f"log: {result.log_path}")
    print(f"checkpoint: {result.checkpoint_path}")
    return 0


def cmd_sample(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if args.steps is not None and args.steps != ckpt.schedule_params.T:
        raise ConfigConflictError(
            f"--steps {args.steps} conflicts with checkpoint T={ckpt.schedule_params.T};"
            " re-timestepping a trained chain is not supported"
        )
    cfg = _load_run_config(args)
    if args.T is not None or args.p is not None or args.kappa is not None:
        sched_params = ScheduleParams(
            T=args.T if args.T is not None else ckpt.schedule_params.T,
            p=args.p if args.p is not None else ckpt.schedule_params.p,
            kappa=args.kappa if args.kappa is not None else ckpt.schedule_params.kappa,
        )
        if sched_params != ckpt.schedule_params:
            raise ConfigConflictError(
                f"schedule flags {sched_params} conflict with checkpoint {ckpt.schedule_params}"
            )
    model = restore_model(ckpt)
    schedule = build_schedule(ckpt.schedule_params)
    if args.lr_image:
        lr = read_image(args.lr_image)
        if lr.shape[0] != ckpt.denoiser_config.image_channels:
            raise ConfigConflictError(
                f"LR image has {lr.shape[0]} channels, model expects"
                f" {ckpt.denoiser_config.image_channels}"
            )
        y0 = upsample_nearest(lr, args.scale_factor)
    else:
        _, y0 = _toy_pair(cfg, args.toy_index)
    seed = args.seed if args.seed is not None else default_seed()

    trajectory = []
    on_step = (lambda t, x: trajectory.append((t, x.copy()))) if args.trajectory else None
    model.eval_count = 0
    out = diffusion.sample(
        y0,
        lambda x_t, yc, t: model.predict(x_t, yc, t),
        schedule,
        RandomStream(seed, "sample"),
        on_step=on_step,
    )
    write_image(out, args.out)
    if args.trajectory:
        tdir = Path(args.trajectory)
        tdir.mkdir(parents=True, exist_ok=True)
        ext = "pgm" if y0.shape[0] == 1 else "ppm"
        for t, x in trajectory:
            write_image(np.clip(x, 0.0, 1.0), tdir / f"xt_{t:03d}.{ext}")
    print(f"# denoiser_evals={model.eval_count}")
    print(args.out)
    return 0


def _pair_rows(pairs_dir: Path, baseline: str | None):
    files = {p.name: p for p in pairs_dir.iterdir() if p.suffix in (".pgm", ".ppm")}
    by_index: dict[str, dict[str, Path]] = {}
    for name, path in files.items():
        stem = path.stem
        for tag in ("hr", "sr", "lr"):
            if stem.endswith(f"_{tag}"):
                by_index.setdefault(stem[: -len(tag) - 1], {})[tag] = path
    orphans = [
        idx for idx, tags in sorted(by_index.items())
        if ("hr" in tags) != ("sr" in tags)
    ]
    if orphans:
        raise InvalidParameterError(f"unpaired files for indices: {', '.join(orphans)}")
    if baseline == "nearest":
        missing = [idx for idx, tags in sorted(by_index.items()) if "lr" not in tags]
        if missing:
            raise InvalidParameterError(
                f"--baseline nearest needs *_lr files; missing for: {', '.join(missing)}"
            )
    rows = []
    for idx in sorted(by_index):
        tags = by_index[idx]
        hr = read_image(tags["hr"])
        rows.append((idx, metrics.report(read_image(tags["sr"]), hr)))
        if baseline == "nearest":
            lr = read_image(tags["lr"])
            factor = hr.shape[1] // lr.shape[1]
            rows.append((f"{idx}:nearest", metrics.report(upsample_nearest(lr, factor), hr)))
    return rows


def cmd_eval(args) -> int:
    if args.pairs:
        rows = _pair_rows(Path(args.pairs), args.baseline)
    else:
        if not args.checkpoint:
            raise InvalidParameterError("eval needs --pairs DIR or --checkpoint CKPT")
        cfg = _load_run_config(args)
        ckpt = load_checkpoint(args.checkpoint)
        model = restore_model(ckpt, cfg)
        schedule = build_schedule(ckpt.schedule_params)
        dataset = data_mod.generate(cfg.dataset)
        _, val_idx = data_mod.split_indices(
            cfg.dataset.count, cfg.train.val_count, cfg.dataset.seed
        )
        seed = args.seed if args.seed is not None else default_seed()
        rows = []
        for i in val_idx:
            x0 = dataset[i]
            _, y0 = degrade(x0, cfg.degradation,
                            data_mod.val_degradation_stream(cfg.dataset.seed, int(i)))
            sr = diffusion.sample(
                y0,
                lambda x_t, yc, t: model.predict(x_t, yc, t),
                schedule,
                RandomStream(seed, "eval", int(i)),
            )
            rows.append((str(int(i)), metrics.report(sr, x0)))
            if args.baseline == "nearest":
                rows.append((f"{int(i)}:nearest", metrics.report(y0, x0)))
    text = metrics.report_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="\n")
    else:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args) -> int:
    cfg = DenoiserConfig(
        in_channels=2 * args.channels,
        base_width=args.base_width,
        depth=args.depth,
        time_embed_dim=args.time_embed_dim,
        T=args.T,
    ).validate()
    gradcheck_mod.CORRUPT_BACKWARD = bool(args.corrupt_backward)
    try:
        report = gradcheck_mod.check_denoiser(
            cfg, height=args.height, width=args.width, seed=args.seed or 0
        )
    finally:
        gradcheck_mod.CORRUPT_BACKWARD = False
    worst_name = max(report, key=report.get)
    ok = True
    for name in sorted(report):
        passed = report[name] < GRADCHECK_TOLERANCE
        ok &= passed
        print(f"{name},{report[name]:.3e},{'PASS' if passed else 'FAIL'}")
    if not ok:
        print(f"worst offender: {worst_name} ({report[worst_name]:.3e} >= {GRADCHECK_TOLERANCE})")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resshift",
        description="Residual-shifting diffusion toolkit for toy-scale super-resolution.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("schedule", help="emit the noise-schedule table as CSV")
    _add_schedule_flags(sp)
    sp.add_argument("--out", help="CSV file (stdout if omitted)")
    sp.add_argument("--sweep", help="e.g. p=0.3,0.5,1,2,3: one CSV per value")
    sp.add_argument("--out-dir", default=".", help="directory for --sweep output")
    sp.set_defaults(func=cmd_schedule)

    sp = sub.add_parser("diffuse", help="write forward-diffused states x_t")
    _add_schedule_flags(sp)
    sp.add_argument("--hr", help="HR image (P5/P6)")
    sp.add_argument("--lr", help="LR image (P5/P6)")
    sp.add_argument("--scale-factor", type=int, default=4)
    sp.add_argument("--toy-index", type=int, default=0)
    sp.add_argument("--config", help="run config file")
    sp.add_argument("--set", nargs=2, action="append", metavar=("KEY", "VALUE"))
    sp.add_argument("--timesteps", help="comma list, default 1,3,5,7,9,12,15")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_diffuse)

    sp = sub.add_parser("train", help="train (or resume) the denoiser")
    sp.add_argument("--config", help="run config file")
    sp.add_argument("--set", nargs=2, action="append", metavar=("KEY", "VALUE"),
                    help="override any section.key value")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--weighted-loss", action="store_true")
    sp.add_argument("--checkpoint-every", type=int)
    sp.add_argument("--seed", type=int)
    _add_schedule_flags(sp, with_defaults=False)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sample", help="super-resolve with a trained checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--lr-image", help="LR image file")
    sp.add_argument("--scale-factor", type=int, default=4)
    sp.add_argument("--toy-index", type=int, default=0)
    sp.add_argument("--config", help="run config file (toy mode)")
    sp.add_argument("--set", nargs=2, action="append", metavar=("KEY", "VALUE"))
    sp.add_argument("--out", required=True, help="output image path")
    sp.add_argument("--trajectory", help="directory for intermediate x_t dumps")
    sp.add_argument("--steps", type=int, help="must match the checkpoint's T")
    sp.add_argument("--seed", type=int)
    _add_schedule_flags(sp, with_defaults=False)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("eval", help="PSNR/SSIM/MSE report")
    sp.add_argument("--pairs", help="directory of *_sr/*_hr (and *_lr) images")
    sp.add_argument("--checkpoint", help="evaluate this checkpoint on the validation split")
    sp.add_argument("--config", help="run config file (checkpoint mode)")
    sp.add_argument("--set", nargs=2, action="append", metavar=("KEY", "VALUE"))
    sp.add_argument("--baseline", choices=["nearest"], help="add baseline comparison rows")
    sp.add_argument("--out", help="report CSV path (stdout if omitted)")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference audit of the backward pass")
    sp.add_argument("--base-width", type=int, default=8)
    sp.add_argument("--depth", type=int, default=1)
    sp.add_argument("--channels", type=int, default=1)
    sp.add_argument("--time-embed-dim", type=int, default=16)
    sp.add_argument("--T", type=int, default=15)
    sp.add_argument("--height", type=int, default=8)
    sp.add_argument("--width", type=int, default=8)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--corrupt-backward", action="store_true", help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except TrainingDivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ResShiftError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
