"""Training loop: batch -> marginal sample -> MSE -> Adam, with resume.

Every source of randomness is keyed by (seed, purpose, step/epoch/index)
rather than drawn from one sequential stream, so resuming from a
checkpoint at step k reproduces the exact loss sequence of an
uninterrupted run: there is no hidden generator state to restore.

The log file is a ``step,loss,val_psnr`` CSV.  val_psnr is filled on
checkpoint steps (sampled on a small fixed validation subset) and left
empty elsewhere; diagnostic values appear on '#'-prefixed lines.  No
timestamps are written anywhere, so repeated runs are byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import diffusion
from .config import RunConfig
from .degrade import degrade
from .errors import ConfigConflictError, TrainingDivergenceError
from .imageio import Checkpoint, load_checkpoint, save_checkpoint
from .metrics import psnr
from .nn.adam import AdamState, adam_step
from .nn.denoiser import Denoiser
from .rng import RandomStream
from .schedule import build_schedule


@dataclass
class TrainResult:
    final_step: int
    final_loss: float
    val_loss_initial: float
    val_loss_final: float
    log_path: str
    checkpoint_path: str


def make_checkpoint(cfg: RunConfig, model: Denoiser, adam: AdamState | None, step: int) -> Checkpoint:
    return Checkpoint(
        format_version=1,
        denoiser_config=cfg.denoiser,
        schedule_params=cfg.schedule,
        tensors={k: v.copy() for k, v in model.state_arrays().items()},
        adam_state=adam,
        train_step=step,
    )


def restore_model(ckpt: Checkpoint, cfg: RunConfig | None = None) -> Denoiser:
    """Build a denoiser from checkpoint tensors, guarding config conflicts."""
    if cfg is not None:
        if ckpt.denoiser_config != cfg.denoiser:
            raise ConfigConflictError(
                f"checkpoint denoiser config {ckpt.denoiser_config} != run config {cfg.denoiser}"
            )
        if ckpt.schedule_params != cfg.schedule:
            raise ConfigConflictError(
                f"checkpoint schedule {ckpt.schedule_params} != run config {cfg.schedule}"
            )
    model = Denoiser(ckpt.denoiser_config, RandomStream(0, "restore-init"))
    model.load_state(ckpt.tensors)
    return model


class ValidationSet:
    """Cached validation pairs with frozen per-example (t, noise) draws.

    Freezing the evaluation randomness makes validation losses paired
    across steps and runs: differences reflect the model, not the dice.
    """

    def __init__(self, cfg: RunConfig, dataset: np.ndarray, val_idx: np.ndarray):
        self.cfg = cfg
        self.x0 = dataset[val_idx]
        seed = cfg.dataset.seed
        self.y0 = np.stack([
            degrade(self.x0[j], cfg.degradation,
                    data_mod.val_degradation_stream(seed, int(i)))[1]
            for j, i in enumerate(val_idx)
        ])
        T = cfg.schedule.T
        eval_rng = RandomStream(seed, "val-eval")
        self.t = eval_rng.child("t").integers(1, T + 1, (len(val_idx),))
        self.noise = eval_rng.child("noise").normal(self.x0.shape)

    def loss(self, model: Denoiser, schedule) -> float:
        """Frozen-noise validation MSE (no gradients kept)."""
        etas = schedule.etas[self.t].reshape(-1, 1, 1, 1)
        x_t = self.x0 + etas * (self.y0 - self.x0) + schedule.kappa * np.sqrt(etas) * self.noise
        total, n = 0.0, self.x0.shape[0]
        step = 32
        for lo in range(0, n, step):
            sl = slice(lo, min(lo + step, n))
            pred = model.predict(x_t[sl], self.y0[sl], self.t[sl])
            total += float(np.sum((pred - self.x0[sl]) ** 2))
        return total / self.x0.size

    def sampled_psnr(self, model: Denoiser, schedule, rng: RandomStream, limit: int) -> float:
        """Mean PSNR of reverse-sampled outputs on the first `limit` pairs."""
        n = min(limit, self.x0.shape[0])
        out = diffusion.sample(
            self.y0[:n],
            lambda x_t, y0, t: model.predict(x_t, y0, t),
            schedule,
            rng,
        )
        return float(np.mean([psnr(out[j], self.x0[j]) for j in range(n)]))


def fit(cfg: RunConfig, out_dir, resume: str | None = None) -> TrainResult:
    """Run (or continue) training; writes log.csv and periodic checkpoints."""
    cfg.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    schedule = build_schedule(cfg.schedule)

    dataset = data_mod.generate(cfg.dataset)
    train_idx, val_idx = data_mod.split_indices(
        cfg.dataset.count, cfg.train.val_count, cfg.dataset.seed
    )
    train_images = dataset[train_idx]
    val_set = ValidationSet(cfg, dataset, val_idx)

    start_step = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        model = restore_model(ckpt, cfg)
        adam = ckpt.adam_state
        if adam is None:
            adam = AdamState.for_params(model.parameters(), lr=cfg.train.lr)
        start_step = ckpt.train_step
    else:
        model = Denoiser(cfg.denoiser, RandomStream(cfg.train.seed, "init"))
        adam = AdamState.for_params(model.parameters(), lr=cfg.train.lr)

    T = cfg.schedule.T
    bs = cfg.train.batch_size
    steps_per_epoch = len(train_idx) // bs
    log_path = out / "log.csv"
    mode = "a" if (resume is not None and log_path.exists()) else "w"

    val_loss_initial = val_set.loss(model, schedule) if cfg.train.val_count else float("nan")
    final_loss = float("nan")
    ckpt_path = out / "ckpt_final.rskt"

    with open(log_path, mode, encoding="utf-8", newline="\n") as log:
        if mode == "w":
            log.write("step,loss,val_psnr\n")
        log.write(f"# val_loss step={start_step} value={val_loss_initial!r}\n")

        epoch = -1
        epoch_order = None
        for step in range(start_step, cfg.train.iterations):
            e, offset = divmod(step, steps_per_epoch)
            if e != epoch:
                epoch = e
                epoch_order = RandomStream(cfg.dataset.seed, "shuffle", epoch).shuffle_order(
                    len(train_idx)
                )
            pos = epoch_order[offset * bs:(offset + 1) * bs]
            idx = train_idx[pos]
            x0 = train_images[pos]
            y0 = np.stack([
                degrade(x0[j], cfg.degradation,
                        data_mod.degradation_stream(cfg.dataset.seed, int(idx[j]), epoch))[1]
                for j in range(bs)
            ])

            step_rng = RandomStream(cfg.train.seed, "step", step)
            t = step_rng.child("t").integers(1 if not cfg.train.weighted_loss else 2, T + 1, (bs,))
            model.zero_grad()
            loss = diffusion.training_loss(
                x0, y0, t, model, schedule, step_rng.child("noise"),
                weighted=cfg.train.weighted_loss,
            )
            if not np.isfinite(loss):
                raise TrainingDivergenceError(f"non-finite loss {loss} at step {step}")
            grads = {k: p.grad for k, p in model.parameters().items()}
            adam_step(model.parameters(), grads, adam)
            final_loss = loss

            done = step + 1
            at_checkpoint = done % cfg.train.checkpoint_every == 0 or done == cfg.train.iterations
            if at_checkpoint and cfg.train.val_count:
                vp = val_set.sampled_psnr(
                    model, schedule,
                    RandomStream(cfg.train.seed, "valpsnr", done),
                    cfg.train.val_psnr_subset,
                )
                log.write(f"{done},{loss!r},{vp!r}\n")
            else:
                log.write(f"{done},{loss!r},\n")
            if at_checkpoint:
                save_checkpoint(make_checkpoint(cfg, model, adam, done), out / f"ckpt_{done:06d}.rskt")

        val_loss_final = val_set.loss(model, schedule) if cfg.train.val_count else float("nan")
        log.write(f"# val_loss step={cfg.train.iterations} value={val_loss_final!r}\n")

    save_checkpoint(make_checkpoint(cfg, model, adam, cfg.train.iterations), ckpt_path)
    return TrainResult(
        final_step=cfg.train.iterations,
        final_loss=final_loss,
        val_loss_initial=val_loss_initial,
        val_loss_final=val_loss_final,
        log_path=str(log_path),
        checkpoint_path=str(ckpt_path),
    )
