"""Acceptance suite: one test per release criterion.

Each test prints a PASS line (visible with `pytest -s` or in failure
reports) and enforces both the numeric tolerance and the runtime bound
of its criterion.  Criterion 6 trains the full default configuration
(20K iterations) and is by far the slowest; it runs last.
"""

import math
import time
from contextlib import contextmanager

import numpy as np

from resshift import data as data_mod
from resshift import diffusion as D
from resshift.cli import main as cli_main
from resshift.config import RunConfig, parse_config_text
from resshift.degrade import add_gaussian_noise, add_poisson_noise, sample_plan
from resshift.imageio import load_checkpoint, read_image, save_checkpoint, write_image
from resshift.metrics import psnr
from resshift.nn import gradcheck
from resshift.nn.denoiser import Denoiser
from resshift.rng import RandomStream
from resshift.schedule import ScheduleParams, build_schedule
from resshift.train import ValidationSet, fit, make_checkpoint, restore_model

from oracles import direct_schedule, posterior_quadrature


@contextmanager
def criterion(number, description, budget_seconds):
    start = time.monotonic()
    try:
        yield
    except Exception:
        print(f"criterion {number} FAIL: {description}")
        raise
    elapsed = time.monotonic() - start
    assert elapsed < budget_seconds, (
        f"criterion {number} exceeded its runtime budget: {elapsed:.1f}s >= {budget_seconds}s"
    )
    print(f"criterion {number} PASS: {description} ({elapsed:.1f}s)")


def test_c1_schedule_exactness():
    with criterion(1, "schedule matches direct evaluation at 1e-10", 1.0):
        configs = [(15, 0.3, 2.0)]
        rng = np.random.default_rng(811)
        for _ in range(20):
            configs.append((
                int(rng.integers(2, 201)),
                float(rng.uniform(0.1, 3.0)),
                float(rng.uniform(0.1, 50.0)),
            ))
        for T, p, kappa in configs:
            s = build_schedule(ScheduleParams(T=T, p=p, kappa=kappa))
            np.testing.assert_allclose(
                s.etas, direct_schedule(T, p, kappa), rtol=1e-10,
                err_msg=f"(T={T}, p={p}, kappa={kappa})",
            )
            assert abs(s.eta(1) - min((0.04 / kappa) ** 2, 0.001)) < 1e-12
            assert abs(s.eta(T) - 0.999) < 1e-12
            assert np.all(np.diff(s.etas) > 0)


def test_c2_marginal_recursive_equivalence():
    with criterion(2, "iterated kernel matches closed-form marginal", 30.0):
        schedule = build_schedule(ScheduleParams(15, 0.3, 2.0))
        n = 10000
        base = RandomStream(20240811, "c2")
        x0 = base.child("x0").uniform((1, 8, 8))
        y0 = base.child("y0").uniform((1, 8, 8))
        x0b = np.broadcast_to(x0, (n, 1, 8, 8))
        y0b = np.broadcast_to(y0, (n, 1, 8, 8))
        e0 = y0b - x0b
        x = np.array(x0b)
        chain_rng = base.child("chain")
        for t in range(1, 16):
            x = D.forward_step(x, e0, t, schedule, chain_rng)
            if t in (5, 10, 15):
                direct = D.sample_marginal(x0b, y0b, t, schedule, base.child("direct", t))
                sigma = 2.0 * math.sqrt(schedule.eta(t))
                se = sigma / math.sqrt(n)
                gap = np.abs(x.mean(axis=0) - direct.mean(axis=0))
                assert np.all(gap < 4.0 * math.sqrt(2.0) * se), f"mean mismatch at t={t}"
                v_chain = float(x.var(axis=0).mean())
                v_direct = float(direct.var(axis=0).mean())
                assert abs(v_chain - v_direct) / v_direct < 0.05, f"variance mismatch at t={t}"
                assert abs(v_chain - sigma ** 2) / sigma ** 2 < 0.05, f"variance off target at t={t}"


def test_c3_posterior_quadrature_oracle():
    with criterion(3, "posterior matches 1-D quadrature at 1e-10", 5.0):
        schedule = build_schedule(ScheduleParams(15, 0.3, 2.0))
        rng = np.random.default_rng(813)
        pairs = [(float(rng.uniform(-1, 2)), float(rng.uniform(0, 1)), float(rng.uniform(-1, 1)))
                 for _ in range(100)]
        for t in range(2, 16):
            for x_t, x0, e0 in pairs:
                mean_o, var_o = posterior_quadrature(x_t, x0, e0, t, schedule.etas, 2.0)
                params = D.posterior_params(np.array([[[x_t]]]), np.array([[[x0]]]), t, schedule)
                assert abs(float(params.mean[0, 0, 0]) - mean_o) < 1e-10
                assert abs(params.std ** 2 - var_o) < 1e-10


def test_c4_perfect_denoiser_exactness():
    with criterion(4, "oracle denoiser reproduces the target bit-exactly", 5.0):
        for seed in range(10):
            rng = RandomStream(900 + seed)
            x0 = rng.child("x0").uniform((1, 8, 8))
            y0 = rng.child("y0").uniform((1, 8, 8))
            for T in (2, 15):
                schedule = build_schedule(ScheduleParams(T, 0.3, 2.0))
                out = D.sample(y0, lambda xt, y, t: x0, schedule,
                               rng.child("run", T), clamp=False)
                assert np.array_equal(out, x0), f"seed={seed} T={T}"


def test_c5_gradient_checks():
    with criterion(5, "finite differences confirm every parameter group", 60.0):
        report = gradcheck.check_denoiser(seed=0)
        worst = max(report.values())
        assert worst < 1e-4, f"worst relative error {worst:.3e}"
        model = Denoiser(gradcheck.DenoiserConfig(
            in_channels=2, base_width=8, depth=1, time_embed_dim=16, T=15,
        ), RandomStream(0, "shape"))
        assert sorted(report) == sorted(model.params)


def test_c7_sampling_step_count(tmp_path):
    with criterion(7, "sampling runs exactly 15 denoiser evaluations", 60.0):
        cfg = RunConfig()
        model = Denoiser(cfg.denoiser, RandomStream(0, "init"))
        ckpt_path = tmp_path / "default.rskt"
        save_checkpoint(make_checkpoint(cfg, model, None, 0), ckpt_path)

        clone = restore_model(load_checkpoint(ckpt_path))
        schedule = build_schedule(cfg.schedule)
        y0 = RandomStream(1, "y0").uniform((1, 32, 32))
        clone.eval_count = 0
        D.sample(y0, lambda x, y, t: clone.predict(x, y, t), schedule, RandomStream(2))
        assert clone.eval_count == 15

        out = tmp_path / "sr.pgm"
        code = cli_main([
            "sample", "--checkpoint", str(ckpt_path), "--toy-index", "0",
            "--out", str(out), "--seed", "3", "--set", "dataset.count", "4",
        ])
        assert code == 0
        assert read_image(out).shape == (1, 32, 32)


def test_c7_cli_reports_eval_count(tmp_path, capsys):
    cfg = RunConfig()
    model = Denoiser(cfg.denoiser, RandomStream(0, "init"))
    ckpt_path = tmp_path / "default.rskt"
    save_checkpoint(make_checkpoint(cfg, model, None, 0), ckpt_path)
    assert cli_main([
        "sample", "--checkpoint", str(ckpt_path), "--toy-index", "0",
        "--out", str(tmp_path / "x.pgm"), "--seed", "1", "--set", "dataset.count", "4",
    ]) == 0
    assert "# denoiser_evals=15" in capsys.readouterr().out


def test_c8_degradation_statistics():
    with criterion(8, "pipeline branch frequencies and noise moments", 120.0):
        cfg = RunConfig().degradation
        n = 10000
        plans = [sample_plan(cfg, RandomStream(700, "plan", i)) for i in range(n)]
        iso = sum(p.isotropic for p in plans) / n
        gauss = sum(p.gaussian for p in plans) / n
        assert abs(iso - 0.60) < 0.015, f"iso fraction {iso}"
        assert abs(gauss - 0.50) < 0.015, f"gaussian fraction {gauss}"

        level = 10.0
        noise = add_gaussian_noise(np.zeros(100000), level, RandomStream(701))
        assert abs(noise.std() - level / 255.0) / (level / 255.0) < 0.02

        v, scale = 0.5, 0.1
        shot = add_poisson_noise(np.full(100000, v), scale, RandomStream(702))
        assert abs(shot.mean() - v) / v < 0.01
        assert abs(shot.var() - v * scale) / (v * scale) < 0.05


DETERMINISM_CONFIG = """
dataset.count = 300
dataset.seed = 11
train.val_count = 24
train.batch_size = 16
train.iterations = 100
train.checkpoint_every = 50
train.val_psnr_subset = 4
"""


def _determinism_run(root):
    run_dir = root / "run"
    code = cli_main([
        "train", "--out-dir", str(run_dir), "--seed", "17",
        "--config", str(root / "run.cfg"),
    ])
    assert code == 0
    sr = root / "sr.pgm"
    assert cli_main([
        "sample", "--checkpoint", str(run_dir / "ckpt_final.rskt"),
        "--toy-index", "1", "--out", str(sr), "--seed", "17",
        "--config", str(root / "run.cfg"),
    ]) == 0
    report = root / "report.csv"
    assert cli_main([
        "eval", "--checkpoint", str(run_dir / "ckpt_final.rskt"),
        "--out", str(report), "--seed", "17",
        "--config", str(root / "run.cfg"),
    ]) == 0
    return {
        "log": (run_dir / "log.csv").read_bytes(),
        "ckpt": (run_dir / "ckpt_final.rskt").read_bytes(),
        "image": sr.read_bytes(),
        "report": report.read_bytes(),
    }


def test_c9_end_to_end_determinism(tmp_path):
    with criterion(9, "train+sample+eval is byte-identical across runs", 600.0):
        outputs = []
        for tag in ("a", "b"):
            root = tmp_path / tag
            root.mkdir()
            (root / "run.cfg").write_text(DETERMINISM_CONFIG)
            outputs.append(_determinism_run(root))
        for key in outputs[0]:
            assert outputs[0][key] == outputs[1][key], f"{key} differs between runs"


def test_c10_round_trips(tmp_path):
    with criterion(10, "image and checkpoint round-trips are exact", 30.0):
        img = np.floor(RandomStream(5, "img").uniform((3, 16, 16)) * 256) / 255.0
        img = np.clip(img, 0.0, 1.0)
        path = tmp_path / "rt.ppm"
        write_image(img, path)
        np.testing.assert_array_equal(read_image(path), img)

        cfg = parse_config_text("denoiser.base_width = 8\ndenoiser.time_embed_dim = 16\n")
        model = Denoiser(cfg.denoiser, RandomStream(6, "init"))
        from resshift.nn.adam import AdamState

        adam = AdamState.for_params(model.params, lr=3e-4)
        adam.step_count = 5
        ckpt = make_checkpoint(cfg, model, adam, 42)
        p1, p2 = tmp_path / "a.rskt", tmp_path / "b.rskt"
        save_checkpoint(ckpt, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()


def test_c6_toy_super_resolution_end_to_end(tmp_path):
    with criterion(6, "default 20K-iteration training beats the baseline by 2 dB", 1800.0):
        cfg = RunConfig().validate()
        result = fit(cfg, tmp_path)

        assert result.val_loss_final < 0.25 * result.val_loss_initial, (
            f"validation loss ratio {result.val_loss_final / result.val_loss_initial:.3f}"
        )

        model = restore_model(load_checkpoint(result.checkpoint_path))
        schedule = build_schedule(cfg.schedule)
        dataset = data_mod.generate(cfg.dataset)
        _, val_idx = data_mod.split_indices(
            cfg.dataset.count, cfg.train.val_count, cfg.dataset.seed
        )
        val = ValidationSet(cfg, dataset, val_idx)
        sr_scores, baseline_scores = [], []
        for lo in range(0, len(val_idx), 50):
            sl = slice(lo, min(lo + 50, len(val_idx)))
            out = D.sample(
                val.y0[sl],
                lambda x, y, t: model.predict(x, y, t),
                schedule,
                RandomStream(cfg.train.seed, "acceptance", lo),
            )
            for j in range(out.shape[0]):
                sr_scores.append(psnr(out[j], val.x0[sl][j]))
                baseline_scores.append(psnr(val.y0[sl][j], val.x0[sl][j]))
        gain = float(np.mean(sr_scores) - np.mean(baseline_scores))
        print(f"criterion 6 detail: SR {np.mean(sr_scores):.2f} dB vs baseline "
              f"{np.mean(baseline_scores):.2f} dB (gain {gain:.2f} dB)")
        assert gain >= 2.0, f"PSNR gain {gain:.2f} dB below the 2 dB bar"
