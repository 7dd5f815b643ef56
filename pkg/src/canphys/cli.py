"""Command-line surface: synth | prep | train | eval | attn.

Every command validates its full configuration before touching the file
system. Exit codes: 0 success, 2 configuration error, 3 data error.
"""

import argparse
import glob
import os
import sys

import numpy as np

from . import io
from .config import RunConfig
from .errors import ConfigError, DataError
from .model import CanArch, forward_batch
from .preprocess import PreprocConfig, preprocess_clip
from .spectral import BandSpec, aggregate_metrics, evaluate_series, \
    green_channel_baseline, windowed_rates
from .synth import default_scene, synthesize_scene
from .training import TrainConfig, predict_series, select_checkpoint, \
    train_epochs
from .waveforms import PULSE_BPM_RANGE, RESPIRATION_BPM_RANGE, \
    make_band_noise, make_pulse


def _check_band(lo, hi, limits, what):
    if not (limits[0] <= lo < hi <= limits[1]):
        raise ConfigError(
            f"{what} band [{lo}, {hi}] invalid; must be increasing and "
            f"inside [{limits[0]}, {limits[1]}] BPM")


def cmd_synth(cfg, args):
    out_dir = cfg.get("synth.out_dir")
    n_clips = cfg.get("synth.n_clips")
    W, H = cfg.get("synth.width"), cfg.get("synth.height")
    fps = cfg.get("synth.fps")
    duration = cfg.get("synth.duration_s")
    hr_lo, hr_hi = cfg.get("synth.hr_lo"), cfg.get("synth.hr_hi")
    br_lo, br_hi = cfg.get("synth.br_lo"), cfg.get("synth.br_hi")
    seed = cfg.get("synth.seed")
    dtype = cfg.get("synth.dtype")
    if n_clips < 1:
        raise ConfigError("synth.n_clips must be >= 1")
    if duration <= 0 or fps <= 0:
        raise ConfigError("synth duration and fps must be positive")
    _check_band(hr_lo, hr_hi, PULSE_BPM_RANGE, "HR")
    _check_band(br_lo, br_hi, RESPIRATION_BPM_RANGE, "BR")

    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    T = int(round(duration * fps))
    manifest = ["clip,ftv,hr_bpm,br_bpm,scene_seed"]
    for i in range(n_clips):
        hr = rng.uniform(hr_lo, hr_hi)
        br = rng.uniform(br_lo, br_hi)
        phase = rng.uniform(0, 2 * np.pi)
        scene_seed = int(rng.integers(0, 2**31))
        pulse = make_pulse(hr, duration, 256.0,
                           cfg.get("synth.harmonic_ratio"), "BVP", phase)
        resp = make_pulse(br, duration, 256.0, 0.0, "respiration",
                          phase=rng.uniform(0, 2 * np.pi))
        nuisance = make_band_noise(duration, fps,
                                   cfg.get("synth.nuisance_sigma"),
                                   seed=scene_seed + 1,
                                   cutoff_hz=cfg.get(
                                       "synth.nuisance_cutoff_hz"))
        scene = default_scene(
            H, W, pulse_amp=cfg.get("synth.pulse_amp"),
            motion_gain=cfg.get("synth.motion_gain"),
            pulse_gain=cfg.get("synth.pulse_gain"),
            noise_sigma=cfg.get("synth.noise_sigma"),
            cross_gain=cfg.get("synth.cross_gain"), rng_seed=scene_seed)
        seq = synthesize_scene(scene, pulse, resp, nuisance, T, H, W, fps)
        if dtype == "u8":
            seq = seq.quantized_u8()
        name = f"clip_{i:03d}"
        io.write_ftv(os.path.join(out_dir, f"{name}.ftv"), seq)
        io.write_gold_csv(os.path.join(out_dir, f"{name}_bvp.csv"), pulse)
        io.write_gold_csv(os.path.join(out_dir, f"{name}_resp.csv"), resp)
        manifest.append(f"{name},{name}.ftv,{hr:.6f},{br:.6f},{scene_seed}")
        print(f"synth: {name}.ftv  HR {hr:6.2f} BPM  BR {br:5.2f} BPM")
    io.atomic_write(os.path.join(out_dir, "manifest.csv"),
                    ("\n".join(manifest) + "\n").encode("ascii"))


def cmd_prep(cfg, args):
    in_dir = cfg.get("prep.in_dir")
    out_dir = cfg.get("prep.out_dir")
    label = cfg.get("prep.label")
    pconf = PreprocConfig(L=cfg.get("prep.L"),
                          clip_sigmas=cfg.get("prep.clip_sigmas"),
                          target_fps=cfg.get("prep.target_fps"))
    clips = sorted(glob.glob(os.path.join(in_dir, "*.ftv")))
    if not clips:
        raise DataError(f"no .ftv clips found in {in_dir}")
    suffix = "_bvp.csv" if label == "bvp" else "_resp.csv"
    kind = "BVP" if label == "bvp" else "respiration"
    jobs = []
    for path in clips:
        stem = os.path.splitext(os.path.basename(path))[0]
        gold_path = os.path.join(in_dir, stem + suffix)
        if not os.path.exists(gold_path):
            raise DataError(f"missing gold signal {gold_path}")
        jobs.append((path, gold_path, stem))
    os.makedirs(out_dir, exist_ok=True)
    for path, gold_path, stem in jobs:
        seq = io.read_ftv(path)
        gold = io.read_gold_csv(gold_path, kind=kind)
        tensors = preprocess_clip(seq, gold, pconf, name=stem)
        io.write_tensors(os.path.join(out_dir, f"{stem}.cant"), tensors)
        print(f"prep: {stem}.cant  ({len(tensors)} samples)")


def _load_tensor_dir(path):
    files = sorted(glob.glob(os.path.join(path, "*.cant")))
    if not files:
        raise DataError(f"no .cant tensor files found in {path}")
    return [io.read_tensors(f) for f in files]


def cmd_train(cfg, args):
    tensors = _load_tensor_dir(cfg.get("train.tensors_dir"))
    out_dir = cfg.get("train.out_dir")
    arch = CanArch(input_side=cfg.get("arch.input_side"),
                   in_channels=tensors[0].motion.shape[3],
                   channels=cfg.get("arch.channels"),
                   n8=cfg.get("arch.n8"),
                   dropout=cfg.get("arch.dropout"))
    tconf = TrainConfig(
        epochs=cfg.get("train.epochs"),
        extra_epochs=cfg.get("train.extra_epochs"),
        batch_size=cfg.get("train.batch_size"),
        rho=cfg.get("train.rho"), eps=cfg.get("train.eps"),
        shuffle_seed=cfg.get("train.shuffle_seed"),
        init_seed=cfg.get("train.init_seed"),
        dropout_seed=cfg.get("train.dropout_seed"),
        target=cfg.get("train.target"),
        window_s=cfg.get("train.window_s"),
        stride_s=cfg.get("train.stride_s"))
    os.makedirs(out_dir, exist_ok=True)
    result = train_epochs(tensors, arch, tconf)
    for ck in result.checkpoints:
        io.write_checkpoint(
            os.path.join(out_dir, f"ckpt_epoch{ck.epoch:03d}.canw"),
            ck.params)
    best = select_checkpoint(result.checkpoints)
    io.write_checkpoint(os.path.join(out_dir, "best.canw"), best)
    log = ["epoch,mean_loss,freq_error_bpm"]
    for row in result.history:
        err = "" if np.isnan(row.freq_error_bpm) \
            else f"{row.freq_error_bpm:.4f}"
        log.append(f"{row.epoch},{row.mean_loss:.8f},{err}")
    io.atomic_write(os.path.join(out_dir, "training_log.csv"),
                    ("\n".join(log) + "\n").encode("ascii"))
    print(f"train: {len(result.checkpoints)} checkpoints -> best.canw")


def _metric_lines(estimates, gold_rates, report):
    lines = ["window_start,est_bpm,gold_bpm,snr_db"]
    for est, gold in zip(estimates, gold_rates):
        lines.append(f"{est.window_start:.3f},{est.rate_bpm:.4f},"
                     f"{gold:.4f},{est.snr_db:.4f}")
    lines.append(f"summary,mae={report.mae_bpm:.4f},"
                 f"rmse={report.rmse_bpm:.4f},r={report.pearson_r:.4f},"
                 f"mean_snr={report.mean_snr_db:.4f}")
    return lines


def cmd_eval(cfg, args):
    tensors = _load_tensor_dir(cfg.get("eval.tensors_dir"))
    out_dir = cfg.get("eval.out_dir")
    band = BandSpec.for_kind(cfg.get("eval.band"))
    window_s, stride_s = cfg.get("eval.window_s"), cfg.get("eval.stride_s")
    params = io.read_checkpoint(args.checkpoint)
    ftv_dir = cfg.get("eval.ftv_dir")
    if args.baseline == "green" and ftv_dir is None:
        raise ConfigError("--baseline green requires eval.ftv_dir")
    L = params.arch.input_side
    for t in tensors:
        if t.motion.shape[1] != L:
            raise DataError(
                f"checkpoint expects {L}x{L} inputs but clip {t.name!r} "
                f"was preprocessed at {t.motion.shape[1]}")
        if t.gold is None:
            raise DataError(f"clip {t.name!r} carries no gold signal")
    os.makedirs(out_dir, exist_ok=True)
    summary = ["clip,mae_bpm,rmse_bpm,pearson_r,mean_snr_db,windows"]
    for t in tensors:
        pred = predict_series(params, t)
        estimates, gold_rates, report = evaluate_series(
            pred, t.gold, t.fps, band, window_s, stride_s)
        stem = os.path.splitext(t.name)[0]
        io.atomic_write(
            os.path.join(out_dir, f"metrics_{stem}.csv"),
            ("\n".join(_metric_lines(estimates, gold_rates, report)) + "\n")
            .encode("ascii"))
        summary.append(f"{stem},{report.mae_bpm:.4f},{report.rmse_bpm:.4f},"
                       f"{report.pearson_r:.4f},{report.mean_snr_db:.4f},"
                       f"{report.n_windows}")
        print(f"eval: {stem}  MAE {report.mae_bpm:.2f} BPM  "
              f"SNR {report.mean_snr_db:+.2f} dB")
        if args.baseline == "green":
            # the baseline sees all T frames, one more window than the
            # frame-pair network when (T - wlen) is a stride multiple
            seq = io.read_ftv(os.path.join(ftv_dir, f"{stem}.ftv"))
            green_est = green_channel_baseline(seq, band, t.gold,
                                               window_s, stride_s)
            gold_rates_g = [r for _, r in windowed_rates(
                np.asarray(t.gold, dtype=np.float64), t.fps, band,
                window_s, stride_s)]
            green_report = aggregate_metrics(green_est, gold_rates_g,
                                             allow_constant_rates=True)
            io.atomic_write(
                os.path.join(out_dir, f"green_metrics_{stem}.csv"),
                ("\n".join(_metric_lines(green_est, gold_rates_g,
                                         green_report)) + "\n")
                .encode("ascii"))
    io.atomic_write(os.path.join(out_dir, "summary.csv"),
                    ("\n".join(summary) + "\n").encode("ascii"))


def _mask_to_pgm_frames(masks):
    lo, hi = float(masks.min()), float(masks.max())
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    return np.clip(np.rint((masks - lo) * scale), 0, 255).astype(np.uint8)


def cmd_attn(cfg, args):
    tensors = io.read_tensors(cfg.get("attn.tensors_file"))
    out_dir = cfg.get("attn.out_dir")
    params = io.read_checkpoint(args.checkpoint)
    if tensors.motion.shape[1] != params.arch.input_side:
        raise DataError("checkpoint and tensors disagree on input side")
    os.makedirs(out_dir, exist_ok=True)
    q1_parts, q2_parts = [], []
    for lo in range(0, len(tensors), 256):
        hi = min(lo + 256, len(tensors))
        _, maps, _ = forward_batch(tensors.motion[lo:hi],
                                   tensors.appearance[lo:hi], params)
        q1_parts.append(maps.q1)
        q2_parts.append(maps.q2)
    q1 = np.concatenate(q1_parts)
    q2 = np.concatenate(q2_parts)
    for stage, masks in (("1", q1), ("2", q2)):
        images = _mask_to_pgm_frames(masks)
        for t in range(len(images)):
            io.write_pgm(os.path.join(out_dir, f"attn{stage}_{t:06d}.pgm"),
                         images[t])
        rows = [",".join(["frame"] + [f"v{i}" for i in
                                      range(masks.shape[1] * masks.shape[2])])]
        for t in range(len(masks)):
            flat = masks[t].reshape(-1)
            rows.append(str(t) + "," + ",".join(f"{v:.6f}" for v in flat))
        io.atomic_write(os.path.join(out_dir, f"attn{stage}.csv"),
                        ("\n".join(rows) + "\n").encode("ascii"))
    print(f"attn: wrote {2 * len(tensors)} mask images to {out_dir}")


COMMANDS = {"synth": cmd_synth, "prep": cmd_prep, "train": cmd_train,
            "eval": cmd_eval, "attn": cmd_attn}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="canphys",
        description="Synthetic-video pulse/respiration measurement pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        if name in ("eval", "attn"):
            p.add_argument("--checkpoint", required=True)
        if name == "eval":
            p.add_argument("--baseline", choices=["green"], default=None)
    args = parser.parse_args(argv)
    try:
        cfg = RunConfig.parse(args.config)
        COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"canphys: config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, OSError) as exc:
        print(f"canphys: data error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
