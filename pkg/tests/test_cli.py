import subprocess
import sys

import numpy as np
import pytest

from canphys import io
from canphys.cli import main
from canphys.model import CanArch, init_params

FPS = 10.0
DURATION = 34.0
T = int(DURATION * FPS)


def write_config(path, **overrides):
    base = {
        "synth.n_clips": 2,
        "synth.width": 12,
        "synth.height": 12,
        "synth.fps": FPS,
        "synth.duration_s": DURATION,
        "synth.hr_lo": 60.0,
        "synth.hr_hi": 90.0,
        "synth.pulse_amp": 0.03,
        "synth.motion_gain": 0.02,
        "synth.pulse_gain": 0.01,
        "synth.noise_sigma": 0.002,
        "synth.seed": 7,
        "prep.L": 8,
        "arch.input_side": 8,
        "arch.channels": "2,2,3,3",
        "arch.n8": 4,
        "arch.dropout": "0.0,0.0,0.1",
        "train.epochs": 1,
        "train.extra_epochs": 1,
        "train.shuffle_seed": 1,
        "train.init_seed": 2,
        "train.dropout_seed": 3,
    }
    base.update(overrides)
    lines = ["# test pipeline configuration"]
    for key, value in base.items():
        lines.append(f"{key} = {value}")
    path.write_text("\n".join(lines) + "\n")
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run synth -> prep -> train once; commands under test reuse it."""
    root = tmp_path_factory.mktemp("pipeline")
    raw, tensors, run = root / "raw", root / "tensors", root / "run"
    cfg = write_config(root / "run.cfg",
                       **{"synth.out_dir": raw, "prep.in_dir": raw,
                          "prep.out_dir": tensors,
                          "train.tensors_dir": tensors,
                          "train.out_dir": run,
                          "eval.tensors_dir": tensors,
                          "eval.out_dir": root / "metrics",
                          "eval.ftv_dir": raw,
                          "attn.tensors_file": tensors / "clip_000.cant",
                          "attn.out_dir": root / "attn"})
    assert main(["synth", "--config", cfg]) == 0
    assert main(["prep", "--config", cfg]) == 0
    assert main(["train", "--config", cfg]) == 0
    return {"root": root, "cfg": cfg, "raw": raw, "tensors": tensors,
            "run": run}


class TestSynth:
    def test_file_counts(self, pipeline):
        raw = pipeline["raw"]
        assert len(list(raw.glob("*.ftv"))) == 2
        assert len(list(raw.glob("*_bvp.csv"))) == 2
        assert len(list(raw.glob("*_resp.csv"))) == 2
        assert (raw / "manifest.csv").exists()

    def test_rerun_is_byte_identical(self, pipeline, tmp_path):
        cfg = write_config(tmp_path / "re.cfg",
                           **{"synth.out_dir": tmp_path / "raw"})
        assert main(["synth", "--config", cfg]) == 0
        first = {p.name: p.read_bytes()
                 for p in (tmp_path / "raw").iterdir()}
        assert main(["synth", "--config", cfg]) == 0
        second = {p.name: p.read_bytes()
                  for p in (tmp_path / "raw").iterdir()}
        assert first == second

    def test_invalid_band_fails_before_writing(self, tmp_path):
        out = tmp_path / "raw"
        cfg = write_config(tmp_path / "bad.cfg",
                           **{"synth.out_dir": out, "synth.hr_lo": 10.0})
        assert main(["synth", "--config", cfg]) == 2
        assert not out.exists()

    def test_missing_seed_is_config_error(self, tmp_path):
        cfg_path = tmp_path / "noseed.cfg"
        write_config(cfg_path, **{"synth.out_dir": tmp_path / "raw"})
        text = "\n".join(line for line in cfg_path.read_text().splitlines()
                         if not line.startswith("synth.seed"))
        cfg_path.write_text(text + "\n")
        assert main(["synth", "--config", str(cfg_path)]) == 2

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "unknown.cfg"
        cfg.write_text("synth.bogus = 1\n")
        assert main(["synth", "--config", str(cfg)]) == 2


class TestPrep:
    def test_tensor_files_and_lengths(self, pipeline):
        files = sorted(pipeline["tensors"].glob("*.cant"))
        assert len(files) == 2
        tensors = io.read_tensors(str(files[0]))
        assert len(tensors) == T - 1
        assert tensors.motion.shape == (T - 1, 8, 8, 3)

    def test_round_trip_matches_in_memory(self, pipeline):
        from canphys.preprocess import PreprocConfig, preprocess_clip
        raw = pipeline["raw"]
        seq = io.read_ftv(str(raw / "clip_000.ftv"))
        gold = io.read_gold_csv(str(raw / "clip_000_bvp.csv"))
        expected = preprocess_clip(seq, gold, PreprocConfig(L=8))
        loaded = io.read_tensors(str(pipeline["tensors"] /
                                     "clip_000.cant"))
        assert np.array_equal(loaded.motion, expected.motion)
        assert np.array_equal(loaded.labels, expected.labels)

    def test_missing_gold_is_data_error(self, pipeline, tmp_path):
        raw = tmp_path / "raw"
        raw.mkdir()
        src = pipeline["raw"]
        (raw / "clip_000.ftv").write_bytes(
            (src / "clip_000.ftv").read_bytes())
        cfg = write_config(tmp_path / "p.cfg",
                           **{"prep.in_dir": raw,
                              "prep.out_dir": tmp_path / "tensors"})
        assert main(["prep", "--config", cfg]) == 3


class TestTrain:
    def test_checkpoints_log_and_best(self, pipeline):
        run = pipeline["run"]
        assert len(list(run.glob("ckpt_epoch*.canw"))) == 2  # 1 + 1 extra
        assert (run / "best.canw").exists()
        log = (run / "training_log.csv").read_text().splitlines()
        assert log[0] == "epoch,mean_loss,freq_error_bpm"
        assert len(log) == 1 + 2  # header + one row per epoch


class TestEval:
    def test_metrics_rows_and_summary(self, pipeline):
        cfg = pipeline["cfg"]
        rc = main(["eval", "--config", cfg, "--checkpoint",
                   str(pipeline["run"] / "best.canw")])
        assert rc == 0
        metrics_dir = pipeline["root"] / "metrics"
        lines = (metrics_dir / "metrics_clip_000.csv").read_text() \
            .splitlines()
        n_windows = (T - 1 - int(30 * FPS)) // int(FPS) + 1
        assert len(lines) == 1 + n_windows + 1  # header + rows + summary
        assert lines[-1].startswith("summary,")
        assert (metrics_dir / "summary.csv").exists()

    def test_green_baseline_flag(self, pipeline):
        cfg = pipeline["cfg"]
        rc = main(["eval", "--config", cfg, "--checkpoint",
                   str(pipeline["run"] / "best.canw"),
                   "--baseline", "green"])
        assert rc == 0
        metrics_dir = pipeline["root"] / "metrics"
        assert (metrics_dir / "green_metrics_clip_000.csv").exists()

    def test_mismatched_input_side_is_data_error(self, pipeline, tmp_path):
        other = init_params(CanArch(input_side=12, channels=(2, 2, 3, 3),
                                    n8=4), 0)
        ckpt = tmp_path / "wrong.canw"
        io.write_checkpoint(str(ckpt), other)
        rc = main(["eval", "--config", pipeline["cfg"],
                   "--checkpoint", str(ckpt)])
        assert rc == 3


class TestAttn:
    def test_mask_images_and_csv(self, pipeline):
        cfg = pipeline["cfg"]
        rc = main(["attn", "--config", cfg, "--checkpoint",
                   str(pipeline["run"] / "best.canw")])
        assert rc == 0
        attn_dir = pipeline["root"] / "attn"
        pgms = sorted(attn_dir.glob("*.pgm"))
        assert len(pgms) == 2 * (T - 1)
        blob1 = (attn_dir / "attn1_000000.pgm").read_bytes()
        assert blob1.startswith(b"P5\n8 8\n255\n")
        blob2 = (attn_dir / "attn2_000000.pgm").read_bytes()
        assert blob2.startswith(b"P5\n4 4\n255\n")
        # raw mask values keep the normalization: each frame sums to H*W/2
        rows = (attn_dir / "attn1.csv").read_text().splitlines()[1:]
        assert len(rows) == T - 1
        for row in rows[:20]:
            values = np.array([float(v) for v in row.split(",")[1:]])
            assert values.sum() == pytest.approx(8 * 8 / 2, abs=1e-4)
        rows2 = (attn_dir / "attn2.csv").read_text().splitlines()[1:]
        values2 = np.array([float(v) for v in rows2[0].split(",")[1:]])
        assert values2.sum() == pytest.approx(4 * 4 / 2, abs=1e-4)


class TestEntryPoint:
    def test_console_script_reports_usage(self):
        proc = subprocess.run([sys.executable, "-m", "canphys.cli"],
                              capture_output=True, text=True)
        assert proc.returncode == 2
        assert "usage" in proc.stderr.lower()


class TestConfigParsing:
    def test_duplicate_key_rejected(self, tmp_path):
        cfg = tmp_path / "dup.cfg"
        cfg.write_text("synth.seed = 1\nsynth.seed = 2\n")
        assert main(["synth", "--config", str(cfg)]) == 2

    def test_bad_value_type_rejected(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("synth.n_clips = many\n")
        assert main(["synth", "--config", str(cfg)]) == 2

    def test_malformed_line_rejected(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("this is not a key value pair\n")
        assert main(["synth", "--config", str(cfg)]) == 2
