"""Binary containers and text formats used by the CLI.

Every format is little-endian with explicit sizes so round trips are
bit-exact across platforms, and every writer is atomic (write to a
temporary file in the target directory, then rename), so an interrupted
run never leaves a truncated file that still parses.

FTV1  video container: [T,H,W,C] frames, uint8 or float32, plus fps.
CANT  packed training tensors: motion, appearance, labels, gold, fps.
CANW  network checkpoint: architecture descriptor + parameter tensors.
gold CSV: "t,value" rows of seconds and amplitude.
PGM (P5): 8-bit grayscale attention-mask images.
"""

import os
import struct
import tempfile

import numpy as np

from .errors import DataError
from .model import params_from_bytes, params_to_bytes
from .preprocess import TrainingTensors
from .video import FrameSequence
from .waveforms import PhysioWaveform

_FTV_MAGIC = b"FTV1"
_CANT_MAGIC = b"CANT"
_KIND_CODES = {"BVP": 0, "respiration": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}


def atomic_write(path, data):
    """Write bytes to path via a temporary file + rename in one directory."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_exact(fh, count, what):
    data = fh.read(count)
    if len(data) != count:
        raise DataError(f"truncated file while reading {what}")
    return data


# ---------------------------------------------------------------------------
# FTV video container
# ---------------------------------------------------------------------------

def write_ftv(path, seq):
    frames = seq.frames
    dtype_flag = 0 if frames.dtype == np.uint8 else 1
    head = struct.pack("<4s4IBf", _FTV_MAGIC, *frames.shape, dtype_flag,
                       float(seq.fps))
    if dtype_flag == 0:
        payload = np.ascontiguousarray(frames).tobytes()
    else:
        payload = np.ascontiguousarray(frames, dtype="<f4").tobytes()
    atomic_write(path, head + payload)


def read_ftv(path):
    with open(path, "rb") as fh:
        head = _read_exact(fh, struct.calcsize("<4s4IBf"), "FTV header")
        magic, T, H, W, C, dtype_flag, fps = struct.unpack("<4s4IBf", head)
        if magic != _FTV_MAGIC:
            raise DataError(f"{path}: not an FTV file")
        if dtype_flag not in (0, 1):
            raise DataError(f"{path}: unknown dtype flag {dtype_flag}")
        itemsize = 1 if dtype_flag == 0 else 4
        count = T * H * W * C
        payload = _read_exact(fh, count * itemsize, "FTV payload")
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after payload")
    dt = np.uint8 if dtype_flag == 0 else np.dtype("<f4")
    frames = np.frombuffer(payload, dtype=dt).reshape(T, H, W, C)
    if dtype_flag == 1:
        frames = frames.astype(np.float32, copy=True)
    else:
        frames = frames.copy()
    return FrameSequence(frames, fps=fps, provenance="loaded")


# ---------------------------------------------------------------------------
# Gold-signal CSV
# ---------------------------------------------------------------------------

def write_gold_csv(path, wave):
    lines = ["t,value"]
    fs = wave.sample_rate
    for k, v in enumerate(wave.samples):
        lines.append(f"{k / fs:.9f},{v:.12g}")
    atomic_write(path, ("\n".join(lines) + "\n").encode("ascii"))


def read_gold_csv(path, kind="BVP"):
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip()
        if header != "t,value":
            raise DataError(f"{path}: expected 't,value' header")
        t, v = [], []
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                ts, vs = line.split(",")
                t.append(float(ts))
                v.append(float(vs))
            except ValueError as exc:
                raise DataError(f"{path}:{line_no}: bad row {line!r}") from exc
    t = np.asarray(t)
    v = np.asarray(v)
    if len(t) < 2:
        raise DataError(f"{path}: need at least 2 samples")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise DataError(f"{path}: timestamps must be strictly increasing")
    mean_dt = float(dt.mean())
    if np.any(np.abs(dt - mean_dt) > 1e-6 * max(1.0, abs(mean_dt))):
        raise DataError(f"{path}: non-uniform sampling; resample externally")
    return PhysioWaveform(kind=kind, sample_rate=1.0 / mean_dt, samples=v)


# ---------------------------------------------------------------------------
# CANT packed training tensors
# ---------------------------------------------------------------------------

def write_tensors(path, tensors):
    kind = _KIND_CODES.get(tensors.label_kind)
    if kind is None:
        raise DataError(f"unknown label kind {tensors.label_kind!r}")
    S, L = len(tensors), tensors.motion.shape[1]
    C = tensors.motion.shape[3]
    has_gold = tensors.gold is not None
    head = struct.pack("<4s3IBBf", _CANT_MAGIC, S, L, C, kind,
                       int(has_gold), float(tensors.fps))
    parts = [head,
             np.ascontiguousarray(tensors.motion, dtype="<f4").tobytes(),
             np.ascontiguousarray(tensors.appearance, dtype="<f4").tobytes(),
             np.ascontiguousarray(tensors.labels, dtype="<f4").tobytes()]
    if has_gold:
        parts.append(np.ascontiguousarray(tensors.gold,
                                          dtype="<f4").tobytes())
    atomic_write(path, b"".join(parts))


def read_tensors(path, name=None):
    with open(path, "rb") as fh:
        head = _read_exact(fh, struct.calcsize("<4s3IBBf"), "CANT header")
        magic, S, L, C, kind, has_gold, fps = struct.unpack("<4s3IBBf", head)
        if magic != _CANT_MAGIC:
            raise DataError(f"{path}: not a CANT tensors file")
        if kind not in _KIND_NAMES:
            raise DataError(f"{path}: unknown label kind code {kind}")
        plane = S * L * L * C * 4
        motion = np.frombuffer(_read_exact(fh, plane, "motion tensor"),
                               dtype="<f4").reshape(S, L, L, C).copy()
        appearance = np.frombuffer(
            _read_exact(fh, plane, "appearance tensor"),
            dtype="<f4").reshape(S, L, L, C).copy()
        labels = np.frombuffer(_read_exact(fh, S * 4, "labels"),
                               dtype="<f4").copy()
        gold = None
        if has_gold:
            gold = np.frombuffer(_read_exact(fh, (S + 1) * 4, "gold signal"),
                                 dtype="<f4").copy()
        if fh.read(1):
            raise DataError(f"{path}: trailing bytes after tensors")
    return TrainingTensors(
        motion=motion, appearance=appearance, labels=labels, fps=fps,
        label_kind=_KIND_NAMES[kind], gold=gold,
        name=name if name is not None else os.path.basename(path))


# ---------------------------------------------------------------------------
# CANW checkpoints
# ---------------------------------------------------------------------------

def write_checkpoint(path, params):
    atomic_write(path, params_to_bytes(params))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read())


# ---------------------------------------------------------------------------
# PPM ingestion: the documented path for bringing real recordings in.
# Decode the camera/codec stream externally into one binary P6 PPM per
# frame (frame order = lexicographic file order), then convert.
# ---------------------------------------------------------------------------

def _read_ppm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":  # comment line
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P6":
        raise DataError(f"{path}: only binary P6 PPM is supported")
    width, height, maxval = (int(f) for f in fields[1:])
    if maxval != 255:
        raise DataError(f"{path}: only 8-bit PPM (maxval 255) is supported")
    pos += 1  # single whitespace after maxval
    pixels = data[pos:pos + width * height * 3]
    if len(pixels) != width * height * 3:
        raise DataError(f"{path}: truncated pixel data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3)


def ppm_dir_to_ftv(ppm_dir, ftv_path, fps):
    """Convert a directory of P6 PPM frames into an FTV container."""
    names = sorted(n for n in os.listdir(ppm_dir)
                   if n.lower().endswith(".ppm"))
    if len(names) < 2:
        raise DataError(f"{ppm_dir}: need at least 2 .ppm frames")
    frames = np.stack([_read_ppm(os.path.join(ppm_dir, n)) for n in names])
    seq = FrameSequence(frames, fps=fps, provenance="loaded")
    write_ftv(ftv_path, seq)
    return seq


# ---------------------------------------------------------------------------
# PGM (P5) grayscale images
# ---------------------------------------------------------------------------

def write_pgm(path, image):
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise DataError("PGM writer expects a 2-D uint8 image")
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    atomic_write(path, header + image.tobytes())
