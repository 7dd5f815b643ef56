"""Flat key=value run configuration.

One file can drive the whole pipeline; each command reads its own keys.
Unknown keys are rejected outright (catching typos beats silently ignoring
them) and seeds have no defaults: a run that depends on randomness must
say so explicitly.
"""

from .errors import ConfigError

# key -> (parser tag, default) where default REQUIRED means the command
# using the key fails without it. Seeds are always REQUIRED.
REQUIRED = object()

KEYS = {
    # synth
    "synth.out_dir": ("str", REQUIRED),
    "synth.n_clips": ("int", REQUIRED),
    "synth.width": ("int", 36),
    "synth.height": ("int", 36),
    "synth.fps": ("float", 30.0),
    "synth.duration_s": ("float", 60.0),
    "synth.hr_lo": ("float", 45.0),
    "synth.hr_hi": ("float", 150.0),
    "synth.br_lo": ("float", 8.0),
    "synth.br_hi": ("float", 24.0),
    "synth.harmonic_ratio": ("float", 0.1),
    "synth.pulse_amp": ("float", 0.02),
    "synth.motion_gain": ("float", 0.0),
    "synth.pulse_gain": ("float", 0.0),
    "synth.cross_gain": ("float", 0.0),
    "synth.nuisance_sigma": ("float", 0.5),
    "synth.nuisance_cutoff_hz": ("float", 0.5),
    "synth.noise_sigma": ("float", 0.0),
    "synth.dtype": (("f32", "u8"), "f32"),
    "synth.seed": ("int", REQUIRED),
    # prep
    "prep.in_dir": ("str", REQUIRED),
    "prep.out_dir": ("str", REQUIRED),
    "prep.L": ("int", 36),
    "prep.clip_sigmas": ("float", 3.0),
    "prep.target_fps": ("float", None),
    "prep.label": (("bvp", "respiration"), "bvp"),
    # architecture
    "arch.input_side": ("int", 36),
    "arch.channels": ("ints", (32, 32, 64, 64)),
    "arch.n8": ("int", 128),
    "arch.dropout": ("floats", (0.25, 0.25, 0.5)),
    # train
    "train.tensors_dir": ("str", REQUIRED),
    "train.out_dir": ("str", REQUIRED),
    "train.epochs": ("int", 8),
    "train.extra_epochs": ("int", 16),
    "train.batch_size": ("int", 128),
    "train.rho": ("float", 0.95),
    "train.eps": ("float", 1e-6),
    "train.target": (("HR", "BR"), "HR"),
    "train.window_s": ("float", 30.0),
    "train.stride_s": ("float", 1.0),
    "train.shuffle_seed": ("int", REQUIRED),
    "train.init_seed": ("int", REQUIRED),
    "train.dropout_seed": ("int", REQUIRED),
    # eval
    "eval.tensors_dir": ("str", REQUIRED),
    "eval.out_dir": ("str", REQUIRED),
    "eval.ftv_dir": ("str", None),
    "eval.band": (("HR", "BR"), "HR"),
    "eval.window_s": ("float", 30.0),
    "eval.stride_s": ("float", 1.0),
    # attn
    "attn.tensors_file": ("str", REQUIRED),
    "attn.out_dir": ("str", REQUIRED),
}


def _parse_value(key, raw):
    tag, _ = KEYS[key]
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "str":
            return raw
        if tag == "ints":
            return tuple(int(p) for p in raw.split(","))
        if tag == "floats":
            return tuple(float(p) for p in raw.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    # choice
    if raw not in tag:
        raise ConfigError(
            f"{key} must be one of {'|'.join(tag)}, got {raw!r}")
    return raw


class RunConfig:
    """Parsed key=value file with typed, default-aware access."""

    def __init__(self, values, path="<memory>"):
        self.values = values
        self.path = path

    @classmethod
    def parse(cls, path):
        values = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(
                        f"{path}:{line_no}: expected key=value, got {line!r}")
                key, raw = (part.strip() for part in line.split("=", 1))
                if key not in KEYS:
                    raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
                if key in values:
                    raise ConfigError(f"{path}:{line_no}: duplicate key {key!r}")
                values[key] = _parse_value(key, raw)
        return cls(values, path)

    def get(self, key):
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        if key in self.values:
            return self.values[key]
        default = KEYS[key][1]
        if default is REQUIRED:
            raise ConfigError(f"{self.path}: missing required key {key!r}")
        return default
