"""canphys: camera-based pulse and respiration measurement at desk scale.

A synthetic skin-reflection video generator with known ground truth, a
normalized frame-difference motion representation, a two-branch
convolutional attention network trained with Adadelta and checkpoint
ensembling, and a spectral evaluation stack (band-pass, windowing, peak
rates, MAE/RMSE/r/SNR).
"""

__version__ = "0.1.0"

from .errors import CanphysError, ConfigError, DataError  # noqa: F401
from .kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
from .model import CanArch, CanParams, can_backward, can_forward, \
    init_params  # noqa: F401
from .preprocess import PreprocConfig, TrainingTensors, \
    preprocess_clip  # noqa: F401
from .spectral import BandSpec, MetricsReport, RateEstimate  # noqa: F401
from .synth import SceneParams, default_scene, synthesize_scene  # noqa: F401
from .training import TrainConfig, select_checkpoint, \
    train_epochs  # noqa: F401
from .video import FrameSequence  # noqa: F401
from .waveforms import PhysioWaveform, make_pulse  # noqa: F401
