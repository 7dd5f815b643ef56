"""Frame sequence container used by every pipeline stage."""

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class FrameSequence:
    """A video tensor of shape [T, H, W, C] plus frame-rate metadata.

    ``frames`` is either uint8 (values 0..255) or float32. Grayscale videos
    use C = 1, color videos C = 3.
    """

    frames: np.ndarray
    fps: float
    provenance: str = "loaded"  # "synthetic" | "loaded"

    def __post_init__(self):
        f = np.asarray(self.frames)
        if f.ndim != 4:
            raise DataError(f"frames must be [T,H,W,C], got shape {f.shape}")
        if f.shape[0] < 2:
            raise DataError("a frame sequence needs at least 2 frames")
        if f.shape[3] not in (1, 3):
            raise DataError(f"channel count must be 1 or 3, got {f.shape[3]}")
        if f.dtype == np.uint8:
            pass
        elif f.dtype == np.float32:
            if not np.all(np.isfinite(f)):
                raise DataError("float frames contain non-finite values")
        else:
            raise DataError(f"frames must be uint8 or float32, got {f.dtype}")
        if not self.fps > 0:
            raise DataError(f"fps must be positive, got {self.fps}")
        self.frames = f

    @property
    def shape(self):
        return self.frames.shape

    @property
    def duration(self):
        return self.frames.shape[0] / self.fps

    def as_float(self):
        """Return a float32 view of the video, mapping uint8 to [0, 1].

        The [0, 1] mapping keeps the degenerate-denominator guard of the
        frame-difference step meaningful for both dtypes.
        """
        if self.frames.dtype == np.float32:
            return self
        return FrameSequence(self.frames.astype(np.float32) / 255.0,
                             fps=self.fps, provenance=self.provenance)

    def quantized_u8(self):
        """Simulate camera quantization: clip to [0, 1] and round to 8 bits.

        Only meaningful for scenes calibrated so pixel values stay near
        [0, 1]; values outside that range saturate.
        """
        if self.frames.dtype == np.uint8:
            return self
        q = np.clip(np.rint(self.frames * 255.0), 0, 255).astype(np.uint8)
        return FrameSequence(q, fps=self.fps, provenance=self.provenance)
