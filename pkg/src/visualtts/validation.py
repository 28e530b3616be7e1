"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .errors import EmptyInputError, ShapeError, ValidationError

LIP_SIZE = 88
FRAME_RATIO = 4
NUM_MELS = 80


def check_finite(x, name="input"):
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise ValidationError(f"{name} contains non-finite values")
    return x


def check_lips(frames, name="lips"):
    """Validate a ``[T_v, 88, 88]`` array with values in ``[0, 1]``."""
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 3:
        raise ShapeError(f"{name}: expected [T_v, H, W], got shape {frames.shape}")
    if frames.shape[0] < 1:
        raise EmptyInputError(f"{name}: no frames")
    if frames.shape[1:] != (LIP_SIZE, LIP_SIZE):
        raise ShapeError(f"{name}: expected {LIP_SIZE}x{LIP_SIZE} crops, got {frames.shape[1:]}")
    check_finite(frames, name)
    if frames.min() < 0.0 or frames.max() > 1.0:
        raise ValidationError(f"{name}: pixel values outside [0, 1]")
    return frames


def check_mel(mel, name="mel", num_mels=NUM_MELS):
    mel = np.asarray(mel, dtype=np.float32)
    if mel.ndim != 2 or mel.shape[1] != num_mels:
        raise ShapeError(f"{name}: expected [T_m, {num_mels}], got shape {mel.shape}")
    if mel.shape[0] < 1:
        raise EmptyInputError(f"{name}: no frames")
    return check_finite(mel, name)


def check_embedding(x, dim, name):
    x = np.asarray(x) if not hasattr(x, "shape") else x
    if len(x.shape) != 2 or x.shape[1] != dim:
        raise ShapeError(f"{name}: expected [T, {dim}], got shape {tuple(x.shape)}")
    if x.shape[0] == 0:
        raise EmptyInputError(f"{name}: zero-length sequence")
    return x

