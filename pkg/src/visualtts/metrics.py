"""Lip-speech synchronization metrics.

``frame_disturbance`` measures duration deviation between two mels as the RMS
distance of their DTW path from the diagonal. ``sync_proxy_score`` follows the
sliding-offset protocol of SyncNet-style scoring, but with analytic features
(mel energy against a lip-aperture proxy), so only comparisons between systems
are meaningful.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import EmptyInputError, InsufficientLengthError, ShapeError, ValidationError
from .validation import FRAME_RATIO, check_finite


@dataclass
class DtwResult:
    path: list
    total_cost: float


@dataclass
class SyncScore:
    distance_like: float
    confidence_like: float
    best_offset_frames: int


def _as_sequence(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ShapeError(f"{name}: expected [T, D], got shape {x.shape}")
    if x.shape[0] == 0:
        raise EmptyInputError(f"{name}: empty sequence")
    return check_finite(x, name)


def dtw_path(a, b):
    """Minimum-cost monotone alignment under Euclidean frame distance.

    Steps are (1, 0), (0, 1) and (1, 1); on equal accumulated cost the
    diagonal predecessor wins, then (i-1, j), then (i, j-1).
    """
    a = _as_sequence(a, "a")
    b = _as_sequence(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ValidationError(f"feature dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    cost = cdist(a, b)
    n, m = cost.shape
    acc = np.full((n, m), np.inf)
    # 0 = diagonal, 1 = from (i-1, j), 2 = from (i, j-1)
    move = np.zeros((n, m), dtype=np.int8)
    acc[0, 0] = cost[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
        move[0, j] = 2
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        move[i, 0] = 1
        prev, row, c = acc[i - 1], acc[i], cost[i]
        mv = move[i]
        left = row[0]
        for j in range(1, m):
            best, k = prev[j - 1], 0
            if prev[j] < best:
                best, k = prev[j], 1
            if left < best:
                best, k = left, 2
            left = best + c[j]
            row[j] = left
            mv[j] = k
    path = [(n - 1, m - 1)]
    i, j = n - 1, m - 1
    while (i, j) != (0, 0):
        k = move[i, j]
        if k == 0:
            i, j = i - 1, j - 1
        elif k == 1:
            i -= 1
        else:
            j -= 1
        path.append((i, j))
    path.reverse()
    return DtwResult(path=path, total_cost=float(acc[-1, -1]))


def frame_disturbance(synth, reference):
    """RMS of ``i - j`` over the DTW path between two mels, in frames."""
    synth = np.asarray(synth.frames if hasattr(synth, "frames") else synth)
    reference = np.asarray(reference.frames if hasattr(reference, "frames") else reference)
    if synth.size == 0 or reference.size == 0:
        raise EmptyInputError("frame_disturbance needs non-empty mels")
    result = dtw_path(synth, reference)
    dev = np.array([i - j for i, j in result.path], dtype=np.float64)
    return float(np.sqrt(np.mean(dev**2)))


def mel_energy_per_video_frame(mel, ratio=FRAME_RATIO):
    mel = np.asarray(mel, dtype=np.float64)
    n = mel.shape[0] // ratio
    if n == 0:
        raise InsufficientLengthError(f"mel of {mel.shape[0]} frames is shorter than one video frame")
    return mel[: n * ratio].mean(axis=1).reshape(n, ratio).mean(axis=1)


def lip_aperture_proxy(frames):
    """Mean absolute vertical intensity gradient over the central column band."""
    frames = np.asarray(frames, dtype=np.float64)
    w = frames.shape[2]
    band = frames[:, :, 3 * w // 8 : 5 * w // 8]
    return np.abs(np.diff(band, axis=1)).mean(axis=(1, 2))


def _znorm(x, name):
    std = x.std()
    if not np.isfinite(std) or std < 1e-8:
        raise ValidationError(f"{name} stream has zero variance; cannot z-normalize")
    return (x - x.mean()) / std


def offset_distances(audio, visual, max_offset):
    """Mean distance between ``audio[t + o]`` and ``visual[t]`` for each offset."""
    n = min(len(audio), len(visual))
    if n < 2 * max_offset + 1:
        raise InsufficientLengthError(f"{n} overlapping frames; need at least {2 * max_offset + 1} for max_offset={max_offset}")
    offsets = np.arange(-max_offset, max_offset + 1)
    dists = np.empty(len(offsets))
    for k, o in enumerate(offsets):
        t0, t1 = max(0, -o), min(len(visual), len(audio) - o)
        dists[k] = np.abs(audio[t0 + o : t1 + o] - visual[t0:t1]).mean()
    return offsets, dists


def sync_proxy_score(mel, lips, max_offset=15):
    """Slide audio against video; report distance, confidence and best offset.

    A positive ``best_offset_frames`` means the audio lags the video.
    """
    mel = np.asarray(mel.frames if hasattr(mel, "frames") else mel)
    lips = np.asarray(lips.frames if hasattr(lips, "frames") else lips)
    if max_offset < 0:
        raise ValidationError("max_offset must be >= 0")
    audio = mel_energy_per_video_frame(mel)
    visual = lip_aperture_proxy(lips)
    n = min(len(audio), len(visual))
    if n < 2 * max_offset + 1:
        raise InsufficientLengthError(f"{n} overlapping frames; need at least {2 * max_offset + 1} for max_offset={max_offset}")
    audio = _znorm(audio, "audio")
    visual = _znorm(visual, "visual")
    offsets, dists = offset_distances(audio, visual, max_offset)
    best = int(np.argmin(dists))
    return SyncScore(
        distance_like=float(dists[best]),
        confidence_like=float(np.median(dists) - dists[best]),
        best_offset_frames=int(offsets[best]),
    )


def default_max_offset(num_video_frames, cap=15):
    """Largest offset window (up to ``cap``) the utterance length supports."""
    return max(0, min(cap, (num_video_frames - 1) // 2))
