"""Mel analysis, mel inversion and Griffin-Lim waveform reconstruction.

The frame layout is fixed to the corpus constants: 24 kHz audio, 960-point
periodic Hann window / FFT, hop 240, no centre padding. A signal of ``N``
samples therefore has ``1 + (N - 960) // 240`` frames and ``T`` frames
overlap-add back to ``(T - 1) * 240 + 960`` samples.
"""

import wave
from pathlib import Path

import numpy as np

from .data import HOP_SAMPLES, SAMPLE_RATE, WIN_SAMPLES
from .errors import ShapeError, ValidationError
from .validation import NUM_MELS, check_finite

N_FFT = WIN_SAMPLES
N_BINS = N_FFT // 2 + 1
LOG_FLOOR = 1e-5
PEAK = 0.95


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(f >= min_log_hz, min_log_mel + np.log(np.maximum(f, min_log_hz) / min_log_hz) / logstep, f / f_sp)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


def mel_filterbank(sr=SAMPLE_RATE, n_fft=N_FFT, n_mels=NUM_MELS, fmin=0.0, fmax=None):
    """Slaney-normalized triangular filters, shape ``[n_mels, n_fft // 2 + 1]``."""
    fmax = sr / 2 if fmax is None else fmax
    fft_freqs = np.linspace(0.0, sr / 2, n_fft // 2 + 1)
    hz_pts = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fdiff = np.diff(hz_pts)
    ramps = hz_pts[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (hz_pts[2:] - hz_pts[:-2]))[:, None]
    return weights


_WINDOW = np.hanning(N_FFT + 1)[:-1]
_FILTERBANK = mel_filterbank()


def stft(signal, hop=HOP_SAMPLES, n_fft=N_FFT):
    signal = np.asarray(signal, dtype=np.float64)
    if len(signal) < n_fft:
        signal = np.pad(signal, (0, n_fft - len(signal)))
    n_frames = 1 + (len(signal) - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.fft.rfft(signal[idx] * _WINDOW, axis=1)


def istft(spec, hop=HOP_SAMPLES, n_fft=N_FFT):
    """Least-squares inverse STFT (window-weighted overlap-add)."""
    frames = np.fft.irfft(spec, n=n_fft, axis=1) * _WINDOW
    n = (spec.shape[0] - 1) * hop + n_fft
    out = np.zeros(n)
    norm = np.zeros(n)
    win_sq = _WINDOW**2
    for t in range(spec.shape[0]):
        out[t * hop : t * hop + n_fft] += frames[t]
        norm[t * hop : t * hop + n_fft] += win_sq
    return out / np.maximum(norm, 1e-8)


def linear_to_mel(linear, filterbank=_FILTERBANK):
    """Linear magnitudes ``[T, 481]`` to log10 mel ``[T, 80]``."""
    return np.log10(np.maximum(np.asarray(linear) @ filterbank.T, LOG_FLOOR))


def mel_spectrogram(signal):
    return linear_to_mel(np.abs(stft(signal)))


def mel_to_linear(mel, filterbank=_FILTERBANK, n_iters=100):
    """Invert log10 mel frames to non-negative linear magnitudes ``[T, 481]``.

    Solves the per-frame non-negative least-squares problem
    ``min ||F x - m||, x >= 0`` with multiplicative updates started from the
    clipped pseudo-inverse; all frames are solved at once. Mel values at the
    log floor are treated as zero magnitude.
    """
    mel = np.asarray(getattr(mel, "frames", mel), dtype=np.float64)
    if filterbank.ndim != 2 or mel.ndim != 2 or mel.shape[1] != filterbank.shape[0]:
        raise ValidationError(f"mel shape {mel.shape} does not match filterbank {filterbank.shape}")
    check_finite(mel, "mel")
    mag = 10.0**mel
    mag[mel <= np.log10(LOG_FLOOR)] = 0.0
    x = np.maximum(mag @ np.linalg.pinv(filterbank).T, 1e-10)
    x[~mag.any(axis=1)] = 0.0
    numer = mag @ filterbank
    gram = filterbank.T @ filterbank
    for _ in range(n_iters):
        x *= numer / np.maximum(x @ gram, 1e-30)
    return np.maximum(x, 0.0)


def spectral_convergence(signal, magnitude):
    denom = np.linalg.norm(magnitude)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(np.abs(stft(signal))[: len(magnitude)] - magnitude) / denom)


def griffin_lim(linear, n_iters=60, return_history=False):
    """Phase reconstruction from magnitudes, starting from zero phase.

    Returns a waveform peak-normalized to 0.95 (or all zeros for an all-zero
    input). With ``return_history`` also returns the spectral convergence
    after every iteration.
    """
    magnitude = np.asarray(linear, dtype=np.float64)
    if n_iters < 1:
        raise ValidationError("n_iters must be >= 1")
    if magnitude.ndim != 2 or magnitude.shape[1] != N_BINS:
        raise ShapeError(f"expected [T, {N_BINS}] magnitudes, got {magnitude.shape}")
    check_finite(magnitude, "magnitude")
    if magnitude.min() < 0:
        raise ValidationError("magnitudes must be non-negative")
    spec = magnitude.astype(np.complex128)
    history = []
    signal = istft(spec)
    for _ in range(n_iters):
        rebuilt = stft(signal)
        phase = np.exp(1j * np.angle(rebuilt))
        signal = istft(magnitude * phase)
        if return_history:
            history.append(spectral_convergence(signal, magnitude))
    peak = np.abs(signal).max()
    if peak > 0:
        signal = signal * (PEAK / peak)
    if return_history:
        return signal, history
    return signal


def mel_to_waveform(mel, n_iters=60):
    return griffin_lim(mel_to_linear(mel), n_iters=n_iters)


def write_wav(signal, path, sr=SAMPLE_RATE):
    """16-bit PCM mono RIFF."""
    pcm = np.clip(np.round(np.asarray(signal) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(Path(path)), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sr)
        fh.writeframes(pcm.tobytes())


def read_wav(path):
    with wave.open(str(Path(path)), "rb") as fh:
        data = fh.readframes(fh.getnframes())
        sr = fh.getframerate()
    return np.frombuffer(data, dtype="<i2").astype(np.float64) / 32767.0, sr
