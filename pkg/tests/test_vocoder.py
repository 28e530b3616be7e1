import numpy as np
import pytest

from visualtts.errors import ValidationError
from visualtts.toy import toy_corpus
from visualtts.vocoder import (
    N_BINS,
    griffin_lim,
    linear_to_mel,
    mel_filterbank,
    mel_spectrogram,
    mel_to_linear,
    read_wav,
    stft,
    write_wav,
)

SR = 24000


def test_filterbank_shape_and_coverage():
    fb = mel_filterbank()
    assert fb.shape == (80, N_BINS)
    assert (fb >= 0).all()
    assert (fb.sum(axis=1) > 0).all()


def test_zero_mel_inverts_to_zero():
    mel = np.full((3, 80), np.log10(1e-5))
    assert not mel_to_linear(mel).any()


def test_filterbank_mismatch():
    with pytest.raises(ValidationError):
        mel_to_linear(np.zeros((2, 80)), filterbank=np.ones((64, N_BINS)))


def test_one_khz_tone_peak():
    t = np.arange(SR) / SR
    mel = mel_spectrogram(0.5 * np.sin(2 * np.pi * 1000.0 * t))
    linear = mel_to_linear(mel)
    peaks = linear.argmax(axis=1)
    # 1 kHz / (24 kHz / 960) = bin 40
    assert np.all(np.abs(peaks - 40) <= 1)


def test_mel_round_trip_on_toy():
    for u in toy_corpus(4, 3, 2):
        back = linear_to_mel(mel_to_linear(u.mel))
        assert np.linalg.norm(back - u.mel) / np.linalg.norm(u.mel) < 0.15


def _vibrato_tone(seconds=0.6):
    t = np.arange(int(SR * seconds)) / SR
    freq = 440.0 + 20.0 * np.sin(2 * np.pi * 3 * t)
    return 0.5 * np.sin(2 * np.pi * np.cumsum(freq) / SR) * (0.6 + 0.4 * np.sin(2 * np.pi * 2 * t))


def test_griffin_lim_convergence_monotone():
    mag = np.abs(stft(_vibrato_tone()))
    _, history = griffin_lim(mag, n_iters=30, return_history=True)
    assert np.all(np.diff(history) <= 1e-9)
    assert history[-1] < history[0]


def test_griffin_lim_length_and_peak():
    mag = np.abs(stft(_vibrato_tone()))
    wav = griffin_lim(mag, n_iters=5)
    assert len(wav) == (mag.shape[0] - 1) * 240 + 960
    assert np.abs(wav).max() == pytest.approx(0.95)


def test_griffin_lim_zero_and_deterministic():
    assert not griffin_lim(np.zeros((4, N_BINS)), n_iters=3).any()
    mag = np.abs(stft(_vibrato_tone(0.2)))
    assert np.array_equal(griffin_lim(mag, 4), griffin_lim(mag, 4))


def test_griffin_lim_rejects_bad_iters():
    with pytest.raises(ValidationError):
        griffin_lim(np.zeros((4, N_BINS)), n_iters=0)


def test_energy_envelope_correlates_on_toy():
    u = toy_corpus(6, 1, 1)[0]
    linear = mel_to_linear(u.mel)
    wav = griffin_lim(linear, n_iters=20)
    e_in = (linear**2).sum(axis=1)
    e_out = (np.abs(stft(wav)) ** 2).sum(axis=1)
    assert np.corrcoef(e_in, e_out)[0, 1] > 0.9


def test_wav_round_trip(tmp_path):
    wav = 0.5 * np.sin(np.linspace(0, 100, 2400))
    write_wav(wav, tmp_path / "x.wav")
    back, sr = read_wav(tmp_path / "x.wav")
    assert sr == SR
    assert np.abs(back - wav).max() < 1e-4
