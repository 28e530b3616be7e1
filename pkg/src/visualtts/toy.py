"""Deterministic synthetic audio-visual corpus.

Each utterance is a short string over a 12-symbol alphabet. A symbol has a
fixed duration in video frames, a fixed mouth aperture (drawn as a striped
ellipse in the lip crop) and a fixed 80-bin log-mel template. The mel
template's mean level grows with the aperture, so lip motion and mel energy
are correlated frame by frame, as in real speech.

Symbol tables and speaker biases do not depend on the seed; the seed only
drives the symbol strings, speaker assignment, positional jitter and noise.
Corpora generated with different seeds therefore share one "language".
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import UtteranceRecord, write_manifest
from .errors import ValidationError
from .tensorfile import write_tensor
from .validation import FRAME_RATIO, LIP_SIZE, NUM_MELS

TOY_SYMBOLS = "abcdefghijkl"
TOY_DURATIONS = dict(zip(TOY_SYMBOLS, (4, 6, 5, 7, 8, 4, 5, 6, 7, 8, 5, 6)))
# vertical semi-axis of the mouth opening, pixels
TOY_APERTURES = dict(zip(TOY_SYMBOLS, (10, 4, 22, 14, 6, 26, 12, 18, 8, 24, 16, 20)))
MIN_SYMBOLS, MAX_SYMBOLS = 3, 8
JITTER_PX = 2
MEL_NOISE_STD = 0.01

_TABLE_SEED = 20211
_MOUTH_HALF_WIDTH = 26
_LIP_THICKNESS = 4


def _symbol_templates():
    rng = np.random.default_rng(_TABLE_SEED)
    bins = np.linspace(0.0, 1.0, NUM_MELS)
    base = -1.2 - 1.6 * bins**0.7
    kernel = np.exp(-0.5 * (np.arange(-6, 7) / 2.5) ** 2)
    kernel /= kernel.sum()
    lo, hi = min(TOY_APERTURES.values()), max(TOY_APERTURES.values())
    templates = {}
    for s in TOY_SYMBOLS:
        shape = np.convolve(rng.normal(0.0, 1.0, NUM_MELS), kernel, mode="same")
        level = -0.6 + 1.2 * (TOY_APERTURES[s] - lo) / (hi - lo)
        templates[s] = (base + 0.5 * shape + level).astype(np.float32)
    return templates


TOY_TEMPLATES = _symbol_templates()


def speaker_bias(speaker_id):
    rng = np.random.default_rng([_TABLE_SEED, int(speaker_id)])
    return rng.normal(0.0, 0.1, NUM_MELS).astype(np.float32)


def num_video_frames(symbols):
    return sum(TOY_DURATIONS[s] for s in symbols)


def draw_lip_frame(aperture, dx=0, dy=0, size=LIP_SIZE):
    """One grayscale crop: skin background, dark lip ring, striped mouth interior."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32)
    cy, cx = size / 2 + dy, size / 2 + dx
    a, b = _MOUTH_HALF_WIDTH, aperture
    inner = ((xx - cx) / a) ** 2 + ((yy - cy) / b) ** 2 <= 1.0
    outer = ((xx - cx) / (a + _LIP_THICKNESS)) ** 2 + ((yy - cy) / (b + _LIP_THICKNESS)) ** 2 <= 1.0
    img = np.full((size, size), 0.55, dtype=np.float32)
    img[outer] = 0.25
    stripes = np.where((np.floor((yy - cy) / 2) % 2) == 0, 0.15, 0.85).astype(np.float32)
    img[inner] = stripes[inner]
    return img


@dataclass
class ToyUtterance:
    utt_id: str
    speaker_id: int
    symbols: str
    lips: np.ndarray
    mel: np.ndarray

    @property
    def text(self):
        return self.symbols


def toy_utterance(seed, index, n_speakers, symbols=None):
    """Generate utterance ``index`` of the corpus for ``seed``."""
    rng = np.random.default_rng([int(seed), int(index)])
    if symbols is None:
        length = rng.integers(MIN_SYMBOLS, MAX_SYMBOLS + 1)
        symbols = "".join(rng.choice(list(TOY_SYMBOLS), size=length))
    speaker_id = int(rng.integers(0, n_speakers))
    frames, mel_blocks = [], []
    for s in symbols:
        d = TOY_DURATIONS[s]
        for _ in range(d):
            dx, dy = rng.integers(-JITTER_PX, JITTER_PX + 1, size=2)
            frames.append(draw_lip_frame(TOY_APERTURES[s], int(dx), int(dy)))
        mel_blocks.append(np.repeat(TOY_TEMPLATES[s][None], FRAME_RATIO * d, axis=0))
    mel = np.concatenate(mel_blocks) + speaker_bias(speaker_id)
    mel = mel + rng.normal(0.0, MEL_NOISE_STD, mel.shape)
    return ToyUtterance(
        utt_id=f"toy{seed}_{index:05d}",
        speaker_id=speaker_id,
        symbols=symbols,
        lips=np.stack(frames).astype(np.float32),
        mel=mel.astype(np.float32),
    )


def toy_corpus(seed, n_utts, n_speakers):
    if n_utts < 1 or n_speakers < 1:
        raise ValidationError("n_utts and n_speakers must be >= 1")
    return [toy_utterance(seed, i, n_speakers) for i in range(n_utts)]


def make_toy_dataset(seed, n_utts, n_speakers, out_dir):
    """Write a toy corpus under ``out_dir`` and return the manifest path.

    Paths in the manifest are relative to ``out_dir``.
    """
    utts = toy_corpus(seed, n_utts, n_speakers)
    out_dir = Path(out_dir)
    (out_dir / "lips").mkdir(parents=True, exist_ok=True)
    (out_dir / "mels").mkdir(parents=True, exist_ok=True)
    records = []
    for u in utts:
        lip_rel, mel_rel = f"lips/{u.utt_id}.vtts", f"mels/{u.utt_id}.vtts"
        write_tensor(u.lips, out_dir / lip_rel)
        write_tensor(u.mel, out_dir / mel_rel)
        records.append(
            UtteranceRecord(
                utt_id=u.utt_id,
                speaker_id=u.speaker_id,
                text=u.symbols,
                lip_path=lip_rel,
                mel_path=mel_rel,
                num_video_frames=int(u.lips.shape[0]),
            )
        )
    return write_manifest(records, out_dir / "manifest.jsonl")
