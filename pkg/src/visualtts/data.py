"""Domain types and JSON-lines manifests."""

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError, FormatError
from .tensorfile import read_tensor
from .validation import FRAME_RATIO, NUM_MELS, check_lips, check_mel

VIDEO_FPS = 25
SAMPLE_RATE = 24000
HOP_SAMPLES = 240
WIN_SAMPLES = 960


@dataclass(frozen=True)
class LipSequence:
    frames: np.ndarray
    frame_rate_hz: int = VIDEO_FPS

    def __post_init__(self):
        object.__setattr__(self, "frames", check_lips(self.frames))

    @property
    def num_frames(self):
        return self.frames.shape[0]


@dataclass(frozen=True)
class MelSpectrogram:
    """Log10-magnitude mel frames at 100 frames/s."""

    frames: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE
    hop_samples: int = HOP_SAMPLES
    win_samples: int = WIN_SAMPLES
    num_mels: int = NUM_MELS

    def __post_init__(self):
        object.__setattr__(self, "frames", check_mel(self.frames, num_mels=self.num_mels))

    @property
    def num_frames(self):
        return self.frames.shape[0]


@dataclass
class UtteranceRecord:
    utt_id: str
    speaker_id: int
    text: str
    lip_path: str
    mel_path: Optional[str]
    num_video_frames: int

    def load_lips(self, root="."):
        return read_tensor(Path(root) / self.lip_path)

    def load_mel(self, root="."):
        if self.mel_path is None:
            raise DataError(self.utt_id, "record has no mel_path")
        return read_tensor(Path(root) / self.mel_path)


_RECORD_FIELDS = [f.name for f in fields(UtteranceRecord)]


def write_manifest(records, path):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec), ensure_ascii=False) + "\n")
    return path


def read_manifest(path):
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            if sorted(obj) != sorted(_RECORD_FIELDS):
                raise FormatError(f"{path}:{lineno}: fields {sorted(obj)} != {sorted(_RECORD_FIELDS)}")
            records.append(UtteranceRecord(**obj))
    return records


def load_pair(record, root, check_ratio=True):
    """Load ``(lips, mel)`` arrays for a record, checking the frame ratio."""
    lips = check_lips(record.load_lips(root), name=f"{record.utt_id} lips")
    if lips.shape[0] != record.num_video_frames:
        raise DataError(record.utt_id, f"num_video_frames={record.num_video_frames} but lips have {lips.shape[0]}")
    mel = None
    if record.mel_path is not None:
        mel = check_mel(record.load_mel(root), name=f"{record.utt_id} mel")
        if check_ratio and mel.shape[0] != FRAME_RATIO * lips.shape[0]:
            raise DataError(
                record.utt_id,
                f"frame ratio violated: T_m={mel.shape[0]} != {FRAME_RATIO} x T_v={lips.shape[0]}",
            )
    return lips, mel
