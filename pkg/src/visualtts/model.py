"""Full model: encoders, textual-visual aligner and acoustic decoder.

Three variants share the code:

``visualtts``
    TVA memory, visual fusion in the decoder, output length locked to the video.
``tacotron_tva``
    TVA memory, no visual fusion; a stop head ends decoding.
``tacotron``
    No visual input at all; decoder memory is a projection of the text
    embedding; a stop head ends decoding.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .decoder import AcousticDecoder
from .encoders import LipEncoder, SpeakerEncoder, TextEncoder
from .errors import ConfigError, DataError, FormatError
from .tensorfile import read_tensor_dir, write_tensor_dir
from .text import PAD_ID, VOCAB_SIZE
from .tva import TextualVisualAttention
from .validation import FRAME_RATIO

VARIANTS = ("visualtts", "tacotron_tva", "tacotron")


@dataclass
class ModelConfig:
    variant: str = "visualtts"
    n_speakers: int = 33
    n_vocab: int = VOCAB_SIZE
    n_mels: int = 80
    char_embed_dim: int = 128
    cbhg_bank_k: int = 16
    cbhg_channels: int = 128
    cbhg_highway: int = 4
    text_dim: int = 512
    visual_dim: int = 512
    stem_channels: int = 64
    resnet_widths: tuple = (64, 128, 256, 512)
    speaker_dim: int = 256
    speaker_proj_dim: int = 64
    tva_heads: int = 2
    tva_head_dim: int = 256
    tva_out_dim: int = 64
    prenet_sizes: tuple = (256, 128)
    prenet_dropout: float = 0.5
    fusion_dim: int = 256
    attention_rnn_dim: int = 256
    decoder_rnn_dim: int = 256
    attention_dim: int = 128
    zoneout: float = 0.1
    frames_per_step: int = 2
    frozen_visual: bool = True
    max_decoder_steps: int = 250

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        self.resnet_widths = tuple(self.resnet_widths)
        self.prenet_sizes = tuple(self.prenet_sizes)
        if FRAME_RATIO % self.frames_per_step:
            raise ConfigError("frames_per_step must divide the mel/video frame ratio")

    def shrink(self, factor=8):
        """Copy with every hidden width divided by ``factor`` (for gradient checks)."""

        def d(x):
            return max(1, x // factor)

        return ModelConfig(
            **{
                **asdict(self),
                "char_embed_dim": d(self.char_embed_dim),
                "cbhg_bank_k": d(self.cbhg_bank_k),
                "cbhg_channels": d(self.cbhg_channels),
                "text_dim": 2 * d(self.text_dim // 2),
                "visual_dim": d(self.visual_dim),
                "stem_channels": d(self.stem_channels),
                "resnet_widths": tuple(d(w) for w in self.resnet_widths),
                "speaker_dim": d(self.speaker_dim),
                "speaker_proj_dim": d(self.speaker_proj_dim),
                "tva_head_dim": d(self.tva_head_dim),
                "tva_out_dim": d(self.tva_out_dim),
                "prenet_sizes": tuple(d(p) for p in self.prenet_sizes),
                "fusion_dim": d(self.fusion_dim),
                "attention_rnn_dim": d(self.attention_rnn_dim),
                "decoder_rnn_dim": d(self.decoder_rnn_dim),
                "attention_dim": d(self.attention_dim),
            }
        )

    @property
    def memory_dim(self):
        return self.tva_out_dim + self.speaker_proj_dim

    @property
    def uses_tva(self):
        return self.variant in ("visualtts", "tacotron_tva")

    @property
    def uses_fusion(self):
        return self.variant == "visualtts"


@dataclass
class Batch:
    """Padded batch. Lengths are per-sequence valid lengths."""

    tokens: torch.Tensor  # [B, T_t] long
    text_lengths: torch.Tensor  # [B]
    speaker_ids: torch.Tensor  # [B]
    video_lengths: torch.Tensor  # [B]
    alpha: torch.Tensor = None  # [B, T_v, visual_dim]
    lips: torch.Tensor = None  # [B, T_v, 88, 88]
    mel: torch.Tensor = None  # [B, T_m, n_mels]
    utt_ids: list = field(default_factory=list)


def collate(items, dtype=torch.float32):
    """Pad a list of dicts with ``tokens``, ``speaker_id`` and ``alpha``/``lips``/``mel`` arrays."""
    b = len(items)
    text_lengths = torch.tensor([len(it["tokens"]) for it in items])
    tokens = torch.full((b, int(text_lengths.max())), PAD_ID, dtype=torch.long)
    for i, it in enumerate(items):
        tokens[i, : len(it["tokens"])] = torch.as_tensor(np.asarray(it["tokens"]), dtype=torch.long)

    def pad(key):
        if any(it.get(key) is None for it in items):
            return None
        arrays = [torch.as_tensor(np.asarray(it[key]), dtype=dtype) for it in items]
        out = arrays[0].new_zeros(b, max(a.shape[0] for a in arrays), *arrays[0].shape[1:])
        for i, a in enumerate(arrays):
            out[i, : a.shape[0]] = a
        return out

    video_lengths = []
    for it in items:
        src = it.get("alpha") if it.get("alpha") is not None else it.get("lips")
        if src is not None:
            video_lengths.append(len(src))
        elif it.get("num_video_frames") is not None:
            video_lengths.append(it["num_video_frames"])
        elif it.get("mel") is not None:
            # audio-only items: the nominal video length follows from the mel
            video_lengths.append(len(it["mel"]) // FRAME_RATIO)
        else:
            raise DataError(it.get("utt_id", "?"), "no lips, alpha, mel or num_video_frames to size the item")
    for it, tv in zip(items, video_lengths):
        if it.get("mel") is not None and len(it["mel"]) != FRAME_RATIO * tv:
            raise DataError(it.get("utt_id", "?"), f"frame ratio violated: T_m={len(it['mel'])} != {FRAME_RATIO} x T_v={tv}")
    return Batch(
        tokens=tokens,
        text_lengths=text_lengths,
        speaker_ids=torch.tensor([int(it["speaker_id"]) for it in items]),
        video_lengths=torch.tensor(video_lengths),
        alpha=pad("alpha"),
        lips=pad("lips"),
        mel=pad("mel"),
        utt_ids=[it.get("utt_id") for it in items],
    )


@dataclass
class Synthesis:
    mel: np.ndarray  # [T_m, n_mels]
    tva_weights: np.ndarray  # [heads, T_t, T_v] (empty for tacotron)
    decoder_alignments: np.ndarray  # [steps, T_t]
    visual_indices: list = None


class VisualTTSModel(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = config = config or ModelConfig()
        self.lip_encoder = None
        if config.variant != "tacotron":
            self.lip_encoder = LipEncoder(
                config.visual_dim, config.stem_channels, config.resnet_widths, frozen=config.frozen_visual
            )
        self.text_encoder = TextEncoder(
            config.n_vocab, config.char_embed_dim, config.cbhg_bank_k, config.cbhg_channels,
            config.cbhg_highway, config.text_dim,
        )
        self.speaker_encoder = SpeakerEncoder(config.n_speakers, config.speaker_dim, config.speaker_proj_dim)
        if config.uses_tva:
            self.tva = TextualVisualAttention(
                config.text_dim, config.visual_dim, config.tva_heads, config.tva_head_dim, config.tva_out_dim
            )
            self.text_proj = None
        else:
            self.tva = None
            self.text_proj = nn.Linear(config.text_dim, config.tva_out_dim)
        self.decoder = AcousticDecoder(
            n_mels=config.n_mels,
            memory_dim=config.memory_dim,
            visual_dim=config.visual_dim if config.uses_fusion else 0,
            speaker_dim=config.speaker_proj_dim,
            fusion_dim=config.fusion_dim,
            prenet_sizes=config.prenet_sizes,
            prenet_dropout=config.prenet_dropout,
            attention_rnn_dim=config.attention_rnn_dim,
            decoder_rnn_dim=config.decoder_rnn_dim,
            attention_dim=config.attention_dim,
            zoneout=config.zoneout,
            frames_per_step=config.frames_per_step,
            stop_token=not config.uses_fusion,
        )

    @property
    def uses_visual(self):
        return self.lip_encoder is not None

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def encode_lips(self, lips):
        lips = torch.as_tensor(lips, dtype=self._dtype())
        if lips.dim() == 3:
            lips = lips.unsqueeze(0)
        if self.lip_encoder.frozen:
            with torch.no_grad():
                return self.lip_encoder(lips)
        return self.lip_encoder(lips)

    def _dtype(self):
        return next(self.text_encoder.parameters()).dtype

    def encode(self, tokens, text_lengths, alpha, video_lengths, speaker_ids):
        """Build decoder memory; returns ``(memory_rows, tva_weights, gamma_projected)``."""
        beta = self.text_encoder(tokens, text_lengths)
        _, gamma = self.speaker_encoder(speaker_ids)
        tva_weights = None
        if self.tva is not None:
            out = self.tva(beta, alpha, video_lengths)
            ctx, tva_weights = out.context, out.attention_weights
        else:
            ctx = self.text_proj(beta)
        rows = torch.cat([ctx, gamma.unsqueeze(1).expand(-1, ctx.shape[1], -1)], dim=-1)
        return rows, tva_weights, gamma

    def _alpha_for(self, batch):
        if not self.uses_visual:
            return None
        if batch.alpha is not None:
            return batch.alpha
        return self.encode_lips(batch.lips)

    def forward(self, batch):
        """Teacher-forced pass; returns ``(DecoderOutput, tva_weights)``."""
        alpha = self._alpha_for(batch)
        rows, tva_weights, gamma = self.encode(
            batch.tokens, batch.text_lengths, alpha, batch.video_lengths, batch.speaker_ids
        )
        memory = self.decoder.prepare_memory(rows, batch.text_lengths)
        n_steps = FRAME_RATIO * int(batch.video_lengths.max()) // self.config.frames_per_step
        out = self.decoder.teacher_forward(batch.mel, memory, alpha, gamma, batch.video_lengths, n_steps)
        return out, tva_weights

    def loss(self, batch, out):
        """Masked mean L1 over valid mel frames and bins, plus stop BCE for baselines.

        Returns ``(total, l1)``.
        """
        mel_lengths = FRAME_RATIO * batch.video_lengths
        t = out.mel.shape[1]
        mask = (torch.arange(t)[None, :] < mel_lengths[:, None]).to(out.mel.dtype).unsqueeze(-1)
        l1 = ((out.mel - batch.mel[:, :t]).abs() * mask).sum() / (mask.sum() * out.mel.shape[-1])
        total = l1
        if out.stop_logits is not None:
            steps = out.stop_logits.shape[1]
            last = (mel_lengths // self.config.frames_per_step - 1)[:, None]
            target = (torch.arange(steps)[None, :] >= last).to(out.stop_logits.dtype)
            total = total + F.binary_cross_entropy_with_logits(out.stop_logits, target)
        return total, l1

    @torch.no_grad()
    def synthesize(self, tokens, speaker_id, lips=None, alpha=None, max_decoder_steps=None):
        """Free-running synthesis of one utterance.

        For ``visualtts`` the output always has ``4 * T_v`` frames.
        """
        tokens = torch.as_tensor(np.asarray(getattr(tokens, "token_ids", tokens)), dtype=torch.long).reshape(1, -1)
        alpha_t, n_video = None, None
        if self.uses_visual:
            if alpha is None:
                alpha_t = self.encode_lips(lips)
            else:
                alpha_t = torch.as_tensor(np.asarray(alpha), dtype=self._dtype()).reshape(1, -1, self.config.visual_dim)
            n_video = alpha_t.shape[1]
        rows, tva_weights, gamma = self.encode(
            tokens, torch.tensor([tokens.shape[1]]), alpha_t, None, torch.tensor([int(speaker_id)])
        )
        memory = self.decoder.prepare_memory(rows)
        out = self.decoder.infer(
            memory, alpha_t, gamma, n_video, max_steps=max_decoder_steps or self.config.max_decoder_steps
        )
        heads = self.config.tva_heads
        return Synthesis(
            mel=out.mel[0].cpu().numpy(),
            tva_weights=tva_weights[0].cpu().numpy() if tva_weights is not None else np.zeros((heads, 0, 0)),
            decoder_alignments=out.alignments[0].cpu().numpy(),
            visual_indices=out.visual_indices,
        )


def save_checkpoint(model, directory, extra=None):
    """Write ``config.json`` plus one TensorFile per state-dict entry."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    state = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    write_tensor_dir(state, directory)
    meta = {"model": asdict(model.config), **(extra or {})}
    (directory / "config.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    return directory


def load_checkpoint(directory):
    directory = Path(directory)
    cfg_path = directory / "config.json"
    if not cfg_path.exists():
        raise FormatError(f"missing {cfg_path}")
    meta = json.loads(cfg_path.read_text(encoding="utf-8"))
    known = {f.name for f in fields(ModelConfig)}
    model = VisualTTSModel(ModelConfig(**{k: v for k, v in meta["model"].items() if k in known}))
    tensors = read_tensor_dir(directory)
    reference = model.state_dict()
    missing = set(reference) - set(tensors)
    if missing:
        raise FormatError(f"checkpoint lacks {sorted(missing)[:3]}...")
    state = {k: torch.from_numpy(tensors[k]).to(reference[k].dtype) for k in reference}
    model.load_state_dict(state)
    model.eval()
    return model, meta
