"""Autoregressive acoustic decoder with visual fusion and the video-length stop rule."""

from dataclasses import dataclass, replace
from typing import Optional

import torch
from torch import nn
from torch.nn import functional as F

from .errors import NumericError, ShapeError, StopContractError, ValidationError
from .validation import FRAME_RATIO


def video_index(mel_frame, num_video_frames, ratio=FRAME_RATIO):
    """Video frame that mel frame ``mel_frame`` belongs to (clamped to the last)."""
    if mel_frame < 0:
        raise ValidationError(f"mel frame index must be >= 0, got {mel_frame}")
    if num_video_frames < 1:
        raise ValidationError("num_video_frames must be >= 1")
    return min(mel_frame // ratio, num_video_frames - 1)


class Prenet(nn.Module):
    def __init__(self, in_dim=80, sizes=(256, 128), dropout=0.5):
        super().__init__()
        dims = [in_dim, *sizes]
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))
        self.dropout = dropout

    def forward(self, x):
        for layer in self.layers:
            x = F.dropout(F.relu(layer(x)), p=self.dropout, training=self.training)
        return x


class VisualFusion(nn.Module):
    """``proj([prenet(prev_mel) ; alpha_frame]) + spk(gamma_projected)``.

    With ``visual_dim=0`` the visual input is dropped (used by the baselines
    that have no fusion of lip features).
    """

    def __init__(self, n_mels=80, prenet_sizes=(256, 128), dropout=0.5, visual_dim=512, speaker_dim=64, out_dim=256):
        super().__init__()
        self.prenet = Prenet(n_mels, prenet_sizes, dropout)
        self.visual_dim = visual_dim
        self.n_mels = n_mels
        self.proj = nn.Linear(prenet_sizes[-1] + visual_dim, out_dim)
        self.speaker = nn.Linear(speaker_dim, out_dim)

    def forward(self, prev_mel, alpha_frame, gamma_projected):
        if prev_mel.shape[-1] != self.n_mels:
            raise ShapeError(f"prev_mel width {prev_mel.shape[-1]} != {self.n_mels}")
        if gamma_projected.shape[-1] != self.speaker.in_features:
            raise ShapeError(f"speaker width {gamma_projected.shape[-1]} != {self.speaker.in_features}")
        h = self.prenet(prev_mel)
        if self.visual_dim:
            if alpha_frame is None or alpha_frame.shape[-1] != self.visual_dim:
                raise ShapeError(f"expected visual frame of width {self.visual_dim}")
            h = torch.cat([h, alpha_frame], dim=-1)
        spk = self.speaker(gamma_projected)
        if h.dim() == 3:
            spk = spk.unsqueeze(1)
        return self.proj(h) + spk


class ZoneoutLSTMCell(nn.LSTMCell):
    """LSTM cell whose hidden and cell states are zoned out.

    Training: each unit keeps its previous value with probability ``zoneout``.
    Evaluation: the expectation, ``(1 - zoneout) * new + zoneout * old``.
    """

    def __init__(self, input_size, hidden_size, zoneout=0.1):
        super().__init__(input_size, hidden_size)
        self.zoneout = zoneout

    def forward(self, x, state):
        h_old, c_old = state
        h_new, c_new = super().forward(x, state)
        p = self.zoneout
        if p == 0:
            return h_new, c_new
        if self.training:
            keep_h = torch.bernoulli(torch.full_like(h_new, p))
            keep_c = torch.bernoulli(torch.full_like(c_new, p))
            return keep_h * h_old + (1 - keep_h) * h_new, keep_c * c_old + (1 - keep_c) * c_new
        return (1 - p) * h_new + p * h_old, (1 - p) * c_new + p * c_old


class AdditiveAttention(nn.Module):
    """Content-based ``v^T tanh(W q + V m)`` attention over decoder memory."""

    def __init__(self, query_dim, memory_dim, attention_dim=128):
        super().__init__()
        self.query = nn.Linear(query_dim, attention_dim, bias=False)
        self.memory = nn.Linear(memory_dim, attention_dim, bias=False)
        self.v = nn.Linear(attention_dim, 1, bias=False)

    def forward(self, query, keys, values, mask=None):
        energies = self.v(torch.tanh(self.query(query).unsqueeze(1) + keys)).squeeze(-1)
        if mask is not None:
            energies = energies.masked_fill(~mask, float("-inf"))
        weights = torch.softmax(energies, dim=-1)
        context = torch.bmm(weights.unsqueeze(1), values).squeeze(1)
        return context, weights


@dataclass
class DecoderMemory:
    rows: torch.Tensor  # [B, T_t, memory_dim]
    keys: torch.Tensor  # rows passed through the attention memory layer
    mask: Optional[torch.Tensor] = None  # [B, T_t], True on valid rows


@dataclass
class DecoderState:
    attention_rnn: tuple
    lstm1: tuple
    lstm2: tuple
    attention_context: torch.Tensor
    step_index: int
    limit: Optional[int]

    @property
    def attention_rnn_hidden(self):
        return self.attention_rnn[0]

    @property
    def lstm_hiddens(self):
        return self.lstm1[0], self.lstm2[0]


@dataclass
class DecoderOutput:
    mel: torch.Tensor  # [B, T_m, n_mels]
    alignments: torch.Tensor  # [B, steps, T_t]
    stop_logits: Optional[torch.Tensor]  # [B, steps]
    visual_indices: Optional[list] = None


class AcousticDecoder(nn.Module):
    """Attention RNN, two zoneout LSTMs and a linear head emitting two frames per step."""

    def __init__(
        self,
        n_mels=80,
        memory_dim=128,
        visual_dim=512,
        speaker_dim=64,
        fusion_dim=256,
        prenet_sizes=(256, 128),
        prenet_dropout=0.5,
        attention_rnn_dim=256,
        decoder_rnn_dim=256,
        attention_dim=128,
        zoneout=0.1,
        frames_per_step=2,
        stop_token=False,
    ):
        super().__init__()
        self.n_mels = n_mels
        self.memory_dim = memory_dim
        self.frames_per_step = frames_per_step
        self.fusion = VisualFusion(n_mels, prenet_sizes, prenet_dropout, visual_dim, speaker_dim, fusion_dim)
        self.attention_rnn = nn.LSTMCell(fusion_dim + memory_dim, attention_rnn_dim)
        self.attention = AdditiveAttention(attention_rnn_dim, memory_dim, attention_dim)
        self.lstm1 = ZoneoutLSTMCell(attention_rnn_dim + memory_dim, decoder_rnn_dim, zoneout)
        self.lstm2 = ZoneoutLSTMCell(decoder_rnn_dim, decoder_rnn_dim, zoneout)
        self.mel_head = nn.Linear(decoder_rnn_dim + memory_dim, frames_per_step * n_mels)
        self.stop_head = nn.Linear(decoder_rnn_dim + memory_dim, 1) if stop_token else None

    @property
    def uses_visual(self):
        return self.fusion.visual_dim > 0

    def prepare_memory(self, rows, lengths=None):
        mask = None
        if lengths is not None:
            mask = torch.arange(rows.shape[1], device=rows.device)[None, :] < lengths[:, None]
        return DecoderMemory(rows=rows, keys=self.attention.memory(rows), mask=mask)

    def init_state(self, batch_size, limit=None, like=None):
        def zeros(dim):
            return torch.zeros(batch_size, dim, dtype=like.dtype if like is not None else None,
                               device=like.device if like is not None else None)

        a, d = self.attention_rnn.hidden_size, self.lstm1.hidden_size
        return DecoderState(
            attention_rnn=(zeros(a), zeros(a)),
            lstm1=(zeros(d), zeros(d)),
            lstm2=(zeros(d), zeros(d)),
            attention_context=zeros(self.memory_dim),
            step_index=0,
            limit=limit,
        )

    def decode_step(self, state, fused, memory):
        """One step: returns ``(mel_pair [B, 2, n_mels], new_state, alignment [B, T_t], stop_logit)``."""
        if state.limit is not None and state.step_index >= state.limit:
            raise StopContractError(f"decode step {state.step_index} exceeds limit of {state.limit} steps")
        att_h, att_c = self.attention_rnn(torch.cat([fused, state.attention_context], dim=-1), state.attention_rnn)
        context, alignment = self.attention(att_h, memory.keys, memory.rows, memory.mask)
        h1 = self.lstm1(torch.cat([att_h, context], dim=-1), state.lstm1)
        h2 = self.lstm2(h1[0], state.lstm2)
        out_in = torch.cat([h2[0], context], dim=-1)
        mel_pair = self.mel_head(out_in).view(-1, self.frames_per_step, self.n_mels)
        stop = self.stop_head(out_in).squeeze(-1) if self.stop_head is not None else None
        new_state = replace(
            state,
            attention_rnn=(att_h, att_c),
            lstm1=h1,
            lstm2=h2,
            attention_context=context,
            step_index=state.step_index + 1,
        )
        return mel_pair, new_state, alignment, stop

    def step_visual_indices(self, n_steps, num_video_frames):
        """Visual frame used at each step: that of the step's first mel frame."""
        return [video_index(s * self.frames_per_step, num_video_frames) for s in range(n_steps)]

    def teacher_forward(self, target, memory, alpha, gamma_projected, video_lengths, n_steps):
        """Teacher-forced pass over ``n_steps`` steps.

        ``target`` is ``[B, >= n_steps * 2, n_mels]``; step ``s`` is fed frame
        ``2 s - 1`` of the target (zeros for ``s = 0``) and, when fusion is
        on, visual frame ``min(2 s // 4, T_v - 1)`` of its own sequence.
        """
        b = target.shape[0]
        r = self.frames_per_step
        prev = torch.cat([target.new_zeros(b, 1, self.n_mels), target[:, r - 1 : (n_steps - 1) * r : r]], dim=1)
        alpha_frames = None
        if self.uses_visual:
            steps = torch.arange(n_steps, device=target.device)
            idx = torch.minimum((steps * r // FRAME_RATIO)[None, :], (video_lengths - 1)[:, None])
            alpha_frames = torch.gather(alpha, 1, idx.unsqueeze(-1).expand(-1, -1, alpha.shape[-1]))
        fused = self.fusion(prev, alpha_frames, gamma_projected)
        state = self.init_state(b, like=target)
        mels, aligns, stops = [], [], []
        for s in range(n_steps):
            pair, state, align, stop = self.decode_step(state, fused[:, s], memory)
            mels.append(pair)
            aligns.append(align)
            if stop is not None:
                stops.append(stop)
        return DecoderOutput(
            mel=torch.cat(mels, dim=1),
            alignments=torch.stack(aligns, dim=1),
            stop_logits=torch.stack(stops, dim=1) if stops else None,
        )

    def infer(self, memory, alpha, gamma_projected, num_video_frames=None, max_steps=500, stop_threshold=0.5):
        """Free-running decoding of one utterance (batch of one).

        With fusion on, exactly ``2 * T_v`` steps run and the output has
        ``4 * T_v`` frames. Without fusion the stop head decides, capped at
        ``max_steps``.
        """
        length_locked = self.uses_visual
        if length_locked:
            if num_video_frames is None or num_video_frames < 1:
                raise ValidationError("length-locked decoding needs num_video_frames >= 1")
            n_steps = FRAME_RATIO * num_video_frames // self.frames_per_step
        else:
            if self.stop_head is None:
                raise ValidationError("decoder without fusion needs a stop head")
            n_steps = max_steps
        state = self.init_state(1, limit=n_steps, like=memory.rows)
        prev = memory.rows.new_zeros(1, self.n_mels)
        mels, aligns, stops, used = [], [], [], []
        for s in range(n_steps):
            alpha_frame = None
            if length_locked:
                idx = video_index(s * self.frames_per_step, num_video_frames)
                used.append(idx)
                alpha_frame = alpha[:, idx]
            fused = self.fusion(prev, alpha_frame, gamma_projected)
            pair, state, align, stop = self.decode_step(state, fused, memory)
            if not torch.isfinite(pair).all():
                raise NumericError("non-finite mel frame during synthesis", step=s)
            mels.append(pair)
            aligns.append(align)
            prev = pair[:, -1]
            if stop is not None:
                stops.append(stop)
                if not length_locked and torch.sigmoid(stop).item() > stop_threshold:
                    break
        return DecoderOutput(
            mel=torch.cat(mels, dim=1),
            alignments=torch.stack(aligns, dim=1),
            stop_logits=torch.stack(stops, dim=1) if stops else None,
            visual_indices=used if length_locked else None,
        )
