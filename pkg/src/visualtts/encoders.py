"""Visual, textual and speaker encoders."""

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ShapeError, SpeakerLookupError, ValidationError
from .text import PAD_ID, VOCAB_SIZE
from .validation import LIP_SIZE


# ---------------------------------------------------------------------------
# visual encoder
# ---------------------------------------------------------------------------


class BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, in_planes, planes, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_planes, planes, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.downsample = None
        if stride != 1 or in_planes != planes:
            self.downsample = nn.Sequential(
                nn.Conv2d(in_planes, planes, 1, stride, bias=False),
                nn.BatchNorm2d(planes),
            )

    def forward(self, x):
        identity = x if self.downsample is None else self.downsample(x)
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + identity)


class ResNet18Trunk(nn.Module):
    """Four stages of two basic blocks each, global average pool, linear head."""

    def __init__(self, in_planes=64, widths=(64, 128, 256, 512), out_dim=512):
        super().__init__()
        stages = []
        for i, width in enumerate(widths):
            stride = 1 if i == 0 else 2
            stages.append(nn.Sequential(BasicBlock(in_planes, width, stride), BasicBlock(width, width)))
            in_planes = width
        self.stages = nn.Sequential(*stages)
        self.fc = nn.Linear(in_planes, out_dim)

    def forward(self, x):
        x = self.stages(x)
        return self.fc(x.mean(dim=(2, 3)))


class LipEncoder(nn.Module):
    """Conv3D stem followed by a per-frame ResNet-18 trunk.

    Input ``[B, T_v, 88, 88]``, output ``[B, T_v, out_dim]``. The stem has
    temporal stride 1 and padding 2, so each output row depends on at most
    five neighbouring input frames.

    With ``frozen`` set (the default) the encoder never leaves eval mode and
    its parameters do not require gradients.
    """

    def __init__(self, out_dim=512, stem_channels=64, widths=(64, 128, 256, 512), frozen=True):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv3d(1, stem_channels, kernel_size=(5, 7, 7), stride=(1, 2, 2), padding=(2, 3, 3), bias=False),
            nn.BatchNorm3d(stem_channels),
            nn.ReLU(),
            nn.MaxPool3d(kernel_size=(1, 3, 3), stride=(1, 2, 2), padding=(0, 1, 1)),
        )
        self.trunk = ResNet18Trunk(stem_channels, widths, out_dim)
        self.out_dim = out_dim
        self.frozen = frozen
        self.set_frozen(frozen)

    def set_frozen(self, frozen):
        self.frozen = frozen
        for p in self.parameters():
            p.requires_grad_(not frozen)
        if frozen:
            super().train(False)

    def train(self, mode=True):
        return super().train(mode and not self.frozen)

    def stem_features(self, lips):
        """Stem activations ``[B, C, T_v, 22, 22]``."""
        return self.stem(lips.unsqueeze(1))

    def forward(self, lips):
        if lips.dim() != 4 or lips.shape[-2:] != (LIP_SIZE, LIP_SIZE):
            raise ShapeError(f"expected [B, T_v, {LIP_SIZE}, {LIP_SIZE}], got {tuple(lips.shape)}")
        if not torch.isfinite(lips).all():
            raise ValidationError("lip frames contain non-finite values")
        b, t = lips.shape[:2]
        feats = self.stem_features(lips)
        feats = feats.transpose(1, 2).reshape(b * t, *feats.shape[1:2], *feats.shape[3:])
        return self.trunk(feats).reshape(b, t, self.out_dim)


# ---------------------------------------------------------------------------
# textual encoder
# ---------------------------------------------------------------------------


class BatchNormConv1d(nn.Module):
    def __init__(self, in_dim, out_dim, kernel_size, activation=None):
        super().__init__()
        self.conv = nn.Conv1d(in_dim, out_dim, kernel_size, padding=kernel_size // 2, bias=False)
        self.bn = nn.BatchNorm1d(out_dim)
        self.activation = activation
        self.kernel_size = kernel_size

    def forward(self, x):
        x = self.conv(x)
        if self.kernel_size % 2 == 0:
            x = x[:, :, :-1]
        x = self.bn(x)
        return self.activation(x) if self.activation is not None else x


class Highway(nn.Module):
    def __init__(self, dim):
        super().__init__()
        self.h = nn.Linear(dim, dim)
        self.t = nn.Linear(dim, dim)
        nn.init.constant_(self.t.bias, -1.0)

    def forward(self, x):
        gate = torch.sigmoid(self.t(x))
        return gate * F.relu(self.h(x)) + (1.0 - gate) * x


class CBHG(nn.Module):
    """Convolution bank, highway stack and bidirectional LSTM.

    Works on padded batches: activations past each sequence's length are
    zeroed after every convolution so that padding never leaks into valid
    positions, and the LSTM runs on packed sequences. A batch therefore gives
    the same per-sequence output as encoding each sequence alone (in eval
    mode).
    """

    def __init__(self, in_dim=128, bank_k=16, channels=128, proj_dims=(128, 128), n_highway=4, rnn_dim=256):
        super().__init__()
        self.bank = nn.ModuleList(BatchNormConv1d(in_dim, channels, k, nn.ReLU()) for k in range(1, bank_k + 1))
        self.projections = nn.ModuleList(
            [
                BatchNormConv1d(bank_k * channels, proj_dims[0], 3, nn.ReLU()),
                BatchNormConv1d(proj_dims[0], proj_dims[1], 3, None),
            ]
        )
        self.pre_highway = nn.Linear(proj_dims[1], in_dim, bias=False) if proj_dims[1] != in_dim else None
        self.highways = nn.ModuleList(Highway(in_dim) for _ in range(n_highway))
        self.rnn = nn.LSTM(in_dim, rnn_dim, batch_first=True, bidirectional=True)

    def forward(self, x, lengths):
        # x: [B, T, in_dim]
        t = x.shape[1]
        mask = (torch.arange(t, device=x.device)[None, :] < lengths[:, None]).to(x.dtype)[:, None, :]
        residual = x
        h = x.transpose(1, 2) * mask
        h = torch.cat([conv(h) * mask for conv in self.bank], dim=1)
        h = F.max_pool1d(F.pad(h, (0, 1)), kernel_size=2, stride=1) * mask
        for conv in self.projections:
            h = conv(h) * mask
        h = h.transpose(1, 2)
        if self.pre_highway is not None:
            h = self.pre_highway(h)
        h = h + residual
        for hw in self.highways:
            h = hw(h)
        packed = nn.utils.rnn.pack_padded_sequence(h, lengths.cpu(), batch_first=True, enforce_sorted=False)
        out, _ = self.rnn(packed)
        out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True, total_length=t)
        return out


class TextEncoder(nn.Module):
    """Character embedding followed by a CBHG-LSTM; output width ``2 * rnn_dim``."""

    def __init__(self, n_vocab=VOCAB_SIZE, embed_dim=128, bank_k=16, channels=128, n_highway=4, out_dim=512):
        super().__init__()
        if out_dim % 2:
            raise ValidationError("text encoder output width must be even")
        self.embedding = nn.Embedding(n_vocab, embed_dim, padding_idx=PAD_ID)
        self.cbhg = CBHG(embed_dim, bank_k, channels, (channels, embed_dim), n_highway, out_dim // 2)
        self.n_vocab = n_vocab
        self.out_dim = out_dim

    def forward(self, tokens, lengths=None):
        if tokens.dim() == 1:
            tokens = tokens.unsqueeze(0)
        if (tokens < 0).any() or (tokens >= self.n_vocab).any():
            raise ValidationError(f"token id outside vocabulary of size {self.n_vocab}")
        if lengths is None:
            lengths = torch.full((tokens.shape[0],), tokens.shape[1], dtype=torch.long)
        return self.cbhg(self.embedding(tokens), lengths)


# ---------------------------------------------------------------------------
# speaker encoder
# ---------------------------------------------------------------------------


class SpeakerEncoder(nn.Module):
    """Lookup table of d-vector-sized speaker embeddings plus a linear projection.

    Rows are learned unless external vectors are imported with
    :meth:`import_vectors`, after which the table is frozen.
    """

    def __init__(self, n_speakers, dim=256, proj_dim=64):
        super().__init__()
        self.table = nn.Embedding(n_speakers, dim)
        nn.init.normal_(self.table.weight, 0.0, 0.3)
        self.proj = nn.Linear(dim, proj_dim)
        self.n_speakers = n_speakers

    def _check_ids(self, ids):
        ids = torch.as_tensor(ids, dtype=torch.long)
        if (ids < 0).any() or (ids >= self.n_speakers).any():
            raise SpeakerLookupError(f"speaker id {ids.tolist()} outside table of {self.n_speakers} speakers")
        return ids

    def import_vectors(self, vectors, ids=None):
        vectors = torch.as_tensor(np.asarray(vectors), dtype=self.table.weight.dtype)
        if vectors.dim() == 1:
            vectors = vectors.unsqueeze(0)
        if vectors.shape[1] != self.table.embedding_dim:
            raise ShapeError(f"expected vectors of width {self.table.embedding_dim}, got {vectors.shape[1]}")
        ids = self._check_ids(range(len(vectors)) if ids is None else ids).reshape(-1)
        with torch.no_grad():
            self.table.weight[ids] = vectors
        self.table.weight.requires_grad_(False)

    def forward(self, ids):
        """Returns ``(vector, projected)``."""
        ids = self._check_ids(ids).to(self.table.weight.device)
        vec = self.table(ids)
        return vec, self.proj(vec)
