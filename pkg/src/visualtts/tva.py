"""Textual-visual attention: text queries attend over lip-frame keys/values."""

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import EmptyInputError, ShapeError, ValidationError


@dataclass
class TVAContext:
    context: torch.Tensor  # [B, T_t, out_dim]
    attention_weights: torch.Tensor  # [B, heads, T_t, T_v]


class TextualVisualAttention(nn.Module):
    """Multi-head scaled dot-product attention from text to video.

    Each head projects the textual embedding to queries and the visual
    embedding to keys and values (``head_dim`` wide, no bias), attends with
    scores scaled by ``1 / sqrt(head_dim)``, and the concatenated heads pass
    through a linear map to ``out_dim``.
    """

    def __init__(self, text_dim=512, visual_dim=512, n_heads=2, head_dim=256, out_dim=64):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = head_dim
        self.text_dim = text_dim
        self.visual_dim = visual_dim
        self.query = nn.Linear(text_dim, n_heads * head_dim, bias=False)
        self.key = nn.Linear(visual_dim, n_heads * head_dim, bias=False)
        self.value = nn.Linear(visual_dim, n_heads * head_dim, bias=False)
        self.out = nn.Linear(n_heads * head_dim, out_dim)

    def _split(self, x):
        b, t, _ = x.shape
        return x.view(b, t, self.n_heads, self.head_dim).transpose(1, 2)

    def scores(self, beta, alpha):
        """Scaled scores ``[B, heads, T_t, T_v]``."""
        q = self._split(self.query(beta))
        k = self._split(self.key(alpha))
        return q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)

    def forward(self, beta, alpha, visual_lengths=None):
        """Attend from ``beta [B, T_t, text_dim]`` to ``alpha [B, T_v, visual_dim]``.

        ``visual_lengths`` only matters for padded batches: frames past a
        sequence's length receive zero weight.
        """
        if beta.dim() == 2:
            beta = beta.unsqueeze(0)
        if alpha.dim() == 2:
            alpha = alpha.unsqueeze(0)
        if beta.shape[1] == 0 or alpha.shape[1] == 0:
            raise EmptyInputError("textual-visual attention needs T_t >= 1 and T_v >= 1")
        if beta.shape[-1] != self.text_dim or alpha.shape[-1] != self.visual_dim:
            raise ShapeError(
                f"expected widths {self.text_dim}/{self.visual_dim}, got {beta.shape[-1]}/{alpha.shape[-1]}"
            )
        if not (torch.isfinite(beta).all() and torch.isfinite(alpha).all()):
            raise ValidationError("non-finite input to textual-visual attention")
        scores = self.scores(beta, alpha)
        if visual_lengths is not None:
            pad = torch.arange(alpha.shape[1], device=alpha.device)[None, :] >= visual_lengths[:, None]
            scores = scores.masked_fill(pad[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        v = self._split(self.value(alpha))
        heads = (weights @ v).transpose(1, 2).reshape(beta.shape[0], beta.shape[1], -1)
        return TVAContext(context=self.out(heads), attention_weights=weights)
