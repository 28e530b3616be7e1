"""Teacher-forced training, checkpointing and finite-difference gradient checks."""

import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import torch

from .data import load_pair, read_manifest
from .decoder import AcousticDecoder, VisualFusion
from .errors import ConfigError, NumericError, ValidationError
from .model import VARIANTS, ModelConfig, VisualTTSModel, collate, save_checkpoint
from .text import EOS_ID, char_tokenize
from .tva import TextualVisualAttention

logger = logging.getLogger(__name__)

GRAD_CHECK_COMPONENTS = ("tva", "fusion", "decoder_step", "end_to_end_tiny")


@dataclass
class TrainConfig:
    model_variant: str = "visualtts"
    learning_rate: float = 1e-3
    batch_size: int = 16
    max_steps: int = 2000
    seed: int = 0
    toy_scale: bool = False
    grad_clip: float = 1.0
    checkpoint_every: int = 500
    frozen_visual: bool = True
    max_decoder_steps: int = 250

    def __post_init__(self):
        if self.model_variant not in VARIANTS:
            raise ConfigError(f"unknown model_variant {self.model_variant!r}; expected one of {VARIANTS}")
        if self.model_variant == "tacotron" and not self.frozen_visual:
            raise ConfigError("variant 'tacotron' has no visual encoder to unfreeze")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.max_steps < 0:
            raise ConfigError("learning_rate > 0, batch_size >= 1 and max_steps >= 0 are required")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def model_config(self, n_speakers):
        cfg = ModelConfig(
            variant=self.model_variant,
            n_speakers=n_speakers,
            frozen_visual=self.frozen_visual,
            max_decoder_steps=self.max_decoder_steps,
        )
        return cfg.shrink() if self.toy_scale else cfg


def build_model(config, n_speakers):
    torch.manual_seed(config.seed)
    return VisualTTSModel(config.model_config(n_speakers))


def make_item(text, speaker_id, lips=None, mel=None, utt_id=None):
    return {
        "tokens": char_tokenize(text).token_ids,
        "speaker_id": int(speaker_id),
        "lips": lips,
        "mel": mel,
        "utt_id": utt_id,
        "num_video_frames": None if lips is None else len(lips),
    }


def load_items(manifest, require_mel=True):
    manifest = Path(manifest)
    items = []
    for rec in read_manifest(manifest):
        lips, mel = load_pair(rec, manifest.parent)
        if require_mel and mel is None:
            raise ValidationError(f"{rec.utt_id}: training needs a reference mel")
        items.append(make_item(rec.text, rec.speaker_id, lips, mel, rec.utt_id))
    return items


def attach_visual_embeddings(model, items):
    """Cache the frozen visual embedding of every item under ``alpha``."""
    if not model.uses_visual or not model.lip_encoder.frozen:
        return items
    for it in items:
        if it.get("alpha") is None:
            it["alpha"] = model.encode_lips(it["lips"])[0].numpy()
    return items


def _batch(model, items):
    batch = collate(
        [{k: v for k, v in it.items() if k != "lips" or it.get("alpha") is None or not model.uses_visual} for it in items]
    )
    if not model.uses_visual:
        batch.alpha = batch.lips = None
    return batch


def teacher_forced_forward(model, items):
    """Teacher-forced predictions; returns ``(predictions, targets)`` lists, trimmed per item."""
    attach_visual_embeddings(model, items)
    batch = _batch(model, items)
    out, _ = model(batch)
    preds, targets = [], []
    for i, it in enumerate(items):
        n = len(it["mel"])
        preds.append(out.mel[i, :n])
        targets.append(batch.mel[i, :n])
    return preds, targets


@torch.no_grad()
def teacher_forced_l1(model, items, batch_size=16):
    """Frame-weighted mean L1 of teacher-forced predictions in eval mode."""
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    for start in range(0, len(items), batch_size):
        preds, targets = teacher_forced_forward(model, items[start : start + batch_size])
        for p, t in zip(preds, targets):
            total += float((p - t).abs().sum())
            count += t.numel()
    model.train(was_training)
    return total / count


def fit_model(model, items, config, log_path=None, checkpoint_dir=None):
    """Run ``config.max_steps`` Adam steps; returns a list of ``(step, loss, l1)``.

    Batches are drawn from a seeded permutation of ``items`` (reshuffled every
    epoch). Visual embeddings are cached once when the visual encoder is
    frozen.
    """
    attach_visual_embeddings(model, items)
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    params = model.trainable_parameters()
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)
    model.train()
    history = []
    order, cursor = rng.permutation(len(items)), 0
    log_fh = open(log_path, "a", encoding="utf-8") if log_path is not None else None
    try:
        for step in range(1, config.max_steps + 1):
            chosen = []
            while len(chosen) < min(config.batch_size, len(items)):
                if cursor == len(order):
                    order, cursor = rng.permutation(len(items)), 0
                chosen.append(items[order[cursor]])
                cursor += 1
            batch = _batch(model, chosen)
            out, _ = model(batch)
            loss, l1 = model.loss(batch, out)
            if not torch.isfinite(loss):
                raise NumericError("training loss is not finite", step=step)
            optimizer.zero_grad()
            loss.backward()
            if config.grad_clip:
                torch.nn.utils.clip_grad_norm_(params, config.grad_clip)
            optimizer.step()
            history.append((step, loss.item(), l1.item()))
            if log_fh is not None:
                log_fh.write(f"{step}\t{loss.item()!r}\n")
                log_fh.flush()
            if step % 50 == 0:
                logger.info("step %d loss %.5f l1 %.5f", step, loss.item(), l1.item())
            if checkpoint_dir is not None and config.checkpoint_every and step % config.checkpoint_every == 0:
                save_checkpoint(model, Path(checkpoint_dir) / f"step_{step:06d}", {"train": asdict(config), "step": step})
    finally:
        if log_fh is not None:
            log_fh.close()
    model.eval()
    return history


def train(config, manifest, out_dir):
    """Train on a manifest; writes ``loss.log``, periodic checkpoints and ``checkpoint/``.

    Returns the path of the final checkpoint directory.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = read_manifest(manifest)
    if not records:
        raise ValidationError(f"{manifest}: empty manifest")
    items = load_items(manifest)
    n_speakers = max(it["speaker_id"] for it in items) + 1
    model = build_model(config, n_speakers)
    fit_model(model, items, config, log_path=out_dir / "loss.log", checkpoint_dir=out_dir / "checkpoints")
    return save_checkpoint(model, out_dir / "checkpoint", {"train": asdict(config), "step": config.max_steps})


# ---------------------------------------------------------------------------
# gradient checks
# ---------------------------------------------------------------------------


def _sample_indices(numel, k, gen):
    if numel <= k:
        return torch.arange(numel)
    return torch.randperm(numel, generator=gen)[:k]


def compare_gradients(loss_fn, tensors, epsilon=1e-4, samples_per_tensor=40, seed=0):
    """Max relative error between autograd and central differences.

    ``tensors`` are leaf tensors with ``requires_grad``; up to
    ``samples_per_tensor`` entries of each are perturbed. The error is
    ``max |g_a - g_n| / max(max |g_a|, max |g_n|)`` over all checked entries.
    """
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    gen = torch.Generator().manual_seed(seed)
    analytic, numeric = [], []
    with torch.no_grad():
        for t in tensors:
            flat = t.view(-1)
            grad = t.grad.reshape(-1) if t.grad is not None else torch.zeros_like(flat)
            for i in _sample_indices(flat.numel(), samples_per_tensor, gen).tolist():
                orig = flat[i].item()
                flat[i] = orig + epsilon
                up = loss_fn().item()
                flat[i] = orig - epsilon
                down = loss_fn().item()
                flat[i] = orig
                analytic.append(grad[i].item())
                numeric.append((up - down) / (2 * epsilon))
    analytic, numeric = np.array(analytic), np.array(numeric)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max())
    if scale == 0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def _leaves(module):
    return [p for p in module.parameters() if p.requires_grad]


def _projection_loss(gen, *outputs):
    """Fixed random linear functional of the outputs (smooth scalar)."""
    weights = [torch.randn(o.shape, generator=gen, dtype=o.dtype) for o in outputs]

    def fn(*outs):
        return sum((w * o).sum() for w, o in zip(weights, outs))

    return fn


def grad_check(component, epsilon=1e-4, seed=0, samples_per_tensor=40):
    """Check analytic against central-difference gradients in double precision.

    Returns the maximum relative error (see :func:`compare_gradients`).
    """
    if component not in GRAD_CHECK_COMPONENTS:
        raise ValidationError(f"unknown component {component!r}; expected one of {GRAD_CHECK_COMPONENTS}")
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed + 1)
    dt = torch.float64

    if component == "tva":
        module = TextualVisualAttention().to(dt)
        beta = torch.randn(1, 3, 512, generator=gen, dtype=dt, requires_grad=True)
        alpha = torch.randn(1, 5, 512, generator=gen, dtype=dt, requires_grad=True)
        ref = module(beta, alpha)
        proj = _projection_loss(gen, ref.context, ref.attention_weights)

        def loss_fn():
            out = module(beta, alpha)
            return proj(out.context, out.attention_weights)

        tensors = [beta, alpha, *_leaves(module)]

    elif component == "fusion":
        module = VisualFusion().to(dt).eval()
        prev = torch.randn(1, 80, generator=gen, dtype=dt, requires_grad=True)
        alpha = torch.randn(1, 512, generator=gen, dtype=dt, requires_grad=True)
        gamma = torch.randn(1, 64, generator=gen, dtype=dt, requires_grad=True)
        proj = _projection_loss(gen, module(prev, alpha, gamma))

        def loss_fn():
            return proj(module(prev, alpha, gamma))

        tensors = [prev, alpha, gamma, *_leaves(module)]

    elif component == "decoder_step":
        module = AcousticDecoder().to(dt).eval()
        rows = torch.randn(1, 3, module.memory_dim, generator=gen, dtype=dt, requires_grad=True)
        fused = torch.randn(1, 256, generator=gen, dtype=dt, requires_grad=True)
        state = module.init_state(1, like=rows)
        state.attention_context = 0.5 * torch.randn(1, module.memory_dim, generator=gen, dtype=dt)
        state.lstm1 = tuple(0.5 * torch.randn(1, 256, generator=gen, dtype=dt) for _ in range(2))
        state.lstm2 = tuple(0.5 * torch.randn(1, 256, generator=gen, dtype=dt) for _ in range(2))
        state.attention_rnn = tuple(0.5 * torch.randn(1, 256, generator=gen, dtype=dt) for _ in range(2))

        def run():
            pair, new, align, _ = module.decode_step(state, fused, module.prepare_memory(rows))
            return pair, align, new.lstm2[0], new.attention_context

        proj = _projection_loss(gen, *run())

        def loss_fn():
            return proj(*run())

        tensors = [rows, fused, *_leaves(module)]

    else:  # end_to_end_tiny
        cfg = ModelConfig(n_speakers=2).shrink(8)
        model = VisualTTSModel(cfg).to(dt).eval()
        tokens = torch.tensor([[3, 7, EOS_ID]])
        alpha = torch.randn(1, 2, cfg.visual_dim, generator=gen, dtype=dt, requires_grad=True)
        mel = torch.randn(1, 8, cfg.n_mels, generator=gen, dtype=dt)
        speakers = torch.tensor([1])

        def run():
            rows, tva_w, gamma = model.encode(tokens, torch.tensor([3]), alpha, torch.tensor([2]), speakers)
            memory = model.decoder.prepare_memory(rows, torch.tensor([3]))
            out = model.decoder.teacher_forward(mel, memory, alpha, gamma, torch.tensor([2]), 4)
            return out.mel, out.alignments

        proj = _projection_loss(gen, *run())

        def loss_fn():
            return proj(*run())

        tensors = [alpha, *_leaves(model)]

    err = compare_gradients(loss_fn, tensors, epsilon, samples_per_tensor, seed)
    if not math.isfinite(err):
        raise NumericError(f"gradient check for {component} produced a non-finite error")
    return err
