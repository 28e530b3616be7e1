"""scikit-learn style wrapper around model construction, training and synthesis.

``X`` is a sequence of utterances, each a mapping with ``text``,
``speaker_id`` and ``lips`` (``[T_v, 88, 88]`` array; optional for the
``tacotron`` variant). ``y`` is the matching sequence of ``[4 T_v, 80]``
log-mel arrays.
"""

from dataclasses import asdict
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import load_pair, read_manifest
from .errors import ValidationError
from .metrics import frame_disturbance
from .model import load_checkpoint, save_checkpoint
from .training import TrainConfig, attach_visual_embeddings, build_model, fit_model, make_item, teacher_forced_l1
from .validation import check_lips, check_mel


def check_utterances(X, y=None, require_lips=True):
    """Validate ``X`` (and ``y``) and return training/inference items."""
    if len(X) == 0:
        raise ValidationError("X is empty")
    if y is not None and len(y) != len(X):
        raise ValidationError(f"X has {len(X)} utterances but y has {len(y)}")
    items = []
    for i, utt in enumerate(X):
        missing = {"text", "speaker_id"} - set(utt)
        if missing:
            raise ValidationError(f"X[{i}] lacks {sorted(missing)}")
        lips = utt.get("lips")
        if lips is None and require_lips:
            raise ValidationError(f"X[{i}] has no lips")
        if lips is not None:
            lips = check_lips(lips, name=f"X[{i}] lips")
        mel = None if y is None else check_mel(y[i], name=f"y[{i}]")
        items.append(make_item(utt["text"], utt["speaker_id"], lips, mel, utt.get("utt_id", f"utt{i}")))
    return items


def load_utterances(manifest, with_mel=True):
    """Read a manifest into ``(X, y)``; ``y`` is None when ``with_mel`` is false."""
    manifest = Path(manifest)
    X, y = [], []
    for rec in read_manifest(manifest):
        lips, mel = load_pair(rec, manifest.parent, check_ratio=with_mel)
        X.append({"utt_id": rec.utt_id, "text": rec.text, "speaker_id": rec.speaker_id, "lips": lips})
        y.append(mel)
    return X, (y if with_mel else None)


class VisualTTS(BaseEstimator):
    """Lip-synchronized multi-speaker TTS estimator.

    Parameters mirror :class:`~visualtts.training.TrainConfig`; ``n_speakers``
    defaults to one more than the largest speaker id seen in ``fit``.
    """

    def __init__(
        self,
        model_variant="visualtts",
        learning_rate=1e-3,
        batch_size=16,
        max_steps=2000,
        seed=0,
        toy_scale=False,
        grad_clip=1.0,
        frozen_visual=True,
        max_decoder_steps=250,
        n_speakers=None,
    ):
        self.model_variant = model_variant
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.seed = seed
        self.toy_scale = toy_scale
        self.grad_clip = grad_clip
        self.frozen_visual = frozen_visual
        self.max_decoder_steps = max_decoder_steps
        self.n_speakers = n_speakers

    def _train_config(self):
        return TrainConfig(
            model_variant=self.model_variant,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            max_steps=self.max_steps,
            seed=self.seed,
            toy_scale=self.toy_scale,
            grad_clip=self.grad_clip,
            frozen_visual=self.frozen_visual,
            max_decoder_steps=self.max_decoder_steps,
            checkpoint_every=0,
        )

    def _needs_lips(self):
        return self.model_variant != "tacotron"

    def fit(self, X, y, log_path=None):
        config = self._train_config()
        items = check_utterances(X, y, require_lips=self._needs_lips())
        n_speakers = self.n_speakers or max(it["speaker_id"] for it in items) + 1
        self.model_ = build_model(config, n_speakers)
        self.history_ = fit_model(self.model_, items, config, log_path=log_path)
        self.n_speakers_ = n_speakers
        return self

    def synthesize(self, X):
        """Per-utterance :class:`~visualtts.model.Synthesis` results."""
        check_is_fitted(self, "model_")
        items = check_utterances(X, require_lips=self._needs_lips())
        attach_visual_embeddings(self.model_, items)
        return [
            self.model_.synthesize(it["tokens"], it["speaker_id"], lips=it["lips"], alpha=it.get("alpha"))
            for it in items
        ]

    def predict(self, X):
        return [s.mel for s in self.synthesize(X)]

    def teacher_forced_l1(self, X, y):
        check_is_fitted(self, "model_")
        items = check_utterances(X, y, require_lips=self._needs_lips())
        return teacher_forced_l1(self.model_, items)

    def score(self, X, y):
        """Negative mean frame disturbance of free-running synthesis (higher is better)."""
        preds = self.predict(X)
        return -float(np.mean([frame_disturbance(p, check_mel(t)) for p, t in zip(preds, y)]))

    def save(self, directory):
        check_is_fitted(self, "model_")
        return save_checkpoint(self.model_, directory, {"train": asdict(self._train_config())})

    @classmethod
    def load(cls, directory):
        model, meta = load_checkpoint(directory)
        train = meta.get("train", {})
        params = {k: v for k, v in train.items() if k in cls._get_param_names()}
        est = cls(**params, n_speakers=model.config.n_speakers)
        est.model_ = model
        est.n_speakers_ = model.config.n_speakers
        est.history_ = []
        return est
