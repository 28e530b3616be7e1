"""Character vocabulary and tokenizer."""

import string
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError, ValidationError

PAD = "<pad>"
EOS = "<eos>"

SYMBOLS = tuple(string.ascii_lowercase) + tuple(string.digits) + (" ", "'", PAD, EOS)
SYMBOL_TO_ID = {s: i for i, s in enumerate(SYMBOLS)}
VOCAB_SIZE = len(SYMBOLS)
PAD_ID = SYMBOL_TO_ID[PAD]
EOS_ID = SYMBOL_TO_ID[EOS]


@dataclass(frozen=True)
class CharacterSequence:
    token_ids: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.token_ids, dtype=np.int64)
        if ids.ndim != 1 or len(ids) == 0:
            raise ValidationError("token sequence must be a non-empty 1-D array")
        if ids.min() < 0 or ids.max() >= VOCAB_SIZE:
            raise ValidationError(f"token id outside vocabulary of size {VOCAB_SIZE}")
        if ids[-1] != EOS_ID:
            raise ValidationError("token sequence must end with eos")
        object.__setattr__(self, "token_ids", ids)

    def __len__(self):
        return len(self.token_ids)

    @property
    def vocabulary(self):
        return SYMBOLS


def normalize_text(text):
    """Lowercase and drop characters outside the vocabulary."""
    return "".join(ch for ch in text.lower() if ch in SYMBOL_TO_ID and len(ch) == 1)


def char_tokenize(text):
    cleaned = normalize_text(text)
    if not cleaned:
        raise EmptyInputError(f"no supported characters in {text!r}")
    ids = [SYMBOL_TO_ID[ch] for ch in cleaned]
    ids.append(EOS_ID)
    return CharacterSequence(np.array(ids, dtype=np.int64))


def detokenize(seq):
    return "".join(SYMBOLS[i] for i in np.asarray(getattr(seq, "token_ids", seq)) if i not in (PAD_ID, EOS_ID))
