"""Word-level tokenizer for class-label text.

Labels form a tiny closed vocabulary, so each canonical word gets one id.
Ids 0, 1, 2 are reserved for PAD, BOS and EOS.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

PAD, BOS, EOS = 0, 1, 2
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>")


def canonicalize(text: str) -> str:
    """Lowercase, trim and collapse internal whitespace."""
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class Vocabulary:
    id_to_token: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "token_to_id", {t: i for i, t in enumerate(self.id_to_token)})

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, word: str) -> bool:
        return word in self.token_to_id

    def to_dict(self) -> dict:
        return {"tokens": list(self.id_to_token)}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        tokens = tuple(d["tokens"])
        if tokens[:3] != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the special tokens")
        return cls(tokens)


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]

    @property
    def content_length(self) -> int:
        """Number of tokens before the first PAD."""
        try:
            return self.ids.index(PAD)
        except ValueError:
            return len(self.ids)

    def __len__(self) -> int:
        return len(self.ids)


def build_vocabulary(labels: Iterable[str]) -> Vocabulary:
    """Assign ids to words in first-appearance order after the specials."""
    words: list[str] = []
    seen: set[str] = set()
    any_label = False
    for label in labels:
        canon = canonicalize(label)
        if not canon:
            continue
        any_label = True
        for w in canon.split(" "):
            if w not in seen:
                seen.add(w)
                words.append(w)
    if not any_label:
        raise ValueError("empty label set")
    return Vocabulary(SPECIAL_TOKENS + tuple(words))


def max_sequence_length(labels: Iterable[str]) -> int:
    longest = max((len(canonicalize(l).split()) for l in labels), default=0)
    return longest + 2


def encode(label: str, vocab: Vocabulary, T: int) -> TokenSequence:
    words = canonicalize(label).split()
    ids = [BOS]
    for w in words:
        if w not in vocab.token_to_id:
            raise KeyError(f"unknown word {w!r}")
        ids.append(vocab.token_to_id[w])
    ids.append(EOS)
    if len(ids) > T:
        raise ValueError(f"label {label!r} needs {len(ids)} tokens, more than T={T}")
    ids.extend([PAD] * (T - len(ids)))
    return TokenSequence(tuple(ids))


def encode_batch(labels: Sequence[str], vocab: Vocabulary, T: int) -> np.ndarray:
    return np.array([encode(l, vocab, T).ids for l in labels], dtype=np.int64)


def decode(ids, vocab: Vocabulary) -> str:
    """Words between a leading BOS and the first EOS; PAD is skipped.

    Total over arbitrary id lists: unknown ids render as ``<unk:id>`` and a
    missing EOS consumes to the end.
    """
    if isinstance(ids, TokenSequence):
        ids = ids.ids
    ids = [int(i) for i in ids]
    if ids and ids[0] == BOS:
        ids = ids[1:]
    words = []
    for i in ids:
        if i == EOS:
            break
        if i in (PAD, BOS):
            continue
        if 0 <= i < len(vocab):
            words.append(vocab.id_to_token[i])
        else:
            words.append(f"<unk:{i}>")
    return " ".join(words)
