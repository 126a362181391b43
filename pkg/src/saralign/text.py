"""Tokenizer and vocabulary for the text tower.

Tokenization lowercases and splits on runs of non-alphanumeric characters,
keeping internal hyphens so class designations like "t-72" stay one token.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError

UNK_TOKEN = "<unk>"
UNK_INDEX = 0

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:-[a-z0-9]+)*")


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]          # index -> token, UNK_TOKEN at index 0
    index: dict[str, int]            # token -> index

    def __len__(self) -> int:
        return len(self.tokens)

    def lookup(self, token: str) -> int:
        return self.index.get(token, UNK_INDEX)

    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    @staticmethod
    def from_tokens(tokens) -> "Vocab":
        tokens = tuple(tokens)
        if not tokens or tokens[0] != UNK_TOKEN:
            raise ValidationError(f"vocab must reserve index 0 for {UNK_TOKEN}")
        seen = set()
        for t in tokens:
            if t in seen:
                raise ValidationError(f"duplicate vocab token {t!r}")
            seen.add(t)
        return Vocab(tokens=tokens, index={t: i for i, t in enumerate(tokens)})


def split_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def tokenize(text: str, vocab: Vocab) -> list[int]:
    """Token indices for a text; unknown words map to index 0."""
    lookup = vocab.index.get
    return [lookup(w, UNK_INDEX) for w in split_words(text)]


def build_vocab(texts) -> Vocab:
    """Vocabulary over a text corpus: sorted unique words behind <unk>."""
    words = set()
    for text in texts:
        words.update(split_words(text))
    words.discard(UNK_TOKEN)
    return Vocab.from_tokens((UNK_TOKEN, *sorted(words)))


def write_vocab(vocab: Vocab, path) -> None:
    """One token per line; the line number is the index."""
    Path(path).write_text("\n".join(vocab.tokens) + "\n", encoding="utf-8")


def read_vocab(path) -> Vocab:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return Vocab.from_tokens(lines)
