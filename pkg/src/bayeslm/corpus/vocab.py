"""Vocabulary construction and sentence batching."""

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
RESERVED = (BOS, EOS, UNK)


class CorpusError(ValueError):
    """Bad or empty corpus input."""


def read_corpus(path):
    """One sentence per line, whitespace tokens; blank lines are skipped."""
    text = Path(path).read_text(encoding="utf-8")
    return [line.split() for line in text.splitlines() if line.strip()]


def write_corpus(path, sentences):
    Path(path).write_text("".join(" ".join(s) + "\n" for s in sentences), encoding="utf-8")


class Vocabulary:
    """Bijection between tokens and ids ``0..N-1``.

    ``<s>``, ``</s>`` and ``<unk>`` always hold ids 0, 1 and 2.
    """

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:3]) != RESERVED:
            raise ValueError(f"vocabulary must start with {RESERVED}, got {tokens[:3]}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    bos_id = 0
    eos_id = 1
    unk_id = 2

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __repr__(self):
        return f"Vocabulary(size={len(self)})"

    def id(self, token):
        return self.index.get(token, self.unk_id)

    def token(self, idx):
        return self.tokens[idx]

    def normalize(self, words):
        """Replace out-of-vocabulary words by ``<unk>``."""
        return [w if w in self.index else UNK for w in words]

    def encode(self, words):
        """``<s> w1 .. wn </s>`` as an id list."""
        return [self.bos_id] + [self.id(w) for w in words] + [self.eos_id]

    def decode(self, ids):
        toks = [self.tokens[i] for i in ids]
        if toks and toks[0] == BOS:
            toks = toks[1:]
        if toks and toks[-1] == EOS:
            toks = toks[:-1]
        return toks

    def save(self, path):
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls(Path(path).read_text(encoding="utf-8").split())


def build_vocab(sentences, min_count=1):
    """Ids ordered by descending count, ties broken lexicographically.

    Tokens seen fewer than ``min_count`` times are left out (they map to
    ``<unk>`` on lookup).
    """
    counts = Counter(w for s in sentences for w in s if w not in RESERVED)
    if not counts:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    kept = sorted((w for w, c in counts.items() if c >= min_count),
                  key=lambda w: (-counts[w], w))
    return Vocabulary(list(RESERVED) + kept)


@dataclass
class Batch:
    """Padded id matrix; row ``b`` holds ``<s> w1..wn </s>`` then padding.

    ``lengths[b]`` is the number of predicted tokens (n + 1, counting ``</s>``).
    """

    ids: np.ndarray
    lengths: np.ndarray

    @property
    def inputs(self):
        return self.ids[:, :-1]

    @property
    def targets(self):
        return self.ids[:, 1:]

    @property
    def mask(self):
        steps = self.ids.shape[1] - 1
        return (np.arange(steps)[None, :] < self.lengths[:, None]).astype(np.float64)

    @property
    def size(self):
        return self.ids.shape[0]

    @property
    def num_tokens(self):
        return int(self.lengths.sum())


def make_batch(encoded, pad_id=1):
    width = max(len(e) for e in encoded)
    ids = np.full((len(encoded), width), pad_id, dtype=np.int64)
    for row, e in zip(ids, encoded):
        row[:len(e)] = e
    lengths = np.array([len(e) - 1 for e in encoded], dtype=np.int64)
    return Batch(ids, lengths)


def encode_batches(sentences, vocab, batch_size=32):
    """Consecutive groups of ``batch_size`` sentences, in corpus order."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    encoded = [vocab.encode(s) for s in sentences]
    return [make_batch(encoded[i:i + batch_size], vocab.eos_id)
            for i in range(0, len(encoded), batch_size)]
