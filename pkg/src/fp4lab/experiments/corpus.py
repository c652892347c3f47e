"""Byte-level corpus handling and a synthetic text generator.

Any UTF-8 text file works as a corpus; it is consumed as raw bytes with a
fixed 256-symbol vocabulary, so bits-per-byte is loss / ln 2 with no
tokenizer asset. The validation split is a deterministic 5% tail and
training windows are never drawn from it.

Run `python -m fp4lab.experiments.corpus --out corpus.txt --bytes 1000000`
to synthesize a word-soup corpus: made-up words with Zipfian frequencies,
sentence punctuation, and paragraph breaks. The text has enough byte-level
structure (within-word transitions, spaces, periods) for a small model to
learn from, with a unigram byte entropy around 4 bits.
"""

from __future__ import annotations

import argparse
import hashlib
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Corpus:
    """Byte tokens with a deterministic train/validation boundary."""

    tokens: np.ndarray  # int64 byte values
    boundary: int  # first validation index
    sha256: str
    path: str
    vocab_size: int = 256

    @property
    def train_tokens(self) -> np.ndarray:
        return self.tokens[:self.boundary]

    @property
    def val_tokens(self) -> np.ndarray:
        return self.tokens[self.boundary:]

    def train_batches(self, batch_size: int, seq_len: int, seed: int):
        """Endless sampler of (inputs, targets) windows from the train split.

        Window starts satisfy start + seq_len + 1 <= boundary, so no window
        ever touches the validation tail.
        """
        limit = self.boundary - seq_len - 1
        if limit < 1:
            raise ValueError(
                f"train split ({self.boundary} bytes) too short for seq_len {seq_len}")
        rng = np.random.default_rng(seed)
        offsets = np.arange(seq_len)
        while True:
            starts = rng.integers(0, limit, size=batch_size)
            idx = starts[:, None] + offsets[None, :]
            yield self.tokens[idx], self.tokens[idx + 1]

    def val_windows(self, rows: int, seq_len: int):
        """Deterministic evenly spaced validation windows (may overlap)."""
        span = self.tokens.shape[0] - self.boundary - seq_len - 1
        if span < 0:
            raise ValueError(
                f"validation split too short for seq_len {seq_len}")
        starts = self.boundary + np.unique(
            np.linspace(0, span, num=rows).astype(np.int64))
        offsets = np.arange(seq_len)
        idx = starts[:, None] + offsets[None, :]
        return self.tokens[idx], self.tokens[idx + 1]

    def context_batches(self, batch_size: int, context: int, seed: int):
        """Endless sampler of (window (B, context), next byte (B,)) pairs."""
        limit = self.boundary - context - 1
        if limit < 1:
            raise ValueError(
                f"train split ({self.boundary} bytes) too short for context {context}")
        rng = np.random.default_rng(seed)
        offsets = np.arange(context)
        while True:
            starts = rng.integers(0, limit, size=batch_size)
            idx = starts[:, None] + offsets[None, :]
            yield self.tokens[idx], self.tokens[starts + context]

    def val_context_windows(self, rows: int, context: int):
        """Deterministic (window, next byte) pairs from the validation tail."""
        span = self.tokens.shape[0] - self.boundary - context - 1
        if span < 0:
            raise ValueError(f"validation split too short for context {context}")
        starts = self.boundary + np.unique(
            np.linspace(0, span, num=rows).astype(np.int64))
        offsets = np.arange(context)
        idx = starts[:, None] + offsets[None, :]
        return self.tokens[idx], self.tokens[starts + context]


def load_corpus(path: str, val_fraction: float = 0.05) -> Corpus:
    """Read a text file as byte tokens with a fixed tail validation split."""
    if not (0.0 < val_fraction < 1.0):
        raise ValueError("val_fraction must be in (0, 1)")
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 64:
        raise ValueError(f"corpus {path!r} has only {len(raw)} bytes")
    tokens = np.frombuffer(raw, dtype=np.uint8).astype(np.int64)
    boundary = int(round(len(raw) * (1.0 - val_fraction)))
    boundary = min(max(boundary, 1), len(raw) - 1)
    digest = hashlib.sha256(raw).hexdigest()
    return Corpus(tokens=tokens, boundary=boundary, sha256=digest, path=str(path))


def generate_text(n_bytes: int, seed: int = 0) -> bytes:
    """Deterministic word-soup text of at least n_bytes bytes."""
    if n_bytes < 256:
        raise ValueError("generate at least 256 bytes")
    rng = np.random.default_rng(seed)
    letters = np.array(list("abcdefghijklmnopqrstuvwxyz"))
    letter_p = 1.0 / (np.arange(26) + 2.0) ** 0.8
    letter_p /= letter_p.sum()

    n_words = 1500
    lengths = rng.integers(2, 10, size=n_words)
    words = ["".join(rng.choice(letters, size=n, p=letter_p)) for n in lengths]
    word_p = 1.0 / (np.arange(n_words) + 1.0) ** 1.1
    word_p /= word_p.sum()

    mean_word = float(np.mean([len(w) + 1 for w in words]))
    draws = int(n_bytes / mean_word * 1.15) + 64
    picks = rng.choice(n_words, size=draws, p=word_p)
    sentence_len = 0
    sentences_in_par = 0
    target_sentence = int(rng.integers(4, 12))
    target_par = int(rng.integers(4, 8))
    parts = []
    size = 0
    for w in picks:
        word = words[int(w)]
        parts.append(word)
        size += len(word) + 1
        sentence_len += 1
        if sentence_len >= target_sentence:
            parts.append(".\n" if sentences_in_par + 1 >= target_par else ".")
            if sentences_in_par + 1 >= target_par:
                sentences_in_par = 0
                target_par = int(rng.integers(4, 8))
            else:
                sentences_in_par += 1
            sentence_len = 0
            target_sentence = int(rng.integers(4, 12))
        if size >= n_bytes + 16:
            break
    text = " ".join(parts).replace(" .", ".").encode("ascii")
    return text[:max(n_bytes, 256)]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Generate a synthetic byte-level training corpus.")
    parser.add_argument("--out", required=True, help="output text file")
    parser.add_argument("--bytes", type=int, default=1_000_000,
                        help="corpus size in bytes (default 1000000)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    data = generate_text(args.bytes, args.seed)
    with open(args.out, "wb") as fh:
        fh.write(data)
    print(f"wrote {len(data)} bytes to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
