"""Synthetic corpora and token-budget batch packing."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .models import Batch

PATTERNS = ("default", "cyclic", "uniform")

# source matrices depend only on (pattern, vocab) so train/valid share a language
_SOURCE_SEED = 20180601


def transition_matrix(vocab: int, pattern: str = "default") -> np.ndarray:
    if vocab < 2:
        raise ValueError("vocab must be >= 2")
    if pattern == "uniform":
        return np.full((vocab, vocab), 1.0 / vocab)
    if pattern == "cyclic":
        P = np.full((vocab, vocab), 0.3 / vocab)
        P[np.arange(vocab), (np.arange(vocab) + 1) % vocab] += 0.7
        return P
    if pattern == "default":
        rng = np.random.default_rng([_SOURCE_SEED, vocab])
        k = min(3, vocab)
        P = np.full((vocab, vocab), 0.1 / vocab)
        for i in range(vocab):
            succ = rng.choice(vocab, size=k, replace=False)
            P[i, succ] += 0.9 * rng.dirichlet(np.full(k, 2.0))
        return P
    raise ValueError(f"unknown pattern {pattern!r}; expected one of {PATTERNS}")


@dataclass
class Corpus:
    sentences: list[np.ndarray]
    seed: int
    split: str
    vocab: int
    pattern: str = "default"
    lengths: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.lengths = np.array([len(s) for s in self.sentences], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.sentences)

    @property
    def total_tokens(self) -> int:
        return int(self.lengths.sum())

    def batch(self, indices: Sequence[int]) -> Batch:
        return Batch([self.sentences[i] for i in indices], sequences=True)


def gen_corpus(seed: int, n_sentences: int, vocab: int, len_min: int, len_max: int,
               pattern: str = "default", split: str = "train") -> Corpus:
    """Sentences from an order-1 Markov chain with a uniform first token."""
    if vocab < 2:
        raise ValueError("vocab must be >= 2")
    if not 1 <= len_min <= len_max:
        raise ValueError(f"need 1 <= len_min <= len_max, got [{len_min}, {len_max}]")
    if n_sentences < 0:
        raise ValueError("n_sentences must be >= 0")
    if split not in ("train", "valid"):
        raise ValueError(f"split must be train or valid, got {split!r}")
    P = transition_matrix(vocab, pattern)
    cdf = np.cumsum(P, axis=1)
    cdf[:, -1] = 1.0
    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    lengths = rng.integers(len_min, len_max + 1, size=n_sentences)
    sentences = []
    for n in lengths:
        u = rng.random(n)
        s = np.empty(n, dtype=np.int64)
        s[0] = min(int(u[0] * vocab), vocab - 1)
        for t in range(1, n):
            s[t] = np.searchsorted(cdf[s[t - 1]], u[t], side="right")
        sentences.append(s)
    return Corpus(sentences, seed, split, vocab, pattern)


def entropy_floor(corpus: Corpus) -> float:
    """Per-token cross-entropy of the true source on this corpus."""
    logP = np.log(transition_matrix(corpus.vocab, corpus.pattern))
    nll = 0.0
    for s in corpus.sentences:
        nll += np.log(corpus.vocab) - logP[s[:-1], s[1:]].sum()
    return float(nll / corpus.total_tokens)


@dataclass
class FeatureSet:
    """Feature/label examples for the non-sequence models; each counts as one token."""
    X: np.ndarray
    y: np.ndarray
    seed: int
    split: str

    def __post_init__(self):
        self.lengths = np.ones(len(self.y), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def total_tokens(self) -> int:
        return len(self.y)

    def batch(self, indices: Sequence[int]) -> Batch:
        return Batch([(self.X[i], self.y[i]) for i in indices], sequences=False)


def gen_features(seed: int, n: int, in_dim: int, classes: int = 0, split: str = "train") -> FeatureSet:
    """Teacher-labelled gaussian features: linear targets if classes == 0, else argmax labels."""
    teacher = np.random.default_rng([_SOURCE_SEED, in_dim, classes])
    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    X = rng.normal(size=(n, in_dim))
    if classes == 0:
        w = teacher.normal(size=in_dim)
        y = X @ w + 0.1 * rng.normal(size=n)
    else:
        W = teacher.normal(size=(in_dim, classes))
        y = np.argmax(X @ W + 0.5 * rng.normal(size=(n, classes)), axis=1)
    return FeatureSet(X, y, seed, split)


@dataclass
class PackedBatches:
    batches: list[list[int]]
    word_budget: int
    words: list[int]
    flagged: list[int]  # indices of single-sentence batches over budget

    def __len__(self) -> int:
        return len(self.batches)

    @property
    def mean_words(self) -> float:
        return float(np.mean(self.words)) if self.words else 0.0

    @property
    def max_words(self) -> int:
        return max(self.words, default=0)


def pack_lengths(lengths: Sequence[int], word_budget: int, seed: int | None = None,
                 sort_window: int = 1000, drop_oversized: bool = False) -> PackedBatches:
    """Greedy token-budget packing.

    Order: shuffle by ``seed`` (None keeps the given order), sort by length
    within consecutive windows of ``sort_window`` sentences, then fill batches
    in that order. A sentence longer than the budget becomes its own flagged
    batch (or is dropped).
    """
    if word_budget < 1:
        raise ValueError("word_budget must be >= 1")
    if sort_window < 1:
        raise ValueError("sort_window must be >= 1")
    lengths = np.asarray(lengths, dtype=np.int64)
    order = np.arange(len(lengths)) if seed is None else np.random.default_rng(seed).permutation(len(lengths))
    for lo in range(0, len(order), sort_window):
        chunk = order[lo:lo + sort_window]
        order[lo:lo + sort_window] = chunk[np.argsort(lengths[chunk], kind="stable")]

    batches, words, flagged = [], [], []
    cur, cur_words = [], 0

    def close():
        nonlocal cur, cur_words
        if cur:
            batches.append(cur)
            words.append(cur_words)
        cur, cur_words = [], 0

    for i in order.tolist():
        n = int(lengths[i])
        if n > word_budget:
            if drop_oversized:
                continue
            close()
            flagged.append(len(batches))
            batches.append([i])
            words.append(n)
            continue
        if cur_words + n > word_budget:
            close()
        cur.append(i)
        cur_words += n
    close()
    return PackedBatches(batches, word_budget, words, flagged)


def pack_batches(corpus, word_budget: int, seed: int | None = None, sort_window: int = 1000,
                 drop_oversized: bool = False) -> PackedBatches:
    return pack_lengths(corpus.lengths, word_budget, seed, sort_window, drop_oversized)


def epoch_order(packed: PackedBatches, epoch_seed: int) -> np.ndarray:
    if not packed.batches:
        raise ValueError("empty packing")
    return np.random.default_rng(epoch_seed).permutation(len(packed.batches))


def epoch_stream(packed: PackedBatches, epoch_seed: int) -> Iterator[list[int]]:
    for k in epoch_order(packed, epoch_seed):
        yield packed.batches[k]


def packing_report(packed: PackedBatches) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["word_budget", "batch_count", "mean_words", "max_words", "flagged"])
    writer.writerow([packed.word_budget, len(packed), f"{packed.mean_words:.3f}", packed.max_words, len(packed.flagged)])
    return buf.getvalue()
