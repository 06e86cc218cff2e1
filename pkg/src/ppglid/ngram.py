"""Phonotactic baseline: bag-of-n-grams features + linear max-margin classifier.

Phone sequences (from alignment files, or greedy decoding when absent)
are counted into n-gram features of order 1..n_max over a vocabulary
built from training data only.  A one-vs-rest linear classifier is
trained by Pegasos-style stochastic subgradient descent on the
L2-regularized hinge loss; its margin scores feed the EER machinery
directly.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError
from .ppg import PhoneInventory


@dataclass(frozen=True)
class NGramVocab:
    """N-gram (tuple of phone indices) -> dense feature index.

    ``idf`` holds ln(N / document-frequency) from the training set; a
    vocabulary re-read from its text form carries idf of all ones, so
    tf-idf weighting is only meaningful on a freshly built vocabulary.
    """

    n_max: int
    index: dict[tuple[int, ...], int]
    idf: np.ndarray

    def __post_init__(self):
        if self.n_max < 1:
            raise DataError(f"n_max must be >= 1, got {self.n_max}")
        if sorted(self.index.values()) != list(range(len(self.index))):
            raise DataError("feature indices must be dense 0..V-1")
        if len(self.idf) != len(self.index):
            raise DataError("idf length must equal vocabulary size")

    def __len__(self) -> int:
        return len(self.index)


@dataclass(frozen=True)
class SparseVec:
    """Sorted (index, value) pairs of one feature vector."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        indices = np.asarray(self.indices, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if indices.shape != values.shape or indices.ndim != 1:
            raise DataError("indices and values must be equal-length 1-D arrays")
        if len(indices) and (np.any(np.diff(indices) <= 0) or indices[0] < 0):
            raise DataError("indices must be strictly increasing and non-negative")
        if not np.all(np.isfinite(values)):
            raise DataError("feature values must be finite")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)


def iter_ngrams(seq: list[int], n_max: int):
    for n in range(1, n_max + 1):
        for i in range(len(seq) - n + 1):
            yield tuple(seq[i : i + n])


def build_ngram_vocab(train_seqs: list[list[int]], n_max: int = 3) -> NGramVocab:
    """Vocabulary over all n-grams of the training sequences.

    Feature indices are assigned in sorted (length, content) order so
    the mapping is independent of sequence order.
    """
    if not train_seqs:
        raise DataError("cannot build a vocabulary from zero sequences")
    doc_freq: Counter = Counter()
    for seq in train_seqs:
        if not seq:
            raise DataError("empty phone sequence in training data")
        doc_freq.update(set(iter_ngrams(seq, n_max)))
    grams = sorted(doc_freq, key=lambda g: (len(g), g))
    index = {g: i for i, g in enumerate(grams)}
    n_docs = len(train_seqs)
    idf = np.array([np.log(n_docs / doc_freq[g]) for g in grams], dtype=np.float64)
    return NGramVocab(n_max=n_max, index=index, idf=idf)


WEIGHTINGS = ("raw", "l2", "tfidf")


def featurize(seq: list[int], vocab: NGramVocab, weighting: str = "l2") -> SparseVec:
    """Count the sequence's in-vocabulary n-grams.

    raw: plain counts.  l2: counts scaled to unit Euclidean norm.
    tfidf: counts times the training idf, then unit-normalized.
    Out-of-vocabulary n-grams are dropped.
    """
    if not seq:
        raise DataError("cannot featurize an empty phone sequence")
    if weighting not in WEIGHTINGS:
        raise DataError(f"unknown weighting {weighting!r}, expected one of {WEIGHTINGS}")
    counts: Counter = Counter()
    for gram in iter_ngrams(seq, vocab.n_max):
        idx = vocab.index.get(gram)
        if idx is not None:
            counts[idx] += 1
    indices = np.array(sorted(counts), dtype=np.int64)
    values = np.array([counts[i] for i in indices], dtype=np.float64)
    if weighting == "tfidf":
        values = values * vocab.idf[indices]
    if weighting in ("l2", "tfidf") and len(values):
        norm = np.linalg.norm(values)
        if norm > 0:
            values = values / norm
    return SparseVec(indices=indices, values=values)


def _margin(weights_row: np.ndarray, feat: SparseVec) -> float:
    return float(weights_row[feat.indices] @ feat.values)


def train_margin_classifier(
    features: list[SparseVec],
    labels,
    num_features: int,
    reg_lambda: float = 1e-4,
    epochs: int = 20,
    seed: int = 0,
) -> np.ndarray:
    """One-vs-rest Pegasos: C x V weight matrix.

    Each class's detector runs epochs * N steps of single-sample
    subgradient descent with step 1/(lambda * t).  Sampling maps a
    uniform float to an index, so the draw sequence depends only on the
    seed, not the dataset size.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if len(features) != len(labels) or len(features) == 0:
        raise DataError("features and labels must be non-empty and parallel")
    classes = np.unique(labels)
    if len(classes) < 2:
        raise DataError("training data contains a single class")
    if not reg_lambda > 0:
        raise DataError(f"reg_lambda must be positive, got {reg_lambda}")
    num_classes = int(labels.max()) + 1
    n = len(features)
    weights = np.zeros((num_classes, num_features), dtype=np.float64)
    for c in range(num_classes):
        rng = np.random.default_rng([seed, c])
        y = np.where(labels == c, 1.0, -1.0)
        w = weights[c]
        for t in range(1, epochs * n + 1):
            i = min(int(rng.random() * n), n - 1)
            feat = features[i]
            eta = 1.0 / (reg_lambda * t)
            violated = y[i] * _margin(w, feat) < 1.0
            w *= 1.0 - eta * reg_lambda
            if violated:
                w[feat.indices] += eta * y[i] * feat.values
    return weights


def hinge_objective(weights_row: np.ndarray, features: list[SparseVec], y_pm: np.ndarray, reg_lambda: float) -> float:
    """Pegasos objective for one binary detector: lambda/2 ||w||^2 + mean hinge."""
    hinge = [max(0.0, 1.0 - y * _margin(weights_row, f)) for f, y in zip(features, y_pm)]
    return 0.5 * reg_lambda * float(weights_row @ weights_row) + float(np.mean(hinge))


def predict_margin(feat: SparseVec, weights: np.ndarray) -> tuple[int, np.ndarray]:
    """Argmax over per-class margin scores; ties break toward class 0."""
    if len(feat.indices) and feat.indices[-1] >= weights.shape[1]:
        raise DataError(
            f"feature index {int(feat.indices[-1])} exceeds weight dimension {weights.shape[1]}"
        )
    scores = weights[:, feat.indices] @ feat.values if len(feat.indices) else np.zeros(weights.shape[0])
    return int(np.argmax(scores)), scores


# ---------------------------------------------------------------------------
# Text serialization.  Vocab: "<sym1> <sym2> ... <index>" per line;
# weights: "<class> <index>:<value> ..." per line (non-zero entries).


def write_vocab(vocab: NGramVocab, inventory: PhoneInventory) -> bytes:
    lines = []
    for gram, idx in sorted(vocab.index.items(), key=lambda kv: kv[1]):
        symbols = " ".join(inventory.symbols[p] for p in gram)
        lines.append(f"{symbols} {idx}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_vocab(data: bytes | str, inventory: PhoneInventory) -> NGramVocab:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    index: dict[tuple[int, ...], int] = {}
    n_max = 1
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) < 2:
            raise FormatError(f"line {lineno}: expected '<symbols> <index>'")
        try:
            idx = int(parts[-1])
        except ValueError:
            raise FormatError(f"line {lineno}: non-integer feature index {parts[-1]!r}") from None
        try:
            gram = tuple(inventory.index[s] for s in parts[:-1])
        except KeyError as e:
            raise FormatError(f"line {lineno}: unknown phone symbol {e.args[0]!r}") from None
        if gram in index:
            raise FormatError(f"line {lineno}: duplicate n-gram")
        index[gram] = idx
        n_max = max(n_max, len(gram))
    if not index:
        raise FormatError("empty vocabulary file")
    try:
        return NGramVocab(n_max=n_max, index=index, idf=np.ones(len(index)))
    except DataError as e:
        raise FormatError(str(e)) from None


def write_weights(weights: np.ndarray) -> bytes:
    lines = []
    for c, row in enumerate(weights):
        nz = np.nonzero(row)[0]
        pairs = " ".join(f"{i}:{repr(float(row[i]))}" for i in nz)
        lines.append(f"{c} {pairs}".rstrip())
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_weights(data: bytes | str, num_features: int) -> np.ndarray:
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    rows = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        try:
            c = int(parts[0])
        except ValueError:
            raise FormatError(f"line {lineno}: non-integer class id {parts[0]!r}") from None
        if c in rows:
            raise FormatError(f"line {lineno}: duplicate class {c}")
        row = np.zeros(num_features, dtype=np.float64)
        for pair in parts[1:]:
            try:
                idx_s, val_s = pair.split(":", 1)
                idx, val = int(idx_s), float(val_s)
            except ValueError:
                raise FormatError(f"line {lineno}: malformed index:value pair {pair!r}") from None
            if not 0 <= idx < num_features:
                raise FormatError(f"line {lineno}: feature index {idx} out of range")
            row[idx] = val
        rows[c] = row
    if sorted(rows) != list(range(len(rows))):
        raise FormatError("weight file must cover classes 0..C-1")
    return np.stack([rows[c] for c in range(len(rows))])
