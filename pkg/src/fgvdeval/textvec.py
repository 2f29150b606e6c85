"""TF-IDF text vectorization and shared cosine/normalization utilities.

The vectorizer reproduces the common smoothed variant:
``weight(t) = tf(t, d) * (ln((1 + N) / (1 + df(t))) + 1)``, rows L2-normalized,
raw term counts for tf. Tokenization lowercases and splits on any
non-alphanumeric character.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

_TOKEN = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on any non-alphanumeric, drop empty tokens."""
    return _TOKEN.findall(text.lower())


def l2_normalize(x: np.ndarray) -> np.ndarray:
    """Unit-normalize a vector or each matrix row; zero rows are kept zero."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        norm = float(np.linalg.norm(x))
        return x / norm if norm > 0.0 else x.copy()
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return x / safe


def cosine(a, b) -> float:
    """Cosine similarity in [-1, 1]; 0 by convention when either norm is 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1:
        raise ValueError("cosine expects 1-D vectors")
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    sim = float(np.dot(a, b) / (na * nb))
    return min(1.0, max(-1.0, sim))


class TfidfVectorizer(TransformerMixin, BaseEstimator):
    """TF-IDF vectorizer with a lexicographically ordered vocabulary.

    Fitted attributes:
        vocabulary_: dict token -> contiguous 0-based column index
        document_frequency_: dict token -> number of fitting documents containing it
        corpus_size_: number of fitting documents N
    """

    def fit(self, documents, y=None):
        docs = list(documents)
        if not docs:
            raise ValueError("at least one document required")
        df: Counter[str] = Counter()
        for doc in docs:
            df.update(set(tokenize(doc)))
        if not df:
            raise ValueError("all documents are empty after tokenization")
        tokens = sorted(df)
        self.vocabulary_ = {t: i for i, t in enumerate(tokens)}
        self.document_frequency_ = {t: df[t] for t in tokens}
        self.corpus_size_ = len(docs)
        self._idf = np.array(
            [math.log((1 + self.corpus_size_) / (1 + df[t])) + 1.0 for t in tokens],
            dtype=np.float64)
        return self

    def _check_fitted(self):
        if not hasattr(self, "vocabulary_"):
            raise NotFittedError("TfidfVectorizer is not fitted")

    def transform(self, documents) -> np.ndarray:
        """L2-normalized (n_docs, vocab) float64 matrix; unknown tokens ignored.

        A document with no known tokens maps to the zero vector.
        """
        self._check_fitted()
        docs = list(documents)
        out = np.zeros((len(docs), len(self.vocabulary_)), dtype=np.float64)
        for row, doc in enumerate(docs):
            counts = Counter(tokenize(doc))
            for token, tf in counts.items():
                col = self.vocabulary_.get(token)
                if col is not None:
                    out[row, col] = tf * self._idf[col]
        return l2_normalize(out)

    def transform_text(self, document: str) -> np.ndarray:
        """Single-document convenience wrapper returning a 1-D vector."""
        return self.transform([document])[0]

    def save(self, path) -> None:
        self._check_fitted()
        obj = {"vocabulary": self.vocabulary_,
               "document_frequency": self.document_frequency_,
               "corpus_size": self.corpus_size_}
        Path(path).write_text(
            json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n",
            encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TfidfVectorizer":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        model = cls()
        vocab = obj["vocabulary"]
        df = obj["document_frequency"]
        n = obj["corpus_size"]
        indices = sorted(vocab.values())
        if indices != list(range(len(vocab))):
            raise ValueError("vocabulary indices must be a contiguous 0-based range")
        if any(not (1 <= df.get(t, 0) <= n) for t in vocab):
            raise ValueError("document frequencies must lie in [1, corpus_size]")
        model.vocabulary_ = dict(vocab)
        model.document_frequency_ = {t: df[t] for t in vocab}
        model.corpus_size_ = n
        by_index = sorted(vocab, key=vocab.get)
        model._idf = np.array(
            [math.log((1 + n) / (1 + df[t])) + 1.0 for t in by_index], dtype=np.float64)
        return model
