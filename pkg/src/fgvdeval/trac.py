"""Retrieval-based distinctiveness scoring.

A support set of embedded descriptions is indexed once (rows L2-normalized,
plus one normalized mean vector per class); test descriptions are then
classified by nearest neighbor, top-k majority vote, or closest class
centroid, and accuracy is the fraction of test items whose retrieved label
matches the true label.

All similarities are cosine, computed as dot products of normalized vectors.
Tie-breaks are fully specified so results are reproducible:

* top-1: equal similarities resolve to the smallest support row index.
* top-k vote: modal label; label ties resolve by larger summed similarity,
  then by containing the single nearest neighbor, then lexicographically.
* centroid: equal similarities resolve to the lexicographically first label.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from ._parallel import map_chunks
from ._validation import check_matrix, check_vector
from .corpus import CorpusRecord
from .textvec import l2_normalize

METHOD_TOP1 = "top1"
METHOD_TOPK = "topk"
METHOD_CENTROID = "centroid"
METHODS = (METHOD_TOP1, METHOD_TOPK, METHOD_CENTROID)


@dataclass(frozen=True)
class SupportIndex:
    """Immutable retrieval index over the support split.

    vectors: (n, dim) float64, rows unit-length (zero rows stay zero)
    centroids: (n_classes, dim), one normalized mean per class, rows ordered
        by sorted class name
    """

    vectors: np.ndarray
    labels: tuple[str, ...]
    ids: tuple[str, ...]
    class_names: tuple[str, ...]
    centroids: np.ndarray

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    @property
    def class_count(self) -> int:
        return len(self.class_names)


def index_from_arrays(vectors, labels: Sequence[str],
                      ids: Sequence[str] | None = None) -> SupportIndex:
    """Build a SupportIndex from raw vectors and labels.

    Vectors are L2-normalized; the per-class centroid is the normalized mean
    of that class's normalized vectors. ids default to the row number.
    """
    matrix = check_matrix(vectors, "support vectors")
    if matrix.shape[0] == 0:
        raise ValueError("support set must not be empty")
    labels = tuple(str(l) for l in labels)
    if len(labels) != matrix.shape[0]:
        raise ValueError("one label per support vector required")
    if ids is None:
        ids = tuple(str(i) for i in range(matrix.shape[0]))
    else:
        ids = tuple(str(i) for i in ids)
        if len(ids) != matrix.shape[0]:
            raise ValueError("one id per support vector required")
    normalized = l2_normalize(matrix)
    normalized.flags.writeable = False
    class_names = tuple(sorted(set(labels)))
    label_array = np.asarray(labels, dtype=object)
    centroids = np.zeros((len(class_names), matrix.shape[1]), dtype=np.float64)
    for row, name in enumerate(class_names):
        members = normalized[label_array == name]
        centroids[row] = l2_normalize(members.mean(axis=0))
    centroids.flags.writeable = False
    return SupportIndex(vectors=normalized, labels=labels, ids=ids,
                        class_names=class_names, centroids=centroids)


def build_index(support: Sequence[CorpusRecord]) -> SupportIndex:
    """Index support records; every record must carry a vector of equal length."""
    if not support:
        raise ValueError("support set must not be empty")
    missing = [r.id for r in support if r.vector is None]
    if missing:
        raise ValueError(f"support records without vectors: {missing[:5]}")
    dims = {r.vector.shape[0] for r in support}
    if len(dims) != 1:
        raise ValueError(f"mixed vector dimensions in support set: {sorted(dims)}")
    matrix = np.stack([r.vector.astype(np.float64) for r in support])
    return index_from_arrays(matrix, [r.label for r in support], [r.id for r in support])


class Top1Result(NamedTuple):
    label: str
    neighbor_id: str
    similarity: float


class TopKResult(NamedTuple):
    label: str
    neighbor_ids: tuple[str, ...]
    similarities: tuple[float, ...]


class CentroidResult(NamedTuple):
    label: str
    similarity: float


def _query_matrix(index: SupportIndex, queries) -> np.ndarray:
    q = check_matrix(queries, "queries")
    if q.shape[1] != index.dimension:
        raise ValueError(
            f"dimension mismatch: query dim {q.shape[1]} vs index dim {index.dimension}")
    return l2_normalize(q)


def classify_top1(index: SupportIndex, query) -> Top1Result:
    """Label of the most similar support row; ties go to the smallest row index."""
    q = _query_matrix(index, check_vector(query, "query")[np.newaxis, :])
    sims = index.vectors @ q[0]
    best = int(np.argmax(sims))
    return Top1Result(index.labels[best], index.ids[best], float(sims[best]))


def _vote(labels_k: Sequence[str], sims_k: np.ndarray) -> str:
    """Majority vote with the documented tie-break cascade."""
    counts: dict[str, int] = {}
    sums: dict[str, float] = {}
    for label, sim in zip(labels_k, sims_k):
        counts[label] = counts.get(label, 0) + 1
        sums[label] = sums.get(label, 0.0) + float(sim)
    top_count = max(counts.values())
    tied = [l for l in counts if counts[l] == top_count]
    if len(tied) > 1:
        top_sum = max(sums[l] for l in tied)
        tied = [l for l in tied if sums[l] == top_sum]
    if len(tied) > 1 and labels_k[0] in tied:
        return labels_k[0]
    return min(tied)


def _top_neighbors(index: SupportIndex, sims: np.ndarray, k: int) -> np.ndarray:
    """Row indices of the k most similar support rows per query (descending
    similarity, similarity ties resolved by smaller row index)."""
    order = np.argsort(-sims, axis=1, kind="stable")
    return order[:, :k]


def classify_topk(index: SupportIndex, query, k: int) -> TopKResult:
    """Majority vote over the k most similar support rows."""
    if not 1 <= k <= index.size:
        raise ValueError(f"k must be in [1, {index.size}], got {k}")
    q = _query_matrix(index, check_vector(query, "query")[np.newaxis, :])
    sims = (index.vectors @ q.T).T
    rows = _top_neighbors(index, sims, k)[0]
    labels_k = [index.labels[i] for i in rows]
    sims_k = sims[0, rows]
    return TopKResult(_vote(labels_k, sims_k),
                      tuple(index.ids[i] for i in rows),
                      tuple(float(s) for s in sims_k))


def classify_centroid(index: SupportIndex, query) -> CentroidResult:
    """Label of the closest class centroid; ties go to the first (sorted) label."""
    q = _query_matrix(index, check_vector(query, "query")[np.newaxis, :])
    sims = index.centroids @ q[0]
    best = int(np.argmax(sims))
    return CentroidResult(index.class_names[best], float(sims[best]))


@dataclass(frozen=True)
class ItemOutcome:
    id: str
    true_label: str
    predicted_label: str
    neighbor_ids: tuple[str, ...]
    neighbor_sims: tuple[float, ...]


@dataclass(frozen=True)
class ClassificationOutcome:
    """Per-item retrieval evidence plus the exact count-ratio accuracy."""

    method: str
    k: int | None
    per_item: tuple[ItemOutcome, ...]
    accuracy: float

    @property
    def correct(self) -> int:
        return sum(1 for it in self.per_item if it.predicted_label == it.true_label)

    def to_report(self) -> dict:
        return {
            "method": self.method,
            "k": self.k,
            "accuracy": self.accuracy,
            "items": [
                {"id": it.id, "y": it.true_label, "y_hat": it.predicted_label,
                 "neighbors": [{"id": nid, "sim": sim}
                               for nid, sim in zip(it.neighbor_ids, it.neighbor_sims)]}
                for it in self.per_item
            ],
        }


def _check_tests(index: SupportIndex, tests: Sequence[CorpusRecord]) -> np.ndarray:
    if not tests:
        raise ValueError("test set must not be empty")
    missing = [r.id for r in tests if r.vector is None]
    if missing:
        raise ValueError(f"test records without vectors: {missing[:5]}")
    matrix = np.stack([r.vector.astype(np.float64) for r in tests])
    return _query_matrix(index, matrix)


def _classify_chunk(index: SupportIndex, chunk: np.ndarray, method: str,
                    k: int | None) -> list[tuple[str, tuple[str, ...], tuple[float, ...]]]:
    out = []
    if method == METHOD_CENTROID:
        sims = chunk @ index.centroids.T
        for row in range(chunk.shape[0]):
            best = int(np.argmax(sims[row]))
            out.append((index.class_names[best],
                        (index.class_names[best],), (float(sims[row, best]),)))
        return out
    sims = chunk @ index.vectors.T
    take = 1 if method == METHOD_TOP1 else k
    rows = _top_neighbors(index, sims, take)
    for row in range(chunk.shape[0]):
        idx = rows[row]
        sims_k = sims[row, idx]
        if method == METHOD_TOP1:
            label = index.labels[int(idx[0])]
        else:
            label = _vote([index.labels[i] for i in idx], sims_k)
        out.append((label, tuple(index.ids[i] for i in idx),
                    tuple(float(s) for s in sims_k)))
    return out


def evaluate(index: SupportIndex, tests: Sequence[CorpusRecord], method: str,
             k: int | None = None, workers: int | None = None) -> ClassificationOutcome:
    """Classify every test record and report accuracy = correct / |tests|.

    Results are identical for any worker count (fixed chunking).
    """
    if method not in METHODS:
        raise ValueError(f"unknown method '{method}' (expected one of {METHODS})")
    if method == METHOD_TOPK:
        if k is None:
            raise ValueError("method 'topk' requires k")
        if not 1 <= k <= index.size:
            raise ValueError(f"k must be in [1, {index.size}], got {k}")
    else:
        k = None
    queries = _check_tests(index, tests)
    results = map_chunks(lambda c: _classify_chunk(index, c, method, k),
                         queries, workers)
    flat = [r for chunk in results for r in chunk]
    per_item = tuple(
        ItemOutcome(rec.id, rec.label, label, nids, sims)
        for rec, (label, nids, sims) in zip(tests, flat))
    correct = sum(1 for it in per_item if it.predicted_label == it.true_label)
    return ClassificationOutcome(method=method, k=k, per_item=per_item,
                                 accuracy=correct / len(per_item))


def k_sweep(index: SupportIndex, tests: Sequence[CorpusRecord],
            k_values: Sequence[int], workers: int | None = None
            ) -> list[tuple[int, float]]:
    """Accuracy at each k, computing each query's neighbor list once at max(k)."""
    ks = list(k_values)
    if not ks:
        raise ValueError("k_values must not be empty")
    for k in ks:
        if not 1 <= k <= index.size:
            raise ValueError(f"k must be in [1, {index.size}], got {k}")
    k_max = max(ks)
    queries = _check_tests(index, tests)
    true_labels = [r.label for r in tests]

    def sweep_chunk(chunk: np.ndarray) -> list[list[str]]:
        sims = chunk @ index.vectors.T
        rows = _top_neighbors(index, sims, k_max)
        preds = []
        for row in range(chunk.shape[0]):
            idx = rows[row]
            labels_row = [index.labels[i] for i in idx]
            sims_row = sims[row, idx]
            preds.append([_vote(labels_row[:k], sims_row[:k]) for k in ks])
        return preds

    results = map_chunks(sweep_chunk, queries, workers)
    flat = [p for chunk in results for p in chunk]
    out = []
    for col, k in enumerate(ks):
        correct = sum(1 for row, truth in zip(flat, true_labels) if row[col] == truth)
        out.append((k, correct / len(flat)))
    return out


class TracClassifier(ClassifierMixin, BaseEstimator):
    """sklearn-style front end: fit a support index, predict retrieved labels.

    Parameters
    ----------
    method : 'top1', 'topk', or 'centroid'
    k : neighbor count, required for 'topk'
    """

    def __init__(self, method: str = METHOD_TOP1, k: int | None = None):
        self.method = method
        self.k = k

    def fit(self, X, y):
        if self.method not in METHODS:
            raise ValueError(f"unknown method '{self.method}'")
        self.index_ = index_from_arrays(X, [str(l) for l in y])
        self.classes_ = np.asarray(self.index_.class_names, dtype=object)
        return self

    def _check_is_fitted(self):
        if not hasattr(self, "index_"):
            raise ValueError("TracClassifier is not fitted")

    def predict(self, X) -> np.ndarray:
        self._check_is_fitted()
        queries = _query_matrix(self.index_, X)
        k = self.k
        if self.method == METHOD_TOPK:
            if k is None:
                raise ValueError("method 'topk' requires k")
            if not 1 <= k <= self.index_.size:
                raise ValueError(f"k must be in [1, {self.index_.size}], got {k}")
        results = map_chunks(
            lambda c: _classify_chunk(self.index_, c, self.method,
                                      k if self.method == METHOD_TOPK else None),
            queries)
        return np.asarray([label for chunk in results for label, _, _ in chunk],
                          dtype=object)

    def kneighbors(self, X, k: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """(similarities, support row indices) of the k nearest support rows."""
        self._check_is_fitted()
        k = k if k is not None else (self.k or 1)
        if not 1 <= k <= self.index_.size:
            raise ValueError(f"k must be in [1, {self.index_.size}], got {k}")
        queries = _query_matrix(self.index_, X)
        sims = queries @ self.index_.vectors.T
        rows = _top_neighbors(self.index_, sims, k)
        return np.take_along_axis(sims, rows, axis=1), rows
