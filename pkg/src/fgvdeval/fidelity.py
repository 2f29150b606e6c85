"""Fidelity metrics between originals and text-mediated reconstructions.

* clip_s: 100 x cosine between two embeddings (image-text or image-image).
* ssim: windowed structural similarity on luma, 11x11 Gaussian window
  (sigma 1.5), valid padding, C1=(0.01*255)^2, C2=(0.03*255)^2.
* frechet_distance: |mu_p - mu_q|^2 + Tr(Cp + Cq - 2 (Cp Cq)^{1/2}) between
  Gaussian fits of two feature populations; lower is better.

Raw values are kept canonical (SSIM in [-1, 1]); presentation scaling
(x100 SSIM, 2-decimal rounding) is applied only when formatting reports.
"""

from __future__ import annotations

import csv
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import convolve2d

from ._validation import check_matrix, check_vector
from .corpus import CorpusError
from .textvec import cosine

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
C1 = (0.01 * 255.0) ** 2
C2 = (0.03 * 255.0) ** 2

METRIC_CLIP_S = "clip_s"
METRIC_CLIP_S_I = "clip_s_i"
METRIC_SSIM = "ssim"
PAIR_METRICS = (METRIC_CLIP_S, METRIC_CLIP_S_I, METRIC_SSIM)


class FidelityError(ValueError):
    """A fidelity computation cannot proceed (bad shapes or non-PSD input)."""


def clip_s(image_vec, text_vec) -> float:
    """Scaled cosine: 100 x cosine(image embedding, text embedding)."""
    return 100.0 * cosine(image_vec, text_vec)


def _gaussian_window() -> np.ndarray:
    half = WINDOW_SIZE // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(ax ** 2) / (2.0 * WINDOW_SIGMA ** 2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


_WINDOW = _gaussian_window()


def to_luma(image: np.ndarray) -> np.ndarray:
    """uint8 image (H, W) or (H, W, 3) -> float64 luma plane."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise FidelityError("images must have 8-bit channels (uint8)")
    if arr.ndim == 2:
        return arr.astype(np.float64)
    if arr.ndim == 3 and arr.shape[2] == 3:
        arr = arr.astype(np.float64)
        return 0.299 * arr[:, :, 0] + 0.587 * arr[:, :, 1] + 0.114 * arr[:, :, 2]
    raise FidelityError(f"expected (H, W) or (H, W, 3) image, got shape {arr.shape}")


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over all fully interior 11x11 windows."""
    x = to_luma(a)
    y = to_luma(b)
    if x.shape != y.shape:
        raise FidelityError(f"image size mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < WINDOW_SIZE:
        raise FidelityError(
            f"image {x.shape} smaller than the {WINDOW_SIZE}x{WINDOW_SIZE} window")
    w = _WINDOW

    mu_x = convolve2d(x, w, mode="valid")
    mu_y = convolve2d(y, w, mode="valid")
    var_x = convolve2d(x * x, w, mode="valid") - mu_x * mu_x
    var_y = convolve2d(y * y, w, mode="valid") - mu_y * mu_y
    cov_xy = convolve2d(x * y, w, mode="valid") - mu_x * mu_y

    ssim_map = ((2.0 * mu_x * mu_y + C1) * (2.0 * cov_xy + C2)) \
        / ((mu_x * mu_x + mu_y * mu_y + C1) * (var_x + var_y + C2))
    return float(ssim_map.mean())


@dataclass(frozen=True)
class FeaturePopulation:
    """Feature matrix with its fitted mean and symmetrized unbiased covariance."""

    features: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dimension(self) -> int:
        return self.features.shape[1]


def fit_population(features) -> FeaturePopulation:
    """Column means plus unbiased covariance, symmetrized as (C + C^T) / 2."""
    matrix = check_matrix(features, "features")
    if matrix.shape[0] < 2:
        raise FidelityError("population fitting requires at least 2 rows")
    mean = matrix.mean(axis=0)
    cov = np.atleast_2d(np.cov(matrix, rowvar=False, ddof=1))
    cov = (cov + cov.T) / 2.0
    return FeaturePopulation(features=matrix, mean=mean, covariance=cov)


_EIG_FLOOR = -1e-8
_JITTER = 1e-6


def _sqrt_psd(sym: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(sym)
    if float(vals.min()) < _EIG_FLOOR:
        raise FidelityError("covariance is not positive semidefinite")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _trace_sqrt_product(cp: np.ndarray, cq: np.ndarray) -> float:
    """Tr((Cp Cq)^{1/2}) via eigh of the similar symmetric matrix
    Cp^{1/2} Cq Cp^{1/2}; retries once with 1e-6 diagonal jitter."""

    def attempt(a: np.ndarray, b: np.ndarray) -> np.ndarray:
        root = _sqrt_psd(a)
        product = root @ b @ root
        product = (product + product.T) / 2.0
        return np.linalg.eigvalsh(product)

    try:
        vals = attempt(cp, cq)
        if float(vals.min()) < _EIG_FLOOR:
            raise FidelityError("product of covariances is not numerically PSD")
    except FidelityError:
        eye = _JITTER * np.eye(cp.shape[0])
        vals = attempt(cp + eye, cq + eye)
        if float(vals.min()) < _EIG_FLOOR:
            raise FidelityError(
                "product of covariances is not PSD even after diagonal jitter")
    return float(np.sqrt(np.clip(vals, 0.0, None)).sum())


def frechet_distance(p: FeaturePopulation, q: FeaturePopulation) -> float:
    """Fréchet distance between the Gaussian fits of two populations."""
    if p.dimension != q.dimension:
        raise FidelityError(
            f"feature dimension mismatch: {p.dimension} vs {q.dimension}")
    diff = p.mean - q.mean
    trace_term = _trace_sqrt_product(p.covariance, q.covariance)
    return float(diff @ diff + np.trace(p.covariance) + np.trace(q.covariance)
                 - 2.0 * trace_term)


@dataclass(frozen=True)
class ScoredPair:
    """One per-item fidelity score; ssim scores must lie in [-1, 1]."""

    id: str
    score: float
    metric: str

    def __post_init__(self):
        if self.metric not in PAIR_METRICS:
            raise ValueError(f"unknown metric '{self.metric}'")
        if self.metric == METRIC_SSIM and not -1.0 <= self.score <= 1.0:
            raise ValueError(f"ssim score {self.score} outside [-1, 1]")


def aggregate_fidelity(pairs: Sequence[ScoredPair],
                       populations: tuple[FeaturePopulation, FeaturePopulation] | None = None,
                       dataset: str = "") -> dict:
    """Per-metric means over scored pairs, plus a population-level FID.

    Returns ``{dataset, metrics, counts, items}`` with raw (unscaled) values;
    items are merged per id in first-appearance order.
    """
    if not pairs and populations is None:
        raise ValueError("nothing to aggregate: no pairs and no populations")
    by_metric: dict[str, list[ScoredPair]] = {}
    for pair in pairs:
        by_metric.setdefault(pair.metric, []).append(pair)

    metrics: dict[str, float] = {}
    counts: dict[str, int] = {}
    for metric in PAIR_METRICS:
        if metric in by_metric:
            scores = [p.score for p in by_metric[metric]]
            metrics[metric] = float(sum(scores) / len(scores))
            counts[metric] = len(scores)
    if populations is not None:
        metrics["fid"] = frechet_distance(*populations)
        counts["fid"] = populations[0].size + populations[1].size

    items: dict[str, dict] = {}
    for pair in pairs:
        items.setdefault(pair.id, {"id": pair.id})[pair.metric] = pair.score
    return {"dataset": dataset, "metrics": metrics, "counts": counts,
            "items": list(items.values())}


def present_value(metric: str, value: float) -> float:
    """Presentation scaling: SSIM x100, everything rounded to 2 decimals."""
    if metric == METRIC_SSIM:
        value = 100.0 * value
    return round(value, 2)


def present_report(report: dict) -> dict:
    """Copy of an aggregate report with presentation-scaled metric values."""
    out = dict(report)
    out["metrics"] = {m: present_value(m, v) for m, v in report["metrics"].items()}
    out["items"] = [
        {k: (present_value(k, v) if k in PAIR_METRICS else v) for k, v in item.items()}
        for item in report["items"]
    ]
    return out


@dataclass(frozen=True)
class HumanScoreSet:
    """Integer 1..5 fidelity ratings keyed by (model, item id)."""

    scores: tuple[tuple[str, str, int], ...]

    def __post_init__(self):
        for model, item_id, score in self.scores:
            if not isinstance(score, int) or not 1 <= score <= 5:
                raise ValueError(
                    f"score {score!r} for ({model}, {item_id}) outside 1..5")


def load_human_scores(path) -> HumanScoreSet:
    """Read a ``model,id,score`` CSV (header required)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"path not found: {path}")
    rows: list[tuple[str, str, int]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["model", "id", "score"]:
            raise CorpusError("human-score CSV must have header 'model,id,score'",
                              path=path, line=1)
        for line_no, row in enumerate(reader, start=2):
            try:
                score = int(row["score"])
            except (TypeError, ValueError):
                raise CorpusError(f"score {row['score']!r} is not an integer",
                                  path=path, line=line_no)
            if not 1 <= score <= 5:
                raise CorpusError(f"score {score} outside 1..5", path=path, line=line_no)
            rows.append((row["model"], row["id"], score))
    return HumanScoreSet(scores=tuple(rows))


def aggregate_human_scores(scores: HumanScoreSet) -> dict[str, dict]:
    """Per-model mean and 5-bin histogram (bins are scores 1..5 in order)."""
    by_model: dict[str, list[int]] = {}
    for model, _, score in scores.scores:
        by_model.setdefault(model, []).append(score)
    out = {}
    for model in sorted(by_model):
        values = by_model[model]
        hist_counts = Counter(values)
        out[model] = {
            "mean": float(sum(values) / len(values)),
            "histogram": [hist_counts.get(s, 0) for s in range(1, 6)],
            "count": len(values),
        }
    return out


def load_feature_file(path) -> tuple[list[str], np.ndarray]:
    """Read a feature-population file: JSON Lines of ``{id, vector}``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"path not found: {path}")
    ids: list[str] = []
    vectors: list[np.ndarray] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"unparseable line: {exc.msg}", path=path, line=line_no)
            if (not isinstance(obj, dict) or sorted(obj) != ["id", "vector"]
                    or not isinstance(obj["id"], str) or not isinstance(obj["vector"], list)):
                raise CorpusError("feature record must be {id, vector}",
                                  path=path, line=line_no)
            try:
                vec = check_vector(np.asarray(obj["vector"], dtype=np.float32), "vector")
            except (TypeError, ValueError):
                raise CorpusError("'vector' must be an array of finite numbers",
                                  path=path, line=line_no)
            if vectors and vec.shape != vectors[0].shape:
                raise CorpusError(
                    f"vector length {vec.shape[0]} differs from first record's "
                    f"{vectors[0].shape[0]}", path=path, line=line_no)
            if obj["id"] in ids:
                raise CorpusError(f"duplicate id '{obj['id']}'", path=path, line=line_no)
            ids.append(obj["id"])
            vectors.append(vec)
    if not vectors:
        raise CorpusError("feature file is empty", path=path, line=1)
    return ids, np.stack(vectors)


def scan_feature_file(path) -> list[tuple[int, str]]:
    """Collected-violation variant of load_feature_file for the validator."""
    try:
        load_feature_file(path)
        return []
    except CorpusError as exc:
        return [(exc.line or 1, exc.message)]
