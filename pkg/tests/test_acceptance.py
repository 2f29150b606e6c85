"""Acceptance gate: one test per release criterion, at the stated tolerance.

Each test prints an ACCEPTANCE pass/fail line via the conftest hook. Oracles
here are self-contained exhaustive computations, independent of the engine's
vectorized path.
"""

from __future__ import annotations

import json
import math
import time

import numpy as np

from conftest import embedded_corpus, record, write_corpus
from fgvdeval.cli import main as cli_main
from fgvdeval.corpus import SUPPORT, TEST
from fgvdeval.fidelity import C1, fit_population, frechet_distance, ssim
from fgvdeval.textvec import TfidfVectorizer, cosine
from fgvdeval.trac import (
    METHOD_CENTROID,
    METHOD_TOP1,
    METHOD_TOPK,
    build_index,
    classify_top1,
    classify_topk,
    evaluate,
    index_from_arrays,
)

SEED = 74123


# --- exhaustive-scan oracles (independent of the engine path) -----------------

def _oracle_sims(support: np.ndarray, query: np.ndarray) -> list[float]:
    qn = math.sqrt(float(np.dot(query, query)))
    sims = []
    for row in support:
        rn = math.sqrt(float(np.dot(row, row)))
        if qn == 0.0 or rn == 0.0:
            sims.append(0.0)
        else:
            sims.append(float(np.dot(row, query)) / (rn * qn))
    return sims


def _oracle_top1(support, labels, query):
    sims = _oracle_sims(support, query)
    best = min(range(len(sims)), key=lambda i: (-sims[i], i))
    return labels[best], best


def _oracle_vote(labels_k, sims_k):
    counts, sums = {}, {}
    for lab, sim in zip(labels_k, sims_k):
        counts[lab] = counts.get(lab, 0) + 1
        sums[lab] = sums.get(lab, 0.0) + sim
    top = max(counts.values())
    tied = [l for l in counts if counts[l] == top]
    if len(tied) > 1:
        high = max(sums[l] for l in tied)
        tied = [l for l in tied if sums[l] == high]
    if len(tied) > 1 and labels_k[0] in tied:
        return labels_k[0]
    return min(tied)


def _oracle_topk(support, labels, query, k):
    sims = _oracle_sims(support, query)
    order = sorted(range(len(sims)), key=lambda i: (-sims[i], i))[:k]
    return _oracle_vote([labels[i] for i in order], [sims[i] for i in order])


def test_oracle_equivalence_top1_and_topk():
    """1000 support vectors (dim 64), 200 queries: engine == exhaustive scan,
    for top1 and topk with k in {1, 3, 5, 10}; total runtime < 5 s."""
    rng = np.random.default_rng(SEED)
    start = time.perf_counter()
    support = rng.standard_normal((1000, 64))
    labels = [f"class-{i % 37:03d}" for i in range(1000)]
    queries = rng.standard_normal((200, 64))
    index = index_from_arrays(support, labels)
    for q in queries:
        expected_label, expected_row = _oracle_top1(support, labels, q)
        got = classify_top1(index, q)
        assert got.label == expected_label
        assert got.neighbor_id == str(expected_row)
        for k in (1, 3, 5, 10):
            assert classify_topk(index, q, k).label == _oracle_topk(
                support, labels, q, k)
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"oracle-equivalence run took {elapsed:.2f}s"


def test_separable_clusters_all_methods_perfect():
    """10 well-separated Gaussian clusters: accuracy 1.0 for top1, topk(5),
    and centroid."""
    rng = np.random.default_rng(SEED + 1)
    support, centers = embedded_corpus(rng, 10, 20, 16, SUPPORT, scale=0.01)
    tests = []
    for c in range(10):
        for i in range(10):
            vec = centers[c] + 0.01 * rng.standard_normal(16)
            tests.append(record(f"q{c}-{i}", f"class-{c:03d}", TEST, "q",
                                vector=vec.astype(np.float32)))
    index = build_index(support)
    assert evaluate(index, tests, METHOD_TOP1).accuracy == 1.0
    assert evaluate(index, tests, METHOD_TOPK, k=5).accuracy == 1.0
    assert evaluate(index, tests, METHOD_CENTROID).accuracy == 1.0


def test_random_label_baseline_near_chance():
    """Permuted-label support with 200 classes: accuracy within 3 binomial
    standard deviations of 1/200 over 2000 queries."""
    rng = np.random.default_rng(SEED + 2)
    n_classes = 200
    support = rng.standard_normal((2000, 16))
    labels = [f"class-{i % n_classes:03d}" for i in range(2000)]
    rng.shuffle(labels)
    index = index_from_arrays(support, labels)
    queries = [record(f"q{i}", f"class-{rng.integers(n_classes):03d}", TEST, "q",
                      vector=rng.standard_normal(16).astype(np.float32))
               for i in range(2000)]
    accuracy = evaluate(index, queries, METHOD_TOP1).accuracy
    p = 1 / n_classes
    sigma = math.sqrt(p * (1 - p) / 2000)
    assert abs(accuracy - p) <= 3 * sigma, f"accuracy {accuracy} vs chance {p}"


def test_frechet_correctness():
    """FID(p,p) <= 1e-6; symmetric within 1e-6; diagonal case matches the
    closed form |d_mu|^2 + sum (sqrt(vp) - sqrt(vq))^2 within 1e-8 (value 5)."""
    rng = np.random.default_rng(SEED + 3)
    p = fit_population(rng.standard_normal((100, 8)) @ rng.standard_normal((8, 8)))
    q = fit_population(rng.standard_normal((100, 8)) + 0.3)
    assert abs(frechet_distance(p, p)) <= 1e-6
    assert abs(frechet_distance(q, q)) <= 1e-6
    assert abs(frechet_distance(p, q) - frechet_distance(q, p)) <= 1e-6

    # integer point sets with exactly diagonal sample covariance
    orig = fit_population([(-1, 2), (-1, -2), (0, 0), (1, 2), (1, -2)])
    recon = fit_population([(-3, 1), (-3, -1), (0, 0), (3, 1), (3, -1)])
    assert np.allclose(orig.covariance, np.diag([1.0, 4.0]))
    assert np.allclose(recon.covariance, np.diag([9.0, 1.0]))
    closed_form = (math.sqrt(1) - math.sqrt(9)) ** 2 + (math.sqrt(4) - math.sqrt(1)) ** 2
    assert closed_form == 5.0
    assert abs(frechet_distance(orig, recon) - closed_form) < 1e-8


def test_ssim_correctness():
    """ssim(x,x) = 1 within 1e-9; constant pair (100 vs 150) matches its
    closed form within 1e-4; symmetry within 1e-12."""
    rng = np.random.default_rng(SEED + 4)
    x = rng.integers(0, 256, (48, 36, 3)).astype(np.uint8)
    assert abs(ssim(x, x) - 1.0) <= 1e-9

    a = np.full((32, 32), 100, dtype=np.uint8)
    b = np.full((32, 32), 150, dtype=np.uint8)
    closed_form = (2 * 100.0 * 150.0 + C1) / (100.0 ** 2 + 150.0 ** 2 + C1)
    assert abs(ssim(a, b) - closed_form) <= 1e-4

    y = rng.integers(0, 256, (48, 36, 3)).astype(np.uint8)
    assert abs(ssim(x, y) - ssim(y, x)) <= 1e-12


def test_cosine_and_tfidf():
    """cosine((1,2,2),(2,1,2)) = 8/9 within 1e-12; TF-IDF rows L2-normalized
    within 1e-12; toy-corpus nearest neighbor matches hand computation."""
    assert abs(cosine([1, 2, 2], [2, 1, 2]) - 8 / 9) <= 1e-12

    docs = ["red wing tips", "blue wing", "green tail feathers", "red beak"]
    model = TfidfVectorizer().fit(docs)
    matrix = model.transform(docs + ["unseen words only", "red wing"])
    for row in matrix:
        norm = float(np.linalg.norm(row))
        assert norm == 0.0 or abs(norm - 1.0) <= 1e-12

    # "red wing" shares two terms with doc 0, one with docs 1 and 3, none with 2
    sims = matrix[:4] @ model.transform_text("red wing")
    assert int(np.argmax(sims)) == 0
    assert sims[0] > max(sims[1], sims[3]) > sims[2] == 0.0


def test_eq2_accuracy_exactness():
    """Reported accuracy is the exact count ratio: accuracy == correct/|tests|
    bit-exact and accuracy * |tests| round-trips to the integer count."""
    rng = np.random.default_rng(SEED + 5)
    support = rng.standard_normal((60, 8))
    labels = [f"c{i % 7}" for i in range(60)]
    index = index_from_arrays(support, labels)
    for n_tests in (7, 49, 100, 331):
        tests = [record(f"q{i}", f"c{rng.integers(7)}", TEST, "q",
                        vector=rng.standard_normal(8).astype(np.float32))
                 for i in range(n_tests)]
        outcome = evaluate(index, tests, METHOD_TOPK, k=3)
        report = outcome.to_report()
        correct = sum(1 for item in report["items"] if item["y"] == item["y_hat"])
        assert report["accuracy"] == correct / n_tests
        assert round(report["accuracy"] * n_tests) == correct
        assert abs(report["accuracy"] * n_tests - correct) <= 1e-9


def test_determinism_across_thread_counts(tmp_path, monkeypatch):
    """classify and prompts produce byte-identical report files with
    FGVD_EVAL_THREADS = 1 and 8."""
    rng = np.random.default_rng(SEED + 6)
    support, centers = embedded_corpus(rng, 5, 150, 12, SUPPORT, scale=0.4)
    tests = []
    for c in range(5):
        for i in range(120):
            vec = centers[c] + 0.4 * rng.standard_normal(12)
            tests.append(record(f"q{c}-{i}", f"class-{c:03d}", TEST, f"draft {c} {i}",
                                vector=vec.astype(np.float32)))
    corpus_path = write_corpus(tmp_path / "demo.fgvd.jsonl", support + tests,
                               name="demo", dimension=12)
    outputs = {}
    for threads in ("1", "8"):
        monkeypatch.setenv("FGVD_EVAL_THREADS", threads)
        out = tmp_path / f"threads-{threads}"
        assert cli_main(["classify", "--corpus", str(corpus_path),
                         "--method", "top1,topk,centroid", "--k", "7",
                         "--out", str(out)]) == 0
        assert cli_main(["prompts", "--queries", str(corpus_path),
                         "--pool", str(corpus_path), "--template", "salient",
                         "--category", "bird", "--strategy", "RS",
                         "--n-shots", "3", "--seed", "17",
                         "--out", str(out)]) == 0
        outputs[threads] = {p.name: p.read_bytes() for p in sorted(out.iterdir())}
    monkeypatch.delenv("FGVD_EVAL_THREADS")
    assert set(outputs["1"]) == set(outputs["8"])
    for name in outputs["1"]:
        assert outputs["1"][name] == outputs["8"][name], f"{name} differs"


def test_k_sweep_shape_and_per_k_oracle(tmp_path):
    """Sweep over 3:30 emits exactly 28 rows; every row equals an
    independent per-k exhaustive oracle."""
    rng = np.random.default_rng(SEED + 7)
    # test split averages 30 items per class; support large enough for k=30
    support, centers = embedded_corpus(rng, 3, 40, 8, SUPPORT, scale=0.8)
    tests = []
    for c in range(3):
        for i in range(30):
            vec = centers[c] + 0.8 * rng.standard_normal(8)
            tests.append(record(f"q{c}-{i}", f"class-{c:03d}", TEST, "q",
                                vector=vec.astype(np.float32)))
    corpus_path = write_corpus(tmp_path / "sweep.fgvd.jsonl", support + tests,
                               name="sweep", dimension=8)
    out = tmp_path / "rep"
    assert cli_main(["classify", "--corpus", str(corpus_path), "--method", "topk",
                     "--k-range", "3:30", "--out", str(out)]) == 0
    lines = (out / "ksweep.csv").read_text().splitlines()
    assert lines[0] == "k,accuracy"
    rows = [line.split(",") for line in lines[1:]]
    assert len(rows) == 30 - 2
    assert [int(r[0]) for r in rows] == list(range(3, 31))

    support_matrix = np.stack([r.vector.astype(np.float64) for r in support])
    support_labels = [r.label for r in support]
    for k_str, acc_str in rows:
        k = int(k_str)
        correct = sum(
            1 for t in tests
            if _oracle_topk(support_matrix, support_labels,
                            t.vector.astype(np.float64), k) == t.label)
        assert acc_str == f"{correct / len(tests):.6f}", f"k={k} mismatch"
