from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
import scipy.linalg
from skimage.metrics import structural_similarity as skimage_ssim

from fgvdeval.corpus import CorpusError
from fgvdeval.fidelity import (
    C1,
    C2,
    FeaturePopulation,
    FidelityError,
    HumanScoreSet,
    ScoredPair,
    aggregate_fidelity,
    aggregate_human_scores,
    clip_s,
    fit_population,
    frechet_distance,
    load_feature_file,
    load_human_scores,
    present_report,
    ssim,
    to_luma,
)


def constant_image(value, shape=(24, 24)):
    return np.full(shape, value, dtype=np.uint8)


def constant_pair_closed_form(v1: float, v2: float) -> float:
    """Constant-image SSIM: variances vanish, only the luminance term remains."""
    return (2 * v1 * v2 + C1) / (v1 * v1 + v2 * v2 + C1)


class TestClipS:
    def test_parallel_vectors(self):
        assert clip_s([1.0, 0.0], [1.0, 0.0]) == 100.0
        assert abs(clip_s([1.0, 2.0], [2.0, 4.0]) - 100.0) < 1e-10

    def test_orthogonal_vectors(self):
        assert clip_s([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_negative_not_clamped(self):
        assert clip_s([1.0, 0.0], [-1.0, 0.0]) == -100.0

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            clip_s([1.0], [1.0, 2.0])

    def test_is_100x_cosine(self, rng):
        from fgvdeval.textvec import cosine
        a, b = rng.standard_normal(32), rng.standard_normal(32)
        assert clip_s(a, b) == 100.0 * cosine(a, b)


class TestSsim:
    def test_identical_images(self, rng):
        img = rng.integers(0, 256, (40, 30, 3)).astype(np.uint8)
        assert abs(ssim(img, img) - 1.0) < 1e-9

    def test_constant_pair_matches_closed_form(self):
        got = ssim(constant_image(100), constant_image(150))
        expected = constant_pair_closed_form(100.0, 150.0)
        assert abs(got - expected) < 1e-12
        # the stated closed form evaluates to 0.923092..., frozen here
        assert abs(expected - 0.923092310530793) < 1e-12

    def test_symmetry_is_bit_exact(self, rng):
        a = rng.integers(0, 256, (32, 48)).astype(np.uint8)
        b = rng.integers(0, 256, (32, 48)).astype(np.uint8)
        assert ssim(a, b) == ssim(b, a)

    def test_matches_skimage_oracle(self, rng):
        # canonical parameters: gaussian 11x11 sigma 1.5, no sample-covariance
        for shape in ((32, 32), (25, 40)):
            a = rng.integers(0, 256, shape).astype(np.uint8)
            b = np.clip(a.astype(int) + rng.integers(-30, 30, shape), 0, 255).astype(np.uint8)
            mine = ssim(a, b)
            ref = skimage_ssim(a.astype(np.float64), b.astype(np.float64),
                               gaussian_weights=True, sigma=1.5,
                               use_sample_covariance=False, data_range=255)
            assert abs(mine - ref) < 1e-9

    def test_rgb_uses_luma(self, rng):
        rgb = rng.integers(0, 256, (20, 20, 3)).astype(np.uint8)
        luma = to_luma(rgb)
        assert luma.shape == (20, 20)
        expected = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
        assert np.allclose(luma, expected)

    def test_size_mismatch_rejected(self):
        with pytest.raises(FidelityError, match="size mismatch"):
            ssim(constant_image(10, (20, 20)), constant_image(10, (20, 21)))

    def test_image_smaller_than_window_rejected(self):
        with pytest.raises(FidelityError, match="smaller than"):
            ssim(constant_image(10, (10, 40)), constant_image(10, (10, 40)))

    def test_non_uint8_rejected(self):
        img = np.zeros((20, 20), dtype=np.float64)
        with pytest.raises(FidelityError, match="8-bit"):
            ssim(img, img)

    def test_intensity_shift_tracks_constant_closed_form(self):
        # shifting both constants changes SSIM only through C1
        for v1, v2, t in ((50, 90, 40), (10, 30, 100), (100, 150, 25)):
            before = ssim(constant_image(v1), constant_image(v2))
            after = ssim(constant_image(v1 + t), constant_image(v2 + t))
            delta_analytic = (constant_pair_closed_form(v1 + t, v2 + t)
                              - constant_pair_closed_form(v1, v2))
            assert abs((after - before) - delta_analytic) < 1e-12

    def test_range_on_random_pairs(self, rng):
        for _ in range(5):
            a = rng.integers(0, 256, (16, 16)).astype(np.uint8)
            b = rng.integers(0, 256, (16, 16)).astype(np.uint8)
            assert -1.0 <= ssim(a, b) <= 1.0


class TestFitPopulation:
    def test_hand_computed_two_rows(self):
        pop = fit_population([[0.0, 0.0], [2.0, 2.0]])
        assert np.allclose(pop.mean, [1.0, 1.0])
        assert np.allclose(pop.covariance, [[2.0, 2.0], [2.0, 2.0]])

    def test_identical_rows_zero_covariance(self):
        pop = fit_population([[3.0, 1.0]] * 5)
        assert np.allclose(pop.covariance, 0.0)

    def test_single_row_rejected(self):
        with pytest.raises(FidelityError, match="at least 2"):
            fit_population([[1.0, 2.0]])

    def test_covariance_symmetric(self, rng):
        pop = fit_population(rng.standard_normal((50, 8)))
        assert np.max(np.abs(pop.covariance - pop.covariance.T)) < 1e-10

    def test_large_sample_recovers_truth(self, rng):
        true_mean = np.array([1.0, -2.0, 0.5])
        a = rng.standard_normal((3, 3))
        true_cov = a @ a.T + np.eye(3)
        samples = rng.multivariate_normal(true_mean, true_cov, size=10_000)
        pop = fit_population(samples)
        assert np.all(np.abs(pop.mean - true_mean) < 0.1)
        assert np.all(np.abs(pop.covariance - true_cov) < 0.3)


def population(mean, cov):
    """Bypass fitting: population with prescribed moments (features unused)."""
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    features = np.tile(mean, (2, 1))
    return FeaturePopulation(features=features, mean=mean, covariance=cov)


class TestFrechetDistance:
    def test_self_distance_is_zero(self, rng):
        pop = fit_population(rng.standard_normal((40, 6)))
        assert abs(frechet_distance(pop, pop)) <= 1e-6

    def test_identity_covariances_reduce_to_mean_gap(self):
        d = np.array([3.0, 4.0, 0.0])
        p = population(np.zeros(3), np.eye(3))
        q = population(d, np.eye(3))
        assert abs(frechet_distance(p, q) - 25.0) < 1e-8

    def test_diagonal_closed_form_value_5(self):
        p = population([0.0, 0.0], np.diag([1.0, 4.0]))
        q = population([0.0, 0.0], np.diag([9.0, 1.0]))
        # (1-3)^2 + (2-1)^2 = 5
        assert abs(frechet_distance(p, q) - 5.0) < 1e-8

    def test_diagonal_closed_form_randomized(self, rng):
        for _ in range(20):
            dim = int(rng.integers(2, 6))
            sp = rng.uniform(0.1, 5.0, dim)
            sq = rng.uniform(0.1, 5.0, dim)
            mp = rng.standard_normal(dim)
            mq = rng.standard_normal(dim)
            expected = float(np.sum((mp - mq) ** 2)
                             + np.sum((np.sqrt(sp) - np.sqrt(sq)) ** 2))
            got = frechet_distance(population(mp, np.diag(sp)),
                                   population(mq, np.diag(sq)))
            assert abs(got - expected) < 1e-8

    def test_symmetry(self, rng):
        p = fit_population(rng.standard_normal((60, 5)) * 2.0 + 1.0)
        q = fit_population(rng.standard_normal((60, 5)))
        assert abs(frechet_distance(p, q) - frechet_distance(q, p)) < 1e-6

    def test_matches_scipy_sqrtm_oracle(self, rng):
        for _ in range(10):
            p = fit_population(rng.standard_normal((80, 4)) @ rng.standard_normal((4, 4)))
            q = fit_population(rng.standard_normal((80, 4)) + 0.5)
            diff = p.mean - q.mean
            sqrt_prod = scipy.linalg.sqrtm(p.covariance @ q.covariance)
            expected = float(diff @ diff + np.trace(p.covariance) + np.trace(q.covariance)
                             - 2.0 * np.trace(sqrt_prod.real))
            assert abs(frechet_distance(p, q) - expected) < 1e-6

    def test_dimension_mismatch(self, rng):
        p = fit_population(rng.standard_normal((10, 3)))
        q = fit_population(rng.standard_normal((10, 4)))
        with pytest.raises(FidelityError, match="dimension mismatch"):
            frechet_distance(p, q)

    def test_irrecoverably_non_psd_rejected(self):
        bad = population([0.0, 0.0], np.diag([1.0, -0.5]))
        good = population([0.0, 0.0], np.eye(2))
        with pytest.raises(FidelityError, match="not PSD|not positive"):
            frechet_distance(bad, good)

    def test_jitter_recovers_borderline_case(self):
        # eigenvalue -2e-7 is beyond the raw floor but within jitter's reach
        wobbly = population([0.0, 0.0], np.diag([1.0, -2e-7]))
        good = population([0.0, 0.0], np.eye(2))
        value = frechet_distance(wobbly, good)
        assert value >= -1e-6

    def test_nonnegative_within_tolerance(self, rng):
        for _ in range(10):
            p = fit_population(rng.standard_normal((30, 4)))
            q = fit_population(rng.standard_normal((30, 4)))
            assert frechet_distance(p, q) >= -1e-6


class TestAggregateFidelity:
    def test_single_pair(self):
        report = aggregate_fidelity([ScoredPair("a", 0.5, "ssim")])
        assert report["metrics"]["ssim"] == 0.5
        assert report["counts"]["ssim"] == 1

    def test_two_pair_mean(self):
        report = aggregate_fidelity([ScoredPair("a", 0.2, "ssim"),
                                     ScoredPair("b", 0.4, "ssim")])
        assert abs(report["metrics"]["ssim"] - 0.3) < 1e-12

    def test_twenty_pair_mean_matches_hand_sum(self):
        scores = [i / 20 for i in range(-5, 15)]
        pairs = [ScoredPair(f"p{i}", s, "ssim") for i, s in enumerate(scores)]
        expected = float(sum(Fraction(i, 20) for i in range(-5, 15)) / 20)
        report = aggregate_fidelity(pairs)
        assert abs(report["metrics"]["ssim"] - expected) < 1e-12

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError, match="nothing to aggregate"):
            aggregate_fidelity([])

    def test_mixed_metrics_and_fid(self, rng):
        pairs = [ScoredPair("a", 0.5, "ssim"), ScoredPair("a", 31.0, "clip_s"),
                 ScoredPair("b", 28.0, "clip_s")]
        pops = (fit_population(rng.standard_normal((20, 3))),
                fit_population(rng.standard_normal((20, 3))))
        report = aggregate_fidelity(pairs, pops, dataset="demo")
        assert report["dataset"] == "demo"
        assert set(report["metrics"]) == {"ssim", "clip_s", "fid"}
        assert report["metrics"]["clip_s"] == 29.5
        item_a = report["items"][0]
        assert item_a["id"] == "a" and "ssim" in item_a and "clip_s" in item_a

    def test_ssim_score_out_of_range_rejected(self):
        with pytest.raises(ValueError, match=r"\[-1, 1\]"):
            ScoredPair("a", 1.5, "ssim")

    def test_presentation_scaling(self):
        report = aggregate_fidelity([ScoredPair("a", 0.29523, "ssim"),
                                     ScoredPair("a", 26.633, "clip_s")])
        shown = present_report(report)
        assert shown["metrics"]["ssim"] == 29.52
        assert shown["metrics"]["clip_s"] == 26.63
        assert shown["items"][0]["ssim"] == 29.52


class TestHumanScores:
    def test_all_fives(self):
        scores = HumanScoreSet(tuple(("m", f"i{k}", 5) for k in range(3)))
        agg = aggregate_human_scores(scores)
        assert agg["m"]["mean"] == 5.0
        assert agg["m"]["histogram"] == [0, 0, 0, 0, 3]

    def test_uniform_one_to_five(self):
        scores = HumanScoreSet(tuple(("m", f"i{s}", s) for s in range(1, 6)))
        agg = aggregate_human_scores(scores)
        assert agg["m"]["mean"] == 3.0
        assert agg["m"]["histogram"] == [1, 1, 1, 1, 1]

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="outside 1..5"):
            HumanScoreSet((("m", "i", 6),))

    def test_twenty_item_fixture_matches_hand_mean(self):
        # 20 rated items per the sampled-protocol size; mean computed exactly
        values = [5, 4, 4, 3, 5, 2, 4, 5, 3, 4, 5, 5, 4, 3, 4, 2, 5, 4, 4, 5]
        scores = HumanScoreSet(tuple(("judge", f"i{k}", v) for k, v in enumerate(values)))
        agg = aggregate_human_scores(scores)
        assert agg["judge"]["count"] == 20
        assert agg["judge"]["mean"] == 4.0  # (7*5 + 8*4 + 3*3 + 2*2) / 20
        assert agg["judge"]["histogram"] == [0, 2, 3, 8, 7]

    def test_csv_round_trip(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("model,id,score\nA,x,5\nA,y,3\nB,x,1\n")
        scores = load_human_scores(path)
        agg = aggregate_human_scores(scores)
        assert agg["A"]["mean"] == 4.0
        assert agg["B"]["histogram"] == [1, 0, 0, 0, 0]

    def test_csv_bad_header_rejected(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("m,i,s\nA,x,5\n")
        with pytest.raises(CorpusError, match="header"):
            load_human_scores(path)

    def test_csv_bad_score_rejected(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("model,id,score\nA,x,9\n")
        with pytest.raises(CorpusError, match="outside"):
            load_human_scores(path)


class TestFeatureFile:
    def test_round_trip(self, tmp_path, rng):
        path = tmp_path / "feat.jsonl"
        lines = []
        mat = rng.standard_normal((4, 3)).astype(np.float32)
        for i in range(4):
            lines.append('{"id":"f%d","vector":[%s]}'
                         % (i, ",".join(repr(float(v)) for v in mat[i])))
        path.write_text("\n".join(lines) + "\n")
        ids, got = load_feature_file(path)
        assert ids == [f"f{i}" for i in range(4)]
        assert np.allclose(got, mat.astype(np.float64), atol=1e-7)

    def test_inconsistent_dims_rejected(self, tmp_path):
        path = tmp_path / "feat.jsonl"
        path.write_text('{"id":"a","vector":[1,2]}\n{"id":"b","vector":[1]}\n')
        with pytest.raises(CorpusError) as err:
            load_feature_file(path)
        assert err.value.line == 2

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "feat.jsonl"
        path.write_text('{"id":"a","vector":[1]}\n{"id":"a","vector":[2]}\n')
        with pytest.raises(CorpusError, match="duplicate"):
            load_feature_file(path)

    def test_empty_rejected(self, tmp_path):
        path = tmp_path / "feat.jsonl"
        path.write_text("")
        with pytest.raises(CorpusError, match="empty"):
            load_feature_file(path)
