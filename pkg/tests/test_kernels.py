import os

import numpy as np
import pytest

from cellot.complexes import random_complex
from cellot.exceptions import NumericalError, ValidationError
from cellot.kernels import (DistanceCache, KernelSpec, WassersteinFeatures,
                            cross_distance, default_sigma, gram,
                            min_eigenvalue, pairwise_distance, read_matrix_csv,
                            sigma_psd_search, truncate_and_features,
                            write_matrix_csv)


@pytest.fixture
def small_items():
    return [random_complex(s, 5, 0.6, 0.4) for s in range(6)]


class TestKernelSpec:
    def test_defaults_valid(self):
        spec = KernelSpec()
        assert spec.kind == "w"

    def test_invalid_kind(self):
        with pytest.raises(ValidationError):
            KernelSpec(kind="rbf")

    def test_invalid_alpha(self):
        with pytest.raises(ValidationError):
            KernelSpec(kind="fgw", alpha=1.5)

    def test_invalid_sigma(self):
        with pytest.raises(ValidationError):
            KernelSpec(sigma=0.0)

    def test_distance_token_ignores_sigma(self):
        a = KernelSpec(sigma=1.0)
        b = KernelSpec(sigma=9.0)
        assert a.distance_token() == b.distance_token()


class TestPairwiseDistance:
    def test_identical_items_zero_matrix(self, p2):
        d = pairwise_distance([p2, p2, p2], KernelSpec())
        np.testing.assert_allclose(d, np.zeros((3, 3)), atol=1e-6)

    def test_worked_pair(self, p2, isolated_pair):
        d = pairwise_distance([p2, isolated_pair], KernelSpec())
        np.testing.assert_allclose(d[0, 1], 0.70710678, atol=1e-8)
        assert d[0, 0] == 0.0

    def test_symmetric_for_fgw(self, small_items):
        d = pairwise_distance(small_items[:4], KernelSpec(kind="fgw", alpha=0.5))
        np.testing.assert_array_equal(d, d.T)
        assert (np.diag(d) == 0).all()

    def test_cache_hit_bit_identical(self, tmp_path, small_items):
        cache = DistanceCache(tmp_path)
        spec = KernelSpec(kind="fgw", alpha=0.4)
        first = pairwise_distance(small_items, spec, cache=cache)
        second = pairwise_distance(small_items, spec, cache=DistanceCache(tmp_path))
        np.testing.assert_array_equal(first, second)

    def test_parallel_matches_serial(self, small_items):
        spec = KernelSpec()
        serial = pairwise_distance(small_items, spec, n_jobs=1)
        parallel = pairwise_distance(small_items, spec, n_jobs=4)
        np.testing.assert_array_equal(serial, parallel)

    def test_size_mismatch_needs_pad(self, p2):
        bigger = random_complex(0, 4, 0.7, 0.0)
        with pytest.raises(ValidationError, match="equal"):
            pairwise_distance([p2, bigger], KernelSpec())
        d = pairwise_distance([p2, bigger], KernelSpec(), pad=True)
        assert d[0, 1] > 0

    def test_empirical_route_for_other_p(self, p2, p2_edge4):
        d = pairwise_distance([p2, p2_edge4], KernelSpec(p=1.0))
        assert d[0, 1] > 0

    def test_cross_distance_zero_on_same_item(self, small_items):
        d = cross_distance(small_items[:2], small_items[:3], KernelSpec())
        np.testing.assert_allclose(d[0, 0], 0.0, atol=1e-12)
        np.testing.assert_allclose(d[1, 1], 0.0, atol=1e-12)


class TestGram:
    def test_zero_distances_all_ones(self):
        np.testing.assert_array_equal(gram(np.zeros((3, 3)), 1.0),
                                      np.ones((3, 3)))

    def test_worked_entry(self):
        d = np.array([[0.0, 1.0], [1.0, 0.0]])
        k = gram(d, 1.0)
        np.testing.assert_allclose(k[0, 1], np.exp(-0.5), atol=1e-12)
        np.testing.assert_allclose(k[0, 1], 0.606531, atol=1e-6)

    def test_unsquared_convention(self):
        d = np.array([[0.0, 2.0], [2.0, 0.0]])
        np.testing.assert_allclose(gram(d, 1.0, squared=False)[0, 1],
                                   np.exp(-1.0), atol=1e-12)

    def test_tiny_sigma_gives_identity(self):
        d = np.array([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_allclose(gram(d, 1e-6), np.eye(2), atol=1e-9)

    def test_unit_diagonal_and_range(self):
        rng = np.random.default_rng(0)
        pts = rng.standard_normal((6, 2))
        d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        k = gram(d, 0.7)
        np.testing.assert_allclose(np.diag(k), np.ones(6))
        assert (k > 0).all() and (k <= 1).all()

    def test_monotone_in_distance(self):
        d = np.array([[0.0, 1.0, 2.0], [1.0, 0.0, 3.0], [2.0, 3.0, 0.0]])
        k = gram(d, 1.0)
        assert k[0, 1] > k[0, 2] > k[1, 2]

    def test_negative_distances_rejected(self):
        with pytest.raises(ValidationError):
            gram(np.array([[0.0, -1.0], [-1.0, 0.0]]), 1.0)


class TestMinEigenvalue:
    def test_identity(self):
        assert min_eigenvalue(np.eye(4)) == pytest.approx(1.0)

    def test_two_by_two(self):
        k = gram(np.array([[0.0, 1.0], [1.0, 0.0]]), 1.0)
        assert min_eigenvalue(k) == pytest.approx(1 - np.exp(-0.5))

    def test_all_ones_rank_one(self):
        assert min_eigenvalue(np.ones((3, 3))) == pytest.approx(0.0, abs=1e-12)


class TestSigmaSearch:
    def test_two_points_returns_sigma0(self):
        d = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert sigma_psd_search(d, sigma0=2.0) == 2.0

    def test_zero_distances_return_sigma0(self):
        assert sigma_psd_search(np.zeros((3, 3)), sigma0=1.5) == 1.5

    def test_default_sigma_median(self):
        d = np.array([[0.0, 1.0, 3.0], [1.0, 0.0, 2.0], [3.0, 2.0, 0.0]])
        assert default_sigma(d) == 2.0

    def test_postcondition_verified(self):
        # non-Euclidean distances: random symmetric zero-diagonal matrix
        rng = np.random.default_rng(3)
        raw = rng.random((20, 20)) * 4
        d = (raw + raw.T) / 2
        np.fill_diagonal(d, 0.0)
        sigma = sigma_psd_search(d)
        k = gram(d, sigma)
        assert min_eigenvalue(k) >= -1e-10 * np.abs(np.linalg.eigvalsh(k)).max()

    def test_ladder_exhaustion_raises(self):
        rng = np.random.default_rng(3)
        raw = rng.random((20, 20)) * 4
        d = (raw + raw.T) / 2
        np.fill_diagonal(d, 0.0)
        with pytest.raises(NumericalError, match="max_steps"):
            sigma_psd_search(d, sigma0=100.0, max_steps=1)

    def test_invalid_shrink(self):
        with pytest.raises(ValidationError):
            sigma_psd_search(np.zeros((2, 2)), sigma0=1.0, shrink=1.5)


class TestTruncateAndFeatures:
    def test_full_rank_psd_reproduces_kernel(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((5, 5))
        k = a @ a.T + 5 * np.eye(5)
        model = truncate_and_features(k)
        assert model.rank == 5
        np.testing.assert_allclose(model.truncated, k, atol=1e-8)

    def test_all_ones_rank_one(self):
        model = truncate_and_features(np.ones((3, 3)))
        assert model.rank == 1
        np.testing.assert_allclose(model.truncated, np.ones((3, 3)), atol=1e-10)
        np.testing.assert_allclose(model.features @ model.features.T,
                                   np.ones((3, 3)), atol=1e-10)

    def test_indefinite_repair(self):
        rng = np.random.default_rng(5)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        k = (q * np.array([2.0, 1.0, -0.5])) @ q.T
        model = truncate_and_features(k)
        assert model.rank == 2
        assert np.linalg.eigvalsh(model.truncated)[0] >= -1e-12

    def test_features_factorize_truncation(self):
        rng = np.random.default_rng(2)
        q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        k = (q * np.array([5.0, 3.0, 2.0, 1.0, 0.5, -0.2])) @ q.T
        for rank in range(1, 6):
            model = truncate_and_features(k, rank=rank)
            np.testing.assert_allclose(model.features @ model.features.T,
                                       model.truncated, atol=1e-6)

    def test_truncation_error_nonincreasing_in_rank(self):
        rng = np.random.default_rng(4)
        q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        k = (q * np.array([5.0, 3.0, 2.0, 1.0, 0.5, 0.1])) @ q.T
        errors = [np.linalg.norm(truncate_and_features(k, rank=r).truncated - k)
                  for r in range(1, 7)]
        assert all(a >= b - 1e-12 for a, b in zip(errors, errors[1:]))

    def test_rank_beyond_positive_rejected(self):
        model_input = np.ones((3, 3))
        with pytest.raises(ValidationError):
            truncate_and_features(model_input, rank=2)

    def test_no_positive_spectrum_rejected(self):
        with pytest.raises(ValidationError):
            truncate_and_features(-np.eye(2))

    def test_out_of_sample_embedding_consistent(self):
        rng = np.random.default_rng(6)
        a = rng.standard_normal((5, 5))
        k = a @ a.T + 5 * np.eye(5)
        model = truncate_and_features(k)
        embedded = model.embed(k)  # training kernel rows embed to features
        np.testing.assert_allclose(embedded, model.features, atol=1e-8)


class TestWassersteinFeatures:
    def test_fit_transform_matches_features(self, small_items):
        wf = WassersteinFeatures(kind="w")
        feats = wf.fit_transform(small_items)
        np.testing.assert_allclose(wf.transform(small_items), feats, atol=1e-8)
        np.testing.assert_allclose(feats @ feats.T, wf.model_.truncated,
                                   atol=1e-6)

    def test_auto_sigma_is_psd(self, small_items):
        wf = WassersteinFeatures(kind="fgw", alpha=0.5, sigma="auto").fit(small_items)
        assert min_eigenvalue(wf.kernel_) >= -1e-10 * np.abs(
            np.linalg.eigvalsh(wf.kernel_)).max()

    def test_median_sigma_option(self, small_items):
        wf = WassersteinFeatures(kind="w", sigma="median").fit(small_items)
        assert wf.sigma_ == default_sigma(wf.distances_)

    def test_fixed_sigma(self, small_items):
        wf = WassersteinFeatures(kind="w", sigma=0.5).fit(small_items)
        assert wf.sigma_ == 0.5

    def test_get_params_round_trip(self):
        wf = WassersteinFeatures(kind="fgw", alpha=0.25)
        params = wf.get_params()
        again = WassersteinFeatures(**params)
        assert again.alpha == 0.25

    def test_unfitted_transform_raises(self, small_items):
        with pytest.raises(ValidationError):
            WassersteinFeatures().transform(small_items)

    def test_features_at_scale_keeps_dimension(self, small_items):
        wf = WassersteinFeatures(kind="w", rank=3).fit(small_items)
        feats, _ = wf.features_at_scale(0.25)
        assert feats.shape == (len(small_items), 3)


class TestCsv:
    def test_matrix_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        matrix = rng.standard_normal((4, 4))
        path = tmp_path / "gram.csv"
        write_matrix_csv(path, matrix, [f"item{i}" for i in range(4)])
        ids, again = read_matrix_csv(path)
        assert ids == [f"item{i}" for i in range(4)]
        np.testing.assert_array_equal(again, matrix)

    def test_rectangular_features(self, tmp_path):
        rng = np.random.default_rng(1)
        matrix = rng.standard_normal((4, 2))
        path = tmp_path / "features.csv"
        write_matrix_csv(path, matrix, list("abcd"))
        ids, again = read_matrix_csv(path)
        np.testing.assert_array_equal(again, matrix)

    def test_id_count_mismatch(self, tmp_path):
        with pytest.raises(ValidationError):
            write_matrix_csv(tmp_path / "x.csv", np.eye(3), ["a", "b"])
