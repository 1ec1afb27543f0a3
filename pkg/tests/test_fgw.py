import itertools

import numpy as np
import pytest

from cellot.complexes import CWComplex, random_complex
from cellot.exceptions import ValidationError
from cellot.fgw import (FGWInstance, build_instance, fgw_limit_check,
                        fgw_objective, fgw_solve)
from cellot.transport import lp_transport


def two_point_complex(weights):
    return CWComplex(0, [2], [], [np.asarray(weights, dtype=float)])


def brute_force_tensor_objective(inst, coupling):
    """Direct four-index sum; the independent oracle for fgw_objective."""
    m = inst.feature_costs
    c1, c2 = inst.structure_source, inst.structure_target
    n, mm = m.shape
    total = 0.0
    for i, j, k, l in itertools.product(range(n), range(mm), range(n), range(mm)):
        term = (1 - inst.alpha) * m[i, j] ** inst.p \
            + inst.alpha * abs(c1[i, k] - c2[j, l]) ** inst.p
        total += term * coupling[i, j] * coupling[k, l]
    return total


class TestBuildInstance:
    def test_weight_difference_matrix(self):
        inst = build_instance(two_point_complex([1, 2]),
                              two_point_complex([1, 3]))
        np.testing.assert_allclose(inst.feature_costs, [[0, 2], [1, 1]])

    def test_identical_complexes_zero_feature_diagonal(self, p2):
        inst = build_instance(p2, p2)
        np.testing.assert_allclose(np.diag(inst.feature_costs), 0.0)

    def test_uniform_histograms(self, p2):
        inst = build_instance(p2, p2)
        np.testing.assert_allclose(inst.source_masses, [0.5, 0.5])

    def test_weight_histograms(self):
        inst = build_instance(two_point_complex([1, 3]),
                              two_point_complex([1, 1]),
                              histograms="weights")
        np.testing.assert_allclose(inst.source_masses, [0.25, 0.75])

    def test_missing_degree_rejected(self, p2):
        with pytest.raises(ValidationError, match="degree"):
            build_instance(p2, p2, degree=2, alpha=0.5)
        # degree 1 exists on p2 (one edge) but not on an edgeless complex
        with pytest.raises(ValidationError):
            build_instance(p2, two_point_complex([1, 1]), degree=1)

    def test_structure_is_symmetric_representative(self, p2_edge4):
        inst = build_instance(p2_edge4, p2_edge4)
        np.testing.assert_allclose(inst.structure_source, [[4, -4], [-4, 4]])


class TestObjective:
    def test_identity_instance_identity_coupling_zero(self, p2):
        inst = build_instance(p2, p2, alpha=0.7)
        assert fgw_objective(inst, np.eye(2) / 2) == 0.0

    def test_constant_structure_instance(self, p2):
        edgeless = two_point_complex([1, 1])
        inst = build_instance(p2, edgeless, alpha=1.0, p=1)
        for coupling in (np.eye(2) / 2, (np.ones((2, 2)) - np.eye(2)) / 2,
                         np.full((2, 2), 0.25)):
            np.testing.assert_allclose(fgw_objective(inst, coupling), 1.0,
                                       atol=1e-12)

    def test_alpha_zero_reduces_to_linear_cost(self):
        inst = build_instance(two_point_complex([1, 2]),
                              two_point_complex([1, 3]), alpha=0.0, p=2)
        coupling = np.full((2, 2), 0.25)
        expected = float((inst.feature_costs ** 2 * coupling).sum())
        np.testing.assert_allclose(fgw_objective(inst, coupling), expected,
                                   atol=1e-14)

    def test_marginal_violation_rejected(self, p2):
        inst = build_instance(p2, p2)
        with pytest.raises(ValidationError, match="marginals"):
            fgw_objective(inst, np.full((2, 2), 0.3))

    @pytest.mark.parametrize("p", [1.0, 2.0, 3.0])
    @pytest.mark.parametrize("seed", range(3))
    def test_matches_brute_force_tensor(self, p, seed):
        a = random_complex(seed, 4, 0.6, 0.4)
        b = random_complex(seed + 50, 4, 0.6, 0.4)
        inst = build_instance(a, b, alpha=0.6, p=p)
        rng = np.random.default_rng(seed)
        # random coupling with correct marginals via Sinkhorn-style scaling
        coupling = np.full((4, 4), 1.0 / 16)
        np.testing.assert_allclose(
            fgw_objective(inst, coupling),
            brute_force_tensor_objective(inst, coupling), atol=1e-10)
        plan, _ = fgw_solve(inst)
        np.testing.assert_allclose(
            fgw_objective(inst, plan.coupling),
            brute_force_tensor_objective(inst, plan.coupling), atol=1e-10)

    def test_tensor_size_cap(self):
        big = CWComplex(0, [40], [], [np.ones(40)])
        inst = build_instance(big, big, p=1)
        with pytest.raises(ValidationError, match="30"):
            fgw_objective(inst, np.eye(40) / 40)


class TestSolve:
    def test_identical_complexes_reach_zero(self):
        for seed in range(5):
            c = random_complex(seed, 4, 0.6, 0.4)
            inst = build_instance(c, c, alpha=0.5)
            _, value = fgw_solve(inst)
            assert abs(value) <= 1e-10

    def test_constant_objective_instance(self, p2):
        inst = build_instance(p2, two_point_complex([1, 1]), alpha=1.0, p=1)
        plan, value = fgw_solve(inst)
        np.testing.assert_allclose(value, 1.0, atol=1e-12)

    def test_alpha_zero_equals_lp(self):
        for seed in range(20):
            a = random_complex(seed, 4, 0.6, 0.3)
            b = random_complex(seed + 1000, 4, 0.6, 0.3)
            inst = build_instance(a, b, alpha=0.0, p=2)
            _, value = fgw_solve(inst)
            reference = lp_transport(inst.feature_costs ** 2,
                                     inst.source_masses,
                                     inst.target_masses).cost
            np.testing.assert_allclose(value, reference, atol=1e-8)

    def test_2x2_coupling_grid_brute_force(self):
        # couplings of uniform 2x2 instances form the one-parameter family
        # t * I/2 + (1-t) * antidiag/2
        grid = np.linspace(0.0, 1.0, 101)
        eye = np.eye(2) / 2
        anti = (np.ones((2, 2)) - np.eye(2)) / 2
        rng = np.random.default_rng(7)
        for seed in range(10):
            a = random_complex(seed, 2, 1.0, 0.0)
            b = random_complex(seed + 300, 2, 1.0, 0.0)
            inst = build_instance(a, b, alpha=0.5, p=2)
            _, value = fgw_solve(inst)
            best = min(fgw_objective(inst, t * eye + (1 - t) * anti)
                       for t in grid)
            assert value <= best + 1e-12
            np.testing.assert_allclose(value, best, atol=1e-4)

    def test_relabeling_invariance(self):
        a = random_complex(3, 4, 0.7, 0.0)
        b = random_complex(4, 4, 0.7, 0.0)
        inst = build_instance(a, b, alpha=0.5)
        _, value = fgw_solve(inst)
        perm = [2, 0, 3, 1]
        def permute(inst, perm):
            p = np.asarray(perm)
            return FGWInstance(inst.feature_costs[p][:, p],
                               inst.structure_source[p][:, p],
                               inst.structure_target[p][:, p],
                               inst.source_masses[p], inst.target_masses[p],
                               alpha=inst.alpha, p=inst.p)
        _, permuted_value = fgw_solve(permute(inst, perm))
        np.testing.assert_allclose(value, permuted_value, atol=1e-8)

    @pytest.mark.parametrize("n", [2, 3])
    def test_never_worse_than_best_permutation_vertex(self, n):
        from cellot.transport import permutation_couplings

        for seed in range(10):
            a = random_complex(seed, n, 1.0, 0.3)
            b = random_complex(seed + 77, n, 1.0, 0.3)
            inst = build_instance(a, b, alpha=0.5, p=2)
            _, value = fgw_solve(inst)
            best_vertex = min(fgw_objective(inst, c)
                              for c in permutation_couplings(n))
            assert value <= best_vertex + 1e-8

    def test_sinkhorn_inner_solver(self, p2):
        inst = build_instance(p2, two_point_complex([1, 1]), alpha=1.0, p=1)
        _, value = fgw_solve(inst, inner_solver="sinkhorn")
        np.testing.assert_allclose(value, 1.0, atol=1e-6)

    def test_unknown_inner_solver(self, p2):
        inst = build_instance(p2, p2)
        with pytest.raises(ValidationError):
            fgw_solve(inst, inner_solver="nope")


class TestLimitCheck:
    def test_endpoints(self, p2):
        inst = build_instance(p2, two_point_complex([1, 1]), alpha=0.5, p=1)
        report = fgw_limit_check(inst, [0.25, 0.5, 0.75])
        assert report.alphas[0] == 0.0 and report.alphas[-1] == 1.0
        assert report.gap_alpha0 <= 1e-8
        np.testing.assert_allclose(report.objectives[-1], 1.0, atol=1e-8)
        assert report.gap_alpha1 <= 1e-8
        assert all(np.isfinite(v) for v in report.objectives)

    def test_ladder_must_be_interior(self, p2):
        inst = build_instance(p2, p2)
        with pytest.raises(ValidationError):
            fgw_limit_check(inst, [0.0, 0.5])
