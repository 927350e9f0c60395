import math

import numpy as np
import pytest

from conftest import random_grid_mrf, random_mrf, random_q
from mfnet import meanfield
from mfnet.mrf import FactorialDistribution, GraphTopology, PairwiseMRF, softmax_init
from mfnet.oracle import brute_force_log_partition, brute_force_marginals, exact_kl


def single_vertex(f):
    topo = GraphTopology(1, np.zeros((0, 2), dtype=np.int64))
    return PairwiseMRF(topo, len(f), np.array([f], dtype=float), np.zeros((0, len(f), len(f))))


class TestLogPartition:
    def test_two_equal_states(self):
        assert brute_force_log_partition(single_vertex([0.0, 0.0])) == pytest.approx(
            math.log(2), abs=1e-12
        )

    def test_two_term_sum(self):
        assert brute_force_log_partition(single_vertex([0.0, 1.0])) == pytest.approx(
            math.log(1 + math.e), abs=1e-9
        )

    def test_nine_equal_states(self, rng):
        m = random_mrf(rng, 2, 3, edge_p=0.0, scale=0.0)
        assert brute_force_log_partition(m) == pytest.approx(math.log(9), abs=1e-12)

    def test_guard_refuses_large_state_space(self):
        topo = GraphTopology(30, np.zeros((0, 2), dtype=np.int64))
        m = PairwiseMRF(topo, 2, np.zeros((30, 2)), np.zeros((0, 2, 2)))
        with pytest.raises(ValueError, match="enumeration"):
            brute_force_log_partition(m)


class TestMarginals:
    def test_edgeless_equals_softmax_init(self, rng):
        m = random_mrf(rng, 5, 3, edge_p=0.0, scale=2.0)
        unary_m, _ = brute_force_marginals(m)
        np.testing.assert_allclose(unary_m, softmax_init(m).probs, atol=1e-12)

    def test_zero_potentials_uniform(self, rng):
        m = random_mrf(rng, 4, 2, edge_p=1.0, scale=0.0)
        unary_m, pair_m = brute_force_marginals(m)
        np.testing.assert_allclose(unary_m, np.full((4, 2), 0.5), atol=1e-12)
        np.testing.assert_allclose(pair_m, np.full_like(pair_m, 0.25), atol=1e-12)

    def test_internal_consistency_random_grid(self, rng):
        m = random_grid_mrf(rng, 3, 3)
        unary_m, pair_m = brute_force_marginals(m)
        np.testing.assert_allclose(unary_m.sum(axis=1), 1.0, atol=1e-10)
        np.testing.assert_allclose(pair_m.sum(axis=(1, 2)), 1.0, atol=1e-10)
        for e, (lo, hi) in enumerate(m.topology.edges):
            np.testing.assert_allclose(pair_m[e].sum(axis=1), unary_m[lo], atol=1e-10)
            np.testing.assert_allclose(pair_m[e].sum(axis=0), unary_m[hi], atol=1e-10)


class TestExactKl:
    def test_edgeless_softmax_init_is_exact(self, rng):
        m = random_mrf(rng, 4, 3, edge_p=0.0, scale=2.0)
        assert abs(exact_kl(softmax_init(m), m)) < 1e-9

    def test_gibbs_inequality_strict(self, rng):
        m = random_mrf(rng, 3, 2, edge_p=0.0, scale=1.0)
        uniform = FactorialDistribution(np.full((3, 2), 0.5))
        assert exact_kl(uniform, m) > 1e-4

    def test_nonnegative_over_random_q(self, rng):
        for _ in range(20):
            m = random_grid_mrf(rng, 2, 3)
            for _ in range(5):
                assert exact_kl(random_q(rng, 6, 2), m) >= -1e-9

    def test_mean_field_improves_on_init(self, rng):
        m = random_grid_mrf(rng, 2, 2)
        q0 = softmax_init(m)
        q, _ = meanfield.run(m, q0, 100, meanfield.raster_schedule(4))
        assert -1e-9 <= exact_kl(q, m) <= exact_kl(q0, m) + 1e-9

    def test_oracle_q_beats_other_q(self, rng):
        # the product of exact marginals is a strong factorial candidate
        m = random_grid_mrf(rng, 2, 2)
        unary_m, _ = brute_force_marginals(m)
        q_opt = FactorialDistribution(unary_m / unary_m.sum(axis=1, keepdims=True))
        from mfnet.mrf import unnormalized_kl

        assert unnormalized_kl(q_opt, m) < unnormalized_kl(random_q(rng, 4, 2), m)
