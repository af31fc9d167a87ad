import math

import numpy as np
import pytest

from mllc import InputError
from mllc.multilevel import MllcParams
from mllc.synth import (
    REFERENCE_CLASS_CLUSTER_PCT,
    REFERENCE_CLASS_COUNTRY_COUNTS,
    REFERENCE_CLUSTER_SIZES_PCT,
    REFERENCE_ITEM_PROBS_PCT,
    RegressionScenario,
    ScenarioSpec,
    brute_force_loglik,
    enumeration_cost,
    reference_item_names,
    reference_profile_params,
    simulate_mllc,
    simulate_ri_logit,
)
from conftest import separated_mllc_params


class TestSimulateMllc:
    def test_same_seed_identical_dataset(self):
        params = separated_mllc_params()
        spec = ScenarioSpec(params=params, n_groups=8, group_sizes=20, seed=42)
        d1, t1 = simulate_mllc(spec)
        d2, t2 = simulate_mllc(spec)
        assert np.array_equal(d1.responses, d2.responses)
        assert np.array_equal(t1.group_class, t2.group_class)
        assert np.array_equal(t1.unit_cluster, t2.unit_cluster)
        assert np.array_equal(d1.weights, d2.weights)

    def test_different_seed_differs(self):
        params = separated_mllc_params()
        d1, _ = simulate_mllc(ScenarioSpec(params=params, n_groups=8, group_sizes=20, seed=1))
        d2, _ = simulate_mllc(ScenarioSpec(params=params, n_groups=8, group_sizes=20, seed=2))
        assert not np.array_equal(d1.responses, d2.responses)

    def test_degenerate_params_deterministic_dataset(self):
        item = (np.array([[0.0, 1.0], [1.0, 0.0]]),)
        params = MllcParams(
            class_weights=np.array([1.0]),
            cluster_table=np.array([[1.0, 0.0]]),
            item_probs=item,
        )
        data, truth = simulate_mllc(ScenarioSpec(params=params, n_groups=3, group_sizes=4, seed=0))
        assert np.all(truth.unit_cluster == 0)
        assert np.all(data.responses == 2)

    def test_marginals_match_mixture_implied(self):
        params = separated_mllc_params()
        # many groups, not just many units: the class draw is per group, so
        # J controls the sampling error of the class mix
        data, _ = simulate_mllc(
            ScenarioSpec(params=params, n_groups=2000, group_sizes=50, seed=3)
        )
        # implied marginal: sum_h P(W=h) sum_l P(Z=l|W=h) P(Y_k=2|Z=l)
        implied = np.array(
            [
                params.class_weights @ params.cluster_table @ p[:, 1]
                for p in params.item_probs
            ]
        )
        empirical = (data.responses == 2).mean(axis=0)
        assert np.abs(empirical - implied).max() < 0.01

    def test_schema_valid_output(self):
        params = separated_mllc_params()
        data, _ = simulate_mllc(
            ScenarioSpec(params=params, n_groups=5, group_sizes=10, seed=9,
                         weight_scheme="random-positive")
        )
        assert data.validated
        assert np.all(data.weights > 0)

    def test_rejects_bad_weight_scheme(self):
        params = separated_mllc_params()
        with pytest.raises(InputError):
            simulate_mllc(ScenarioSpec(params=params, n_groups=2, group_sizes=3, seed=0,
                                       weight_scheme="nope"))


class TestSimulateRegression:
    def test_symmetric_null_frequency(self):
        scen = RegressionScenario(beta=(0.0, 0.0), var_u=0.0, n_groups=100,
                                  group_sizes=1000, seed=1)
        data, _ = simulate_ri_logit(scen)
        freq = (data.responses[:, 0] == 2).mean()
        assert abs(freq - 0.5) < 0.01

    def test_between_group_variance_grows_with_var_u(self):
        spreads = []
        for var in (0.0, 0.5, 2.0):
            scen = RegressionScenario(beta=(0.0, 0.0), var_u=var, n_groups=60,
                                      group_sizes=200, seed=2)
            data, _ = simulate_ri_logit(scen)
            rates = [
                (data.responses[data.group_index == j, 0] == 2).mean()
                for j in range(data.n_groups)
            ]
            spreads.append(np.var(rates))
        assert spreads[0] < spreads[1] < spreads[2]

    def test_same_seed_identical(self):
        scen = RegressionScenario(beta=(0.3, -0.4), var_u=0.2, n_groups=10, group_sizes=15, seed=5)
        d1, t1 = simulate_ri_logit(scen)
        d2, t2 = simulate_ri_logit(scen)
        assert np.array_equal(d1.responses, d2.responses)
        assert np.array_equal(t1.random_effects, t2.random_effects)

    def test_rejects_negative_variance(self):
        with pytest.raises(InputError):
            simulate_ri_logit(RegressionScenario(beta=(0.0,), var_u=-1.0, n_groups=2, group_sizes=3))


class TestReferenceParams:
    def test_cluster_sizes_sum_pre_normalization(self):
        assert sum(REFERENCE_CLUSTER_SIZES_PCT) / 100.0 == pytest.approx(0.9998, abs=1e-12)

    def test_saving_energy_cluster3(self):
        assert REFERENCE_ITEM_PROBS_PCT["saving_energy"][2] / 100.0 == pytest.approx(0.9910)
        params = reference_profile_params()
        k = reference_item_names().index("saving_energy")
        assert params.item_probs[k][2, 1] == pytest.approx(0.9910, abs=1e-12)

    def test_class_weights_from_country_counts(self):
        params = reference_profile_params()
        np.testing.assert_allclose(params.class_weights, np.array([9, 8, 6, 5]) / 28.0)
        assert REFERENCE_CLASS_COUNTRY_COUNTS == (9, 8, 6, 5)

    def test_rows_renormalized_to_exact_simplex(self):
        params = reference_profile_params()
        np.testing.assert_allclose(params.cluster_table.sum(axis=1), 1.0, atol=1e-15)
        for p in params.item_probs:
            np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-15)
        # raw published rows carry display rounding
        raw_sums = [sum(r) for r in REFERENCE_CLASS_CLUSTER_PCT]
        assert all(99.9 < s < 100.1 for s in raw_sums)

    def test_shape_six_clusters_four_classes_eight_items(self):
        params = reference_profile_params()
        assert params.n_clusters == 6
        assert params.n_classes == 4
        assert len(params.item_probs) == 8


class TestBruteForce:
    def test_uniform_params_reduce_to_level_count_products(self):
        from conftest import make_dataset

        levels = [2, 3]
        data = make_dataset([(1, 2), (2, 3)], ["a", "b"], levels)
        L, H = 2, 2
        params = MllcParams(
            class_weights=np.full(H, 0.5),
            cluster_table=np.full((H, L), 0.5),
            item_probs=tuple(np.full((L, s), 1.0 / s) for s in levels),
        )
        expected = sum(math.log(1.0 / s) for s in levels) * data.n_units
        assert brute_force_loglik(data, params) == pytest.approx(expected, abs=1e-12)

    def test_h1_l1_hand_check(self):
        from conftest import make_dataset

        data = make_dataset([(1,), (2,), (2,)], ["a", "a", "b"], [2])
        params = MllcParams(
            class_weights=np.ones(1),
            cluster_table=np.ones((1, 1)),
            item_probs=(np.array([[0.3, 0.7]]),),
        )
        expected = math.log(0.3) + 2 * math.log(0.7)
        assert brute_force_loglik(data, params) == pytest.approx(expected, abs=1e-12)

    def test_rejects_oversized_instance_with_estimate(self):
        params = separated_mllc_params()
        data, _ = simulate_mllc(ScenarioSpec(params=params, n_groups=3, group_sizes=30, seed=0))
        assert enumeration_cost(data, params) > 10**6
        with pytest.raises(InputError, match="terms"):
            brute_force_loglik(data, params)
