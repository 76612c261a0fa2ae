import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rcdemand.demand import (DemandOracle, aggregate_shares_mc, bundle_choice_probabilities,
                             bundle_pair_probability, check_menu_support,
                             conditional_logit_shares, multiunit_choice_probabilities,
                             pcm_choice_probabilities, simulated_bundle_shares,
                             smoothed_shares)
from rcdemand.densities import Normal, PointMass
from rcdemand.errors import SupportError
from rcdemand.model import ModelSpec, ProductMenu

from .oracles import (bundle_nonnegative_branch, bundle_shares_by_simulation,
                      logit_shares_by_simulation, multiunit_shares_by_simulation,
                      quadrant_probability)

# frozen from logit_shares_by_simulation with 10^6 draws: 0.43225 +- 0.0005
TWO_GOOD_LOGIT_SHARE = 0.5 * (1 - np.exp(-2.0))


def se(p, n):
    return np.sqrt(np.maximum(p * (1 - p), 1e-12) / n)


def menu(p, delta, x2=None):
    p = np.asarray(p, dtype=float)
    x2 = np.zeros(p.shape + (0,)) if x2 is None else x2
    return ProductMenu(x2, p, delta)


class TestClosedForms:
    def test_single_good_at_zero(self):
        np.testing.assert_allclose(conditional_logit_shares([0.0]),
                                   [np.exp(-1), 1 - np.exp(-1)], atol=1e-15)

    def test_two_goods_at_zero(self):
        s = conditional_logit_shares([0.0, 0.0])
        assert s[1] == pytest.approx(TWO_GOOD_LOGIT_SHARE, abs=1e-15)
        sim = logit_shares_by_simulation([0.0, 0.0], 10 ** 6, seed=4)
        assert abs(sim[1] - s[1]) <= 3 * se(s[1], 10 ** 6)

    def test_outside_takes_all_in_the_limit(self):
        s = conditional_logit_shares([-800.0, -900.0])
        assert s[0] == 1.0

    def test_no_overflow_for_large_indices(self):
        s = conditional_logit_shares([800.0, 799.0])
        assert np.all(np.isfinite(s))
        assert s[0] == 0.0

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=6))
    def test_sums_to_one(self, v):
        assert conditional_logit_shares(v).sum() == pytest.approx(1.0, abs=1e-12)

    def test_matches_simulation_on_random_menus(self):
        rng = np.random.default_rng(0)
        n = 200000
        for k in range(10):
            v = rng.normal(0, 1.5, size=rng.integers(1, 4))
            s = conditional_logit_shares(v)
            sim = logit_shares_by_simulation(v, n, seed=k)
            assert np.all(np.abs(sim - s) <= 3.5 * se(s, n))


class TestBundlePair:
    def test_quadrant(self):
        assert bundle_pair_probability(0.0, 0.0, 0.0, -1) == pytest.approx(0.25)

    def test_everything_below_infinity(self):
        assert bundle_pair_probability(np.inf, np.inf, np.inf, -1) == pytest.approx(1.0)

    def test_nonnegative_branch(self):
        assert bundle_pair_probability(0.0, 0.0, 0.0, 1) == pytest.approx(0.375, abs=1e-7)
        assert bundle_nonnegative_branch(0.0, 0.0) == pytest.approx(0.375, abs=1e-9)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-0.9, 0.9))
    def test_quadrant_against_scipy(self, h1, h2, rho):
        cov = [[1.0, rho], [rho, 1.0]]
        got = bundle_pair_probability(h1, h2, 0.0, -1, cov)
        assert got == pytest.approx(quadrant_probability(h1, h2, rho), abs=1e-6)

    @given(st.floats(-3, 3), st.floats(-3, 3))
    def test_sum_branch_against_quadrature(self, h2, h3):
        got = bundle_pair_probability(0.0, h2, h3, 1)
        assert got == pytest.approx(bundle_nonnegative_branch(h2, h3), abs=1e-6)

    def test_rejects_indefinite(self):
        with pytest.raises(ValueError):
            bundle_pair_probability(0, 0, 0, 1, [[1.0, 2.0], [2.0, 1.0]])


class TestChoiceProbabilities:
    @pytest.mark.parametrize("v1, v2, delta", [(0.2, -0.3, 0.5), (0.0, 0.4, -0.7),
                                               (-1.0, 1.0, 0.0), (0.5, 0.5, 2.0)])
    def test_bundles_against_simulation(self, v1, v2, delta):
        n = 400000
        sim = bundle_shares_by_simulation(v1, v2, delta, n, seed=1)
        got = bundle_choice_probabilities(v1, v2, delta)
        assert np.all(np.abs(got - sim) <= 4 * se(got, n))

    def test_bundles_correlated(self):
        cov = [[1.0, 0.5], [0.5, 2.0]]
        n = 400000
        sim = bundle_shares_by_simulation(0.1, -0.2, 0.6, n, seed=2, cov=cov)
        got = bundle_choice_probabilities(0.1, -0.2, 0.6, np.array(cov))
        assert np.all(np.abs(got - sim) <= 4 * se(got, n))

    def test_uncorrelated_shortcut_matches_general_path(self):
        rng = np.random.default_rng(3)
        v1, v2, d = rng.normal(size=(3, 500))
        tiny = np.array([[1.0, 1e-300], [1e-300, 1.0]])
        np.testing.assert_allclose(bundle_choice_probabilities(v1, v2, d),
                                   bundle_choice_probabilities(v1, v2, d, tiny), atol=1e-12)

    def test_multiunit_against_simulation(self):
        n = 400000
        args = (0.3, -0.2, 0.4, -0.5, 0.1)
        sim = multiunit_shares_by_simulation(*args, n, seed=5)
        got = multiunit_choice_probabilities(*args)
        assert np.all(np.abs(got - sim) <= 4 * se(got, n))

    def test_pcm_point_mass_alpha(self):
        p = pcm_choice_probabilities(np.array([0.5]), np.array([0.0]), -1.0, 0.0)
        np.testing.assert_allclose(p, [0.0, 1.0])

    def test_pcm_against_simulation(self):
        rng = np.random.default_rng(6)
        base, price = np.array([0.5, 0.2, -0.1]), np.array([1.0, 0.5, 0.2])
        alpha = rng.normal(-0.8, 0.6, 400000)
        u = base + alpha[:, None] * price
        best = u.max(axis=1)
        sim = np.bincount(np.where(best > 0, u.argmax(axis=1) + 1, 0), minlength=4) / alpha.size
        got = pcm_choice_probabilities(base, price, -0.8, 0.6)
        assert np.all(np.abs(got - sim) <= 4 * se(got, alpha.size))


class TestAggregateShares:
    def test_pcm_point_mass_is_deterministic(self):
        spec = ModelSpec("multinomial", 1, sigma_eps=0)
        s = aggregate_shares_mc(spec, PointMass([-1.0]), menu([0.0], [0.5]), 100, 0)
        np.testing.assert_array_equal(s, [0.0, 1.0])

    def test_blp_single_good(self):
        spec = ModelSpec("multinomial", 1)
        n = 10 ** 6
        s = aggregate_shares_mc(spec, PointMass([-1.0]), menu([0.0], [0.0]), n, 0)
        target = 1 - np.exp(-1)
        assert abs(s[1] - target) <= 3 * se(target, n)

    def test_bundles_without_tastes(self):
        spec = ModelSpec("bundles", 2, sigma_eps=0)
        s = aggregate_shares_mc(spec, PointMass([0.0, 0.3]), menu([0.0, 0.0], [0.0, 0.0]), 50, 0)
        np.testing.assert_array_equal(s, [0, 0, 0, 1])

    def test_shares_sum_to_one(self):
        spec = ModelSpec("multinomial", 3, d_x=2)
        rng = np.random.default_rng(0)
        m = menu(rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), rng.normal(size=(5, 3, 1)))
        for smooth in (False, True):
            s = DemandOracle(spec, Normal.standard(2), 2000, 1, smooth=smooth)(m)
            np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)

    def test_logit_oracle_matches_closed_form_for_point_mass(self):
        spec = ModelSpec("multinomial", 2)
        n = 400000
        raw = aggregate_shares_mc(spec, PointMass([-1.0]), menu([0.5, 0.0], [1.0, -0.2]), n, 3)
        exact = conditional_logit_shares(np.array([0.5, -0.2]))
        assert np.all(np.abs(raw - exact) <= 3.5 * se(exact, n))

    def test_smoothed_bundles_match_counting(self):
        spec = ModelSpec("bundles", 2, d_x=1)
        dens = Normal([-0.5, 0.4], [[0.2, 0.0], [0.0, 0.3]])
        m = menu([0.5, 1.0], [0.3, 0.2])
        n = 200000
        raw = aggregate_shares_mc(spec, dens, m, n, 1)
        smooth = simulated_bundle_shares(spec, dens, m, n, 2)
        assert np.all(np.abs(raw - smooth) <= 3 * np.sqrt(2) * se(smooth, n))

    def test_simulated_bundles_point_mass(self):
        spec = ModelSpec("bundles", 2, d_x=1)
        got = simulated_bundle_shares(spec, PointMass([-1.0, 0.4]), menu([0.5, 1.0], [0.3, 0.2]),
                                      1, 0)
        np.testing.assert_allclose(got, bundle_choice_probabilities(0.3 - 0.5, 0.2 - 1.0, 0.4),
                                   atol=1e-14)

    def test_reproducible(self):
        spec = ModelSpec("bundles", 2, d_x=1)
        dens = Normal([-0.5, 0.4], np.eye(2))
        m = menu([0.5, 1.0], [0.3, 0.2])
        np.testing.assert_array_equal(simulated_bundle_shares(spec, dens, m, 1, 9),
                                      simulated_bundle_shares(spec, dens, m, 1, 9))

    def test_thread_count_does_not_change_results(self):
        spec = ModelSpec("multinomial", 2)
        rng = np.random.default_rng(1)
        m = menu(rng.normal(size=(40, 2)), rng.normal(size=(40, 2)))
        one = DemandOracle(spec, Normal.standard(1), 3000, 2, block=10 ** 5)(m)
        four = DemandOracle(spec, Normal.standard(1), 3000, 2, threads=4, block=10 ** 5)(m)
        np.testing.assert_array_equal(one, four)

    def test_support_check(self):
        spec = ModelSpec("multinomial", 1)
        oracle = DemandOracle(spec, Normal.standard(1), 10, support=([-1, -1], [1, 1]))
        with pytest.raises(SupportError) as err:
            check_menu_support(oracle, menu([[0.0], [2.0]], [[0.0], [0.0]]))
        assert err.value.offending.tolist() == [[1]]


class TestMonotonicity:
    @given(st.integers(0, 2), st.floats(0.05, 1.0), st.integers(0, 100))
    def test_multinomial_own_up_others_down(self, j, step, seed):
        spec = ModelSpec("multinomial", 3)
        rng = np.random.default_rng(seed)
        p, d = rng.normal(size=3), rng.normal(size=3)
        oracle = DemandOracle(spec, Normal([-1.0], [[0.25]]), 500, 0)
        d2 = d.copy()
        d2[j] += step
        before, after = oracle(menu(p, d)), oracle(menu(p, d2))
        assert after[j + 1] > before[j + 1]
        others = [k for k in range(4) if k != j + 1]
        assert np.all(after[others] < before[others])

    @given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.integers(0, 50))
    def test_bundle_sign_pattern(self, d1, d2, seed):
        spec = ModelSpec("bundles", 2, d_x=1)
        oracle = DemandOracle(spec, Normal([-0.5, 0.3], np.diag([0.1, 0.2])), 200, seed)
        h = 1e-5
        base = oracle(menu([0.2, 0.1], [d1, d2]))
        up1 = oracle(menu([0.2, 0.1], [d1 + h, d2]))
        up2 = oracle(menu([0.2, 0.1], [d1, d2 + h]))
        s00, s01 = spec.label_index((0, 0)), spec.label_index((0, 1))
        assert up1[s00] < base[s00] and up2[s00] < base[s00]
        assert up1[s01] < base[s01] and up2[s01] > base[s01]
