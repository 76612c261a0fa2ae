import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from rcdemand.demand import DemandOracle
from rcdemand.densities import GridDensity, Gumbel, Normal, NormalMixture, PointMass, ProductDensity
from rcdemand.errors import CoverageError, DimensionError, SupportError
from rcdemand.model import ModelSpec, ProductMenu
from rcdemand.radon import (DensityGrid, PhiEvaluator, Sinogram, SphereGrid, TruncationWarning,
                            assemble_sinogram, build_phi_blp, build_phi_bundle, build_phi_pcm,
                            characteristic_points, differentiate_offset, fbp_filter_kernel,
                            fbp_invert, full_subset_sum, marginalization_map, omega_r,
                            radon_forward, sinogram_from_density)

from .oracles import normal_pdf_grid

MIXTURE = NormalMixture.independent([0.5, 0.5], [[-1.5, -0.5], [1.5, 0.8]],
                                    [[0.5, 0.6], [0.6, 0.5]])


def unit(theta):
    return np.array([np.cos(theta), np.sin(theta)])


def scalar_menu(x2, p, delta):
    """Menu with one observed characteristic per good (d_x = 2)."""
    x2 = np.asarray(x2, dtype=float)
    return ProductMenu(x2[..., None], np.asarray(p, float), np.asarray(delta, float))


class TestSphereGrid:
    def test_hemisphere_weights(self):
        assert SphereGrid.hemisphere(2, 64, -1, 1, 5).weights.sum() == pytest.approx(np.pi)
        assert SphereGrid.hemisphere(3, 100, -1, 1, 5).weights.sum() == pytest.approx(2 * np.pi)

    @pytest.mark.parametrize("q", [2, 3])
    def test_directions_on_upper_hemisphere(self, q):
        w = SphereGrid.hemisphere(q, 200, -1, 1, 5).directions
        np.testing.assert_allclose(np.linalg.norm(w, axis=1), 1.0, atol=1e-12)
        assert np.all(w[:, -1] >= 0)

    def test_irregular_2d_directions_get_arc_weights(self):
        ang = np.array([0.1, 0.5, 2.0])
        grid = SphereGrid(np.stack([np.cos(ang), np.sin(ang)], 1), np.linspace(0, 1, 3))
        assert grid.weights.sum() == pytest.approx(np.pi)

    @pytest.mark.parametrize("dirs, offsets", [
        ([[1.0, 1.0]], [0.0, 1.0]),
        ([[0.6, -0.8]], [0.0, 1.0]),
        ([[1.0, 0.0]], [0.0, 0.0]),
        ([[1.0, 0.0]], [0.0, 1.0, 3.0]),
    ])
    def test_invalid(self, dirs, offsets):
        with pytest.raises(DimensionError):
            SphereGrid(np.array(dirs), np.array(offsets))

    def test_sinogram_shape_checked(self):
        grid = SphereGrid.hemisphere(2, 4, -1, 1, 5)
        with pytest.raises(DimensionError):
            Sinogram(grid, np.zeros((5, 4)))


class TestRadonForward:
    @given(st.floats(0, 2 * np.pi), st.floats(-5, 5))
    def test_standard_normal_closed_form(self, theta, u):
        got = radon_forward(Normal.standard(2), unit(theta), u)
        assert got == pytest.approx(np.exp(-u * u / 2) / np.sqrt(2 * np.pi), rel=1e-12)

    @given(st.floats(0, 2 * np.pi), st.floats(-4, 4))
    def test_even(self, theta, u):
        w = unit(theta)
        assert radon_forward(MIXTURE, w, u) == pytest.approx(radon_forward(MIXTURE, -w, -u),
                                                             rel=1e-12)

    def test_narrow_normal_peaks_at_projection(self):
        theta0 = np.array([0.4, -0.7])
        w = unit(2.0)
        u = np.linspace(-2, 2, 40001)
        vals = radon_forward(Normal(theta0, 1e-6 * np.eye(2)), w, u)
        assert u[np.argmax(vals)] == pytest.approx(w @ theta0, abs=2e-4)

    def test_grid_agrees_with_closed_form_in_3d(self):
        x = np.linspace(-6, 6, 128)
        g = GridDensity.normalized([x, x, x], normal_pdf_grid(np.zeros(3), np.eye(3), [x, x, x]))
        w = np.array([0.3, 0.4, np.sqrt(0.75)])
        u = np.array([-1.0, 0.0, 0.5, 2.0])
        np.testing.assert_allclose(radon_forward(g, w, u), stats.norm.pdf(u), atol=1e-3)

    def test_rejects_non_unit(self):
        with pytest.raises(ValueError):
            radon_forward(Normal.standard(2), np.array([1.0, 1.0]), 0.0)

    def test_rejects_wrong_dimension(self):
        with pytest.raises(DimensionError):
            radon_forward(Normal.standard(2), np.array([1.0, 0.0, 0.0]), 0.0)


class TestMarginalizationMap:
    def test_empty_set_is_identity(self):
        m = scalar_menu([1.0, 3.0], [0.5, 2.0], [0.1, 0.2])
        out = marginalization_map(0, [], m)
        np.testing.assert_array_equal(out.x2, m.x2)
        np.testing.assert_array_equal(out.delta, m.delta)

    def test_reflection_example(self):
        out = marginalization_map(0, [1], scalar_menu([1.0, 3.0], [0.0, 0.0], [0.0, 0.0]))
        assert out.x2[1, 0] == -1.0

    @given(st.lists(st.floats(-5, 5), min_size=9, max_size=9), st.integers(0, 2))
    def test_involution_and_difference_flip(self, vals, j):
        v = np.array(vals).reshape(3, 3)
        m = scalar_menu(v[0], v[1], v[2])
        flipped = [i for i in range(3) if i != j][:1]
        once = marginalization_map(j, flipped, m)
        twice = marginalization_map(j, flipped, once)
        np.testing.assert_allclose(twice.p, m.p, atol=1e-12)
        np.testing.assert_allclose(twice.x2, m.x2, atol=1e-12)
        i = flipped[0]
        assert once.delta[i] - once.delta[j] == pytest.approx(-(m.delta[i] - m.delta[j]),
                                                              abs=1e-12)

    def test_reference_good_cannot_flip(self):
        with pytest.raises(ValueError):
            marginalization_map(0, [0], scalar_menu([1.0, 2.0], [0, 0], [0, 0]))


PCM = ModelSpec("multinomial", 2, sigma_eps=0, d_x=2)
PCM_DENSITY = Normal([0.3, -1.0], [[0.4, 0.1], [0.1, 0.3]])


class TestPhiPcm:
    def test_point_mass_indicator(self):
        oracle = DemandOracle(PCM, PointMass([0.5, -1.0]), 1, smooth=False)
        # index of good 1: 0.5 * 1 - 1 * 0.2 + 0.3 = 0.6 > 0
        res = build_phi_pcm(PCM, oracle, 0, scalar_menu([1.0, 0.0], [0.2, 1.0], [0.3, 0.4]))
        assert res.demand == 1.0
        assert res.cdf == 0.0

    def test_full_subset_sum_is_one(self):
        n = 200000
        oracle = DemandOracle(PCM, PCM_DENSITY, n, 1, smooth=False)
        rng = np.random.default_rng(2)
        m = scalar_menu(rng.normal(size=(8, 2)), rng.normal(size=(8, 2)), rng.normal(size=(8, 2)))
        total = full_subset_sum(PCM, oracle, 0, m)
        # each half of the sum is one proportion estimated from n draws
        assert np.all(np.abs(total - 1.0) <= 3 * np.sqrt(2 * 0.25 / n))

    def test_matches_single_index_probability(self):
        n = 200000
        oracle = DemandOracle(PCM, PCM_DENSITY, n, 3, smooth=False)
        x1, p1, d1 = 0.7, 0.4, 0.2
        res = build_phi_pcm(PCM, oracle, 0, scalar_menu([x1, -0.3], [p1, 1.2], [d1, 0.5]))
        theta = np.random.default_rng(4).multivariate_normal(PCM_DENSITY.mean, PCM_DENSITY.cov,
                                                             size=n)
        direct = np.mean(theta @ [x1, p1] <= -d1)
        assert abs(res.cdf - direct) <= 3 * np.sqrt(2 * direct * (1 - direct) / n)

    def test_support_violation(self):
        oracle = DemandOracle(PCM, PCM_DENSITY, 10, support=([-1, -1, -1], [1, 1, 1]))
        with pytest.raises(SupportError):
            build_phi_pcm(PCM, oracle, 0, scalar_menu([0.9, 0.5], [0.0, 0.0], [0.0, 0.0]))


BLP = ModelSpec("multinomial", 2, d_x=2)
BLP_DENSITY = Normal([0.5, -1.0], [[0.3, 0.1], [0.1, 0.2]])


class TestPhiBlp:
    def test_point_mass_tail(self):
        spec = ModelSpec("multinomial", 2)
        oracle = DemandOracle(spec, PointMass([0.0]), 1)
        m = ProductMenu(np.zeros((2, 0)), [0.0, 0.0], [10.0, 0.0])
        res = build_phi_blp(spec, oracle, 0, m)
        # within 1e-4 of the logistic tail value, and equal to the Gumbel tail
        assert res.demand == pytest.approx(0.9999546, abs=1e-4)
        assert res.demand == pytest.approx(-np.expm1(-np.exp(10.0)), abs=1e-15)

    def test_matches_binary_choice(self):
        n = 200000
        oracle = DemandOracle(BLP, BLP_DENSITY, 4000, 0, qmc=True)
        m = scalar_menu([0.8, 0.1], [0.5, 0.3], [0.2, 0.0])
        res = build_phi_blp(BLP, oracle, 0, m)
        rng = np.random.default_rng(5)
        theta = rng.multivariate_normal(BLP_DENSITY.mean, BLP_DENSITY.cov, size=n)
        eps = -np.log(-np.log(rng.random(n)))
        direct = np.mean(theta @ [0.8, 0.5] + 0.2 + eps > 0)
        assert abs(res.demand - direct) <= 3 * np.sqrt(direct * (1 - direct) / n) + 1e-3

    def test_truncation_stabilizes(self):
        oracle = DemandOracle(BLP, BLP_DENSITY, 2000, 0)
        m = scalar_menu([0.8, 0.1], [0.5, 0.3], [0.2, 0.0])
        a = build_phi_blp(BLP, oracle, 0, m, truncation=50).cdf
        b = build_phi_blp(BLP, oracle, 0, m, truncation=100).cdf
        assert abs(a - b) <= 1e-4

    def test_small_truncation_warns(self):
        oracle = DemandOracle(BLP, BLP_DENSITY, 2000, 0)
        m = scalar_menu([0.8, 0.1], [0.5, 0.3], [0.2, 0.5])
        with pytest.warns(TruncationWarning):
            res = build_phi_blp(BLP, oracle, 0, m, truncation=1.0)
        assert res.budget_exceeded


class TestPhiBundle:
    def test_zero_indices_median(self):
        spec = ModelSpec("bundles", 2, d_x=1)
        oracle = DemandOracle(spec, PointMass([0.0, 0.0]), 1)
        m = ProductMenu(np.zeros((2, 0)), [0.0, 0.0], [0.0, 0.0])
        assert build_phi_bundle(spec, oracle, (0, 0), 0, m).cdf == pytest.approx(0.5, abs=1e-12)

    @pytest.mark.parametrize("label, shift", [((0, 0), 0.0), ((1, 1), 1.0)])
    def test_limit_is_binary_probability(self, label, shift):
        spec = ModelSpec("bundles", 2, d_x=1)
        dens = Normal([-0.8, 0.4], np.diag([0.2, 0.3]))
        oracle = DemandOracle(spec, dens, 4000, 1, qmc=True)
        m = ProductMenu(np.zeros((2, 0)), [0.6, 0.0], [0.3, 0.0])
        res = build_phi_bundle(spec, oracle, label, 0, m)
        n = 400000
        rng = np.random.default_rng(6)
        alpha = rng.normal(-0.8, np.sqrt(0.2), n)
        bundle = rng.normal(0.4, np.sqrt(0.3), n)
        eta = rng.standard_normal(n) + shift * bundle
        # (0,0) limit: CDF of w.theta is P(alpha p + eps1 <= -delta1) = demand for nothing
        direct = np.mean(alpha * 0.6 + eta <= -0.3)
        assert abs(res.cdf - direct) <= 3 * np.sqrt(direct * (1 - direct) / n) + 1e-3

    def test_unsupported_label(self):
        spec = ModelSpec("bundles", 2, d_x=1)
        oracle = DemandOracle(spec, PointMass([0.0, 0.0]), 1)
        m = ProductMenu(np.zeros((2, 0)), [0.0, 0.0], [0.0, 0.0])
        with pytest.raises(ValueError):
            build_phi_bundle(spec, oracle, (1, 0), 0, m)


class TestAssembly:
    def test_characteristic_points(self):
        w = np.array([[0.6, 0.0, 0.8]])
        x2, p, delta = characteristic_points(w, np.array([0.4]))
        assert x2[0, 0, 0] == pytest.approx(0.75)
        assert p[0, 0] == 0.0
        assert delta[0, 0] == pytest.approx(-0.5)

    def test_pcm_sinogram_matches_projection_cdf(self):
        oracle = DemandOracle(PCM, PCM_DENSITY, 4000, 0, qmc=True)
        grid = SphereGrid.hemisphere(2, 16, -4, 4, 41)
        sino = assemble_sinogram(PhiEvaluator(PCM, oracle, "pcm"), grid)
        exact = sinogram_from_density(PCM_DENSITY, grid)
        assert np.max(np.abs(sino.phi - exact.phi)) <= 2e-3
        assert np.all(np.diff(sino.phi, axis=1) >= -1e-12)
        assert np.all(sino.phi[:, 0] <= 1e-3) and np.all(sino.phi[:, -1] >= 1 - 1e-3)

    def test_blp_sinogram_matches_projection_cdf(self):
        oracle = DemandOracle(BLP, BLP_DENSITY, 4000, 0, qmc=True)
        grid = SphereGrid.hemisphere(3, 16, -6, 8, 29)
        sino = assemble_sinogram(PhiEvaluator(BLP, oracle, "blp"), grid)
        exact = sinogram_from_density(ProductDensity([BLP_DENSITY, Gumbel()]), grid)
        assert np.max(np.abs(sino.phi - exact.phi)) <= 2e-3
        assert sino.meta["max_truncation_gap"] <= 1e-3

    def test_pcm_derivative_matches_radon(self):
        oracle = DemandOracle(PCM, PCM_DENSITY, 4000, 0, qmc=True)
        grid = SphereGrid.hemisphere(2, 8, -4, 4, 81)
        sino = differentiate_offset(assemble_sinogram(PhiEvaluator(PCM, oracle, "pcm"), grid))
        exact = sinogram_from_density(PCM_DENSITY, grid)
        assert np.max(np.abs(sino.dphi - exact.dphi)) <= 0.03

    def test_support_violations_are_collected(self):
        oracle = DemandOracle(PCM, PCM_DENSITY, 10, support=([-1, -1, -5], [1, 1, 5]))
        grid = SphereGrid.hemisphere(2, 8, -1, 1, 5)
        with pytest.raises(SupportError) as err:
            assemble_sinogram(PhiEvaluator(PCM, oracle, "pcm"), grid, block=2)
        assert len(err.value.offending) > 1


class TestDifferentiate:
    def test_linear_gives_constant(self):
        grid = SphereGrid.hemisphere(2, 4, 0, 1, 11)
        sino = differentiate_offset(Sinogram(grid, np.tile(0.3 * grid.offsets, (4, 1))))
        np.testing.assert_allclose(sino.dphi, 0.3, atol=1e-12)

    def test_integrates_back_to_endpoint_difference(self):
        grid = SphereGrid.hemisphere(2, 6, -3, 3, 61)
        exact = sinogram_from_density(MIXTURE, grid)
        sino = differentiate_offset(Sinogram(grid, exact.phi))
        mass = np.trapezoid(sino.dphi, grid.offsets, axis=1)
        np.testing.assert_allclose(mass, exact.phi[:, -1] - exact.phi[:, 0], atol=1e-10)

    def test_normal_matches_radon(self):
        grid = SphereGrid.hemisphere(2, 12, -6, 6, 241)
        exact = sinogram_from_density(Normal([0.5, -0.2], [[1.0, 0.3], [0.3, 0.5]]), grid)
        sino = differentiate_offset(Sinogram(grid, exact.phi))
        assert np.max(np.abs(sino.dphi - exact.dphi)) <= 2e-3 + grid.du ** 2

    def test_mass_per_angle(self):
        grid = SphereGrid.hemisphere(2, 32, -6, 6, 121)
        sino = differentiate_offset(Sinogram(grid, sinogram_from_density(MIXTURE, grid).phi))
        np.testing.assert_allclose(np.trapezoid(sino.dphi, grid.offsets, axis=1), 1.0, atol=1e-2)

    def test_needs_three_offsets(self):
        grid = SphereGrid.hemisphere(2, 4, 0, 1, 2)
        with pytest.raises(DimensionError):
            differentiate_offset(Sinogram(grid, np.zeros((4, 2))))


class TestKernels:
    def test_omega_at_zero(self):
        assert omega_r(0.0, 1.0) == pytest.approx(1 / (8 * np.pi ** 2), abs=1e-15)
        assert omega_r(0.0, 1.0) == pytest.approx(0.0126651, abs=1e-7)
        assert omega_r(0.0, 3.0) == pytest.approx(9 / (8 * np.pi ** 2), rel=1e-14)

    def test_omega_is_even(self):
        assert omega_r(-0.7, 2.0) == omega_r(0.7, 2.0)

    def test_2d_kernel_matches_omega_on_nyquist_lattice(self):
        du = 0.1
        s = du * np.arange(-20, 21)
        np.testing.assert_allclose(fbp_filter_kernel(s, np.pi / du, 2),
                                   omega_r(s, np.pi / du), atol=1e-9)

    @pytest.mark.parametrize("q", [2, 3])
    def test_series_branch_is_continuous(self, q):
        a = fbp_filter_kernel(np.array([0.999e-3]), 1.0, q)
        b = fbp_filter_kernel(np.array([1.001e-3]), 1.0, q)
        assert a[0] == pytest.approx(b[0], rel=1e-6)

    def test_rejects_q4(self):
        with pytest.raises(DimensionError):
            fbp_filter_kernel(0.0, 1.0, 4)


def _fbp_error(density, n_dir, n_off, n_out, reach=6.0):
    grid = SphereGrid.hemisphere(2, n_dir, -reach, reach, n_off)
    out = DensityGrid.regular([-4, -4], [4, 4], [n_out, n_out])
    rec = fbp_invert(sinogram_from_density(density, grid), out)
    truth = density.pdf(out.points().reshape(-1, 2)).reshape(out.shape)
    return rec, truth


class TestFbp:
    def test_standard_normal_round_trip(self):
        rec, truth = _fbp_error(Normal.standard(2), 128, 256, 81)
        assert rec.l2_relative(truth) <= 0.1
        assert abs(rec.mass - 1) <= 0.05

    def test_mixture_modes(self):
        rec, _ = _fbp_error(MIXTURE, 128, 256, 81)
        x = rec.axes[0]
        cell = x[1] - x[0]
        for mean in ([-1.5, -0.5], [1.5, 0.8]):
            box = np.all(np.abs(rec.points() - mean) <= 0.8, axis=-1)
            masked = np.where(box, rec.values, -np.inf)
            peak = rec.points()[np.unravel_index(np.argmax(masked), rec.shape)]
            assert np.all(np.abs(peak - mean) <= cell + 1e-12)

    def test_refinement_does_not_increase_error(self):
        errs = []
        for n_dir, n_off in [(32, 64), (64, 128), (128, 256)]:
            rec, truth = _fbp_error(Normal([0.3, -0.2], [[0.5, 0.1], [0.1, 0.4]]), n_dir, n_off, 61)
            errs.append(rec.l2_relative(truth))
        assert errs[0] >= errs[1] >= errs[2]

    def test_3d_normal(self):
        d = Normal([0.0, 0.5, -0.3], np.diag([0.6, 0.4, 0.5]))
        grid = SphereGrid.hemisphere(3, 1024, -5, 5, 96)
        out = DensityGrid.regular([-3, -2.5, -3], [3, 3.5, 3], [25, 25, 25])
        rec = fbp_invert(sinogram_from_density(d, grid), out, r=0.5 * np.pi / grid.du)
        truth = d.pdf(out.points().reshape(-1, 3)).reshape(out.shape)
        assert rec.l1_distance(truth) <= 0.1

    def test_clip_renormalizes(self):
        rec, _ = _fbp_error(Normal.standard(2), 64, 128, 41)
        assert rec.diagnostics["negative_mass"] >= 0
        grid = SphereGrid.hemisphere(2, 64, -6, 6, 128)
        clipped = fbp_invert(sinogram_from_density(Normal.standard(2), grid),
                             DensityGrid.regular([-4, -4], [4, 4], [41, 41]), clip=True)
        assert clipped.mass == pytest.approx(1.0, abs=1e-12)
        assert np.all(clipped.values >= 0)

    def test_limited_angle_rejected(self):
        theta = np.linspace(0.1, 2.0, 64)
        grid = SphereGrid(np.stack([np.cos(theta), np.sin(theta)], 1), np.linspace(-3, 3, 61))
        sino = sinogram_from_density(Normal.standard(2), grid)
        with pytest.raises(CoverageError):
            fbp_invert(sino, DensityGrid.regular([-1, -1], [1, 1], [5, 5]))

    def test_needs_derivative(self):
        grid = SphereGrid.hemisphere(2, 64, -3, 3, 61)
        with pytest.raises(ValueError, match="differentiate_offset"):
            fbp_invert(Sinogram(grid, np.zeros(grid.shape)),
                       DensityGrid.regular([-1, -1], [1, 1], [5, 5]))

    def test_output_dimension_checked(self):
        grid = SphereGrid.hemisphere(2, 64, -3, 3, 61)
        with pytest.raises(DimensionError):
            fbp_invert(sinogram_from_density(Normal.standard(2), grid),
                       DensityGrid.regular([-1], [1], [5]))


class TestDensityGrid:
    def test_mass_of_normal(self):
        x = np.linspace(-6, 6, 121)
        g = DensityGrid((x, x), normal_pdf_grid([0, 0], np.eye(2), [x, x]))
        assert g.mass == pytest.approx(1.0, abs=1e-6)
        assert g.negative_mass == 0.0

    def test_to_density_samples(self):
        x = np.linspace(-5, 5, 101)
        g = DensityGrid((x,), stats.norm.pdf(x) - 0.001)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            dens = g.to_density()
        assert dens.mass == pytest.approx(1.0, abs=1e-9)
