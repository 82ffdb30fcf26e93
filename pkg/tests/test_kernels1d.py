import math

import numpy as np
import pytest

from groupoid_deconv import analytic as an
from groupoid_deconv import gridfn as gf
from groupoid_deconv import kernels1d as kn
from groupoid_deconv.errors import GridError


def delta_test_functions():
    """Smooth compactly supported test set; mixed widths, centers, shapes."""
    return [
        an.bump(0.0, 1.0),
        an.bump(0.2, 0.7),
        (an.constant(0.5) + an.monomial(1.0, 2)) * an.bump(0.0, 1.2),
        an.bump(0.0, 0.9) * an.bump(0.25, 0.8),
        an.lincomb([(1.7, an.bump(0.0, 1.1)), (-0.4, an.bump(-0.3, 0.5))]),
    ]


def centered_grid(fn, half: float, dx: float) -> gf.GridFn1D:
    """Symmetric grid holding 0 on a Simpson panel boundary."""
    n_half = int(round(half / dx))
    if n_half % 2 == 1:
        n_half += 1
    n = 2 * n_half + 1
    return gf.sample(fn, -n_half * dx, dx, n)


class TestCkPair:
    def test_antiderivative_value(self):
        pair = kn.build_ck_pair(1, (0.5, 1.0))
        # F(t) = t^(k+1)/(k+1)! ; the C^k part agrees with F below the cut
        assert pair.f(0.25) == pytest.approx(0.25**2 / 2.0, abs=1e-15)

    def test_f_vanishes_beyond_cut(self):
        for k in (0, 2, 5):
            pair = kn.build_ck_pair(k, (0.3, 0.8))
            ts = np.array([0.8, 0.9, 1.5, 10.0])
            assert np.all(pair.f(ts) == 0.0)
            assert pair.f.support() == (0.0, 0.8)

    def test_g_supported_in_cut(self):
        pair = kn.build_ck_pair(2, (0.4, 0.9))
        ts = np.array([0.0, 0.2, 0.39, 0.91, 2.0, -1.0])
        assert np.all(pair.g(ts) == 0.0)

    def test_kink_order(self):
        # f is C^k but not C^(k+1): unit jump in the (k+1)-th derivative at 0
        k = 2
        pair = kn.build_ck_pair(k, (0.5, 1.0))
        eps = 1e-6
        left = pair.f(-eps, order=k + 1)
        right = pair.f(eps, order=k + 1)
        assert abs(left) < 1e-12
        assert right == pytest.approx(1.0, abs=1e-5)

    @pytest.mark.parametrize("k", [0, 1, 2, 3])
    def test_weak_identity(self, k):
        pair = kn.build_ck_pair(k, (0.5, 1.0))
        for fn in delta_test_functions():
            w = centered_grid(fn, 1.6, 1e-3)
            assert kn.weak_delta_residual(pair, w) <= 1e-5

    def test_bad_cut_interval(self):
        with pytest.raises(GridError):
            kn.build_ck_pair(1, (0.0, 1.0))
        with pytest.raises(GridError):
            kn.build_ck_pair(1, (0.7, 0.4))


class TestDMGenerators:
    def test_single_rate_closed_form(self):
        gen = kn.build_dm_generators(1, eps=0.5, lam=[1.0])
        assert np.allclose(gen.b, [1.0, 1.0])
        assert np.allclose(gen.c, [1.0])
        ts = np.linspace(-2, 2, 9)
        assert np.allclose(gen.phi(ts), 0.5 * np.exp(-np.abs(ts)), atol=1e-15)

    def test_two_rates_coefficients(self):
        gen = kn.build_dm_generators(2, eps=0.5, lam=[1.0, 2.0])
        assert np.allclose(gen.b, [1.0, 1.25, 0.25])

    @pytest.mark.parametrize("J", [1, 2, 4, 6, 8])
    def test_partial_fraction_weights_sum_to_one(self, J):
        gen = kn.build_dm_generators(J, growth=2.0, eps=0.5)
        assert abs(np.sum(gen.c) - 1.0) <= 1e-12

    def test_rate_scaling_rule(self):
        gen = kn.build_dm_generators(3, growth=2.0, eps=0.25)
        assert gen.lam[0] * gen.eps == pytest.approx(10.0)
        assert np.allclose(np.diff(np.log(gen.lam)), math.log(2.0))

    def test_validation(self):
        with pytest.raises(GridError):
            kn.build_dm_generators(0)
        with pytest.raises(GridError):
            kn.build_dm_generators(2, growth=1.0)
        with pytest.raises(GridError):
            kn.build_dm_generators(kn.J_MAX + 1)
        with pytest.raises(GridError):
            kn.build_dm_generators(2, eps=-0.1)

    def test_green_function_identity_single_rate(self):
        # exp(-|t|)/2 inverts 1 - d^2/dt^2
        gen = kn.build_dm_generators(1, eps=0.5, lam=[1.0])
        w = centered_grid(an.bump(0.0, 1.0), 1.4, 1e-3)
        assert kn.weak_delta_residual(gen, w, form="kernel") <= 1e-6

    @pytest.mark.parametrize("J", [1, 2, 4, 6])
    def test_weak_identity_kernel_form(self, J):
        gen = kn.build_dm_generators(J, growth=3.0, eps=0.5)
        for fn in delta_test_functions():
            w = centered_grid(fn, 1.6, 1e-3)
            assert kn.weak_delta_residual(gen, w, form="kernel") <= 1e-5

    @pytest.mark.parametrize("J", [1, 2, 4, 6])
    def test_weak_identity_cutoff_form(self, J):
        gen = kn.build_dm_generators(J, growth=3.0, eps=0.5)
        for fn in delta_test_functions():
            w = centered_grid(fn, 1.6, 1e-3)
            assert kn.weak_delta_residual(gen, w, form="cutoff") <= 1e-4

    def test_residual_nonincreasing_in_refinement(self):
        gen = kn.build_dm_generators(3, growth=2.0, eps=0.5)
        fn = an.bump(0.1, 0.9)
        res = [
            kn.weak_delta_residual(gen, centered_grid(fn, 1.5, dx), form="cutoff")
            for dx in (4e-3, 2e-3, 1e-3)
        ]
        assert res[0] >= res[1] >= res[2]

    def test_support_certificates(self):
        gen = kn.build_dm_generators(3, growth=2.0, eps=0.5)
        ts = np.array([-0.5, -0.55, 0.5, 0.62, 3.0])
        assert np.all(gen.f_cut(ts) == 0.0)
        assert np.all(gen.g_corr(ts) == 0.0)
        lo, hi = gen.f_cut.support()
        assert lo >= -0.5 and hi <= 0.5

    def test_cutoff_plateau_matches_phi(self):
        gen = kn.build_dm_generators(2, growth=2.0, eps=0.5)
        ts = np.linspace(-0.24, 0.24, 33)
        assert np.allclose(gen.f_cut(ts), gen.phi(ts), atol=0, rtol=1e-14)

    def test_correction_vanishes_inside_plateau(self):
        gen = kn.build_dm_generators(3, growth=2.0, eps=0.5)
        ts = np.linspace(-0.24, 0.24, 33)
        assert np.all(gen.g_corr(ts) == 0.0)

    def test_correction_smooth_across_inner_edge(self):
        # no finite-difference jump at |t| = eps/2 (theta == 1 inside): the
        # largest first-difference increment must shrink with the step, and
        # the correction leaves zero flatly.
        gen = kn.build_dm_generators(2, growth=2.0, eps=0.5)

        def max_increment(dx):
            ts = 0.25 + dx * np.arange(-40, 41)
            d1 = np.gradient(gen.g_corr(ts), dx)
            return np.max(np.abs(np.diff(d1)))

        assert max_increment(5e-5) <= 0.7 * max_increment(1e-4)
        amp = np.max(np.abs(gen.g_corr(np.linspace(0.25, 0.5, 200))))
        assert abs(gen.g_corr(0.251)) <= 1e-8 * amp

    def test_residual_zero_for_远_test_function(self):
        # support away from 0 and from the generator supports
        gen = kn.build_dm_generators(2, growth=2.0, eps=0.25)
        fn = an.bump(3.0, 0.5)
        w = centered_grid(fn, 4.0, 1e-2)
        assert kn.weak_delta_residual(gen, w, form="cutoff") == 0.0

    def test_zero_not_in_grid_errors(self):
        gen = kn.build_dm_generators(1, eps=0.5)
        vals = np.zeros(16)
        w = gf.GridFn1D(vals, 1.0, 0.1, None)
        with pytest.raises(GridError):
            kn.weak_delta_residual(gen, w)

    def test_serialization_fields(self):
        gen = kn.build_dm_generators(2, growth=2.0, eps=0.5)
        d = kn.generators_to_dict(gen)
        assert set(d) == {"J", "lambda", "b", "c", "eps"}
        assert d["J"] == 2 and len(d["lambda"]) == 2 and len(d["b"]) == 3
