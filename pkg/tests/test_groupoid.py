import math

import numpy as np
import pytest
from scipy.integrate import simpson as scipy_simpson

from groupoid_deconv import analytic as an
from groupoid_deconv import gridfn as gf
from groupoid_deconv import groupoid as gp
from groupoid_deconv.errors import DomainError, GridError


def make_instance(kind, k=1, base_box=(-4.0, 4.0), h_flow=0.005):
    if kind == "line":
        return gp.GroupoidInstance(kind=gp.Kind.LINE_GROUP)
    if kind == "pair":
        return gp.GroupoidInstance(
            kind=gp.Kind.PAIR,
            base_box=base_box,
            field=gp.FlowField(an.constant(1.0), h_flow=h_flow),
        )
    return gp.GroupoidInstance(
        kind=gp.Kind.TRANSFORMATION,
        base_box=base_box,
        field=gp.FlowField(an.tanh_power(k), h_flow=h_flow),
    )


def grid2d(u, v, half=4.0, n=129):
    src = gf.Separable2D([(1.0, u, v)])
    d = 2 * half / (n - 1)
    return gf.sample2d(src, (-half, -half), (d, d), (n, n))


class TestFlow:
    def test_translation(self):
        fld = gp.FlowField(an.constant(1.0))
        for t in (-1.3, 0.0, 2.4):
            assert abs(gp.flow(fld, t, 0.7) - (0.7 + t)) <= 1e-10

    def test_linear_field_closed_form(self):
        fld = gp.FlowField(an.monomial(1.0, 1), h_flow=0.005)
        got = gp.flow(fld, 1.0, 0.8)
        assert abs(got - 0.8 * math.e) <= 1e-8

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_tanh_fixed_point_exact(self, k):
        fld = gp.FlowField(an.tanh_power(k))
        for t in (-2.0, 0.5, 3.0):
            assert gp.flow(fld, t, 0.0) == 0.0

    def test_identity_at_time_zero(self):
        fld = gp.FlowField(an.tanh_power(1))
        assert gp.flow(fld, 0.0, 1.234) == 1.234

    def test_group_law(self):
        fld = gp.FlowField(an.tanh_power(1), h_flow=0.005)
        xs = np.linspace(-3, 3, 25)
        worst = 0.0
        for s in (-0.5, -0.25, 0.25, 0.5):
            for t in (-0.5, -0.25, 0.25, 0.5):
                a = gp.flow(fld, s, gp.flow(fld, t, xs))
                b = gp.flow(fld, s + t, xs)
                worst = max(worst, float(np.max(np.abs(a - b))))
        assert worst <= 1e-8

    def test_horizon_guard(self):
        fld = gp.FlowField(an.tanh_power(1), t_max=2.0)
        with pytest.raises(DomainError):
            gp.flow(fld, 3.0, 0.1)

    def test_flow_table_matches_pointwise_flow(self):
        fld = gp.FlowField(an.tanh_power(1), h_flow=0.005)
        times = np.linspace(-1.0, 1.0, 41)
        xs = np.linspace(-2, 2, 11)
        tab = gp.flow_table(fld, times, xs)
        for i in (0, 10, 20, 30, 40):
            direct = gp.flow(fld, float(times[i]), xs)
            assert np.max(np.abs(tab[i] - direct)) <= 1e-9

    def test_equivariance_target_flow(self):
        # target of the fibre-translated arrow equals the base flow of the target
        fld = gp.FlowField(an.tanh_power(1), h_flow=0.005)
        bs = np.linspace(-2, 2, 9)
        for h in (-0.5, 0.3):
            for t in (-0.25, 0.5):
                lhs = gp.flow(fld, h + t, bs)
                rhs = gp.flow(fld, t, gp.flow(fld, h, bs))
                assert np.max(np.abs(lhs - rhs)) <= 1e-8


class TestConvolvePair:
    def test_rank_one_composition(self):
        u, v = an.bump(0.3, 0.8), an.bump(-0.2, 1.0)
        p, q = an.bump(0.0, 1.2), an.bump(0.4, 0.7)
        G = make_instance("pair")
        f = grid2d(u, v)  # f(w, y) = u(w) v(y)
        g = grid2d(p, q)  # g(x, w) = p(x) q(w)
        h = gp.convolve(G, f, g, fiber_refine=4)
        # closed form <u, q> p(x) v(y)
        t = np.linspace(-2, 2, 4001)
        inner = scipy_simpson(u(t) * q(t), x=t)
        expect = inner * np.outer(p(h.xs), v(h.ys))
        assert np.max(np.abs(h.samples - expect)) <= 5e-7

    def test_direct_quadrature_oracle(self):
        u, v = an.bump(0.3, 0.8), an.bump(-0.2, 1.0)
        p, q = an.bump(0.0, 1.2), an.bump(0.4, 0.7)
        G = make_instance("pair")
        f, g = grid2d(u, v), grid2d(p, q)
        h = gp.convolve(G, f, g, fiber_refine=4)
        t = np.linspace(-2, 2, 4001)
        for xi, yi in [(60, 70), (64, 64), (75, 50)]:
            x, y = h.xs[xi], h.ys[yi]
            expect = scipy_simpson(u(t) * v(y) * p(x) * q(t), x=t)
            assert abs(h.samples[xi, yi] - expect) <= 5e-7

    def test_zero_operand(self):
        G = make_instance("pair")
        f = grid2d(an.bump(), an.bump())
        z = f.like(np.zeros(f.shape), support=None)
        h = gp.convolve(G, f, z)
        assert h.support is None and np.all(h.samples == 0.0)

    def test_exact_associativity(self):
        G = make_instance("pair")
        f = grid2d(an.bump(0.1, 0.9), an.bump(0.0, 1.1))
        g = grid2d(an.bump(-0.3, 1.2), an.bump(0.2, 0.8))
        h = grid2d(an.bump(0.4, 1.0), an.bump(-0.1, 0.9))
        lhs = gp.convolve(G, gp.convolve(G, f, g), h)
        rhs = gp.convolve(G, f, gp.convolve(G, g, h))
        assert np.max(np.abs(lhs.samples - rhs.samples)) <= 1e-12


class TestConvolveTransformation:
    def test_zero_field_reduces_to_columnwise_line_convolution(self):
        G = gp.GroupoidInstance(
            kind=gp.Kind.TRANSFORMATION,
            base_box=(-4.0, 4.0),
            field=gp.FlowField(an.constant(0.0)),
        )
        f = grid2d(an.bump(0.0, 0.8), an.bump(0.2, 1.0))
        g = grid2d(an.bump(0.3, 0.7), an.bump(0.0, 1.2))
        h = gp.convolve(G, f, g, fiber_refine=4)
        ts = np.linspace(-2, 2, 2001)
        u1, v1 = an.bump(0.0, 0.8), an.bump(0.2, 1.0)
        u2, v2 = an.bump(0.3, 0.7), an.bump(0.0, 1.2)
        for ti, bi in [(64, 64), (70, 58), (55, 80)]:
            t0, b0 = h.xs[ti], h.ys[bi]
            expect = scipy_simpson(
                u1(t0 - ts) * v1(b0) * u2(ts) * v2(b0), x=ts
            )
            assert abs(h.samples[ti, bi] - expect) <= 1e-6

    def test_direct_quadrature_oracle_tanh(self):
        G = make_instance("transformation", k=1)
        u1, v1 = an.bump(0.0, 0.8), an.bump(0.2, 1.0)
        u2, v2 = an.bump(0.3, 0.7), an.bump(0.0, 1.2)
        f, g = grid2d(u1, v1), grid2d(u2, v2)
        h = gp.convolve(G, f, g, fiber_refine=4)
        ts = np.linspace(-2.0, 2.0, 1601)
        for ti, bi in [(64, 64), (70, 58)]:
            t0, b0 = h.xs[ti], h.ys[bi]
            flows = np.array([gp.flow(G.field, float(s), float(b0)) for s in ts])
            expect = scipy_simpson(u1(t0 - ts) * v1(flows) * u2(ts) * v2(b0), x=ts)
            assert abs(h.samples[ti, bi] - expect) <= 1e-6

    def test_support_escape_raises(self):
        G = make_instance("transformation")
        f = grid2d(an.bump(0.0, 3.5), an.bump(0.0, 1.0))
        with pytest.raises(DomainError):
            gp.convolve(G, f, f)

    def test_grid_mismatch_raises(self):
        G = make_instance("transformation")
        f = grid2d(an.bump(), an.bump(), n=129)
        g = grid2d(an.bump(), an.bump(), n=65)
        with pytest.raises(GridError):
            gp.convolve(G, f, g)

    def test_associativity(self):
        G = make_instance("transformation", k=1)
        f = grid2d(an.bump(0.1, 1.2), an.bump(0.0, 1.3))
        g = grid2d(an.bump(-0.2, 1.1), an.bump(0.2, 1.2))
        h = grid2d(an.bump(0.3, 1.25), an.bump(-0.1, 1.2))
        lhs = gp.convolve(G, gp.convolve(G, f, g, 2), h, 2)
        rhs = gp.convolve(G, f, gp.convolve(G, g, h, 2), 2)
        assert np.max(np.abs(lhs.samples - rhs.samples)) <= 1e-5

    def test_haar_right_invariance_even_shift(self):
        # Lebesgue fibre integrals are exactly invariant under grid shifts
        # that preserve the Simpson phase (substitution tau -> tau + 2m dx)
        f = grid2d(an.bump(0.0, 1.0), an.bump(0.0, 1.0))
        w = gf.simpson_weights(f.shape[0])
        col = f.samples[:, 64]
        shifted = np.roll(col, 2)
        assert abs(np.dot(w, col) - np.dot(w, shifted)) <= 1e-14 * np.abs(col).sum()


class TestIntegratedRepLine:
    def test_mollifier_near_identity(self):
        w = 0.02
        delta = (1.0 / (w * an.BUMP_MASS)) * an.bump(0.0, w)
        fld = gp.FlowField(an.tanh_power(1), h_flow=0.002)
        f = gf.sample(delta, -2.0, 1e-3, 4001)
        psi = gf.sample(an.bump(0.5, 1.0), -3.0, 1e-3, 6001)
        rep = gp.integrated_rep_line(fld, f, psi)
        assert np.max(np.abs(rep.samples - psi.samples)) <= 1e-3

    def test_translation_matches_line_convolution(self):
        f = gf.sample(an.bump(0.2, 0.6), -2.0, 0.005, 801)
        psi = gf.sample(an.bump(0.0, 1.0), -2.0, 0.005, 801)
        rep = gp.integrated_rep_line(None, f, psi)
        conv = gf.convolve_line(f, psi)
        idx = [conv.index_of(x) for x in rep.x]
        assert np.max(np.abs(rep.samples - conv.samples[idx])) <= 1e-8

    def test_derivative_transfer(self):
        # pi(f') psi = pi(f) (X psi)
        fld = gp.FlowField(an.tanh_power(1), h_flow=0.002)
        ffn = an.bump(0.1, 0.5)
        psifn = an.bump(0.4, 1.0)
        f = gf.sample(ffn, -2.0, 0.004, 1001)
        fprime = gf.sample(ffn.deriv(1), -2.0, 0.004, 1001)
        psi = gf.sample(psifn, -3.0, 0.004, 1501)
        xpsi = gf.sample(an.tanh_power(1) * psifn.deriv(1), -3.0, 0.004, 1501)
        lhs = gp.integrated_rep_line(fld, fprime, psi)
        rhs = gp.integrated_rep_line(fld, f, xpsi)
        assert np.max(np.abs(lhs.samples - rhs.samples)) <= 1e-6


class TestIntegratedRep:
    def test_self_left_is_convolve(self):
        G = make_instance("transformation")
        f = grid2d(an.bump(0.0, 0.8), an.bump(0.2, 1.0))
        g = grid2d(an.bump(0.3, 0.7), an.bump(0.0, 1.2))
        a = gp.integrated_rep(G, "self-left", f, g, fiber_refine=2)
        b = gp.convolve(G, f, g, fiber_refine=2)
        assert np.array_equal(a.samples, b.samples)

    def test_on_base_zero_field_degenerates(self):
        G = gp.GroupoidInstance(
            kind=gp.Kind.TRANSFORMATION,
            base_box=(-4.0, 4.0),
            field=gp.FlowField(an.constant(0.0)),
        )
        f = grid2d(an.bump(0.0, 0.8), an.bump(0.2, 1.0))
        chi = gf.sample(an.bump(0.0, 2.0), -4.0, 8.0 / 128, 129)
        rep = gp.integrated_rep(G, "on-base", f, chi)
        # (pi(f)chi)(b) = chi(b) * int f(-tau, b) dtau
        w = gf.simpson_weights(f.shape[0]) * f.spacing[0]
        mass = w @ f.samples[::-1, :]
        expect = chi.samples * mass
        assert np.max(np.abs(rep.samples - expect)) <= 1e-12

    def test_representation_property_on_base(self):
        G = make_instance("transformation", k=1)
        f = grid2d(an.bump(0.1, 0.7), an.bump(0.0, 1.1))
        g = grid2d(an.bump(-0.2, 0.6), an.bump(0.2, 1.0))
        chi = gf.sample(an.bump(0.0, 1.5), -4.0, 8.0 / 128, 129)
        lhs = gp.integrated_rep(G, "on-base", gp.convolve(G, f, g, 2), chi, 2)
        rhs = gp.integrated_rep(
            G, "on-base", f, gp.integrated_rep(G, "on-base", g, chi, 2), 2
        )
        assert np.max(np.abs(lhs.samples - rhs.samples)) <= 1e-5

    def test_representation_property_line_flow(self):
        fld = gp.FlowField(an.tanh_power(1), h_flow=0.004)
        f = gf.sample(an.bump(0.1, 0.6), -2.0, 0.004, 1001)
        g = gf.sample(an.bump(-0.2, 0.5), -2.0, 0.004, 1001)
        psi = gf.sample(an.bump(0.3, 1.0), -3.0, 0.004, 1501)
        fg = gf.convolve_line(f, g)
        lhs = gp.integrated_rep_line(fld, fg, psi)
        inner = gp.integrated_rep_line(fld, g, psi)
        rhs = gp.integrated_rep_line(fld, f, inner)
        assert np.max(np.abs(lhs.samples - rhs.samples)) <= 1e-5


class TestRestriction:
    def test_homomorphism(self):
        G = make_instance("transformation", k=1)
        f = grid2d(an.bump(0.0, 0.8), an.bump(0.2, 1.0))
        g = grid2d(an.bump(0.3, 0.7), an.bump(0.0, 1.2))
        conv = gp.convolve(G, f, g, fiber_refine=2)
        lhs = gp.restrict_to_GX(G, conv)
        rf, rg = gp.restrict_to_GX(G, f), gp.restrict_to_GX(G, g)
        rr = gp.convolve(make_instance("line"), rf, rg, fiber_refine=2)
        idx = [rr.index_of(x) for x in lhs.x]
        assert np.max(np.abs(lhs.samples - rr.samples[idx])) <= 1e-6

    def test_vanishing_on_invariant_fibre(self):
        G = make_instance("transformation")
        v = an.monomial(1.0, 1) * an.bump(0.0, 1.0)  # vanishes at 0
        f = grid2d(an.bump(0.0, 0.8), v)
        r = gp.restrict_to_GX(G, f)
        assert np.all(r.samples == 0.0)

    def test_separable_restriction(self):
        G = make_instance("transformation")
        u, v = an.bump(0.1, 0.8), an.bump(0.3, 1.2)
        f = grid2d(u, v)
        r = gp.restrict_to_GX(G, f)
        assert np.allclose(r.samples, u(r.x) * v(0.0), atol=1e-15)

    def test_requires_fixed_point(self):
        G = gp.GroupoidInstance(
            kind=gp.Kind.TRANSFORMATION,
            base_box=(-4.0, 4.0),
            field=gp.FlowField(an.constant(1.0)),
        )
        f = grid2d(an.bump(), an.bump())
        with pytest.raises(GridError):
            gp.restrict_to_GX(G, f)


class TestBimodule:
    def test_source_product_pair_vs_transformation_axes(self):
        u = an.bump(0.0, 2.0)
        fP = grid2d(an.bump(0.1, 0.9), an.bump(0.0, 1.0))
        P = make_instance("pair")
        T = make_instance("transformation")
        outP = gp.mul_source(P, u, fP)
        outT = gp.mul_source(T, u, fP)
        assert np.allclose(outP.samples, fP.samples * u(fP.xs)[:, None])
        assert np.allclose(outT.samples, fP.samples * u(fP.ys)[None, :])

    def test_target_product_transformation_uses_flow(self):
        T = make_instance("transformation", k=1)
        u = an.bump(0.0, 2.0)
        f = grid2d(an.bump(0.1, 0.9), an.bump(0.0, 1.0))
        out = gp.mul_target(T, u, f)
        tab = gp.flow_table(T.field, f.xs, f.ys)
        assert np.allclose(out.samples, f.samples * u(tab), atol=1e-14)

    def test_bimodule_associativity_with_convolution(self):
        # u . (f * g) = (u . f) * g  and  (f * g) . u = f * (g . u)
        T = make_instance("transformation", k=1)
        u = an.bump(0.0, 3.0)
        f = grid2d(an.bump(0.1, 0.8), an.bump(0.0, 1.0))
        g = grid2d(an.bump(-0.1, 0.7), an.bump(0.2, 1.0))
        left1 = gp.mul_target(T, u, gp.convolve(T, f, g, 2))
        left2 = gp.convolve(T, gp.mul_target(T, u, f), g, 2)
        right1 = gp.mul_source(T, u, gp.convolve(T, f, g, 2))
        right2 = gp.convolve(T, f, gp.mul_source(T, u, g), 2)
        assert np.max(np.abs(right1.samples - right2.samples)) <= 1e-10
        # left product pulls through the sigma-integral up to interpolation
        assert np.max(np.abs(left1.samples - left2.samples)) <= 1e-5


class TestDescriptors:
    def test_round_trip(self):
        for kind in ("line", "pair", "transformation"):
            G = make_instance(kind)
            d = gp.instance_to_dict(G)
            G2 = gp.instance_from_dict(d)
            assert gp.instance_to_dict(G2) == d

    def test_field_specs(self):
        assert gp.field_from_spec("zero").a(1.3) == 0.0
        assert gp.field_from_spec("unit").a(-2.0) == 1.0
        f = gp.field_from_spec({"tanh_k": 2})
        assert f.a(0.7) == pytest.approx(math.tanh(0.7) ** 2, abs=1e-15)

    def test_unbounded_field_rejected(self):
        with pytest.raises(GridError):
            gp.GroupoidInstance(
                kind=gp.Kind.TRANSFORMATION,
                base_box=(-4.0, 4.0),
                field=gp.FlowField(an.monomial(1.0, 1)),
            )

    def test_target_interval_monotone_flow(self):
        G = make_instance("transformation", k=1)
        f = grid2d(an.bump(0.0, 1.0), an.bump(0.5, 0.5))
        K = gp.target_interval(G, f)
        # flow moves points by at most |t| <= 1
        assert K[0] >= -1.1 and K[1] <= 2.1
        assert K[0] < 0.0 or K[0] <= 0.1
