import math

import numpy as np
import pytest

from groupoid_deconv import analytic as an
from groupoid_deconv import gridfn as gf
from groupoid_deconv import groupoid as gp
from groupoid_deconv import ideals as idl
from groupoid_deconv.errors import GridError, OrderGateError


def grid2d(u, v, half=2.0, n=161):
    src = gf.Separable2D([(1.0, u, v)])
    d = 2 * half / (n - 1)
    return gf.sample2d(src, (-half, -half), (d, d), (n, n))


def transf_instance(k=1, h_flow=0.005):
    return gp.GroupoidInstance(
        kind=gp.Kind.TRANSFORMATION,
        base_box=(-4.0, 4.0),
        field=gp.FlowField(an.tanh_power(k), h_flow=h_flow),
    )


class TestVanishingOrder:
    def test_quadratic_order(self):
        f = grid2d(an.monomial(1.0, 2) * an.bump(0.0, 1.5), an.bump(0.0, 1.0))
        est = idl.vanishing_order(f, axis=0)
        assert abs(est.p_hat - 2.0) <= 0.1
        assert not est.flat_flag

    def test_flat_input_flagged(self):
        f = grid2d(an.flat_exp() * an.bump(0.0, 1.5), an.bump(0.0, 1.0))
        est = idl.vanishing_order(f, axis=0)
        assert est.flat_flag and est.p_hat >= idl.P_MAX

    def test_nonvanishing_order_zero(self):
        f = grid2d(an.bump(0.0, 1.0), an.bump(0.3, 0.9))
        est = idl.vanishing_order(f, axis=0)
        assert est.p_hat <= 0.05

    def test_all_zero_convention(self):
        f = grid2d(an.bump(), an.bump())
        z = f.like(np.zeros(f.shape), support=None)
        est = idl.vanishing_order(z, axis=0)
        assert est.flat_flag and est.p_hat == idl.P_MAX

    def test_invariants(self):
        f = grid2d(an.monomial(1.0, 1) * an.bump(0.0, 1.2), an.bump(0.0, 1.0))
        est = idl.vanishing_order(f, axis=0)
        assert est.p_hat >= 0.0
        assert est.window[0] == pytest.approx(4 * f.spacing[0])


class TestHadamard:
    def test_linear_factor_constant(self):
        # f = x: the first remainder integral is identically 1
        f = grid2d(an.monomial(1.0, 1), an.constant(1.0))
        (alpha, fa), = idl.hadamard_split(f, 1, axis=0)
        assert alpha == (1,)
        assert np.max(np.abs(fa.samples - 1.0)) <= 1e-12

    def test_reconstruction_bump_factor(self):
        f = grid2d(an.monomial(1.0, 1) * an.bump(0.0, 1.2), an.bump(0.0, 1.0))
        (_, fa), = idl.hadamard_split(f, 1, axis=0)
        defect = idl.hadamard_reconstruction_defect(f, 1, fa, axis=0)
        assert defect <= 1e-6 * gf.sup_norm(f)

    @pytest.mark.parametrize("p", [1, 2, 3, 4])
    def test_reconstruction_all_orders(self, p):
        f = grid2d(an.monomial(1.0, p) * an.bump(0.0, 1.4), an.bump(0.0, 1.0))
        (_, fa), = idl.hadamard_split(f, p, axis=0)
        assert idl.hadamard_reconstruction_defect(f, p, fa, axis=0) <= 1e-6 * gf.sup_norm(f)

    def test_intermediate_order_drop(self):
        p = 3
        f = grid2d(an.monomial(1.0, p) * an.bump(0.0, 1.4), an.bump(0.0, 1.0))
        cur = f
        for i in range(p):
            before = idl.vanishing_order(cur, axis=0).p_hat
            cur = idl._one_hadamard_step(cur, axis=0)
            after = idl.vanishing_order(cur, axis=0).p_hat
            assert abs((before - after) - 1.0) <= 0.2

    def test_flat_stays_flat(self):
        f = grid2d(an.flat_exp() * an.bump(0.0, 1.5), an.bump(0.0, 1.0))
        (_, fa), = idl.hadamard_split(f, 3, axis=0)
        assert idl.vanishing_order(fa, axis=0).flat_flag

    def test_order_gate(self):
        f = grid2d(an.monomial(1.0, 1) * an.bump(0.0, 1.2), an.bump(0.0, 1.0))
        with pytest.raises(OrderGateError, match="order"):
            idl.hadamard_split(f, 3, axis=0)


class TestEnvelope:
    def tail(self, fn, T=40.0, n=512):
        xs = np.linspace(1.0, T, n)
        return gf.GridFn1D(fn(xs), 1.0, xs[1] - xs[0], (1.0, T))

    def test_dominates_exponential(self):
        f = self.tail(lambda t: np.exp(-t))
        g = idl.schwartz_envelope(f)
        assert np.all(g.samples >= np.abs(f.samples))
        assert np.all(np.diff(g.samples) <= 1e-15)

    def test_zero_input(self):
        f = self.tail(lambda t: 0.0 * t)
        g = idl.schwartz_envelope(f)
        assert np.all(g.samples == 0.0)

    def test_moment_scan_power_tail(self):
        f = self.tail(lambda t: t**-10.0)
        g = idl.schwartz_envelope(f)
        for m in range(0, 9):
            prod = g.x**m * g.samples
            # bounded: the weighted envelope decays again after its hump
            assert np.all(np.isfinite(prod))
            assert np.max(prod[-g.n // 8 :]) <= 0.5 * np.max(prod)

    def test_domination_random_tails(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            vals = np.exp(-rng.uniform(0.5, 2.0) * np.linspace(1, 30, 256))
            vals *= 1.0 + 0.5 * np.sin(rng.uniform(1, 6) * np.linspace(1, 30, 256))
            f = gf.GridFn1D(vals, 1.0, 29.0 / 255, (1.0, 30.0))
            g = idl.schwartz_envelope(f)
            assert np.all(g.samples >= np.abs(f.samples))


class TestInversion:
    def test_flat_exp_maps_to_exponential(self):
        xs = 1e-3 + (1.0 - 1e-3) * np.arange(800) / 799.0
        f = gf.GridFn1D(np.exp(-1.0 / xs), xs[0], xs[1] - xs[0], (xs[0], xs[-1]))
        F = idl.invert_axis(f)
        expect = np.exp(-F.x)
        assert np.max(np.abs(F.samples - expect)) <= 1e-6

    def test_double_inversion_identity(self):
        xs = 0.05 + 0.95 * np.arange(400) / 399.0
        vals = np.exp(-1.0 / xs) * (1.0 + 0.3 * np.sin(3 * xs))
        f = gf.GridFn1D(vals, xs[0], xs[1] - xs[0], (xs[0], xs[-1]))
        # a dense intermediate grid keeps the monotone-cubic error in budget
        back = idl.invert_axis(idl.invert_axis(f, n_out=8 * f.n), n_out=f.n)
        interp = np.interp(f.x, back.x, back.samples)
        assert np.max(np.abs(interp - f.samples)) <= 1e-6

    def test_monomial_maps_to_inverse_power(self):
        xs = 0.1 + 0.9 * np.arange(400) / 399.0
        f = gf.GridFn1D(xs**3, xs[0], xs[1] - xs[0], (xs[0], xs[-1]))
        F = idl.invert_axis(f)
        assert np.max(np.abs(F.samples - F.x**-3.0)) <= 1e-6

    def test_requires_positive_domain(self):
        f = gf.GridFn1D(np.zeros(16), -0.1, 0.01, None)
        with pytest.raises(GridError):
            idl.invert_axis(f)


class TestFlatEnvelope:
    def profile(self, fn, dx=0.004, hi=0.8):
        xs = dx + dx * np.arange(int(hi / dx))
        return gf.GridFn1D(fn(xs), xs[0], dx, (xs[0], xs[-1]), _validate=False)

    def test_single_flat_member(self):
        fam = [self.profile(lambda x: np.exp(-1.0 / x))]
        g = idl.flat_envelope(fam)
        xs = fam[0].x
        win = (xs >= 4 * fam[0].dx) & (xs <= 0.1)
        ratio = fam[0].samples[win] / g.samples[win]
        assert np.all(np.isfinite(ratio))
        # ratio decays toward the origin
        assert ratio[0] <= 1e-2 * ratio[-1]

    def test_two_members_single_envelope(self):
        fam = [
            self.profile(lambda x: np.exp(-1.0 / x)),
            self.profile(lambda x: np.exp(-2.0 / x)),
        ]
        g = idl.flat_envelope(fam)
        for f in fam:
            win = (f.x >= 4 * f.dx) & (f.x <= 0.1)
            ratio = f.samples[win] / g.samples[win]
            assert ratio[0] <= 1e-2 * ratio[-1] + 1e-30

    def test_zero_family(self):
        fam = [self.profile(lambda x: 0.0 * x)]
        g = idl.flat_envelope(fam)
        assert np.all(g.samples == 0.0)

    def test_rejects_non_flat(self):
        fam = [self.profile(lambda x: x**2)]
        with pytest.raises(GridError, match="flat"):
            idl.flat_envelope(fam)


class TestFlatSplit:
    def make_flat(self, extra=None):
        u = an.flat_exp() * an.bump(0.0, 1.5)
        v = an.bump(0.0, 1.0) if extra is None else extra * an.bump(0.0, 1.0)
        return grid2d(u, v, half=2.0, n=201)

    def test_reconstruction(self):
        f = self.make_flat()
        split = idl.flat_split(f, G_max=2, M_max=2)
        assert split.ok, split.diagnostics
        assert split.diagnostics["reconstruction_sup"] <= 1e-10

    def test_rho_properties(self):
        f = self.make_flat()
        split = idl.flat_split(f, G_max=2, M_max=2)
        rho = split.rho
        j0 = np.argmin(np.abs(rho.x))
        assert rho.samples[j0] == 0.0
        off = np.abs(rho.x) >= 4 * rho.dx
        assert np.all(rho.samples[off] > 0.0)

    def test_zero_input(self):
        f = self.make_flat()
        z = f.like(np.zeros(f.shape), support=None)
        split = idl.flat_split(z, G_max=2, M_max=2)
        assert np.all(split.h.samples == 0.0)
        assert split.ok

    def test_y_derivative_transfer(self):
        # h inherits the y-profile (1 + y^2/4): per-column y-curvature,
        # normalised by the column's own sup, stays within 2x the plain
        # ratio f/rho at the 0.2 reference column
        extra = an.constant(1.0) + an.monomial(0.25, 2)
        f = self.make_flat(extra=extra)
        split = idl.flat_split(f, G_max=2, M_max=2)
        h = split.h
        d2 = gf.stencil_deriv(h.samples, h.spacing[1], 1, 2)
        col_sup = np.max(np.abs(h.samples), axis=1) + 1e-300
        curv = np.max(np.abs(d2), axis=1) / col_sup
        jref = int(np.argmin(np.abs(h.xs - 0.2)))
        win = (np.abs(h.xs) >= 4 * h.spacing[0]) & (np.abs(h.xs) <= 0.2)
        win &= col_sup > 1e-200
        assert np.max(curv[win]) <= 2.0 * curv[jref]

    def test_gate_rejects_non_flat(self):
        f = grid2d(an.monomial(1.0, 2) * an.bump(0.0, 1.2), an.bump(0.0, 1.0))
        with pytest.raises(OrderGateError):
            idl.flat_split(f)

    def test_caps(self):
        f = self.make_flat()
        with pytest.raises(GridError):
            idl.flat_split(f, G_max=5)


class TestModuleFactorize:
    def make_f(self, p, k=1, n=161):
        u = an.bump(0.0, 1.0)
        v = an.monomial(1.0, p) * an.bump(0.0, 1.5) if p else an.bump(0.0, 1.5)
        src = gf.Separable2D([(1.0, u, v)])
        half = 4.0
        d = 2 * half / (n - 1)
        return gf.GridFn2D(
            src.values(
                -half + d * np.arange(n), -half + d * np.arange(n)
            ) if False else src.values(np.linspace(-half, half, n), np.linspace(-half, half, n)),
            (-half, -half), (d, d), ((-1.0, 1.0), (-1.5, 1.5)), source=src,
        )

    def test_p2_q0_reconstruction(self):
        G = transf_instance(k=1)
        f = self.make_f(2)
        g, h = idl.module_factorize(G, f, 2, 0, side="target")
        tab = gp.flow_table(G.field, f.xs, f.ys)
        gt = g.source(tab)
        rec = gt * h.samples
        assert np.max(np.abs(f.samples - rec)) <= 1e-8

    def test_p0_trivial(self):
        G = transf_instance(k=1)
        f = self.make_f(0)
        g, h = idl.module_factorize(G, f, 0, 0, side="target")
        assert np.array_equal(h.samples, f.samples) or np.max(
            np.abs(h.samples - f.samples)
        ) <= 1e-12

    def test_source_side(self):
        G = transf_instance(k=1)
        f = self.make_f(1)
        g, h = idl.module_factorize(G, f, 1, 0, side="source")
        rec = g.source(f.ys)[None, :] * h.samples
        assert np.max(np.abs(f.samples - rec)) <= 1e-8

    def test_flat_route(self):
        G = transf_instance(k=1)
        u = an.bump(0.0, 1.0)
        v = an.flat_exp() * an.flat_exp() * an.bump(0.0, 1.0)
        src = gf.Separable2D([(1.0, u, v)])
        half, n = 4.0, 321
        d = 2 * half / (n - 1)
        f = gf.GridFn2D(
            src.values(np.linspace(-half, half, n), np.linspace(-half, half, n)),
            (-half, -half), (d, d), ((-1.0, 1.0), (-1.0, 1.0)), source=src,
        )
        g, h = idl.module_factorize(G, f, idl.INF, 0, side="source")
        est_g = idl.vanishing_order(
            gf.GridFn2D(
                np.tile(g.samples[None, :], (f.shape[0], 1)),
                f.origin, f.spacing, None, _validate=False,
            ),
            axis=1,
        )
        assert est_g.flat_flag

    def test_gate(self):
        G = transf_instance(k=1)
        f = self.make_f(1)
        with pytest.raises(OrderGateError):
            idl.module_factorize(G, f, 3, 0)


class TestExperiment:
    def test_forward_reverse_p1_q1(self):
        G = transf_instance(k=1)
        rep = idl.ideal_product_experiment(G, 1, 1, trials=3, seed=11)
        assert rep["pass"], rep["rows"]
        fwd = [r for r in rep["rows"] if r["direction"] == "forward"]
        assert all(r["measured_order"] >= 1.7 for r in fwd)

    def test_p0_q0_reduces_to_plain_factorization(self):
        G = transf_instance(k=1)
        rep = idl.ideal_product_experiment(G, 0, 0, trials=2, seed=5)
        assert rep["pass"]

    def test_flat_case(self):
        G = transf_instance(k=1)
        rep = idl.ideal_product_experiment(
            G, idl.INF, idl.INF, trials=2, seed=9
        )
        assert rep["pass"], rep["rows"]

    def test_determinism(self):
        G = transf_instance(k=1)
        a = idl.ideal_product_experiment(G, 1, 1, trials=2, seed=3)
        b = idl.ideal_product_experiment(G, 1, 1, trials=2, seed=3)
        assert a == b
