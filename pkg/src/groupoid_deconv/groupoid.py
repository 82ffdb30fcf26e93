"""Concrete groupoid instances over one-dimensional bases.

Three instances are provided, each with Lebesgue fibre measure as its
(right) Haar choice:

* the line group (arrows = R, one-point base),
* the pair groupoid over an interval (arrows = B x B, source pr1, target
  pr2, composition (b1,b2)(b2,b3) = (b1,b3)),
* the transformation groupoid R x_a B of a bounded flow field a(x) d/dx
  (arrows (t, b), source b, target Phi_t(b), composition
  (t1, Phi_{t2} b)(t2, b) = (t1+t2, b)).

Convolution follows (f*g)(gamma0) = int f(gamma^-1) g(gamma gamma0) over the
source fibre through the target of gamma0.  Concretely:

    line:            (f*g)(x)      = int f(-t) g(t+x) dt
    pair:            (f*g)(x, y)   = int f(w, y) g(x, w) dw
    transformation:  (f*g)(t0, b0) = int f(t0-s, Phi_s(b0)) g(s, b0) ds

Flows integrate with fixed-step classical RK4; grid tables march stepwise so
flow values at grid times are consistent with the group law to the RK4
tolerance.  Quadrature weights in the transformation case are averaged over
the two variable placements so that restriction to an invariant fibre is a
convolution homomorphism to round-off.

Fibre-axis grids for the transformation instance are required to be
symmetric about 0 so that t0 - s lands on the grid exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from enum import Enum
from typing import Optional, Union

import numpy as np

from . import analytic as an
from .analytic import AnalyticFn1D
from . import analytic as _an_mod
from .errors import DomainError, GridError
from .gridfn import (
    GridFn1D,
    GridFn2D,
    Separable2D,
    convolve_line,
    sample,
    simpson_weights,
)

__all__ = [
    "Kind",
    "FlowField",
    "GroupoidInstance",
    "flow",
    "flow_table",
    "convolve",
    "integrated_rep",
    "integrated_rep_line",
    "restrict_to_GX",
    "mul_source",
    "mul_target",
    "target_interval",
    "iterate_field",
    "FlowPullback2D",
    "ProductSource2D",
    "instance_to_dict",
    "instance_from_dict",
]


class Kind(str, Enum):
    LINE_GROUP = "line_group"
    PAIR = "pair_groupoid"
    TRANSFORMATION = "transformation"


@dataclass(frozen=True)
class FlowField:
    """A vector field a(x) d/dx with the fixed-step RK4 configuration."""

    a: AnalyticFn1D
    h_flow: float = 0.01
    t_max: float = 8.0


@dataclass(frozen=True)
class GroupoidInstance:
    kind: Kind
    base_box: Optional[tuple[float, float]] = None
    field: Optional[FlowField] = None
    grid_spec: Optional[dict] = dc_field(default=None, compare=False)

    def __post_init__(self):
        if self.kind in (Kind.PAIR, Kind.TRANSFORMATION) and self.base_box is None:
            raise GridError(f"{self.kind.value} needs a base box")
        if self.kind is Kind.TRANSFORMATION:
            if self.field is None:
                raise GridError("transformation groupoid needs a flow field")
            if not self.field.a.bounded():
                raise GridError(
                    "transformation flow field must be globally bounded "
                    "(completeness guard)"
                )


# ---------------------------------------------------------------------------
# flows
# ---------------------------------------------------------------------------


def _rk4_step(a: AnalyticFn1D, x: np.ndarray, h: float) -> np.ndarray:
    k1 = a(x)
    k2 = a(x + 0.5 * h * k1)
    k3 = a(x + 0.5 * h * k2)
    k4 = a(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def flow(field: FlowField, t: float, x, box: Optional[tuple[float, float]] = None):
    """Phi_t(x) by fixed-step RK4; Phi_0 is the identity exactly."""
    if abs(t) > field.t_max + 1e-12:
        raise DomainError(f"|t|={abs(t)} exceeds the flow horizon {field.t_max}")
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    out = np.atleast_1d(arr).copy()
    if t != 0.0:
        n = max(1, int(math.ceil(abs(t) / field.h_flow - 1e-12)))
        h = t / n
        for _ in range(n):
            out = _rk4_step(field.a, out, h)
        _check_flow_box(field, out, box, abs(t))
    return float(out[0]) if scalar else out


def _check_flow_box(field, values, box, horizon):
    if not np.all(np.isfinite(values)):
        raise DomainError("flow produced non-finite values")
    if box is not None:
        lo, hi = box
        margin = horizon * 1.0 + 1.0  # bounded fields move at most |a|<=1-ish
        if np.any(values < lo - margin - 8.0) or np.any(values > hi + margin + 8.0):
            raise DomainError("flow left the expanded base box")


def flow_table(field: FlowField, times: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Phi_{times[i]}(xs[j]) marched stepwise from t = 0 outward.

    `times` must be ascending and uniform; marching keeps successive rows
    consistent so group-law defects stay at the RK4 tolerance.
    """
    times = np.asarray(times, dtype=float)
    xs = np.asarray(xs, dtype=float)
    out = np.empty((times.size, xs.size))
    if times.size == 0:
        return out
    dt = times[1] - times[0] if times.size > 1 else 0.0
    # index of the time closest to 0 (clip into range for one-sided spans)
    i0 = int(np.clip(np.searchsorted(times, 0.0), 0, times.size - 1))
    if i0 > 0 and abs(times[i0 - 1]) < abs(times[i0]):
        i0 -= 1
    state = flow(field, float(times[i0]), xs)
    out[i0] = state
    sub = max(1, int(math.ceil(abs(dt) / field.h_flow - 1e-12))) if dt else 1
    up = state.copy()
    for i in range(i0 + 1, times.size):
        h = dt / sub
        for _ in range(sub):
            up = _rk4_step(field.a, up, h)
        out[i] = up
    down = state.copy()
    for i in range(i0 - 1, -1, -1):
        h = -dt / sub
        for _ in range(sub):
            down = _rk4_step(field.a, down, h)
        out[i] = down
    if not np.all(np.isfinite(out)):
        raise DomainError("flow table produced non-finite values")
    return out


def iterate_field(a: AnalyticFn1D, u: AnalyticFn1D, m: int) -> AnalyticFn1D:
    """(a d/dx)^m u as a closed-form function."""
    out = u
    for _ in range(m):
        out = a * out.deriv(1)
    return out


def iterate_field_samples(
    a: AnalyticFn1D, u: AnalyticFn1D, xs: np.ndarray, m: int, order: int = 0
) -> np.ndarray:
    """The `order`-th derivative of (a d/dx)^m u, sampled at xs, via the
    derivative-triangle recursion ((a v)')^(r) = sum_j C(r,j) a^(j) v^(r-j+1):
    exact values at array cost."""
    if m == 0:
        return u(xs, order=order)
    top = m + order
    a_der = [a(xs, order=j) for j in range(top + 1)]
    cur = [u(xs, order=r) for r in range(top + 1)]
    for level in range(m):
        rmax = top - level - 1
        nxt = []
        for r in range(rmax + 1):
            acc = np.zeros_like(xs)
            # (X v)^(r) = (a v')^(r)
            for j in range(r + 1):
                acc = acc + math.comb(r, j) * a_der[j] * cur[r - j + 1]
            nxt.append(acc)
        cur = nxt
    return cur[order]


class _FieldIterateNode(_an_mod._Node):
    """(a d/dx)^m u as a closed-form node evaluated by the array recursion."""

    def __init__(self, a: AnalyticFn1D, u: AnalyticFn1D, m: int):
        self.a = a
        self.u = u
        self.m = m
        self.max_order = max(u.max_exact_derivative_order - m, 0)

    def _eval(self, x, order, cache):
        return iterate_field_samples(self.a, self.u, x, self.m, order=order)

    def support(self):
        return self.u.support()

    def bounded(self):
        s = self.support()
        import math as _math

        return s is not None and _math.isfinite(s[0]) and _math.isfinite(s[1])

    def label(self):
        return f"field_iterate(m={self.m})"


def field_iterate_fn(a: AnalyticFn1D, u: AnalyticFn1D, m: int) -> AnalyticFn1D:
    """(a d/dx)^m u packaged for exact pointwise evaluation."""
    return AnalyticFn1D(_FieldIterateNode(a, u, m))


# ---------------------------------------------------------------------------
# exact sources tied to flows
# ---------------------------------------------------------------------------


class FlowPullback2D:
    """u(Phi_t(b)) on 2-d grids: the pullback of a base function along the
    target map of the transformation groupoid.  Fibre-axis derivatives are
    exact: d/dt [u(Phi_t(b))] = ((a u')(Phi_t(b)))."""

    def __init__(self, u: AnalyticFn1D, field: FlowField):
        self.u = u
        self.field = field
        self._tables: dict = {}

    def _table(self, xs, ys) -> np.ndarray:
        key = (xs[0], xs[-1], xs.size, ys[0], ys[-1], ys.size)
        tab = self._tables.get(key)
        if tab is None:
            tab = flow_table(self.field, xs, ys)
            self._tables[key] = tab
        return tab

    def values(self, xs, ys) -> np.ndarray:
        return self.u(self._table(xs, ys))

    def deriv_axis(self, grid: GridFn2D, axis: int, m: int) -> np.ndarray:
        if axis != 0:
            raise NotImplementedError("flow pullback: exact derivatives are fibre-axis only")
        fn = iterate_field(self.field.a, self.u, m)
        return fn(self._table(grid.xs, grid.ys))

    def support_box(self):
        return None  # not tracked; the wrapping grid carries certified support


class ProductSource2D:
    """Pointwise product of two sources with Leibniz fibre derivatives."""

    def __init__(self, a, b):
        self.a = a
        self.b = b

    def values(self, xs, ys) -> np.ndarray:
        return self.a.values(xs, ys) * self.b.values(xs, ys)

    def deriv_axis(self, grid: GridFn2D, axis: int, m: int) -> np.ndarray:
        acc = np.zeros(grid.shape)
        for j in range(m + 1):
            acc += (
                math.comb(m, j)
                * self.a.deriv_axis(grid, axis, j)
                * self.b.deriv_axis(grid, axis, m - j)
            )
        return acc

    def support_box(self):
        return None


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def _check_matching(f: GridFn2D, g: GridFn2D):
    if f.shape != g.shape or f.origin != g.origin or f.spacing != g.spacing:
        raise GridError("convolution operands need identical grids")


def _check_symmetric_fiber(f: GridFn2D):
    lo, hi = f.xs[0], f.xs[-1]
    if abs(lo + hi) > 1e-9 * max(1.0, abs(hi)):
        raise GridError("transformation fibre grids must be symmetric about 0")


def convolve(G: GroupoidInstance, f, g, fiber_refine: int = 1):
    """Groupoid convolution with respect to Lebesgue fibre measure.

    `fiber_refine` subsamples the fibre integration variable (resampling the
    operands exactly when they carry closed-form sources) so that steep
    integrands are resolved without changing the output grid.
    """
    if G.kind is Kind.LINE_GROUP:
        return _convolve_line_refined(f, g, fiber_refine)
    if G.kind is Kind.PAIR:
        return _convolve_pair(f, g, fiber_refine)
    return _convolve_transformation(G, f, g, fiber_refine)


def _convolve_line_refined(f: GridFn1D, g: GridFn1D, refine: int) -> GridFn1D:
    if refine == 1:
        return convolve_line(f, g)
    ff, gg = f.refine(refine), g.refine(refine)
    fine = convolve_line(ff, gg)
    coarse = fine.samples[::refine]
    sup = fine.support
    return GridFn1D(coarse, fine.x0, f.dx, sup)


def _convolve_pair(f: GridFn2D, g: GridFn2D, refine: int) -> GridFn2D:
    _check_matching(f, g)
    if abs(f.spacing[0] - f.spacing[1]) > 1e-12 or f.origin[0] != f.origin[1]:
        raise GridError("pair groupoid functions live on square B x B grids")
    ff = f.refine_axis(0, refine)
    gg = g.refine_axis(1, refine)
    w = simpson_weights(ff.shape[0]) * ff.spacing[0]
    vals = (gg.samples * w[None, :]) @ ff.samples
    sup = None
    if f.support is not None and g.support is not None:
        sup = (g.support[0], f.support[1])
    if sup is None:
        vals = np.zeros_like(vals)
    return GridFn2D(vals, f.origin, f.spacing, sup)


def _convolve_transformation(
    G: GroupoidInstance, f: GridFn2D, g: GridFn2D, refine: int
) -> GridFn2D:
    _check_matching(f, g)
    _check_symmetric_fiber(f)
    if f.support is None or g.support is None:
        return f.like(np.zeros(f.shape), support=None)
    # fibre support of the product is the Minkowski sum; reject escapes
    lo = f.support[0][0] + g.support[0][0]
    hi = f.support[0][1] + g.support[0][1]
    t_lo, t_hi = f.xs[0], f.xs[-1]
    if lo < t_lo - 1e-9 or hi > t_hi + 1e-9:
        raise DomainError(
            f"convolution fibre support [{lo:.3f}, {hi:.3f}] escapes the grid "
            f"box [{t_lo:.3f}, {t_hi:.3f}]; enlarge the fibre axis"
        )
    ff = f.refine_axis(0, refine)
    gg = g.refine_axis(0, refine)
    dtf = ff.spacing[0]
    nf = ff.shape[0]
    n_t, n_b = f.shape
    c0 = (0.0 - ff.origin[0]) / dtf  # fine index of fibre position 0
    c0i = int(round(c0))
    if abs(c0 - c0i) > 1e-8:
        raise GridError("fibre grid must contain 0")
    w_fine = simpson_weights(nf)
    sep_terms = None
    if isinstance(ff.source, Separable2D):
        sep_terms = [
            (c, u(ff.xs), v) for c, u, v in ff.source.terms
        ]
    Phi = flow_table(G.field, gg.xs, gg.ys)
    acc_g = np.zeros((n_t, n_b))
    acc_f = np.zeros((n_t, n_b))
    blo, bhi = ff.ys[0], ff.ys[-1]
    for q in range(nf):
        grow = gg.samples[q]
        if not np.any(grow):
            continue
        phi_q = Phi[q]
        inside = (phi_q >= blo) & (phi_q <= bhi)
        # f fibre index for output i0: m = i0*refine + (c0i - q)
        shift = c0i - q
        i0_min = max(0, int(math.ceil((-shift) / refine)))
        i0_max = min(n_t - 1, (nf - 1 - shift) // refine)
        if i0_min > i0_max:
            continue
        row_sel = slice(i0_min * refine + shift, i0_max * refine + shift + 1, refine)
        if sep_terms is not None:
            rows = np.zeros((i0_max - i0_min + 1, n_b))
            phi_cl = np.clip(phi_q, blo, bhi)
            for cterm, ufine, v in sep_terms:
                vvals = np.where(inside, cterm * v(phi_cl), 0.0)
                rows += np.outer(ufine[row_sel], vvals)
        else:
            phi_c = np.clip(phi_q, blo, bhi)
            # spline only the rows this q actually contributes to
            from scipy.interpolate import CubicSpline as _CS

            rows = _CS(ff.ys, ff.samples[row_sel], axis=1)(phi_c)
            rows = rows * inside[None, :]
        sl = slice(i0_min, i0_max + 1)
        acc_g[sl] += w_fine[q] * rows * grow[None, :]
        wf = w_fine[row_sel]
        acc_f[sl] += wf[:, None] * rows * grow[None, :]
    vals = 0.5 * dtf * (acc_g + acc_f)
    sup_t = (max(lo, t_lo), min(hi, t_hi))
    sup = (sup_t, g.support[1])
    out = np.zeros_like(vals)
    mt = (f.xs >= sup_t[0] - 1e-12) & (f.xs <= sup_t[1] + 1e-12)
    mb = (f.ys >= sup[1][0] - 1e-12) & (f.ys <= sup[1][1] + 1e-12)
    out[np.ix_(mt, mb)] = vals[np.ix_(mt, mb)]
    return GridFn2D(out, f.origin, f.spacing, sup)


# ---------------------------------------------------------------------------
# integrated representations
# ---------------------------------------------------------------------------


def integrated_rep_line(
    field: Optional[FlowField],
    f: GridFn1D,
    psi: GridFn1D,
    substeps: int = 1,
) -> GridFn1D:
    """(pi(f)psi)(m) = int f(-t) psi(Phi_t(m)) dt for a flow on an interval.

    `field=None` means the translation flow Phi_t(m) = m + t.  The t-grid is
    f's grid `substeps` times refined; psi at flowed points is evaluated from
    its closed-form source when available, by cubic spline otherwise.
    """
    ff = f.refine(substeps)
    ts = ff.x
    w = simpson_weights(ff.n) * ff.dx
    fvals = ff.eval(-ts)
    ms = psi.x
    out = np.zeros(psi.n)
    if field is None:
        pts = ms[None, :] + ts[:, None]
    else:
        pts = flow_table(field, ts, ms)
    vals = psi.eval(pts.ravel()).reshape(pts.shape)
    out = np.einsum("t,t,tm->m", w, fvals, vals)
    if psi.support is None or f.support is None:
        sup = None
        out = np.zeros(psi.n)
    else:
        sup = psi.box()  # flow transport can move support anywhere inside
    return GridFn1D(out, psi.x0, psi.dx, sup)


def integrated_rep(
    G: GroupoidInstance,
    action: str,
    f,
    psi,
    fiber_refine: int = 1,
):
    """Integrated form of an action of the groupoid.

    action="self-left": the groupoid acting on its own arrow space by left
    multiplication; coincides with `convolve` (same code path).
    action="on-base": the action on the unit space (momentum = identity).
    """
    if action == "self-left":
        return convolve(G, f, psi, fiber_refine=fiber_refine)
    if action != "on-base":
        raise GridError("action must be 'self-left' or 'on-base'")
    if G.kind is Kind.LINE_GROUP:
        # one-point base: psi is a scalar
        from .gridfn import integrate

        return float(psi) * integrate(f)
    if G.kind is Kind.PAIR:
        # (pi(f)chi)(b) = int f(w, b) chi(w) dw
        w = simpson_weights(f.shape[0]) * f.spacing[0]
        chi_vals = psi.eval(f.xs)
        vals = (w * chi_vals) @ f.samples
        sup = None if f.support is None else f.support[1]
        return GridFn1D(vals, f.origin[1], f.spacing[1], sup)
    # transformation: (pi(f)chi)(b) = int f(-tau, Phi_tau(b)) chi(Phi_tau(b)) dtau
    _check_symmetric_fiber(f)
    ff = f.refine_axis(0, fiber_refine)
    ts = ff.xs
    w = simpson_weights(ts.size) * ff.spacing[0]
    Phi = flow_table(G.field, ts, psi.x)
    out = np.zeros(psi.n)
    blo, bhi = ff.ys[0], ff.ys[-1]
    if isinstance(ff.source, Separable2D):
        f_at = lambda tneg_idx, pts: sum(
            c * u(ff.xs[tneg_idx]) * v(pts) for c, u, v in ff.source.terms
        )
        use_sep = True
    else:
        spline = ff.spline_along(1)
        use_sep = False
    for q in range(ts.size):
        neg_idx = ts.size - 1 - q  # -tau on the symmetric fibre grid
        pts = Phi[q]
        inside = (pts >= blo) & (pts <= bhi)
        ptsc = np.clip(pts, blo, bhi)
        if use_sep:
            frow = np.where(inside, f_at(neg_idx, ptsc), 0.0)
        else:
            frow = np.where(inside, spline(ptsc)[neg_idx], 0.0)
        out += w[q] * frow * psi.eval(pts)
    sup = psi.box() if (f.support is not None and psi.support is not None) else None
    if sup is None:
        out = np.zeros(psi.n)
    return GridFn1D(out, psi.x0, psi.dx, sup)


# ---------------------------------------------------------------------------
# restriction and bimodule products
# ---------------------------------------------------------------------------


def restrict_to_GX(G: GroupoidInstance, f: GridFn2D) -> GridFn1D:
    """Restrict to the fibre over the fixed point 0 of the base flow; the
    restricted groupoid is the line group."""
    if G.kind is not Kind.TRANSFORMATION:
        raise GridError("restriction targets the transformation instance")
    a0 = G.field.a(0.0)
    if abs(a0) > 1e-14:
        raise GridError(f"base point 0 is not invariant: a(0) = {a0}")
    j0 = int(round((0.0 - f.origin[1]) / f.spacing[1]))
    if j0 < 0 or j0 >= f.shape[1] or abs(f.ys[j0]) > 1e-9:
        raise GridError("base grid must contain 0")
    col = np.array(f.samples[:, j0])
    sup = None
    if f.support is not None and f.support[1][0] <= 0.0 <= f.support[1][1]:
        if np.any(col != 0.0):
            sup = f.support[0]
    if sup is None:
        col = np.zeros_like(col)
    source = None
    if isinstance(f.source, Separable2D):
        terms = [(c * v(0.0), u) for c, u, v in f.source.terms]
        source = an.lincomb([(c, u) for c, u in terms])
    return GridFn1D(col, f.origin[0], f.spacing[0], sup, source=source)


def mul_source(G: GroupoidInstance, u: AnalyticFn1D, f: GridFn2D) -> GridFn2D:
    """(f . u)(gamma) = f(gamma) u(s(gamma)): right module product."""
    if G.kind is Kind.PAIR:
        vals = f.samples * u(f.xs)[:, None]
        axis_sup = _intersect(f.support, u.support(), axis=0)
        factor = Separable2D([(1.0, u, an.constant(1.0))])
    else:
        vals = f.samples * u(f.ys)[None, :]
        axis_sup = _intersect(f.support, u.support(), axis=1)
        factor = Separable2D([(1.0, an.constant(1.0), u)])
    src = None
    if isinstance(f.source, Separable2D):
        if G.kind is Kind.PAIR:
            src = Separable2D([(c, uu * u, vv) for c, uu, vv in f.source.terms])
        else:
            src = Separable2D([(c, uu, vv * u) for c, uu, vv in f.source.terms])
    elif f.source is not None:
        src = ProductSource2D(f.source, factor)
    return GridFn2D(vals, f.origin, f.spacing, axis_sup, source=src)


def mul_target(G: GroupoidInstance, u: AnalyticFn1D, f: GridFn2D) -> GridFn2D:
    """(u . f)(gamma) = u(t(gamma)) f(gamma): left module product."""
    if G.kind is Kind.PAIR:
        vals = f.samples * u(f.ys)[None, :]
        sup = _intersect(f.support, u.support(), axis=1)
        src = None
        if isinstance(f.source, Separable2D):
            src = Separable2D([(c, uu, vv * u) for c, uu, vv in f.source.terms])
        elif f.source is not None:
            src = ProductSource2D(
                f.source, Separable2D([(1.0, an.constant(1.0), u)])
            )
        return GridFn2D(vals, f.origin, f.spacing, sup, source=src)
    pb = FlowPullback2D(u, G.field)
    vals = f.samples * pb.values(f.xs, f.ys)
    src = None
    if f.source is not None:
        src = ProductSource2D(f.source, pb)
    return GridFn2D(vals, f.origin, f.spacing, f.support, source=src)


def _intersect(box, interval, axis):
    if box is None or interval is None:
        return None
    lo = max(box[axis][0], interval[0])
    hi = min(box[axis][1], interval[1])
    if lo > hi:
        return None
    out = [box[0], box[1]]
    out[axis] = (lo, hi)
    return (out[0], out[1])


def target_interval(G: GroupoidInstance, f: GridFn2D) -> Optional[tuple[float, float]]:
    """Interval hull of t(supp f) on the base."""
    if f.support is None:
        return None
    if G.kind is Kind.PAIR:
        return f.support[1]
    (tlo, thi), (blo, bhi) = f.support
    ts = f.xs[(f.xs >= tlo - 1e-12) & (f.xs <= thi + 1e-12)]
    ends = flow_table(G.field, ts, np.array([blo, bhi]))
    return (float(np.min(ends)), float(np.max(ends)))


# ---------------------------------------------------------------------------
# descriptors
# ---------------------------------------------------------------------------


def field_from_spec(spec: Union[str, dict], h_flow: float = 0.01, t_max: float = 8.0) -> FlowField:
    if spec == "zero":
        a = an.constant(0.0)
    elif spec == "unit":
        a = an.constant(1.0)
    elif isinstance(spec, dict) and "tanh_k" in spec:
        a = an.tanh_power(int(spec["tanh_k"]))
    else:
        raise GridError(f"unknown field spec {spec!r}")
    return FlowField(a=a, h_flow=h_flow, t_max=t_max)


def _field_to_spec(field: FlowField):
    # round-trippable for the shipped vocabulary
    a = field.a
    probe = np.array([-2.0, -0.5, 0.5, 2.0])
    vals = a(probe)
    if np.all(vals == 0.0):
        return "zero"
    if np.all(vals == 1.0):
        return "unit"
    for k in range(1, 9):
        if np.allclose(vals, np.tanh(probe) ** k, atol=1e-13):
            return {"tanh_k": k}
    raise GridError("field is outside the serialisable vocabulary")


def instance_to_dict(G: GroupoidInstance) -> dict:
    out: dict = {"kind": G.kind.value}
    if G.base_box is not None:
        out["base_box"] = [float(G.base_box[0]), float(G.base_box[1])]
    if G.field is not None:
        out["field"] = _field_to_spec(G.field)
        out["ode"] = {"h_flow": G.field.h_flow, "T_max": G.field.t_max}
    if G.grid_spec is not None:
        out["grid"] = G.grid_spec
    return out


def instance_from_dict(d: dict) -> GroupoidInstance:
    kind = Kind(d["kind"])
    base_box = tuple(d["base_box"]) if "base_box" in d else None
    field = None
    if "field" in d:
        ode = d.get("ode", {})
        field = field_from_spec(
            d["field"], h_flow=ode.get("h_flow", 0.01), t_max=ode.get("T_max", 8.0)
        )
    return GroupoidInstance(
        kind=kind, base_box=base_box, field=field, grid_spec=d.get("grid")
    )
