"""Closed-form scalar functions with exact derivatives of every order.

The factorization kernels put high-order derivatives on test functions.
Finite differencing of order five and up is hopeless in float64 at the grid
spacings this library runs at, so every generator and test function is built
from a small expression-tree vocabulary whose nodes know their own derivatives
in closed form:

    constant, monomial, one-sided monomial t_+^p, bump, smooth step,
    exponential kink e^{-lam|t|}, polynomial in tanh, flat exponential
    e^{-1/t^2}, sums, products, affine substitution t -> a*t + b, and a
    derivative marker.

The standard bump is b(t) = exp(1 - 1/(1 - t^2)) on (-1, 1), zero outside,
normalised so b(0) = 1.  Its derivatives follow the rational recurrence
b^(m) = P_m(t)/(1-t^2)^(2m) * b(t) with P_m polynomial, so no differencing is
ever needed near the support boundary.  Evaluation switches to log form close
to the boundary to dodge 0 * inf.

Supports are tracked as certified interval metadata: evaluating any node
outside its declared support returns exactly 0.0 for compactly supported
trees (the product node masks before touching its factors, which also keeps
monomial overflow from polluting masked-out regions).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "AnalyticError",
    "AnalyticFn1D",
    "constant",
    "monomial",
    "positive_power",
    "bump",
    "gaussian_bump",
    "smooth_step",
    "plateau",
    "exp_abs",
    "tanh_power",
    "flat_exp",
    "UNBOUNDED_ORDER",
]

UNBOUNDED_ORDER = 10**9

Interval = tuple[float, float]


class AnalyticError(ValueError):
    """Raised for invalid closed-form constructions or evaluations."""


def _hull(a: Optional[Interval], b: Optional[Interval]) -> Optional[Interval]:
    if a is None:
        return b
    if b is None:
        return a
    return (min(a[0], b[0]), max(a[1], b[1]))


def _meet(a: Optional[Interval], b: Optional[Interval]) -> Optional[Interval]:
    if a is None or b is None:
        return None
    lo, hi = max(a[0], b[0]), min(a[1], b[1])
    if lo > hi:
        return None
    return (lo, hi)


# ---------------------------------------------------------------------------
# nodes
# ---------------------------------------------------------------------------


class _Node:
    """One operator of the expression tree."""

    max_order: int = UNBOUNDED_ORDER

    def eval(self, x: np.ndarray, order: int, cache: dict) -> np.ndarray:
        key = (id(self), order)
        out = cache.get(key)
        if out is None:
            out = self._eval(x, order, cache)
            cache[key] = out
        return out

    def _eval(self, x: np.ndarray, order: int, cache: dict) -> np.ndarray:
        raise NotImplementedError

    def support(self) -> Optional[Interval]:
        return (-math.inf, math.inf)

    def bounded(self) -> bool:
        return False

    def label(self) -> str:
        return type(self).__name__.lstrip("_").lower()

    def children(self) -> Sequence["_Node"]:
        return ()


class _Const(_Node):
    def __init__(self, c: float):
        self.c = float(c)

    def _eval(self, x, order, cache):
        if order == 0:
            return np.full_like(x, self.c)
        return np.zeros_like(x)

    def support(self):
        if self.c == 0.0:
            return None
        return (-math.inf, math.inf)

    def bounded(self):
        return True

    def label(self):
        return f"constant({self.c})"


class _Mono(_Node):
    """coef * t**power, integer power >= 0."""

    def __init__(self, coef: float, power: int):
        if power < 0 or power != int(power):
            raise AnalyticError("monomial power must be a nonnegative integer")
        self.coef = float(coef)
        self.power = int(power)

    def _eval(self, x, order, cache):
        p, c = self.power, self.coef
        if c == 0.0 or order > p:
            return np.zeros_like(x)
        fac = c * math.perm(p, order)
        return fac * x ** (p - order)

    def support(self):
        return None if self.coef == 0.0 else (-math.inf, math.inf)

    def bounded(self):
        return self.coef == 0.0 or self.power == 0

    def label(self):
        return f"monomial(t^{self.power})"


class _MonoPlus(_Node):
    """coef * t**power on t >= 0, zero on t < 0 (kink of order `power` at 0).

    Classical derivatives of order m < power are continuous; at m == power the
    value at t == 0 is taken to be 0 (left limit).
    """

    def __init__(self, coef: float, power: int):
        if power < 1:
            raise AnalyticError("one-sided monomial needs power >= 1")
        self.coef = float(coef)
        self.power = int(power)
        self.max_order = self.power

    def _eval(self, x, order, cache):
        p, c = self.power, self.coef
        out = np.zeros_like(x)
        if c == 0.0 or order > p:
            return out
        pos = x > 0.0
        fac = c * math.perm(p, order)
        if order == p:
            out[pos] = fac
        else:
            out[pos] = fac * x[pos] ** (p - order)
        return out

    def support(self):
        return None if self.coef == 0.0 else (0.0, math.inf)

    def label(self):
        return f"one_sided_monomial(t_+^{self.power})"


def _poly_val(coeffs: np.ndarray, x: np.ndarray) -> np.ndarray:
    # Horner, low-to-high coefficient order.
    out = np.zeros_like(x)
    for c in coeffs[::-1]:
        out = out * x + c
    return out


def _poly_deriv(coeffs: np.ndarray) -> np.ndarray:
    if len(coeffs) <= 1:
        return np.zeros(1)
    return coeffs[1:] * np.arange(1, len(coeffs))


def _poly_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.convolve(a, b)


class _Bump(_Node):
    """exp(1 - 1/(1 - t^2)) on (-1, 1), zero outside; b(0) = 1.

    b^(m)(t) = P_m(t) / (1 - t^2)^(2m) * b(t) with the polynomial recurrence
        P_{m+1} = (P_m' (1-t^2) + 4 m t P_m)(1-t^2) - 2 t P_m,   P_0 = 1.
    """

    _P: list[np.ndarray] = [np.array([1.0])]

    @classmethod
    def _rational(cls, m: int) -> np.ndarray:
        while len(cls._P) <= m:
            k = len(cls._P) - 1
            cls._P.append(cls._build_next(cls._P[-1], k))
        return cls._P[m]

    @staticmethod
    def _build_next(P: np.ndarray, k: int) -> np.ndarray:
        one_minus_t2 = np.array([1.0, 0.0, -1.0])
        tP = np.pad(P, (1, 0))
        inner = _poly_mul(_poly_deriv(P), one_minus_t2)
        n = max(len(inner), len(tP))
        inner = np.pad(inner, (0, n - len(inner)))
        inner = inner + 4.0 * k * np.pad(tP, (0, n - len(tP)))
        out = _poly_mul(inner, one_minus_t2)
        m = max(len(out), len(tP))
        out = np.pad(out, (0, m - len(out))) - 2.0 * np.pad(tP, (0, m - len(tP)))
        return out

    def _eval(self, x, order, cache):
        out = np.zeros_like(x)
        inside = np.abs(x) < 1.0
        if not np.any(inside):
            return out
        xi = x[inside]
        u = 1.0 - xi * xi
        log_b = 1.0 - 1.0 / u
        if order == 0:
            out[inside] = np.exp(log_b)
            return out
        P = self._rational(order)
        pv = _poly_val(P, xi)
        # log-form keeps P/u^{2m} * b finite as |t| -> 1
        mag = np.exp(log_b - 2.0 * order * np.log(u))
        out[inside] = pv * mag
        return out

    def support(self):
        return (-1.0, 1.0)

    def bounded(self):
        return True

    def label(self):
        return "bump"


# cumulative integral of the bump over [-1, x], needed by the smooth step ----

_BUMP_PANELS = 64
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)


def _bump_values(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    inside = np.abs(x) < 1.0
    u = 1.0 - x[inside] ** 2
    out[inside] = np.exp(1.0 - 1.0 / u)
    return out


def _build_bump_prefix() -> tuple[np.ndarray, np.ndarray]:
    edges = np.linspace(-1.0, 1.0, _BUMP_PANELS + 1)
    panel = np.zeros(_BUMP_PANELS)
    for i in range(_BUMP_PANELS):
        a, b = edges[i], edges[i + 1]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        panel[i] = half * np.dot(_GL_WEIGHTS, _bump_values(mid + half * _GL_NODES))
    prefix = np.concatenate([[0.0], np.cumsum(panel)])
    return edges, prefix


_BUMP_EDGES, _BUMP_PREFIX = _build_bump_prefix()
BUMP_MASS = float(_BUMP_PREFIX[-1])


def _bump_cdf(x: np.ndarray) -> np.ndarray:
    """Integral of the standard bump over [-1, min(x, 1)], vectorised."""
    x = np.asarray(x, dtype=float)
    xc = np.clip(x, -1.0, 1.0)
    idx = np.clip(
        np.searchsorted(_BUMP_EDGES, xc, side="right") - 1, 0, _BUMP_PANELS - 1
    )
    lo = _BUMP_EDGES[idx]
    out = _BUMP_PREFIX[idx].copy()
    mid = 0.5 * (lo + xc)
    half = 0.5 * (xc - lo)
    acc = np.zeros_like(xc)
    for node, w in zip(_GL_NODES, _GL_WEIGHTS):
        acc += w * _bump_values(mid + half * node)
    out += half * acc
    return out


class _SmoothStep(_Node):
    """Monotone C^inf step: identically 0 for t <= 1, identically 1 for t >= 2.

    s(t) = (that bump CDF)(2t - 3) / (bump mass); derivatives reduce to bump
    derivatives, so they are exact.
    """

    def _eval(self, x, order, cache):
        if order == 0:
            out = np.zeros_like(x)
            hi = x >= 2.0
            mid = (x > 1.0) & (x < 2.0)
            out[hi] = 1.0
            out[mid] = _bump_cdf(2.0 * x[mid] - 3.0) / BUMP_MASS
            return out
        b = _Bump()
        return (2.0**order / BUMP_MASS) * b.eval(2.0 * x - 3.0, order - 1, cache={})

    def support(self):
        return (1.0, math.inf)

    def bounded(self):
        return True

    def label(self):
        return "smooth_step"


class _ExpAbs(_Node):
    """exp(-lam * |t|).

    Odd-order derivatives at t == 0 use the symmetric (average) convention 0;
    even orders take the common one-sided value lam^m.  The kink only ever
    sits at a quadrature panel boundary in this library, so the convention
    never enters an integral with nonzero weight asymmetry.
    """

    def __init__(self, lam: float):
        if lam <= 0:
            raise AnalyticError("exp_abs rate must be positive")
        self.lam = float(lam)

    def _eval(self, x, order, cache):
        lam = self.lam
        mag = np.exp(-lam * np.abs(x))
        if order == 0:
            return mag
        sign = np.where(x > 0, (-lam) ** order, lam**order)
        out = sign * mag
        if order % 2 == 1:
            out = np.where(x == 0.0, 0.0, out)
        return out

    def bounded(self):
        return True

    def label(self):
        return f"exp_abs(lam={self.lam})"


class _TanhPoly(_Node):
    """P(tanh t) for a polynomial P; closed under d/dt via Q = P'(u)(1-u^2)."""

    def __init__(self, coeffs: Sequence[float]):
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.ndim != 1 or len(self.coeffs) == 0:
            raise AnalyticError("tanh polynomial needs 1-d coefficients")
        self._derived: list[np.ndarray] = [self.coeffs]

    def _poly(self, order: int) -> np.ndarray:
        one_minus_u2 = np.array([1.0, 0.0, -1.0])
        while len(self._derived) <= order:
            self._derived.append(_poly_mul(_poly_deriv(self._derived[-1]), one_minus_u2))
        return self._derived[order]

    def _eval(self, x, order, cache):
        return _poly_val(self._poly(order), np.tanh(x))

    def support(self):
        if np.all(self.coeffs == 0.0):
            return None
        return (-math.inf, math.inf)

    def bounded(self):
        return True

    def label(self):
        return "tanh_poly"


class _FlatExp(_Node):
    """exp(-1/t^2) for t != 0 and 0 at t = 0: flat at the origin, positive off it.

    f^(m)(t) = P_m(t)/t^(3m) * f(t) with P_{m+1} = P_m' t^3 - 3 m P_m t^2 + 2 P_m.
    """

    _P: list[np.ndarray] = [np.array([1.0])]

    @classmethod
    def _rational(cls, m: int) -> np.ndarray:
        while len(cls._P) <= m:
            k = len(cls._P) - 1
            P = cls._P[-1]
            t3 = np.array([0.0, 0.0, 0.0, 1.0])
            t2 = np.array([0.0, 0.0, 1.0])
            a = _poly_mul(_poly_deriv(P), t3)
            b = _poly_mul(3.0 * k * P, t2)
            n = max(len(a), len(b), len(P))
            nxt = (
                np.pad(a, (0, n - len(a)))
                - np.pad(b, (0, n - len(b)))
                + 2.0 * np.pad(P, (0, n - len(P)))
            )
            cls._P.append(nxt)
        return cls._P[m]

    def _eval(self, x, order, cache):
        out = np.zeros_like(x)
        nz = x != 0.0
        if not np.any(nz):
            return out
        xi = x[nz]
        if order == 0:
            out[nz] = np.exp(-1.0 / (xi * xi))
            return out
        P = self._rational(order)
        pv = _poly_val(P, xi)
        logmag = -1.0 / (xi * xi) - 3.0 * order * np.log(np.abs(xi))
        # dividing by t^(3m): sign flips by (-1)^m on the negative side
        sgn = np.where(xi < 0, (-1.0) ** (order % 2), 1.0)
        out[nz] = pv * sgn * np.exp(logmag)
        return out

    def bounded(self):
        return True

    def label(self):
        return "flat_exp"


class _Sum(_Node):
    def __init__(self, children: Sequence[_Node], coeffs: Optional[Sequence[float]] = None):
        self.kids = list(children)
        self.coeffs = [1.0] * len(self.kids) if coeffs is None else [float(c) for c in coeffs]
        if len(self.coeffs) != len(self.kids):
            raise AnalyticError("sum needs one coefficient per term")
        self.max_order = min((k.max_order for k in self.kids), default=UNBOUNDED_ORDER)

    def _eval(self, x, order, cache):
        out = np.zeros_like(x)
        for c, kid in zip(self.coeffs, self.kids):
            if c != 0.0:
                out = out + c * kid.eval(x, order, cache)
        return out

    def support(self):
        s = None
        for c, kid in zip(self.coeffs, self.kids):
            if c != 0.0:
                s = _hull(s, kid.support())
        return s

    def bounded(self):
        return all(k.bounded() for k in self.kids)

    def children(self):
        return self.kids

    def label(self):
        return "sum"


class _Prod2(_Node):
    def __init__(self, a: _Node, b: _Node):
        self.a = a
        self.b = b
        self.max_order = min(a.max_order, b.max_order)

    def _eval(self, x, order, cache):
        sup = self.support()
        if sup is None:
            return np.zeros_like(x)
        lo, hi = sup
        mask = (x >= lo) & (x <= hi)
        out = np.zeros_like(x)
        if not np.any(mask):
            return out
        xi = x[mask]
        sub: dict = {}
        acc = np.zeros_like(xi)
        for j in range(order + 1):
            acc = acc + math.comb(order, j) * self.a.eval(xi, j, sub) * self.b.eval(
                xi, order - j, sub
            )
        out[mask] = acc
        return out

    def support(self):
        return _meet(self.a.support(), self.b.support())

    def bounded(self):
        if self.a.bounded() and self.b.bounded():
            return True
        s = self.support()
        # continuous factors on a compact (or empty) support stay bounded
        return s is None or (math.isfinite(s[0]) and math.isfinite(s[1]))

    def children(self):
        return (self.a, self.b)

    def label(self):
        return "product"


class _Affine(_Node):
    """child(a*t + b)."""

    def __init__(self, child: _Node, a: float, b: float):
        if a == 0.0:
            raise AnalyticError("affine substitution needs a != 0")
        self.child = child
        self.a = float(a)
        self.b = float(b)
        self.max_order = child.max_order

    def _eval(self, x, order, cache):
        inner = self.child.eval(self.a * x + self.b, order, cache={})
        return (self.a**order) * inner

    def support(self):
        s = self.child.support()
        if s is None:
            return None
        lo, hi = (s[0] - self.b) / self.a, (s[1] - self.b) / self.a
        return (min(lo, hi), max(lo, hi))

    def bounded(self):
        return self.child.bounded()

    def children(self):
        return (self.child,)

    def label(self):
        return "affine"


class _SupportOverride(_Node):
    """Certifies a tighter support than the tree can infer (e.g. after exact
    cancellation); evaluation masks to exact zero outside it."""

    def __init__(self, child: _Node, interval: Interval):
        self.child = child
        self.interval = (float(interval[0]), float(interval[1]))
        self.max_order = child.max_order

    def _eval(self, x, order, cache):
        lo, hi = self.interval
        mask = (x >= lo) & (x <= hi)
        out = np.zeros_like(x)
        if np.any(mask):
            out[mask] = self.child.eval(x[mask], order, cache={})
        return out

    def support(self):
        return _meet(self.child.support(), self.interval)

    def bounded(self):
        return self.child.bounded() or (
            math.isfinite(self.interval[0]) and math.isfinite(self.interval[1])
        )

    def children(self):
        return (self.child,)

    def label(self):
        return "support_restriction"


class _Deriv(_Node):
    """Marks the m-th derivative of its child as a function in its own right."""

    def __init__(self, child: _Node, m: int):
        if m < 0:
            raise AnalyticError("derivative order must be >= 0")
        self.child = child
        self.m = int(m)
        self.max_order = max(child.max_order - self.m, 0)

    def _eval(self, x, order, cache):
        return self.child.eval(x, order + self.m, cache)

    def support(self):
        return self.child.support()

    def bounded(self):
        # conservative: derivative magnitude is not tracked
        s = self.support()
        return s is not None and math.isfinite(s[0]) and math.isfinite(s[1])

    def children(self):
        return (self.child,)

    def label(self):
        return f"derivative(order={self.m})"


# ---------------------------------------------------------------------------
# public wrapper
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AnalyticFn1D:
    """A scalar function on R with exact derivatives up to max_exact_derivative_order."""

    root: _Node = field(repr=False)

    def __call__(self, x, order: int = 0):
        if order < 0:
            raise AnalyticError("derivative order must be >= 0")
        if order > self.max_exact_derivative_order:
            raise AnalyticError(
                f"order {order} exceeds exact-derivative ceiling "
                f"{self.max_exact_derivative_order}"
            )
        arr = np.asarray(x, dtype=float)
        scalar = arr.ndim == 0
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out = self.root.eval(np.atleast_1d(arr), order, cache={})
        return float(out[0]) if scalar else out

    @property
    def max_exact_derivative_order(self) -> int:
        return self.root.max_order

    def deriv(self, m: int = 1) -> "AnalyticFn1D":
        return AnalyticFn1D(_Deriv(self.root, m))

    def support(self) -> Optional[Interval]:
        return self.root.support()

    def bounded(self) -> bool:
        return self.root.bounded()

    def compose_affine(self, a: float, b: float) -> "AnalyticFn1D":
        """t -> self(a*t + b)."""
        return AnalyticFn1D(_Affine(self.root, a, b))

    def restrict_support(self, interval: Interval) -> "AnalyticFn1D":
        """Certify a tighter support (the function must already vanish
        outside it); evaluation then masks to exact zeros there."""
        return AnalyticFn1D(_SupportOverride(self.root, interval))

    def __add__(self, other: "AnalyticFn1D") -> "AnalyticFn1D":
        return AnalyticFn1D(_Sum([self.root, other.root]))

    def __sub__(self, other: "AnalyticFn1D") -> "AnalyticFn1D":
        return AnalyticFn1D(_Sum([self.root, other.root], [1.0, -1.0]))

    def __neg__(self) -> "AnalyticFn1D":
        return AnalyticFn1D(_Sum([self.root], [-1.0]))

    def __mul__(self, other):
        if isinstance(other, AnalyticFn1D):
            return AnalyticFn1D(_Prod2(self.root, other.root))
        return AnalyticFn1D(_Sum([self.root], [float(other)]))

    __rmul__ = __mul__

    def blame_nonfinite(self, x: float, order: int = 0) -> str:
        """Name the deepest node that evaluates non-finite at x."""
        return _blame(self.root, float(x), order)


def _blame(node: _Node, x: float, order: int) -> str:
    arr = np.array([x])
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        try:
            val = node.eval(arr, order, cache={})
            bad = not np.isfinite(val[0])
        except FloatingPointError:
            bad = True
        if not bad:
            return node.label()
        for kid in node.children():
            for sub_order in range(0, order + 1):
                v = kid.eval(arr, sub_order, cache={})
                if not np.isfinite(v[0]):
                    return _blame(kid, x, sub_order)
    return node.label()


def lincomb(terms: Sequence[tuple[float, AnalyticFn1D]]) -> AnalyticFn1D:
    """Finite linear combination sum(c_i * f_i)."""
    return AnalyticFn1D(_Sum([f.root for _, f in terms], [c for c, _ in terms]))


# constructors ---------------------------------------------------------------


def constant(c: float) -> AnalyticFn1D:
    return AnalyticFn1D(_Const(c))


def monomial(coef: float, power: int) -> AnalyticFn1D:
    return AnalyticFn1D(_Mono(coef, power))


def positive_power(coef: float, power: int) -> AnalyticFn1D:
    """coef * t^power for t >= 0, zero for t < 0."""
    return AnalyticFn1D(_MonoPlus(coef, power))


def bump(center: float = 0.0, halfwidth: float = 1.0) -> AnalyticFn1D:
    """Standard bump rescaled to support [center - halfwidth, center + halfwidth].

    Peak value 1 at the center.  Near the center the profile matches a
    Gaussian to fourth order, hence the `gaussian_bump` alias.
    """
    if halfwidth <= 0:
        raise AnalyticError("bump halfwidth must be positive")
    return AnalyticFn1D(_Affine(_Bump(), 1.0 / halfwidth, -center / halfwidth))


def gaussian_bump(center: float = 0.0, halfwidth: float = 1.0) -> AnalyticFn1D:
    """Compactly supported Gaussian-like profile; exp(-u^2/(1-u^2)) in the
    rescaled variable, which is exactly the standard bump."""
    return bump(center, halfwidth)


def smooth_step(lo: float, hi: float) -> AnalyticFn1D:
    """Monotone C^inf step: 0 on (-inf, lo], 1 on [hi, inf)."""
    if not hi > lo:
        raise AnalyticError("smooth_step needs hi > lo")
    a = 1.0 / (hi - lo)
    b = 1.0 - lo / (hi - lo)
    return AnalyticFn1D(_Affine(_SmoothStep(), a, b))


def plateau(inner: Interval, outer: Interval) -> AnalyticFn1D:
    """C^inf cutoff: 1 on [inner], 0 outside (outer), monotone ramps between.

    Requires outer_lo < inner_lo <= inner_hi < outer_hi.
    """
    (ilo, ihi), (olo, ohi) = inner, outer
    if not (olo < ilo <= ihi < ohi):
        raise AnalyticError("plateau needs outer_lo < inner_lo <= inner_hi < outer_hi")
    rising = smooth_step(olo, ilo)
    # falling edge: s0(a t + b) = 1 at t = inner_hi, 0 at t = outer_hi
    falling = AnalyticFn1D(
        _Affine(_SmoothStep(), -1.0 / (ohi - ihi), 2.0 + ihi / (ohi - ihi))
    )
    node = _Prod2(rising.root, falling.root)
    return AnalyticFn1D(node)


def exp_abs(lam: float) -> AnalyticFn1D:
    """exp(-lam |t|)."""
    return AnalyticFn1D(_ExpAbs(lam))


def tanh_power(k: int) -> AnalyticFn1D:
    """tanh(t)^k: globally bounded, vanishes to exactly k-th order at 0."""
    if k < 0:
        raise AnalyticError("tanh power must be >= 0")
    coeffs = np.zeros(k + 1)
    coeffs[k] = 1.0
    return AnalyticFn1D(_TanhPoly(coeffs))


def flat_exp() -> AnalyticFn1D:
    """exp(-1/t^2), extended by 0 at t = 0: flat there, positive elsewhere."""
    return AnalyticFn1D(_FlatExp())
