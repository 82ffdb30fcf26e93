"""One-dimensional delta-splitting generators.

Two constructions are provided:

* ``build_ck_pair``: an exact finite-smoothness splitting.  Antidifferentiate
  the point mass k+2 times, always taking the antiderivative vanishing on the
  negative half line, giving F(t) = t^(k+1)/(k+1)! for t >= 0.  A smooth
  G = F*s (s a step that is 0 before the cut interval and 1 after it) agrees
  with F outside [0, b]; then f = F - G is C^k with support in [0, b] and
  g = G^(k+2) is smooth with support in [a, b], and weakly

      (-1)^(k+2) <f, w^(k+2)> + <g, w> = w(0).

* ``build_dm_generators``: the finite-product exponential-sum splitting.
  With strictly increasing rates lam_1 < ... < lam_J, the kernel
  phi(t) = sum_j c_j (lam_j/2) e^(-lam_j |t|) has transform
  1/prod_j(1 + xi^2/lam_j^2), so the constant-coefficient operator with
  symbol prod_j(1 + xi^2/lam_j^2) = sum_k b_k xi^(2k) sends phi to the point
  mass exactly:

      sum_{k<=J} b_k (-1)^k <phi, w^(2k)> = w(0)   for every test w.

  Multiplying phi by a plateau cutoff theta (== 1 on [-eps/2, eps/2],
  supported in (-eps, eps)) preserves the identity after adding the genuine
  function g_corr = -sum_k b_k (-1)^k [ (theta phi)^(2k) - theta phi^(2k) ],
  which lives on the annulus eps/2 <= |t| <= eps.  phi is C^(2J-2) at the
  origin; smoothness grows with J, and the weak identity is checked at each J
  rather than asserting infinite smoothness.

The rate scaling lam_1 * eps = 10 keeps the kernel tail mass outside the
cutoff below e^-10 so g_corr stays small.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from . import analytic as an
from .analytic import AnalyticFn1D
from .errors import GridError
from .gridfn import (
    GridFn1D,
    analytic_derivative,
    derivative,
    sample,
    simpson_weights,
)

__all__ = [
    "CkPair",
    "DMGenerators",
    "build_ck_pair",
    "build_dm_generators",
    "weak_delta_residual",
    "generators_to_dict",
]

J_MAX = 8


@dataclass(frozen=True)
class CkPair:
    """Finite-smoothness splitting: delta = f^(k+2) + g weakly."""

    k: int
    f: AnalyticFn1D  # C^k, support in [0, b]
    g: AnalyticFn1D  # C^inf, support in [a, b]
    cut_interval: tuple[float, float]


@dataclass(frozen=True)
class DMGenerators:
    """Finite-product exponential-sum splitting data."""

    J: int
    lam: np.ndarray  # strictly increasing positive rates
    b: np.ndarray  # coefficients of prod(1 + z^2/lam_j^2), b[0] = 1
    c: np.ndarray  # partial-fraction weights, sum(c) = 1
    phi: AnalyticFn1D  # the exponential-sum kernel
    eps: float
    f_cut: AnalyticFn1D  # theta * phi, support in (-eps, eps)
    g_corr: AnalyticFn1D  # annulus correction, support in (-eps, eps)


def build_ck_pair(k: int, cut_interval: tuple[float, float] = (0.5, 1.0)) -> CkPair:
    """Exact splitting of the point mass with a C^k part and a smooth part."""
    if k < 0:
        raise GridError("smoothness index k must be >= 0")
    a, b = float(cut_interval[0]), float(cut_interval[1])
    if a <= 0 or b <= a:
        raise GridError("cut interval needs 0 < a < b")
    p = k + 1
    F = an.positive_power(1.0 / math.factorial(p), p)
    s = an.smooth_step(a, b)
    one_minus_s = an.constant(1.0) - s
    f = (F * one_minus_s).restrict_support((0.0, b))
    # g = (F s)^(k+2) via Leibniz; the s-derivative factors confine every term
    # to [a, b] (t > 0 there), so plain monomials replace the one-sided F^(m).
    terms = []
    for m in range(0, p + 1):
        fm = an.monomial(1.0 / math.factorial(p - m), p - m)
        terms.append((float(math.comb(k + 2, m)), fm * s.deriv(k + 2 - m)))
    g = an.lincomb(terms).restrict_support((a, b))
    return CkPair(k=k, f=f, g=g, cut_interval=(a, b))


def _elementary_symmetric(vals: np.ndarray) -> np.ndarray:
    """Coefficients of prod(1 + vals[j] * u) in u, accumulated in extended
    precision."""
    coeffs = np.zeros(len(vals) + 1, dtype=np.longdouble)
    coeffs[0] = 1.0
    for j, v in enumerate(vals):
        upper = coeffs[: j + 2].copy()
        upper[1:] += np.longdouble(v) * coeffs[: j + 1]
        coeffs[: j + 2] = upper
    return coeffs


def build_dm_generators(
    J: int,
    growth: float = 2.0,
    eps: float = 0.5,
    lam: Optional[Sequence[float]] = None,
) -> DMGenerators:
    """Construct the finite-product splitting with J rates.

    Rates default to lam_j = (10/eps) * growth^(j-1); an explicit `lam`
    sequence overrides the scaling rule (diagnostics and small examples).
    """
    if J < 1:
        raise GridError("J must be >= 1")
    if J > J_MAX:
        raise GridError(
            f"J={J} exceeds the coefficient growth cap {J_MAX}; lower J"
        )
    if eps <= 0:
        raise GridError("eps must be positive")
    if lam is None:
        if growth <= 1.0:
            raise GridError("growth must exceed 1 (repeated rates split poles)")
        lam_arr = (10.0 / eps) * growth ** np.arange(J, dtype=float)
    else:
        lam_arr = np.asarray(lam, dtype=float)
        if lam_arr.size != J or np.any(lam_arr <= 0) or np.any(np.diff(lam_arr) <= 0):
            raise GridError("rates must be strictly increasing and positive")
    b = _elementary_symmetric(1.0 / lam_arr.astype(np.longdouble) ** 2)
    b64 = b.astype(float)
    if not np.all(np.isfinite(b64)):
        raise GridError("coefficient overflow; lower J")
    lam2 = lam_arr**2
    c = np.empty(J)
    for j in range(J):
        others = np.delete(lam2, j)
        c[j] = float(np.prod(others / (others - lam2[j])))
    phi = an.lincomb(
        [(c[j] * lam_arr[j] / 2.0, an.exp_abs(lam_arr[j])) for j in range(J)]
    )
    theta = an.plateau((-eps / 2.0, eps / 2.0), (-eps, eps))
    f_cut = (theta * phi).restrict_support((-eps, eps))
    # correction on the annulus: only the cutoff-derivative Leibniz terms
    # survive (the j=0 parts cancel exactly away from the origin)
    corr_terms = []
    for k in range(1, J + 1):
        coef = -b64[k] * (-1.0) ** k
        for j in range(1, 2 * k + 1):
            corr_terms.append(
                (coef * math.comb(2 * k, j), theta.deriv(j) * phi.deriv(2 * k - j))
            )
    g_corr = an.lincomb(corr_terms).restrict_support((-eps, eps))
    return DMGenerators(
        J=J, lam=lam_arr, b=b64, c=c, phi=phi, eps=eps, f_cut=f_cut, g_corr=g_corr
    )


def _test_fn_derivative(w: GridFn1D, order: int, substeps: int) -> GridFn1D:
    fine = w.refine(substeps)
    if order == 0:
        return fine
    if isinstance(w.source, AnalyticFn1D):
        return analytic_derivative(fine, order)
    if order > 4:
        raise GridError(
            "sampled-only test functions support stencil derivatives up to "
            "order 4; provide a closed-form test function for higher orders"
        )
    return derivative(w, order).refine(substeps)


def _value_at_zero(w: GridFn1D) -> float:
    if isinstance(w.source, AnalyticFn1D):
        if not (w.x0 <= 0.0 <= w.x_end):
            raise GridError("0 must lie inside the test-function grid")
        return float(w.source(0.0))
    j = (0.0 - w.x0) / w.dx
    jr = int(round(j))
    if jr < 0 or jr >= w.n or abs(j - jr) > 1e-8:
        raise GridError("0 must be a grid point of the test function")
    return float(w.samples[jr])


def _pairing(fn: AnalyticFn1D, w: GridFn1D) -> float:
    """<fn, w> by full-grid Simpson (w vanishes outside its support, so the
    grid phase, not the support placement, fixes the panel layout)."""
    vals = fn(w.x)
    weights = simpson_weights(w.n)
    return float(w.dx * np.dot(weights, vals * w.samples))


def weak_delta_residual(
    gen: Union[CkPair, DMGenerators],
    w: GridFn1D,
    form: str = "cutoff",
    substeps: int = 4,
) -> float:
    """|<splitting, w> - w(0)| under the generator's own convention.

    For a CkPair: (-1)^(k+2) <f, w^(k+2)> + <g, w> - w(0).
    For DMGenerators with form="cutoff":
        sum_k b_k (-1)^k <f_cut, w^(2k)> + <g_corr, w> - w(0);
    with form="kernel" the bare identity sum_k b_k (-1)^k <phi, w^(2k)> - w(0).

    Pure measurement; no state is touched.  The pairing quadrature subsamples
    each grid cell `substeps` times so that the generators' own ramp scales
    are resolved; the test-function data stays at its grid resolution.
    """
    w0 = _value_at_zero(w)
    if isinstance(gen, CkPair):
        k2 = gen.k + 2
        wd = _test_fn_derivative(w, k2, substeps)
        total = (-1.0) ** k2 * _pairing(gen.f, wd) + _pairing(
            gen.g, _test_fn_derivative(w, 0, substeps)
        )
        return abs(total - w0)
    if form not in ("cutoff", "kernel"):
        raise GridError("form must be 'cutoff' or 'kernel'")
    kernel = gen.f_cut if form == "cutoff" else gen.phi
    total = 0.0
    for k in range(gen.J + 1):
        wd = _test_fn_derivative(w, 2 * k, substeps)
        total += gen.b[k] * (-1.0) ** k * _pairing(kernel, wd)
    if form == "cutoff":
        total += _pairing(gen.g_corr, _test_fn_derivative(w, 0, substeps))
    return abs(total - w0)


def generators_to_dict(gen: DMGenerators) -> dict:
    return {
        "J": int(gen.J),
        "lambda": [float(v) for v in gen.lam],
        "b": [float(v) for v in gen.b],
        "c": [float(v) for v in gen.c],
        "eps": float(gen.eps),
    }
