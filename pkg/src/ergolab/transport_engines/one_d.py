"""Exact Wasserstein distances on the interval, the line and the circle."""

from __future__ import annotations

import math

import numpy as np
from scipy import integrate

from ..diffusion_sim import EmpiricalMeasure
from ..model_spaces import Circle, ConfinedLine, Interval, SineSquaredDensity, UniformDensity
from .measures import (
    DensityMeasure,
    DistanceReport,
    PLQuantile,
    TransportError,
    abs_power_mean,
    as_float_report,
    check_p,
    is_pl,
    pl_cost,
    pl_quantile,
    same_space,
)

__all__ = ["wp_line", "wp_circle", "circle_cost"]

_GL16 = np.polynomial.legendre.leggauss(16)
_GL32 = np.polynomial.legendre.leggauss(32)


# ---------------------------------------------------------------------------
# line / interval
# ---------------------------------------------------------------------------


def _gl_abs_moment(dens, lo, hi, x, p, rule):
    """``∫_lo^hi |y - x|^p ρ(y) dy`` by Gauss-Legendre, vectorized over blocks."""
    nodes, wts = rule
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    y = mid[:, None] + half[:, None] * nodes[None, :]
    f = np.abs(y - x[:, None]) ** p * dens.pdf(y)
    return half * (f @ wts)


def _semi_discrete_cost(em: EmpiricalMeasure, dens, p: float):
    """Cost of the monotone coupling between atoms and a density; returns ``(cost, error)``."""
    x, w = em.atoms, em.weights
    c = np.concatenate([[0.0], np.cumsum(w)])
    c[-1] = 1.0
    y = dens.quantile(c)
    y[0], y[-1] = dens.support
    lo, hi = y[:-1], y[1:]
    closed_form = isinstance(dens, (SineSquaredDensity, UniformDensity))
    if closed_form and p == 2:
        m0, m1, m2 = dens.partial_moments(lo, hi)
        terms = m2 - 2 * x * m1 + x * x * m0
        scale = float(np.sum(np.abs(m2) + x * x * m0))
        return float(np.sum(np.maximum(terms, 0.0))), 1e-15 * scale + 1e-300
    xc = np.clip(x, lo, hi)
    if closed_form and p == 1:
        a0, a1, _ = dens.partial_moments(lo, xc)
        b0, b1, _ = dens.partial_moments(xc, hi)
        terms = x * a0 - a1 + b1 - x * b0
        return float(np.sum(np.maximum(terms, 0.0))), 1e-15 * float(np.sum(np.abs(a1) + np.abs(b1))) + 1e-300
    total = 0.0
    err = 0.0
    for a, b in ((lo, xc), (xc, hi)):
        fine = _gl_abs_moment(dens, a, b, x, p, _GL32)
        coarse = _gl_abs_moment(dens, a, b, x, p, _GL16)
        total += float(np.sum(fine))
        err += float(np.sum(np.abs(fine - coarse)))
    return total, err


def _quantile_fn(m):
    if is_pl(m):
        q = pl_quantile(m)

        def f(u):
            k = min(max(int(np.searchsorted(q.u, u, side="right")) - 1, 0), q.a.size - 1)
            width = q.u[k + 1] - q.u[k]
            return q.a[k] + (q.b[k] - q.a[k]) * ((u - q.u[k]) / width if width > 0 else 0.0)

        return f, q.u
    if isinstance(m, DensityMeasure):
        return (lambda u: float(m.density.quantile(u))), np.array([0.0, 1.0])
    raise TransportError(f"unsupported measure {type(m).__name__}")


def _quad_cost(m1, m2, p):
    f1, b1 = _quantile_fn(m1)
    f2, b2 = _quantile_fn(m2)
    pts = np.union1d(b1, b2)
    # quad handles at most a few hundred breakpoints well; beyond that let it adapt
    pts = pts[(pts > 0) & (pts < 1)]
    if pts.size > 200:
        pts = None
    val, err = integrate.quad(lambda u: abs(f1(u) - f2(u)) ** p, 0.0, 1.0, points=pts, limit=2000,
                              epsabs=1e-13, epsrel=1e-10)
    return val, err


def wp_line(mu1, mu2, p: float = 2.0) -> DistanceReport:
    """``W_p`` on an interval or the line through the quantile coupling.

    Atoms, grid histograms and uniform densities have piecewise-linear
    quantiles and are integrated in closed form. Atoms against another
    analytic density use closed-form partial moments for ``p`` in {1, 2} and
    Gauss-Legendre otherwise; the remaining combinations use adaptive
    quadrature in the quantile variable.
    """
    check_p(p)
    space = same_space(mu1, mu2)
    if not isinstance(space, (Interval, ConfinedLine)):
        raise TransportError(f"wp_line needs an interval or the line, got {space.kind}")
    if is_pl(mu1) and is_pl(mu2):
        return as_float_report(p, pl_cost(pl_quantile(mu1), pl_quantile(mu2), p), "exact-1d")
    if isinstance(mu2, EmpiricalMeasure) and isinstance(mu1, DensityMeasure):
        mu1, mu2 = mu2, mu1
    if isinstance(mu1, EmpiricalMeasure) and isinstance(mu2, DensityMeasure):
        cost, err = _semi_discrete_cost(mu1, mu2.density, p)
        return as_float_report(p, cost, "exact-1d", err)
    cost, err = _quad_cost(mu1, mu2, p)
    return as_float_report(p, cost, "exact-1d", err)


# ---------------------------------------------------------------------------
# circle
# ---------------------------------------------------------------------------


def _lift(q: PLQuantile, L: float, copies=range(-2, 3)):
    ks = np.array(list(copies), dtype=float)
    U = np.concatenate([q.u[:-1] + k for k in ks] + [[ks[-1] + 1.0]])
    A = np.concatenate([q.a + k * L for k in ks])
    B = np.concatenate([q.b + k * L for k in ks])
    return U, A, B


def _window(U, A, B, theta: float) -> PLQuantile:
    """Pieces of the lifted quantile over ``[θ, θ + 1]``, shifted to ``[0, 1]``."""
    i0 = int(np.searchsorted(U, theta, side="right")) - 1
    i1 = int(np.searchsorted(U, theta + 1.0, side="left"))
    u = np.concatenate([[theta], U[i0 + 1: i1], [theta + 1.0]]) - theta
    u[0], u[-1] = 0.0, 1.0
    a = A[i0:i1].copy()
    b = B[i0:i1].copy()
    w0 = U[i0 + 1] - U[i0]
    if w0 > 0:
        a[0] = A[i0] + (B[i0] - A[i0]) * (theta - U[i0]) / w0
    w1 = U[i1] - U[i1 - 1]
    if w1 > 0:
        b[-1] = A[i1 - 1] + (B[i1 - 1] - A[i1 - 1]) * (theta + 1.0 - U[i1 - 1]) / w1
    return PLQuantile(u, a, b)


def circle_cost(q1: PLQuantile, q2: PLQuantile, L: float, p: float, theta: float) -> float:
    """``∫_0^1 |Q_1(u) - Q_2(u + θ)|^p du`` with ``Q_2`` lifted to the line."""
    U, A, B = _lift(q2, L)
    return pl_cost(q1, _window(U, A, B, theta), p)


def _uniform_full(m, L) -> bool:
    return (isinstance(m, DensityMeasure) and isinstance(m.density, UniformDensity)
            and m.density.a == 0.0 and m.density.b == L)


def _w2_vs_uniform(q: PLQuantile, L: float) -> float:
    # with Q_2(u) = uL the cut cost is a quadratic in θ whose minimum is a variance
    e0 = q.a - q.u[:-1] * L
    e1 = q.b - q.u[1:] * L
    du = np.diff(q.u)
    mean = float(np.sum(du * (e0 + e1)) / 2)
    return float(np.sum(du * abs_power_mean(e0 - mean, e1 - mean, 2)))


def _cdf_ends(q: PLQuantile, xs: np.ndarray):
    """Left/right limits of the CDF on each sub-interval of the refinement ``xs``."""
    mid = 0.5 * (xs[:-1] + xs[1:])
    half = 0.5 * np.diff(xs)
    K = q.a.size
    m = np.searchsorted(q.b, mid, side="right")
    mm = np.minimum(m, K - 1)
    du = np.diff(q.u)
    inside = (m < K) & (q.a[mm] < mid)
    span = q.b[mm] - q.a[mm]
    slope = np.where(inside & (span > 0), du[mm] / np.where(span > 0, span, 1.0), 0.0)
    fmid = q.u[np.minimum(m, K)] + slope * (mid - q.a[mm])
    return fmid - slope * half, fmid + slope * half


def _w1_circle(q1: PLQuantile, q2: PLQuantile, L: float) -> float:
    """``min_α ∫_0^L |F_1 - F_2 - α| dx`` with ``α`` a Lebesgue median of ``F_1 - F_2``."""
    xs = np.unique(np.concatenate([[0.0, L], q1.a, q1.b, q2.a, q2.b]))
    l1, r1 = _cdf_ends(q1, xs)
    l2, r2 = _cdf_ends(q2, xs)
    d0, d1 = l1 - l2, r1 - r2
    w = np.diff(xs)
    lo_d, hi_d = np.minimum(d0, d1), np.maximum(d0, d1)
    span = hi_d - lo_d
    target = 0.5 * w.sum()

    def below(alpha):
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(span > 0, np.clip((alpha - lo_d) / np.where(span > 0, span, 1.0), 0.0, 1.0),
                            (lo_d < alpha).astype(float))
        return float(np.sum(w * frac))

    a, b = float(lo_d.min()), float(hi_d.max())
    for _ in range(200):
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b:
            break
        if below(mid) < target:
            a = mid
        else:
            b = mid
    alpha = 0.5 * (a + b)
    return float(np.sum(w * abs_power_mean(d0 - alpha, d1 - alpha, 1)))


def _golden(f, a, b, tol=1e-13, max_iter=200):
    g = (math.sqrt(5) - 1) / 2
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd), abs(fc - fd)


def _circle_search(q1: PLQuantile, q2: PLQuantile, L: float, p: float):
    U, A, B = _lift(q2, L)
    theta0 = (q1.mean - q2.mean) / L
    cost = lambda th: pl_cost(q1, _window(U, A, B, th), p)  # noqa: E731
    # any optimal cut lies within 1/2 of θ0 because W_p <= L/2
    min_width = min(float(np.min(np.diff(q1.u))), float(np.min(np.diff(q2.u))))
    n_grid = int(np.clip(math.ceil(4.0 / max(min_width, 1e-12)), 64, 512))
    grid = np.linspace(theta0 - 0.5, theta0 + 0.5, n_grid + 1)
    vals = np.array([cost(th) for th in grid])
    j = int(np.argmin(vals))
    lo, hi = grid[max(j - 1, 0)], grid[min(j + 1, n_grid)]
    (th, val), spread = _golden(cost, lo, hi)
    if vals[j] < val:
        val = float(vals[j])
    # the cost is convex and piecewise smooth in θ with kinks where breakpoints of Q_1 and the
    # shifted Q_2 coincide; golden section only lands within tol of a kink, so try the nearest ones
    for cand in _nearest_kinks(q1.u, U, th):
        if lo <= cand <= hi:
            c = cost(cand)
            if c < val:
                val = c
    return val, spread


def _nearest_kinks(u1: np.ndarray, U: np.ndarray, theta: float, k: int = 2) -> np.ndarray:
    """The ``k`` shifts ``U_m - u1_i`` on each side of ``theta``."""
    pos = np.searchsorted(U, theta + u1)
    below = U[np.clip(pos - 1, 0, U.size - 1)] - u1
    above = U[np.clip(pos, 0, U.size - 1)] - u1
    below = np.unique(below[below <= theta])[-k:]
    above = np.unique(above[above > theta])[:k]
    return np.concatenate([below, above])


def _order_key(q: PLQuantile):
    return (q.u.size, q.u.tobytes(), q.a.tobytes(), q.b.tobytes())


def wp_circle(mu1, mu2, p: float = 2.0) -> DistanceReport:
    """``W_p`` on the circle by minimizing the lifted quantile cost over the cut.

    ``p = 2`` against the uniform measure reduces to a variance; ``p = 1`` uses
    the median formula over CDF differences; other cases search the cut on a
    dense grid and refine by golden section.
    """
    check_p(p)
    space = same_space(mu1, mu2)
    if not isinstance(space, Circle):
        raise TransportError(f"wp_circle needs a circle, got {space.kind}")
    for m in (mu1, mu2):
        if not is_pl(m):
            raise TransportError(f"wp_circle supports atoms, grid densities and the uniform measure, not {type(m).__name__}")
    L = space.circumference
    q1, q2 = pl_quantile(mu1), pl_quantile(mu2)
    if _order_key(q2) < _order_key(q1):
        q1, q2 = q2, q1
        mu1, mu2 = mu2, mu1
    if p == 2 and (_uniform_full(mu1, L) or _uniform_full(mu2, L)):
        other = q2 if _uniform_full(mu1, L) else q1
        return as_float_report(p, _w2_vs_uniform(other, L), "circle-exact")
    if p == 1:
        return as_float_report(p, _w1_circle(q1, q2, L), "circle-exact")
    cost, spread = _circle_search(q1, q2, L, p)
    return as_float_report(p, cost, "circle-exact", spread)

