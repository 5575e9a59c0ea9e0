"""Closed-form upper and lower bounds on Wasserstein distances."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..model_spaces import Circle, ConfinedLine, Interval, Space, Torus, invariant_density, metric, psi_inverse
from ..spectral_oracles import SpectralBasis
from .measures import DensityOnGrid, TransportError, same_space, space_extent

__all__ = ["TA1Bound", "mean_mp", "ta1_upper_bound", "lb101_bound", "w1_dual_lower", "LipschitzError"]


class LipschitzError(TransportError):
    """A witness function failed the finite-difference Lipschitz check."""


def mean_mp(a, b, p: float):
    """``M_p(a, b) = ∫_0^1 (a + s(b - a))^{1-p} ds`` with ``M_p(a, a) = 1_{a>0} a^{1-p}``.

    Returns ``inf`` where one argument vanishes and the integral diverges
    (``p >= 2``).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a, b = np.broadcast_arrays(a, b)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    out = np.zeros(a.shape)
    both = hi > 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        rel = np.where(both, (hi - lo) / np.where(both, hi, 1.0), 0.0)
        near = both & (rel < 1e-6)
        m = 0.5 * (lo + hi)
        # expansion about the midpoint for nearly equal arguments
        d2 = ((hi - lo) / 2) ** 2
        approx = m ** (1 - p) * (1 + (1 - p) * (-p) * np.where(d2 > 0, d2 / (6 * m * m), 0.0))
        if p == 2:
            far = np.where(lo > 0, (np.log(hi) - np.log(lo)) / (hi - lo), np.inf)
        else:
            e = 2.0 - p
            far = (hi**e - lo**e) / (e * (hi - lo))
            if p > 2:
                far = np.where(lo > 0, far, np.inf)
        out = np.where(near, approx, np.where(both, far, 0.0))
    if p == 1:
        out = np.where(both, 1.0, 0.0)
    return out


@dataclass(frozen=True)
class TA1Bound:
    """Three spectral upper bounds on ``W_p^p`` and their minimum."""

    value: float
    bounds: tuple
    skipped: tuple
    truncation_tail: float
    p: float

    def __float__(self):
        return self.value

    def to_dict(self):
        return {"value": self.value, "bounds": list(self.bounds), "skipped": list(self.skipped),
                "truncation_tail": self.truncation_tail, "p": self.p}


def ta1_upper_bound(basis: SpectralBasis, f1: DensityOnGrid, f2: DensityOnGrid, p: float = 2.0) -> TA1Bound:
    """Upper bounds on ``W_p(f_1 μ, f_2 μ)^p`` from ``G = ∇(-L)^{-1}(f_2 - f_1)``.

    ``G`` is synthesized from the first ``n_max`` eigenpairs; the three
    integrands are ``p^p 2^{p-1} |G|^p/(f_1+f_2)^{p-1}``, ``p^p |G|^p/f_1^{p-1}``
    and ``|G|^p M_p(f_1, f_2)``. A bound whose integrand is infinite somewhere
    is reported as skipped. ``truncation_tail`` bounds the omitted part of
    ``Σ b_i^2/λ_i^2`` through the discrete Parseval residual.
    """
    if not p >= 1:
        raise TransportError("p must be >= 1")
    space = same_space(f1, f2)
    if basis.flavor == "dirichlet":
        raise TransportError("the spectral bound needs a closed or Neumann basis")
    if basis.space != space:
        raise TransportError("basis and densities live on different spaces")
    if f1.n != f2.n:
        raise TransportError("densities on different grids")
    v1, v2 = f1.values, f2.values
    if np.any((v1 <= 0) & (v2 <= 0)):
        raise TransportError("f1 and f2 vanish simultaneously on the grid")
    diff = v2 - v1
    x = f1.grid
    lam = basis.eigenvalues
    idx = np.arange(1, basis.n_max)
    phi = basis.evaluate(x, idx)
    axes = tuple(range(1, phi.ndim))
    coef = np.mean(phi * diff[None, ...], axis=axes)
    grads = basis.gradient(x, idx)
    w = coef / lam[idx]
    G = np.tensordot(w, grads, axes=(0, 0))
    if isinstance(space, Torus):
        absG = np.sqrt(np.sum(G * G, axis=-1))
    else:
        absG = np.abs(G)
    Gp = absG**p
    resid = max(float(np.mean(diff * diff)) - float(np.sum(coef * coef)), 0.0)
    tail = resid / basis.next_eigenvalue**2
    pp = p**p

    def integrate(weight):
        vals = np.where(Gp > 0, Gp * weight, 0.0)
        if not np.all(np.isfinite(vals)):
            return math.inf
        return float(np.mean(vals))

    with np.errstate(divide="ignore", invalid="ignore"):
        b1 = pp * 2 ** (p - 1) * integrate((v1 + v2) ** (1 - p))
        b2 = pp * integrate(np.where(v1 > 0, v1 ** (1 - p), np.inf) if p > 1 else np.ones_like(v1))
        b3 = integrate(mean_mp(v1, v2, p))
    bounds = (b1, b2, b3)
    skipped = tuple(not math.isfinite(b) for b in bounds)
    finite = [b for b in bounds if math.isfinite(b)]
    return TA1Bound(min(finite), bounds, skipped, tail, float(p))


def lb101_bound(space: Space, N: int, p: float = 2.0) -> float:
    """``2^{-1/p} ψ^{-1}(1/(2N))``: no ``N``-atom measure is closer to ``μ`` in ``W_p``."""
    if int(N) != N or N < 1:
        raise ValueError("N must be a positive integer")
    if not p >= 1:
        raise ValueError("p must be >= 1")
    return float(2.0 ** (-1.0 / p) * psi_inverse(space, 1.0 / (2 * N)))


def _check_grid(space: Space, n: int):
    """Pairs of neighbouring points used for the Lipschitz check."""
    if isinstance(space, (Circle, Interval)):
        ext = space_extent(space)
        if isinstance(space, Circle):
            x = np.arange(n) * ext / n
            return x, np.roll(x, -1)
        x = np.linspace(0.0, ext, n + 1)
        return x[:-1], x[1:]
    if isinstance(space, ConfinedLine):
        lo, hi = invariant_density(space).support
        x = np.linspace(lo, hi, n + 1)
        return x[:-1], x[1:]
    if isinstance(space, Torus):
        m = max(int(round(n ** (1.0 / space.dim))), 8)
        g = np.arange(m) * space.side / m
        pts = np.stack(np.meshgrid(*([g] * space.dim), indexing="ij"), axis=-1).reshape(-1, space.dim)
        src, dst = [], []
        for j in range(space.dim):
            shifted = pts.copy()
            shifted[:, j] = g[(np.rint(pts[:, j] / space.side * m).astype(int) + 1) % m]
            src.append(pts)
            dst.append(shifted)
        return np.concatenate(src), np.concatenate(dst)
    raise TransportError(f"no Lipschitz grid for {space.kind}")


def w1_dual_lower(mu1, mu2, witnesses: Sequence[Callable], n_check: int = 4096) -> float:
    """``max_f |μ_1(f) - μ_2(f)|`` over witnesses checked to be 1-Lipschitz.

    The check compares ``|f(x) - f(y)|`` with ``d(x, y)`` on neighbouring grid
    points (including the wrap-around pair on periodic spaces).
    """
    space = same_space(mu1, mu2)
    src, dst = _check_grid(space, n_check)
    dist = metric(space, src, dst)
    best = 0.0
    for k, f in enumerate(witnesses):
        jump = np.abs(np.asarray(f(src), dtype=float) - np.asarray(f(dst), dtype=float))
        if np.any(jump > dist * (1 + 1e-9) + 1e-12):
            raise LipschitzError(f"witness {k} is not 1-Lipschitz (max ratio {float(np.max(jump / dist)):.6g})")
        best = max(best, abs(mu1.expect(f) - mu2.expect(f)))
    return float(best)
