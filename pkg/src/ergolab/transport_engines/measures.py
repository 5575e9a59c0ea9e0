"""Measure representations shared by the transport engines."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Callable, Union

import numpy as np

from ..diffusion_sim import EmpiricalMeasure
from ..model_spaces import (
    Circle,
    ConfinedLine,
    GibbsDensity,
    Interval,
    SineSquaredDensity,
    Space,
    Torus,
    UniformDensity,
    invariant_density,
)

__all__ = [
    "TransportError",
    "DistanceReport",
    "DensityOnGrid",
    "DensityMeasure",
    "invariant_measure",
    "quasi_stationary_measure",
    "Measure",
    "space_of",
]

METHODS = ("exact-1d", "circle-exact", "sinkhorn", "bound")


class TransportError(ValueError):
    """Incompatible inputs for a transport engine."""


@dataclass(frozen=True)
class DistanceReport:
    """``value`` is ``W_p`` itself (not its p-th power)."""

    p: float
    value: float
    method: str
    error_estimate: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not (self.value >= 0 and self.error_estimate >= 0):
            raise ValueError("value and error estimate must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def __float__(self):
        return self.value


class DensityOnGrid:
    """Density with respect to ``μ`` sampled at cell midpoints of a uniform grid.

    One-dimensional spaces use ``x_j = (j + 1/2) l / n``; the 2-torus uses the
    tensor grid. The cell-average reading (constant on each cell) is used by
    the exact engines; the quadrature weight of every node is ``1/n^d``.
    """

    def __init__(self, space: Space, values, tol: float = 1e-8):
        if isinstance(space, ConfinedLine):
            raise TransportError("grid densities need a compact space")
        v = np.asarray(values, dtype=float)
        d = space.dim if isinstance(space, Torus) else 1
        if v.ndim != d or (d == 2 and v.shape[0] != v.shape[1]):
            raise TransportError(f"expected a {d}-dimensional square grid of values")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise TransportError("density values must be finite and nonnegative")
        if abs(v.mean() - 1.0) > tol:
            raise TransportError(f"density integrates to {v.mean()!r}, not 1")
        self.space = space
        self.values = v
        self.n = v.shape[0]

    @property
    def extent(self) -> float:
        return space_extent(self.space)

    @property
    def grid(self) -> np.ndarray:
        """Midpoint nodes; on the torus an ``(n, n, 2)`` array."""
        x = (np.arange(self.n) + 0.5) * self.extent / self.n
        if isinstance(self.space, Torus):
            return np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1)
        return x

    @classmethod
    def from_function(cls, space: Space, f: Callable, n: int, normalize: bool = True) -> "DensityOnGrid":
        ext = space_extent(space)
        x = (np.arange(n) + 0.5) * ext / n
        if isinstance(space, Torus):
            g = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1)
            v = np.asarray(f(g), dtype=float)
        else:
            v = np.asarray(f(x), dtype=float)
        if normalize:
            v = v / v.mean()
        return cls(space, v)

    def expect(self, f) -> float:
        return float(np.mean(self.values * f(self.grid)))

    def __repr__(self):
        return f"DensityOnGrid({self.space!r}, n={self.n})"


@dataclass(frozen=True)
class DensityMeasure:
    """Absolutely continuous measure with a closed-form one-dimensional density."""

    space: Space
    density: Union[UniformDensity, SineSquaredDensity, GibbsDensity]

    def expect(self, f) -> float:
        from scipy import integrate

        lo, hi = self.density.support
        val, _ = integrate.quad(lambda x: float(f(np.array([x]))[0]) * float(self.density.pdf(x)), lo, hi,
                                limit=400)
        return val


def invariant_measure(space: Space):
    """``μ`` as an engine input (uniform on compact spaces, Gibbs on the line)."""
    if isinstance(space, Torus):
        raise TransportError("use a DensityOnGrid of ones for the torus")
    return DensityMeasure(space, invariant_density(space))


def quasi_stationary_measure(space: Interval) -> DensityMeasure:
    """``μ_0 = φ_0^2 μ`` for a Dirichlet interval."""
    if not (isinstance(space, Interval) and space.boundary == "dirichlet"):
        raise TransportError("the quasi-stationary measure needs a Dirichlet interval")
    return DensityMeasure(space, SineSquaredDensity(space.length))


Measure = Union[EmpiricalMeasure, DensityOnGrid, DensityMeasure]


def space_extent(space: Space) -> float:
    if isinstance(space, Circle):
        return space.circumference
    if isinstance(space, Interval):
        return space.length
    if isinstance(space, Torus):
        return space.side
    raise TransportError(f"{space.kind} has no finite extent")


def space_of(m) -> Space:
    try:
        return m.space
    except AttributeError:
        raise TransportError(f"cannot use {type(m).__name__} as a measure") from None


def same_space(m1, m2) -> Space:
    s1, s2 = space_of(m1), space_of(m2)
    if s1 != s2:
        raise TransportError(f"measures live on different spaces: {s1} vs {s2}")
    return s1


# ---------------------------------------------------------------------------
# piecewise-linear quantile functions
# ---------------------------------------------------------------------------


@dataclass
class PLQuantile:
    """Quantile function linear on each ``[u_k, u_{k+1}]`` from ``a_k`` to ``b_k``."""

    u: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.sum(np.diff(self.u) * (self.a + self.b)) / 2)


def pl_quantile(m) -> PLQuantile:
    """Exact quantile representation of atoms, grid histograms and uniform densities."""
    if isinstance(m, EmpiricalMeasure):
        if m.atoms.ndim != 1:
            raise TransportError("one-dimensional engine given torus atoms")
        keep = m.weights > 0
        x, w = m.atoms[keep], m.weights[keep]
        u = np.concatenate([[0.0], np.cumsum(w)])
        u[-1] = 1.0
        return PLQuantile(u, x.copy(), x.copy())
    if isinstance(m, DensityOnGrid):
        if isinstance(m.space, Torus):
            raise TransportError("one-dimensional engine given a torus density")
        edges = np.arange(m.n + 1) * m.extent / m.n
        mass = m.values / m.values.sum()
        keep = mass > 0
        u = np.concatenate([[0.0], np.cumsum(mass[keep])])
        u[-1] = 1.0
        return PLQuantile(u, edges[:-1][keep], edges[1:][keep])
    if isinstance(m, DensityMeasure) and isinstance(m.density, UniformDensity):
        return PLQuantile(np.array([0.0, 1.0]), np.array([m.density.a]), np.array([m.density.b]))
    raise TransportError(f"no piecewise-linear quantile for {type(m).__name__}")


def is_pl(m) -> bool:
    return isinstance(m, (EmpiricalMeasure, DensityOnGrid)) or (
        isinstance(m, DensityMeasure) and isinstance(m.density, UniformDensity))


def eval_on_breaks(q: PLQuantile, s: np.ndarray):
    """Values of ``q`` at the ends of each sub-interval ``[s_j, s_{j+1}]`` of a refinement."""
    mid = 0.5 * (s[:-1] + s[1:])
    k = np.clip(np.searchsorted(q.u, mid, side="right") - 1, 0, q.a.size - 1)
    width = q.u[k + 1] - q.u[k]
    slope = np.where(width > 0, (q.b[k] - q.a[k]) / np.where(width > 0, width, 1.0), 0.0)
    left = q.a[k] + slope * (s[:-1] - q.u[k])
    right = q.a[k] + slope * (s[1:] - q.u[k])
    return left, right


def abs_power_mean(d0: np.ndarray, d1: np.ndarray, p: float) -> np.ndarray:
    """``∫_0^1 |d0 + (d1 - d0) s|^p ds`` elementwise."""
    if p == 2:
        return (d0 * d0 + d0 * d1 + d1 * d1) / 3.0
    if p == 1:
        same = d0 * d1 >= 0
        with np.errstate(divide="ignore", invalid="ignore"):
            cross = (d0 * d0 + d1 * d1) / (2.0 * np.abs(d1 - d0))
        return np.where(same, 0.5 * (np.abs(d0) + np.abs(d1)), cross)
    delta = d1 - d0
    mid = 0.5 * (d0 + d1)
    am = np.abs(mid)
    small = (np.abs(delta) <= 1e-3 * am) & (d0 * d1 > 0)
    g = lambda x: np.sign(x) * np.abs(x) ** (p + 1) / (p + 1)  # noqa: E731
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(am > 0, delta / np.where(am > 0, am, 1.0), 0.0)
        series = am**p * (1.0 + p * (p - 1) * ratio * ratio / 24.0)
        exact = (g(d1) - g(d0)) / delta
    out = np.where(small, series, exact)
    return np.where(delta == 0, np.abs(d0) ** p, out)


def pl_cost(q1: PLQuantile, q2: PLQuantile, p: float) -> float:
    """``∫_0^1 |Q_1 - Q_2|^p du`` exactly."""
    s = np.union1d(q1.u, q2.u)
    l1, r1 = eval_on_breaks(q1, s)
    l2, r2 = eval_on_breaks(q2, s)
    w = np.diff(s)
    return float(np.sum(w * abs_power_mean(l1 - l2, r1 - r2, p)))


def as_float_report(p: float, cost: float, method: str, err_cost: float = 0.0) -> DistanceReport:
    """Wrap a cost ``W_p^p`` into a report of ``W_p`` with a propagated error."""
    cost = max(cost, 0.0)
    val = cost ** (1.0 / p)
    if err_cost <= 0:
        err = 0.0
    elif cost > 0:
        err = abs((cost + err_cost) ** (1.0 / p) - val)
    else:
        err = err_cost ** (1.0 / p)
    return DistanceReport(float(p), float(val), method, float(err))


def check_p(p: float):
    if not (p >= 1 and math.isfinite(p)):
        raise TransportError(f"order p must be a finite number >= 1, got {p}")
