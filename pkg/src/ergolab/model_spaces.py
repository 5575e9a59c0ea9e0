"""State spaces, their metrics, reference measures and ball-measure bounds.

Four model spaces are supported:

* ``Circle(circumference)``: the flat circle ``[0, L)`` with wrap-around distance.
* ``Torus(dim, side)``: the flat torus ``[0, L)^d``.
* ``Interval(length, boundary)``: ``[0, l]`` with a reflecting (``"neumann"``)
  or killing (``"dirichlet"``) boundary.
* ``ConfinedLine(theta, tau)``: the real line with the Gibbs measure
  proportional to ``exp(-(1 + theta x^2)^tau)``.

On the three compact spaces the invariant measure is normalized volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import ClassVar, Union

import numpy as np
from scipy import integrate, optimize

__all__ = [
    "DomainError",
    "UnsupportedSpaceError",
    "Circle",
    "Torus",
    "Interval",
    "ConfinedLine",
    "Space",
    "space_from_dict",
    "metric",
    "mu_ball",
    "psi_inverse",
    "full_mass_radius",
    "sample_invariant",
    "UniformDensity",
    "SineSquaredDensity",
    "GibbsDensity",
    "invariant_density",
]


class DomainError(ValueError):
    """A point does not lie in the fundamental domain of its space."""


class UnsupportedSpaceError(ValueError):
    """The requested operation is not available for this kind of space."""


def _wrap(x, period):
    r = np.mod(x, period)
    # np.mod can round tiny negatives up to exactly ``period``
    return np.where(r >= period, r - period, r)


@dataclass(frozen=True)
class Circle:
    circumference: float = 2 * math.pi

    kind: ClassVar[str] = "circle"
    dim: ClassVar[int] = 1

    def __post_init__(self):
        if not (self.circumference > 0 and math.isfinite(self.circumference)):
            raise ValueError(f"circumference must be positive, got {self.circumference}")

    @property
    def volume(self) -> float:
        return self.circumference

    def canonical(self, x):
        return _wrap(np.asarray(x, dtype=float), self.circumference)

    def check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)) or np.any(x < 0) or np.any(x > self.circumference):
            raise DomainError(f"point(s) outside [0, {self.circumference}) on {self}")
        return x

    def to_dict(self) -> dict:
        return {"kind": self.kind, "circumference": self.circumference}


@dataclass(frozen=True)
class Torus:
    dim: int = 2
    side: float = 2 * math.pi

    kind: ClassVar[str] = "torus"

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"torus dimension must be a positive integer, got {self.dim}")
        if not (self.side > 0 and math.isfinite(self.side)):
            raise ValueError(f"side must be positive, got {self.side}")

    @property
    def volume(self) -> float:
        return self.side ** self.dim

    def canonical(self, x):
        return _wrap(np.asarray(x, dtype=float), self.side)

    def check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise DomainError(f"expected points with trailing dimension {self.dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x)) or np.any(x < 0) or np.any(x > self.side):
            raise DomainError(f"point(s) outside [0, {self.side})^{self.dim}")
        return x

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dim": self.dim, "side": self.side}


@dataclass(frozen=True)
class Interval:
    length: float = math.pi
    boundary: str = "neumann"

    kind: ClassVar[str] = "interval"
    dim: ClassVar[int] = 1

    def __post_init__(self):
        if not (self.length > 0 and math.isfinite(self.length)):
            raise ValueError(f"length must be positive, got {self.length}")
        if self.boundary not in ("neumann", "dirichlet"):
            raise ValueError(f"boundary must be 'neumann' or 'dirichlet', got {self.boundary!r}")

    @property
    def volume(self) -> float:
        return self.length

    def canonical(self, x):
        return np.clip(np.asarray(x, dtype=float), 0.0, self.length)

    def check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)) or np.any(x < 0) or np.any(x > self.length):
            raise DomainError(f"point(s) outside [0, {self.length}]")
        return x

    def to_dict(self) -> dict:
        return {"kind": self.kind, "length": self.length, "boundary": self.boundary}


@dataclass(frozen=True)
class ConfinedLine:
    """Real line carrying ``mu(dx) ∝ exp(-V(x)) dx`` with ``V(x) = (1 + theta x^2)^tau``."""

    theta: float = 1.0
    tau: float = 1.0

    kind: ClassVar[str] = "confined_line"
    dim: ClassVar[int] = 1

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if not self.tau > 0.5:
            raise ValueError(f"tau must exceed 1/2, got {self.tau}")

    def potential(self, x):
        x = np.asarray(x, dtype=float)
        return (1.0 + self.theta * x * x) ** self.tau

    def potential_grad(self, x):
        x = np.asarray(x, dtype=float)
        return 2.0 * self.theta * self.tau * x * (1.0 + self.theta * x * x) ** (self.tau - 1.0)

    def potential_hess(self, x):
        x = np.asarray(x, dtype=float)
        s = 1.0 + self.theta * x * x
        return 2.0 * self.theta * self.tau * s ** (self.tau - 2.0) * (s + 2.0 * self.theta * (self.tau - 1.0) * x * x)

    def canonical(self, x):
        return np.asarray(x, dtype=float)

    def check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise DomainError("non-finite point on the line")
        return x

    def to_dict(self) -> dict:
        return {"kind": self.kind, "theta": self.theta, "tau": self.tau}


Space = Union[Circle, Torus, Interval, ConfinedLine]

_SPACE_KEYS = {
    "circle": (Circle, {"circumference"}),
    "torus": (Torus, {"dim", "side"}),
    "interval": (Interval, {"length", "boundary"}),
    "confined_line": (ConfinedLine, {"theta", "tau"}),
}


def space_from_dict(d: dict) -> Space:
    """Rebuild a space from its tagged-record form, e.g. ``{"kind": "circle", "circumference": 6.28}``."""
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in _SPACE_KEYS:
        raise ValueError(f"unknown space kind {kind!r}; expected one of {sorted(_SPACE_KEYS)}")
    cls, allowed = _SPACE_KEYS[kind]
    extra = set(d) - allowed
    if extra:
        raise ValueError(f"unknown keys for {kind}: {sorted(extra)}")
    return cls(**d)


def metric(space: Space, x, y):
    """Geodesic distance between points (vectorized over leading axes)."""
    x = space.check(x)
    y = space.check(y)
    if isinstance(space, Circle):
        d = np.abs(x - y)
        return np.minimum(d, space.circumference - d)
    if isinstance(space, Torus):
        d = np.abs(x - y)
        d = np.minimum(d, space.side - d)
        return np.sqrt(np.sum(d * d, axis=-1))
    return np.abs(x - y)


def full_mass_radius(space: Space) -> float:
    if isinstance(space, Circle):
        return space.circumference / 2
    if isinstance(space, Interval):
        return space.length / 2
    if isinstance(space, Torus):
        return space.side / 2
    raise UnsupportedSpaceError(f"no ball-measure bound for {space.kind}")


def mu_ball(space: Space, r):
    """Uniform-in-centre upper bound ``psi(r) >= sup_x mu(B(x, r))``.

    Exact on the circle and the interval. On the torus the Euclidean ball is
    replaced by the enclosing sup-metric cube, giving ``min((2r/L)^d, 1)``.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radius must be nonnegative")
    if isinstance(space, Circle):
        return np.minimum(2 * r / space.circumference, 1.0)
    if isinstance(space, Interval):
        return np.minimum(2 * r / space.length, 1.0)
    if isinstance(space, Torus):
        return np.minimum((2 * r / space.side) ** space.dim, 1.0)
    raise UnsupportedSpaceError(f"mu_ball is not available for {space.kind}")


def psi_inverse(space: Space, s):
    """Generalized inverse ``sup{r >= 0 : psi(r) <= s}``, capped at the full-mass radius."""
    s = np.asarray(s, dtype=float)
    if np.any((s < 0) | (s > 1)):
        raise ValueError("s must lie in [0, 1]")
    if isinstance(space, Circle):
        return s * space.circumference / 2
    if isinstance(space, Interval):
        return s * space.length / 2
    if isinstance(space, Torus):
        return space.side * s ** (1.0 / space.dim) / 2
    raise UnsupportedSpaceError(f"psi_inverse is not available for {space.kind}")


# ---------------------------------------------------------------------------
# one-dimensional reference densities
# ---------------------------------------------------------------------------


class UniformDensity:
    """Uniform probability density on ``[a, b]``."""

    def __init__(self, a: float, b: float):
        if not b > a:
            raise ValueError("need b > a")
        self.a, self.b = float(a), float(b)

    @property
    def support(self):
        return self.a, self.b

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.a) & (x <= self.b), 1.0 / (self.b - self.a), 0.0)

    def cdf(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.a) / (self.b - self.a), 0.0, 1.0)

    def quantile(self, u):
        return self.a + np.clip(np.asarray(u, dtype=float), 0.0, 1.0) * (self.b - self.a)

    def partial_moments(self, lo, hi):
        """Return ``(∫ρ, ∫yρ, ∫y²ρ)`` over ``[lo, hi]``."""
        lo = np.clip(np.asarray(lo, dtype=float), self.a, self.b)
        hi = np.clip(np.asarray(hi, dtype=float), self.a, self.b)
        c = 1.0 / (self.b - self.a)
        return c * (hi - lo), c * (hi**2 - lo**2) / 2, c * (hi**3 - lo**3) / 3

    def sample(self, rng: np.random.Generator, size=None):
        return rng.uniform(self.a, self.b, size=size)


class SineSquaredDensity:
    """Density ``(2/l) sin^2(pi x / l)`` on ``[0, l]``.

    This is ``phi_0^2`` times normalized Lebesgue measure, where ``phi_0`` is the
    Dirichlet ground state of the interval.
    """

    def __init__(self, length: float = math.pi):
        self.length = float(length)
        self._w = 2 * math.pi / self.length
        grid = np.linspace(0.0, self.length, 4097)
        self._table_x = grid
        self._table_u = self.cdf(grid)

    @property
    def support(self):
        return 0.0, self.length

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = (x >= 0) & (x <= self.length)
        return np.where(inside, 2.0 / self.length * np.sin(math.pi * x / self.length) ** 2, 0.0)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), 0.0, self.length)
        return x / self.length - np.sin(self._w * x) / (2 * math.pi)

    def _m1(self, x):
        w, ell = self._w, self.length
        return (x * x / 2 - x * np.sin(w * x) / w - (np.cos(w * x) - 1) / w**2) / ell

    def _m2(self, x):
        w, ell = self._w, self.length
        return (x**3 / 3 - (x * x * np.sin(w * x) / w + 2 * x * np.cos(w * x) / w**2 - 2 * np.sin(w * x) / w**3)) / ell

    def partial_moments(self, lo, hi):
        lo = np.clip(np.asarray(lo, dtype=float), 0.0, self.length)
        hi = np.clip(np.asarray(hi, dtype=float), 0.0, self.length)
        return self.cdf(hi) - self.cdf(lo), self._m1(hi) - self._m1(lo), self._m2(hi) - self._m2(lo)

    def quantile(self, u):
        u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
        x = np.interp(u, self._table_u, self._table_x)
        lo = np.zeros_like(x)
        hi = np.full_like(x, self.length)
        for _ in range(60):
            f = self.cdf(x) - u
            lo = np.where(f < 0, x, lo)
            hi = np.where(f > 0, x, hi)
            d = self.pdf(x)
            with np.errstate(divide="ignore", invalid="ignore"):
                step = np.where(d > 0, f / d, 0.0)
            xn = x - step
            bad = (xn <= lo) | (xn >= hi) | ~np.isfinite(xn)
            xn = np.where(bad, 0.5 * (lo + hi), xn)
            if np.max(np.abs(xn - x), initial=0.0) < 1e-15 * self.length:
                x = xn
                break
            x = xn
        return np.where(u <= 0, 0.0, np.where(u >= 1, self.length, x))

    def sample(self, rng: np.random.Generator, size=None):
        n = 1 if size is None else int(np.prod(size))
        out = np.empty(0)
        while out.size < n:
            m = max(2 * (n - out.size) + 16, 64)
            x = rng.uniform(0.0, self.length, m)
            keep = rng.random(m) < np.sin(math.pi * x / self.length) ** 2
            out = np.concatenate([out, x[keep]])
        out = out[:n]
        return float(out[0]) if size is None else out.reshape(size)


class GibbsDensity:
    """Normalized ``exp(-(1 + theta x^2)^tau)`` on the real line.

    CDF, quantile and partial moments come from cumulative quadrature tables on
    a fine grid (relative accuracy about 1e-9); sampling is exact rejection
    from a Laplace proposal.
    """

    def __init__(self, theta: float = 1.0, tau: float = 1.0, n_table: int = 1 << 15):
        self.space = ConfinedLine(theta, tau)
        v0 = float(self.space.potential(0.0))
        # truncate where the density has dropped by e^-60
        radius = optimize.brentq(lambda r: float(self.space.potential(r)) - v0 - 60.0, 0.0, 1e6)
        self.radius = radius
        self.norm = integrate.quad(lambda x: math.exp(-(float(self.space.potential(x)) - v0)), -radius, radius,
                                   limit=200, epsabs=0, epsrel=1e-13)[0]
        self._v0 = v0
        xs = np.linspace(-radius, radius, n_table + 1)
        rho = self.pdf(xs)
        self._x = xs
        self._c0 = integrate.cumulative_simpson(rho, x=xs, initial=0.0)
        self._c1 = integrate.cumulative_simpson(xs * rho, x=xs, initial=0.0)
        self._c2 = integrate.cumulative_simpson(xs * xs * rho, x=xs, initial=0.0)
        self._c0 /= self._c0[-1]
        self._c0 = np.maximum.accumulate(self._c0)
        self.variance = float(self._c2[-1] - self._c1[-1] ** 2)
        self._laplace_rate = math.sqrt(2.0 / self.variance)
        a = self._laplace_rate
        g = lambda x: a * x - (float(self.space.potential(x)) - v0)  # noqa: E731
        grid = np.linspace(0, 4 * radius, 20001)
        vals = a * grid - (self.space.potential(grid) - v0)
        k = int(np.argmax(vals))
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
        res = optimize.minimize_scalar(lambda x: -g(x), bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12})
        self._log_envelope = max(float(vals[k]), -float(res.fun)) + 1e-9

    @property
    def support(self):
        return -self.radius, self.radius

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-(self.space.potential(x) - self._v0)) / self.norm

    def cdf(self, x):
        return np.interp(np.asarray(x, dtype=float), self._x, self._c0, left=0.0, right=1.0)

    def quantile(self, u):
        return np.interp(np.asarray(u, dtype=float), self._c0, self._x)

    def partial_moments(self, lo, hi):
        lo = np.clip(np.asarray(lo, dtype=float), -self.radius, self.radius)
        hi = np.clip(np.asarray(hi, dtype=float), -self.radius, self.radius)
        f = lambda tab, x: np.interp(x, self._x, tab)  # noqa: E731
        return (f(self._c0, hi) - f(self._c0, lo), f(self._c1, hi) - f(self._c1, lo),
                f(self._c2, hi) - f(self._c2, lo))

    def sample(self, rng: np.random.Generator, size=None):
        n = 1 if size is None else int(np.prod(size))
        a = self._laplace_rate
        out = np.empty(0)
        while out.size < n:
            m = max(2 * (n - out.size) + 16, 64)
            x = rng.laplace(0.0, 1.0 / a, m)
            log_ratio = -(self.space.potential(x) - self._v0) + a * np.abs(x) - self._log_envelope
            keep = np.log(rng.random(m)) < log_ratio
            out = np.concatenate([out, x[keep]])
        out = out[:n]
        return float(out[0]) if size is None else out.reshape(size)


_GIBBS_CACHE: dict = {}


def invariant_density(space: Space):
    """One-dimensional density object for the invariant measure of ``space``."""
    if isinstance(space, Circle):
        return UniformDensity(0.0, space.circumference)
    if isinstance(space, Interval):
        return UniformDensity(0.0, space.length)
    if isinstance(space, ConfinedLine):
        key = (space.theta, space.tau)
        if key not in _GIBBS_CACHE:
            _GIBBS_CACHE[key] = GibbsDensity(space.theta, space.tau)
        return _GIBBS_CACHE[key]
    raise UnsupportedSpaceError(f"no one-dimensional density for {space.kind}")


def sample_invariant(space: Space, rng: np.random.Generator, size=None):
    """Draw i.i.d. points from the invariant measure ``mu`` of ``space``."""
    if isinstance(space, Torus):
        shape = (space.dim,) if size is None else tuple(np.atleast_1d(size)) + (space.dim,)
        return space.canonical(rng.uniform(0.0, space.side, size=shape))
    x = invariant_density(space).sample(rng, size)
    return space.canonical(x) if not isinstance(space, ConfinedLine) else x
