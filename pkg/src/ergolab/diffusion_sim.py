"""Path simulators for the reference diffusions and their empirical measures.

Every simulator takes an explicit ``numpy.random.Generator``; use
:func:`replica_rng` to obtain the counter-based stream of a given
``(seed, replica)`` pair so that results never depend on scheduling.

The generator is the Laplacian, so Brownian increments over a step of
length ``h`` have variance ``2h``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .model_spaces import (
    Circle,
    ConfinedLine,
    DomainError,
    Interval,
    Space,
    Torus,
    invariant_density,
    metric,
    sample_invariant,
)

__all__ = [
    "StepSizeError",
    "SamplePath",
    "EmpiricalMeasure",
    "Dynamics",
    "replica_rng",
    "time_grid",
    "simulate_wrapped_bm",
    "simulate_reflected_bm",
    "simulate_killed_bm",
    "simulate_langevin_line",
    "simulate_example51",
    "simulate",
    "occupation_measure",
    "subsample_measure",
    "subsample_coupling_bound",
    "coarsen",
    "dump_paths_csv",
    "example51_coefficients",
]

# steps per vectorized block for the killed simulator
_KILL_BLOCK = 512


class StepSizeError(RuntimeError):
    """Explicit scheme unstable for the requested step size."""


def replica_rng(seed: int, replica: int, stream: int = 0) -> np.random.Generator:
    """Independent Philox stream keyed by ``(seed, stream, replica)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(replica)))
    return np.random.Generator(np.random.Philox(ss))


def time_grid(t: float, h: float) -> np.ndarray:
    """Step lengths of the grid ``0, h, 2h, ..., t``; the last step may be partial."""
    if not h > 0:
        raise ValueError("step h must be positive")
    if not t >= h * (1 - 1e-12):
        raise ValueError("horizon t must be at least one step")
    n = max(int(math.ceil(t / h - 1e-9)), 1)
    dt = np.full(n, h)
    dt[-1] = t - (n - 1) * h
    return dt


@dataclass
class SamplePath:
    """Discretized trajectory on the uniform grid of step ``h``.

    ``states[j]`` is the state at time ``min(j h, t)``. A killed path stores
    only the states before the kill time ``lifetime``.
    """

    space: Space
    h: float
    t: float
    states: np.ndarray
    survived: bool = True
    lifetime: float = float("nan")

    def __post_init__(self):
        if self.survived:
            self.lifetime = self.t

    @property
    def step_lengths(self) -> np.ndarray:
        dt = time_grid(self.t, self.h)
        return dt[: len(self.states) - 1] if self.survived else dt[: len(self.states)]

    @property
    def times(self) -> np.ndarray:
        n = len(self.states)
        return np.minimum(np.arange(n) * self.h, self.t)

    def __len__(self):
        return len(self.states)


class EmpiricalMeasure:
    """Finitely supported probability measure ``Σ w_k δ_{x_k}``.

    One-dimensional atoms are sorted and duplicates merged; torus atoms are
    kept as rows of an ``(n, d)`` array with duplicate rows merged.
    """

    __slots__ = ("space", "atoms", "weights", "horizon")

    def __init__(self, space: Space, atoms, weights=None, horizon: Optional[float] = None):
        x = np.asarray(atoms, dtype=float)
        if isinstance(space, Torus):
            x = x.reshape(-1, space.dim)
        else:
            x = x.reshape(-1)
        if x.shape[0] == 0:
            raise ValueError("empirical measure needs at least one atom")
        space.check(x)
        w = np.full(x.shape[0], 1.0 / x.shape[0]) if weights is None else np.asarray(weights, dtype=float).reshape(-1)
        if w.shape[0] != x.shape[0]:
            raise ValueError("atoms and weights differ in length")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        total = w.sum()
        if not total > 0:
            raise ValueError("weights must have positive mass")
        w = w / total
        if x.ndim == 1:
            order = np.argsort(x, kind="stable")
            x, w = x[order], w[order]
            keep = np.empty(x.size, dtype=bool)
            keep[0] = True
            np.not_equal(x[1:], x[:-1], out=keep[1:])
            if not keep.all():
                idx = np.flatnonzero(keep)
                w = np.add.reduceat(w, idx)
                x = x[idx]
        else:
            x, inv = np.unique(x, axis=0, return_inverse=True)
            w = np.bincount(inv.reshape(-1), weights=w, minlength=x.shape[0])
        self.space = space
        self.atoms = x
        self.weights = w
        self.horizon = horizon

    def __len__(self):
        return self.atoms.shape[0]

    def expect(self, f) -> float:
        """``Σ w_k f(x_k)`` with ``f`` vectorized."""
        return float(np.dot(self.weights, f(self.atoms)))

    def __repr__(self):
        return f"EmpiricalMeasure({self.space!r}, n_atoms={len(self)}, horizon={self.horizon})"


@dataclass(frozen=True)
class Dynamics:
    """Named dynamics for a space.

    ``kind`` is ``"bm"`` (wrapped, reflected or killed according to the
    space), ``"langevin"`` (confined line) or ``"example51"`` (degenerate
    diffusion on ``[0, 1]`` with exponent ``l``). ``noise_scale = 0`` freezes
    the noise for debugging.
    """

    kind: str = "bm"
    l: float = 3.0  # noqa: E741
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("bm", "langevin", "example51"):
            raise ValueError(f"unknown dynamics {self.kind!r}")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")

    def to_dict(self):
        return {"kind": self.kind, "l": self.l, "noise_scale": self.noise_scale}


def _start(space, x0, rng):
    if x0 is None:
        return sample_invariant(space, rng)
    x = np.asarray(x0, dtype=float)
    space.check(x)
    return x


def _gaussian_steps(rng, dt, noise_scale, d=None):
    shape = (dt.size,) if d is None else (dt.size, d)
    z = rng.standard_normal(shape)
    sd = noise_scale * np.sqrt(2.0 * dt)
    return z * (sd if d is None else sd[:, None])


def simulate_wrapped_bm(space, x0, t: float, h: float, rng: np.random.Generator, noise_scale: float = 1.0) -> SamplePath:
    """Exact Brownian motion on the circle or torus (``x0=None``: start from ``μ``)."""
    if not isinstance(space, (Circle, Torus)):
        raise TypeError("wrapped BM lives on a circle or torus")
    dt = time_grid(t, h)
    x = _start(space, x0, rng)
    d = space.dim if isinstance(space, Torus) else None
    inc = _gaussian_steps(rng, dt, noise_scale, d)
    free = np.concatenate([np.asarray(x)[None, ...] if d else np.atleast_1d(x), x + np.cumsum(inc, axis=0)])
    return SamplePath(space, h, float(t), space.canonical(free))


def _fold(y, length):
    """Triangle-wave map of the line onto ``[0, length]``."""
    r = np.mod(y, 2 * length)
    return np.where(r > length, 2 * length - r, r)


def simulate_reflected_bm(space: Interval, x0, t: float, h: float, rng: np.random.Generator,
                          noise_scale: float = 1.0) -> SamplePath:
    """Reflected Brownian motion on ``[0, l]``, exact in law via folding a free path."""
    if not (isinstance(space, Interval) and space.boundary == "neumann"):
        raise TypeError("reflected BM needs a Neumann interval")
    dt = time_grid(t, h)
    x = float(_start(space, x0, rng))
    free = np.concatenate([[x], x + np.cumsum(_gaussian_steps(rng, dt, noise_scale))])
    return SamplePath(space, h, float(t), np.clip(_fold(free, space.length), 0.0, space.length))


def simulate_killed_bm(space: Interval, x0, t: float, h: float, rng: np.random.Generator,
                       noise_scale: float = 1.0) -> SamplePath:
    """Brownian motion on ``(0, l)`` killed at the boundary.

    A step is fatal if the Gaussian endpoint leaves the interval, or, with the
    Brownian-bridge crossing probability ``exp(-a b / dt)`` per boundary
    (``a, b`` the distances of the two endpoints to that boundary), if the
    path is judged to have touched the boundary in between.
    """
    if not (isinstance(space, Interval) and space.boundary == "dirichlet"):
        raise TypeError("killed BM needs a Dirichlet interval")
    ell = space.length
    x = float(_start(space, x0, rng))
    if not 0.0 < x < ell:
        raise DomainError("killed BM must start in the open interval")
    dt_all = time_grid(t, h)
    n = dt_all.size
    out = [np.array([x])]
    pos = 0
    while pos < n:
        dt = dt_all[pos: pos + _KILL_BLOCK]
        y = x + np.cumsum(_gaussian_steps(rng, dt, noise_scale))
        u = rng.random(dt.size)
        prev = np.concatenate([[x], y[:-1]])
        inside = (y > 0.0) & (y < ell)
        with np.errstate(over="ignore", invalid="ignore"):
            a = np.where(inside, prev * y, 0.0)
            b = np.where(inside, (ell - prev) * (ell - y), 0.0)
            if noise_scale > 0:
                eff = noise_scale**2 * dt
                survive_bridge = (1.0 - np.exp(-a / eff)) * (1.0 - np.exp(-b / eff))
            else:
                survive_bridge = np.ones(dt.size)
        dead = ~inside | (u >= survive_bridge)
        if dead.any():
            k = int(np.argmax(dead))
            out.append(y[:k])
            states = np.concatenate(out)
            lifetime = min((pos + k + 1) * h, t)
            return SamplePath(space, h, float(t), states, survived=False, lifetime=float(lifetime))
        out.append(y)
        x = float(y[-1])
        pos += dt.size
    return SamplePath(space, h, float(t), np.concatenate(out))


def _langevin_guard(space: ConfinedLine, h: float):
    dens = invariant_density(space)
    r = 6.0 * math.sqrt(dens.variance)
    xs = np.linspace(-r, r, 2001)
    worst = float(np.max(np.abs(space.potential_hess(xs))))
    if h * worst >= 0.5:
        raise StepSizeError(f"h={h} too large: h*sup|V''| = {h * worst:.3g} over the 6-sigma range")
    return max(1e3 * r, 1e3)


def simulate_langevin_line(space: ConfinedLine, x0, t: float, h: float, rng: np.random.Generator,
                           noise_scale: float = 1.0, burn_in: Optional[float] = None) -> SamplePath:
    """Euler-Maruyama for ``dX = -V'(X) dt + sqrt(2) dW``.

    ``x0=None`` starts from an exact draw of the Gibbs measure with no burn-in;
    a point start burns in for ``burn_in`` time units (default 10).
    """
    if not isinstance(space, ConfinedLine):
        raise TypeError("Langevin dynamics needs a ConfinedLine")
    guard = _langevin_guard(space, h)
    if x0 is None:
        x = float(sample_invariant(space, rng))
        burn = 0.0 if burn_in is None else burn_in
    else:
        x = float(space.check(x0))
        burn = 10.0 if burn_in is None else burn_in
    n_burn = int(math.ceil(burn / h - 1e-9)) if burn > 0 else 0
    dt = time_grid(t, h)
    dt = np.concatenate([np.full(n_burn, h), dt])
    noise = _gaussian_steps(rng, dt, noise_scale)
    c = 2.0 * space.theta * space.tau
    theta, tm1 = space.theta, space.tau - 1.0
    states = np.empty(dt.size + 1)
    states[0] = x
    for j in range(dt.size):
        x = x - c * x * (1.0 + theta * x * x) ** tm1 * dt[j] + noise[j]
        states[j + 1] = x
    if not np.all(np.isfinite(states)) or np.max(np.abs(states)) > guard:
        raise StepSizeError("Langevin path blew up; reduce h")
    return SamplePath(space, h, float(t), states[n_burn:])


def example51_coefficients(x, l: float):  # noqa: E741
    """Drift and diffusion ``(b(x), σ(x))`` of the degenerate diffusion on ``[0, 1]``."""
    x = np.asarray(x, dtype=float)
    g = x * (1.0 - x)
    drift = l * g ** (l - 1.0) * (1.0 - 2.0 * x)
    sigma = math.sqrt(2.0) * g ** (l / 2.0)
    return drift, sigma


def simulate_example51(l: float, x0, t: float, h: float, rng: np.random.Generator,  # noqa: E741
                       noise_scale: float = 1.0) -> SamplePath:
    """Euler-Maruyama for the degenerate diffusion with generator ``(g^l f')'``, ``g = x(1-x)``.

    States are clamped to ``[h^2, 1 - h^2]``; the boundary is not reached by
    the exact process for ``l > 2``. ``x0=None`` draws the start uniformly.
    """
    if not l > 2:
        raise ValueError("need l > 2")
    space = Interval(1.0, "neumann")
    x = float(rng.random()) if x0 is None else float(x0)
    if not 0.0 < x < 1.0:
        raise DomainError("x0 must lie in (0, 1)")
    lo, hi = h * h, 1.0 - h * h
    dt = time_grid(t, h)
    z = rng.standard_normal(dt.size) * noise_scale * np.sqrt(dt)
    states = np.empty(dt.size + 1)
    states[0] = x
    r2 = math.sqrt(2.0)
    half = l / 2.0
    for j in range(dt.size):
        g = x * (1.0 - x)
        x = x + l * g ** (l - 1.0) * (1.0 - 2.0 * x) * dt[j] + r2 * g**half * z[j]
        x = lo if x < lo else (hi if x > hi else x)
        states[j + 1] = x
    return SamplePath(space, h, float(t), states)


def simulate(space: Space, dynamics: Dynamics, x0, t: float, h: float, rng: np.random.Generator) -> SamplePath:
    """Dispatch to the simulator matching ``(space, dynamics)``."""
    s = dynamics.noise_scale
    if dynamics.kind == "example51":
        return simulate_example51(dynamics.l, x0, t, h, rng, s)
    if dynamics.kind == "langevin":
        return simulate_langevin_line(space, x0, t, h, rng, s)
    if isinstance(space, (Circle, Torus)):
        return simulate_wrapped_bm(space, x0, t, h, rng, s)
    if isinstance(space, Interval):
        if space.boundary == "neumann":
            return simulate_reflected_bm(space, x0, t, h, rng, s)
        return simulate_killed_bm(space, x0, t, h, rng, s)
    raise TypeError(f"Brownian motion is not defined on {space.kind}; use langevin")


# ---------------------------------------------------------------------------
# paths to measures
# ---------------------------------------------------------------------------


def occupation_measure(path: SamplePath) -> EmpiricalMeasure:
    """Left-endpoint discretization of ``(1/t) ∫_0^t δ_{X_s} ds`` (up to the lifetime if killed)."""
    if path.survived:
        if len(path) < 2:
            raise ValueError("empty path")
        states = path.states[:-1]
    else:
        if len(path) < 1:
            raise ValueError("empty path")
        states = path.states
    w = path.step_lengths
    horizon = path.t if path.survived else path.lifetime
    return EmpiricalMeasure(path.space, states, w, horizon=horizon)


def _subsample_stride(path: SamplePath, N: int) -> int:
    if N < 1:
        raise ValueError("N must be >= 1")
    if not path.survived:
        raise ValueError("subsampling needs a surviving path")
    n_steps = len(path) - 1
    if not math.isclose(n_steps * path.h, path.t, rel_tol=1e-9):
        raise ValueError("horizon is not a multiple of h")
    if n_steps % N:
        raise ValueError(f"t/N is not a multiple of h (steps={n_steps}, N={N})")
    return n_steps // N


def subsample_measure(path: SamplePath, N: int) -> EmpiricalMeasure:
    """``(1/N) Σ_{i=1}^N δ_{X_{it/N}}``."""
    m = _subsample_stride(path, N)
    return EmpiricalMeasure(path.space, path.states[m::m][:N], horizon=path.t)


def subsample_coupling_bound(path: SamplePath, N: int, p: float = 1.0) -> float:
    """Cost of the time coupling between the occupation and subsampled measures.

    Grid state ``X_j`` with ``(i-1)m <= j < im`` is sent to ``X_{im}``; the
    ``p``-th root of the average ``d(X_j, X_{im})^p`` bounds ``W_p(μ_{t,N}, μ_t)``.
    """
    m = _subsample_stride(path, N)
    n = len(path) - 1
    src = path.states[:n]
    dst = path.states[(np.arange(n) // m + 1) * m]
    dist = metric(path.space, src, dst)
    return float(np.mean(dist**p) ** (1.0 / p))


def coarsen(path: SamplePath, factor: int = 2) -> SamplePath:
    """Every ``factor``-th state of a full-grid path (an exact path at step ``factor h``)."""
    n = len(path) - 1
    if not path.survived or n % factor or not math.isclose(n * path.h, path.t, rel_tol=1e-9):
        raise ValueError("coarsening needs a surviving path on a full grid divisible by the factor")
    return SamplePath(path.space, path.h * factor, path.t, path.states[::factor])


def dump_paths_csv(paths: Iterable[SamplePath], fh, replica_ids: Optional[Iterable[int]] = None):
    """Write ``replica,time,state0[,state1...]`` rows for each path to an open text file."""
    writer = csv.writer(fh)
    header_done = False
    ids = replica_ids if replica_ids is not None else iter(range(10**12))
    for rid, path in zip(ids, paths):
        st = path.states.reshape(len(path), -1)
        if not header_done:
            writer.writerow(["replica", "time"] + [f"state{k}" for k in range(st.shape[1])])
            header_done = True
        for tm, row in zip(path.times, st):
            writer.writerow([rid, repr(float(tm))] + [repr(float(v)) for v in row])
