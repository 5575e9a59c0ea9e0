"""Explicit eigenbases of the reference generator and the spectral limit constants.

The generator is the Laplacian (quadratic variation ``2t``), so eigenvalues are
the true exponential decay rates ``e^{-lambda_i t}`` of the simulated
diffusions. Eigenfunctions are orthonormal in ``L^2(mu)`` with ``mu`` the
normalized volume measure.

Index conventions
-----------------
* circle:   ``i = 0`` constant; ``i = 2k-1`` is ``√2 cos(kωx)``, ``i = 2k`` is
  ``√2 sin(kωx)`` with ``ω = 2π/L``.
* Neumann interval: ``φ_k = √2 cos(kπx/l)``, ``λ_k = (kπ/l)^2``.
* Dirichlet interval: ``φ_i = √2 sin((i+1)πx/l)``, ``λ_i = ((i+1)π/l)^2``.
* torus: products of ``1``, ``√2 cos``, ``√2 sin`` over nonnegative frequency
  vectors, sorted by eigenvalue, then frequency vector, then cos-before-sin.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .model_spaces import Circle, Interval, Space, Torus

__all__ = [
    "SpectralError",
    "SeriesValue",
    "SpectralBasis",
    "basis_for",
    "synthetic_basis",
    "eigenpair",
    "limit_t4",
    "limit_t2",
    "limit_t1",
    "variance_vf",
    "xi_k",
    "gamma_d",
    "rate_t5",
    "limit_t6_d4",
    "example51_envelope",
    "heat_kernel",
    "dirichlet_survival",
]

DEFAULT_N_MAX = 256


class SpectralError(ValueError):
    """Invalid spectral request (wrong boundary flavour, divergence, truncation)."""


@dataclass(frozen=True)
class SeriesValue:
    """Truncated positive series with a rigorous bracket ``[value, value + tail_bound]``."""

    value: float
    tail_bound: float
    n_terms: int

    @property
    def lower(self) -> float:
        return self.value

    @property
    def upper(self) -> float:
        return self.value + self.tail_bound

    def __float__(self) -> float:
        return self.value

    def to_dict(self) -> dict:
        return {"value": self.value, "tail_bound": self.tail_bound, "lower": self.lower,
                "upper": self.upper, "n_terms": self.n_terms}


@dataclass
class SpectralBasis:
    """Ordered eigenpairs of ``-L`` on a model space, truncated at ``n_max``.

    ``growth`` holds ``(c1, kappa)`` with ``c1 i^{2/d} <= λ_i <= kappa i^{2/d}``
    for ``i >= 1``. ``lam_lower(i)`` is a nondecreasing explicit lower bound on
    ``λ_i`` valid for every index, used for tail brackets.
    """

    space: Optional[Space]
    flavor: str
    eigenvalues: np.ndarray
    dimension: int
    growth: tuple
    lam_lower: Callable[[np.ndarray], np.ndarray]
    next_eigenvalue: float
    _evaluator: Optional[Callable] = field(default=None, repr=False)
    _gradient: Optional[Callable] = field(default=None, repr=False)

    @property
    def n_max(self) -> int:
        return int(self.eigenvalues.size)

    def evaluate(self, x, indices=None) -> np.ndarray:
        """Matrix ``Φ[i, j] = φ_i(x_j)``; rows follow ``indices`` (default all)."""
        if self._evaluator is None:
            raise SpectralError("synthetic basis carries no eigenfunctions")
        idx = np.arange(self.n_max) if indices is None else np.asarray(indices)
        if np.any(idx >= self.n_max) or np.any(idx < 0):
            raise SpectralError(f"index beyond truncation n_max={self.n_max}")
        return self._evaluator(np.asarray(x, dtype=float), idx)

    def gradient(self, x, indices=None) -> np.ndarray:
        """Derivatives ``φ_i'(x_j)``; on the torus an extra trailing axis of size d."""
        if self._gradient is None:
            raise SpectralError("synthetic basis carries no eigenfunctions")
        idx = np.arange(self.n_max) if indices is None else np.asarray(indices)
        return self._gradient(np.asarray(x, dtype=float), idx)

    def summary(self) -> dict:
        """JSON-ready summary used in reports."""
        out = {
            "space": None if self.space is None else self.space.to_dict(),
            "flavor": self.flavor,
            "n_max": self.n_max,
            "dimension": self.dimension,
            "growth_constants": list(self.growth),
            "eigenvalues": self.eigenvalues.tolist(),
        }
        if self.flavor == "dirichlet":
            out["limit_t2"] = limit_t2(self).to_dict()
        elif self.dimension <= 3:
            out["limit_t4"] = limit_t4(self).to_dict()
        return out


# ---------------------------------------------------------------------------
# concrete bases
# ---------------------------------------------------------------------------


def _circle_basis(space: Circle, n_max: int) -> SpectralBasis:
    w = 2 * math.pi / space.circumference
    i = np.arange(n_max + 1)
    k_all = (i + 1) // 2
    lam_all = (w * k_all) ** 2
    r2 = math.sqrt(2.0)

    def ev(x, idx):
        k = ((idx + 1) // 2)[:, None]
        arg = w * k * np.ravel(x)[None, :]
        out = np.where((idx % 2 == 1)[:, None], r2 * np.cos(arg), r2 * np.sin(arg))
        out[idx == 0] = 1.0
        return out.reshape((len(idx),) + np.shape(x))

    def grad(x, idx):
        k = ((idx + 1) // 2)[:, None]
        arg = w * k * np.ravel(x)[None, :]
        out = np.where((idx % 2 == 1)[:, None], -r2 * w * k * np.sin(arg), r2 * w * k * np.cos(arg))
        out[idx == 0] = 0.0
        return out.reshape((len(idx),) + np.shape(x))

    return SpectralBasis(
        space=space, flavor="closed", eigenvalues=lam_all[:n_max], dimension=1,
        growth=(w * w / 4, w * w),
        lam_lower=lambda j: (w * np.asarray(j, dtype=float) / 2) ** 2,
        next_eigenvalue=float(lam_all[n_max]), _evaluator=ev, _gradient=grad,
    )


def _interval_basis(space: Interval, n_max: int) -> SpectralBasis:
    w = math.pi / space.length
    r2 = math.sqrt(2.0)
    if space.boundary == "neumann":
        lam_all = (w * np.arange(n_max + 1)) ** 2

        def ev(x, idx):
            out = r2 * np.cos(w * idx[:, None] * np.ravel(x)[None, :])
            out[idx == 0] = 1.0
            return out.reshape((len(idx),) + np.shape(x))

        def grad(x, idx):
            out = -r2 * w * idx[:, None] * np.sin(w * idx[:, None] * np.ravel(x)[None, :])
            return out.reshape((len(idx),) + np.shape(x))

        return SpectralBasis(
            space=space, flavor="neumann", eigenvalues=lam_all[:n_max], dimension=1,
            growth=(w * w, w * w), lam_lower=lambda j: (w * np.asarray(j, dtype=float)) ** 2,
            next_eigenvalue=float(lam_all[n_max]), _evaluator=ev, _gradient=grad,
        )
    lam_all = (w * (np.arange(n_max + 1) + 1)) ** 2

    def ev(x, idx):
        out = r2 * np.sin(w * (idx[:, None] + 1) * np.ravel(x)[None, :])
        return out.reshape((len(idx),) + np.shape(x))

    def grad(x, idx):
        k = idx[:, None] + 1
        out = r2 * w * k * np.cos(w * k * np.ravel(x)[None, :])
        return out.reshape((len(idx),) + np.shape(x))

    return SpectralBasis(
        space=space, flavor="dirichlet", eigenvalues=lam_all[:n_max], dimension=1,
        # (i+1)^2 lies in [i^2, 4 i^2] for i >= 1
        growth=(w * w, 4 * w * w), lam_lower=lambda j: (w * (np.asarray(j, dtype=float) + 1)) ** 2,
        next_eigenvalue=float(lam_all[n_max]), _evaluator=ev, _gradient=grad,
    )


def _torus_modes(d: int, count: int):
    """First ``count`` torus modes as (|k|^2, k, pattern) with pattern[j]=1 for sine."""
    radius = 1
    while True:
        modes = []
        for k in itertools.product(range(radius + 1), repeat=d):
            nz = [j for j in range(d) if k[j] != 0]
            for pat in itertools.product((0, 1), repeat=len(nz)):
                full = [0] * d
                for j, s in zip(nz, pat):
                    full[j] = s
                modes.append((sum(c * c for c in k), k, tuple(full)))
        modes.sort()
        # every mode with |k|^2 <= radius^2 is present once the cube has side radius
        complete = [m for m in modes if m[0] <= radius * radius]
        if len(complete) >= count:
            return complete[:count]
        radius *= 2


def _torus_basis(space: Torus, n_max: int) -> SpectralBasis:
    d = space.dim
    w = 2 * math.pi / space.side
    modes = _torus_modes(d, n_max + 1)
    lam_all = np.array([w * w * m[0] for m in modes], dtype=float)
    ks = np.array([m[1] for m in modes], dtype=float)
    pats = np.array([m[2] for m in modes], dtype=int)
    r2 = math.sqrt(2.0)

    def factors(x, idx):
        x = np.asarray(x, dtype=float).reshape(-1, d)
        k = ks[idx][:, None, :]
        arg = w * k * x[None, :, :]
        cos_f = np.where(k == 0, 1.0, r2 * np.cos(arg))
        sin_f = r2 * np.sin(arg)
        is_sin = (pats[idx] == 1)[:, None, :]
        val = np.where(is_sin, sin_f, cos_f)
        der = np.where(is_sin, r2 * w * k * np.cos(arg), np.where(k == 0, 0.0, -r2 * w * k * np.sin(arg)))
        return val, der

    def ev(x, idx):
        lead = np.shape(x)[:-1]
        val, _ = factors(x, idx)
        return np.prod(val, axis=-1).reshape((len(idx),) + lead)

    def grad(x, idx):
        lead = np.shape(x)[:-1]
        val, der = factors(x, idx)
        out = np.empty(val.shape)
        for j in range(d):
            others = np.prod(np.delete(val, j, axis=-1), axis=-1) if d > 1 else 1.0
            out[..., j] = der[..., j] * others
        return out.reshape((len(idx),) + lead + (d,))

    # lattice-count sandwich: i^{2/d}/9 <= |k_i|^2 <= d i^{2/d}
    return SpectralBasis(
        space=space, flavor="closed", eigenvalues=lam_all[:n_max], dimension=d,
        growth=(w * w / 9, d * w * w),
        lam_lower=lambda j: w * w * np.asarray(j, dtype=float) ** (2.0 / d) / 9,
        next_eigenvalue=float(lam_all[n_max]), _evaluator=ev, _gradient=grad,
    )


def basis_for(space: Space, n_max: int = DEFAULT_N_MAX) -> SpectralBasis:
    """Explicit eigenbasis of the Laplacian on ``space`` with ``n_max`` eigenpairs."""
    if n_max < 1:
        raise SpectralError("n_max must be positive")
    if isinstance(space, Circle):
        return _circle_basis(space, n_max)
    if isinstance(space, Interval):
        return _interval_basis(space, n_max)
    if isinstance(space, Torus):
        return _torus_basis(space, n_max)
    raise SpectralError(f"no explicit eigenbasis for {space.kind}")


def synthetic_basis(eigenvalues: Sequence[float], flavor: str = "closed", dimension: int = 1,
                    c1: Optional[float] = None) -> SpectralBasis:
    """Eigenvalue-only basis for exercising the series formulas.

    The tail bracket assumes ``λ_i >= c1 i^{2/d}`` beyond the list; ``c1``
    defaults to the smallest ratio observed on the supplied nonzero modes.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if flavor not in ("closed", "neumann", "dirichlet"):
        raise SpectralError(f"unknown flavor {flavor!r}")
    i = np.arange(lam.size)
    if c1 is None:
        mask = i >= 1
        c1 = float(np.min(lam[mask] / i[mask] ** (2.0 / dimension))) if mask.any() else 1.0
    top = float(np.max(lam)) if lam.size else 0.0
    return SpectralBasis(
        space=None, flavor=flavor, eigenvalues=lam, dimension=dimension, growth=(c1, float("nan")),
        lam_lower=lambda j: c1 * np.asarray(j, dtype=float) ** (2.0 / dimension),
        next_eigenvalue=max(top, c1 * lam.size ** (2.0 / dimension)),
    )


def eigenpair(basis: SpectralBasis, i: int):
    """``(λ_i, φ_i)`` with ``φ_i`` a vectorized callable."""
    if not 0 <= i < basis.n_max:
        raise SpectralError(f"index {i} beyond truncation n_max={basis.n_max}")
    lam = float(basis.eigenvalues[i])
    idx = np.array([i])
    return lam, (lambda x: basis.evaluate(x, idx)[0])


# ---------------------------------------------------------------------------
# spectral limit constants
# ---------------------------------------------------------------------------


def _tail_sum(g: Callable[[np.ndarray], np.ndarray], start: int) -> float:
    """Upper bound for ``sum_{i >= start} g(i)`` with ``g`` nonincreasing.

    ``g(start) + ∫_start^∞ g``, the integral by the substitution ``i = start/s``.
    """
    from scipy import integrate

    if start < 1:
        raise ValueError("tail must start at index >= 1")
    head = float(g(np.array([float(start)]))[0])
    f = lambda s: float(g(np.array([start / s]))[0]) * start / (s * s)  # noqa: E731
    val, err = integrate.quad(f, 0.0, 1.0, limit=200, epsabs=1e-15, epsrel=1e-10)
    return head + val + 2 * err


def _require_closed(basis: SpectralBasis, what: str):
    if basis.flavor == "dirichlet":
        raise SpectralError(f"{what} needs a closed or Neumann basis")


def limit_t4(basis: SpectralBasis, z_correction: Optional[Sequence[float]] = None) -> SeriesValue:
    """``lim t E[W_2(μ_t, μ)^2] = Σ_{i≥1} (2/λ_i^2)(1 - V_{Zφ_i}/λ_i)``.

    ``z_correction`` holds ``V_{Zφ_i}`` for ``i = 1..``; omitted entries are 0
    (divergence-free drift ``Z = 0``).
    """
    _require_closed(basis, "limit_t4")
    if basis.dimension >= 4:
        raise SpectralError(f"series diverges in dimension {basis.dimension}")
    lam = basis.eigenvalues[1:]
    corr = np.zeros(lam.size)
    if z_correction is not None:
        z = np.asarray(z_correction, dtype=float)[: lam.size]
        corr[: z.size] = z
    terms = 2.0 / lam**2 * (1.0 - corr / lam)
    value = math.fsum(terms.tolist())
    tail = _tail_sum(lambda j: 2.0 / basis.lam_lower(j) ** 2, basis.n_max)
    return SeriesValue(value, tail, lam.size)


def limit_t2(basis: SpectralBasis) -> SeriesValue:
    """``Σ_{i≥1} 2/(λ_i - λ_0)^2`` for a Dirichlet basis."""
    if basis.flavor != "dirichlet":
        raise SpectralError("limit_t2 needs a Dirichlet basis")
    if basis.dimension >= 4:
        raise SpectralError(f"series diverges in dimension {basis.dimension}")
    lam0 = basis.eigenvalues[0]
    gaps = basis.eigenvalues[1:] - lam0
    value = math.fsum((2.0 / gaps**2).tolist())

    def g(j):
        gap = np.maximum(basis.lam_lower(j) - lam0, 1e-300)
        return 2.0 / gap**2

    start = basis.n_max
    # the lower bound must stay above λ_0 for the tail integral to be finite
    while basis.lam_lower(np.array([float(start)]))[0] <= lam0 * 1.5:
        start += 1
    tail = _tail_sum(g, start)
    if start > basis.n_max:
        tail += sum(float(g(np.array([float(j)]))[0]) for j in range(basis.n_max, start))
    return SeriesValue(value, tail, gaps.size)


@dataclass(frozen=True)
class LimitT1:
    value: float
    finiteness_diagnostic: float
    n_terms: int

    def __float__(self):
        return self.value


def limit_t1(basis: SpectralBasis, nu_coeffs: Sequence[float], mu_coeffs: Sequence[float]) -> LimitT1:
    """``lim t^2 W_2(E^ν[μ_t | τ > t], μ_0)^2`` from the coefficients ``ν(φ_i)``, ``μ(φ_i)``.

    Also returns the finiteness diagnostic ``Σ ν(φ_i)^2 λ_i^{-3}``.
    """
    if basis.flavor != "dirichlet":
        raise SpectralError("limit_t1 needs a Dirichlet basis")
    nu = np.asarray(nu_coeffs, dtype=float)
    mu = np.asarray(mu_coeffs, dtype=float)
    n = min(nu.size, mu.size, basis.n_max)
    if nu[0] <= 0:
        raise SpectralError("initial distribution is orthogonal to the ground state (ν(φ_0) <= 0)")
    lam = basis.eigenvalues[:n]
    num = (nu[0] * mu[1:n] + mu[0] * nu[1:n]) ** 2
    value = math.fsum((num / (lam[1:] - lam[0]) ** 3).tolist()) / (mu[0] * nu[0]) ** 2
    diag = math.fsum((nu[1:n] ** 2 / lam[1:] ** 3).tolist())
    return LimitT1(value, diag, n)


def variance_vf(basis: SpectralBasis, f_coeffs: Sequence[float]) -> float:
    """Asymptotic CLT variance ``V_f = Σ_{i≥1} a_i^2/λ_i`` (``a_0`` ignored)."""
    _require_closed(basis, "variance_vf")
    a = np.asarray(f_coeffs, dtype=float)
    n = min(a.size, basis.n_max)
    if n <= 1:
        return 0.0
    return math.fsum((a[1:n] ** 2 / basis.eigenvalues[1:n]).tolist())


# ---------------------------------------------------------------------------
# rate envelopes
# ---------------------------------------------------------------------------


def _positive_t(t):
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("t must be positive")
    return t


def _scalar(x):
    return float(x) if np.ndim(x) == 0 else x


def xi_k(K: float, t):
    """Universal envelope: ``t^-1`` (K<1), ``t^-1 log^2 t`` (K=1), ``t^{-1/(2K-1)}`` (K>1)."""
    if not K > 0:
        raise ValueError("K must be positive")
    t = _positive_t(t)
    if K < 1:
        return _scalar(1.0 / t)
    if K == 1:
        if np.any(t <= 1):
            raise ValueError("log branch needs t > 1")
        return _scalar(np.log(t) ** 2 / t)
    return _scalar(t ** (-1.0 / (2 * K - 1)))


def gamma_d(d: float, t):
    """``t^{-1/2}`` (d<4), ``t^{-1/2} sqrt(log t)`` (d=4), ``t^{-1/(d-2)}`` (d>4)."""
    if not d >= 1:
        raise ValueError("dimension must be >= 1")
    t = _positive_t(t)
    if d < 4:
        return _scalar(t**-0.5)
    if d == 4:
        if np.any(t <= 1):
            raise ValueError("log branch needs t > 1")
        return _scalar(np.sqrt(np.log(t) / t))
    return _scalar(t ** (-1.0 / (d - 2)))


def rate_t5(d: float, t):
    """``t^-1`` (d<=3), ``t^-1 log(t+1)`` (d=4), ``t^{-2/(d-2)}`` (d>=5)."""
    if not d >= 1:
        raise ValueError("dimension must be >= 1")
    t = _positive_t(t)
    if d <= 3:
        return _scalar(1.0 / t)
    if d == 4:
        return _scalar(np.log(t + 1) / t)
    return _scalar(t ** (-2.0 / (d - 2)))


def limit_t6_d4(volume: float) -> float:
    """Renormalized d=4 constant ``vol(M)/(8π^2)``."""
    if not volume > 0:
        raise ValueError("volume must be positive")
    return volume / (8 * math.pi**2)


def example51_envelope(l: float, p: float, t):  # noqa: E741
    """Five-case rate table for the degenerate diffusion on ``[0, 1]``."""
    if not l > 2:
        raise ValueError("need l > 2")
    if not p >= 2:
        raise ValueError("need p >= 2")
    t = _positive_t(t)
    lg = np.log(2 + t)
    crit = (13 - l) / 4
    if l <= 5:
        if l < 5 and p < crit:
            return _scalar(1.0 / t)
        if math.isclose(p, crit, rel_tol=0, abs_tol=1e-12):
            return _scalar(lg**3 / t)
        if p > crit:
            return _scalar((lg / t) ** (8.0 / (4 * p + l - 5)))
        raise ValueError(f"(l={l}, p={p}) outside the rate table")
    if p == 2:
        return _scalar(t ** (-4.0 / (l - 1)) * lg**2)
    return _scalar(t ** (-8.0 / (p * (l - 1))))


# ---------------------------------------------------------------------------
# heat kernel
# ---------------------------------------------------------------------------


def heat_kernel(basis: SpectralBasis, t: float, x, y):
    """Truncated ``p_t(x, y) = [1 +] Σ e^{-λ_i t} φ_i(x) φ_i(y)`` w.r.t. ``μ``.

    Raises when the first omitted term ``n_max e^{-λ_{n_max} t}`` is not below 1e-8.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    if basis.n_max * math.exp(-basis.next_eigenvalue * t) >= 1e-8:
        need = basis.n_max
        lam_next = basis.next_eigenvalue
        while need * math.exp(-lam_next * t) >= 1e-8:
            need *= 2
            lam_next = float(basis.lam_lower(np.array([float(need)]))[0])
        raise SpectralError(f"truncation too coarse for t={t}; need n_max of about {need}")
    weights = np.exp(-basis.eigenvalues * t)
    px = basis.evaluate(x)
    py = basis.evaluate(y)
    # closed/Neumann bases include φ_0 ≡ 1 with λ_0 = 0, which supplies the leading 1;
    # forming px * py first makes the result exactly symmetric in (x, y)
    return np.tensordot(weights, px * py, axes=(0, 0))


def dirichlet_survival(basis: SpectralBasis, t: float, start_coeffs: Sequence[float]) -> float:
    """``P^ν(τ > t) = Σ e^{-λ_i t} ν(φ_i) μ(φ_i)`` for a Dirichlet interval basis."""
    if basis.flavor != "dirichlet" or not isinstance(basis.space, Interval):
        raise SpectralError("dirichlet_survival needs a Dirichlet interval basis")
    nu = np.asarray(start_coeffs, dtype=float)[: basis.n_max]
    k = np.arange(1, nu.size + 1)
    # μ(φ_i) does not depend on the interval length
    mu = math.sqrt(2) * (1 - (-1.0) ** k) / (k * math.pi)
    return float(np.sum(np.exp(-basis.eigenvalues[: nu.size] * t) * nu * mu))
