import math

import numpy as np
import pytest

from ergolab.model_spaces import Circle, Interval, Torus
from ergolab.spectral_oracles import (
    SpectralError,
    basis_for,
    eigenpair,
    example51_envelope,
    gamma_d,
    heat_kernel,
    limit_t1,
    limit_t2,
    limit_t4,
    limit_t6_d4,
    rate_t5,
    synthetic_basis,
    variance_vf,
    xi_k,
)

PI = math.pi
DIRICHLET = Interval(PI, "dirichlet")


def _gram(space, basis, n_quad, count=26):
    if isinstance(space, Torus):
        g = (np.arange(n_quad) + 0.5) * space.side / n_quad
        pts = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1)
        phi = basis.evaluate(pts, np.arange(count)).reshape(count, -1)
    else:
        ext = space.circumference if isinstance(space, Circle) else space.length
        x = (np.arange(n_quad) + 0.5) * ext / n_quad
        phi = basis.evaluate(x, np.arange(count))
    return phi @ phi.T / phi.shape[1]


@pytest.mark.parametrize("space,n_quad", [(Circle(), 4096), (Interval(PI), 4096), (DIRICHLET, 4096),
                                          (Torus(2), 128)])
def test_orthonormality(space, n_quad):
    g = _gram(space, basis_for(space, 64), n_quad)
    assert np.max(np.abs(g - np.eye(g.shape[0]))) < 1e-8


def test_ground_states():
    lam, phi = eigenpair(basis_for(Circle()), 0)
    assert lam == 0.0
    np.testing.assert_allclose(phi(np.linspace(0, 6, 7)), 1.0)
    lam, phi = eigenpair(basis_for(DIRICHLET), 0)
    x = np.linspace(0.1, 3.0, 7)
    assert lam == 1.0
    np.testing.assert_allclose(phi(x), math.sqrt(2) * np.sin(x), atol=1e-15)


def test_circle_first_mode_is_cosine():
    lam, phi = eigenpair(basis_for(Circle()), 1)
    x = np.linspace(0, 6, 13)
    assert lam == 1.0
    np.testing.assert_allclose(phi(x), math.sqrt(2) * np.cos(x), atol=1e-15)
    lam2, phi2 = eigenpair(basis_for(Circle()), 2)
    assert lam2 == 1.0
    np.testing.assert_allclose(phi2(x), math.sqrt(2) * np.sin(x), atol=1e-15)


def test_eigenpair_beyond_truncation():
    with pytest.raises(SpectralError):
        eigenpair(basis_for(Circle(), 8), 8)


@pytest.mark.parametrize("space", [Circle(), Interval(PI), DIRICHLET, Torus(2), Torus(3)])
def test_eigenvalue_growth_sandwich(space):
    b = basis_for(space, 256)
    c1, kappa = b.growth
    i = np.arange(1, b.n_max)
    lam = b.eigenvalues[1:]
    s = i ** (2.0 / b.dimension)
    assert np.all(lam >= c1 * s * (1 - 1e-12))
    assert np.all(lam <= kappa * s * (1 + 1e-12))
    assert np.all(np.diff(b.eigenvalues) >= 0)
    assert np.all(b.lam_lower(np.arange(b.n_max, 4 * b.n_max)) <= b.next_eigenvalue * (
        np.arange(b.n_max, 4 * b.n_max) / b.n_max) ** (2.0 / b.dimension) + 1e-9)


def test_circle_eigenvalues_explicit():
    lam = basis_for(Circle(), 101).eigenvalues
    i = np.arange(101)
    np.testing.assert_array_equal(lam, np.ceil(i / 2) ** 2)


def test_limit_t4_circle_against_direct_sum():
    val = limit_t4(basis_for(Circle()))
    k = np.arange(1, 10**6 + 1, dtype=float)
    direct = math.fsum((4.0 / k**4).tolist())
    assert val.lower <= direct <= val.upper
    assert direct == pytest.approx(2 * PI**4 / 45, rel=1e-12)
    assert val.upper - val.lower < 1e-5


def test_limit_t4_neumann():
    val = limit_t4(basis_for(Interval(PI)))
    assert val.lower <= PI**4 / 45 <= val.upper


def test_limit_t4_single_mode():
    val = limit_t4(synthetic_basis([0.0, 2.0]))
    assert val.value == pytest.approx(0.5)
    assert val.tail_bound >= 0


def test_limit_t4_errors():
    with pytest.raises(SpectralError):
        limit_t4(basis_for(DIRICHLET))
    with pytest.raises(SpectralError):
        limit_t4(synthetic_basis([0.0, 1.0, 1.0], dimension=4))


def test_limit_t4_z_correction_slot():
    b = synthetic_basis([0.0, 1.0, 4.0])
    assert limit_t4(b, [0.0, 0.0]).value == limit_t4(b).value
    assert limit_t4(b, [0.5]).value == pytest.approx(2 * 0.5 + 2 / 16)


def test_limit_t2_dirichlet_against_direct_sum():
    val = limit_t2(basis_for(DIRICHLET))
    k = np.arange(2, 10**6 + 1, dtype=float)
    direct = math.fsum((2.0 / (k * k - 1) ** 2).tolist())
    assert direct == pytest.approx(PI**2 / 6 - 11 / 8, rel=1e-12)
    assert val.lower <= direct <= val.upper


def test_limit_t2_one_term_and_monotone():
    val = limit_t2(synthetic_basis([1.0, 3.0], flavor="dirichlet"))
    assert val.value == pytest.approx(0.5)
    prev = 0.0
    for n in (2, 4, 8, 16, 64, 256):
        v = limit_t2(basis_for(DIRICHLET, n))
        assert v.value >= prev
        assert v.upper >= PI**2 / 6 - 11 / 8
        prev = v.value
    with pytest.raises(SpectralError):
        limit_t2(basis_for(Circle()))


def test_limit_t4_monotone_in_truncation():
    prev = 0.0
    for n in (2, 3, 9, 33, 129, 257):
        v = limit_t4(basis_for(Circle(), n))
        assert v.value >= prev
        assert v.lower <= 2 * PI**4 / 45 <= v.upper
        prev = v.value


def _mu0_coefficients(n):
    """Closed-form ``ν(φ_k)`` for ``ν = μ_0`` and ``μ(φ_k)`` on ``(0, π)``, ``k = 1..n``."""
    k = np.arange(1, n + 1, dtype=float)
    mu = math.sqrt(2) * (1 - (-1.0) ** k) / (k * PI)
    odd = k % 2 == 1
    nu = np.where(odd, math.sqrt(2) / PI * (2 / k - 1 / (k + 2) - 1 / np.where(odd, k - 2, 1.0)), 0.0)
    return nu, mu


def test_limit_t1_against_quadrature_oracle():
    b = basis_for(DIRICHLET, 256)
    nu, mu = _mu0_coefficients(256)
    # independent 1e4-point midpoint quadrature of the coefficients
    x = (np.arange(10_000) + 0.5) * PI / 10_000
    nu_q = np.array([np.mean(math.sqrt(2) * np.sin(k * x) * 2 * np.sin(x) ** 2) for k in range(1, 21)])
    np.testing.assert_allclose(nu[:20], nu_q, atol=1e-9)
    val = limit_t1(b, nu, mu).value
    # oracle: 1e5-term summation with closed-form coefficients
    nu_o, mu_o = _mu0_coefficients(100_000)
    lam = np.arange(1, 100_001, dtype=float) ** 2
    num = (nu_o[0] * mu_o[1:] + mu_o[0] * nu_o[1:]) ** 2
    oracle = math.fsum((num / (lam[1:] - 1) ** 3).tolist()) / (mu_o[0] * nu_o[0]) ** 2
    assert val > 0
    assert val == pytest.approx(oracle, rel=1e-6)


def test_limit_t1_trivial_and_homogeneous():
    b = basis_for(DIRICHLET, 16)
    nu = np.zeros(16)
    mu = np.zeros(16)
    nu[0] = mu[0] = 1.0
    assert limit_t1(b, nu, mu).value == 0.0
    nu2, mu2 = _mu0_coefficients(16)
    base = limit_t1(b, nu2, mu2).value
    s = 1.7
    nu3, mu3 = nu2.copy(), mu2.copy()
    nu3[1:] *= s
    mu3[1:] *= s
    assert limit_t1(b, nu3, mu3).value == pytest.approx(s * s * base, rel=1e-12)
    bad = nu2.copy()
    bad[0] = 0.0
    with pytest.raises(SpectralError):
        limit_t1(b, bad, mu2)


def test_variance_vf_examples():
    b = basis_for(Circle(), 16)
    assert variance_vf(b, [0, 1]) == pytest.approx(1.0)
    assert variance_vf(b, [3.0]) == 0.0
    # φ_1 + φ_3: modes 1 and 3 have eigenvalues 1 and 4
    assert variance_vf(b, [0, 1, 0, 1]) == pytest.approx(1.25)


def test_xi_k_examples():
    assert xi_k(0.5, 100) == pytest.approx(0.01)
    assert xi_k(1, math.e) == pytest.approx(math.exp(-1))
    assert xi_k(1.5, 1024) == pytest.approx(0.03125)
    with pytest.raises(ValueError):
        xi_k(1, 1.0)


def test_gamma_d_examples():
    assert gamma_d(1, 100) == pytest.approx(0.1)
    assert gamma_d(4, math.e) == pytest.approx(math.exp(-0.5))
    assert gamma_d(6, 16) == pytest.approx(0.5)


def test_rate_t5_examples():
    assert rate_t5(3, 50) == pytest.approx(0.02)
    assert rate_t5(5, 8) == pytest.approx(0.25)
    assert rate_t5(4, math.e - 1) == pytest.approx(1 / (math.e - 1))
    assert rate_t5(4, math.e - 1) == pytest.approx(0.582, abs=5e-4)


def test_limit_t6_d4_examples():
    assert limit_t6_d4(8 * PI**2) == pytest.approx(1.0)
    assert limit_t6_d4((2 * PI) ** 4) == pytest.approx(2 * PI**2)
    with pytest.raises(ValueError):
        limit_t6_d4(0.0)


def test_example51_envelope_cases():
    assert example51_envelope(3, 2, 10) == pytest.approx(0.1)
    assert example51_envelope(6, 2, math.e - 2) == pytest.approx((math.e - 2) ** -0.8)
    # the quoted value 1.29 is a rounded figure; the exact one is 1.3031
    assert example51_envelope(6, 2, math.e - 2) == pytest.approx(1.29, rel=0.02)
    assert example51_envelope(6, 4, 16) == pytest.approx(16**-0.4)
    t = 10.0
    lg = math.log(2 + t)
    assert example51_envelope(3, 2.5, t) == pytest.approx(lg**3 / t)
    assert example51_envelope(3, 3, t) == pytest.approx((lg / t) ** (8 / (12 + 3 - 5)))
    with pytest.raises(ValueError):
        example51_envelope(2, 2, t)
    with pytest.raises(ValueError):
        example51_envelope(3, 1.5, t)


def test_envelopes_nonincreasing():
    t = np.linspace(3, 5000, 4000)
    series = [xi_k(0.5, t), xi_k(2.0, t), gamma_d(2, t), gamma_d(4, t), gamma_d(7, t),
              rate_t5(1, t), rate_t5(4, t), rate_t5(6, t)]
    for l, p in [(3, 2), (3, 4), (4, 2), (5, 3), (6, 2), (6, 5)]:
        series.append(example51_envelope(l, p, t))
    for s in series:
        assert np.all(np.diff(s) <= 1e-15)


def test_log_envelopes_rise_before_their_peak():
    # log^2 t / t peaks at t = e^2 and log^3(2+t)/t where 3t = (2+t) log(2+t)
    t = np.linspace(3, 5000, 40000)
    k1 = xi_k(1.0, t)
    assert np.argmax(k1) == pytest.approx(np.searchsorted(t, math.e**2), abs=1)
    assert np.all(np.diff(k1[t > math.e**2]) <= 0)
    c = example51_envelope(3, 2.5, t)
    from scipy.optimize import brentq

    peak = brentq(lambda s: 3 * s - (2 + s) * math.log(2 + s), 3, 100)
    assert np.all(np.diff(c[t > peak]) <= 0)
    assert np.all(np.diff(c[t < peak]) >= 0)


def test_heat_kernel_symmetry_and_limit():
    b = basis_for(Circle(), 64)
    x = np.linspace(0, 6, 9)
    y = np.linspace(0.3, 6.2, 9)
    np.testing.assert_array_equal(heat_kernel(b, 0.5, x, y), heat_kernel(b, 0.5, y, x))
    np.testing.assert_allclose(heat_kernel(b, 40.0, x, y), 1.0, atol=1e-15)


def test_heat_kernel_normalized():
    for space in (Circle(), Interval(PI)):
        b = basis_for(space, 64)
        ext = 2 * PI if isinstance(space, Circle) else PI
        z = (np.arange(4096) + 0.5) * ext / 4096
        for x in (0.2, 1.9):
            assert abs(np.mean(heat_kernel(b, 0.3, np.full_like(z, x), z)) - 1) < 1e-6


def test_heat_kernel_chapman_kolmogorov():
    b = basis_for(Circle(), 64)
    z = (np.arange(4096) + 0.5) * 2 * PI / 4096
    s, t = 0.2, 0.35
    for x, y in [(0.1, 2.0), (3.0, 3.1), (5.5, 0.4)]:
        lhs = np.mean(heat_kernel(b, s, np.full_like(z, x), z) * heat_kernel(b, t, z, np.full_like(z, y)))
        assert abs(lhs - heat_kernel(b, s + t, x, y)) < 1e-6


def test_heat_kernel_truncation_error():
    with pytest.raises(SpectralError, match="n_max"):
        heat_kernel(basis_for(Circle(), 8), 0.01, 0.0, 0.0)


def test_heat_kernel_dirichlet_survival_matches_quadrature():
    # P(τ > t) from μ_0 via the kernel against the coefficient series
    from ergolab.spectral_oracles import dirichlet_survival

    b = basis_for(DIRICHLET, 64)
    z = (np.arange(2048) + 0.5) * PI / 2048
    t = 2.0
    dens = 2 * np.sin(z) ** 2
    surv_kernel = np.mean([np.mean(heat_kernel(b, t, np.full_like(z, x), z)) * d for x, d in zip(z, dens)])
    nu, _ = _mu0_coefficients(64)
    assert dirichlet_survival(b, t, nu) == pytest.approx(surv_kernel, rel=1e-5)


def test_limit_law_mean_matches_limit_t4():
    b = basis_for(Circle(), 257)
    lam = b.eigenvalues[1:]
    # E[Σ 2ξ²/λ²] = Σ 2/λ²
    assert math.fsum((2 / lam**2).tolist()) == pytest.approx(limit_t4(b).value)


def test_basis_summary_json_ready():
    import json

    s = basis_for(Circle(), 16).summary()
    json.dumps(s)
    assert s["limit_t4"]["lower"] <= 2 * PI**4 / 45 <= s["limit_t4"]["upper"]
    assert "limit_t2" in basis_for(DIRICHLET, 16).summary()
