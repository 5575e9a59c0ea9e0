import io
import math

import numpy as np
import pytest
from scipy import integrate, stats

from ergolab.diffusion_sim import (
    Dynamics,
    EmpiricalMeasure,
    SamplePath,
    StepSizeError,
    coarsen,
    dump_paths_csv,
    example51_coefficients,
    occupation_measure,
    replica_rng,
    simulate,
    simulate_example51,
    simulate_killed_bm,
    simulate_langevin_line,
    simulate_reflected_bm,
    simulate_wrapped_bm,
    subsample_coupling_bound,
    subsample_measure,
    time_grid,
)
from ergolab.model_spaces import Circle, ConfinedLine, DomainError, GibbsDensity, Interval, SineSquaredDensity, Torus
from ergolab.spectral_oracles import basis_for, dirichlet_survival
from ergolab.transport_engines import invariant_measure, wasserstein

PI = math.pi


def test_time_grid_partial_last_step():
    dt = time_grid(1.0, 0.3)
    np.testing.assert_allclose(dt, [0.3, 0.3, 0.3, 0.1])
    assert math.fsum(dt) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        time_grid(0.01, 0.1)


def test_replica_streams_deterministic_and_distinct():
    a = replica_rng(1, 5).standard_normal(8)
    b = replica_rng(1, 5).standard_normal(8)
    c = replica_rng(1, 6).standard_normal(8)
    d = replica_rng(1, 5, stream=1).standard_normal(8)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    assert not np.allclose(a, d)


def test_wrapped_bm_one_step_variance():
    h = 1e-3
    n = 100_000
    # one step from x0 = π: the increment is N(0, 2h) and never wraps at this scale
    x = np.array([simulate_wrapped_bm(Circle(), PI, h, h, replica_rng(5, r)).states[-1] - PI for r in range(n)])
    se = math.sqrt(2.0) * 2 * h / math.sqrt(n)
    assert abs(x.var() - 2 * h) < 3 * se


def test_wrapped_bm_zero_noise_constant():
    p = simulate_wrapped_bm(Circle(), 1.0, 5.0, 0.01, replica_rng(1, 0), noise_scale=0.0)
    assert np.all(p.states == 1.0)
    p = simulate(Torus(2), Dynamics("bm", noise_scale=0.0), [1.0, 2.0], 1.0, 0.01, replica_rng(1, 0))
    assert np.all(p.states == np.array([1.0, 2.0]))


def test_wrapped_bm_half_circle_occupation():
    vals = []
    for r in range(20):
        p = simulate_wrapped_bm(Circle(), 0.0, 200.0, 1e-2, replica_rng(6, r))
        vals.append(occupation_measure(p).expect(lambda x: (x < PI).astype(float)))
    vals = np.array(vals)
    assert abs(vals.mean() - 0.5) < 3 * vals.std(ddof=1) / math.sqrt(vals.size) + 1e-3


def test_wrapped_bm_stationary_marginal_uniform():
    ends = [simulate_wrapped_bm(Circle(), 0.0, 5.0, 1e-2, replica_rng(7, r)).states[-1] for r in range(2000)]
    assert stats.kstest(np.array(ends) / (2 * PI), "uniform").pvalue > 0.01


def test_torus_paths_in_domain():
    p = simulate_wrapped_bm(Torus(2), None, 10.0, 1e-2, replica_rng(8, 0))
    assert p.states.shape == (1001, 2)
    assert np.all((p.states >= 0) & (p.states < 2 * PI))


def test_reflected_bm_stays_in_interval_and_uniform():
    sp = Interval(1.0)
    ends = []
    for r in range(1500):
        p = simulate_reflected_bm(sp, 0.9, 2.0, 1e-2, replica_rng(9, r))
        assert np.all((p.states >= 0) & (p.states <= 1.0))
        ends.append(p.states[-1])
    assert stats.kstest(ends, "uniform").pvalue > 0.01


def test_reflected_bm_one_step_mean_zero():
    h = 1e-3
    disp = np.array([simulate_reflected_bm(Interval(PI), PI / 2, h, h, replica_rng(10, r)).states[-1] - PI / 2
                     for r in range(20_000)])
    assert abs(disp.mean()) < 3 * disp.std() / math.sqrt(disp.size)


def test_reflected_bm_quarter_occupation():
    vals = []
    for r in range(20):
        p = simulate_reflected_bm(Interval(PI), None, 500.0, 1e-2, replica_rng(11, r))
        vals.append(occupation_measure(p).expect(lambda x: (x <= PI / 4).astype(float)))
    vals = np.array(vals)
    assert abs(vals.mean() - 0.25) < 3 * vals.std(ddof=1) / math.sqrt(vals.size)


def test_killed_bm_start_on_boundary_rejected():
    with pytest.raises(DomainError):
        simulate_killed_bm(Interval(PI, "dirichlet"), 0.0, 1.0, 1e-3, replica_rng(1, 0))


def test_killed_bm_states_before_kill_are_interior():
    sp = Interval(PI, "dirichlet")
    for r in range(200):
        p = simulate_killed_bm(sp, 0.3, 3.0, 1e-3, replica_rng(12, r))
        assert np.all((p.states > 0) & (p.states < PI))
        if not p.survived:
            assert p.lifetime <= 3.0
            assert len(p) == int(round(p.lifetime / 1e-3))


def test_killed_bm_survival_at_t2_matches_series():
    sp = Interval(PI, "dirichlet")
    n = 20_000
    dens = SineSquaredDensity(PI)
    alive = 0
    for r in range(n):
        rng = replica_rng(13, r)
        alive += simulate_killed_bm(sp, float(dens.sample(rng)), 2.0, 1e-3, rng).survived
    p_hat = alive / n
    b = basis_for(sp, 64)
    k = np.arange(1, 65)
    odd = k % 2 == 1
    nu = np.where(odd, math.sqrt(2) / PI * (2 / k - 1 / (k + 2) - 1 / np.where(odd, k - 2, 1)), 0.0)
    p_series = dirichlet_survival(b, 2.0, nu)
    assert abs(p_hat / p_series - 1) < 0.05


def test_killed_bm_near_boundary_start_dies_fast():
    sp = Interval(PI, "dirichlet")
    surv = [np.mean([simulate_killed_bm(sp, x0, 0.5, 1e-3, replica_rng(14, r)).survived for r in range(400)])
            for x0 in (PI / 2, 0.1, 0.01, 1e-4)]
    assert surv[0] > surv[1] > surv[2] > surv[3]
    assert surv[3] < 0.01


def _survivor_states(t, n_survivors, seed):
    sp = Interval(PI, "dirichlet")
    dens = SineSquaredDensity(PI)
    h = 2e-3
    mids, ends = [], []
    r = 0
    while len(ends) < n_survivors:
        rng = replica_rng(seed, r)
        p = simulate_killed_bm(sp, float(dens.sample(rng)), t, h, rng)
        if p.survived:
            mids.append(p.states[int(round(t / 2 / h))])
            ends.append(p.states[-1])
        r += 1
    return np.array(mids), np.array(ends)


def test_killed_bm_conditional_marginals():
    mids, ends = _survivor_states(2.0, 10_000, 15)
    # mid-path states of survivors follow μ_0 = φ_0² dμ
    assert stats.kstest(mids, SineSquaredDensity(PI).cdf).pvalue > 0.01
    # the endpoint law of survivors is the Yaglom limit φ_0 dμ / μ(φ_0), the half-sine law
    half_sine = lambda x: (1 - np.cos(np.asarray(x))) / 2  # noqa: E731
    assert stats.kstest(ends, half_sine).pvalue > 0.01


def test_langevin_variance_matches_quadrature():
    sp = ConfinedLine(1.0, 1.0)
    g = GibbsDensity(1.0, 1.0)
    var_q = integrate.quad(lambda x: x * x * g.pdf(x), -20, 20)[0]
    x = np.array([simulate_langevin_line(sp, None, 2.0, 1e-3, replica_rng(16, r)).states[-1] for r in range(4000)])
    v = x.var(ddof=1)
    se = math.sqrt(np.mean((x - x.mean()) ** 4) - v * v) / math.sqrt(x.size)
    assert abs(v - var_q) < 3 * se
    assert var_q == pytest.approx(g.variance, rel=1e-6)


def test_langevin_stationary_ks_after_burn_in():
    sp = ConfinedLine(1.0, 1.0)
    ends = [simulate_langevin_line(sp, 2.0, 1.0, 1e-3, replica_rng(17, r)).states[-1] for r in range(1000)]
    assert stats.kstest(ends, GibbsDensity(1.0, 1.0).cdf).pvalue > 0.01


def test_langevin_zero_noise_critical_point_and_drift_sign():
    sp = ConfinedLine(1.0, 1.0)
    p = simulate_langevin_line(sp, 0.0, 1.0, 1e-3, replica_rng(1, 0), noise_scale=0.0)
    assert np.all(p.states == 0.0)
    steps = [simulate_langevin_line(sp, 3.0, 1e-3, 1e-3, replica_rng(18, r), burn_in=0).states[-1] - 3.0
             for r in range(2000)]
    assert np.mean(steps) < 0


def test_langevin_step_size_guard():
    with pytest.raises(StepSizeError):
        simulate_langevin_line(ConfinedLine(1.0, 3.0), 0.0, 1.0, 0.5, replica_rng(1, 0))


def test_example51_coefficient_at_midpoint():
    _, sigma = example51_coefficients(0.5, 3)
    assert float(sigma) == pytest.approx(math.sqrt(2) / 8)
    drift, _ = example51_coefficients(0.5, 3)
    assert float(drift) == 0.0


def test_example51_symmetry_mean_half():
    ends = np.array([simulate_example51(3, 0.5, 2.0, 1e-3, replica_rng(19, r)).states[-1] for r in range(1000)])
    assert abs(ends.mean() - 0.5) < 3 * ends.std() / math.sqrt(ends.size)


def test_example51_uniform_invariant_ks_5pct():
    ends = [simulate_example51(3, None, 1.0, 1e-3, replica_rng(20, r)).states[-1] for r in range(2000)]
    assert stats.kstest(ends, "uniform").pvalue > 0.05


def test_example51_sticky_boundary_occupation():
    # started near the boundary, the degenerate diffusion lingers there
    occ = [occupation_measure(simulate_example51(3, 0.02, 100.0, 1e-3, replica_rng(21, r)))
           .expect(lambda x: (x <= 0.05).astype(float)) for r in range(10)]
    assert np.mean(occ) > 0.05


def test_example51_states_clamped():
    p = simulate_example51(4, 0.001, 5.0, 1e-2, replica_rng(22, 0))
    assert np.all((p.states >= 1e-4) & (p.states <= 1 - 1e-4))
    with pytest.raises(DomainError):
        simulate_example51(3, 1.0, 1.0, 1e-3, replica_rng(1, 0))


def test_simulate_dispatch():
    for space, dyn in [(Circle(), Dynamics()), (Interval(), Dynamics()), (Interval(1.0, "dirichlet"), Dynamics()),
                       (ConfinedLine(), Dynamics("langevin")), (Interval(1.0), Dynamics("example51"))]:
        x0 = 0.5 if space.kind != "confined_line" else None
        p = simulate(space, dyn, x0, 0.1, 1e-3, replica_rng(1, 0))
        assert isinstance(p, SamplePath)
    with pytest.raises(TypeError):
        simulate(ConfinedLine(), Dynamics("bm"), 0.0, 0.1, 1e-3, replica_rng(1, 0))


@pytest.mark.parametrize("space,dyn,x0", [(Circle(), Dynamics(), None), (Torus(2), Dynamics(), None),
                                          (Interval(), Dynamics(), None),
                                          (Interval(PI, "dirichlet"), Dynamics(), 1.0),
                                          (ConfinedLine(), Dynamics("langevin"), None)])
def test_bitwise_determinism(space, dyn, x0):
    a = simulate(space, dyn, x0, 2.0, 1e-3, replica_rng(99, 3))
    b = simulate(space, dyn, x0, 2.0, 1e-3, replica_rng(99, 3))
    assert a.states.tobytes() == b.states.tobytes()
    assert a.lifetime == b.lifetime


def test_occupation_measure_weights():
    sp = Circle()
    p = SamplePath(sp, 0.5, 1.0, np.array([1.0, 2.0, 3.0]))
    m = occupation_measure(p)
    np.testing.assert_allclose(m.atoms, [1.0, 2.0])
    np.testing.assert_allclose(m.weights, [0.5, 0.5])
    const = SamplePath(sp, 0.1, 1.0, np.full(11, 2.0))
    m = occupation_measure(const)
    assert len(m) == 1 and m.weights[0] == pytest.approx(1.0)
    partial = SamplePath(sp, 0.4, 1.0, np.array([1.0, 2.0, 3.0, 4.0]))
    np.testing.assert_allclose(occupation_measure(partial).weights, [0.4, 0.4, 0.2])
    with pytest.raises(ValueError):
        occupation_measure(SamplePath(sp, 0.1, 0.1, np.array([1.0])))


def test_occupation_weights_sum_to_one():
    p = simulate_wrapped_bm(Circle(), None, 3.7, 1e-3, replica_rng(2, 0))
    assert abs(occupation_measure(p).weights.sum() - 1) < 1e-12


def test_killed_occupation_renormalized():
    sp = Interval(PI, "dirichlet")
    for r in range(50):
        p = simulate_killed_bm(sp, 0.05, 1.0, 1e-3, replica_rng(23, r))
        if not p.survived and len(p):
            m = occupation_measure(p)
            assert abs(m.weights.sum() - 1) < 1e-12
            assert m.horizon == p.lifetime
            return
    pytest.fail("no killed path found")


def test_empirical_measure_merges_and_validates():
    m = EmpiricalMeasure(Circle(), [1.0, 0.5, 1.0], [1, 1, 2])
    np.testing.assert_allclose(m.atoms, [0.5, 1.0])
    np.testing.assert_allclose(m.weights, [0.25, 0.75])
    t = EmpiricalMeasure(Torus(2), [[0.1, 0.2], [0.1, 0.2], [1.0, 1.0]])
    assert len(t) == 2
    with pytest.raises(ValueError):
        EmpiricalMeasure(Circle(), [])
    with pytest.raises(ValueError):
        EmpiricalMeasure(Circle(), [1.0], [-1.0])
    with pytest.raises(DomainError):
        EmpiricalMeasure(Interval(1.0), [2.0])


def test_subsample_measure():
    p = simulate_wrapped_bm(Circle(), None, 1.0, 1e-3, replica_rng(24, 0))
    one = subsample_measure(p, 1)
    assert len(one) == 1 and one.atoms[0] == p.states[-1]
    full = subsample_measure(p, 1000)
    occ = occupation_measure(p)
    # the full grid drops X_0 and adds X_t
    assert len(full) == 1000
    np.testing.assert_allclose(np.sort(full.atoms), np.sort(np.append(p.states[1:-1], p.states[-1])))
    assert wasserstein(full, occ, 1).value <= 2 * PI / 1000 + float(np.abs(p.states[-1] - p.states[0]))
    with pytest.raises(ValueError):
        subsample_measure(p, 7)


def test_subsample_w1_below_max_step():
    for r in range(10):
        p = simulate_wrapped_bm(Circle(), None, 2.0, 1e-3, replica_rng(25, r))
        sub = subsample_measure(p, 1)
        occ = occupation_measure(p)
        w1 = wasserstein(sub, occ, 1).value
        bound = subsample_coupling_bound(p, 1, 1.0)
        assert w1 <= bound * (1 + 1e-9) + 1e-12
        for N in (10, 100):
            assert wasserstein(subsample_measure(p, N), occ, 1).value <= subsample_coupling_bound(p, N, 1) + 1e-12


def test_discretization_refinement_order_sqrt_h():
    # frozen Brownian path: the h-path is a subsample of a finer path
    space = Circle()
    ref = invariant_measure(space)
    fine_h = 1e-4
    diffs = {1e-3: [], 4e-3: []}
    for r in range(10):
        p = simulate_wrapped_bm(space, None, 20.0, fine_h, replica_rng(26, r))
        w_ref = wasserstein(occupation_measure(p), ref, 2).value
        for h in diffs:
            w = wasserstein(occupation_measure(coarsen(p, int(round(h / fine_h)))), ref, 2).value
            diffs[h].append(abs(w - w_ref))
    d1, d4 = np.mean(diffs[1e-3]), np.mean(diffs[4e-3])
    assert d1 < 3 * math.sqrt(1e-3)
    assert d4 < 3 * math.sqrt(4e-3)


def test_coarsen_and_dump():
    p = simulate_wrapped_bm(Circle(), 0.0, 0.01, 1e-3, replica_rng(27, 0))
    c = coarsen(p, 2)
    assert c.h == 2e-3 and len(c) == 6
    np.testing.assert_array_equal(c.states, p.states[::2])
    buf = io.StringIO()
    dump_paths_csv([p, c], buf, [0, 1])
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "replica,time,state0"
    assert len(lines) == 1 + len(p) + len(c)
