import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import jn_zeros

from kslab import steady
from kslab.grid import Domain, Field, build_grid
from kslab.motility import ks_algebraic, ks_exponential
from kslab.steady import (
    BRANCH_COLUMNS,
    NewtonError,
    SteadyProblem,
    continuation,
    exponential_residual,
    first_neumann_mode,
    local_residual,
    nonlocal_algebraic_residual,
    perturbed_guess,
    read_branch,
    rescale_to_nonlocal,
    resolved_cells,
    solve_local,
    solve_nonlocal_algebraic,
    solve_nonlocal_exponential,
    write_branch,
)

# scipy.integrate.solve_bvp on the continuous problems (tol 1e-10 for the
# interval, 1e-7 for the disc), frozen here
LOCAL_SPIKE = {  # k = 2: d -> (max w, min w, ∫w) on the unit interval
    0.05: (1.4868517762808422, 0.14654796205489184, 0.6751663455047904),
    0.08: (1.392936948964504, 0.44340035458780713, 0.8712848412186504),
}
DISC_PROFILES = {  # d = 1, R = 1: label -> (m̃, guess amplitude, ṽ at r = 0, 0.5, 1)
    "origin_peak": (1.5 * 8 * math.pi, 0.3, (13.851717889718818, 12.292487863022277, 11.473324652537318)),
    "wall_peak": (1.2 * math.pi * (1 + jn_zeros(1, 1)[0] ** 2), -0.3,
                  (17.87242410633808, 18.496338627601453, 19.273005762506997)),
}


def unit_interval(n):
    return build_grid(Domain.interval(1.0), n)


def disc(n):
    return build_grid(Domain.disc(1.0), n)


# -- constants ---------------------------------------------------------------


@pytest.mark.parametrize("k", [0.5, 1.0, 2.0, 3.5])
def test_local_constant_guess(k):
    g = unit_interval(30)
    w, it, res = steady._solve_local(k, 0.1, g, Field(g, 1.0), 1e-10, 50)
    assert it <= 2 and res <= 1e-12
    np.testing.assert_array_equal(w.data, 1.0)


@given(m_tilde=st.floats(1.0, 200.0), d=st.floats(0.05, 5.0), scale=st.floats(0.1, 3.0))
def test_exponential_constant_guess(m_tilde, d, scale):
    g = disc(20)
    sol = solve_nonlocal_exponential(m_tilde, d, g, Field(g, m_tilde / g.volume), scale=scale)
    assert sol.iterations <= 2 and sol.residual <= 1e-12
    assert sol.is_constant
    np.testing.assert_allclose(sol.v.data, m_tilde / g.volume / scale, rtol=1e-12)
    assert sol.mass == pytest.approx(m_tilde / scale, rel=1e-12)


@given(k=st.floats(0.2, 4.0), d=st.floats(0.01, 1.0), m=st.floats(0.1, 10.0))
def test_algebraic_constant(k, d, m):
    g = unit_interval(20)
    sol = solve_nonlocal_algebraic(k, d, m, g, Field(g, 1.0))
    assert sol.is_constant and sol.residual <= 1e-12
    assert sol.mass == pytest.approx(m, rel=1e-12)


# -- local problem -----------------------------------------------------------


def test_local_spike_below_threshold():
    g = unit_interval(100)
    w = solve_local(2.0, 0.05, g, perturbed_guess(g, 1.0))
    assert local_residual(w, 2.0, 0.05) <= 1e-10
    assert w.max() / w.min() > 1.5
    assert w.data[0] > w.data[-1]  # the peak follows the guess to the origin


@pytest.mark.parametrize("d", sorted(LOCAL_SPIKE))
def test_local_spike_against_bvp_oracle(d):
    wmax, wmin, mass = LOCAL_SPIKE[d]
    errors = []
    for n in (50, 100, 200):
        w = solve_local(2.0, d, unit_interval(n), perturbed_guess(unit_interval(n), 1.0))
        errors.append(abs(w.integral() - mass))
        assert w.max() == pytest.approx(wmax, abs=2e-3)
        assert w.min() == pytest.approx(wmin, abs=2e-3)
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
    assert all(1.8 < o < 2.2 for o in orders), orders


@pytest.mark.parametrize("k", [0.3, 0.5, 0.8, 1.0])
def test_sublinear_random_guesses_reach_constant(k):
    g = unit_interval(40)
    rng = np.random.default_rng(int(10 * k))
    for _ in range(50):
        guess = Field(g, np.exp(rng.normal(0.0, 0.7, g.shape)))
        w = solve_local(k, 0.02, g, guess)
        np.testing.assert_allclose(w.data, 1.0, rtol=1e-8)


def test_plain_newton_misses_spike_without_deflation():
    g = unit_interval(100)
    plain = solve_local(2.0, 0.05, g, perturbed_guess(g, 1.0), deflate=False)
    assert np.ptp(plain.data) < 1e-8


def test_local_rejects_bad_input():
    g = unit_interval(10)
    with pytest.raises(ValueError):
        solve_local(0.0, 0.1, g)
    with pytest.raises(ValueError):
        solve_local(2.0, -0.1, g)
    with pytest.raises(ValueError):
        solve_local(2.0, 0.1, g, Field(g, np.linspace(-1, 1, 10)))


def test_newton_error_carries_iterate():
    g = unit_interval(100)
    with pytest.raises(NewtonError) as info:
        solve_local(2.0, 0.05, g, perturbed_guess(g, 1.0), max_iter=1, deflate=False)
    assert info.value.iterate is not None and info.value.residual > 0


# -- scaling construction ------------------------------------------------------


def test_rescale_constant():
    g = unit_interval(16)
    sol = rescale_to_nonlocal(Field(g, 1.0), 2.0, 3.0, 0.1)
    np.testing.assert_allclose(sol.v.data, 3.0)
    assert sol.residual < 1e-14 and sol.mass == pytest.approx(3.0)


@pytest.fixture(scope="module")
def spike():
    g = unit_interval(100)
    return solve_local(2.0, 0.05, g, perturbed_guess(g, 1.0))


@pytest.mark.parametrize("factor", [0.3, 2.0, 7.0])
def test_rescale_spike(spike, factor):
    m0 = spike.integral()
    m = factor * m0
    sol = rescale_to_nonlocal(spike, 2.0, m, 0.05)
    assert sol.residual <= 1e-9
    assert nonlocal_algebraic_residual(sol.v, 2.0, m, 0.05) <= 1e-9
    # both sides of the scaling identity from the discrete fields
    lhs = (m0 / m) ** (2.0 - 1)
    rhs = m / float(np.sum(sol.v.grid.weights * sol.v.data**2))
    assert lhs == pytest.approx(rhs, rel=1e-8)
    assert sol.mass == pytest.approx(m, rel=1e-8)
    np.testing.assert_allclose(sol.v.data, factor * spike.data, rtol=1e-14)


def test_density_recovery_with_pair(spike):
    pair = ks_algebraic(1.5, 4.0, 0.5)  # k = (1 - alpha) lambda = 2
    m = 4.0
    sol = rescale_to_nonlocal(spike, 2.0, m, 0.05, pair)
    beta = pair.params["alpha"] - 1
    np.testing.assert_allclose(sol.u.data, sol.theta * pair.gamma(sol.v.data) ** beta, rtol=1e-10)
    assert sol.theta == pytest.approx(m / np.sum(spike.grid.weights * pair.gamma(sol.v.data) ** beta))


def test_rescale_rejects_k_one_and_non_solutions(spike):
    with pytest.raises(ValueError):
        rescale_to_nonlocal(spike, 1.0, 1.0, 0.05)
    with pytest.raises(ValueError):
        rescale_to_nonlocal(spike, 2.0, -1.0, 0.05)
    with pytest.raises(ValueError):
        rescale_to_nonlocal(spike * 1.01, 2.0, 1.0, 0.05)


def test_linear_nonlocal_case_is_constant():
    g = unit_interval(40)
    sol = solve_nonlocal_algebraic(1.0, 0.05, 2.0, g, perturbed_guess(g, 1.0))
    assert sol.is_constant and sol.mass == pytest.approx(2.0)


# -- exponential problem -------------------------------------------------------


def test_exponential_nonconstant_above_threshold():
    g = disc(100)
    mt = 1.2 * 8 * math.pi
    sol = solve_nonlocal_exponential(mt, 1.0, g, perturbed_guess(g, mt / g.volume))
    assert sol.residual <= 1e-10
    assert sol.amplitude > 1 + 1e-3
    assert exponential_residual(sol, mt, 1.0) <= 1e-10


def test_exponential_constant_below_threshold():
    g = disc(100)
    mt = 0.8 * 8 * math.pi
    sol = solve_nonlocal_exponential(mt, 1.0, g, perturbed_guess(g, mt / g.volume))
    assert sol.is_constant


@pytest.mark.parametrize("label", sorted(DISC_PROFILES))
def test_exponential_against_bvp_oracle(label):
    mt, amplitude, (at_origin, at_half, at_wall) = DISC_PROFILES[label]
    errors = []
    for n in (50, 100, 200):
        g = disc(n)
        v = solve_nonlocal_exponential(mt, 1.0, g, perturbed_guess(g, mt / g.volume, amplitude)).v.data
        # the profile is flat at both ends, so the end cells are O(h²) off the end values
        errors.append(max(
            abs(v[0] - at_origin),
            abs(0.5 * (v[n // 2 - 1] + v[n // 2]) - at_half),
            abs(v[-1] - at_wall),
        ))
    orders = [math.log2(errors[i] / errors[i + 1]) for i in range(2)]
    assert all(1.8 < o < 2.2 for o in orders), (errors, orders)
    assert errors[-1] < 1e-3


def test_exponential_scale_maps_back():
    g = disc(60)
    mt, scale = 1.3 * 8 * math.pi, 0.25
    a = solve_nonlocal_exponential(mt, 1.0, g, perturbed_guess(g, mt / g.volume))
    b = solve_nonlocal_exponential(mt, 1.0, g, perturbed_guess(g, mt / g.volume), scale=scale)
    np.testing.assert_allclose(b.v.data, a.v.data / scale, rtol=1e-10)
    assert b.mass == pytest.approx(mt / scale, rel=1e-10)
    # the density is m e^ṽ / ∫e^ṽ whatever the scale
    e = np.exp(a.v.data - a.v.max())
    np.testing.assert_allclose(b.u.data, (mt / scale) * e / np.sum(g.weights * e), rtol=1e-10)


def test_exponential_density_matches_pair():
    pair = ks_exponential(2.0, 0.5)
    g = disc(60)
    m = 1.25 * 8 * math.pi
    problem = SteadyProblem.from_pair(pair, 1.0, m, g)
    sol = solve_nonlocal_exponential(problem.m_tilde, 1.0, g, perturbed_guess(g, problem.m_tilde / g.volume),
                                     scale=problem.scale)
    beta = pair.params["alpha"] - 1
    np.testing.assert_allclose(sol.u.data, sol.theta * pair.gamma(sol.v.data) ** beta, rtol=1e-8)
    assert sol.mass == pytest.approx(m, rel=1e-10)


def test_exponential_needs_radial_grid():
    with pytest.raises(ValueError):
        solve_nonlocal_exponential(10.0, 1.0, unit_interval(10))
    with pytest.raises(ValueError):
        SteadyProblem("exponential_radial", 1.0, 1.0, unit_interval(10))


# -- problems, guesses, continuation -----------------------------------------------


def test_problem_from_pair():
    g = unit_interval(10)
    p = SteadyProblem.from_pair(ks_algebraic(1.0, 4.0, 0.5), 0.1, 2.0, g)
    assert p.kind == "algebraic" and p.k == pytest.approx(2.0) and p.parameter_name == "d"
    q = SteadyProblem.from_pair(ks_exponential(2.0, 0.25), 1.0, 3.0, disc(10))
    assert q.m_tilde == pytest.approx(4.5) and q.parameter_name == "m_tilde"
    with pytest.raises(ValueError):
        SteadyProblem("algebraic", 0.1, 1.0, g)
    with pytest.raises(ValueError):
        SteadyProblem("hyperbolic", 0.1, 1.0, g, k=2)
    with pytest.raises(ValueError):
        SteadyProblem("algebraic", -0.1, 1.0, g, k=2)


def test_first_mode_shapes():
    assert first_neumann_mode(disc(10)).data[0] == pytest.approx(1.0, abs=0.01)
    rect = build_grid(Domain.rectangle(1.0, 3.0), (4, 12))
    mode = first_neumann_mode(rect).data
    assert np.ptp(mode[:, 0]) == 0 and mode[0, 0] > 0 > mode[0, -1]


def test_continuation_algebraic_crossing():
    g = unit_interval(60)
    values = np.linspace(0.15, 0.05, 11)
    branch = continuation(SteadyProblem("algebraic", 0.1, 1.0, g, k=2.0), values)
    lo, hi = branch.threshold
    assert lo <= 1 / math.pi**2 <= hi
    amps = branch.amplitudes()
    assert np.all(amps[branch.parameters() > 0.11] < 1 + 1e-6)
    assert np.all(np.diff(amps[branch.parameters() < 0.1]) > 0)
    assert {p.converged_from for p in branch.points} <= {"previous_branch_point", "perturbed_guess", "constant_guess"}
    assert all(p.residual <= 1e-9 for p in branch.points)


def test_continuation_refines_crossing():
    g = unit_interval(60)
    branch = continuation(SteadyProblem("algebraic", 0.1, 1.0, g, k=2.0), [0.12, 0.09], refine=8)
    lo, hi = branch.threshold
    assert hi - lo < 0.03 / 2**7
    assert abs(0.5 * (lo + hi) - 1 / math.pi**2) < 2e-3


def test_continuation_flat_for_sublinear_k():
    g = unit_interval(40)
    branch = continuation(SteadyProblem("algebraic", 0.1, 1.0, g, k=0.8), np.linspace(0.5, 0.02, 8))
    assert branch.threshold is None
    np.testing.assert_allclose(branch.amplitudes(), 1.0, atol=1e-6)


def test_continuation_rejects_unresolved_spikes():
    g = disc(60)
    values = np.array([1.3, 1.1, 0.95, 0.8]) * 8 * math.pi
    branch = continuation(SteadyProblem("exponential_radial", 1.0, 1.0, g), values)
    assert all(resolved_cells(p.solution) >= 5 for p in branch.points)
    assert branch.points[0].nonconstant and not branch.points[-1].nonconstant
    assert branch.terminations


def test_continuation_validates_values():
    problem = SteadyProblem("algebraic", 0.1, 1.0, unit_interval(10), k=2.0)
    with pytest.raises(ValueError):
        continuation(problem, [0.1, 0.2, 0.15])
    with pytest.raises(ValueError):
        continuation(problem, [])


def test_continuation_first_point_failure(monkeypatch):
    def fail(*args, **kwargs):
        raise NewtonError("no convergence")

    monkeypatch.setattr(steady, "_solve_at", fail)
    with pytest.raises(NewtonError):
        continuation(SteadyProblem("algebraic", 0.1, 1.0, unit_interval(10), k=2.0), [0.1, 0.05])


def test_branch_csv_round_trip(tmp_path):
    g = unit_interval(30)
    branch = continuation(SteadyProblem("algebraic", 0.1, 1.0, g, k=2.0), [0.12, 0.08, 0.06])
    path = tmp_path / "branch.csv"
    write_branch(branch, path)
    assert path.read_text().splitlines()[0] == ",".join(BRANCH_COLUMNS)
    rows = read_branch(path)
    assert [r["parameter"] for r in rows] == pytest.approx([0.12, 0.08, 0.06])
    assert [r["amplitude"] for r in rows] == list(branch.amplitudes())
