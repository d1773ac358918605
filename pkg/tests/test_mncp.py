import numpy as np
import pytest

from ecpsim.contact import ContactUnknowns
from ecpsim.mncp import MixedNCP, NotConverged, SolveOptions, fb, fb_partials, residual_norm, solve
from ecpsim.oracles import surface_translation_step
from ecpsim.stepper import assemble_step, pack

from helpers import cube_on_ground


def lcp(M, q):
    M, q = np.asarray(M, dtype=float), np.asarray(q, dtype=float)
    return MixedNCP(0, len(q), lambda z: (np.zeros(0), M @ z + q), lambda z: M.copy())


def test_fb_values():
    assert fb(0.0, 0.0) == 0.0
    assert fb(3.0, 0.0) == 0.0 and fb(0.0, 5.0) == 0.0
    assert fb(2.0, 3.0) == pytest.approx(np.sqrt(13) - 5)
    assert fb(2.0, 3.0) == pytest.approx(-1.3944487, abs=1e-7)


def test_fb_partials_smooth_region():
    a, b = 0.7, -0.4
    da, db = fb_partials(a, b)
    assert da == pytest.approx((fb(a + 1e-7, b) - fb(a - 1e-7, b)) / 2e-7, abs=1e-7)
    assert db == pytest.approx((fb(a, b + 1e-7) - fb(a, b - 1e-7)) / 2e-7, abs=1e-7)


def test_fb_partials_at_kink_are_bounded():
    da, db = fb_partials(0.0, 0.0)
    assert np.hypot(da + 1, db + 1) == pytest.approx(1.0)


def test_inactive_scalar():
    z, report = solve(lcp([[1.0]], [-1.0]), [0.2])
    assert z[0] == pytest.approx(1.0, abs=1e-8) and report.converged


def test_boundary_scalar():
    z, _ = solve(lcp([[1.0]], [1.0]), [0.5])
    assert z[0] == pytest.approx(0.0, abs=1e-8)


def test_two_by_two_lcp():
    z, report = solve(lcp([[2, 1], [1, 2]], [-1, -1]), [0.0, 0.0])
    assert np.allclose(z, [1 / 3, 1 / 3], atol=1e-9)
    assert report.residual <= 1e-8


def test_two_by_two_lcp_by_enumeration():
    # independent: try every active set and keep the one satisfying all signs
    M, q = np.array([[2.0, 1], [1, 2]]), np.array([-1.0, -1])
    sols = []
    for mask in range(4):
        free = [i for i in range(2) if mask >> i & 1]
        z = np.zeros(2)
        if free:
            z[free] = np.linalg.solve(M[np.ix_(free, free)], -q[free])
        w = M @ z + q
        if np.all(z >= -1e-12) and np.all(w >= -1e-12):
            sols.append(z)
    assert len(sols) == 1 and np.allclose(sols[0], [1 / 3, 1 / 3])


def test_mixed_equation_and_complementarity():
    # x free with x - v = 0; 0 <= v ⟂ v - 2 + x >= 0  →  v = 1, x = 1
    prob = MixedNCP(1, 1, lambda z: (np.array([z[0] - z[1]]), np.array([z[1] - 2 + z[0]])))
    z, _ = solve(prob, [0.0, 0.0])
    assert np.allclose(z, [1.0, 1.0], atol=1e-8)


def test_residual_at_solution_and_continuity():
    prob = lcp([[2, 1], [1, 2]], [-1, -1])
    z = np.array([1 / 3, 1 / 3])
    assert residual_norm(prob, z) < 1e-14
    J = np.abs(prob.merit_jacobian(z)).max()
    for delta in (1e-3, 1e-5, 1e-7):
        grown = residual_norm(prob, z + [delta, 0])
        assert 0 < grown <= 2 * J * delta * np.sqrt(2)


def test_determinism():
    prob = lcp([[4, 1, 0], [1, 3, 1], [0, 1, 2]], [-1, 2, -3])
    z1, r1 = solve(prob, np.ones(3))
    z2, r2 = solve(prob, np.ones(3))
    assert np.array_equal(z1, z2) and r1.merit_history == r2.merit_history


def test_merit_descends_within_attempts():
    prob = lcp([[4, 1, 0], [1, 3, 1], [0, 1, 2]], [-1, 2, -3])
    _, report = solve(prob, 5 * np.ones(3))
    for history in report.attempts():
        assert all(b <= a for a, b in zip(history, history[1:]))


def test_not_converged_reports_best_iterate():
    # F(v) = -1 - v^2 < 0 always: no solution with v >= 0
    prob = MixedNCP(0, 1, lambda z: (np.zeros(0), np.array([-1.0 - z[0] ** 2])))
    with pytest.raises(NotConverged) as info:
        solve(prob, [1.0], SolveOptions(max_iterations=20, restarts=1))
    assert info.value.z.shape == (1,) and not info.value.report.converged


def test_bad_start_rejected():
    with pytest.raises(ValueError):
        solve(lcp([[1.0]], [1.0]), [np.nan])


def test_closed_form_first_step_is_a_solution():
    config = cube_on_ground(velocity=(4, 3, 0))
    world = config.world()
    sol = surface_translation_step(1.0, 9.8, 0.01, config.contacts[0].friction, (4, 3), None, (0, 0, 0.5))
    # sliding: σ equals the speed after the step when e = 1
    u = ContactUnknowns(sol.a2.copy(), sol.a2.copy(), np.zeros(6), np.array([1.0]), sol.p_n, sol.p_t, sol.p_o, 0.0,
                        float(np.linalg.norm(sol.v_next)), k1=5)
    nu = np.concatenate([sol.v_next, np.zeros(3)])
    problem = assemble_step(world, config.initial, None, config.params(), [5])
    assert residual_norm(problem, pack(world, [nu], [u])) <= 1e-10
