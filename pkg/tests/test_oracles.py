import numpy as np
import pytest

from ecpsim.contact import FrictionParams
from ecpsim.oracles import (
    IncompatibleImpulse,
    LineContactCoords,
    StickingRegime,
    heading_rotation,
    line_coords,
    line_rotation_step,
    line_translation_step,
    surface_rotation_step,
    surface_translation_step,
)
from ecpsim.stepper import AppliedImpulse

FP = FrictionParams(0.12)


def test_surface_translation_first_step():
    sol = surface_translation_step(1.0, 9.8, 0.01, FP, (4, 3))
    assert sol.p_n == pytest.approx(0.098)
    assert sol.sigma_prime == pytest.approx(5.0)
    assert (sol.p_t, sol.p_o, sol.p_r) == pytest.approx((-0.009408, -0.007056, 0.0), abs=1e-15)
    assert sol.v_next[:2] == pytest.approx([3.990592, 2.992944], abs=1e-15)


def test_surface_translation_at_rest_sticks():
    with pytest.raises(StickingRegime):
        surface_translation_step(1.0, 9.8, 0.01, FP, (0, 0))


def test_surface_translation_incompatible_moment():
    with pytest.raises(IncompatibleImpulse):
        surface_translation_step(1.0, 9.8, 0.01, FP, (4, 3), AppliedImpulse(p_zt=1.0))


def test_ecp_from_moment_balance():
    # Friction at the ground pitches the cube forward; the pressure centre moves ahead of the CM:
    # p_n (a - q) = -p_t q_z about the CM, so a leads the CM along the slide.
    q = np.array([0.0, 0.0, 0.5])
    sol = surface_translation_step(1.0, 9.8, 0.01, FP, (4, 3), None, q)
    centre = q[:2] + 0.01 * sol.v_next[:2]
    assert sol.a2[:2] == pytest.approx(centre - np.array([sol.p_t, sol.p_o]) * 0.5 / sol.p_n)
    assert np.dot(sol.a2[:2] - centre, [4, 3]) > 0


def test_sliding_ellipsoid_slack_vanishes():
    sol = surface_translation_step(1.0, 9.8, 0.01, FrictionParams(0.3, 2.0, 2.0, 1.0), (1.5, -0.5))
    zeta = (0.3 * sol.p_n) ** 2 - (sol.p_t / 2) ** 2 - (sol.p_o / 2) ** 2
    assert zeta == pytest.approx(0.0, abs=1e-15)


def test_surface_rotation_unit_cube():
    sol = surface_rotation_step(1.0, 9.8, 0.01, 1 / 6, FP, 1.0)
    assert sol.p_n == pytest.approx(0.098) and sol.sigma_prime == pytest.approx(1.0)
    # independent: a sliding spin loses exactly e_r·μ·p_n of angular momentum
    assert sol.p_r == pytest.approx(-0.12 * 0.098)
    assert sol.w_next == pytest.approx(1.0 - 0.12 * 0.098 * 6)
    assert np.allclose(sol.v_next, 0)


def test_surface_rotation_sticks_without_spin():
    with pytest.raises(StickingRegime):
        surface_rotation_step(1.0, 9.8, 0.01, 1 / 6, FP, 0.0)


def test_line_translation_zero_heading_matches_surface():
    a = line_translation_step(10.0, 9.8, 0.01, FrictionParams(0.3), (0.5, -1.4), 0.0, position=(0, 0, 1))
    b = surface_translation_step(10.0, 9.8, 0.01, FrictionParams(0.3), (0.5, -1.4), None, (0, 0, 1))
    assert (a.world.p_t, a.world.p_o) == pytest.approx((b.p_t, b.p_o))
    assert np.allclose(a.world.v_next, b.v_next) and np.allclose(a.world.a2, b.a2)


def test_line_translation_quarter_heading():
    sol = line_translation_step(10.0, 9.8, 0.01, FrictionParams(0.3), (0.0, -1.4), np.pi / 2, position=(0, 0, 1))
    ref = surface_translation_step(10.0, 9.8, 0.01, FrictionParams(0.3), (0.0, -1.4), None, (0, 0, 1))
    assert heading_rotation(np.pi / 2).T @ [0, -1.4, 0] == pytest.approx([-1.4, 0, 0])
    assert sol.starred.v_next == pytest.approx(heading_rotation(np.pi / 2).T @ ref.v_next)
    assert sol.starred.v_next[1] == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(sol.world.v_next, ref.v_next) and np.allclose(sol.world.a2, ref.a2)


def test_isotropic_metric_is_heading_invariant(rng):
    E = np.diag([2.0, 2.0, 0.5])
    for theta in rng.uniform(-np.pi, np.pi, 100):
        R = heading_rotation(theta)
        assert np.allclose(R.T @ E @ R, E)


def test_line_rotation_trigger_kick():
    inertia = 10.0 * (3 + 25) / 12
    sol = line_rotation_step(10.0, 9.8, 0.01, inertia, FrictionParams(0.3), 0.2, 0.0, LineContactCoords(0.0, 0.0),
                             AppliedImpulse(p_zt=3.0))
    # independent: sliding spin, friction moment e_r μ p_n against the kicked spin
    assert sol.p_r == pytest.approx(-0.3 * 0.98)
    assert sol.w_next == pytest.approx(0.2 + (3.0 - 0.294) / inertia)
    assert sol.coords.D == 0.0


def test_line_rotation_sticks_without_spin():
    with pytest.raises(StickingRegime):
        line_rotation_step(10.0, 9.8, 0.01, 23.3, FrictionParams(0.3), 0.0, 0.0, LineContactCoords(0.0, 0.0))


def test_line_coords_examples():
    c = line_coords([1, 2, 0], [1, 2, 1], 0.3)
    assert (c.L, c.D) == (0.0, 0.0)
    c = line_coords([0.7, 0, 0], [0, 0, 1], 0.0)
    assert (c.L, c.D) == pytest.approx((0.7, 0.0))
    c = line_coords([0.3, 0.4, 0], [0, 0, 1], np.pi / 2)
    assert (c.L, c.D) == pytest.approx((0.4, 0.3))
