import numpy as np
import pytest

from ecpsim.algebra import quat_from_axis_angle
from ecpsim.body import RigidBody, State, cuboid_inertia, cylinder_inertia, world_inertia
from ecpsim.contact import ContactPair, FrictionParams
from ecpsim.geometry import cuboid, cylinder, halfspace
from ecpsim.scenarios import builtin, iterate
from ecpsim.stepper import (
    AppliedImpulse,
    ConfigError,
    NoContact,
    Simulation,
    StepParams,
    World,
    active_facet_count,
    advance,
    assemble_step,
    contact_frame_of,
    ecp_wrench_from_state,
    near_pairs,
    pack,
    unpack,
)

from helpers import cube_on_ground

PARAMS = StepParams(0.01, 9.8)
GROUND_N = np.array([0.0, 0.0, 1.0])


def one_step(config, impulses=None):
    return advance(config.world(), config.initial, impulses, config.params(), config.solver)


def test_unknown_counts_cube_on_plane():
    config = cube_on_ground()
    problem = assemble_step(config.world(), config.initial, params=PARAMS)
    assert (problem.n_eq, problem.n_comp) == (15, 9)


def test_unknown_counts_two_pairs():
    steel = FrictionParams(0.8)
    bodies = [
        RigidBody("cyl", cylinder(0.1, 0.3), 75.0, cylinder_inertia(75.0, 0.1, 0.3)),
        RigidBody("ground", halfspace(), fixed=True),
        RigidBody("box", cuboid([0.1, 0.3, 0.2]), fixed=True),
    ]
    world = World(bodies, [ContactPair(0, 1, steel), ContactPair(0, 2, steel)])
    assert world.n_eq == 6 + 2 * (6 + 3)
    assert world.n_comp == (3 + 1 + 2) + (3 + 6 + 2)


def test_world_validation():
    bodies = [RigidBody("ground", halfspace(), fixed=True), RigidBody("c", cuboid([1, 1, 1]), 1.0, np.eye(3))]
    with pytest.raises(ConfigError):
        World(bodies, [ContactPair(0, 1, FrictionParams(0.1))])
    with pytest.raises(ConfigError):
        World(bodies, [ContactPair(1, 5, FrictionParams(0.1))])
    with pytest.raises(ConfigError):
        StepParams(0.0)


def test_ballistic_without_contacts():
    body = RigidBody("c", cuboid([1, 1, 1]), 2.0, cuboid_inertia(2.0, [1, 1, 1]))
    start = State([0, 0, 3], [1, 0, 0, 0], [1, 0, 0], [0, 0, 0])
    result = advance(World([body]), [start], params=PARAMS)
    assert np.allclose(result.states[0].linear_velocity, [1, 0, -0.098])
    assert np.allclose(result.states[0].position, [0.01, 0, 3 - 0.00098])


def test_resting_cube():
    result = one_step(cube_on_ground())
    u = result.contacts[0]
    assert np.allclose(result.nus[0], 0, atol=1e-10)
    assert u.p_n == pytest.approx(0.098, abs=1e-10)
    assert (u.p_t, u.p_o, u.p_r) == pytest.approx((0, 0, 0), abs=1e-10)
    assert u.a2 == pytest.approx([0, 0, 0], abs=1e-8)


def test_sliding_cube_first_step():
    result = one_step(cube_on_ground(velocity=(4, 3, 0)))
    u = result.contacts[0]
    assert (u.p_t, u.p_o) == pytest.approx((-0.009408, -0.007056), abs=1e-10)
    assert result.states[0].linear_velocity == pytest.approx([3.990592, 2.992944, 0], abs=1e-10)


def test_dropped_cube_lands_inelastically():
    config = cube_on_ground(position=(0, 0, 0.8), duration=0.4)
    records = list(iterate(config))
    landing = next(i for i, r in enumerate(records) if r.result.diagnostics[0].mode != "none")
    for k in range(landing):
        # separated: p_n is zero up to the solver tolerance
        assert abs(records[k].result.contacts[0].p_n) < 1e-8
        assert records[k].result.states[0].linear_velocity[2] == pytest.approx(-(k + 1) * 0.098, abs=1e-7)
    assert records[landing].result.states[0].position[2] == pytest.approx(0.5, abs=1e-9)
    for rec in records[landing + 1:]:
        assert abs(rec.result.states[0].linear_velocity[2]) <= 1e-9


def test_wrench_recovery_resting_cube():
    config = cube_on_ground(position=(0.3, -0.2, 0.5))
    result = one_step(config)
    a, p_n, p_t, p_o, p_r = ecp_wrench_from_state(result.states[0], config.bodies[0], GROUND_N, 0.0, None, PARAMS,
                                                  config.initial[0])
    assert p_n == pytest.approx(0.098) and a == pytest.approx([0.3, -0.2, 0.0], abs=1e-9)
    assert (p_t, p_o, p_r) == pytest.approx((0, 0, 0), abs=1e-10)


def _round_trip(config, impulse=None):
    result = one_step(config, {0: impulse} if impulse else None)
    got = ecp_wrench_from_state(result.states[0], config.bodies[0], GROUND_N, 0.0, impulse, PARAMS, config.initial[0])
    u = result.contacts[0]
    return np.array([*got[0], *got[1:]]), np.array([*u.a2, u.p_n, u.p_t, u.p_o, u.p_r])


def test_wrench_recovery_sliding_step():
    got, want = _round_trip(cube_on_ground(velocity=(4, 3, 0)))
    assert got == pytest.approx(want, abs=1e-8)


def test_wrench_recovery_spin_with_moment():
    got, want = _round_trip(cube_on_ground(spin=(0, 0, 1.0)), AppliedImpulse(p_zt=0.05))
    assert want[-1] != 0
    assert got == pytest.approx(want, abs=1e-8)


def test_wrench_recovery_needs_contact():
    config = cube_on_ground(position=(0, 0, 2.0))
    with pytest.raises(NoContact):
        ecp_wrench_from_state(config.initial[0], config.bodies[0], GROUND_N, 0.0, None, PARAMS, config.initial[0])


def test_facet_count_face_edge_vertex():
    flush = one_step(cube_on_ground())
    edge = one_step(cube_on_ground(position=(0, 0, np.sqrt(0.5)), orientation=quat_from_axis_angle([1, 0, 0], np.pi / 4)))
    theta = np.arctan(np.sqrt(2.0))
    s = np.sin(theta / 2) / np.sqrt(2.0)
    vertex = one_step(cube_on_ground(position=(0, 0, np.sqrt(3) / 2), orientation=(np.cos(theta / 2), s, -s, 0)))
    assert [active_facet_count(r, 0) for r in (flush, edge, vertex)] == [1, 2, 3]
    assert [r.diagnostics[0].mode for r in (flush, edge, vertex)] == ["surface", "line", "point"]


def test_separated_contact_counts_zero():
    result = one_step(cube_on_ground(position=(0, 0, 1.0)))
    assert active_facet_count(result, 0) == 0
    assert result.contacts[0].p_n == 0.0


def test_momentum_bookkeeping():
    config = builtin("scenario3")
    for rec in iterate(config, steps=60):
        if rec.step % 10:
            continue
        before, after = rec.before[0], rec.result.states[0]
        body = config.bodies[0]
        u = rec.result.contacts[0]
        frame = contact_frame_of(config.world(), rec.result.states, 0, u)
        A = u.p_n * frame.n + u.p_t * frame.t + u.p_o * frame.o
        p_app = (rec.impulses.get(0) or AppliedImpulse()).vector() + [0, 0, -body.mass * 0.098, 0, 0, 0]
        I = world_inertia(body, before.orientation)
        w = after.angular_velocity
        assert body.mass * (after.linear_velocity - before.linear_velocity) == pytest.approx(A + p_app[:3], abs=1e-9)
        moment = np.cross(u.a2 - after.position, A) + u.p_r * frame.n + p_app[3:]
        assert I @ (w - before.angular_velocity) + 0.01 * np.cross(w, I @ w) == pytest.approx(moment, abs=1e-9)


def test_unpack_inverts_pack():
    config = cube_on_ground(velocity=(1, 0, 0))
    world = config.world()
    result = one_step(config)
    z = pack(world, result.nus, result.contacts)
    nus, us = unpack(world, z, [u.k1 for u in result.contacts])
    assert np.array_equal(nus[0], result.nus[0]) and us[0].p_n == result.contacts[0].p_n


def test_far_obstacles_are_dormant():
    config = builtin("scenario4")
    world = config.world()
    assert near_pairs(world, config.initial, None, config.params()) == [0]
    result = advance(world, config.initial, None, config.params(), config.solver)
    assert result.dormant == (1, 2)
    assert result.warm_start()[1] is None
    assert all(d.mode == "none" and d.gap > 0.4 for d in result.diagnostics[1:])


def test_simulation_tracks_time():
    config = cube_on_ground(velocity=(1, 0, 0))
    sim = Simulation(config.world(), config.initial, config.params(), config.solver)
    for _ in range(3):
        sim.step()
    assert sim.steps == 3 and sim.time == pytest.approx(0.03)
    assert sim.states[0].linear_velocity[0] == pytest.approx(1 - 3 * 0.12 * 0.098, abs=1e-10)
