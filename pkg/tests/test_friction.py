import numpy as np
import pytest

from ecpsim.contact import FrictionParams, contact_frame, wrench_bases
from ecpsim.friction import (
    dissipation,
    ellipsoid_slack,
    fritz_john_residuals,
    max_dissipation_impulse,
    sample_ellipsoid,
    slip_velocities,
)

GROUND = contact_frame([0, 0, 1], [0, 0, 0])


def test_slip_at_rest():
    assert slip_velocities(np.zeros(6), wrench_bases([0, 0, -0.5], GROUND)) == (0.0, 0.0, 0.0)


def test_slip_pure_translation():
    assert slip_velocities([4, 3, 0, 0, 0, 0], wrench_bases([0.1, 0.2, -0.5], GROUND)) == pytest.approx((4, 3, 0))


def test_slip_pure_spin_depends_on_lever():
    r = np.array([0.3, 0.1, -0.5])
    v_t, v_o, v_r = slip_velocities([0, 0, 0, 0, 0, 0.2], wrench_bases(r, GROUND))
    assert v_r == pytest.approx(0.2)
    # independent: point velocity ω × r
    assert (v_t, v_o) == pytest.approx(tuple(np.cross([0, 0, 0.2], r)[:2]))


def test_dissipation_examples():
    assert dissipation(0, 0, 0, 0.1, 0.2, 0.3) == 0.0
    assert dissipation(4, 0, 0, -0.009408, 0, 0) == pytest.approx(0.037632, abs=1e-15)


def test_opposing_friction_dissipates(rng):
    fp = FrictionParams(0.3, 1.0, 2.0, 0.5)
    for _ in range(50):
        v = rng.normal(size=3)
        p = max_dissipation_impulse(*v, 1.0, fp)
        assert dissipation(*v, *p) >= 0


def test_sticking_branch():
    fp = FrictionParams(0.12)
    eq, zeta = fritz_john_residuals(0, 0, 0, 0.098, 0.001, -0.002, 0.0005, 0.0, fp)
    assert np.allclose(eq, 0) and zeta > 0


def test_sliding_first_step():
    fp = FrictionParams(0.12)
    eq, zeta = fritz_john_residuals(4, 3, 0, 0.098, -0.009408, -0.007056, 0.0, 5.0, fp)
    assert np.allclose(eq, 0, atol=1e-12)
    assert zeta == pytest.approx(0.0, abs=1e-12)


def test_complementarity_violation_visible():
    _, zeta = fritz_john_residuals(0, 0, 0, 0.098, 0, 0, 0, 1.0, FrictionParams(0.12))
    assert zeta * 1.0 > 0


def test_max_dissipation_beats_samples(rng):
    fp = FrictionParams(0.5, 1.0, 0.7, 0.2)
    v = np.array([0.3, -1.0, 0.4])
    best = dissipation(*v, *max_dissipation_impulse(*v, 2.0, fp))
    samples = sample_ellipsoid(rng, 500, 2.0, fp)
    assert np.all(ellipsoid_slack(2.0, *samples.T, fp) >= -1e-12)
    assert np.all(-(samples @ v) <= best + 1e-12)
