"""Trajectory checks shared by ``sim verify`` and the acceptance tests.

Each check takes the list of ``StepRecord`` produced by ``scenarios.iterate``
and returns a ``Check`` with the measured value and the bound it was held to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contact import FrictionParams
from .friction import sample_ellipsoid
from .geometry import boundary_probes, plane_in_world, to_body
from .oracles import surface_translation_step
from .scenarios import ScenarioConfig, StepRecord
from .stepper import NoContact, SingularD, StepParams, ecp_wrench_from_state, in_contact


@dataclass
class Check:
    label: str
    passed: bool
    value: float
    bound: float
    detail: str = ""

    def line(self) -> str:
        extra = f" ({self.detail})" if self.detail else ""
        return f"{self.label}: measured {self.value:.3e}, bound {self.bound:.1e}: {'PASS' if self.passed else 'FAIL'}{extra}"


def _upper(label, value, bound, detail="") -> Check:
    return Check(label, bool(value <= bound), float(value), bound, detail)


def _signed_distances(geom, pose, points) -> np.ndarray:
    """First-order signed distance of each point to each constraint surface (value / |gradient|)."""
    y = np.array([to_body(pose, x) for x in points])
    Q, b, c = geom.arrays()
    values = 0.5 * np.einsum("ni,kij,nj->nk", y, Q, y) + y @ b.T + c
    grads = np.einsum("kij,nj->nki", Q, y) + b[None]
    norms = np.maximum(np.linalg.norm(grads, axis=2), 1e-12)
    return values / norms


def penetration_depth(config: ScenarioConfig, record: StepRecord, density: int = 8) -> float:
    """Deepest intrusion of F's boundary probes or of the ECP pair into the other body."""
    states = record.result.states
    worst = 0.0
    for pair, u in zip(config.contacts, record.result.contacts):
        bf, bg = config.bodies[pair.body_f], config.bodies[pair.body_g]
        pf, pg = states[pair.body_f].pose, states[pair.body_g].pose
        probes = boundary_probes(bf.geometry, pf, density)
        into_g = -_signed_distances(bg.geometry, pg, np.vstack([probes, u.a1])).max(axis=1)
        into_f = -_signed_distances(bf.geometry, pf, u.a2[None]).max(axis=1)
        worst = max(worst, float(into_g.max()), float(into_f.max()))
        if bg.geometry.bounded:
            probes_g = boundary_probes(bg.geometry, pg, density)
            worst = max(worst, float((-_signed_distances(bf.geometry, pf, probes_g).max(axis=1)).max()))
    return worst


def non_penetration(config, records, tol: float = 1e-6) -> Check:
    depth = max((penetration_depth(config, r) for r in records), default=0.0)
    return _upper("max penetration at ECPs and boundary probes ≤ 1e-6 m", depth, tol)


def surface_oracle_error(config, records) -> Check:
    """Largest deviation from the closed-form sliding recursion (v, p_n, p_t, p_o, a₂) for body 0."""
    pair = config.contacts[0]
    mass = config.bodies[0].mass
    v = np.array(config.initial[0].linear_velocity[:2])
    q = np.array(config.initial[0].position)
    worst = 0.0
    for rec in records:
        imp = rec.impulses.get(0)
        sol = surface_translation_step(mass, config.gravity, config.step, pair.friction, v, imp, q)
        u = rec.result.contacts[0]
        got = rec.result.states[0].linear_velocity
        err = max(abs(sol.p_n - u.p_n), abs(sol.p_t - u.p_t), abs(sol.p_o - u.p_o),
                  *np.abs(sol.v_next - got), *np.abs(sol.a2 - u.a2))
        worst = max(worst, float(err))
        v = sol.v_next[:2]
        q = np.array([q[0] + config.step * v[0], q[1] + config.step * v[1], q[2]])
    return _upper("max |MNCP − analytic| over (v, p_n, p_t, p_o, a2) ≤ 1e-6", worst, 1e-6)


def ecp_trail_error(records, sign: float = -1.0, plane_height: float = 0.0) -> float:
    """Max over contact steps of |a_x − q_x − sign·p_t·q_z/p_n| (and the y analogue with p_o)."""
    worst = 0.0
    for rec in records:
        u = rec.result.contacts[0]
        if u.p_n <= 0.0:
            continue
        q = rec.result.states[0].position
        height = q[2] - plane_height
        worst = max(worst, abs(u.a2[0] - q[0] - sign * u.p_t * height / u.p_n),
                    abs(u.a2[1] - q[1] - sign * u.p_o * height / u.p_n))
    return float(worst)


def ecp_trail(records) -> Check:
    return _upper("ECP offset from moment balance a − q = −p_tan·q_z/p_n ≤ 1e-6",
                  ecp_trail_error(records, -1.0), 1e-6)


def line_confinement(records, half_length: float, tol: float = 1e-6) -> list[Check]:
    Ls = np.array([r.result.diagnostics[0].L for r in records])
    Ds = np.array([r.result.diagnostics[0].D for r in records])
    lines = ~np.isnan(Ls)
    checks = [
        _upper("max |D| ≤ 1e-6", float(np.abs(Ds[lines]).max(initial=0.0)), tol),
        _upper(f"max |L| ≤ {half_length:g}", float(np.abs(Ls[lines]).max(initial=0.0)), half_length),
    ]
    jumps = [k for k, r in enumerate(records) if r.impulses]
    checks.append(piecewise_decay(Ls, jumps))
    if not lines.all():
        checks.append(Check("line contact held at every step", False, float((~lines).sum()), 0.0))
    return checks


def piecewise_decay(Ls, kicks, tol: float = 1e-9) -> Check:
    """Between impulses |L| rises to a peak and then never grows again; each impulse raises |L|."""
    bounds = [0, *kicks, len(Ls)]
    worst_growth, worst_jump = 0.0, np.inf
    for a, b in zip(bounds[:-1], bounds[1:]):
        seg = np.abs(Ls[a:b])
        if seg.size < 2:
            continue
        peak = int(np.argmax(seg))
        worst_growth = max(worst_growth, float(np.max(np.diff(seg[peak:]), initial=0.0)))
    for k in kicks:
        if 0 < k < len(Ls):
            worst_jump = min(worst_jump, float(abs(Ls[k]) - abs(Ls[k - 1])))
    ok = worst_growth <= tol and (not kicks or worst_jump > 0)
    detail = f"smallest jump at an impulse {worst_jump:.3e}" if kicks else ""
    return Check("|L| non-increasing after each post-impulse peak", ok, worst_growth, tol, detail)


def facet_counts(records, contact: int = 0) -> list[int]:
    return [r.result.diagnostics[contact].facets for r in records]


def _collapse(seq):
    out = []
    for x in seq:
        if not out or out[-1] != x:
            out.append(x)
    return out


def is_subsequence(wanted, seq) -> bool:
    it = iter(seq)
    return all(any(x == w for x in it) for w in wanted)


def facet_sequence(records, wanted=(3, 2, 1)) -> Check:
    seen = _collapse(n for n in facet_counts(records) if n > 0)
    ok = is_subsequence(wanted, seen)
    return Check(f"N takes the ordered values {' → '.join(map(str, wanted))}", ok, float(len(seen)), 0.0,
                 "observed " + " → ".join(map(str, seen)))


def mode_sequence(records, wanted=("point", "line", "point", "line", "point", "surface")) -> Check:
    seen = _collapse(r.result.diagnostics[0].mode for r in records)
    ok = is_subsequence(wanted, seen) and seen[-1] == wanted[-1]
    return Check("contact modes follow " + " → ".join(wanted), ok, float(len(seen)), 0.0,
                 "observed " + " → ".join(seen))


def never_touches(records, contacts) -> Check:
    closest = min(r.result.diagnostics[k].gap for r in records for k in contacts)
    touched = any(in_contact(r.result.contacts[k]) for r in records for k in contacts)
    return Check("obstacles never contacted", not touched, closest, 0.0, f"closest gap {closest:.3f} m")


def friction_feasibility(config, records) -> list[Check]:
    slack_min, comp_max, diss_min = np.inf, 0.0, np.inf
    for rec in records:
        for pair, u, d in zip(config.contacts, rec.result.contacts, rec.result.diagnostics):
            if u.p_n <= 0.0 or not in_contact(u):
                continue
            slack_min = min(slack_min, d.slack)
            comp_max = max(comp_max, abs(d.slack * u.sigma))
            diss_min = min(diss_min, d.dissipation)
    slack_min = 0.0 if slack_min == np.inf else slack_min
    diss_min = 0.0 if diss_min == np.inf else diss_min
    return [
        Check("ellipsoid slack ζ ≥ −1e-8", slack_min >= -1e-8, slack_min, -1e-8),
        _upper("|ζ·σ| ≤ 1e-8", comp_max, 1e-8),
        Check("dissipation ≥ −1e-10", diss_min >= -1e-10, diss_min, -1e-10),
    ]


def max_dissipation_violation(slip, impulse, p_n: float, fp: FrictionParams, rng, samples: int = 100) -> float:
    """How much more any sampled admissible friction impulse would dissipate than ``impulse``."""
    cand = sample_ellipsoid(rng, samples - samples // 2, p_n, fp)
    # half the samples on the boundary, where the maximizer lives
    d = rng.normal(size=(samples // 2, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    cand = np.vstack([cand, fp.mu * p_n * d * np.array([fp.e_t, fp.e_o, fp.e_r])])
    achieved = -float(np.dot(slip, impulse))
    return float(np.max(-(cand @ slip)) - achieved)


def max_dissipation(config, records, steps: int = 20, samples: int = 100, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    sliding = [(r, k) for r in records for k, u in enumerate(r.result.contacts)
               if in_contact(u) and u.p_n > 0 and np.linalg.norm(r.result.diagnostics[k].slip) > 1e-6]
    if not sliding:
        return Check("maximum dissipation (brute force)", True, 0.0, 0.0, "no sliding steps")
    picks = rng.choice(len(sliding), size=min(steps, len(sliding)), replace=False)
    worst = -np.inf
    for i in picks:
        rec, k = sliding[i]
        u, d = rec.result.contacts[k], rec.result.diagnostics[k]
        fp = config.contacts[k].friction
        worst = max(worst, max_dissipation_violation(d.slip, [u.p_t, u.p_o, u.p_r], u.p_n, fp, rng, samples))
    return _upper(f"no sampled impulse out-dissipates the solution ({len(picks)} sliding steps)", worst, 1e-9)


def wrench_round_trip(config, records, limit: int | None = None, seed: int = 0) -> tuple[float, int]:
    """Largest relative disagreement between the MNCP contact and the one recovered from the
    two surrounding states, over in-contact steps with a single planar contact on body 0."""
    params = StepParams(config.step, config.gravity)
    ground = [k for k, p in enumerate(config.contacts) if not config.bodies[p.body_g].geometry.bounded]
    picks = []
    for rec in records:
        touching = [k for k, u in enumerate(rec.result.contacts) if in_contact(u)]
        if len(touching) == 1 and touching[0] in ground and config.contacts[touching[0]].body_f == 0:
            picks.append((rec, touching[0]))
    if limit is not None and len(picks) > limit:
        rng = np.random.default_rng(seed)
        picks = [picks[i] for i in sorted(rng.choice(len(picks), size=limit, replace=False))]
    worst = 0.0
    for rec, k in picks:
        pair = config.contacts[k]
        n, offset = plane_in_world(config.bodies[pair.body_g].geometry, rec.result.states[pair.body_g].pose)
        u = rec.result.contacts[k]
        try:
            a, p_n, p_t, p_o, p_r = ecp_wrench_from_state(
                rec.result.states[0], config.bodies[0], n, offset, rec.impulses.get(0), params, rec.before[0])
        except (NoContact, SingularD):
            worst = np.inf
            continue
        ref = np.array([*u.a2, u.p_n, u.p_t, u.p_o, u.p_r])
        got = np.array([*a, p_n, p_t, p_o, p_r])
        worst = max(worst, float(np.max(np.abs(got - ref)) / max(1.0, np.max(np.abs(ref)))))
    return worst, len(picks)


def round_trip(config, records, limit: int = 100) -> Check:
    worst, count = wrench_round_trip(config, records, limit)
    return _upper("ECP and impulses recovered from consecutive states ≤ 1e-6 relative", worst, 1e-6,
                  f"{count} contact steps")


_RANK = {"none": 0, "point": 1, "line": 2, "surface": 3}


def activation_steps(records) -> list[tuple[int, int]]:
    """(record index, contact) for the step after each impact, i.e. after each change to a
    larger contact patch (separated → point → line → surface). The landing step's end pose
    only just touches, so its successor is where the impact is resolved."""
    out = []
    for k in range(len(records[0].result.contacts) if records else 0):
        for i in range(1, len(records) - 1):
            before = records[i - 1].result.diagnostics[k].mode
            after = records[i].result.diagnostics[k].mode
            if _RANK[after] > _RANK[before]:
                out.append((i + 1, k))
    return out


def inelastic_impacts(records, tol: float = 1e-6) -> list[Check]:
    events = activation_steps(records)
    worst = min((records[i].result.diagnostics[k].normal_velocity for i, k in events
                 if in_contact(records[i].result.contacts[k])), default=0.0)
    plateau = 0.0
    for a, b in zip(records[:-1], records[1:]):
        for qa, qb, st in zip(a.result.states, b.result.states, b.result.states):
            if abs(qb.position[2] - qa.position[2]) <= 1e-12:
                plateau = max(plateau, abs(float(st.linear_velocity[2])))
    return [
        Check(f"normal velocity after impacts ≥ −1e-6 ({len(events)} events)", worst >= -tol, worst, -tol),
        _upper("v_z vanishes wherever q_z plateaus", plateau, tol),
    ]


def scenario_checks(name: str, config: ScenarioConfig, records) -> list[Check]:
    """Checks relevant to a builtin scenario (plus the generic ones for any scenario)."""
    checks = []
    if name == "scenario1":
        checks += [surface_oracle_error(config, records), ecp_trail(records)]
    elif name == "scenario2":
        checks += line_confinement(records, 0.5 * config.bodies[0].geometry.params["length"])
    elif name == "scenario3":
        checks.append(facet_sequence(records))
    elif name == "scenario4":
        checks.append(mode_sequence(records))
        checks.append(never_touches(records, range(1, len(config.contacts))))
    checks.append(non_penetration(config, records))
    checks += friction_feasibility(config, records)
    checks += inelastic_impacts(records)
    return checks
