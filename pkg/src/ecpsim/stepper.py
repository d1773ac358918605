"""Per-step MNCP assembly, state advance and direct ECP/wrench recovery.

Unknown layout for ``d`` moving bodies and ``k`` contacts::

    z_u = [ν_0 .. ν_{d-1} (6 each); per contact: a1, a2, p_t, p_o, p_r]
    z_v = [per contact: l_f (one per F constraint), l_g (one per G constraint), p_n, σ]

Equality rows follow the same order as z_u: six momentum rows per moving body,
then per contact the two normal-cone rows (3 each) and three friction rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, nnls

from . import _core
from .algebra import integrate_orientation, quat_to_rotation, tangent_basis
from .body import Pose, RigidBody, State, world_inertia
from .contact import ContactFrame, ContactPair, ContactUnknowns, select_k1
from .friction import dissipation, ellipsoid_slack
from .geometry import (
    ACTIVE_TOL,
    bounding_radius,
    closest_points_oracle,
    eval_constraints,
    eval_gradients,
    max_violation,
    plane_in_world,
    support_point,
)
from .mncp import MixedNCP, NotConverged, SolveOptions, solve

log = logging.getLogger(__name__)

TOUCH_TOL = 1e-6
# Without a normal impulse the friction multiplier is free; a positive value keeps
# the friction rows nondegenerate (they then force zero friction linearly).
SEPARATED_SIGMA = 1.0
# broad-phase slack as a fraction of the summed bounding radii
BROAD_SLACK = 0.05


class ConfigError(ValueError):
    pass


class NoContact(ValueError):
    pass


class SingularD(ValueError):
    pass


@dataclass(frozen=True)
class StepParams:
    h: float = 0.01
    beta: float = 9.8

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigError("step size must be positive")


@dataclass(frozen=True)
class AppliedImpulse:
    p_x: float = 0.0
    p_y: float = 0.0
    p_z: float = 0.0
    p_xt: float = 0.0
    p_yt: float = 0.0
    p_zt: float = 0.0

    def vector(self) -> np.ndarray:
        return np.array([self.p_x, self.p_y, self.p_z, self.p_xt, self.p_yt, self.p_zt])

    @classmethod
    def from_vector(cls, v) -> "AppliedImpulse":
        return cls(*(float(x) for x in v))

    def __add__(self, other: "AppliedImpulse") -> "AppliedImpulse":
        return AppliedImpulse.from_vector(self.vector() + other.vector())


@dataclass
class World:
    bodies: list[RigidBody]
    contacts: list[ContactPair] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.bodies)
        for k, pair in enumerate(self.contacts):
            for b in (pair.body_f, pair.body_g):
                if not 0 <= b < n:
                    raise ConfigError(f"contact {k} references missing body {b}")
            if self.bodies[pair.body_f].fixed:
                raise ConfigError(f"contact {k}: body_f must be a moving body")
        dyn = [b for b, body in enumerate(self.bodies) if not body.fixed]
        self.dyn_index = np.full(n, -1, dtype=np.int64)
        self.dyn_index[dyn] = np.arange(len(dyn))
        self.moving = dyn
        self.sizes_f = [self.bodies[p.body_f].geometry.size for p in self.contacts]
        self.sizes_g = [self.bodies[p.body_g].geometry.size for p in self.contacts]
        self.n_eq = 6 * len(dyn) + 9 * len(self.contacts)
        self.off_u = np.array([6 * len(dyn) + 9 * k for k in range(len(self.contacts))], dtype=np.int64)
        self.off_v = np.cumsum([0] + [mf + mg + 2 for mf, mg in zip(self.sizes_f, self.sizes_g)]).astype(np.int64)
        self.n_comp = int(self.off_v[-1])
        self.off_v = self.off_v[:-1]
        starts = np.cumsum([0] + [b.geometry.size for b in self.bodies]).astype(np.int64)
        self.con_start = starts
        arrays = [b.geometry.arrays() for b in self.bodies]
        self.Q = np.concatenate([a[0] for a in arrays])
        self.b = np.concatenate([a[1] for a in arrays])
        self.c = np.concatenate([a[2] for a in arrays])

    @property
    def size(self) -> int:
        return self.n_eq + self.n_comp

    def variable_names(self) -> list[str]:
        names = []
        for b in self.moving:
            names += [f"{self.bodies[b].name}.{s}" for s in ("vx", "vy", "vz", "wx", "wy", "wz")]
        for k in range(len(self.contacts)):
            names += [f"c{k}.{s}" for s in ("a1x", "a1y", "a1z", "a2x", "a2y", "a2z", "pt", "po", "pr")]
        for k, (mf, mg) in enumerate(zip(self.sizes_f, self.sizes_g)):
            names += [f"c{k}.lf{i}" for i in range(mf)] + [f"c{k}.lg{j}" for j in range(mg)]
            names += [f"c{k}.pn", f"c{k}.sigma"]
        return names


@dataclass
class StepContext:
    """Flat arrays consumed by the step kernel."""

    h: float
    n_bodies: int
    n_dyn: int
    n_contacts: int
    n_eq: int
    dyn_index: np.ndarray
    q0: np.ndarray
    c0: np.ndarray
    nu0: np.ndarray
    mass: np.ndarray
    inertia: np.ndarray
    p_app: np.ndarray
    static_c: np.ndarray
    static_R: np.ndarray
    con_start: np.ndarray
    Q: np.ndarray
    b: np.ndarray
    c: np.ndarray
    body_f: np.ndarray
    body_g: np.ndarray
    friction: np.ndarray
    k1: np.ndarray
    off_u: np.ndarray
    off_v: np.ndarray
    off_eq: np.ndarray
    normal_mode: np.ndarray
    fixed_normal: np.ndarray


def _fixed_normal(world: World, pair: ContactPair, state: State):
    body = world.bodies[pair.body_g]
    if not body.fixed or body.geometry.size != 1 or not body.geometry.constraints[0].affine:
        return 1, np.zeros(3)
    n = quat_to_rotation(state.orientation) @ body.geometry.constraints[0].b
    return 0, n / np.linalg.norm(n)


def build_context(world: World, states, impulses, params: StepParams, k1) -> StepContext:
    if len(states) != len(world.bodies):
        raise ConfigError("one state per body is required")
    moving = world.moving
    nb, nd, nc = len(world.bodies), len(moving), len(world.contacts)
    impulses = impulses or {}
    p_app = np.zeros((nd, 6))
    for d, b in enumerate(moving):
        p_app[d, 2] = -world.bodies[b].mass * params.beta * params.h
        if b in impulses:
            p_app[d] += impulses[b].vector()
    modes = [_fixed_normal(world, p, states[p.body_g]) for p in world.contacts]
    return StepContext(
        h=params.h, n_bodies=nb, n_dyn=nd, n_contacts=nc, n_eq=world.n_eq,
        dyn_index=world.dyn_index,
        q0=np.array([states[b].orientation for b in moving]).reshape(nd, 4),
        c0=np.array([states[b].position for b in moving]).reshape(nd, 3),
        nu0=np.array([states[b].nu for b in moving]).reshape(nd, 6),
        mass=np.array([world.bodies[b].mass for b in moving], dtype=float),
        inertia=np.array([world_inertia(world.bodies[b], states[b].orientation) for b in moving]).reshape(nd, 3, 3),
        p_app=p_app,
        static_c=np.array([s.position for s in states]),
        static_R=np.array([quat_to_rotation(s.orientation) for s in states]),
        con_start=world.con_start, Q=world.Q, b=world.b, c=world.c,
        body_f=np.array([p.body_f for p in world.contacts], dtype=np.int64),
        body_g=np.array([p.body_g for p in world.contacts], dtype=np.int64),
        friction=np.array([[p.friction.mu, p.friction.e_t, p.friction.e_o, p.friction.e_r] for p in world.contacts]).reshape(nc, 4),
        k1=np.array(k1, dtype=np.int64).reshape(nc),
        off_u=world.off_u, off_v=world.off_v, off_eq=world.off_u,
        normal_mode=np.array([m for m, _ in modes], dtype=np.int64),
        fixed_normal=np.array([n for _, n in modes]).reshape(nc, 3),
    )


class StepProblem(MixedNCP):
    """The MNCP of one time step; residual and analytic Jacobian come from the kernel."""

    def __init__(self, world: World, context: StepContext, evaluator=None):
        self.world = world
        self.context = context
        self._evaluate = evaluator or _core.evaluate
        self._key = None
        self._value = None
        super().__init__(world.n_eq, world.n_comp, self._residual, self._jacobian, world.variable_names())
        # the anchoring constraint must be active at a1: its row is an equation
        self.free_rows = np.asarray(world.off_v + context.k1, dtype=np.int64)

    def _eval(self, z):
        z = np.ascontiguousarray(z, dtype=float)
        key = z.tobytes()
        if key != self._key:
            self._value = self._evaluate(self.context, z)
            self._key = key
        return self._value

    def _residual(self, z):
        F, _ = self._eval(z)
        return F[:self.n_eq], F[self.n_eq:]

    def _jacobian(self, z):
        return self._eval(z)[1]


def assemble_step(world: World, states, impulses=None, params: StepParams | None = None, k1=None) -> StepProblem:
    params = params or StepParams()
    if k1 is None:
        k1 = [0] * len(world.contacts)
    return StepProblem(world, build_context(world, states, impulses, params, k1))


def pack(world: World, nus, unknowns) -> np.ndarray:
    z = np.zeros(world.size)
    for d, nu in enumerate(nus):
        z[6 * d:6 * d + 6] = nu
    for k, u in enumerate(unknowns):
        i = world.off_u[k]
        z[i:i + 9] = [*u.a1, *u.a2, u.p_t, u.p_o, u.p_r]
        j = world.n_eq + world.off_v[k]
        mf, mg = world.sizes_f[k], world.sizes_g[k]
        z[j:j + mf] = u.l_f
        z[j + mf:j + mf + mg] = u.l_g
        z[j + mf + mg] = u.p_n
        z[j + mf + mg + 1] = u.sigma
    return z


def unpack(world: World, z, k1) -> tuple[list[np.ndarray], list[ContactUnknowns]]:
    nus = [z[6 * d:6 * d + 6].copy() for d in range(len(world.moving))]
    unknowns = []
    for k in range(len(world.contacts)):
        i = world.off_u[k]
        j = world.n_eq + world.off_v[k]
        mf, mg = world.sizes_f[k], world.sizes_g[k]
        unknowns.append(ContactUnknowns(
            a1=z[i:i + 3].copy(), a2=z[i + 3:i + 6].copy(),
            l_f=z[j:j + mf].copy(), l_g=z[j + mf:j + mf + mg].copy(),
            p_n=float(z[j + mf + mg]), p_t=float(z[i + 6]), p_o=float(z[i + 7]), p_r=float(z[i + 8]),
            sigma=float(z[j + mf + mg + 1]), k1=int(k1[k]),
        ))
    return nus, unknowns


def _outward(geom, pose, x) -> np.ndarray:
    values = eval_constraints(geom, pose, x)
    grads = eval_gradients(geom, pose, x)[values >= values.max() - ACTIVE_TOL]
    n = grads.sum(axis=0)
    return n / np.linalg.norm(n)


def _patch_point(gf, pf, gg, pg, start) -> np.ndarray:
    """Point of the (touching) overlap of F and G closest to F's reference point."""
    centre = np.asarray(pf.position, dtype=float)
    res = minimize(
        lambda x: float((x - centre) @ (x - centre)), start, jac=lambda x: 2 * (x - centre),
        constraints=[
            {"type": "ineq", "fun": lambda x: -eval_constraints(gf, pf, x), "jac": lambda x: -eval_gradients(gf, pf, x)},
            {"type": "ineq", "fun": lambda x: -eval_constraints(gg, pg, x), "jac": lambda x: -eval_gradients(gg, pg, x)},
        ],
        method="SLSQP", options={"ftol": 1e-14, "maxiter": 200},
    )
    if not res.success:
        return start
    overshoot = max(max_violation(gf, pf, res.x), max_violation(gg, pg, res.x))
    return res.x if overshoot <= TOUCH_TOL else start


def _impulse_guess(world: World, states, pair: ContactPair, normal, point, p_app,
                   p_n: float | None = None) -> tuple[float, np.ndarray, float]:
    """Normal impulse that stops the approach, plus maximal-dissipation friction for the current slip."""
    mu, e = pair.friction.mu, np.array([pair.friction.e_t, pair.friction.e_o, pair.friction.e_r])
    momentum = np.zeros(3)
    vrel, wrel = np.zeros(3), np.zeros(3)
    for body, sign in ((pair.body_f, 1.0), (pair.body_g, -1.0)):
        if world.bodies[body].fixed:
            continue
        st = states[body]
        momentum += sign * (world.bodies[body].mass * st.linear_velocity + p_app[world.dyn_index[body], :3])
        vrel += sign * (st.linear_velocity + np.cross(st.angular_velocity, point - st.position))
        wrel += sign * st.angular_velocity
    if p_n is None:
        p_n = max(0.0, -float(normal @ momentum))
    t, o = tangent_basis(normal)
    slip = np.array([t @ vrel, o @ vrel, normal @ wrel])
    speed = float(np.sqrt(np.sum((e * slip) ** 2)))
    if p_n == 0.0:
        return p_n, np.zeros(3), SEPARATED_SIGMA
    if speed < 1e-9:
        return p_n, np.zeros(3), 0.0
    return p_n, -mu * p_n * e**2 * slip / speed, speed


def _anchored_guess(gf, pf, gg, pg, a1, a2, toward, dist) -> ContactUnknowns:
    """Anchor constraint toward G plus NNLS normal-cone weights of the active constraints."""
    k1 = select_k1(gf, pf, a1, toward)
    g1 = eval_gradients(gf, pf, a1)
    g2 = eval_gradients(gg, pg, a2)
    vf = eval_constraints(gf, pf, a1)
    vg = eval_constraints(gg, pg, a2)
    others = [i for i in range(gf.size) if i != k1 and vf[i] >= vf.max() - ACTIVE_TOL]
    act_g = np.flatnonzero(vg >= vg.max() - ACTIVE_TOL)
    coef, _ = nnls(np.column_stack([g1[others].T, g2[act_g].T]), -g1[k1])
    l_f = np.full(gf.size, 1e-6)
    l_f[others] = np.maximum(coef[:len(others)], 1e-6)
    l_g = np.full(gg.size, 1e-6)
    l_g[act_g] = np.maximum(coef[len(others):], 1e-6)
    rest = [i for i in range(gf.size) if i != k1]
    S = g1[k1] + l_f[rest] @ g1[rest]
    l_f[k1] = max(dist / np.linalg.norm(S), 1e-6)
    return ContactUnknowns(np.array(a1, dtype=float), np.array(a2, dtype=float), l_f, l_g, k1=k1, sigma=SEPARATED_SIGMA)


def initial_unknowns(world: World, states, impulses=None, params: StepParams | None = None,
                     grid_density: int = 7) -> list[ContactUnknowns]:
    """Cold start: closest points from the brute-force oracle, multipliers by NNLS and
    impulses from a one-step momentum estimate when the bodies already touch."""
    params = params or StepParams()
    p_app = build_context(world, states, impulses, params, [0] * len(world.contacts)).p_app
    out = []
    for pair in world.contacts:
        gf, gg = world.bodies[pair.body_f].geometry, world.bodies[pair.body_g].geometry
        pf, pg = states[pair.body_f].pose, states[pair.body_g].pose
        a1, a2, dist = closest_points_oracle(gf, pf, gg, pg, grid_density)
        touching = dist <= TOUCH_TOL
        if touching:
            a1 = a2 = _patch_point(gf, pf, gg, pg, a2)
        toward = (a2 - a1) / dist if not touching else -_outward(gg, pg, a2)
        u = _anchored_guess(gf, pf, gg, pg, a1, a2, toward, dist)
        if touching:
            u.p_n, (u.p_t, u.p_o, u.p_r), u.sigma = _impulse_guess(world, states, pair, -toward, a2, p_app)
        out.append(u)
    return out


def _free_velocities(world: World, states, p_app) -> list[np.ndarray]:
    """Velocities after one step with applied impulses and gravity only."""
    out = []
    for d, b in enumerate(world.moving):
        body, st = world.bodies[b], states[b]
        inertia = world_inertia(body, st.orientation)
        out.append(np.concatenate([
            st.linear_velocity + p_app[d, :3] / body.mass,
            st.angular_velocity + np.linalg.solve(inertia, p_app[d, 3:]),
        ]))
    return out


def predicted_unknowns(world: World, states, warm: list[ContactUnknowns], impulses=None,
                       params: StepParams | None = None) -> tuple[list[np.ndarray], list[ContactUnknowns]]:
    """Guess for a step that changes contact mode: the lowest point of each moving body at its
    contact-free end-of-step pose, with an impulse that cancels the approach speed there."""
    params = params or StepParams()
    p_app = build_context(world, states, impulses, params, [0] * len(world.contacts)).p_app
    nus = _free_velocities(world, states, p_app)
    free = _new_states(world, states, nus, params.h)
    kicks = [np.zeros(6) for _ in nus]
    out = []
    for k, (pair, prev) in enumerate(zip(world.contacts, warm)):
        gf, gg = world.bodies[pair.body_f].geometry, world.bodies[pair.body_g].geometry
        n = _frame_normal(world, states, k, prev)
        d = world.dyn_index[pair.body_f]
        if d < 0:
            out.append(prev.copy())
            continue
        pose = free[pair.body_f].pose
        a1 = _lowest_point(gf, pose, n)
        a2 = a1 + n * (n @ (prev.a2 - a1))
        u = _anchored_guess(gf, pose, gg, states[pair.body_g].pose, a1, a2, -n, 0.0)
        body = world.bodies[pair.body_f]
        inertia = world_inertia(body, states[pair.body_f].orientation)
        r = a2 - pose.position
        arm = np.cross(r, n)
        reach = np.linalg.solve(inertia, arm)
        approach = n @ (nus[d][:3] + np.cross(nus[d][3:], r))
        u.p_n = max(0.0, -approach) / (1.0 / body.mass + arm @ reach)
        kicks[d] += u.p_n * np.concatenate([n / body.mass, reach])
        out.append(u)
    nus = [nu + kick for nu, kick in zip(nus, kicks)]
    for k, (pair, u) in enumerate(zip(world.contacts, out)):
        if u.p_n > 0.0:
            _, (u.p_t, u.p_o, u.p_r), u.sigma = _impulse_guess(
                world, _new_states(world, states, nus, params.h), pair,
                _frame_normal(world, states, k, warm[k]), u.a2, np.zeros_like(p_app), u.p_n,
            )
    return nus, out


def _lowest_point(geom, pose, normal) -> np.ndarray:
    """Point of the body extremal along ``-normal``, nearest the centre among ties."""
    centre = np.asarray(pose.position, dtype=float)
    start = support_point(geom, pose, -normal)
    scale = 1e-3
    res = minimize(
        lambda x: float(normal @ x + scale * (x - centre) @ (x - centre)), start,
        jac=lambda x: normal + 2 * scale * (x - centre),
        constraints=[{"type": "ineq", "fun": lambda x: -eval_constraints(geom, pose, x),
                      "jac": lambda x: -eval_gradients(geom, pose, x)}],
        method="SLSQP", options={"ftol": 1e-14, "maxiter": 200},
    )
    return res.x if res.success and max_violation(geom, pose, res.x) <= TOUCH_TOL else start


@dataclass
class ContactDiagnostics:
    facets: int
    mode: str
    gap: float
    normal: np.ndarray
    slip: np.ndarray
    slack: float
    dissipation: float
    normal_velocity: float
    L: float = float("nan")
    D: float = float("nan")


@dataclass
class StepResult:
    states: list[State]
    contacts: list[ContactUnknowns]
    report: object
    diagnostics: list[ContactDiagnostics]
    nus: list[np.ndarray]
    dormant: tuple[int, ...] = ()

    def warm_start(self) -> list[ContactUnknowns | None]:
        """Contact unknowns to seed the next step; None for pairs left out of this one."""
        return [None if k in self.dormant else u for k, u in enumerate(self.contacts)]


def advance_pose(state: State, nu, h: float) -> State:
    nu = np.asarray(nu, dtype=float)
    return State(
        state.position + h * nu[:3],
        integrate_orientation(state.orientation, nu[3:], h),
        nu[:3], nu[3:],
    )


def _rescale(u: ContactUnknowns, new_k1: int) -> ContactUnknowns:
    """Re-express multipliers so that ``new_k1`` carries the unit weight."""
    eff = u.effective_multipliers()
    w = eff[new_k1]
    v = u.copy()
    if w <= 1e-9:
        v.k1 = new_k1
        return v
    v.l_f = eff / w
    v.l_f[new_k1] = u.l_f[u.k1] * w
    v.l_g = u.l_g / w
    v.k1 = new_k1
    return v


def _k1_valid(world: World, states_new, k, u: ContactUnknowns) -> bool:
    pair = world.contacts[k]
    geom = world.bodies[pair.body_f].geometry
    values = eval_constraints(geom, states_new[pair.body_f].pose, u.a1)
    return values[u.k1] >= values.max() - TOUCH_TOL


def _new_states(world: World, states, nus, h):
    out = list(states)
    for d, b in enumerate(world.moving):
        out[b] = advance_pose(states[b], nus[d], h)
    return out


def _attempt(world, states, impulses, params, opts, nus0, guess):
    """Solve from ``guess``, re-anchoring when the anchor ends up inactive.
    Returns a StepResult or the last NotConverged."""
    tried = [{u.k1} for u in guess]
    failure = None
    for _ in range(1 + sum(world.sizes_f)):
        k1 = [u.k1 for u in guess]
        problem = assemble_step(world, states, impulses, params, k1)
        try:
            z, report = solve(problem, pack(world, nus0, guess), opts)
        except NotConverged as exc:
            return exc
        nus, unknowns = unpack(world, z, k1)
        new_states = _new_states(world, states, nus, params.h)
        bad = [k for k, u in enumerate(unknowns) if not _k1_valid(world, new_states, k, u)]
        if not bad:
            diags = [diagnose(world, new_states, k, u) for k, u in enumerate(unknowns)]
            return StepResult(new_states, unknowns, report, diags, nus)
        failure = NotConverged("no admissible anchoring constraint", z, report)
        changed = False
        for k in bad:
            alt = _next_k1(world, new_states, k, unknowns[k], tried[k])
            if alt is not None:
                tried[k].add(alt)
                guess[k] = _rescale(unknowns[k], alt)
                changed = True
        if not changed:
            break
        nus0 = nus
    return failure


def _guesses(world, states, impulses, params, warm):
    """Initial points in order of preference: warm start, predicted end-of-step contact,
    cold start, then the warm start re-anchored on each other constraint."""
    nus = [states[b].nu for b in world.moving]
    if warm is not None:
        guess = []
        for k, u in enumerate(warm):
            pair = world.contacts[k]
            toward = -_frame_normal(world, states, k, u)
            k1 = select_k1(world.bodies[pair.body_f].geometry, states[pair.body_f].pose, u.a1, toward)
            v = _rescale(u, k1) if k1 != u.k1 else u.copy()
            if v.p_n <= 1e-12:
                v.p_t = v.p_o = v.p_r = 0.0
                v.sigma = max(v.sigma, SEPARATED_SIGMA)
            guess.append(v)
        yield "warm", nus, guess
        yield ("predicted", *predicted_unknowns(world, states, warm, impulses, params))
    yield "cold", nus, initial_unknowns(world, states, impulses, params)
    if warm is not None:
        for k, u in enumerate(guess):
            for alt in range(world.sizes_f[k]):
                if alt != u.k1:
                    alternative = [v.copy() for v in guess]
                    alternative[k] = _rescale(u, alt)
                    yield f"anchor {alt}", nus, alternative


def _speed_bound(world: World, states, b, p_app) -> float:
    """Upper bound on the speed of any point of body ``b`` during the coming step."""
    d = world.dyn_index[b]
    if d < 0:
        return 0.0
    body, st = world.bodies[b], states[b]
    free = _free_velocities(world, states, p_app)[d]
    v = max(np.linalg.norm(st.linear_velocity), np.linalg.norm(free[:3]))
    w = max(np.linalg.norm(st.angular_velocity), np.linalg.norm(free[3:]))
    radius = bounding_radius(body.geometry) if body.geometry.bounded else 0.0
    return float(v + w * radius)


def _sphere_gap(world: World, states, pair: ContactPair) -> float:
    """Lower bound on the distance between the two bodies from their bounding spheres."""
    gaps = []
    spheres = []
    for b in (pair.body_f, pair.body_g):
        geom, pose = world.bodies[b].geometry, states[b].pose
        if geom.bounded:
            spheres.append((np.asarray(pose.position, dtype=float), bounding_radius(geom)))
        else:
            gaps.append(plane_in_world(geom, pose))
    if len(spheres) == 2:
        (cf, rf), (cg, rg) = spheres
        return float(np.linalg.norm(cf - cg) - rf - rg)
    (centre, radius), (n, offset) = spheres[0], gaps[0]
    return float(n @ centre - offset - radius)


def near_pairs(world: World, states, impulses=None, params: StepParams | None = None,
               warm=None) -> list[int]:
    """Contact pairs that could touch during the coming step (a conservative broad phase).
    Pairs that carried a normal impulse last step always count as near."""
    params = params or StepParams()
    p_app = build_context(world, states, impulses, params, [0] * len(world.contacts)).p_app
    out = []
    for k, pair in enumerate(world.contacts):
        if warm is not None and warm[k] is not None and warm[k].p_n > 0.0:
            out.append(k)
            continue
        reach = 2.0 * params.h * (_speed_bound(world, states, pair.body_f, p_app)
                                  + _speed_bound(world, states, pair.body_g, p_app))
        size = sum(bounding_radius(world.bodies[b].geometry) for b in (pair.body_f, pair.body_g)
                   if world.bodies[b].geometry.bounded)
        if _sphere_gap(world, states, pair) <= reach + BROAD_SLACK * size:
            out.append(k)
    return out


def _dormant_contact(world: World, states, k) -> tuple[ContactUnknowns, ContactDiagnostics]:
    """Placeholder unknowns for a pair left out of the step: support points facing each other."""
    pair = world.contacts[k]
    bf, bg = world.bodies[pair.body_f], world.bodies[pair.body_g]
    sf, sg = states[pair.body_f], states[pair.body_g]
    if bg.geometry.bounded:
        toward = sg.position - sf.position
        a1 = support_point(bf.geometry, sf.pose, toward)
        a2 = support_point(bg.geometry, sg.pose, -toward)
    else:
        n, offset = plane_in_world(bg.geometry, sg.pose)
        a1 = support_point(bf.geometry, sf.pose, -n)
        a2 = a1 - (n @ a1 - offset) * n
    u = ContactUnknowns(a1, a2, np.zeros(bf.geometry.size), np.zeros(bg.geometry.size), sigma=SEPARATED_SIGMA)
    gap = float(np.linalg.norm(a1 - a2))
    normal = (a1 - a2) / gap if gap > 0 else np.array([0.0, 0.0, 1.0])
    vrel = sf.linear_velocity + np.cross(sf.angular_velocity, a1 - sf.position)
    if not bg.fixed:
        vrel = vrel - sg.linear_velocity - np.cross(sg.angular_velocity, a2 - sg.position)
    diag = ContactDiagnostics(
        facets=0, mode="none", gap=gap, normal=normal, slip=np.zeros(3), slack=0.0,
        dissipation=0.0, normal_velocity=float(normal @ vrel),
    )
    return u, diag


def _subworld(world: World, active) -> World:
    cache = world.__dict__.setdefault("_subworlds", {})
    key = tuple(active)
    if key not in cache:
        cache[key] = World(world.bodies, [world.contacts[k] for k in active])
    return cache[key]


def advance(world: World, states, impulses=None, params: StepParams | None = None,
            opts: SolveOptions | None = None, warm: list[ContactUnknowns | None] | None = None) -> StepResult:
    """Advance all bodies by one step. Pairs that cannot touch during the step are left out
    of the MNCP; the rest are solved together, warm-started from ``warm`` when given."""
    params = params or StepParams()
    opts = opts or SolveOptions()
    active = near_pairs(world, states, impulses, params, warm)
    if len(active) == len(world.contacts) and (warm is None or all(u is not None for u in warm)):
        return _solve_step(world, states, impulses, params, opts, warm)
    sub = _subworld(world, active)
    sub_warm = None
    if warm is not None and any(warm[k] is not None for k in active):
        sub_warm = []
        for k in active:
            if warm[k] is not None:
                sub_warm.append(warm[k])
            else:
                single = _subworld(world, [k])
                sub_warm.append(initial_unknowns(single, states, impulses, params)[0])
    inner = _solve_step(sub, states, impulses, params, opts, sub_warm)
    contacts, diags = [], []
    slot = {k: i for i, k in enumerate(active)}
    for k in range(len(world.contacts)):
        if k in slot:
            contacts.append(inner.contacts[slot[k]])
            diags.append(inner.diagnostics[slot[k]])
        else:
            u, diag = _dormant_contact(world, inner.states, k)
            contacts.append(u)
            diags.append(diag)
    dormant = tuple(k for k in range(len(world.contacts)) if k not in slot)
    return StepResult(inner.states, contacts, inner.report, diags, inner.nus, dormant)


def _solve_step(world: World, states, impulses, params: StepParams, opts: SolveOptions,
                warm: list[ContactUnknowns] | None) -> StepResult:
    failure = None
    for label, nus0, guess in _guesses(world, states, impulses, params, warm):
        outcome = _attempt(world, states, impulses, params, opts, nus0, guess)
        if isinstance(outcome, StepResult):
            if label != "warm":
                log.debug("step solved from the %s guess", label)
            return outcome
        log.debug("%s guess failed: %s", label, outcome)
        if failure is None or outcome.report.residual < failure.report.residual:
            failure = outcome
    raise failure


def _next_k1(world: World, states, k, u: ContactUnknowns, tried) -> int | None:
    """Best untried F-constraint: active ones first, ordered by weight then value."""
    pair = world.contacts[k]
    geom = world.bodies[pair.body_f].geometry
    values = eval_constraints(geom, states[pair.body_f].pose, u.a1)
    eff = u.effective_multipliers()
    order = sorted(range(geom.size), key=lambda i: (values[i] < values.max() - TOUCH_TOL, -eff[i], -values[i], i))
    for i in order:
        if i not in tried:
            return i
    return None


def _frame_normal(world: World, states, k, u: ContactUnknowns) -> np.ndarray:
    pair = world.contacts[k]
    mode, n = _fixed_normal(world, pair, states[pair.body_g])
    if mode == 0:
        return n
    g = eval_gradients(world.bodies[pair.body_g].geometry, states[pair.body_g].pose, u.a2)
    combo = u.l_g @ g
    if np.linalg.norm(combo) > 1e-12:
        return combo / np.linalg.norm(combo)
    return _outward(world.bodies[pair.body_g].geometry, states[pair.body_g].pose, u.a2)


def contact_frame_of(world: World, states, k, u: ContactUnknowns) -> ContactFrame:
    n = _frame_normal(world, states, k, u)
    t, o = tangent_basis(n)
    return ContactFrame(n, t, o, u.a2.copy())


def in_contact(u: ContactUnknowns) -> bool:
    return np.linalg.norm(u.a1 - u.a2) <= TOUCH_TOL and u.p_n > 1e-12


def active_facet_count(result: StepResult, contact_index: int) -> int:
    """Number of F constraints with positive weight in the normal cone (0 when apart)."""
    u = result.contacts[contact_index]
    if not in_contact(u):
        return 0
    return int(np.sum(u.effective_multipliers() > 1e-6))


def _patch_dimension(geom, weights) -> int:
    codim = 0
    for s, w in zip(geom.constraints, weights):
        if w > 1e-6:
            codim += max(1, np.linalg.matrix_rank(s.Q))
    return max(0, 3 - codim)


def line_coordinates(a, q, theta_z) -> tuple[float, float]:
    dx, dy = a[0] - q[0], a[1] - q[1]
    c, s = np.cos(theta_z), np.sin(theta_z)
    return c * dx + s * dy, s * dx - c * dy


def axis_heading(orientation) -> float:
    """Heading in (−π/2, π/2] of a cylinder's body-Y axis projected on the ground."""
    axis = quat_to_rotation(orientation)[:, 1]
    theta = np.arctan2(axis[1], axis[0])
    if theta <= -np.pi / 2:
        theta += np.pi
    elif theta > np.pi / 2:
        theta -= np.pi
    return float(theta)


def diagnose(world: World, states, k, u: ContactUnknowns) -> ContactDiagnostics:
    pair = world.contacts[k]
    body_f = world.bodies[pair.body_f]
    frame = contact_frame_of(world, states, k, u)
    sf = states[pair.body_f]
    vrel = sf.linear_velocity + np.cross(sf.angular_velocity, u.a2 - sf.position)
    wrel = sf.angular_velocity.copy()
    if not world.bodies[pair.body_g].fixed:
        sg = states[pair.body_g]
        vrel -= sg.linear_velocity + np.cross(sg.angular_velocity, u.a2 - sg.position)
        wrel -= sg.angular_velocity
    slip = np.array([frame.t @ vrel, frame.o @ vrel, frame.n @ wrel])
    touching = in_contact(u)
    weights = u.effective_multipliers()
    facets = int(np.sum(weights > 1e-6)) if touching else 0
    dim = _patch_dimension(body_f.geometry, weights) if touching else -1
    mode = {-1: "none", 0: "point", 1: "line", 2: "surface"}[dim]
    diag = ContactDiagnostics(
        facets=facets, mode=mode, gap=float(np.linalg.norm(u.a1 - u.a2)), normal=frame.n,
        slip=slip, slack=ellipsoid_slack(u.p_n, u.p_t, u.p_o, u.p_r, pair.friction),
        dissipation=dissipation(*slip, u.p_t, u.p_o, u.p_r), normal_velocity=float(frame.n @ vrel),
    )
    if body_f.geometry.kind == "cylinder" and mode == "line":
        diag.L, diag.D = line_coordinates(u.a2, sf.position, axis_heading(sf.orientation))
    return diag


def plane_gap(body: RigidBody, state: State, normal, offset: float) -> float:
    """Signed distance from the plane ``n·x = d`` to the lowest point of the body."""
    n = np.asarray(normal, dtype=float)
    return float(n @ support_point(body.geometry, state.pose, -n) - offset)


def ecp_wrench_from_state(state_new: State, body: RigidBody, plane_normal, plane_offset: float,
                          impulse: AppliedImpulse | None, params: StepParams, state_old: State,
                          tol: float = 1e-6):
    """Recover (a2, p_n, p_t, p_o, p_r) of a single plane contact from two consecutive states."""
    n = np.asarray(plane_normal, dtype=float)
    n = n / np.linalg.norm(n)
    if plane_gap(body, state_new, n, plane_offset) > tol:
        raise NoContact("body is not touching the plane")
    t, o = tangent_basis(n)
    C = np.column_stack([n, t, o])
    p_app = (impulse or AppliedImpulse()).vector()
    gravity = np.array([0.0, 0.0, -body.mass * params.beta * params.h])
    rhs = body.mass * (state_new.linear_velocity - state_old.linear_velocity) - p_app[:3] - gravity
    p_n, p_t, p_o = C.T @ rhs
    A = p_n * n + p_t * t + p_o * o
    inertia = world_inertia(body, state_old.orientation)
    w = state_new.angular_velocity
    B = inertia @ (w - state_old.angular_velocity) + params.h * np.cross(w, inertia @ w) - p_app[3:]
    if abs(A @ n) < 1e-12:
        raise SingularD("normal impulse vanishes; ECP is undetermined")
    D = np.zeros((4, 4))
    D[:3, :3] = -np.array([[0.0, -A[2], A[1]], [A[2], 0.0, -A[0]], [-A[1], A[0], 0.0]])
    D[:3, 3] = n
    D[3, :3] = n
    sol = np.linalg.solve(D, np.concatenate([B, [plane_offset - n @ state_new.position]]))
    return state_new.position + sol[:3], float(p_n), float(p_t), float(p_o), float(sol[3])


class Simulation:
    """Owns the evolving states and warm start for repeated ``advance`` calls."""

    def __init__(self, world: World, states, params: StepParams | None = None, opts: SolveOptions | None = None):
        self.world = world
        self.states = list(states)
        self.params = params or StepParams()
        self.opts = opts or SolveOptions()
        self.warm = None
        self.time = 0.0
        self.steps = 0

    def step(self, impulses=None) -> StepResult:
        result = advance(self.world, self.states, impulses, self.params, self.opts, self.warm)
        self.states = result.states
        self.warm = result.warm_start()
        self.steps += 1
        self.time = self.steps * self.params.h
        return result
