"""Scenario configuration, impulse schedules, built-in scenarios and trajectory output.

A scenario is a JSON document; ``parse_config`` validates it (errors carry the
field path) and ``iterate`` steps it, yielding one ``StepRecord`` per step.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterator

import jsonschema
import numpy as np

from .body import RigidBody, State, cuboid_inertia, cylinder_inertia
from .contact import ContactPair, FrictionParams
from .geometry import cuboid, cylinder, halfspace, sphere
from .mncp import SolveOptions
from .stepper import AppliedImpulse, Simulation, StepParams, StepResult, World

SPIN_ZERO_TOL = 1e-6
TIME_EPS = 1e-9

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_VEC4 = {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4}
_VEC6 = {"type": "array", "items": {"type": "number"}, "minItems": 6, "maxItems": 6}
_BODY_REF = {"anyOf": [{"type": "string"}, {"type": "integer", "minimum": 0}]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["bodies", "duration"],
    "properties": {
        "name": {"type": "string"},
        "notes": {"type": "string"},
        "gravity": {"type": "number", "minimum": 0},
        "step": {"type": "number", "exclusiveMinimum": 0},
        "duration": {"type": "number", "exclusiveMinimum": 0},
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
                "max_iterations": {"type": "integer", "minimum": 1},
                "restarts": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer"},
            },
        },
        "bodies": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["name", "shape"],
                "properties": {
                    "name": {"type": "string"},
                    "shape": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["kind"],
                        "properties": {
                            "kind": {"enum": ["cuboid", "cylinder", "sphere", "halfspace"]},
                            "size": {**_VEC3, "items": {"type": "number", "exclusiveMinimum": 0}},
                            "radius": {"type": "number", "exclusiveMinimum": 0},
                            "length": {"type": "number", "exclusiveMinimum": 0},
                            "normal": _VEC3,
                            "offset": {"type": "number"},
                        },
                    },
                    "fixed": {"type": "boolean"},
                    "mass": {"type": "number", "exclusiveMinimum": 0},
                    "inertia": {"anyOf": [_VEC3, {"type": "array", "items": _VEC3, "minItems": 3, "maxItems": 3}]},
                    "position": _VEC3,
                    "orientation": _VEC4,
                    "linear_velocity": _VEC3,
                    "angular_velocity": _VEC3,
                },
            },
        },
        "contacts": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["body_f", "body_g", "friction"],
                "properties": {
                    "body_f": _BODY_REF,
                    "body_g": _BODY_REF,
                    "friction": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["mu"],
                        "properties": {
                            "mu": {"type": "number", "minimum": 0},
                            "e_t": {"type": "number", "exclusiveMinimum": 0},
                            "e_o": {"type": "number", "exclusiveMinimum": 0},
                            "e_r": {"type": "number", "exclusiveMinimum": 0},
                        },
                    },
                },
            },
        },
        "schedule": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["body", "impulse"],
                "properties": {
                    "body": _BODY_REF,
                    "impulse": _VEC6,
                    "t_start": {"type": "number", "minimum": 0},
                    "t_end": {"type": "number", "minimum": 0},
                    "additive": {"type": "boolean"},
                    "condition": {"enum": ["spin_z_crosses_zero"]},
                    "refractory": {"type": "integer", "minimum": 1},
                    "note": {"type": "string"},
                },
                "oneOf": [
                    {"required": ["t_start", "t_end"], "not": {"required": ["condition"]}},
                    {"required": ["condition"], "not": {"anyOf": [{"required": ["t_start"]}, {"required": ["t_end"]}]}},
                ],
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": "string"},
                "fields": {"type": "array", "items": {"type": "string"}},
            },
        },
    },
}


class ConfigError(ValueError):
    """Invalid scenario document; the message starts with the offending field path."""


@dataclass(frozen=True)
class ScheduleEntry:
    """Timed (``t_start ≤ t ≤ t_end`` on step start times) or triggered by ``condition``."""

    body: int
    impulse: AppliedImpulse
    t_start: float | None = None
    t_end: float | None = None
    additive: bool = False
    condition: str | None = None
    refractory: int = 1

    @property
    def triggered(self) -> bool:
        return self.condition is not None


@dataclass
class ScenarioConfig:
    name: str
    bodies: list[RigidBody]
    initial: list[State]
    contacts: list[ContactPair]
    gravity: float
    step: float
    duration: float
    solver: SolveOptions
    schedule: list[ScheduleEntry]
    output_path: str | None = None
    fields: list[str] | None = None
    document: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.step))

    def world(self) -> World:
        return World(self.bodies, self.contacts)

    def params(self) -> StepParams:
        return StepParams(self.step, self.gravity)


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def _schema_error(err: jsonschema.ValidationError) -> ConfigError:
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        names = ", ".join(_path([*err.absolute_path, e]) for e in extra)
        return ConfigError(f"{names}: unknown field")
    return ConfigError(f"{_path(err.absolute_path)}: {err.message}")


def _shape(spec: dict):
    kind = spec["kind"]
    need = {"cuboid": ["size"], "cylinder": ["radius", "length"], "sphere": ["radius"], "halfspace": []}[kind]
    for key in need:
        if key not in spec:
            raise KeyError(key)
    if kind == "cuboid":
        return cuboid(spec["size"])
    if kind == "cylinder":
        return cylinder(spec["radius"], spec["length"])
    if kind == "sphere":
        return sphere(spec["radius"])
    return halfspace(spec.get("normal", [0.0, 0.0, 1.0]), spec.get("offset", 0.0))


def _inertia(spec: dict, mass: float) -> np.ndarray:
    shape = spec["shape"]
    if "inertia" in spec:
        value = np.asarray(spec["inertia"], dtype=float)
        return np.diag(value) if value.ndim == 1 else value
    if shape["kind"] == "cuboid":
        return cuboid_inertia(mass, shape["size"])
    if shape["kind"] == "cylinder":
        return cylinder_inertia(mass, shape["radius"], shape["length"])
    if shape["kind"] == "sphere":
        return 0.4 * mass * shape["radius"] ** 2 * np.eye(3)
    raise ValueError("an inertia is required for this shape")


def _body_index(ref, names: list[str], where: str) -> int:
    if isinstance(ref, int):
        if ref >= len(names):
            raise ConfigError(f"{where}: body {ref} does not exist")
        return ref
    if ref not in names:
        raise ConfigError(f"{where}: body {ref!r} does not exist")
    return names.index(ref)


def csv_columns(bodies: list[RigidBody], n_contacts: int) -> list[str]:
    cols = ["t"]
    for body in bodies:
        if body.fixed:
            continue
        n = body.name
        cols += [f"{n}.{s}" for s in ("x", "y", "z", "qw", "qx", "qy", "qz", "vx", "vy", "vz", "wx", "wy", "wz")]
    for k in range(n_contacts):
        cols += [f"c{k}.{s}" for s in ("a2x", "a2y", "a2z", "p_n", "p_t", "p_o", "p_r", "sigma", "N", "gap", "L", "D")]
    return cols


def from_document(doc: dict) -> ScenarioConfig:
    """Validate a decoded JSON document and build the scenario."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        deepest = max(errors, key=lambda e: len(e.absolute_path))
        additional = [e for e in errors if e.validator == "additionalProperties"]
        raise _schema_error(additional[0] if additional else deepest)

    bodies, initial, names = [], [], []
    for i, spec in enumerate(doc["bodies"]):
        where = f"bodies[{i}]"
        if spec["name"] in names:
            raise ConfigError(f"{where}.name: duplicate body name {spec['name']!r}")
        try:
            geom = _shape(spec["shape"])
        except KeyError as exc:
            raise ConfigError(f"{where}.shape.{exc.args[0]}: required for a {spec['shape']['kind']}") from None
        fixed = spec.get("fixed", False)
        if not geom.bounded and not fixed:
            raise ConfigError(f"{where}.fixed: a half-space must be fixed")
        if fixed:
            body = RigidBody(spec["name"], geom, fixed=True)
        else:
            if "mass" not in spec:
                raise ConfigError(f"{where}.mass: required for a moving body")
            try:
                body = RigidBody(spec["name"], geom, spec["mass"], _inertia(spec, spec["mass"]))
            except ValueError as exc:
                raise ConfigError(f"{where}.inertia: {exc}") from None
        orientation = spec.get("orientation", [1.0, 0.0, 0.0, 0.0])
        if not np.linalg.norm(orientation) > 0:
            raise ConfigError(f"{where}.orientation: quaternion must be nonzero")
        initial.append(State(
            spec.get("position", [0.0, 0.0, 0.0]), orientation,
            spec.get("linear_velocity", [0.0, 0.0, 0.0]), spec.get("angular_velocity", [0.0, 0.0, 0.0]),
        ))
        bodies.append(body)
        names.append(spec["name"])

    contacts = []
    for k, spec in enumerate(doc.get("contacts", [])):
        where = f"contacts[{k}]"
        bf = _body_index(spec["body_f"], names, f"{where}.body_f")
        bg = _body_index(spec["body_g"], names, f"{where}.body_g")
        if bodies[bf].fixed:
            raise ConfigError(f"{where}.body_f: must be a moving body")
        if bf == bg:
            raise ConfigError(f"{where}.body_g: must differ from body_f")
        if not (bodies[bf].geometry.bounded or bodies[bg].geometry.bounded):
            raise ConfigError(f"{where}: at least one body must be bounded")
        fr = spec["friction"]
        contacts.append(ContactPair(bf, bg, FrictionParams(fr["mu"], fr.get("e_t", 1.0), fr.get("e_o", 1.0), fr.get("e_r", 1.0))))

    schedule = []
    for j, spec in enumerate(doc.get("schedule", [])):
        where = f"schedule[{j}]"
        b = _body_index(spec["body"], names, f"{where}.body")
        if bodies[b].fixed:
            raise ConfigError(f"{where}.body: impulses need a moving body")
        entry = ScheduleEntry(
            b, AppliedImpulse.from_vector(spec["impulse"]), spec.get("t_start"), spec.get("t_end"),
            spec.get("additive", False), spec.get("condition"), spec.get("refractory", 1),
        )
        if not entry.triggered and entry.t_end < entry.t_start:
            raise ConfigError(f"{where}.t_end: earlier than t_start")
        schedule.append(entry)
    _check_overlaps(schedule)

    solver = doc.get("solver", {})
    opts = SolveOptions(
        tolerance=solver.get("tolerance", 1e-8),
        max_iterations=solver.get("max_iterations", SolveOptions.max_iterations),
        restarts=solver.get("restarts", SolveOptions.restarts),
        seed=solver.get("seed", 0),
    )
    output = doc.get("output", {})
    fields = output.get("fields")
    if fields is not None:
        known = csv_columns(bodies, len(contacts))
        for i, name in enumerate(fields):
            if name not in known:
                raise ConfigError(f"output.fields[{i}]: unknown column {name!r}")
    return ScenarioConfig(
        name=doc.get("name", "scenario"), bodies=bodies, initial=initial, contacts=contacts,
        gravity=doc.get("gravity", 9.8), step=doc.get("step", 0.01), duration=doc["duration"],
        solver=opts, schedule=schedule, output_path=output.get("path"), fields=fields,
        document=copy.deepcopy(doc),
    )


def _check_overlaps(schedule: list[ScheduleEntry]):
    timed = [(j, e) for j, e in enumerate(schedule) if not e.triggered]
    for a, (i, x) in enumerate(timed):
        for j, y in timed[a + 1:]:
            if x.body != y.body or (x.additive and y.additive):
                continue
            if x.t_start <= y.t_end + TIME_EPS and y.t_start <= x.t_end + TIME_EPS:
                raise ConfigError(f"schedule[{j}]: overlaps schedule[{i}] on the same body (set additive on both)")


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate a JSON scenario document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<root>: not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(doc, dict):
        raise ConfigError("<root>: expected a JSON object")
    return from_document(doc)


class ImpulseSchedule:
    """Evaluates timed and triggered entries step by step; triggers keep their own memory."""

    def __init__(self, entries: list[ScheduleEntry], h: float):
        self.entries = entries
        self.h = h
        self._previous: dict[int, float] = {}
        self._blocked = [0] * len(entries)

    def impulses(self, step: int, states: list[State]) -> dict[int, AppliedImpulse]:
        t = step * self.h
        out: dict[int, AppliedImpulse] = {}

        def add(body, impulse):
            out[body] = out[body] + impulse if body in out else impulse

        for j, entry in enumerate(self.entries):
            if entry.triggered:
                if self._fires(j, entry, states):
                    add(entry.body, entry.impulse)
            elif entry.t_start - TIME_EPS <= t <= entry.t_end + TIME_EPS:
                add(entry.body, entry.impulse)
        return out

    def _fires(self, j: int, entry: ScheduleEntry, states) -> bool:
        w_z = float(states[entry.body].angular_velocity[2])
        previous = self._previous.get(j)
        self._previous[j] = w_z
        if self._blocked[j] > 0:
            self._blocked[j] -= 1
            return False
        if previous is None:
            return False
        crossed = np.sign(w_z) != np.sign(previous) or abs(w_z) < SPIN_ZERO_TOL
        if crossed:
            self._blocked[j] = entry.refractory
        return bool(crossed)


@dataclass
class StepRecord:
    step: int
    t: float
    before: list[State]
    impulses: dict[int, AppliedImpulse]
    result: StepResult


def iterate(config: ScenarioConfig, steps: int | None = None, tolerance: float | None = None) -> Iterator[StepRecord]:
    """Step the scenario; NotConverged propagates after the records already yielded."""
    opts = config.solver
    if tolerance is not None:
        opts = SolveOptions(**{**opts.__dict__, "tolerance": tolerance})
    sim = Simulation(config.world(), config.initial, config.params(), opts)
    schedule = ImpulseSchedule(config.schedule, config.step)
    total = config.steps if steps is None else steps
    for k in range(total):
        before = sim.states
        impulses = schedule.impulses(k, before)
        result = sim.step(impulses or None)
        yield StepRecord(k, round((k + 1) * config.step, 12), before, impulses, result)


def record_row(config: ScenarioConfig, record: StepRecord) -> list[float]:
    row = [record.t]
    for b, body in enumerate(config.bodies):
        if body.fixed:
            continue
        st = record.result.states[b]
        row += [*st.position, *st.orientation, *st.linear_velocity, *st.angular_velocity]
    for u, d in zip(record.result.contacts, record.result.diagnostics):
        row += [*u.a2, u.p_n, u.p_t, u.p_o, u.p_r, u.sigma, d.facets, d.gap, d.L, d.D]
    return row


def format_value(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else f"{x:.17g}"


class TrajectoryWriter:
    """CSV with a fixed header; floats keep 17 significant digits."""

    def __init__(self, stream: io.TextIOBase, config: ScenarioConfig):
        self.config = config
        columns = csv_columns(config.bodies, len(config.contacts))
        self.keep = list(range(len(columns))) if config.fields is None else [0] + [
            columns.index(f) for f in config.fields if f != "t"
        ]
        self.writer = csv.writer(stream, lineterminator="\n")
        self.writer.writerow([columns[i] for i in self.keep])
        self.rows = 0

    def write(self, record: StepRecord):
        row = record_row(self.config, record)
        self.writer.writerow([format_value(row[i]) for i in self.keep])
        self.rows += 1


# -- built-in scenarios -------------------------------------------------------

_GROUND = {"name": "ground", "shape": {"kind": "halfspace"}, "fixed": True}


def _scenario1() -> dict:
    return {
        "name": "scenario1",
        "notes": "Unit cube sliding flat on the ground with isotropic friction.",
        "duration": 4.0,
        "bodies": [
            {"name": "cube", "shape": {"kind": "cuboid", "size": [1.0, 1.0, 1.0]}, "mass": 1.0,
             "position": [0.0, 0.0, 0.5], "orientation": [1.0, 0.0, 0.0, 0.0],
             "linear_velocity": [4.0, 3.0, 0.0], "angular_velocity": [0.0, 0.0, 0.0]},
            _GROUND,
        ],
        "contacts": [{"body_f": "cube", "body_g": "ground", "friction": {"mu": 0.12, "e_t": 1.0, "e_o": 1.0, "e_r": 1.0}}],
    }


def _scenario2() -> dict:
    half = math.sqrt(0.5)
    return {
        "name": "scenario2",
        "notes": ("Cylinder lying on its side, its axis along world X, sliding and spinning; "
                  "each time the spin about Z reaches zero a 3 N·m·s spin impulse is applied."),
        "duration": 10.0,
        "bodies": [
            {"name": "cylinder", "shape": {"kind": "cylinder", "radius": 1.0, "length": 5.0}, "mass": 10.0,
             "position": [0.0, 0.0, 1.0], "orientation": [half, 0.0, 0.0, half],
             "linear_velocity": [0.0, -1.4, 0.0], "angular_velocity": [0.0, 0.0, 0.2]},
            _GROUND,
        ],
        "contacts": [{"body_f": "cylinder", "body_g": "ground", "friction": {"mu": 0.3, "e_t": 1.0, "e_o": 1.0, "e_r": 1.0}}],
        "schedule": [{"body": "cylinder", "condition": "spin_z_crosses_zero", "impulse": [0, 0, 0, 0, 0, 3.0], "refractory": 1}],
    }


def _scenario3() -> dict:
    theta = math.atan(math.sqrt(2.0))
    s = math.sin(theta / 2) / math.sqrt(2.0)
    r6, r2 = math.sqrt(6.0) / 4, math.sqrt(2.0) / 2
    return {
        "name": "scenario3",
        "notes": "Unit cube balanced on a vertex, falling to an edge and then a face; pushed at 1 s and 1.8 s.",
        "duration": 4.0,
        "bodies": [
            {"name": "cube", "shape": {"kind": "cuboid", "size": [1.0, 1.0, 1.0]}, "mass": 1.0,
             "position": [0.0, 0.0, math.sqrt(3.0) / 2], "orientation": [math.cos(theta / 2), s, -s, 0.0],
             "linear_velocity": [-r6, -r6, 0.0], "angular_velocity": [r2, -r2, 0.0]},
            _GROUND,
        ],
        "contacts": [{"body_f": "cube", "body_g": "ground", "friction": {"mu": 0.2, "e_t": 1.0, "e_o": 1.0, "e_r": 1.0}}],
        "schedule": [
            {"body": "cube", "t_start": 1.0, "t_end": 1.0, "impulse": [r2, -r2, 0.0, 0.5, 0.5, 0.0]},
            {"body": "cube", "t_start": 1.8, "t_end": 1.8, "impulse": [10.0, -10.0, 0.0, 0.0, 0.0, 0.0]},
        ],
    }


# (t_start, t_end, impulse per step, purpose)
_SCENARIO4_SCHEDULE = [
    (0.00, 0.04, [0, 0, 0, 3.0, 0, 0], "tip the standing cylinder over"),
    (0.65, 0.68, [0, 0, 0, 0, 1.4, 0], "start rolling along +X"),
    (1.46, 1.49, [0, 0, 0, 0, -1.4, 0], "brake the roll"),
    (1.50, 1.52, [0, 0, 18.0, 2.7, 0, 0], "lift one end onto the rim"),
    (1.53, 1.59, [0, 0, 0, 0, 0, 1.0], "pivot about the rim point"),
    (2.15, 2.18, [0, 0, 0, -1.0117, 1.2534, 0], "roll in the new heading"),
    (3.21, 3.24, [0, 0, 0, 0.879, -1.089, 0], "stop the roll"),
    (3.25, 3.44, [0, 0, 0, -1.3226, -1.0676, 0], "raise the cylinder upright"),
    (3.65, 3.79, [0, 0, 0, 0.778, 0.628, 0], "damp the swing so it settles on its base"),
]


def _scenario4() -> dict:
    half = math.sqrt(0.5)
    steel = {"mu": 0.8, "e_t": 1.0, "e_o": 1.0, "e_r": 0.1}
    return {
        "name": "scenario4",
        "notes": ("Steel cylinder manipulated by applied impulses past two fixed cuboid obstacles: fall, roll, "
                  "pivot on the rim, roll, lift, settle. The impulse series is an implementer-chosen approximation "
                  "of a schedule that is only known qualitatively; e_r = 0.1 m is likewise chosen."),
        "duration": 5.0,
        "bodies": [
            {"name": "cylinder", "shape": {"kind": "cylinder", "radius": 0.1, "length": 0.3}, "mass": 75.0,
             "position": [0.0, 0.0, 0.15], "orientation": [half, half, 0.0, 0.0],
             "linear_velocity": [0.0, 0.0, 0.0], "angular_velocity": [0.0, 0.0, 0.0]},
            _GROUND,
            {"name": "obstacle1", "shape": {"kind": "cuboid", "size": [0.1, 0.3, 0.2]}, "fixed": True,
             "position": [1.1, -0.7, 0.1]},
            {"name": "obstacle2", "shape": {"kind": "cuboid", "size": [0.3, 0.1, 0.2]}, "fixed": True,
             "position": [-0.7, 0.7, 0.1]},
        ],
        "contacts": [
            {"body_f": "cylinder", "body_g": "ground", "friction": steel},
            {"body_f": "cylinder", "body_g": "obstacle1", "friction": steel},
            {"body_f": "cylinder", "body_g": "obstacle2", "friction": steel},
        ],
        "schedule": [
            {"body": "cylinder", "t_start": a, "t_end": b, "impulse": [float(x) for x in imp], "note": note}
            for a, b, imp, note in _SCENARIO4_SCHEDULE
        ],
    }


BUILTINS = {"scenario1": _scenario1, "scenario2": _scenario2, "scenario3": _scenario3, "scenario4": _scenario4}


def builtin_document(name: str) -> dict:
    if name not in BUILTINS:
        raise KeyError(f"unknown builtin scenario {name!r}; choose from {', '.join(BUILTINS)}")
    return BUILTINS[name]()


def builtin(name: str) -> ScenarioConfig:
    return from_document(builtin_document(name))
