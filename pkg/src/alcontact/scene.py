"""Scene files: JSON schema, loading into a :class:`World`, and generators.

A scene is a JSON object in SI units.  Minimal example::

    {
      "format": "alcontact-scene/1",
      "gravity": [0, 0, -9.81],
      "subsystems": [
        {"name": "ground", "bodies": [
          {"mass": 1, "inertia": [1, 1, 1], "joint": {"type": "fixed"},
           "shapes": [{"type": "halfspace", "normal": [0, 0, 1], "offset": 0}]}]},
        {"name": "ball", "q": [0, 0, 0.1, 0, 0, 0, 1], "bodies": [
          {"mass": 1, "joint": {"type": "floating"},
           "shapes": [{"type": "sphere", "radius": 0.1}]}]}
      ]
    }

Rotations are scalar-last quaternions ``[x, y, z, w]``.  Body and subsystem
references accept either an index or a name.  Spring ``stiffness`` and
``damping`` are per-step values (impulse per metre and per metre/second).
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from scipy.spatial.transform import Rotation

from .assembly import AssemblyConfig, JointLimit, Spring
from .collision import Box, Dish, DishProfile, HalfSpace, Sphere, supports_pair
from .multibody import Body, Joint, Subsystem
from .simulation import ExternalForce, World

__all__ = [
    "SCENE_FORMAT",
    "SCENE_SCHEMA",
    "SceneError",
    "builtin_scene",
    "builtin_scenes",
    "load_scene",
    "scene_from_dict",
    "dish_on_plate_scene",
    "particle_pour_scene",
    "sphere_crate_scene",
    "sphere_grid_scene",
    "sphere_stack_scene",
    "validate_scene",
]

SCENE_FORMAT = "alcontact-scene/1"

_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_quat = {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4}
_ref = {"type": ["integer", "string"]}
_pos = {"type": "number", "exclusiveMinimum": 0}

_shape = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["sphere", "box", "halfspace", "dish"]},
        "radius": _pos,
        "half_extents": _vec3,
        "normal": _vec3,
        "offset": {"type": "number"},
        "A": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "B": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "d": _pos,
        "position": _vec3,
        "rotation": _quat,
        "material": {"type": "string"},
    },
    "allOf": [
        {"if": {"properties": {"type": {"const": "sphere"}}}, "then": {"required": ["radius"]}},
        {"if": {"properties": {"type": {"const": "box"}}}, "then": {"required": ["half_extents"]}},
        {"if": {"properties": {"type": {"const": "dish"}}}, "then": {"required": ["A", "B", "d"]}},
    ],
    "additionalProperties": False,
}

_body = {
    "type": "object",
    "required": ["mass", "joint"],
    "properties": {
        "name": {"type": "string"},
        "mass": _pos,
        "inertia": {
            "oneOf": [
                _vec3,
                {"type": "array", "items": _vec3, "minItems": 3, "maxItems": 3},
            ]
        },
        "com": _vec3,
        "joint": {
            "type": "object",
            "required": ["type"],
            "properties": {
                "type": {"enum": ["fixed", "floating", "revolute", "prismatic"]},
                "parent": _ref,
                "axis": _vec3,
                "origin": _vec3,
                "rotation": _quat,
            },
            "additionalProperties": False,
        },
        "shapes": {"type": "array", "items": _shape},
    },
    "additionalProperties": False,
}

_anchor = {
    "type": "object",
    "required": ["subsystem", "body"],
    "properties": {"subsystem": _ref, "body": _ref, "point": _vec3},
    "additionalProperties": False,
}

SCENE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "alcontact scene",
    "type": "object",
    "required": ["format", "subsystems"],
    "properties": {
        "format": {"const": SCENE_FORMAT},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "gravity": _vec3,
        "dt": _pos,
        "theta": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "friction": {"type": "number", "minimum": 0},
        "materials": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["pair", "friction"],
                "properties": {
                    "pair": {"type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2},
                    "friction": {"type": "number", "minimum": 0},
                },
                "additionalProperties": False,
            },
        },
        "baumgarte": {"type": "number", "minimum": 0},
        "slop": {"type": "number", "minimum": 0},
        "margin": {"type": "number", "minimum": 0},
        "wrench_amplitude": {"type": "number", "minimum": 0},
        "subsystems": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["bodies"],
                "properties": {
                    "name": {"type": "string"},
                    "bodies": {"type": "array", "minItems": 1, "items": _body},
                    "q": {"type": "array", "items": {"type": "number"}},
                    "v": {"type": "array", "items": {"type": "number"}},
                },
                "additionalProperties": False,
            },
        },
        "limits": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["subsystem", "dof"],
                "properties": {
                    "subsystem": _ref,
                    "dof": {"type": "integer", "minimum": 0},
                    "lower": {"type": "number"},
                    "upper": {"type": "number"},
                },
                "additionalProperties": False,
            },
        },
        "springs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["a", "rest_length", "stiffness", "damping"],
                "properties": {
                    "a": _anchor,
                    "b": _anchor,
                    "world": _vec3,
                    "rest_length": {"type": "number", "minimum": 0},
                    "stiffness": _pos,
                    "damping": _pos,
                },
                "additionalProperties": False,
            },
        },
        "forces": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["subsystem", "body"],
                "properties": {
                    "subsystem": _ref,
                    "body": _ref,
                    "force": _vec3,
                    "torque": _vec3,
                    "start": {"type": "number"},
                    "end": {"type": "number"},
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}


class SceneError(ValueError):
    """The scene file is malformed or describes an unsupported setup."""


def validate_scene(data: dict):
    """Check ``data`` against :data:`SCENE_SCHEMA`.

    Raises:
        SceneError: with the failing path in the message.
    """
    try:
        jsonschema.validate(data, SCENE_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SceneError(f"scene invalid at {where}: {exc.message}") from None


def _rotation(quat):
    if quat is None:
        return np.eye(3)
    q = np.asarray(quat, dtype=float)
    if np.linalg.norm(q) == 0:
        raise SceneError("zero quaternion")
    return Rotation.from_quat(q).as_matrix()


def _shape(spec):
    kw = {
        "position": spec.get("position", [0.0, 0.0, 0.0]),
        "rotation": _rotation(spec.get("rotation")),
        "material": spec.get("material", "default"),
    }
    kind = spec["type"]
    try:
        if kind == "sphere":
            return Sphere(spec["radius"], **kw)
        if kind == "box":
            return Box(spec["half_extents"], **kw)
        if kind == "halfspace":
            normal = np.asarray(spec.get("normal", [0.0, 0.0, 1.0]), dtype=float)
            return HalfSpace(normal / np.linalg.norm(normal), spec.get("offset", 0.0), **kw)
        return Dish(DishProfile(spec["A"], spec["B"], spec["d"]), **kw)
    except ValueError as exc:
        raise SceneError(str(exc)) from None


def _default_inertia(mass, shapes):
    if shapes and isinstance(shapes[0], Sphere):
        return np.eye(3) * 0.4 * mass * shapes[0].radius**2
    if shapes and isinstance(shapes[0], Box):
        x, y, z = 2 * shapes[0].half_extents
        return np.diag([y * y + z * z, x * x + z * z, x * x + y * y]) * mass / 12.0
    raise SceneError("inertia is required unless the first shape is a sphere or a box")


def _resolve(ref, names, what):
    if isinstance(ref, int):
        if not -1 <= ref < len(names):
            raise SceneError(f"{what} index {ref} out of range")
        return ref
    if ref not in names:
        raise SceneError(f"unknown {what} {ref!r}")
    return names.index(ref)


def scene_from_dict(data: dict) -> World:
    """Validate and build a :class:`World`.

    Raises:
        SceneError: schema violations, dangling references, inconsistent
            state vectors or collision pairs without a narrow-phase routine.
    """
    validate_scene(data)
    subsystems, sub_names, body_names = [], [], []
    for si, sd in enumerate(data["subsystems"]):
        names = [b.get("name", f"body{k}") for k, b in enumerate(sd["bodies"])]
        bodies = []
        for k, bd in enumerate(sd["bodies"]):
            jd = bd["joint"]
            parent = jd.get("parent", -1)
            parent = _resolve(parent, names, "body") if parent != -1 else -1
            joint = Joint(
                jd["type"],
                parent,
                axis=jd.get("axis", [0.0, 0.0, 1.0]),
                origin=jd.get("origin", [0.0, 0.0, 0.0]),
                rotation=_rotation(jd.get("rotation")),
            )
            shapes = [_shape(s) for s in bd.get("shapes", [])]
            inertia = bd.get("inertia")
            if inertia is None:
                inertia = _default_inertia(bd["mass"], shapes)
            elif np.ndim(inertia) == 1:
                inertia = np.diag(inertia)
            try:
                bodies.append(Body(bd["mass"], inertia, joint, com=bd.get("com", [0.0, 0.0, 0.0]), shapes=shapes, name=names[k]))
            except ValueError as exc:
                raise SceneError(f"subsystem {si}: {exc}") from None
        try:
            sub = Subsystem(bodies, name=sd.get("name", f"subsystem{si}"))
            if "q" in sd:
                sub.q = _state_vector(sd["q"], sub.nq, "q")
                _normalize_quaternions(sub)
            if "v" in sd:
                sub.v = _state_vector(sd["v"], sub.nv, "v")
        except ValueError as exc:
            raise SceneError(f"subsystem {si}: {exc}") from None
        subsystems.append(sub)
        sub_names.append(sub.name)
        body_names.append(names)

    _check_pairs(subsystems)

    def body_ref(d):
        s = _resolve(d["subsystem"], sub_names, "subsystem")
        return s, _resolve(d["body"], body_names[s], "body")

    table = {}
    for m in data.get("materials", []):
        table[tuple(sorted(m["pair"]))] = m["friction"]
    limits = []
    for ld in data.get("limits", []):
        s = _resolve(ld["subsystem"], sub_names, "subsystem")
        limits.append(JointLimit(s, ld["dof"], ld.get("lower", -np.inf), ld.get("upper", np.inf)))
    springs = []
    for sd in data.get("springs", []):
        a = body_ref(sd["a"]) + (np.asarray(sd["a"].get("point", [0.0, 0.0, 0.0]), dtype=float),)
        b = body_ref(sd["b"]) + (np.asarray(sd["b"].get("point", [0.0, 0.0, 0.0]), dtype=float),) if "b" in sd else None
        springs.append(Spring(a, b, sd["rest_length"], sd["stiffness"], sd["damping"], np.asarray(sd.get("world", [0.0, 0.0, 0.0]), dtype=float)))
    forces = []
    for fd in data.get("forces", []):
        s, k = body_ref(fd)
        forces.append(
            ExternalForce(
                s,
                k,
                np.asarray(fd.get("force", [0.0, 0.0, 0.0]), dtype=float),
                np.asarray(fd.get("torque", [0.0, 0.0, 0.0]), dtype=float),
                fd.get("start", 0.0),
                fd.get("end", np.inf),
            )
        )
    defaults = AssemblyConfig()
    return World(
        subsystems=subsystems,
        gravity=np.asarray(data.get("gravity", [0.0, 0.0, -9.81]), dtype=float),
        dt=data.get("dt", 1.0 / 240.0),
        theta=data.get("theta", 0.5),
        friction=data.get("friction", 0.5),
        friction_table=table,
        assembly=AssemblyConfig(
            data.get("baumgarte", defaults.baumgarte), data.get("slop", defaults.slop), data.get("margin", defaults.margin)
        ),
        limits=limits,
        springs=springs,
        forces=forces,
        wrench_amplitude=data.get("wrench_amplitude", 0.0),
        name=data.get("name", ""),
    )


def _state_vector(values, n, what):
    out = np.asarray(values, dtype=float)
    if out.shape != (n,):
        raise ValueError(f"{what} has length {out.size}, expected {n}")
    return out


def _normalize_quaternions(sub):
    for body, qs in zip(sub.bodies, sub.q_slices):
        if body.joint.kind.value == "floating":
            quat = sub.q[qs.start + 3:qs.stop]
            norm = np.linalg.norm(quat)
            if norm == 0:
                raise ValueError("floating joint with zero quaternion")
            sub.q[qs.start + 3:qs.stop] = quat / norm


def _check_pairs(subsystems):
    shapes = []
    for s, sub in enumerate(subsystems):
        for k, body in enumerate(sub.bodies):
            kinds = {shape.kind for shape in body.shapes}
            shapes.append(((s, k), kinds, sub.static_bodies[k]))
    for i, (ref_a, kinds_a, static_a) in enumerate(shapes):
        for ref_b, kinds_b, static_b in shapes[i + 1:]:
            if static_a and static_b:
                continue
            if ref_a[0] == ref_b[0]:
                sub = subsystems[ref_a[0]]
                if sub.bodies[ref_a[1]].joint.parent == ref_b[1] or sub.bodies[ref_b[1]].joint.parent == ref_a[1]:
                    continue
            for ka in kinds_a:
                for kb in kinds_b:
                    if not supports_pair(ka, kb):
                        raise SceneError(f"bodies {ref_a} and {ref_b}: unsupported collision pair {ka}-{kb}")


def load_scene(path) -> World:
    """Read, validate and build a scene file.

    Raises:
        SceneError: unreadable JSON or an invalid scene.
        OSError: the file cannot be opened.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: not valid JSON ({exc})") from None
    return scene_from_dict(data)


def builtin_scenes() -> list:
    """Names of the scenes shipped with the package."""
    root = resources.files("alcontact") / "scenes"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def builtin_scene(name: str) -> dict:
    """Parsed JSON of a shipped scene."""
    path = resources.files("alcontact") / "scenes" / f"{name}.json"
    return json.loads(path.read_text())


def _ground(friction_material="default"):
    return {
        "name": "ground",
        "bodies": [
            {
                "name": "ground",
                "mass": 1.0,
                "inertia": [1.0, 1.0, 1.0],
                "joint": {"type": "fixed"},
                "shapes": [{"type": "halfspace", "normal": [0, 0, 1], "offset": 0.0, "material": friction_material}],
            }
        ],
    }


def _ball(name, mass, radius, position, velocity=None):
    sub = {
        "name": name,
        "q": [*map(float, position), 0.0, 0.0, 0.0, 1.0],
        "bodies": [{"name": name, "mass": float(mass), "joint": {"type": "floating"}, "shapes": [{"type": "sphere", "radius": float(radius)}]}],
    }
    if velocity is not None:
        sub["v"] = [*map(float, velocity)]
    return sub


def sphere_stack_scene(masses, radius: float = 0.05, friction: float = 0.5, wrench_amplitude: float = 0.0, name: str = "") -> dict:
    """Vertical stack of touching spheres on the ground, bottom first."""
    subs = [_ground()]
    for k, m in enumerate(masses):
        subs.append(_ball(f"ball{k}", m, radius, [0.0, 0.0, radius * (2 * k + 1)]))
    return {
        "format": SCENE_FORMAT,
        "name": name or f"sphere-stack-{len(masses)}",
        "gravity": [0.0, 0.0, -9.81],
        "dt": 1.0 / 240.0,
        "theta": 0.5,
        "friction": friction,
        "wrench_amplitude": wrench_amplitude,
        "subsystems": subs,
    }


def sphere_grid_scene(count: int, radius: float = 0.05, spacing: float = 0.15, friction: float = 0.5, name: str = "") -> dict:
    """``count`` identical spheres resting on the ground in a square grid, not touching."""
    side = int(np.ceil(np.sqrt(count)))
    subs = [_ground()]
    for k in range(count):
        i, j = divmod(k, side)
        subs.append(_ball(f"ball{k}", 1.0, radius, [i * spacing, j * spacing, radius]))
    return {
        "format": SCENE_FORMAT,
        "name": name or f"sphere-grid-{count}",
        "gravity": [0.0, 0.0, -9.81],
        "dt": 1.0 / 240.0,
        "theta": 0.5,
        "friction": friction,
        "wrench_amplitude": 1.0,
        "subsystems": subs,
    }


def sphere_crate_scene(
    radius: float = 0.05,
    top_mass: float = 50.0,
    friction: float = 0.5,
    wrench_amplitude: float = 0.0,
    name: str = "",
) -> dict:
    """Four unit spheres packed in a square crate with a heavy sphere nested on top.

    The crate is one fixed body made of the ground and four walls.  Every
    base sphere touches the ground, two walls, two neighbours and the top
    sphere: 20 contacts in total.
    """
    r = radius
    walls = _crate_walls(2 * r)
    crate = {
        "name": "crate",
        "bodies": [{"name": "crate", "mass": 1.0, "inertia": [1.0, 1.0, 1.0], "joint": {"type": "fixed"}, "shapes": walls}],
    }
    subs = [crate]
    for k, (sx, sy) in enumerate([(-1, -1), (1, -1), (-1, 1), (1, 1)]):
        subs.append(_ball(f"base{k}", 1.0, r, [sx * r, sy * r, r]))
    subs.append(_ball("top", top_mass, r, [0.0, 0.0, r + np.sqrt(2.0) * r]))
    return {
        "format": SCENE_FORMAT,
        "name": name or "sphere-crate",
        "gravity": [0.0, 0.0, -9.81],
        "dt": 1.0 / 240.0,
        "theta": 0.5,
        "friction": friction,
        "wrench_amplitude": wrench_amplitude,
        "subsystems": subs,
    }


def _crate_walls(half_width):
    return [
        {"type": "halfspace", "normal": [0, 0, 1], "offset": 0.0},
        {"type": "halfspace", "normal": [1, 0, 0], "offset": -half_width},
        {"type": "halfspace", "normal": [-1, 0, 0], "offset": -half_width},
        {"type": "halfspace", "normal": [0, 1, 0], "offset": -half_width},
        {"type": "halfspace", "normal": [0, -1, 0], "offset": -half_width},
    ]


def particle_pour_scene(layers: int = 3, side: int = 3, radius: float = 0.02, friction: float = 0.4, name: str = "") -> dict:
    """``layers`` of ``side x side`` spheres released above an open box.

    Spheres start 10% of a diameter apart with small deterministic lateral
    offsets per layer so the pile does not stay perfectly aligned.
    """
    r = radius
    pitch = 2.2 * r
    half = 0.5 * side * pitch + 0.5 * r
    box = {"name": "box", "bodies": [{"name": "box", "mass": 1.0, "inertia": [1.0, 1.0, 1.0], "joint": {"type": "fixed"}, "shapes": _crate_walls(half)}]}
    subs = [box]
    for layer in range(layers):
        shift = 0.1 * r * (-1) ** layer
        for i in range(side):
            for j in range(side):
                x = (i - 0.5 * (side - 1)) * pitch + shift
                y = (j - 0.5 * (side - 1)) * pitch - shift
                subs.append(_ball(f"p{layer}{i}{j}", 0.05, r, [x, y, r + 0.01 + layer * pitch]))
    return {
        "format": SCENE_FORMAT,
        "name": name or f"particle-pour-{layers * side * side}",
        "description": "spheres dropped into an open box",
        "gravity": [0.0, 0.0, -9.81],
        "dt": 1.0 / 240.0,
        "theta": 0.5,
        "friction": friction,
        "wrench_amplitude": 0.05,
        "subsystems": subs,
    }


def dish_on_plate_scene(proxies: int = 6, friction: float = 0.5, name: str = "") -> dict:
    """A small dish, modelled by a ring of sphere proxies, resting in a fixed plate.

    The plate is a revolved dish profile with a flat bottom of radius 8 cm
    and a rim rising to 12 cm.  The moving dish is one rigid body carrying
    ``proxies`` spheres on a 5 cm ring, each touching the plate bottom.
    """
    pr, ring, d = 0.01, 0.05, 0.005
    plate = {
        "name": "plate",
        "bodies": [
            {
                "name": "plate",
                "mass": 1.0,
                "inertia": [1.0, 1.0, 1.0],
                "joint": {"type": "fixed"},
                "shapes": [{"type": "dish", "A": [0.08, 0.0], "B": [0.12, 0.03], "d": d, "material": "ceramic"}],
            }
        ],
    }
    mass = 0.3
    shapes = []
    for k in range(proxies):
        a = 2.0 * np.pi * k / proxies
        shapes.append({"type": "sphere", "radius": pr, "position": [ring * np.cos(a), ring * np.sin(a), 0.0], "material": "ceramic"})
    ixx = 0.5 * mass * ring**2
    dish = {
        "name": "dish",
        "q": [0.0, 0.0, d + pr, 0.0, 0.0, 0.0, 1.0],
        "bodies": [{"name": "dish", "mass": mass, "inertia": [ixx, ixx, 2 * ixx], "joint": {"type": "floating"}, "shapes": shapes}],
    }
    return {
        "format": SCENE_FORMAT,
        "name": name or "dish-on-plate",
        "description": "dish approximated by sphere proxies resting in a revolved plate",
        "gravity": [0.0, 0.0, -9.81],
        "dt": 1.0 / 240.0,
        "theta": 0.5,
        "friction": friction,
        "materials": [{"pair": ["ceramic", "ceramic"], "friction": 0.3}],
        "wrench_amplitude": 0.2,
        "subsystems": [plate, dish],
    }
