"""World state, contact detection and the time-stepping loop."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .assembly import AssemblyConfig, ConstraintKind, ContactProblem, JointLimit, SolverState, Spring, assemble
from .canal import CanalConfig, solve_canal
from .collision import ContactFeature, collide
from .multibody import Subsystem, mass_matrix, spatial_jacobian
from .pgs import PgsConfig, solve_pgs
from .subadmm import SubAdmmConfig, solve_subadmm

__all__ = [
    "SOLVERS",
    "ExternalForce",
    "MetricsRow",
    "SolverAbort",
    "SolverSettings",
    "World",
    "detect_contacts",
    "make_solver",
    "step",
    "system_energy",
    "system_momentum",
]

WARM_START_RADIUS = 5e-3


class SolverAbort(RuntimeError):
    """A solver produced non-finite iterates; the step cannot continue."""


@dataclass
class ExternalForce:
    """Constant wrench on a body (force at the COM, world frame) during ``[start, end)``."""

    subsystem: int
    body: int
    force: np.ndarray = field(default_factory=lambda: np.zeros(3))
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))
    start: float = 0.0
    end: float = np.inf


@dataclass
class World:
    """Everything needed to advance a scene.

    ``friction_table`` maps sorted material-name pairs to a friction
    coefficient; other pairs use ``friction``.
    """

    subsystems: list
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    dt: float = 1.0 / 240.0
    theta: float = 0.5
    friction: float = 0.5
    friction_table: dict = field(default_factory=dict)
    assembly: AssemblyConfig = field(default_factory=AssemblyConfig)
    limits: list = field(default_factory=list)
    springs: list = field(default_factory=list)
    forces: list = field(default_factory=list)
    wrench_amplitude: float = 0.0
    name: str = ""
    time: float = 0.0
    steps: int = 0
    _warm: dict = field(default_factory=dict, repr=False)
    _warm_vhat: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float)

    def pair_friction(self, mat_a: str, mat_b: str) -> float:
        return self.friction_table.get(tuple(sorted((mat_a, mat_b))), self.friction)

    def wrenches_at(self, t: float, extra: dict | None = None) -> dict:
        out = {}
        for f in self.forces:
            if f.start <= t < f.end:
                key = (f.subsystem, f.body)
                force, torque = out.get(key, (np.zeros(3), np.zeros(3)))
                out[key] = (force + f.force, torque + f.torque)
        for key, (force, torque) in (extra or {}).items():
            f0, t0 = out.get(key, (np.zeros(3), np.zeros(3)))
            out[key] = (f0 + force, t0 + torque)
        return out

    def dynamic_bodies(self) -> list:
        return [
            (s, k)
            for s, sub in enumerate(self.subsystems)
            for k, static in enumerate(sub.static_bodies)
            if not static
        ]

    def random_wrenches(self, rng: np.random.Generator, amplitude: float | None = None) -> dict:
        """Uniform wrenches in ``[-W, W]`` per component for every dynamic body."""
        w = self.wrench_amplitude if amplitude is None else amplitude
        out = {}
        for key in self.dynamic_bodies():
            draw = rng.uniform(-w, w, size=6)
            out[key] = (draw[:3], draw[3:])
        return out

    def snapshot(self) -> list:
        return [(sub.q.copy(), sub.v.copy()) for sub in self.subsystems]

    def restore(self, snap):
        for sub, (q, v) in zip(self.subsystems, snap):
            sub.q, sub.v = q.copy(), v.copy()

    def reset_warm_start(self):
        self._warm.clear()
        self._warm_vhat = []


def _adjacent(sub: Subsystem, a: int, b: int) -> bool:
    return sub.bodies[a].joint.parent == b or sub.bodies[b].joint.parent == a


def detect_contacts(world: World) -> list:
    """All contact features of the current configuration in a fixed order.

    Bodies of one subsystem joined directly by a joint do not collide.
    """
    bodies = []
    for s, sub in enumerate(world.subsystems):
        kin = sub.kinematics()
        for k, body in enumerate(sub.bodies):
            pose = (kin.rotations[k], kin.positions[k])
            bodies.append(((s, k), body, pose, sub.static_bodies[k]))
    features = []
    for ia in range(len(bodies)):
        ref_a, body_a, pose_a, static_a = bodies[ia]
        for ib in range(ia + 1, len(bodies)):
            ref_b, body_b, pose_b, static_b = bodies[ib]
            if static_a and static_b:
                continue
            if ref_a[0] == ref_b[0] and _adjacent(world.subsystems[ref_a[0]], ref_a[1], ref_b[1]):
                continue
            for sa, shape_a in enumerate(body_a.shapes):
                for sb, shape_b in enumerate(body_b.shapes):
                    reach = shape_a.bounding_radius + shape_b.bounding_radius + world.assembly.margin
                    ca = pose_a[1] + pose_a[0] @ shape_a.position
                    cb = pose_b[1] + pose_b[0] @ shape_b.position
                    if np.isfinite(reach) and np.linalg.norm(ca - cb) > reach:
                        continue
                    mu = world.pair_friction(shape_a.material, shape_b.material)
                    for n, f in enumerate(collide(shape_a, pose_a, shape_b, pose_b, world.assembly.margin)):
                        f.body_a, f.body_b, f.friction, f.tag = ref_a, ref_b, mu, (sa, sb)
                        features.append(f)
    return features


def system_energy(world: World) -> float:
    """Kinetic plus gravitational potential energy."""
    total = 0.0
    for sub in world.subsystems:
        if sub.is_static:
            continue
        kin = sub.kinematics()
        total += 0.5 * float(sub.v @ mass_matrix(sub, kin) @ sub.v)
        for k, body in enumerate(sub.bodies):
            if not sub.static_bodies[k]:
                total -= body.mass * float(world.gravity @ kin.coms[k])
    return total


def system_momentum(world: World) -> np.ndarray:
    """Total linear momentum of the dynamic bodies."""
    p = np.zeros(3)
    for sub in world.subsystems:
        if sub.is_static:
            continue
        kin = sub.kinematics()
        for k, body in enumerate(sub.bodies):
            if sub.static_bodies[k]:
                continue
            V = spatial_jacobian(kin, k) @ sub.v
            # COM velocity from the origin twist
            p += body.mass * (V[:3] + np.cross(V[3:], kin.coms[k]))
    return p


@dataclass
class SolverSettings:
    """Solver-independent knobs mapped onto each solver's configuration.

    ``max_iter`` means outer iterations for CANAL, iterations for SubADMM and
    sweeps for PGS; ``tol`` the matching stopping threshold; ``budget`` a
    solver time cap in seconds.
    """

    max_iter: int | None = None
    tol: float | None = None
    budget: float | None = None
    workers: int = 1


def make_solver(name: str, settings: SolverSettings | None = None) -> Callable:
    """``solve(problem, warm, trace=False)`` for a solver name."""
    s = settings or SolverSettings()
    if name == "canal":
        kw = {"time_budget": s.budget}
        if s.max_iter is not None:
            kw["max_al_iters"] = s.max_iter
        if s.tol is not None:
            kw["al_tol"] = s.tol
        cfg = CanalConfig(**kw)
        return lambda problem, warm=None, trace=False: solve_canal(problem, warm, cfg, trace)
    if name == "subadmm":
        kw = {"time_budget": s.budget, "workers": s.workers}
        if s.max_iter is not None:
            kw["l_max"] = s.max_iter
        if s.tol is not None:
            kw["tol"] = s.tol
        cfg = SubAdmmConfig(**kw)
        return lambda problem, warm=None, trace=False: solve_subadmm(problem, warm, cfg, trace)
    if name == "pgs":
        kw = {"time_budget": s.budget}
        if s.max_iter is not None:
            kw["max_sweeps"] = s.max_iter
        if s.tol is not None:
            kw["tol"] = s.tol
        cfg = PgsConfig(**kw)
        return lambda problem, warm=None, trace=False: solve_pgs(problem, warm, cfg, trace)
    raise ValueError(f"unknown solver {name!r}")


SOLVERS = ("canal", "subadmm", "pgs")


@dataclass
class MetricsRow:
    step: int
    solver: str
    iterations: int
    wall_time: float
    residual: float
    theta_p: float
    theta_d: float
    beta: float
    contacts: int
    energy: float
    converged: bool
    case: int = 0
    bodies: int = 0
    penetration: float = 0.0


def _match_warm(world: World, problem: ContactProblem) -> SolverState | None:
    if not world._warm and not world._warm_vhat:
        return None
    lam = []
    for c in problem.constraints:
        entries = world._warm.get(c.key, [])
        guess = np.zeros(c.rows)
        if c.kind is ConstraintKind.CONTACT and entries:
            dists = [np.linalg.norm(p - c.point) for p, _ in entries]
            best = int(np.argmin(dists))
            if dists[best] <= WARM_START_RADIUS:
                guess = entries[best][1].copy()
        elif entries:
            guess = entries[0][1].copy()
        lam.append(guess)
    vhat = world._warm_vhat if len(world._warm_vhat) == problem.num_subsystems else []
    return SolverState(vhat=[v.copy() for v in vhat], lam=lam)


def _store_warm(world: World, problem: ContactProblem, state: SolverState):
    world._warm = {}
    for c, li in zip(problem.constraints, state.lam):
        world._warm.setdefault(c.key, []).append((c.point, np.array(li)))
    world._warm_vhat = [np.array(v) for v in state.vhat]


def step(
    world: World,
    solver: str | Callable = "canal",
    settings: SolverSettings | None = None,
    extra_wrenches: dict | None = None,
    warm_start: bool = True,
    trace: bool = False,
):
    """Advance the world by one step.

    Collision detection, assembly, the solve and the position update with
    the representative velocity.  A solve that hits its caps still advances
    the state with its last iterate.

    Returns:
        ``(MetricsRow, ResidualReport, ContactProblem)``.  The row's
        ``penetration`` is the deepest overlap found by collision detection
        at the start of the step.

    Raises:
        SolverAbort: the solver produced non-finite values.
    """
    solve = make_solver(solver, settings) if isinstance(solver, str) else solver
    name = solver if isinstance(solver, str) else getattr(solver, "__name__", "custom")
    features = detect_contacts(world)
    problem = assemble(
        world.subsystems,
        features,
        world.dt,
        world.theta,
        world.gravity,
        world.wrenches_at(world.time, extra_wrenches),
        world.assembly,
        world.limits,
        world.springs,
    )
    warm = _match_warm(world, problem) if warm_start else None
    try:
        state, report = solve(problem, warm, trace=trace)
    except FloatingPointError as exc:
        raise SolverAbort(str(exc)) from exc
    if not np.all(np.isfinite(state.vhat_vector())):
        raise SolverAbort(f"{name} returned non-finite velocities at step {world.steps}")

    theta = world.theta
    for term, vhat in zip(problem.subsystems, state.vhat):
        sub = term.model
        sub.q = sub.integrate(vhat, world.dt)
        sub.v = (vhat - theta * term.v) / (1.0 - theta)
    _store_warm(world, problem, state)
    world.time += world.dt
    world.steps += 1

    row = MetricsRow(
        step=world.steps,
        solver=name,
        iterations=report.iterations,
        wall_time=report.wall_time,
        residual=report.residual,
        theta_p=report.theta_p,
        theta_d=report.theta_d,
        beta=report.beta,
        contacts=problem.num_contacts,
        energy=system_energy(world),
        converged=report.converged,
        bodies=len(world.dynamic_bodies()),
        penetration=max([0.0] + [-f.gap for f in features]),
    )
    return row, report, problem
