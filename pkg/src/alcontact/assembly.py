"""Per-step problem assembly.

A step solves ``A_j vhat_j = b_j + sum_i J_ij^T lam_i`` for every dynamic
subsystem ``j`` together with one constraint law per constraint ``i``.  Each
constraint owns one :class:`Block` per body it touches; a constraint between
two bodies of the same subsystem therefore has two blocks on that subsystem,
stacked row-wise, and its cardinality counts both.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import block_diag

from .collision import ContactFeature
from .multibody import Kinematics, Subsystem, bias_forces, mass_matrix, skew, spatial_jacobian

__all__ = [
    "AssemblyConfig",
    "Block",
    "ConstraintKind",
    "ConstraintSpec",
    "ContactProblem",
    "JointLimit",
    "MonolithicView",
    "SolverState",
    "Spring",
    "SubsystemTerm",
    "AssemblyError",
    "assemble",
    "build_constraints",
    "compress_dynamics",
    "contact_error",
    "monolithic_view",
]


class AssemblyError(ValueError):
    """A constraint references something the problem does not contain."""


class ConstraintKind(str, enum.Enum):
    HARD = "hard"
    SOFT = "soft"
    CONTACT = "contact"


@dataclass
class Block:
    """Part of a constraint Jacobian acting on one subsystem.

    ``jacobian`` maps the subsystem velocity to constraint rows.  For rows
    attached to a body, ``body`` and ``body_jacobian`` (rows x 6, on the
    world-origin twist of that body) are kept for the effective body matrix;
    ``point`` is set for contact rows.
    """

    subsystem: int
    jacobian: np.ndarray
    body: int | None = None
    body_jacobian: np.ndarray | None = None
    point: np.ndarray | None = None


@dataclass
class ConstraintSpec:
    kind: ConstraintKind
    blocks: list
    error: np.ndarray
    stiffness: float = 0.0
    damping: float = 0.0
    friction: float = 0.0
    key: tuple = ()
    point: np.ndarray | None = None

    def __post_init__(self):
        self.kind = ConstraintKind(self.kind)
        self.error = np.atleast_1d(np.asarray(self.error, dtype=float))
        if not self.blocks:
            raise AssemblyError("a constraint needs at least one block")
        expected = 3 if self.kind is ConstraintKind.CONTACT else 1
        if self.rows != expected:
            raise AssemblyError(f"{self.kind.value} constraint must have {expected} rows, got {self.rows}")
        for blk in self.blocks:
            if blk.jacobian.shape[0] != self.rows:
                raise AssemblyError("every block must have the constraint's row count")
        if self.kind is ConstraintKind.SOFT and not (self.stiffness > 0 and self.damping > 0):
            raise AssemblyError("soft constraints need positive stiffness and damping")

    @property
    def rows(self) -> int:
        return self.error.shape[0]

    @property
    def cardinality(self) -> int:
        return len(self.blocks)

    @property
    def subsystems(self) -> list:
        return sorted({blk.subsystem for blk in self.blocks})

    def subsystem_jacobian(self, j: int) -> np.ndarray:
        """Row-stacked blocks of subsystem ``j``."""
        stacked = [blk.jacobian for blk in self.blocks if blk.subsystem == j]
        if not stacked:
            raise AssemblyError(f"constraint has no block on subsystem {j}")
        return np.vstack(stacked)


@dataclass
class SubsystemTerm:
    """Compressed dynamics of one dynamic subsystem at the current step."""

    model: Subsystem
    kin: Kinematics
    A: np.ndarray
    b: np.ndarray
    v: np.ndarray
    inertia_scale: float
    scene_index: int = 0

    @property
    def nv(self) -> int:
        return self.A.shape[0]


@dataclass
class ContactProblem:
    subsystems: list
    constraints: list
    dt: float
    theta: float

    def __post_init__(self):
        for c in self.constraints:
            for blk in c.blocks:
                if not 0 <= blk.subsystem < len(self.subsystems):
                    raise AssemblyError(f"block references unknown subsystem {blk.subsystem}")
                if blk.jacobian.shape[1] != self.subsystems[blk.subsystem].nv:
                    raise AssemblyError("block column count differs from the subsystem dimension")

    @property
    def num_subsystems(self) -> int:
        return len(self.subsystems)

    @property
    def num_constraints(self) -> int:
        return len(self.constraints)

    @property
    def num_contacts(self) -> int:
        return sum(c.kind is ConstraintKind.CONTACT for c in self.constraints)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([s.nv for s in self.subsystems])]).astype(int)

    @property
    def nv(self) -> int:
        return int(self.offsets[-1])

    def split(self, v) -> list:
        o = self.offsets
        return [np.array(v[o[j]:o[j + 1]]) for j in range(len(self.subsystems))]


@dataclass
class SolverState:
    """Iterates of a solve.

    ``lam`` holds one impulse per constraint.  ``z`` and ``u`` hold one entry
    per constraint as well; for SubADMM each entry is a ``(cardinality, rows)``
    array with one slack/multiplier per block, for CANAL it is the unsplit
    ``rows`` vector.
    """

    vhat: list
    lam: list
    z: list = field(default_factory=list)
    u: list = field(default_factory=list)
    beta: float = 1.0
    iterations: int = 0
    inner_iterations: int = 0
    converged: bool = False

    def lam_vector(self) -> np.ndarray:
        return np.concatenate(self.lam) if self.lam else np.zeros(0)

    def vhat_vector(self) -> np.ndarray:
        return np.concatenate(self.vhat) if self.vhat else np.zeros(0)


@dataclass
class AssemblyConfig:
    """Stabilization and activation settings.

    Attributes:
        baumgarte: fraction of penetration beyond ``slop`` removed per step.
        slop: penetration depth tolerated without correction (m).
        margin: contacts and joint limits activate below this gap.
    """

    baumgarte: float = 0.2
    slop: float = 1e-3
    margin: float = 5e-3


@dataclass
class JointLimit:
    """Hard bounds on one joint coordinate of a scene subsystem."""

    subsystem: int
    dof: int
    lower: float = -np.inf
    upper: float = np.inf


@dataclass
class Spring:
    """Spring-damper on the distance between two anchors.

    Anchors are ``(subsystem, body, local_point)`` or, for ``anchor_b``
    ``None``, the fixed world point ``world_point``.  ``stiffness`` and
    ``damping`` are per-step values: the impulse is
    ``-stiffness * (length - rest_length) - damping * rate``.
    """

    anchor_a: tuple
    anchor_b: tuple | None
    rest_length: float
    stiffness: float
    damping: float
    world_point: np.ndarray = field(default_factory=lambda: np.zeros(3))


def compress_dynamics(sub: Subsystem, dt: float, theta: float, gravity=(0.0, 0.0, -9.81), wrenches=None, kin=None):
    """Dynamics matrix and vector of a subsystem for the representative velocity.

    With ``vhat = theta v_k + (1 - theta) v_{k+1}`` the discrete dynamics
    ``M (v_{k+1} - v_k) = f dt + J^T lam`` becomes ``A vhat = b + J^T lam``.

    Returns:
        ``(A, b)`` with ``A = M / (1 - theta)`` and ``b = A v_k + f dt``.

    Raises:
        ValueError: ``theta`` outside ``[0, 1)`` or ``dt <= 0``.
    """
    if not 0.0 <= theta < 1.0:
        raise ValueError("theta must lie in [0, 1); theta = 1 leaves v_{k+1} undetermined")
    if dt <= 0:
        raise ValueError("dt must be positive")
    kin = sub.kinematics() if kin is None else kin
    A = mass_matrix(sub, kin) / (1.0 - theta)
    f = bias_forces(sub, kin, sub.v, gravity, wrenches)
    return A, A @ sub.v + f * dt


def contact_error(gap: float, dt: float, cfg: AssemblyConfig) -> float:
    """Normal error term: speculative for open gaps, Baumgarte beyond the slop."""
    if gap > 0.0:
        return gap / dt
    return cfg.baumgarte / dt * min(0.0, gap + cfg.slop)


def _point_rows(direction_rows, point):
    """``D [I, -[p]]``: rows acting on a world-origin twist."""
    return np.hstack([direction_rows, -direction_rows @ skew(point)])


def _body_blocks(rows6, body_ref, body_map, terms, point=None):
    """Blocks for one body reached from ``rows6`` (rows x 6)."""
    if body_ref is None:
        return []
    sub_index, body = body_ref
    j = body_map.get(sub_index)
    if j is None:
        return []
    term = terms[j]
    if term.model.static_bodies[body]:
        return []
    J = rows6 @ spatial_jacobian(term.kin, body)
    return [Block(j, J, body, rows6, point)]


def build_constraints(
    terms: Sequence[SubsystemTerm],
    body_map: dict,
    features: Sequence[ContactFeature],
    dt: float,
    cfg: AssemblyConfig | None = None,
    limits: Sequence[JointLimit] = (),
    springs: Sequence[Spring] = (),
) -> list:
    """Constraint list for the current configuration.

    Args:
        terms: compressed dynamic subsystems.
        body_map: scene subsystem index to index in ``terms``; static
            subsystems are absent.
        features: contact features from collision detection.
        dt: step size.
        cfg: stabilization settings.
        limits: joint limit declarations (scene subsystem indices).
        springs: spring-damper declarations.

    Raises:
        AssemblyError: a declaration names a subsystem that is not dynamic.
    """
    cfg = cfg or AssemblyConfig()
    out = []
    for f in features:
        Rt = f.frame.T
        rows6 = _point_rows(Rt, f.point)
        blocks = _body_blocks(rows6, f.body_a, body_map, terms, f.point)
        blocks += _body_blocks(-rows6, f.body_b, body_map, terms, f.point)
        if not blocks:
            continue
        e = np.array([0.0, 0.0, contact_error(f.gap, dt, cfg)])
        out.append(
            ConstraintSpec(
                ConstraintKind.CONTACT, blocks, e, friction=f.friction, key=(f.body_a, f.body_b) + tuple(f.tag), point=f.point
            )
        )

    for lim in limits:
        j = body_map.get(lim.subsystem)
        if j is None:
            raise AssemblyError(f"joint limit on subsystem {lim.subsystem}, which has no degrees of freedom")
        term = terms[j]
        if not 0 <= lim.dof < term.nv:
            raise AssemblyError(f"joint limit dof {lim.dof} out of range")
        # a coordinate and its velocity share an index only for 1-dof joints
        qi = _velocity_to_coordinate(term.model, lim.dof)
        q = term.model.q[qi]
        for sign, bound, side in ((1.0, lim.lower, "lower"), (-1.0, lim.upper, "upper")):
            if not np.isfinite(bound):
                continue
            gap = sign * (q - bound)
            if gap >= cfg.margin:
                continue
            J = np.zeros((1, term.nv))
            J[0, lim.dof] = sign
            e = [contact_error(gap, dt, cfg)]
            out.append(ConstraintSpec(ConstraintKind.HARD, [Block(j, J)], e, key=("limit", lim.subsystem, lim.dof, side)))

    for idx, s in enumerate(springs):
        pa = _anchor_world(s.anchor_a, body_map, terms)
        pb = s.world_point if s.anchor_b is None else _anchor_world(s.anchor_b, body_map, terms)
        d = pa - pb
        length = float(np.linalg.norm(d))
        if length == 0.0:
            raise AssemblyError(f"spring {idx} has coincident anchors; its direction is undefined")
        n = (d / length)[None, :]
        blocks = _body_blocks(_point_rows(n, pa), s.anchor_a[:2], body_map, terms)
        if s.anchor_b is not None:
            blocks += _body_blocks(-_point_rows(n, pb), s.anchor_b[:2], body_map, terms)
        if not blocks:
            continue
        out.append(
            ConstraintSpec(
                ConstraintKind.SOFT,
                blocks,
                [length - s.rest_length],
                stiffness=s.stiffness,
                damping=s.damping,
                key=("spring", idx),
            )
        )
    return out


def _velocity_to_coordinate(model: Subsystem, dof: int) -> int:
    for body, qs, vs in zip(model.bodies, model.q_slices, model.v_slices):
        if vs.start <= dof < vs.stop:
            if body.joint.dof != 1:
                raise AssemblyError("joint limits are only supported on 1-dof joints")
            return qs.start
    raise AssemblyError(f"dof {dof} out of range")


def _anchor_world(anchor, body_map, terms):
    sub_index, body, local = anchor
    j = body_map.get(sub_index)
    if j is None:
        raise AssemblyError(f"spring anchored to static subsystem {sub_index}; use a world point instead")
    kin = terms[j].kin
    return kin.positions[body] + kin.rotations[body] @ np.asarray(local, dtype=float)


def assemble(
    subsystems: Sequence[Subsystem],
    features: Sequence[ContactFeature],
    dt: float,
    theta: float,
    gravity=(0.0, 0.0, -9.81),
    wrenches: dict | None = None,
    cfg: AssemblyConfig | None = None,
    limits: Sequence[JointLimit] = (),
    springs: Sequence[Spring] = (),
) -> ContactProblem:
    """Compress every dynamic subsystem and build the constraints of one step.

    ``wrenches`` maps ``(subsystem, body)`` to ``(force, torque)``.
    """
    wrenches = wrenches or {}
    terms, body_map = [], {}
    for idx, sub in enumerate(subsystems):
        if sub.is_static:
            continue
        kin = sub.kinematics()
        own = {b: w for (s, b), w in wrenches.items() if s == idx}
        A, b = compress_dynamics(sub, dt, theta, gravity, own, kin)
        body_map[idx] = len(terms)
        terms.append(SubsystemTerm(sub, kin, A, b, sub.v.copy(), 1.0 / (1.0 - theta), idx))
    constraints = build_constraints(terms, body_map, features, dt, cfg, limits, springs)
    return ContactProblem(terms, constraints, dt, theta)


@dataclass
class MonolithicView:
    """Unsplit dense system: block-diagonal ``A`` and original rows of ``J``."""

    A: np.ndarray
    b: np.ndarray
    J: np.ndarray
    e: np.ndarray
    rows: list

    def __iter__(self):
        return iter((self.A, self.b, self.J, self.e))


def monolithic_view(problem: ContactProblem) -> MonolithicView:
    """Dense ``(A, b, J, e)``; row-split blocks of one subsystem are summed back."""
    offsets = problem.offsets
    n = int(offsets[-1])
    A = block_diag(*[s.A for s in problem.subsystems]) if problem.subsystems else np.zeros((0, 0))
    b = np.concatenate([s.b for s in problem.subsystems]) if problem.subsystems else np.zeros(0)
    m = sum(c.rows for c in problem.constraints)
    J = np.zeros((m, n))
    e = np.zeros(m)
    rows = []
    r = 0
    for c in problem.constraints:
        sl = slice(r, r + c.rows)
        for blk in c.blocks:
            J[sl, offsets[blk.subsystem]:offsets[blk.subsystem + 1]] += blk.jacobian
        e[sl] = c.error
        rows.append(sl)
        r += c.rows
    return MonolithicView(A, b, J, e, rows)
