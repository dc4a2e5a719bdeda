"""Kinematic trees, joint-space inertia and subsystem matrix factorization.

Internally every spatial quantity is expressed in world coordinates about the
world origin with the linear part first: a twist is ``(v_O, omega)`` where
``v_O`` is the velocity of the body point currently at the origin, and a wrench
is ``(f, n_O)``.  In these coordinates the contact Jacobian of a point ``p`` is
``R^T [I, -[p]]`` and the spatial inertia of a body is

    [[m I,     -m [c]          ],
     [m [c],   I_c - m [c][c]  ]]

which is what makes the 10-scalar effective body matrix possible.  The public
:func:`body_jacobian` follows the angular-first convention at the body origin.

Generalized coordinates:

* floating joint: ``q = (x, y, z, qx, qy, qz, qw)`` (scipy scalar-last
  quaternion), ``v = (omega_body, xdot_world)``;
* revolute / prismatic: one coordinate each;
* fixed: nothing.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg.lapack import dtrtrs
from scipy.spatial.transform import Rotation

__all__ = [
    "Body",
    "EffectiveBodyMatrix",
    "Joint",
    "JointKind",
    "Kinematics",
    "NotPositiveDefiniteError",
    "Subsystem",
    "SubsystemFactorization",
    "bias_forces",
    "body_jacobian",
    "effective_body_matrix",
    "factor_subsystem_matrix",
    "kinetic_energy",
    "mass_matrix",
    "mass_matrix_pattern",
    "skew",
    "spatial_inertia",
    "spatial_jacobian",
]


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A pivot of a factorization was not strictly positive."""


def skew(p) -> np.ndarray:
    """Cross-product matrix ``[p]`` with ``[p] @ x == np.cross(p, x)``."""
    x, y, z = p
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def spatial_inertia(mass: float, com, inertia_com) -> np.ndarray:
    """World-origin spatial inertia (linear-first) from mass, COM and COM inertia."""
    c = skew(com)
    out = np.empty((6, 6))
    out[:3, :3] = mass * np.eye(3)
    out[:3, 3:] = -mass * c
    out[3:, :3] = mass * c
    out[3:, 3:] = inertia_com - mass * c @ c
    return out


def _motion_cross(V, m):
    v, w = V[:3], V[3:]
    mv, mw = m[:3], m[3:]
    return np.concatenate([np.cross(w, mv) + np.cross(v, mw), np.cross(w, mw)])


def _force_cross(V, f):
    v, w = V[:3], V[3:]
    fl, fn = f[:3], f[3:]
    return np.concatenate([np.cross(w, fl), np.cross(w, fn) + np.cross(v, fl)])


class JointKind(str, enum.Enum):
    FIXED = "fixed"
    FLOATING = "floating"
    REVOLUTE = "revolute"
    PRISMATIC = "prismatic"


_DOF = {JointKind.FIXED: 0, JointKind.FLOATING: 6, JointKind.REVOLUTE: 1, JointKind.PRISMATIC: 1}
_NQ = {JointKind.FIXED: 0, JointKind.FLOATING: 7, JointKind.REVOLUTE: 1, JointKind.PRISMATIC: 1}


@dataclass
class Joint:
    """Connection of a body to its parent (``parent == -1`` means ground).

    ``origin`` and ``rotation`` place the joint frame in the parent body frame;
    ``axis`` is expressed in the joint frame.
    """

    kind: JointKind
    parent: int = -1
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.kind = JointKind(self.kind)
        self.axis = np.asarray(self.axis, dtype=float)
        self.origin = np.asarray(self.origin, dtype=float)
        self.rotation = np.asarray(self.rotation, dtype=float)
        if self.dof == 1:
            n = np.linalg.norm(self.axis)
            if n == 0.0:
                raise ValueError("joint axis must be non-zero")
            self.axis = self.axis / n

    @property
    def dof(self) -> int:
        return _DOF[self.kind]

    @property
    def nq(self) -> int:
        return _NQ[self.kind]


@dataclass
class Body:
    """Rigid body with inertia about its COM, both given in the body frame."""

    mass: float
    inertia: np.ndarray
    joint: Joint
    com: np.ndarray = field(default_factory=lambda: np.zeros(3))
    shapes: list = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        self.inertia = np.asarray(self.inertia, dtype=float)
        self.com = np.asarray(self.com, dtype=float)
        if self.mass <= 0.0:
            raise ValueError(f"body {self.name!r}: mass must be positive")
        if not np.allclose(self.inertia, self.inertia.T):
            raise ValueError(f"body {self.name!r}: inertia must be symmetric")
        if np.linalg.eigvalsh(self.inertia).min() <= 0.0:
            raise ValueError(f"body {self.name!r}: inertia must be positive definite")


@dataclass
class Kinematics:
    """Per-configuration kinematic quantities of one subsystem."""

    rotations: np.ndarray  # (nb, 3, 3) body-to-world
    positions: np.ndarray  # (nb, 3) body origins
    coms: np.ndarray  # (nb, 3) world COM
    inertias: np.ndarray  # (nb, 6, 6) world-origin spatial inertia
    subspaces: list  # per body, (6, dof) world-origin motion subspace
    dofs: list  # per body, slice into v
    paths: list  # per body, dof-carrying ancestors (root first) incl. itself
    nv: int


class Subsystem:
    """A kinematic tree rooted at the ground; one unit of the SubADMM split.

    Bodies must be in topological order and exactly the first body may attach
    to the ground.  A floating joint is only allowed at the root.
    """

    def __init__(self, bodies: Sequence[Body], q=None, v=None, name: str = ""):
        self.bodies = list(bodies)
        self.name = name
        if not self.bodies:
            raise ValueError("a subsystem needs at least one body")
        for k, body in enumerate(self.bodies):
            p = body.joint.parent
            if k == 0 and p != -1:
                raise ValueError("the first body must attach to the ground")
            if k > 0 and not 0 <= p < k:
                raise ValueError(f"body {k}: parent index {p} breaks topological order")
            if body.joint.kind is JointKind.FLOATING and k != 0:
                raise ValueError("floating joints are only supported at the root")

        self.q_slices, self.v_slices = [], []
        nq = nv = 0
        for body in self.bodies:
            self.q_slices.append(slice(nq, nq + body.joint.nq))
            self.v_slices.append(slice(nv, nv + body.joint.dof))
            nq += body.joint.nq
            nv += body.joint.dof
        self.nq, self.nv = nq, nv

        # bodies whose whole root path is fixed never move
        self.static_bodies = []
        moving = []
        for k, body in enumerate(self.bodies):
            parent_moving = moving[body.joint.parent] if body.joint.parent >= 0 else False
            moving.append(parent_moving or body.joint.dof > 0)
            self.static_bodies.append(not moving[-1])

        self.dof_parent = self._dof_parents()
        self.q = self.neutral_q() if q is None else np.asarray(q, dtype=float).copy()
        self.v = np.zeros(nv) if v is None else np.asarray(v, dtype=float).copy()
        if self.q.shape != (nq,) or self.v.shape != (nv,):
            raise ValueError(f"state shapes {self.q.shape}, {self.v.shape} != ({nq},), ({nv},)")

    @property
    def is_static(self) -> bool:
        return self.nv == 0

    def neutral_q(self) -> np.ndarray:
        q = np.zeros(self.nq)
        for body, sl in zip(self.bodies, self.q_slices):
            if body.joint.kind is JointKind.FLOATING:
                q[sl.start + 6] = 1.0
        return q

    def _dof_parents(self) -> np.ndarray:
        last_dof = []
        parents = []
        for k, body in enumerate(self.bodies):
            p = body.joint.parent
            anchor = last_dof[p] if p >= 0 else -1
            for _ in range(body.joint.dof):
                parents.append(anchor)
                anchor = len(parents) - 1
            last_dof.append(anchor)
        return np.array(parents, dtype=int)

    def kinematics(self, q=None) -> Kinematics:
        q = self.q if q is None else q
        nb = len(self.bodies)
        rotations = np.empty((nb, 3, 3))
        positions = np.empty((nb, 3))
        coms = np.empty((nb, 3))
        inertias = np.empty((nb, 6, 6))
        subspaces, paths = [], []
        for k, body in enumerate(self.bodies):
            joint = body.joint
            if joint.parent >= 0:
                Rp, xp = rotations[joint.parent], positions[joint.parent]
                path = list(paths[joint.parent])
            else:
                Rp, xp = np.eye(3), np.zeros(3)
                path = []
            Rj = Rp @ joint.rotation
            xj = xp + Rp @ joint.origin
            qk = q[self.q_slices[k]]
            if joint.kind is JointKind.FLOATING:
                R = Rj @ Rotation.from_quat(qk[3:]).as_matrix()
                x = xj + Rj @ qk[:3]
                S = np.zeros((6, 6))
                S[:3, :3] = skew(x) @ R
                S[:3, 3:] = Rj
                S[3:, :3] = R
            elif joint.kind is JointKind.REVOLUTE:
                R = Rj @ Rotation.from_rotvec(joint.axis * qk[0]).as_matrix()
                x = xj
                a = Rj @ joint.axis
                S = np.concatenate([np.cross(xj, a), a])[:, None]
            elif joint.kind is JointKind.PRISMATIC:
                R = Rj
                a = Rj @ joint.axis
                x = xj + a * qk[0]
                S = np.concatenate([a, np.zeros(3)])[:, None]
            else:
                R, x, S = Rj, xj, np.zeros((6, 0))
            rotations[k], positions[k] = R, x
            coms[k] = x + R @ body.com
            inertias[k] = spatial_inertia(body.mass, coms[k], R @ body.inertia @ R.T)
            if joint.dof:
                path.append(k)
            subspaces.append(S)
            paths.append(path)
        return Kinematics(rotations, positions, coms, inertias, subspaces, list(self.v_slices), paths, self.nv)

    def integrate(self, vhat, dt: float, q=None) -> np.ndarray:
        """Advance positions with the representative velocity ``vhat``."""
        q = (self.q if q is None else q).copy()
        for body, qs, vs in zip(self.bodies, self.q_slices, self.v_slices):
            kind = body.joint.kind
            if kind is JointKind.FLOATING:
                w, xdot = vhat[vs][:3], vhat[vs][3:]
                rot = Rotation.from_quat(q[qs][3:]) * Rotation.from_rotvec(dt * w)
                quat = rot.as_quat()
                q[qs.start:qs.start + 3] += dt * xdot
                q[qs.start + 3:qs.stop] = quat / np.linalg.norm(quat)
            elif kind is not JointKind.FIXED:
                q[qs] += dt * vhat[vs]
        return q


def spatial_jacobian(kin: Kinematics, k: int) -> np.ndarray:
    """``6 x nv`` map from joint velocity to the world-origin twist of body ``k``."""
    J = np.zeros((6, kin.nv))
    for a in kin.paths[k]:
        J[:, kin.dofs[a]] = kin.subspaces[a]
    return J


def body_jacobian(sub: Subsystem, k: int, kin: Kinematics | None = None) -> np.ndarray:
    """``6 x nv`` Jacobian of body ``k``: angular velocity over body-origin velocity.

    Columns of joints that are not on the root-to-body path are zero.
    """
    kin = sub.kinematics() if kin is None else kin
    J = spatial_jacobian(kin, k)
    out = np.empty_like(J)
    out[:3] = J[3:]
    out[3:] = J[:3] - skew(kin.positions[k]) @ J[3:]
    return out


def mass_matrix(sub: Subsystem, kin: Kinematics | None = None) -> np.ndarray:
    """Joint-space inertia by the composite-rigid-body algorithm."""
    kin = sub.kinematics() if kin is None else kin
    return _crba(sub, kin, kin.inertias)


def _crba(sub: Subsystem, kin: Kinematics, body_matrices) -> np.ndarray:
    n = kin.nv
    M = np.zeros((n, n))
    composite = np.array(body_matrices, dtype=float, copy=True)
    for k in range(len(sub.bodies) - 1, -1, -1):
        p = sub.bodies[k].joint.parent
        if p >= 0:
            composite[p] += composite[k]
        if not sub.bodies[k].joint.dof:
            continue
        dk = kin.dofs[k]
        F = composite[k] @ kin.subspaces[k]
        M[dk, dk] = kin.subspaces[k].T @ F
        for a in kin.paths[k][:-1]:
            da = kin.dofs[a]
            block = kin.subspaces[a].T @ F
            M[da, dk] = block
            M[dk, da] = block.T
    return M


def mass_matrix_pattern(sub: Subsystem) -> np.ndarray:
    """Boolean structural non-zero pattern of the joint-space inertia."""
    return _tree_pattern(sub.dof_parent)


def _tree_pattern(dof_parent) -> np.ndarray:
    n = len(dof_parent)
    pattern = np.eye(n, dtype=bool)
    for k in range(n):
        i = dof_parent[k]
        while i != -1:
            pattern[k, i] = pattern[i, k] = True
            i = dof_parent[i]
    return pattern


def bias_forces(sub: Subsystem, kin: Kinematics, v, gravity, wrenches=None) -> np.ndarray:
    """Generalized force ``f(q, v)``: gravity, external wrenches minus Coriolis terms.

    Computed with recursive Newton-Euler at zero joint acceleration.
    ``wrenches`` maps body index to ``(force, torque)`` in world frame, with the
    force applied at the COM.
    """
    nb = len(sub.bodies)
    V = np.zeros((nb, 6))
    acc = np.zeros((nb, 6))
    F = np.zeros((nb, 6))
    a0 = np.concatenate([-np.asarray(gravity, dtype=float), np.zeros(3)])
    wrenches = wrenches or {}
    for k, body in enumerate(sub.bodies):
        p = body.joint.parent
        Vp = V[p] if p >= 0 else np.zeros(6)
        ap = acc[p] if p >= 0 else a0
        vj = kin.subspaces[k] @ v[kin.dofs[k]]
        V[k] = Vp + vj
        if body.joint.kind is JointKind.FLOATING:
            w = V[k][3:]
            xdot = v[kin.dofs[k]][3:]
            acc[k] = ap + np.concatenate([-np.cross(w, xdot), np.zeros(3)])
        else:
            acc[k] = ap + _motion_cross(V[k], vj)
        inertia = kin.inertias[k]
        F[k] = inertia @ acc[k] + _force_cross(V[k], inertia @ V[k])
        if k in wrenches:
            force, torque = (np.asarray(w_, dtype=float) for w_ in wrenches[k])
            F[k] -= np.concatenate([force, torque + np.cross(kin.coms[k], force)])
    tau = np.zeros(kin.nv)
    for k in range(nb - 1, -1, -1):
        tau[kin.dofs[k]] = kin.subspaces[k].T @ F[k]
        p = sub.bodies[k].joint.parent
        if p >= 0:
            F[p] += F[k]
    return -tau


def kinetic_energy(sub: Subsystem, kin: Kinematics, v) -> float:
    return 0.5 * float(v @ mass_matrix(sub, kin) @ v)


@dataclass
class EffectiveBodyMatrix:
    """Symmetric 6x6 body matrix stored with the 10 scalars of a spatial inertia.

    ``mass`` is the mass-like scalar, ``first_moment`` the weighted COM vector
    and ``second_moment`` the symmetric 3x3 rotational block.
    """

    mass: float
    first_moment: np.ndarray
    second_moment: np.ndarray

    def __add__(self, other: "EffectiveBodyMatrix") -> "EffectiveBodyMatrix":
        return EffectiveBodyMatrix(
            self.mass + other.mass,
            self.first_moment + other.first_moment,
            self.second_moment + other.second_moment,
        )

    def matrix(self) -> np.ndarray:
        """Dense form in the linear-first ordering."""
        h = skew(self.first_moment)
        out = np.empty((6, 6))
        out[:3, :3] = self.mass * np.eye(3)
        out[:3, 3:] = -h
        out[3:, :3] = h
        out[3:, 3:] = self.second_moment
        return out

    @classmethod
    def from_inertia(cls, mass: float, com, inertia_com, scale: float = 1.0):
        com = np.asarray(com, dtype=float)
        c = skew(com)
        return cls(scale * mass, scale * mass * com, scale * (np.asarray(inertia_com) - mass * c @ c))

    @classmethod
    def contact_term(cls, point, beta: float):
        """``beta * J^T J`` of a 3-row contact at ``point``; the frame drops out."""
        p = np.asarray(point, dtype=float)
        return cls(beta, beta * p, -beta * skew(p) @ skew(p))


def effective_body_matrix(
    body: Body,
    contact_rows: Sequence[tuple],
    beta: float,
    pose: tuple | None = None,
    inertia_scale: float = 1.0,
) -> EffectiveBodyMatrix:
    """Body inertia plus the penalty terms of the contacts acting on it.

    Args:
        body: the rigid body.
        contact_rows: ``(R_i, p_i)`` contact frames and world contact points.
            Only the points matter since ``R_i^T R_i = I``.
        beta: penalty weight.
        pose: ``(R, x)`` world pose of the body frame; identity by default.
        inertia_scale: factor on the body inertia, ``1/(1-theta)`` when the
            dynamics matrix is compressed from the midpoint scheme.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    R, x = (np.eye(3), np.zeros(3)) if pose is None else pose
    com = x + R @ body.com
    H = EffectiveBodyMatrix.from_inertia(body.mass, com, R @ body.inertia @ R.T, inertia_scale)
    for _, p in contact_rows:
        H = H + EffectiveBodyMatrix.contact_term(p, beta)
    return H


class SubsystemFactorization:
    """``L^T D L`` factor of a joint-space matrix with kinematic-tree sparsity.

    The factor has no fill-in outside the pattern of the mass matrix.
    """

    def __init__(self, matrix: np.ndarray, dof_parent: np.ndarray):
        self.matrix = matrix
        self.dof_parent = dof_parent
        H = matrix.copy()
        n = H.shape[0]
        for k in range(n - 1, -1, -1):
            if not H[k, k] > 0.0:
                raise NotPositiveDefiniteError(f"non-positive pivot {H[k, k]!r} at dof {k}")
            i = dof_parent[k]
            while i != -1:
                a = H[k, i] / H[k, k]
                j = i
                while j != -1:
                    H[i, j] -= a * H[k, j]
                    j = dof_parent[j]
                H[k, i] = a
                i = dof_parent[i]
        self.D = np.diag(H).copy()
        # entries outside the tree pattern are never touched and stay zero
        L = np.tril(H, -1)
        np.fill_diagonal(L, 1.0)
        self.L = np.asfortranarray(L)

    @property
    def pattern(self) -> np.ndarray:
        """Symmetric non-zero pattern of ``L + L^T``."""
        nz = self.L != 0.0
        return nz | nz.T

    def solve(self, rhs) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        if self.L.shape[0] == 0:
            return rhs.copy()
        # LAPACK directly: scipy's wrapper costs several times the 6x6 solve
        w, info = dtrtrs(self.L, rhs, lower=1, trans=1, unitdiag=1)
        w /= self.D if w.ndim == 1 else self.D[:, None]
        x, info2 = dtrtrs(self.L, w, lower=1, unitdiag=1)
        if info or info2:
            raise np.linalg.LinAlgError("triangular solve failed")
        return x


def factor_subsystem_matrix(
    sub: Subsystem,
    effective_matrices: Sequence,
    kin: Kinematics | None = None,
    joint_diag=None,
) -> SubsystemFactorization:
    """Assemble and factor ``sum_k J_k^T H_k J_k`` with composite-body fill-in.

    ``effective_matrices`` holds one entry per body: an
    :class:`EffectiveBodyMatrix` or a dense linear-first 6x6 array.
    ``joint_diag`` adds penalty terms of joint-space rows (e.g. limits).
    """
    kin = sub.kinematics() if kin is None else kin
    dense = np.array([H.matrix() if isinstance(H, EffectiveBodyMatrix) else H for H in effective_matrices])
    K = _crba(sub, kin, dense)
    if joint_diag is not None:
        K[np.diag_indices_from(K)] += joint_diag
    return SubsystemFactorization(K, sub.dof_parent)
