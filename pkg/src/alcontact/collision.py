"""Primitive collision shapes, the revolved dish SDF and contact features.

Normals of a :class:`ContactFeature` point from body B toward body A, so a
positive normal relative velocity ``n . (v_A - v_B)`` means separation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DEFAULT_MARGIN",
    "Box",
    "ContactFeature",
    "Dish",
    "DishProfile",
    "HalfSpace",
    "Sphere",
    "UnsupportedPairError",
    "collide",
    "contact_frame",
    "dish_sdf",
    "supports_pair",
]

DEFAULT_MARGIN = 0.005


class UnsupportedPairError(ValueError):
    """No narrow-phase routine exists for the two shape kinds."""


def _pose(position, rotation):
    return (
        np.zeros(3) if position is None else np.asarray(position, dtype=float),
        np.eye(3) if rotation is None else np.asarray(rotation, dtype=float),
    )


@dataclass
class Sphere:
    radius: float
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    material: str = "default"
    kind = "sphere"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")
        self.position, self.rotation = _pose(self.position, self.rotation)

    @property
    def bounding_radius(self) -> float:
        return self.radius


@dataclass
class HalfSpace:
    """Solid region ``normal . x <= offset`` in the body frame."""

    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    offset: float = 0.0
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    material: str = "default"
    kind = "halfspace"

    def __post_init__(self):
        self.normal = np.asarray(self.normal, dtype=float)
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-9:
            raise ValueError("half-space normal must be a unit vector")
        self.position, self.rotation = _pose(self.position, self.rotation)

    @property
    def bounding_radius(self) -> float:
        return np.inf


@dataclass
class Box:
    half_extents: np.ndarray
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    material: str = "default"
    kind = "box"

    def __post_init__(self):
        self.half_extents = np.asarray(self.half_extents, dtype=float)
        if self.half_extents.shape != (3,) or np.any(self.half_extents <= 0):
            raise ValueError("box half-extents must be three positive numbers")
        self.position, self.rotation = _pose(self.position, self.rotation)

    @property
    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.half_extents))

    def corners(self) -> np.ndarray:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return signs * self.half_extents


@dataclass
class DishProfile:
    """Meridian profile of a dish: segments ``O-A`` and ``A-B`` padded by ``d``.

    Points are ``(radial, axial)`` pairs in the dish frame, whose axis is z.
    """

    A: np.ndarray
    B: np.ndarray
    d: float

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        if not self.d > 0:
            raise ValueError("dish thickness must be positive")
        if self.A[0] < 0 or self.B[0] < 0:
            raise ValueError("profile points must have a non-negative radial coordinate")


@dataclass
class Dish:
    profile: DishProfile
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    material: str = "default"
    kind = "dish"

    def __post_init__(self):
        self.position, self.rotation = _pose(self.position, self.rotation)

    @property
    def bounding_radius(self) -> float:
        p = self.profile
        return float(max(np.linalg.norm(p.A), np.linalg.norm(p.B)) + p.d)


def _segment_closest(q, a, b):
    ab = b - a
    t = np.clip(((q - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return a + t[..., None] * ab


def dish_sdf(profile: DishProfile, p):
    """Signed distance to the revolved dish and its gradient.

    The meridian distance is ``min(dist(q, OA), dist(q, AB)) - d`` with
    ``q = (sqrt(x^2 + y^2), z)``; both segments are closed.  On the
    revolution axis the radial direction is taken as ``+x``.

    Args:
        profile: dish profile.
        p: a point or a ``(..., 3)`` stack of points in the dish frame.

    Returns:
        ``(value, gradient)`` with shapes ``(...)`` and ``(..., 3)``.
    """
    p = np.asarray(p, dtype=float)
    rho = np.hypot(p[..., 0], p[..., 1])
    q = np.stack([rho, p[..., 2]], axis=-1)
    origin = np.zeros(2)
    c1 = _segment_closest(q, origin, profile.A)
    c2 = _segment_closest(q, profile.A, profile.B)
    d1 = np.linalg.norm(q - c1, axis=-1)
    d2 = np.linalg.norm(q - c2, axis=-1)
    first = d1 <= d2
    dist = np.where(first, d1, d2)
    diff = np.where(first[..., None], q - c1, q - c2)
    # a point exactly on the skeleton has no direction; fall back to +axial
    safe = np.where(dist > 0.0, dist, 1.0)
    g2 = np.where((dist > 0.0)[..., None], diff / safe[..., None], np.array([0.0, 1.0]))

    on_axis = rho == 0.0
    safe_rho = np.where(on_axis, 1.0, rho)
    radial = np.stack(
        [np.where(on_axis, 1.0, p[..., 0] / safe_rho), np.where(on_axis, 0.0, p[..., 1] / safe_rho)],
        axis=-1,
    )
    grad = np.concatenate([g2[..., :1] * radial, g2[..., 1:]], axis=-1)
    return dist - profile.d, grad


def contact_frame(normal) -> np.ndarray:
    """Right-handed frame with columns ``(t1, t2, n)``.

    ``t1`` is the world axis least aligned with ``n`` (lowest index on ties)
    made orthogonal to ``n``, so the frame is a deterministic function of the
    normal.
    """
    n = np.asarray(normal, dtype=float)
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(n)))] = 1.0
    t1 = axis - (axis @ n) * n
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(n, t1)
    return np.column_stack([t1, t2, n])


@dataclass
class ContactFeature:
    """One contact point between two bodies.

    ``body_a`` and ``body_b`` are ``(subsystem, body)`` index pairs, ``None``
    for world geometry.  ``frame`` has columns ``(t1, t2, n)``.
    """

    gap: float
    point: np.ndarray
    normal: np.ndarray
    frame: np.ndarray
    body_a: tuple | None = None
    body_b: tuple | None = None
    friction: float = 0.5
    tag: tuple = ()

    def flipped(self) -> "ContactFeature":
        n = -self.normal
        return ContactFeature(self.gap, self.point, n, contact_frame(n), self.body_b, self.body_a, self.friction, self.tag)


def _world(shape, pose):
    R, x = (np.eye(3), np.zeros(3)) if pose is None else (np.asarray(pose[0]), np.asarray(pose[1]))
    return R @ shape.rotation, x + R @ shape.position


def _feature(gap, point, normal):
    return ContactFeature(float(gap), point, normal, contact_frame(normal))


def _sphere_sphere(a, pa, b, pb, margin):
    _, ca = _world(a, pa)
    _, cb = _world(b, pb)
    delta = ca - cb
    dist = np.linalg.norm(delta)
    n = delta / dist if dist > 0.0 else np.array([0.0, 0.0, 1.0])
    gap = dist - a.radius - b.radius
    if gap >= margin:
        return []
    return [_feature(gap, cb + n * (b.radius + 0.5 * gap), n)]


def _sphere_halfspace(a, pa, b, pb, margin):
    _, c = _world(a, pa)
    Rb, xb = _world(b, pb)
    n = Rb @ b.normal
    offset = b.offset + n @ xb
    gap = n @ c - offset - a.radius
    if gap >= margin:
        return []
    return [_feature(gap, c - n * (a.radius + 0.5 * gap), n)]


def _box_halfspace(a, pa, b, pb, margin):
    Ra, xa = _world(a, pa)
    Rb, xb = _world(b, pb)
    n = Rb @ b.normal
    offset = b.offset + n @ xb
    out = []
    for corner in a.corners():
        w = xa + Ra @ corner
        gap = n @ w - offset
        if gap < margin:
            out.append(_feature(gap, w - 0.5 * gap * n, n))
    return out


def _sphere_dish(a, pa, b, pb, margin):
    _, c = _world(a, pa)
    Rb, xb = _world(b, pb)
    value, grad = dish_sdf(b.profile, Rb.T @ (c - xb))
    gap = float(value) - a.radius
    if gap >= margin:
        return []
    n = Rb @ grad
    return [_feature(gap, c - n * float(value), n)]


_PAIRS = {
    ("sphere", "sphere"): _sphere_sphere,
    ("sphere", "halfspace"): _sphere_halfspace,
    ("box", "halfspace"): _box_halfspace,
    ("sphere", "dish"): _sphere_dish,
}


def supports_pair(kind_a: str, kind_b: str) -> bool:
    return (kind_a, kind_b) in _PAIRS or (kind_b, kind_a) in _PAIRS


def collide(shape_a, pose_a, shape_b, pose_b, margin: float = DEFAULT_MARGIN) -> list:
    """Contact features between two posed shapes.

    Args:
        shape_a, shape_b: shapes with their local pose relative to the body.
        pose_a, pose_b: ``(R, x)`` world pose of the owning bodies.
        margin: features are produced while the gap is below this value.

    Returns:
        List of :class:`ContactFeature` with normals pointing from B to A.
        Gaps are signed distances (negative means penetration) and points lie
        midway between the surfaces, except for dishes where the point is on
        the dish surface.

    Raises:
        UnsupportedPairError: no routine for this pair of kinds.
    """
    key = (shape_a.kind, shape_b.kind)
    if key in _PAIRS:
        return _PAIRS[key](shape_a, pose_a, shape_b, pose_b, margin)
    if key[::-1] in _PAIRS:
        return [f.flipped() for f in _PAIRS[key[::-1]](shape_b, pose_b, shape_a, pose_a, margin)]
    raise UnsupportedPairError(f"no collision routine for {key[0]}-{key[1]}")
