"""Closed-form constraint operators on the Coulomb friction cone.

Every contact quantity uses the component order ``(t1, t2, n)``: two tangential
components first, the normal component last.  The cone is

    C = {lam : ||lam_t|| <= mu * lam_n}

All projection routines accept a single 3-vector or a stack of shape
``(..., 3)`` together with a scalar or broadcastable ``mu``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ContactCase",
    "NonsmoothPointError",
    "SCCCheckResult",
    "check_scc",
    "closed_form_hard",
    "closed_form_soft",
    "cone_branch",
    "project_cone_prox",
    "project_cone_strict",
    "project_positive",
    "prox_derivative",
    "soft_derivative",
]


class NonsmoothPointError(ValueError):
    """Raised when a derivative is requested on a branch boundary of the prox."""


class ContactCase(enum.Enum):
    OPEN = "open"
    STICK = "stick"
    SLIP = "slip"


def project_positive(x):
    """Clamp onto the non-negative half line."""
    return np.maximum(x, 0.0)


def _split(lam_star, mu):
    """Broadcast a cone input and its friction coefficient to a common shape."""
    lam_star = np.asarray(lam_star, dtype=float)
    if lam_star.shape[-1] != 3:
        raise ValueError(f"expected trailing dimension 3, got shape {lam_star.shape}")
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0) or not np.all(np.isfinite(mu)):
        raise ValueError("friction coefficient must be finite and non-negative")
    shape = np.broadcast_shapes(lam_star.shape[:-1], mu.shape)
    lam_star = np.broadcast_to(lam_star, shape + (3,))
    return lam_star[..., :2], lam_star[..., 2], np.broadcast_to(mu, shape)


def project_cone_strict(lam_star, mu):
    """Nested projection: clamp the normal part, then the tangential disk.

    The normal impulse is ``max(lam_n*, 0)`` and the tangential impulse is the
    closest point of the disk of radius ``mu * lam_n`` to ``lam_t*``.  Paired
    with the slack ``z = (lam - lam*) / beta`` the result satisfies the
    Signorini-Coulomb conditions exactly.
    """
    lam_t, lam_n, mu = _split(lam_star, mu)
    return _strict(np.concatenate([lam_t, lam_n[..., None]], axis=-1), mu)


def _strict(lam_star, mu):
    """Unchecked :func:`project_cone_strict` on a ``(..., 3)`` array."""
    lam_n = np.maximum(lam_star[..., 2], 0.0)
    radius = mu * lam_n
    norm_t = np.sqrt(lam_star[..., 0] ** 2 + lam_star[..., 1] ** 2)
    scale = np.where(norm_t > radius, radius / np.where(norm_t > 0.0, norm_t, 1.0), 1.0)
    out = lam_star * scale[..., None]
    out[..., 2] = lam_n
    return out


def _branch(norm_t, lam_n, mu):
    # the sign test matters for mu = 0, where mu * lam_n is -0.0 for lam_n < 0
    stick = (norm_t <= mu * lam_n) & (lam_n >= 0.0)
    polar = mu * norm_t + lam_n <= 0.0
    return np.where(stick, 1, np.where(polar, 0, 2))


def cone_branch(lam_star, mu):
    """Classify inputs of the proximal projection.

    Returns an integer array with ``0`` for the polar (open) region, ``1`` for
    the cone interior (stick, boundary included) and ``2`` for the region
    projected onto the cone surface (slip).
    """
    lam_t, lam_n, mu = _split(lam_star, mu)
    return _branch(np.linalg.norm(lam_t, axis=-1), lam_n, mu)


def project_cone_prox(lam_star, mu):
    """Euclidean projection onto the friction cone.

    Three branches: interior points are returned unchanged, points in the
    polar cone map to zero, everything else lands on the cone surface at
    height ``s = (mu * ||lam_t*|| + lam_n*) / (mu**2 + 1)``.
    """
    return _prox(*_split(lam_star, mu))


def _prox(lam_t, lam_n, mu):
    norm_t = np.sqrt(lam_t[..., 0] ** 2 + lam_t[..., 1] ** 2)
    branch = _branch(norm_t, lam_n, mu)
    s = (mu * norm_t + lam_n) / (mu * mu + 1.0)
    # a slip point always has norm_t > 0 (norm_t == 0 is stick or polar)
    scale = np.where(branch == 2, mu * s / np.where(norm_t > 0.0, norm_t, 1.0), (branch == 1).astype(float))
    out = np.empty(lam_n.shape + (3,))
    out[..., :2] = scale[..., None] * lam_t
    out[..., 2] = np.where(branch == 2, s, np.where(branch == 1, lam_n, 0.0))
    return out


def prox_derivative(lam_star, mu, *, boundary_tol=None):
    """Jacobian of :func:`project_cone_prox` with respect to its input.

    Args:
        lam_star: 3-vector or ``(..., 3)`` stack of projection inputs.
        mu: friction coefficient(s).
        boundary_tol: when given, inputs closer than this to a branch
            boundary raise :class:`NonsmoothPointError`.  When ``None`` the
            stick branch wins ties, which keeps the Newton matrix as positive
            definite as possible.

    Returns:
        Array of shape ``(..., 3, 3)``: zero (open), identity (stick), or the
        symmetric slip block

            1/(mu^2+1) [[mu^2 I + mu lam_n*/||lam_t*|| P, mu t],
                        [mu t^T,                            1  ]]

        with ``t`` the unit tangential direction and ``P = I - t t^T``.
    """
    lam_t, lam_n, mu = _split(lam_star, mu)
    if boundary_tol is not None:
        norm_t = np.linalg.norm(lam_t, axis=-1)
        near = np.minimum(np.abs(norm_t - mu * lam_n), np.abs(mu * norm_t + lam_n))
        if np.any(near <= boundary_tol):
            raise NonsmoothPointError("input lies on a branch boundary of the cone projection")
    return _prox_derivative(lam_t, lam_n, mu)


def _prox_derivative(lam_t, lam_n, mu):
    norm_t = np.sqrt(lam_t[..., 0] ** 2 + lam_t[..., 1] ** 2)
    branch = _branch(norm_t, lam_n, mu)
    safe = np.where(norm_t > 0.0, norm_t, 1.0)
    t = lam_t / safe[..., None]
    ratio = mu * lam_n / safe
    mu2 = mu * mu
    inv = 1.0 / (mu2 + 1.0)
    out = np.zeros(lam_n.shape + (3, 3))
    # slip block: mu^2 I + ratio (I - t t^T) on the tangent part
    slip = branch == 2
    w = np.where(slip, inv, 0.0)
    diag = (mu2 + ratio) * w
    out[..., 0, 0] = diag - ratio * w * t[..., 0] ** 2
    out[..., 1, 1] = diag - ratio * w * t[..., 1] ** 2
    out[..., 0, 1] = out[..., 1, 0] = -ratio * w * t[..., 0] * t[..., 1]
    out[..., 0, 2] = out[..., 2, 0] = mu * w * t[..., 0]
    out[..., 1, 2] = out[..., 2, 1] = mu * w * t[..., 1]
    out[..., 2, 2] = w
    # mu == 0: projection onto the normal ray, t is meaningless
    zero_mu = slip & (mu == 0.0)
    out[zero_mu] = np.diag([0.0, 0.0, 1.0])
    stick = branch == 1
    out[stick] = np.eye(3)
    return out


def _prox_with_curvature(lam_star, mu, x):
    """Projection of ``(nc, 3)`` inputs and ``x_i^T D_i x_i`` for its Jacobians ``D_i``.

    Used by line searches that only need the projection derivative along one
    direction; avoids forming the ``3 x 3`` blocks.
    """
    lam_t, lam_n = lam_star[:, :2], lam_star[:, 2]
    norm_t = np.sqrt(lam_t[:, 0] ** 2 + lam_t[:, 1] ** 2)
    branch = _branch(norm_t, lam_n, mu)
    stick, slip = branch == 1, branch == 2
    safe = np.where(norm_t > 0.0, norm_t, 1.0)
    mu2 = mu * mu
    s = (mu * norm_t + lam_n) / (mu2 + 1.0)
    scale = np.where(slip, mu * s / safe, stick.astype(float))
    out = np.empty_like(lam_star)
    out[:, :2] = scale[:, None] * lam_t
    out[:, 2] = np.where(slip, s, np.where(stick, lam_n, 0.0))

    xx = x[:, 0] ** 2 + x[:, 1] ** 2
    xt = (x[:, 0] * lam_t[:, 0] + x[:, 1] * lam_t[:, 1]) / safe
    ratio = mu * lam_n / safe
    # slip: [mu^2 |x_t|^2 + ratio (|x_t|^2 - (t.x_t)^2) + 2 mu (t.x_t) x_n + x_n^2] / (mu^2 + 1)
    q_slip = (mu2 * xx + ratio * (xx - xt * xt) + 2.0 * mu * xt * x[:, 2] + x[:, 2] ** 2) / (mu2 + 1.0)
    q_slip = np.where(mu == 0.0, x[:, 2] ** 2, q_slip)
    q = np.where(stick, xx + x[:, 2] ** 2, np.where(slip, q_slip, 0.0))
    return out, q


def closed_form_hard(Jv, u, e, beta):
    """Impulse of a unilateral (hard) row: ``max(-beta*Jv - u - beta*e, 0)``."""
    if np.any(np.asarray(beta) <= 0):
        raise ValueError("beta must be positive")
    return np.maximum(-beta * np.asarray(Jv) - u - beta * np.asarray(e), 0.0)


def closed_form_soft(Jv, u, e, k, b, beta):
    """Impulse of a spring-damper row combined with the slack relation.

    Solves ``lam = -k*e - b*z`` together with ``beta*z = beta*Jv + u + lam``.
    """
    if np.any(np.asarray(beta) <= 0):
        raise ValueError("beta must be positive")
    return -(b * (beta * np.asarray(Jv) + u) + beta * k * np.asarray(e)) / (b + beta)


def soft_derivative(b, beta):
    """Effective stiffness ``b*beta/(b+beta)`` a soft row adds to the Newton matrix."""
    return b * beta / (b + beta)


@dataclass
class SCCCheckResult:
    case: ContactCase
    delta: float
    violations: dict = field(default_factory=dict)

    @property
    def max_violation(self) -> float:
        return max(self.violations.values()) if self.violations else 0.0


def check_scc(velocity, lam, mu, tol=1e-9) -> SCCCheckResult:
    """Evaluate the Signorini-Coulomb conditions for one contact.

    ``velocity`` is the constraint-space velocity plus error, ``J v + e``.
    The slip multiplier delta is recovered in the least-squares sense from
    ``delta * lam_t + mu * lam_n * w_t = 0``.  Violations are reported per
    condition so a test can see which one fails.

    The sign and complementarity violations of ``delta`` are scaled by
    ``||lam_t|| / (mu lam_n)``.  On the cone boundary, where slip happens, the
    factor is one; inside the cone it keeps the least-squares ``delta``, whose
    denominator ``||lam_t||^2`` may be tiny, from amplifying rounding noise in
    ``w_t``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    w = np.asarray(velocity, dtype=float)
    lam = np.asarray(lam, dtype=float)
    w_t, w_n = w[:2], float(w[2])
    lam_t, lam_n = lam[:2], float(lam[2])
    norm_t = float(np.linalg.norm(lam_t))
    cone_gap = mu * lam_n - norm_t

    if norm_t > 0.0:
        delta = -mu * lam_n * float(w_t @ lam_t) / (norm_t * norm_t)
    else:
        delta = 0.0
    dissipation = delta * lam_t + mu * lam_n * w_t

    radius = mu * lam_n
    scale = min(norm_t / radius, 1.0) if radius > 0.0 else 1.0
    violations = {
        "normal_sign": max(-lam_n, 0.0),
        "gap_sign": max(-w_n, 0.0),
        "normal_complementarity": abs(lam_n * w_n),
        "cone": max(-cone_gap, 0.0),
        "delta_sign": max(-delta, 0.0) * scale,
        "friction_complementarity": abs(delta * cone_gap) * scale,
        "max_dissipation": float(np.linalg.norm(dissipation)),
    }
    if lam_n <= tol:
        case = ContactCase.OPEN
    elif delta > tol:
        case = ContactCase.SLIP
    else:
        case = ContactCase.STICK
    return SCCCheckResult(case=case, delta=delta, violations=violations)
