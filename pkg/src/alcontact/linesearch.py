"""One-dimensional minimization of a strictly convex function along a ray."""

from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = ["NotDescentError", "rtsafe"]


class NotDescentError(ValueError):
    """The search direction does not decrease the objective at the origin."""


def rtsafe(
    derivatives: Callable[[float], tuple],
    rtol: float = 1e-8,
    max_iter: int = 100,
    max_doublings: int = 60,
    g0: float | None = None,
) -> float:
    """Minimizer of a strictly convex ``phi`` on ``alpha >= 0``.

    The root of ``phi'`` is bracketed by doubling from ``alpha = 1`` and then
    polished with Newton steps that fall back to bisection whenever they
    leave the bracket or stall.

    Args:
        derivatives: returns ``(phi'(alpha), phi''(alpha))``.
        rtol: stop once ``|phi'(alpha)| <= rtol * |phi'(0)|``.
        max_iter: cap on the polishing iterations.
        max_doublings: cap on bracket expansions.
        g0: ``phi'(0)`` when the caller already knows it.

    Returns:
        The step ``alpha > 0``.

    Raises:
        NotDescentError: ``phi'(0) >= 0``.
    """
    if g0 is None:
        g0, _ = derivatives(0.0)
    if not g0 < 0.0:
        raise NotDescentError(f"phi'(0) = {g0!r} is not negative")
    tol = rtol * abs(g0)

    lo, hi = 0.0, 1.0
    g, h = derivatives(hi)
    doublings = 0
    while g < 0.0 and abs(g) > tol:
        if doublings == max_doublings:
            raise NotDescentError("phi' stays negative; the objective is not bounded below along the ray")
        lo, hi = hi, 2.0 * hi
        g, h = derivatives(hi)
        doublings += 1
    if abs(g) <= tol:
        return hi

    x = hi
    dx_old = dx = hi - lo
    for _ in range(max_iter):
        if abs(g) <= tol:
            return x
        if g < 0.0:
            lo = x
        else:
            hi = x
        newton_ok = h > 0.0 and lo < x - g / h < hi and abs(2.0 * g) <= abs(dx_old * h)
        dx_old = dx
        if newton_ok:
            dx = g / h
            x = x - dx
        else:
            dx = 0.5 * (hi - lo)
            x = lo + dx
        if hi - lo <= 4.0 * np.finfo(float).eps * hi:
            return x
        g, h = derivatives(x)
    return x
