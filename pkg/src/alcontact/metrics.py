"""Solver-agnostic accuracy measure and per-solve reports."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .assembly import ConstraintKind, ContactProblem
from .cone_ops import project_cone_strict

__all__ = ["ResidualEvaluator", "ResidualReport", "Stopwatch", "TraceRow", "contact_residual_metric"]


@dataclass
class TraceRow:
    iteration: int
    time: float
    residual: float
    theta_p: float = float("nan")
    theta_d: float = float("nan")
    beta: float = float("nan")


@dataclass
class ResidualReport:
    """Outcome of one solve.

    ``residual`` is the contact-residual metric, ``theta_p``/``theta_d`` the
    solver's own primal/dual residuals, ``wall_time`` the solver time in
    seconds and ``history`` the per-iteration trace when requested.
    """

    solver: str
    iterations: int
    inner_iterations: int
    wall_time: float
    converged: bool
    residual: float = float("nan")
    theta_p: float = float("nan")
    theta_d: float = float("nan")
    beta: float = float("nan")
    history: list = field(default_factory=list)


class Stopwatch:
    """Accumulating timer that can be paused while traces are recorded."""

    def __init__(self):
        self.elapsed = 0.0
        self._start = None

    def start(self):
        self._start = time.perf_counter()

    def stop(self):
        if self._start is not None:
            self.elapsed += time.perf_counter() - self._start
            self._start = None

    @property
    def now(self) -> float:
        running = 0.0 if self._start is None else time.perf_counter() - self._start
        return self.elapsed + running


class ResidualEvaluator:
    """Contact-residual metric with the dynamics factorized once.

    For impulses ``lam`` it computes ``vhat = A^{-1}(b + J^T lam)`` and, per
    constraint, ``lam_i - T_i(lam_i - J_i vhat - e_i)`` where ``T_i`` is the
    exact constraint law at unit penalty (strict cone projection for contacts,
    clamp for hard rows, the spring law for soft rows).  The stacked norm is
    divided by the number of contacts, or by one when there are none.
    """

    def __init__(self, problem: ContactProblem):
        self.problem = problem
        self.factors = [cho_factor(s.A) for s in problem.subsystems]

    def velocities(self, lam) -> list:
        rhs = [s.b.copy() for s in self.problem.subsystems]
        for c, li in zip(self.problem.constraints, lam):
            for blk in c.blocks:
                rhs[blk.subsystem] += blk.jacobian.T @ li
        return [cho_solve(f, r) for f, r in zip(self.factors, rhs)]

    def __call__(self, lam) -> float:
        problem = self.problem
        vhat = self.velocities(lam)
        total = 0.0
        for c, li in zip(problem.constraints, lam):
            w = sum(blk.jacobian @ vhat[blk.subsystem] for blk in c.blocks)
            s = w - li
            if c.kind is ConstraintKind.CONTACT:
                new = project_cone_strict(-s - c.error, c.friction)
            elif c.kind is ConstraintKind.HARD:
                new = np.maximum(-s - c.error, 0.0)
            else:
                new = -(c.damping * s + c.stiffness * c.error) / (c.damping + 1.0)
            total += float(np.sum((li - new) ** 2))
        return float(np.sqrt(total)) / max(problem.num_contacts, 1)


def contact_residual_metric(problem: ContactProblem, lam) -> float:
    """Accuracy of impulses ``lam`` (one array per constraint) on ``problem``.

    Zero exactly when every constraint law holds with the velocity implied by
    the dynamics.
    """
    if len(lam) != problem.num_constraints:
        raise ValueError(f"expected {problem.num_constraints} impulses, got {len(lam)}")
    return ResidualEvaluator(problem)(lam)
