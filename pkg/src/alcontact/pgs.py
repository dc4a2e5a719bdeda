"""Projected Gauss-Seidel over the Delassus operator (our baseline).

Constraints are visited in assembly order.  Each visit solves its own block
of ``J A^{-1} J^T`` against the current velocity residual and projects the
result onto the constraint's admissible set; the velocity is then corrected
with the cached column block ``A^{-1} J_i^T``.  The dynamics are handled on
the dense monolithic system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .assembly import ConstraintKind, ContactProblem, SolverState, monolithic_view
from .cone_ops import _strict
from .metrics import ResidualEvaluator, ResidualReport, Stopwatch, TraceRow

__all__ = ["DelassusBlocks", "PgsConfig", "solve_pgs"]

REGULARIZATION = 1e-10


@dataclass
class PgsConfig:
    """Attributes:
    max_sweeps: sweep cap.
    tol: stop when no impulse changes by more than this in a sweep.
    time_budget: optional solver time cap in seconds.
    """

    max_sweeps: int = 100
    tol: float = 1e-10
    time_budget: float | None = None

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be at least 1")


@dataclass
class DelassusBlocks:
    """Diagonal Delassus blocks and the cached ``A^{-1} J_i^T`` columns."""

    columns: list
    diagonal: list
    inverse: list

    @classmethod
    def build(cls, A_factor, J, rows) -> "DelassusBlocks":
        MinvJT = cho_solve(A_factor, J.T) if J.size else np.zeros((J.shape[1], 0))
        columns, diagonal, inverse = [], [], []
        for sl in rows:
            W = np.ascontiguousarray(MinvJT[:, sl])
            D = J[sl] @ W
            D = 0.5 * (D + D.T) + REGULARIZATION * np.eye(D.shape[0])
            columns.append(W)
            diagonal.append(D)
            inverse.append(np.linalg.inv(D))
        return cls(columns, diagonal, inverse)


def solve_pgs(
    problem: ContactProblem,
    warm: SolverState | None = None,
    cfg: PgsConfig | int | None = None,
    trace: bool = False,
) -> tuple:
    """Run projected Gauss-Seidel sweeps.

    Args:
        problem: assembled step.
        warm: previous iterate whose impulses seed the sweeps.
        cfg: settings, or just the sweep count.
        trace: record the contact-residual metric after every sweep.

    Returns:
        ``(SolverState, ResidualReport)``.
    """
    if cfg is None:
        cfg = PgsConfig()
    elif isinstance(cfg, int):
        cfg = PgsConfig(max_sweeps=cfg)
    evaluator = ResidualEvaluator(problem)
    clock = Stopwatch()
    clock.start()

    view = monolithic_view(problem)
    A, b, J, e = view
    factor = cho_factor(A)
    blocks = DelassusBlocks.build(factor, J, view.rows)
    cons = problem.constraints

    if warm is not None and warm.lam:
        lam = [np.array(li, dtype=float) for li in warm.lam]
    else:
        lam = [np.zeros(c.rows) for c in cons]
    v = cho_solve(factor, b + J.T @ np.concatenate(lam)) if cons else cho_solve(factor, b)

    rows = [
        (c.kind, np.ascontiguousarray(J[sl]), e[sl], blocks.columns[i], blocks.inverse[i], c.friction)
        for i, (c, sl) in enumerate(zip(cons, view.rows))
    ]
    history = []
    converged = False
    change = 0.0
    sweep = 0
    for sweep in range(1, cfg.max_sweeps + 1):
        change = 0.0
        for i, (kind, Ji, ei, Wi, Dinv, mu) in enumerate(rows):
            Jv = Ji @ v
            if kind is ConstraintKind.CONTACT:
                new = _strict(lam[i] - Dinv @ (Jv + ei), mu)
            elif kind is ConstraintKind.HARD:
                new = np.maximum(lam[i] - Dinv @ (Jv + ei), 0.0)
            else:
                # spring law with the velocity response of this row folded in
                c = cons[i]
                D = blocks.diagonal[i][0, 0]
                new = (-c.stiffness * ei - c.damping * Jv + c.damping * D * lam[i]) / (1.0 + c.damping * D)
            delta = new - lam[i]
            v += Wi @ delta
            lam[i] = new
            change = max(change, float(np.abs(delta).max()))
        if trace:
            clock.stop()
            history.append(TraceRow(sweep, clock.elapsed, evaluator(lam), change))
            clock.start()
        if change <= cfg.tol:
            converged = True
            break
        if cfg.time_budget is not None and clock.now > cfg.time_budget:
            break
    clock.stop()

    lam_vec = np.concatenate(lam) if lam else np.zeros(0)
    theta_d = float(np.linalg.norm(A @ v - b - J.T @ lam_vec))
    state = SolverState(
        vhat=problem.split(v),
        lam=[li.copy() for li in lam],
        iterations=sweep,
        converged=converged,
    )
    report = ResidualReport(
        solver="pgs",
        iterations=sweep,
        inner_iterations=0,
        wall_time=clock.elapsed,
        converged=converged,
        residual=evaluator(state.lam),
        theta_p=change,
        theta_d=theta_d,
        history=history,
    )
    return state, report
