"""Cascaded Newton augmented Lagrangian (CANAL).

Each outer iteration freezes the friction perturbation
``e~_i = e_i + (0, 0, mu_i ||z_{i,t}||)``, which turns the contact law into a
projection onto the friction cone.  The velocity minimizing the strongly
convex function

    h(v) = 1/2 v^T A v - b^T v + sum_i phi_i(lam_i(v))

with ``phi_i = ||lam_i||^2 / (2 beta)`` for contact and hard rows (and the
matching spring energy for soft rows) is found by exact Newton iterations with
an exact line search.  The outer loop then updates slack, multipliers and the
penalty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .assembly import ContactProblem, SolverState
from .cone_ops import _prox, _prox_derivative, _prox_with_curvature, project_cone_strict
from .linesearch import rtsafe
from .metrics import ResidualEvaluator, ResidualReport, Stopwatch, TraceRow
from .stacking import StackedConstraints

__all__ = ["CanalConfig", "CanalSystem", "exact_line_search", "newton_step", "residual_r", "solve_canal"]


@dataclass
class CanalConfig:
    """Settings of the cascaded solver.

    Attributes:
        beta0: initial penalty.
        beta_max: penalty cap.
        kappa: penalty growth factor (> 1).
        zeta: required reduction of the primal residual per outer iteration.
        newton_tol: inner stop on ``||r||``, raised to the roundoff floor of
            the residual evaluation when that is larger.
        al_tol: outer stop on ``||J vhat - z||``.
        max_al_iters: outer iteration cap.
        max_newton_iters: inner iteration cap per outer iteration.
        time_budget: optional solver time cap in seconds.
    """

    beta0: float = 1e4
    beta_max: float = 1e8
    kappa: float = 10.0
    zeta: float = 0.5
    newton_tol: float = 1e-10
    al_tol: float = 1e-10
    max_al_iters: int = 50
    max_newton_iters: int = 50
    time_budget: float | None = None

    def __post_init__(self):
        if not 0 < self.beta0 <= self.beta_max:
            raise ValueError("need 0 < beta0 <= beta_max")
        if not self.kappa > 1:
            raise ValueError("kappa must exceed 1")
        if not 0 < self.zeta < 1:
            raise ValueError("zeta must lie in (0, 1)")
        if self.max_al_iters < 1 or self.max_newton_iters < 1:
            raise ValueError("iteration caps must be positive")


class CanalSystem:
    """The surrogate problem of one outer iteration on the monolithic system."""

    def __init__(self, problem: ContactProblem, stacked: StackedConstraints | None = None):
        self.problem = problem
        self.s = StackedConstraints.build(problem) if stacked is None else stacked
        self.A, self.b = self.s.view.A, self.s.view.b

    # grouped multipliers are tuples (uc, uh, us)
    def perturbed_error(self, zc) -> np.ndarray:
        """Contact errors with the normal part raised by ``mu ||z_t||``."""
        et = self.s.ec.copy()
        if len(et):
            et[:, 2] += self.s.mu * np.linalg.norm(zc[:, :2], axis=1)
        return et

    def impulse_args(self, Jv, u, beta, etc):
        """Projection arguments ``-beta J v - u - beta e`` of every group."""
        wc, wh, ws = Jv
        uc, uh, us = u
        return -beta * wc - uc - beta * etc, -beta * wh - uh - beta * self.s.eh, ws * beta + us

    def impulses(self, args, beta):
        sc, sh, ws_beta = args
        s = self.s
        lc = _prox(sc[:, :2], sc[:, 2], s.mu)
        lh = np.maximum(sh, 0.0)
        ls = -(s.bs * ws_beta + beta * s.ks * s.es) / (s.bs + beta)
        return lc, lh, ls

    def residual(self, v, u, beta, etc):
        lam = self.impulses(self.impulse_args(self.s.apply(v), u, beta, etc), beta)
        return self.A @ v - self.b - self.s.transpose_apply(*lam), lam

    def roundoff_floor(self, v, u, beta, etc) -> float:
        """Size of the rounding error in :meth:`residual` at this point.

        The impulses come out of arguments of size ``beta ||J v||``, so for
        large ``beta`` the residual cannot get below a few ulps of that.
        """
        eps = np.finfo(float).eps
        args = self.impulse_args(self.s.apply(v), u, beta, etc)
        size = max((float(np.abs(a).max()) for a in args if a.size), default=0.0)
        return 10.0 * eps * (self.s.norm_inf * size + float(np.abs(self.A @ v).max(initial=0.0)) + float(np.abs(self.b).max(initial=0.0)))

    def objective(self, v, u, beta, etc) -> float:
        lc, lh, ls = self.impulses(self.impulse_args(self.s.apply(v), u, beta, etc), beta)
        soft_w = (self.s.bs + beta) / (2.0 * self.s.bs * beta)
        return float(
            0.5 * v @ self.A @ v - self.b @ v + (np.sum(lc**2) + np.sum(lh**2)) / (2.0 * beta) + np.sum(soft_w * ls**2)
        )

    def derivative_blocks(self, args, beta):
        sc, sh, _ = args
        s = self.s
        Dc = _prox_derivative(sc[:, :2], sc[:, 2], s.mu)
        Dh = (sh > 0.0).astype(float)
        Ds = s.bs / (s.bs + beta)
        return Dc, Dh, Ds

    def hessian(self, v, u, beta, etc) -> np.ndarray:
        """``A + beta sum_i J_i^T (dlam_i/dlam_i*) J_i``."""
        s = self.s
        Dc, Dh, Ds = self.derivative_blocks(self.impulse_args(s.apply(v), u, beta, etc), beta)
        H = self.A.copy()
        if len(Dc):
            rows = 3 * len(Dc)
            DJ = np.matmul(Dc, s.Jc).reshape(rows, -1)
            H += beta * (s.Jc.reshape(rows, -1).T @ DJ)
        H += beta * (s.Jh.T * Dh) @ s.Jh
        H += beta * (s.Js.T * Ds) @ s.Js
        return H


def _pack_state(system: CanalSystem, per_constraint, default_rows):
    if per_constraint is None:
        per_constraint = [np.zeros(r) for r in default_rows]
    return system.s.pack(per_constraint)


def residual_r(problem: ContactProblem, state: SolverState, e_tilde=None) -> np.ndarray:
    """Newton residual ``A v - b - J^T lam(v)`` with the proximal cone operator.

    ``e_tilde`` is the ``(nc, 3)`` array of perturbed contact errors; the
    unperturbed errors are used when omitted.
    """
    system = CanalSystem(problem)
    u = _pack_state(system, state.u or None, [c.rows for c in problem.constraints])
    etc = system.s.ec if e_tilde is None else np.asarray(e_tilde, dtype=float)
    r, _ = system.residual(state.vhat_vector(), u, state.beta, etc)
    return r


def newton_step(problem: ContactProblem, state: SolverState, e_tilde=None) -> np.ndarray:
    """Direction ``-H^{-1} r`` for the surrogate objective."""
    system = CanalSystem(problem)
    u = _pack_state(system, state.u or None, [c.rows for c in problem.constraints])
    etc = system.s.ec if e_tilde is None else np.asarray(e_tilde, dtype=float)
    v = state.vhat_vector()
    r, _ = system.residual(v, u, state.beta, etc)
    return -cho_solve(cho_factor(system.hessian(v, u, state.beta, etc)), r)


def _line_derivatives(system: CanalSystem, v, d, u, beta, etc):
    """Closure returning ``(phi'(alpha), phi''(alpha))`` for ``phi(alpha) = h(v + alpha d)``."""
    s = system.s
    Ad = system.A @ d
    g_lin = d @ (system.A @ v - system.b)
    dAd = d @ Ad
    Jd = s.apply(d)
    base = system.impulse_args(s.apply(v), u, beta, etc)
    step = (-beta * Jd[0], -beta * Jd[1], beta * Jd[2])

    Ds = s.bs / (s.bs + beta)
    soft_curv = float(Ds @ Jd[2] ** 2)

    def derivatives(alpha):
        sc, sh, ss = (a + alpha * st for a, st in zip(base, step))
        lc, qc = _prox_with_curvature(sc, s.mu, Jd[0])
        lh = np.maximum(sh, 0.0)
        ls = -(s.bs * ss + beta * s.ks * s.es) / (s.bs + beta)
        g = g_lin + alpha * dAd - np.sum(Jd[0] * lc) - Jd[1] @ lh - Jd[2] @ ls
        h = dAd + beta * (qc.sum() + (sh > 0.0) @ Jd[1] ** 2 + soft_curv)
        return float(g), float(h)

    return derivatives


def exact_line_search(problem: ContactProblem, state: SolverState, d, e_tilde=None) -> float:
    """Step length minimizing the surrogate objective along ``d``.

    Raises:
        NotDescentError: ``d`` is not a descent direction.
    """
    system = CanalSystem(problem)
    u = _pack_state(system, state.u or None, [c.rows for c in problem.constraints])
    etc = system.s.ec if e_tilde is None else np.asarray(e_tilde, dtype=float)
    return rtsafe(_line_derivatives(system, state.vhat_vector(), np.asarray(d, dtype=float), u, state.beta, etc))


def _strict_impulses(system: CanalSystem, Jv, u, beta):
    """Exact constraint laws at ``v``, used to seed the slack."""
    sc, sh, ws_beta = system.impulse_args(Jv, u, beta, system.s.ec)
    lc = project_cone_strict(sc, system.s.mu) if len(sc) else np.zeros((0, 3))
    _, lh, ls = system.impulses((sc, sh, ws_beta), beta)
    return lc, lh, ls


def _flat(groups):
    return np.concatenate([np.ravel(g) for g in groups])


def solve_canal(
    problem: ContactProblem,
    warm: SolverState | None = None,
    cfg: CanalConfig | None = None,
    trace: bool = False,
) -> tuple:
    """Run the cascaded Newton augmented Lagrangian on one step.

    Args:
        problem: assembled step.
        warm: previous iterate; ``vhat`` seeds the velocity and ``lam`` the
            multipliers through ``u = -lam``.  Without it the solve starts from
            the current velocity with zero multipliers.
        cfg: solver settings.
        trace: record the contact-residual metric after every outer
            iteration (excluded from the timing).

    Returns:
        ``(SolverState, ResidualReport)``.  When the iteration caps are hit the
        last iterate is returned with ``converged = False``.
    """
    cfg = cfg or CanalConfig()
    evaluator = ResidualEvaluator(problem)
    clock = Stopwatch()
    clock.start()

    system = CanalSystem(problem)
    s = system.s
    rows = [c.rows for c in problem.constraints]
    if warm is not None and warm.vhat:
        v = warm.vhat_vector().copy()
    else:
        v = np.concatenate([t.v for t in problem.subsystems]) if problem.subsystems else np.zeros(0)
    lam0 = warm.lam if warm is not None and warm.lam else None
    lc0, lh0, ls0 = _pack_state(system, lam0, rows)
    u = (-lc0, -lh0, -ls0)
    beta = cfg.beta0

    Jv = s.apply(v)
    lam = _strict_impulses(system, Jv, u, beta)
    z = tuple(w + (uu + ll) / beta for w, uu, ll in zip(Jv, u, lam))
    res_prev = float(np.linalg.norm(_flat(u) + _flat(lam))) / beta

    history = []
    newton_total = 0
    converged = False
    rnorm = float("nan")
    res = res_prev
    al_iter = 0
    for al_iter in range(1, cfg.max_al_iters + 1):
        etc = system.perturbed_error(z[0])
        for _ in range(cfg.max_newton_iters):
            r, _ = system.residual(v, u, beta, etc)
            rnorm = float(np.linalg.norm(r))
            if rnorm < max(cfg.newton_tol, system.roundoff_floor(v, u, beta, etc)):
                break
            d = -cho_solve(cho_factor(system.hessian(v, u, beta, etc)), r)
            if not d @ r < 0.0:
                break
            alpha = rtsafe(_line_derivatives(system, v, d, u, beta, etc), g0=float(d @ r))
            newton_total += 1
            v = v + alpha * d
            if alpha * np.linalg.norm(d) <= 1e-15 * (1.0 + np.linalg.norm(v)):
                break
            if cfg.time_budget is not None and clock.now > cfg.time_budget:
                break

        Jv = s.apply(v)
        lam = system.impulses(system.impulse_args(Jv, u, beta, etc), beta)
        z = tuple(w + (uu + ll) / beta for w, uu, ll in zip(Jv, u, lam))
        u = tuple(-ll for ll in lam)
        res = float(np.linalg.norm(_flat(Jv) - _flat(z)))
        if not np.all(np.isfinite(v)):
            raise FloatingPointError("CANAL produced a non-finite velocity")

        if trace:
            clock.stop()
            history.append(TraceRow(al_iter, clock.elapsed, evaluator(s.unpack(*lam)), res, rnorm, beta))
            clock.start()
        if res < cfg.al_tol:
            converged = True
            break
        if res > cfg.zeta * res_prev:
            beta = min(cfg.kappa * beta, cfg.beta_max)
        res_prev = res
        if cfg.time_budget is not None and clock.now > cfg.time_budget:
            break
    clock.stop()

    lam_list = s.unpack(*lam)
    state = SolverState(
        vhat=problem.split(v),
        lam=lam_list,
        z=s.unpack(*z),
        u=s.unpack(*u),
        beta=beta,
        iterations=al_iter,
        inner_iterations=newton_total,
        converged=converged,
    )
    report = ResidualReport(
        solver="canal",
        iterations=al_iter,
        inner_iterations=newton_total,
        wall_time=clock.elapsed,
        converged=converged,
        residual=evaluator(lam_list),
        theta_p=res,
        theta_d=rnorm,
        beta=beta,
        history=history,
    )
    return state, report
