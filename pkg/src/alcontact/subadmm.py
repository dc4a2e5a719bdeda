"""Subsystem-based ADMM.

Every constraint ``i`` keeps one slack ``z_ij`` and multiplier ``u_ij`` per
block ``j``.  An iteration alternates three phases that are independent
across their units:

1. per subsystem, ``vhat_j`` from the pre-factorized matrix
   ``A_j + beta sum_i J_ij^T J_ij``;
2. per constraint, ``lam_i`` from a closed form applied to the sum of
   ``y_ij = beta J_ij vhat_j + u_ij`` over its ``|Z_i|`` blocks, then
   ``z_ij = (y_ij + lam_i) / beta``;
3. the multiplier update, which reduces to ``u_ij = -lam_i``.

Iterates are stored on "block rows": the rows of all blocks concatenated in
constraint order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .assembly import ConstraintKind, ContactProblem, SolverState
from .cone_ops import _strict
from .metrics import ResidualEvaluator, ResidualReport, Stopwatch, TraceRow
from .multibody import EffectiveBodyMatrix, factor_subsystem_matrix

__all__ = [
    "AdmmResiduals",
    "StaleFactorizationError",
    "SubAdmm",
    "SubAdmmConfig",
    "adapt_beta",
    "init_beta",
    "solve_subadmm",
]

BETA_MIN, BETA_MAX = 1e-6, 1e12


class StaleFactorizationError(RuntimeError):
    """The penalty changed but the subsystem matrices were not refactored."""


@dataclass
class SubAdmmConfig:
    """Settings of the subsystem ADMM.

    Attributes:
        gamma: residual imbalance that triggers a penalty change (> 1).
        tol: stop once ``theta_p + theta_d`` drops below this value.
        l_max: iteration cap.
        beta_init: ``"geometric"`` for the pseudo-density rule or a number.
        adapt_every: penalty adaptation period in iterations (0 disables it).
        time_budget: optional solver time cap in seconds.
        workers: threads for the per-subsystem phase; results do not depend
            on this value.
    """

    gamma: float = 10.0
    tol: float = 1e-6
    l_max: int = 200
    beta_init: str | float = "geometric"
    adapt_every: int = 10
    time_budget: float | None = None
    workers: int = 1

    def __post_init__(self):
        if not self.gamma > 1:
            raise ValueError("gamma must exceed 1")
        if self.l_max < 1:
            raise ValueError("l_max must be at least 1")
        if self.beta_init != "geometric" and not float(self.beta_init) > 0:
            raise ValueError("beta_init must be 'geometric' or a positive number")


@dataclass
class AdmmResiduals:
    theta_p: float
    theta_d: float


def init_beta(problem: ContactProblem) -> float:
    """Geometric mean of mass per contact point over bodies that have contacts.

    Falls back to the mean body mass of the dynamic bodies when there are no
    contacts.
    """
    counts = {}
    for c in problem.constraints:
        if c.kind is not ConstraintKind.CONTACT:
            continue
        for blk in c.blocks:
            if blk.body is not None:
                key = (blk.subsystem, blk.body)
                counts[key] = counts.get(key, 0) + 1
    if counts:
        densities = [problem.subsystems[j].model.bodies[k].mass / n for (j, k), n in counts.items()]
        return float(np.exp(np.mean(np.log(densities))))
    masses = [
        body.mass
        for term in problem.subsystems
        for body, static in zip(term.model.bodies, term.model.static_bodies)
        if not static
    ]
    return float(np.mean(masses)) if masses else 1.0


def adapt_beta(beta: float, residuals: AdmmResiduals, gamma: float = 10.0) -> tuple:
    """Balance primal and dual residuals.

    Returns:
        ``(beta', changed)``; ``beta' = beta * sqrt(theta_p / theta_d)`` when
        one residual exceeds ``gamma`` times the other, clamped to
        ``[1e-6, 1e12]``.  A zero residual opposite a non-zero one scales by 10.
    """
    tp, td = residuals.theta_p, residuals.theta_d
    if not (np.isfinite(tp) and np.isfinite(td)):
        raise FloatingPointError("non-finite ADMM residuals")
    if tp == 0.0 and td == 0.0:
        return beta, False
    if td == 0.0:
        new = beta * 10.0
    elif tp == 0.0:
        new = beta / 10.0
    elif tp > gamma * td or td > gamma * tp:
        new = beta * np.sqrt(tp / td)
    else:
        return beta, False
    new = float(np.clip(new, BETA_MIN, BETA_MAX))
    return new, new != beta


def _stack(vhat):
    return np.concatenate(vhat) if len(vhat) else np.zeros(0)


class SubAdmm:
    """Layout, factorizations and phase updates for one problem."""

    def __init__(self, problem: ContactProblem, workers: int = 1):
        self.problem = problem
        self.workers = workers
        cons = problem.constraints

        # block rows and constraint rows
        block_rows, starts, owners, subs = [], [], [], []
        con_rows = []
        r = rc = 0
        for i, c in enumerate(cons):
            con_rows.append(slice(rc, rc + c.rows))
            for blk in c.blocks:
                starts.append(r)
                owners.append(i)
                subs.append(blk.subsystem)
                block_rows.extend(range(rc, rc + c.rows))
                r += c.rows
            rc += c.rows
        self.R, self.M = r, rc
        self.block_starts = np.array(starts, dtype=int)
        self.block_owner = np.array(owners, dtype=int)
        self.con_rows = con_rows
        # S sums block rows into constraint rows
        self.S = sp.csr_matrix((np.ones(r), (np.array(block_rows, dtype=int), np.arange(r))), shape=(rc, r))
        self.ST = self.S.T.tocsr()
        self.card = np.array([c.cardinality for c in cons], dtype=float)

        # one pass over the blocks: rows and Jacobians grouped per subsystem
        nsub = problem.num_subsystems
        idx = [[] for _ in range(nsub)]
        mats = [[] for _ in range(nsub)]
        self.sub_blocks = [[] for _ in range(nsub)]
        rr, cc, vv = [], [], []
        offsets = problem.offsets
        self.offsets = offsets
        b = 0
        for c in cons:
            for blk in c.blocks:
                j = blk.subsystem
                idx[j].extend(range(b, b + c.rows))
                mats[j].append(blk.jacobian)
                self.sub_blocks[j].append(blk)
                nz_r, nz_c = np.nonzero(blk.jacobian)
                rr.append(nz_r + b)
                cc.append(nz_c + offsets[j])
                vv.append(blk.jacobian[nz_r, nz_c])
                b += c.rows
        self.sub_rows = [np.array(x, dtype=int) for x in idx]
        self.G = [np.vstack(m) if m else np.zeros((0, t.nv)) for m, t in zip(mats, problem.subsystems)]
        # all blocks as one sparse operator on the stacked velocity
        cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dtype=dt))
        self.Gs = sp.csr_matrix((cat(vv, float), (cat(rr, int), cat(cc, int))), shape=(r, int(offsets[-1])))
        self.GsT = self.Gs.T.tocsr()
        self.A = sp.block_diag([t.A for t in problem.subsystems], format="csr") if problem.subsystems else sp.csr_matrix((0, 0))
        self.bvec = np.concatenate([t.b for t in problem.subsystems]) if problem.subsystems else np.zeros(0)
        self.sub_starts = offsets[:-1][np.diff(offsets) > 0]

        kinds = [c.kind for c in cons]
        self.contact = np.array([i for i, k in enumerate(kinds) if k is ConstraintKind.CONTACT], dtype=int)
        self.hard = np.array([i for i, k in enumerate(kinds) if k is ConstraintKind.HARD], dtype=int)
        self.soft = np.array([i for i, k in enumerate(kinds) if k is ConstraintKind.SOFT], dtype=int)
        self.rows_c = np.array([np.arange(con_rows[i].start, con_rows[i].stop) for i in self.contact], dtype=int).reshape(-1, 3)
        self.rows_h = np.array([con_rows[i].start for i in self.hard], dtype=int)
        self.rows_s = np.array([con_rows[i].start for i in self.soft], dtype=int)
        e = np.concatenate([c.error for c in cons]) if cons else np.zeros(0)
        self.e = e
        self.mu = np.array([cons[i].friction for i in self.contact], dtype=float)
        self.k = np.array([cons[i].stiffness for i in self.soft], dtype=float)
        self.b = np.array([cons[i].damping for i in self.soft], dtype=float)

        self.beta = None
        self.factor_beta = None
        self.factors = []

    def factorize(self, beta: float):
        """Factor ``A_j + beta sum_i J_ij^T J_ij`` for every subsystem."""
        self.beta = beta
        self.factors = self._map(lambda j: self._factor_one(j, beta), range(self.problem.num_subsystems))
        self.factor_beta = beta

    def _factor_one(self, j, beta):
        term = self.problem.subsystems[j]
        kin, model = term.kin, term.model
        H = []
        for k, body in enumerate(model.bodies):
            R = kin.rotations[k]
            H.append(EffectiveBodyMatrix.from_inertia(body.mass, kin.coms[k], R @ body.inertia @ R.T, term.inertia_scale).matrix())
        joint_diag = np.zeros(term.nv)
        for blk in self.sub_blocks[j]:
            if blk.body is None:
                JtJ = blk.jacobian.T @ blk.jacobian
                if np.any(JtJ - np.diag(np.diag(JtJ))):
                    raise ValueError("joint-space rows must act on single coordinates")
                joint_diag += beta * np.diag(JtJ)
            elif blk.point is not None:
                H[blk.body] += EffectiveBodyMatrix.contact_term(blk.point, beta).matrix()
            else:
                H[blk.body] += beta * blk.body_jacobian.T @ blk.body_jacobian
        return factor_subsystem_matrix(model, H, kin, joint_diag)

    def _map(self, fn, items):
        if self.workers > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                return list(pool.map(fn, items))
        return [fn(x) for x in items]

    # phase 1
    def update_vhat(self, z, u) -> list:
        if self.factor_beta is None or self.factor_beta != self.beta:
            raise StaleFactorizationError("penalty changed without refactorization")
        rhs = self.bvec + self.GsT @ (self.beta * z - u)
        o = self.offsets

        def one(j):
            return self.factors[j].solve(rhs[o[j]:o[j + 1]])

        return self._map(one, range(self.problem.num_subsystems))

    def block_velocity(self, vhat) -> np.ndarray:
        """``J_ij vhat_j`` on block rows."""
        return self.Gs @ _stack(vhat)

    # phase 2
    def update_slack(self, vhat, u) -> tuple:
        """Returns ``(z, lam_rows)`` with ``lam_rows`` on constraint rows."""
        beta = self.beta
        Gv = self.block_velocity(vhat)
        y = beta * Gv + u
        Y = self.S @ y
        lam = np.empty(self.M)
        if len(self.contact):
            arg = -(Y[self.rows_c] + beta * self.e[self.rows_c]) / self.card[self.contact, None]
            lam[self.rows_c] = _strict(arg, self.mu)
        if len(self.hard):
            lam[self.rows_h] = np.maximum(-(Y[self.rows_h] + beta * self.e[self.rows_h]) / self.card[self.hard], 0.0)
        if len(self.soft):
            Ys = Y[self.rows_s]
            lam[self.rows_s] = -(self.b * Ys + beta * self.k * self.e[self.rows_s]) / (self.b * self.card[self.soft] + beta)
        force = self.ST @ lam
        z = (y + force) / beta
        # reused by the multiplier and residual phases of this iteration
        self._cache = (vhat, Gv, lam, force)
        return z, lam

    # phase 3
    def update_multiplier(self, lam) -> np.ndarray:
        return -self._force(lam)

    def _force(self, lam):
        """``S^T lam``: every constraint's impulse copied onto its blocks."""
        cache = getattr(self, "_cache", None)
        if cache is not None and cache[2] is lam:
            return cache[3]
        return self.ST @ lam

    def residuals(self, vhat, z, lam) -> AdmmResiduals:
        cache = getattr(self, "_cache", None)
        Gv = cache[1] if cache is not None and cache[0] is vhat else self.block_velocity(vhat)
        diff = Gv - z
        if self.R:
            sq = np.add.reduceat(diff**2, self.block_starts)
            theta_p = float(np.sqrt(sq.max()))
        else:
            theta_p = 0.0
        d = self.A @ _stack(vhat) - self.bvec - self.GsT @ self._force(lam)
        theta_d = float(np.sqrt(np.add.reduceat(d**2, self.sub_starts).max())) if d.size else 0.0
        return AdmmResiduals(theta_p, theta_d)

    def lam_list(self, lam) -> list:
        return [lam[sl].copy() for sl in self.con_rows]

    def per_constraint(self, x) -> list:
        """Block-row vector as ``(cardinality, rows)`` arrays per constraint."""
        out = []
        b = 0
        for c in self.problem.constraints:
            n = c.cardinality * c.rows
            out.append(x[b:b + n].reshape(c.cardinality, c.rows).copy())
            b += n
        return out


def solve_subadmm(
    problem: ContactProblem,
    warm: SolverState | None = None,
    cfg: SubAdmmConfig | None = None,
    trace: bool = False,
) -> tuple:
    """Run the subsystem ADMM on one step.

    Args:
        problem: assembled step.
        warm: previous iterate; ``lam`` seeds ``u = -lam`` and ``vhat`` the
            slack ``z = J vhat``.  Without it the current velocities and zero
            impulses are used.
        cfg: solver settings.
        trace: record the contact-residual metric every iteration (excluded
            from the timing).

    Returns:
        ``(SolverState, ResidualReport)``.

    Raises:
        FloatingPointError: an iterate became non-finite.
    """
    cfg = cfg or SubAdmmConfig()
    evaluator = ResidualEvaluator(problem)
    clock = Stopwatch()
    clock.start()

    solver = SubAdmm(problem, cfg.workers)
    beta = init_beta(problem) if cfg.beta_init == "geometric" else float(cfg.beta_init)
    solver.factorize(beta)

    if warm is not None and warm.vhat:
        vhat = [np.array(v, dtype=float) for v in warm.vhat]
    else:
        vhat = [t.v.copy() for t in problem.subsystems]
    if warm is not None and warm.lam:
        lam = np.concatenate(warm.lam) if warm.lam else np.zeros(0)
    else:
        lam = np.zeros(solver.M)
    u = solver.update_multiplier(lam)
    z = solver.block_velocity(vhat)

    history = []
    converged = False
    res = AdmmResiduals(float("nan"), float("nan"))
    it = 0
    for it in range(1, cfg.l_max + 1):
        vhat = solver.update_vhat(z, u)
        z, lam = solver.update_slack(vhat, u)
        u = solver.update_multiplier(lam)
        res = solver.residuals(vhat, z, lam)
        if not (np.isfinite(res.theta_p) and np.isfinite(res.theta_d)):
            raise FloatingPointError(f"SubADMM iterate became non-finite at iteration {it} (beta={solver.beta:g})")
        if trace:
            clock.stop()
            history.append(TraceRow(it, clock.elapsed, evaluator(solver.lam_list(lam)), res.theta_p, res.theta_d, solver.beta))
            clock.start()
        if res.theta_p + res.theta_d < cfg.tol:
            converged = True
            break
        if cfg.time_budget is not None and clock.now > cfg.time_budget:
            break
        if cfg.adapt_every and it % cfg.adapt_every == 0:
            new_beta, changed = adapt_beta(solver.beta, res, cfg.gamma)
            if changed:
                solver.factorize(new_beta)
    clock.stop()

    lam_list = solver.lam_list(lam)
    state = SolverState(
        vhat=[np.array(v) for v in vhat],
        lam=lam_list,
        z=solver.per_constraint(z),
        u=solver.per_constraint(u),
        beta=solver.beta,
        iterations=it,
        inner_iterations=0,
        converged=converged,
    )
    report = ResidualReport(
        solver="subadmm",
        iterations=it,
        inner_iterations=0,
        wall_time=clock.elapsed,
        converged=converged,
        residual=evaluator(lam_list),
        theta_p=res.theta_p,
        theta_d=res.theta_d,
        beta=solver.beta,
        history=history,
    )
    return state, report
