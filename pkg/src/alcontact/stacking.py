"""Constraint rows of a monolithic view grouped by kind for vectorized evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import ConstraintKind, ContactProblem, MonolithicView, monolithic_view


@dataclass
class StackedConstraints:
    """Dense Jacobians and parameters of contacts, hard rows and soft rows.

    Contact quantities are shaped ``(nc, 3)``; hard and soft ones ``(nh,)``
    and ``(ns,)``.  ``contact``, ``hard`` and ``soft`` hold the constraint
    indices of each group in assembly order.
    """

    view: MonolithicView
    contact: np.ndarray
    hard: np.ndarray
    soft: np.ndarray
    Jc: np.ndarray
    ec: np.ndarray
    mu: np.ndarray
    Jh: np.ndarray
    eh: np.ndarray
    Js: np.ndarray
    es: np.ndarray
    ks: np.ndarray
    bs: np.ndarray

    @property
    def norm_inf(self) -> float:
        """``||J^T||_inf``: largest absolute column sum of the stacked Jacobian."""
        J = self.view.J
        return float(np.abs(J).sum(axis=0).max()) if J.size else 0.0

    @classmethod
    def build(cls, problem: ContactProblem, view: MonolithicView | None = None) -> "StackedConstraints":
        view = monolithic_view(problem) if view is None else view
        n = view.A.shape[0]
        groups = {k: [] for k in ConstraintKind}
        for i, c in enumerate(problem.constraints):
            groups[c.kind].append(i)
        contact = np.array(groups[ConstraintKind.CONTACT], dtype=int)
        hard = np.array(groups[ConstraintKind.HARD], dtype=int)
        soft = np.array(groups[ConstraintKind.SOFT], dtype=int)

        def rows_of(idx):
            if len(idx) == 0:
                return np.zeros(0, dtype=int)
            return np.concatenate([np.arange(view.rows[i].start, view.rows[i].stop) for i in idx])

        rc, rh, rs = rows_of(contact), rows_of(hard), rows_of(soft)
        cons = problem.constraints
        return cls(
            view=view,
            contact=contact,
            hard=hard,
            soft=soft,
            Jc=view.J[rc].reshape(len(contact), 3, n),
            ec=view.e[rc].reshape(len(contact), 3),
            mu=np.array([cons[i].friction for i in contact], dtype=float),
            Jh=view.J[rh],
            eh=view.e[rh],
            Js=view.J[rs],
            es=view.e[rs],
            ks=np.array([cons[i].stiffness for i in soft], dtype=float),
            bs=np.array([cons[i].damping for i in soft], dtype=float),
        )

    @property
    def n(self) -> int:
        return self.view.A.shape[0]

    def apply(self, v):
        """``(Jc v, Jh v, Js v)``."""
        return self.Jc @ v, self.Jh @ v, self.Js @ v

    def transpose_apply(self, lc, lh, ls) -> np.ndarray:
        """``J^T lam`` from grouped impulses."""
        out = np.einsum("cri,cr->i", self.Jc, lc) if len(lc) else np.zeros(self.n)
        return out + self.Jh.T @ lh + self.Js.T @ ls

    def pack(self, per_constraint):
        """Split a per-constraint list into the three groups."""
        lc = np.array([per_constraint[i] for i in self.contact], dtype=float).reshape(len(self.contact), 3)
        lh = np.array([per_constraint[i][0] for i in self.hard], dtype=float)
        ls = np.array([per_constraint[i][0] for i in self.soft], dtype=float)
        return lc, lh, ls

    def unpack(self, lc, lh, ls) -> list:
        out = [None] * (len(self.contact) + len(self.hard) + len(self.soft))
        for k, i in enumerate(self.contact):
            out[i] = np.array(lc[k])
        for k, i in enumerate(self.hard):
            out[i] = np.array([lh[k]])
        for k, i in enumerate(self.soft):
            out[i] = np.array([ls[k]])
        return out
