"""Exact plan oracle: the allocation problem as a linear program.

Variables are the per-frame time fractions s[k, j] of the active users.
Each user contributes one delivery equality sum_j s[k,j] * r[k,j] = 1 and
each (BS, frame) pair one capacity row sum_{k at that BS} s[k,j] <= 1,
with s >= 0.  The solver is a dense two-phase simplex on the standard-form
tableau with Bland's anti-cycling pivot rule; these problems are small
enough that exactness beats interior-point machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_TOL = 1e-8


class SolverError(RuntimeError):
    """Numerical failure (iteration limit, singular basis); distinct from
    an infeasible problem."""


class StructurallyInfeasibleError(ValueError):
    """A user has zero rate in every frame of the window, so its delivery
    equality can never hold."""


@dataclass
class LpProblem:
    """min c.x  s.t.  a_eq x = b_eq, a_ub x <= b_ub, x >= 0."""

    c: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.a_eq = np.atleast_2d(np.asarray(self.a_eq, dtype=float))
        self.b_eq = np.atleast_1d(np.asarray(self.b_eq, dtype=float))
        self.a_ub = np.atleast_2d(np.asarray(self.a_ub, dtype=float))
        self.b_ub = np.atleast_1d(np.asarray(self.b_ub, dtype=float))
        n = self.c.size
        if self.a_eq.size and self.a_eq.shape != (self.b_eq.size, n):
            raise ValueError("equality system dimensions inconsistent")
        if self.a_ub.size and self.a_ub.shape != (self.b_ub.size, n):
            raise ValueError("inequality system dimensions inconsistent")

    @property
    def n_vars(self):
        return self.c.size


@dataclass
class PlanSolution:
    """Solver output: plan rows are the active users, columns the frames."""

    status: str  # "optimal" | "infeasible" | "unbounded"
    plan: np.ndarray | None = None
    objective: float | None = None
    duals_eq: np.ndarray | None = None
    duals_ub: np.ndarray | None = None
    iterations: int = 0


def build_lp(sc):
    """Assemble the plan LP of a scenario; padded users contribute nothing."""
    k, t_f, n_bs = sc.k, sc.n_frames, sc.n_bs
    r = sc.norm_rates[:k]
    dead = np.flatnonzero(~(r > 0).any(axis=1))
    if dead.size:
        raise StructurallyInfeasibleError(
            f"users {dead.tolist()} have zero rate in every frame; "
            "their delivery requirement cannot be met"
        )
    n = k * t_f  # variable s[k,j] at index k*t_f + j
    c = np.ones(n)
    a_eq = np.zeros((k, n))
    for u in range(k):
        a_eq[u, u * t_f : (u + 1) * t_f] = r[u]
    b_eq = np.ones(k)
    a_ub = np.zeros((n_bs * t_f, n))
    for i in range(n_bs):
        m = sc.assoc[i, :k]  # (k, t_f)
        for j in range(t_f):
            row = i * t_f + j
            a_ub[row, np.flatnonzero(m[:, j]) * t_f + j] = 1.0
    b_ub = np.ones(n_bs * t_f)
    return LpProblem(c, a_eq, b_eq, a_ub, b_ub, meta={"k": k, "t_f": t_f, "n_bs": n_bs})


def _bland_entering(reduced, tol):
    idx = np.flatnonzero(reduced < -tol)
    return int(idx[0]) if idx.size else -1


def _bland_leaving(tableau, col, basis, tol):
    column = tableau[:-1, col]
    rhs = tableau[:-1, -1]
    rows = np.flatnonzero(column > tol)
    if rows.size == 0:
        return -1
    ratios = rhs[rows] / column[rows]
    best = ratios.min()
    ties = rows[ratios <= best + 1e-12]
    # among minimal ratios, leave the basic variable with the smallest index
    return int(ties[np.argmin([basis[i] for i in ties])])


def _pivot(tableau, row, col):
    tableau[row] /= tableau[row, col]
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])


def _run_simplex(tableau, basis, tol, max_iter):
    for it in range(max_iter):
        col = _bland_entering(tableau[-1, :-1], tol)
        if col < 0:
            return "optimal", it
        row = _bland_leaving(tableau, col, basis, tol)
        if row < 0:
            return "unbounded", it
        _pivot(tableau, row, col)
        basis[row] = col
    raise SolverError(f"simplex iteration limit {max_iter} exceeded")


def simplex_solve(c, a_eq, b_eq, a_ub, b_ub, tol=DEFAULT_TOL, max_iter=None):
    """Two-phase dense simplex with Bland's rule.

    Returns (status, x, objective, y_eq, y_ub, iterations).  The duals use
    the convention c.x* = b_eq.y_eq + b_ub.y_ub with y_ub <= 0 for a
    minimization; numerical failures raise SolverError.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    m_eq, m_ub = len(b_eq), len(b_ub)
    m = m_eq + m_ub
    parts = []
    if m_eq:
        parts.append(np.atleast_2d(np.asarray(a_eq, dtype=float)))
    if m_ub:
        parts.append(np.atleast_2d(np.asarray(a_ub, dtype=float)))
    if not parts:
        if np.all(c >= 0):
            return "optimal", np.zeros(n), 0.0, np.zeros(0), np.zeros(0), 0
        return "unbounded", None, None, None, None, 0
    a = np.vstack(parts)
    b = np.concatenate([np.atleast_1d(b_eq), np.atleast_1d(b_ub)]).astype(float)

    # standard form: structural vars, one slack per <= row, then b >= 0
    full = np.hstack([a, np.zeros((m, m_ub))])
    for i in range(m_eq, m):
        full[i, n + (i - m_eq)] = 1.0
    flipped = b < 0
    full[flipped] *= -1.0
    b = np.abs(b)
    n_sl = n + m_ub

    # rows whose slack cannot seed the basis get an artificial variable
    basis = [-1] * m
    art_rows = [i for i in range(m) if i < m_eq or flipped[i]]
    for i in range(m_eq, m):
        if not flipped[i]:
            basis[i] = n + (i - m_eq)
    n_art = len(art_rows)
    tableau = np.zeros((m + 1, n_sl + n_art + 1))
    tableau[:m, :n_sl] = full
    tableau[:m, -1] = b
    for j, i in enumerate(art_rows):
        tableau[i, n_sl + j] = 1.0
        basis[i] = n_sl + j

    if max_iter is None:
        max_iter = 10000 + 200 * (n_sl + m)

    iterations = 0
    keep_rows = list(range(m))
    if n_art:
        # phase 1: minimize the artificial sum, priced out over the basis
        cost = np.zeros(n_sl + n_art + 1)
        cost[n_sl:-1] = 1.0
        tableau[-1] = cost
        for i in art_rows:
            tableau[-1] -= tableau[i]
        status, it1 = _run_simplex(tableau, basis, tol, max_iter)
        iterations += it1
        if status != "optimal":
            raise SolverError("phase 1 reported unbounded: numerical trouble")
        if tableau[-1, -1] < -10.0 * tol:
            # cost-row RHS is -(artificial sum); a nonzero sum = infeasible
            return "infeasible", None, None, None, None, iterations
        # drive leftover artificials out of the basis
        drop = []
        for i in range(len(basis)):
            if basis[i] >= n_sl:
                pivot_cols = np.flatnonzero(np.abs(tableau[i, :n_sl]) > tol)
                if pivot_cols.size:
                    _pivot(tableau, i, int(pivot_cols[0]))
                    basis[i] = int(pivot_cols[0])
                else:
                    drop.append(i)  # redundant constraint row
        if drop:
            kept = [i for i in range(len(basis)) if i not in drop]
            tableau = tableau[kept + [len(basis)]]
            basis = [basis[i] for i in kept]
            keep_rows = [keep_rows[i] for i in kept]
    # remove artificial columns
    tableau = np.hstack([tableau[:, :n_sl], tableau[:, -1:]])
    m_kept = len(basis)

    # phase 2: restore the real objective, priced out over the basis
    cost = np.zeros(n_sl + 1)
    cost[:n] = c
    tableau[-1] = cost
    for i in range(m_kept):
        if cost[basis[i]] != 0.0:
            tableau[-1] -= cost[basis[i]] * tableau[i]
    status, it2 = _run_simplex(tableau, basis, tol, max_iter)
    iterations += it2
    if status == "unbounded":
        return "unbounded", None, None, None, None, iterations

    x = np.zeros(n_sl)
    for i in range(m_kept):
        x[basis[i]] = tableau[i, -1]
    x = np.maximum(x[:n], 0.0)
    objective = float(c @ x)

    # duals from the final basis: solve B^T y = c_B over the kept rows;
    # dropped (redundant) rows get dual 0
    basis_arr = np.asarray(basis, dtype=int)
    c_full = np.concatenate([c, np.zeros(m_ub)])
    b_mat = full[np.asarray(keep_rows, dtype=int)][:, basis_arr]
    try:
        y_kept = np.linalg.solve(b_mat.T, c_full[basis_arr])
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"singular final basis: {exc}") from exc
    y = np.zeros(m)
    y[np.asarray(keep_rows, dtype=int)] = y_kept
    y[flipped] *= -1.0
    return "optimal", x, objective, y[:m_eq], y[m_eq:], iterations


def solve_lp(lp, tol=DEFAULT_TOL):
    """Solve a plan LP; reshapes the solution to (K, T_f) when optimal."""
    status, x, obj, y_eq, y_ub, iters = simplex_solve(
        lp.c, lp.a_eq, lp.b_eq, lp.a_ub, lp.b_ub, tol=tol
    )
    if status != "optimal":
        return PlanSolution(status=status, iterations=iters)
    k = lp.meta.get("k")
    t_f = lp.meta.get("t_f")
    plan = x.reshape(k, t_f) if k is not None and t_f is not None else x
    return PlanSolution(
        status="optimal",
        plan=plan,
        objective=obj,
        duals_eq=y_eq,
        duals_ub=y_ub,
        iterations=iters,
    )


def solve_scenario(sc, tol=DEFAULT_TOL):
    return solve_lp(build_lp(sc), tol=tol)


@dataclass
class PlanCheck:
    qos_residual: float
    capacity_residual: float
    min_entry: float
    feasible: bool


def verify_plan(plan, sc, tol=1e-6):
    """Residuals of the delivery and capacity constraints of a plan.

    plan may have sc.k rows (active users) or sc.k_max rows (padded).
    """
    plan = np.asarray(plan, dtype=float)
    k, t_f = sc.k, sc.n_frames
    if plan.shape not in ((k, t_f), (sc.k_max, t_f)):
        raise ValueError(f"plan shape {plan.shape} matches neither (k, T_f) nor (k_max, T_f)")
    rows = plan.shape[0]
    qos = np.abs((plan[:k] * sc.norm_rates[:k]).sum(axis=1) - 1.0)
    usage = np.einsum("kj,ikj->ij", plan, sc.assoc[:, :rows])
    capacity = np.maximum(usage - 1.0, 0.0)
    qos_residual = float(qos.max()) if k else 0.0
    capacity_residual = float(capacity.max()) if capacity.size else 0.0
    min_entry = float(plan.min()) if plan.size else 0.0
    feasible = qos_residual <= tol and capacity_residual <= tol and min_entry >= -tol
    return PlanCheck(qos_residual, capacity_residual, min_entry, feasible)
