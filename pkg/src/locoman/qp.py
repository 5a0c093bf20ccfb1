"""Dense convex QP solver shared by the SQP subproblems and the WBC.

    minimize    1/2 x' H x + g' x
    subject to  A_eq x = b_eq
                lb <= A_in x <= ub

Operator-splitting (ADMM) iterations on the stacked constraint system with a
single SPD factorization per problem, followed by an active-set polish that
recovers machine-precision KKT residuals. Equality rows carry a stiffer
penalty. A slow enumeration-based reference solver is kept alongside as the
oracle path for tests; the two routes stay independent.

Everything is deterministic: fixed scaling iterations, fixed penalty
parameters, termination checked on a fixed cadence.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor as scipy_lu_factor, lu_solve as scipy_lu_solve

from .accel import njit
from .errors import DimensionMismatch

OPTIMAL = "Optimal"
MAX_ITER = "MaxIter"
INFEASIBLE = "Infeasible"

_INF = 1e30


@dataclass(frozen=True)
class QpProblem:
    h: np.ndarray
    g: np.ndarray
    a_eq: np.ndarray = None
    b_eq: np.ndarray = None
    a_in: np.ndarray = None
    lb: np.ndarray = None
    ub: np.ndarray = None

    def __post_init__(self):
        n = self.g.shape[0]
        if self.h.shape != (n, n):
            raise DimensionMismatch("H shape inconsistent with g")
        if not np.allclose(self.h, self.h.T, atol=1e-9):
            raise DimensionMismatch("H must be symmetric")
        if self.a_eq is not None and self.a_eq.shape[1] != n:
            raise DimensionMismatch("A_eq column count")
        if self.a_in is not None and self.a_in.shape[1] != n:
            raise DimensionMismatch("A_in column count")

    @property
    def n(self):
        return self.g.shape[0]

    def stacked(self):
        """(A, l, u, n_eq): equality rows first, then two-sided rows."""
        blocks, lo, hi = [], [], []
        n_eq = 0
        if self.a_eq is not None and self.a_eq.shape[0]:
            blocks.append(np.asarray(self.a_eq, float))
            lo.append(np.asarray(self.b_eq, float))
            hi.append(np.asarray(self.b_eq, float))
            n_eq = self.a_eq.shape[0]
        if self.a_in is not None and self.a_in.shape[0]:
            blocks.append(np.asarray(self.a_in, float))
            lo.append(
                np.full(self.a_in.shape[0], -_INF) if self.lb is None
                else np.where(np.isfinite(self.lb), self.lb, -_INF)
            )
            hi.append(
                np.full(self.a_in.shape[0], _INF) if self.ub is None
                else np.where(np.isfinite(self.ub), self.ub, _INF)
            )
        if blocks:
            return np.vstack(blocks), np.concatenate(lo), np.concatenate(hi), n_eq
        return np.zeros((0, self.n)), np.zeros(0), np.zeros(0), 0

    def objective(self, x):
        return 0.5 * float(x @ self.h @ x) + float(self.g @ x)


@dataclass
class QpSettings:
    eps_abs: float = 1e-8
    eps_rel: float = 1e-9
    max_iter: int = 4000
    check_every: int = 25
    rho: float = 0.1
    rho_eq_scale: float = 1e3
    sigma: float = 1e-6
    alpha: float = 1.6
    polish: bool = True
    polish_reg: float = 1e-10
    reg: float = 1e-9  # added to H when its smallest diagonal is ~0


@dataclass
class QpSolution:
    x: np.ndarray
    duals: np.ndarray  # stacked multipliers, equality rows first
    status: str
    iterations: int
    objective: float
    stat_residual: float
    primal_residual: float
    comp_residual: float
    polished: bool = False
    z: np.ndarray = None

    @property
    def kkt_residual(self):
        return max(self.stat_residual, self.primal_residual, self.comp_residual)


@njit
def _chol_solve(low, b):
    n = low.shape[0]
    y = np.empty(n)
    for i in range(n):
        s = b[i]
        for j in range(i):
            s -= low[i, j] * y[j]
        y[i] = s / low[i, i]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for j in range(i + 1, n):
            s -= low[j, i] * x[j]
        x[i] = s / low[i, i]
    return x


@njit
def _admm_loop(low, h, g, a, at, lo, hi, rho, sigma, alpha, x, z, y,
               max_iter, check_every, eps_abs, eps_rel):
    m = a.shape[0]
    it = 0
    status = 1  # 1 running, 0 converged
    while it < max_iter:
        it += 1
        rhs = sigma * x - g + at @ (rho * z - y)
        x_t = _chol_solve(low, rhs)
        z_t = a @ x_t
        x = alpha * x_t + (1.0 - alpha) * x
        z_new = alpha * z_t + (1.0 - alpha) * z + y / rho
        for i in range(m):
            if z_new[i] < lo[i]:
                z_new[i] = lo[i]
            elif z_new[i] > hi[i]:
                z_new[i] = hi[i]
        y = y + rho * (alpha * z_t + (1.0 - alpha) * z - z_new)
        z = z_new
        if it % check_every == 0 or it == max_iter:
            ax = a @ x
            r_prim = 0.0
            ax_n = 0.0
            z_n = 0.0
            for i in range(m):
                v = abs(ax[i] - z[i])
                if v > r_prim:
                    r_prim = v
                if abs(ax[i]) > ax_n:
                    ax_n = abs(ax[i])
                if abs(z[i]) > z_n:
                    z_n = abs(z[i])
            dual = h @ x + g + at @ y
            r_dual = 0.0
            for i in range(x.shape[0]):
                if abs(dual[i]) > r_dual:
                    r_dual = abs(dual[i])
            hx = h @ x
            scale_d = max(np.max(np.abs(hx)), np.max(np.abs(g)))
            if m > 0:
                aty = at @ y
                s = np.max(np.abs(aty))
                if s > scale_d:
                    scale_d = s
            eps_p = eps_abs + eps_rel * max(ax_n, z_n)
            eps_d = eps_abs + eps_rel * scale_d
            if r_prim <= eps_p and r_dual <= eps_d:
                status = 0
                break
    return x, z, y, it, status


def _residuals(problem, a, lo, hi, n_eq, x, y):
    stat = problem.h @ x + problem.g
    if a.shape[0]:
        stat = stat + a.T @ y
    stat_r = float(np.max(np.abs(stat))) if stat.size else 0.0
    prim_r = 0.0
    comp_r = 0.0
    if a.shape[0]:
        ax = a @ x
        prim_r = float(np.max(np.maximum(lo - ax, 0) + np.maximum(ax - hi, 0)))
        for i in range(a.shape[0]):
            if i < n_eq:
                continue
            if y[i] > 0:
                comp_r = max(comp_r, abs(y[i] * (ax[i] - hi[i])))
            elif y[i] < 0:
                comp_r = max(comp_r, abs(y[i] * (ax[i] - lo[i])))
    return stat_r, prim_r, comp_r


def _polish(problem, a, lo, hi, n_eq, x, y, z, settings):
    """Active-set polish: equality-KKT solves with set corrections.

    The initial guess comes from the projected splitting variable z (exactly
    at a bound after projection) and the dual signs; wrong-sign rows are
    dropped and violated rows added for up to a few passes, so the polish
    recovers machine-precision solutions even from rough ADMM iterates."""
    m = a.shape[0]
    n = problem.n
    y_tol = 1e-9 * max(1.0, np.max(np.abs(y)) if m else 0.0)
    sides = np.zeros(m, dtype=int)  # 0 inactive, -1 lower, +1 upper
    for i in range(m):
        z_tol = 1e-7 * max(1.0, abs(z[i]))
        if i < n_eq:
            sides[i] = -1
        elif lo[i] > -_INF / 2 and (y[i] < -y_tol or z[i] - lo[i] <= z_tol):
            sides[i] = -1
        elif hi[i] < _INF / 2 and (y[i] > y_tol or hi[i] - z[i] <= z_tol):
            sides[i] = 1

    best = None
    for _ in range(4):
        act_rows = np.flatnonzero(sides != 0)
        act_vals = np.where(sides[act_rows] < 0, lo[act_rows], hi[act_rows])
        k = act_rows.size
        kkt = np.zeros((n + k, n + k))
        kkt[:n, :n] = problem.h + settings.polish_reg * np.eye(n)
        rhs = np.concatenate([-problem.g, act_vals])
        if k:
            a_act = a[act_rows]
            kkt[:n, n:] = a_act.T
            kkt[n:, :n] = a_act
            kkt[n:, n:] = -settings.polish_reg * np.eye(k)
        try:
            lu, piv = scipy_lu_factor(kkt)
            sol = scipy_lu_solve((lu, piv), rhs)
        except (np.linalg.LinAlgError, ValueError):
            return best
        kkt0 = kkt.copy()
        kkt0[:n, :n] = problem.h
        if k:
            kkt0[n:, n:] = 0.0
        for _ in range(2):
            resid = rhs - kkt0 @ sol
            sol = sol + scipy_lu_solve((lu, piv), resid)
        x_p = sol[:n]
        y_p = np.zeros(m)
        y_p[act_rows] = sol[n:]
        # set corrections: wrong-sign duals out, violated rows in
        changed = False
        for idx, i in enumerate(act_rows):
            if i < n_eq:
                continue
            v = sol[n + idx]
            if sides[i] < 0 and v > 1e-8:
                sides[i] = 0
                changed = True
            elif sides[i] > 0 and v < -1e-8:
                sides[i] = 0
                changed = True
        ax = a @ x_p if m else np.zeros(0)
        for i in range(n_eq, m):
            if sides[i] != 0:
                continue
            tol = 1e-9 * max(1.0, abs(ax[i]))
            if lo[i] > -_INF / 2 and ax[i] < lo[i] - tol:
                sides[i] = -1
                changed = True
            elif hi[i] < _INF / 2 and ax[i] > hi[i] + tol:
                sides[i] = 1
                changed = True
        best = (x_p, y_p)
        if not changed:
            return best
    return None  # active set did not settle; keep the ADMM iterate


def _primal_infeasible(a, lo, hi, dy, eps=1e-10):
    nrm = np.max(np.abs(dy)) if dy.size else 0.0
    if nrm <= eps:
        return False
    v = dy / nrm
    support = float(hi @ np.maximum(v, 0) + lo @ np.minimum(v, 0))
    return (np.max(np.abs(a.T @ v)) <= 1e-8) and support < -1e-8


def solve_qp(problem: QpProblem, warm: QpSolution | None = None,
             settings: QpSettings | None = None) -> QpSolution:
    """Solve the QP; deterministic for identical inputs and settings."""
    settings = settings or QpSettings()
    n = problem.n
    a, lo, hi, n_eq = problem.stacked()
    m = a.shape[0]

    h = np.asarray(problem.h, float)
    if n and np.min(np.diag(h)) < settings.reg:
        h = h + settings.reg * np.eye(n)

    if m == 0:
        x = np.linalg.solve(h + settings.reg * np.eye(n), -problem.g)
        stat_r, prim_r, comp_r = _residuals(problem, a, lo, hi, 0, x, np.zeros(0))
        return QpSolution(x, np.zeros(0), OPTIMAL, 1, problem.objective(x),
                          stat_r, prim_r, comp_r, polished=True, z=np.zeros(0))

    # Jacobi equilibration: variable scaling from the Hessian diagonal (the
    # NMPC cost spreads 1e0..1e9), then constraint-row scaling.
    d_scale = 1.0 / np.sqrt(np.maximum(np.diag(h), 1e-8))
    h_s = h * d_scale[:, None] * d_scale[None, :]
    g_s = problem.g * d_scale
    cost_scale = max(1.0, float(np.max(np.abs(g_s))))
    h_s /= cost_scale
    g_s /= cost_scale
    a_d = a * d_scale[None, :]
    row_norm = np.maximum(np.sqrt(np.sum(a_d * a_d, axis=1)), 1e-8)
    e_scale = 1.0 / row_norm
    a_s = a_d * e_scale[:, None]
    lo_s = lo * np.where(lo > -_INF / 2, e_scale, 1.0)
    hi_s = hi * np.where(hi < _INF / 2, e_scale, 1.0)

    rho = np.full(m, settings.rho)
    rho[:n_eq] *= settings.rho_eq_scale
    kmat = h_s + settings.sigma * np.eye(n) + a_s.T @ (rho[:, None] * a_s)
    low = np.linalg.cholesky(kmat)

    if warm is not None and warm.x is not None and warm.x.shape[0] == n:
        x0 = warm.x / d_scale
        if warm.duals is not None and warm.duals.shape[0] == m:
            y0 = warm.duals / (e_scale * cost_scale)
        else:
            y0 = np.zeros(m)
        z0 = a_s @ x0
    else:
        x0, y0 = np.zeros(n), np.zeros(m)
        z0 = a_s @ x0

    x, z, y, iters, run_status = _admm_loop(
        low, h_s, g_s, a_s, np.ascontiguousarray(a_s.T), lo_s, hi_s, rho,
        settings.sigma, settings.alpha,
        x0, z0, y0, settings.max_iter, settings.check_every,
        settings.eps_abs, settings.eps_rel,
    )
    x = x * d_scale
    y_unscaled = y * e_scale * cost_scale
    z = z / e_scale

    polished = False
    if settings.polish:
        out = _polish(problem, a, lo, hi, n_eq, x, y_unscaled, z, settings)
        if out is not None:
            x_p, y_p = out
            rp = _residuals(problem, a, lo, hi, n_eq, x_p, y_p)
            rc = _residuals(problem, a, lo, hi, n_eq, x, y_unscaled)
            if max(rp) <= max(max(rc), 1e-12):
                x, y_unscaled = x_p, y_p
                polished = True

    stat_r, prim_r, comp_r = _residuals(problem, a, lo, hi, n_eq, x, y_unscaled)
    # Optimal on a relative-stationarity basis; primal violation absolute
    scale_d = max(
        1.0,
        float(np.max(np.abs(h @ x))),
        float(np.max(np.abs(problem.g))) if n else 1.0,
        float(np.max(np.abs(a.T @ y_unscaled))) if m else 0.0,
    )
    tol = 10.0 * settings.eps_abs
    converged = (
        stat_r <= tol * scale_d and prim_r <= tol and comp_r <= tol * scale_d
    )
    if run_status == 0 or converged:
        status = OPTIMAL
    else:
        dy = y - y0
        status = INFEASIBLE if _primal_infeasible(a_s, lo_s, hi_s, dy) else MAX_ITER

    return QpSolution(x, y_unscaled, status, iters, problem.objective(x),
                      stat_r, prim_r, comp_r, polished=polished, z=a @ x)


# ---------------------------------------------------------------------------
# reference path: brute-force active-set enumeration (oracle for tests)
# ---------------------------------------------------------------------------


def _solve_eq_kkt(h, g, a_act, b_act):
    n = h.shape[0]
    k = a_act.shape[0]
    kkt = np.zeros((n + k, n + k))
    kkt[:n, :n] = h
    if k:
        kkt[:n, n:] = a_act.T
        kkt[n:, :n] = a_act
    rhs = np.concatenate([-g, b_act])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        return None, None
    return sol[:n], sol[n:]


def solve_qp_reference(problem: QpProblem, tol: float = 1e-9) -> QpSolution:
    """Enumerate active sets of the (small) QP; exponential, tests only."""
    from itertools import combinations, product

    a, lo, hi, n_eq = problem.stacked()
    m = a.shape[0]
    free_rows = list(range(n_eq, m))
    best = None
    best_obj = np.inf
    for r in range(len(free_rows) + 1):
        for rows in combinations(free_rows, r):
            sides_iter = product(*[
                [s for s in (0, 1)
                 if (s == 0 and lo[i] > -_INF / 2) or (s == 1 and hi[i] < _INF / 2)]
                for i in rows
            ]) if rows else [()]
            for sides in sides_iter:
                act_rows = list(range(n_eq)) + list(rows)
                act_vals = [lo[i] for i in range(n_eq)] + [
                    lo[i] if s == 0 else hi[i] for i, s in zip(rows, sides)
                ]
                x, mults = _solve_eq_kkt(
                    problem.h, problem.g, a[act_rows], np.array(act_vals)
                )
                if x is None:
                    continue
                ax = a @ x
                if np.any(ax < lo - tol * np.maximum(1, np.abs(lo))) or np.any(
                    ax > hi + tol * np.maximum(1, np.abs(hi))
                ):
                    continue
                ok = True
                for idx, (i, s) in enumerate(zip(rows, sides)):
                    v = mults[n_eq + idx]
                    if s == 0 and v > tol:
                        ok = False
                    if s == 1 and v < -tol:
                        ok = False
                if not ok:
                    continue
                obj = problem.objective(x)
                if obj < best_obj - 1e-12:
                    best_obj = obj
                    duals = np.zeros(m)
                    for idx, i in enumerate(act_rows):
                        duals[i] = mults[idx]
                    best = QpSolution(
                        x, duals, OPTIMAL, 0, obj,
                        *_residuals(problem, a, lo, hi, n_eq, x, duals),
                        polished=True, z=ax,
                    )
    if best is None:
        return QpSolution(np.zeros(problem.n), np.zeros(m), INFEASIBLE, 0,
                          np.inf, np.inf, np.inf, np.inf)
    return best


# ---------------------------------------------------------------------------
# plain-text problem fixtures
# ---------------------------------------------------------------------------


def dump_problem(problem: QpProblem, path):
    """Write the QP in a line-oriented text format for regression fixtures."""
    def fmt(mat):
        mat = np.atleast_2d(mat)
        return "\n".join(" ".join(repr(float(v)) for v in row) for row in mat)

    parts = [f"# locoman qp v1", f"n {problem.n}"]
    for name in ("h", "g", "a_eq", "b_eq", "a_in", "lb", "ub"):
        val = getattr(problem, name)
        if val is None:
            continue
        arr = np.atleast_2d(np.asarray(val, float))
        parts.append(f"{name} {arr.shape[0]} {arr.shape[1]}")
        parts.append(fmt(arr))
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")


def load_problem(path) -> QpProblem:
    with open(path) as fh:
        lines = [l.strip() for l in fh if l.strip() and not l.startswith("#")]
    fields = {}
    i = 1  # skip "n ..."
    while i < len(lines):
        name, r, c = lines[i].split()
        r, c = int(r), int(c)
        rows = [list(map(float, lines[i + 1 + j].split())) for j in range(r)]
        arr = np.array(rows)
        fields[name] = arr if name in ("h", "a_eq", "a_in") else arr.ravel()
        i += 1 + r
    return QpProblem(
        h=fields["h"], g=fields["g"],
        a_eq=fields.get("a_eq"), b_eq=fields.get("b_eq"),
        a_in=fields.get("a_in"), lb=fields.get("lb"), ub=fields.get("ub"),
    )
