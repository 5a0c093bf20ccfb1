"""Unified decomposition-based NMPC.

Direct transcription over the SRB trajectory, the full-order (frozen-inertia,
Coriolis-free) arm trajectory, and the interaction wrenches, solved by
warm-started Gauss-Newton SQP at 60 Hz. The cost is exactly quadratic, so
each SQP subproblem relinearizes only the constraints.

Decision vector layout (54 N + 32 entries, 464 at N = 8):

    [x_srb_0 .. x_srb_N | u_srb_0 .. u_srb_{N-1} |
     x_arm_0 .. x_arm_N | u_arm_0 .. u_arm_{N-1} | lam_0 .. lam_{N-1}]

Initial states are decision variables pinned by equality to the measured
feedback. Inside each QP subproblem the linearized dynamics eliminate the
state steps (reduced-space SQP) and the availability constraint E u = 0 is
enforced by fixing swing force components at zero, which keeps it exact; the
full NLP keeps its 54 N + 32 variable accounting either way.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .arm import ArmModel
from .config import ControllerConfig, NmpcConfig, NmpcWeights, RobotConfig
from .coupling import (
    CouplingParams,
    accel_residual_jacobians,
    consistent_arm_base,
    holonomic_accel_residual,
    solve_static_interaction,
    stance_offset,
    static_arm_torques,
)
from .errors import DimensionMismatch, QpFailure
from .fastpath import (arm_pack, condense_qp, expand_step, horizon_linearize,
                       kkt_residual_kernel, merit_defects,
                       trajectory_cost_kernel)
from .gait import (
    GaitSchedule,
    contact_flags,
    predicted_contact_sequence,
    selection_matrix,
    stance_duration,
)
from .mathcore import euler_to_rotation
from .qp import OPTIMAL, QpProblem, QpSettings, solve_qp
from .srb import SrbAccelTerms, SrbParams, srb_discrete_step, srb_step_jacobians
from .wbc import raibert_foothold


@dataclass(frozen=True)
class ReferenceCommand:
    """Clamped operator command driving the reference generator."""

    vx: float = 0.0
    vy: float = 0.0
    yaw_rate: float = 0.0
    pitch: float = 0.0
    arm_q: np.ndarray | None = None  # joint position targets
    arm_qd: np.ndarray = field(default_factory=lambda: np.zeros(4))


@dataclass
class ReferenceTrajectory:
    x_srb: np.ndarray  # (N+1, 12)
    x_arm: np.ndarray  # (N+1, 20)


def build_reference(command: ReferenceCommand, x_srb_now, x_arm_now,
                    config: ControllerConfig, coupling_params: CouplingParams,
                    hold_anchor=None):
    """Integrate commanded velocities from the current pose.

    CoM advances with the heading-frame planar velocity rotated by the
    integrated yaw; height is the nominal standing height; arm joint targets
    are ramped under the configured rate limit. With zero commands the
    reference is held constant at hold_anchor (x, y, yaw) when provided, so
    standing keeps station instead of following drift.
    """
    n = config.nmpc.horizon
    ts = config.nmpc.ts
    ref = config.reference
    x_srb_now = np.asarray(x_srb_now, float)
    x_arm_now = np.asarray(x_arm_now, float)

    vx = float(np.clip(command.vx, -ref.max_speed, ref.max_speed))
    vy = float(np.clip(command.vy, -ref.max_speed, ref.max_speed))
    wz = float(np.clip(command.yaw_rate, -ref.max_yaw_rate, ref.max_yaw_rate))
    pitch = float(np.clip(command.pitch, -ref.max_pitch, ref.max_pitch))

    xs = np.zeros((n + 1, 12))
    if hold_anchor is not None:
        yaw = float(hold_anchor[2])
        pos = np.array([hold_anchor[0], hold_anchor[1], ref.height])
    else:
        yaw = x_srb_now[8]
        pos = np.array([x_srb_now[0], x_srb_now[1], ref.height])
    for k in range(n + 1):
        cy, sy = np.cos(yaw), np.sin(yaw)
        v_world = np.array([cy * vx - sy * vy, sy * vx + cy * vy, 0.0])
        xs[k, :3] = pos
        xs[k, 3:6] = v_world
        xs[k, 6:9] = (0.0, pitch, yaw)
        xs[k, 9:12] = (0.0, 0.0, wz)
        pos = pos + ts * v_world
        yaw = yaw + ts * wz

    xa = np.zeros((n + 1, 20))
    q_ref = x_arm_now[6:10].copy()
    qd_cmd = np.asarray(command.arm_qd, float)
    dq_max = ref.arm_joint_speed * ts
    for k in range(n + 1):
        if command.arm_q is not None:
            err = np.asarray(command.arm_q, float) - q_ref
            dq = np.clip(err, -dq_max, dq_max)
        else:
            dq = np.clip(qd_cmd * ts, -dq_max, dq_max)
        xa[k, 6:10] = q_ref
        xa[k, 16:20] = dq / ts
        # base blocks are zero-weighted; keep them coupling-consistent
        rot = euler_to_rotation(xs[k, 6:9])
        xa[k, :3] = xs[k, :3] + rot @ coupling_params.offset
        xa[k, 3:6] = xs[k, 6:9]
        q_ref = q_ref + dq
    return ReferenceTrajectory(x_srb=xs, x_arm=xa)


def trajectory_cost(xs, us, xa, ua, lam, refs: ReferenceTrajectory,
                    weights: NmpcWeights):
    """Stage + terminal cost of the transcription (exact formula)."""
    return float(trajectory_cost_kernel(
        np.asarray(xs, float), np.asarray(us, float), np.asarray(xa, float),
        np.asarray(ua, float), np.asarray(lam, float),
        refs.x_srb, refs.x_arm,
        weights.q_srb, weights.p_srb, weights.r_srb,
        weights.q_arm, weights.p_arm, weights.r_arm, weights.r_int))


class NmpcProblem:
    """Assembled NLP for one cycle: dims, references, contacts, models."""

    def __init__(self, x0_srb, x0_arm, flags_seq, footholds, refs,
                 frozen_arm, srb_params: SrbParams,
                 coupling_params: CouplingParams, config: NmpcConfig):
        n = config.horizon
        self.n = n
        self.config = config
        flags_seq = np.asarray(flags_seq, bool)
        footholds = np.asarray(footholds, float)
        if flags_seq.shape != (n, 4):
            raise DimensionMismatch(f"contact sequence shape {flags_seq.shape}")
        if footholds.shape != (n, 4, 3):
            raise DimensionMismatch(f"foothold array shape {footholds.shape}")
        if refs.x_srb.shape != (n + 1, 12) or refs.x_arm.shape != (n + 1, 20):
            raise DimensionMismatch("reference horizon length")
        self.x0_srb = np.asarray(x0_srb, float)
        self.x0_arm = np.asarray(x0_arm, float)
        self.flags_seq = flags_seq
        self.footholds = footholds
        self.refs = refs
        self.frozen_arm = frozen_arm
        self.srb_params = srb_params
        self.coupling_params = coupling_params
        self.e_mats = [selection_matrix(flags_seq[k]) for k in range(n)]
        self.stance_cols = [
            np.array([3 * l + a for l in range(4) if flags_seq[k, l]
                      for a in range(3)], dtype=int)
            for k in range(n)
        ]
        # padded layouts for the condensation kernels
        self.flags_arr = flags_seq.astype(np.bool_)
        self.n_cols = np.array([len(c) for c in self.stance_cols], dtype=np.int64)
        self.cols_pad = np.zeros((n, 12), dtype=np.int64)
        for k in range(n):
            self.cols_pad[k, :self.n_cols[k]] = self.stance_cols[k]
        self.slots = np.zeros(n + 1, dtype=np.int64)
        for k in range(n):
            self.slots[k + 1] = self.slots[k] + self.n_cols[k] + 4

    @property
    def n_vars(self):
        return 54 * self.n + 32

    # ---- full-space packing (tests, diagnostics) --------------------------

    def pack(self, xs, us, xa, ua, lam):
        return np.concatenate([
            np.asarray(xs, float).ravel(), np.asarray(us, float).ravel(),
            np.asarray(xa, float).ravel(), np.asarray(ua, float).ravel(),
            np.asarray(lam, float).ravel(),
        ])

    def unpack(self, z):
        n = self.n
        z = np.asarray(z, float)
        o1 = 12 * (n + 1)
        o2 = o1 + 12 * n
        o3 = o2 + 20 * (n + 1)
        o4 = o3 + 4 * n
        return (
            z[:o1].reshape(n + 1, 12),
            z[o1:o2].reshape(n, 12),
            z[o2:o3].reshape(n + 1, 20),
            z[o3:o4].reshape(n, 4),
            z[o4:].reshape(n, 6),
        )

    def cost(self, z):
        xs, us, xa, ua, lam = self.unpack(z)
        return trajectory_cost(xs, us, xa, ua, lam, self.refs,
                               self.config.weights)

    def equality_constraints(self, z):
        """[pins; SRB defects; arm defects; phi_ddot; E u] stacked."""
        xs, us, xa, ua, lam = self.unpack(z)
        n, ts = self.n, self.config.ts
        parts = [xs[0] - self.x0_srb, xa[0] - self.x0_arm]
        for k in range(n):
            parts.append(xs[k + 1] - srb_discrete_step(
                xs[k], us[k], lam[k], ts, self.srb_params, self.footholds[k]))
        for k in range(n):
            parts.append(xa[k + 1] - self.frozen_arm.discrete_step(
                xa[k], ua[k], lam[k], ts))
        for k in range(n):
            parts.append(holonomic_accel_residual(
                xs[k], xa[k], us[k], ua[k], lam[k], self.coupling_params,
                self.srb_params, self.frozen_arm, self.footholds[k]))
        for k in range(n):
            if self.e_mats[k].shape[0]:
                parts.append(self.e_mats[k] @ us[k])
        return np.concatenate(parts)

    def equality_jacobian(self, z):
        """Dense full-space Jacobian of equality_constraints (test path)."""
        xs, us, xa, ua, lam = self.unpack(z)
        n, ts = self.n, self.config.ts
        nz = self.n_vars
        o_us = 12 * (n + 1)
        o_xa = o_us + 12 * n
        o_ua = o_xa + 20 * (n + 1)
        o_lam = o_ua + 4 * n
        rows = []

        pin = np.zeros((32, nz))
        pin[:12, :12] = np.eye(12)
        pin[12:, o_xa:o_xa + 20] = np.eye(20)
        rows.append(pin)
        for k in range(n):
            a, b, c = srb_step_jacobians(xs[k], us[k], lam[k], ts,
                                         self.srb_params, self.footholds[k])
            blk = np.zeros((12, nz))
            blk[:, 12 * (k + 1):12 * (k + 2)] = np.eye(12)
            blk[:, 12 * k:12 * (k + 1)] = -a
            blk[:, o_us + 12 * k:o_us + 12 * (k + 1)] = -b
            blk[:, o_lam + 6 * k:o_lam + 6 * (k + 1)] = -c
            rows.append(blk)
        for k in range(n):
            aa, ba, ca = self._arm_step_jacobians(xa[k], ua[k], lam[k], ts)
            blk = np.zeros((20, nz))
            blk[:, o_xa + 20 * (k + 1):o_xa + 20 * (k + 2)] = np.eye(20)
            blk[:, o_xa + 20 * k:o_xa + 20 * (k + 1)] = -aa
            blk[:, o_ua + 4 * k:o_ua + 4 * (k + 1)] = -ba
            blk[:, o_lam + 6 * k:o_lam + 6 * (k + 1)] = -ca
            rows.append(blk)
        for k in range(n):
            _, j_xs, j_xa, j_us, j_ua, j_lam = accel_residual_jacobians(
                xs[k], xa[k], us[k], ua[k], lam[k], self.coupling_params,
                self.srb_params, self.frozen_arm, self.footholds[k])
            blk = np.zeros((6, nz))
            blk[:, 12 * k:12 * (k + 1)] = j_xs
            blk[:, o_xa + 20 * k:o_xa + 20 * (k + 1)] = j_xa
            blk[:, o_us + 12 * k:o_us + 12 * (k + 1)] = j_us
            blk[:, o_ua + 4 * k:o_ua + 4 * (k + 1)] = j_ua
            blk[:, o_lam + 6 * k:o_lam + 6 * (k + 1)] = j_lam
            rows.append(blk)
        for k in range(n):
            e = self.e_mats[k]
            if e.shape[0]:
                blk = np.zeros((e.shape[0], nz))
                blk[:, o_us + 12 * k:o_us + 12 * (k + 1)] = e
                rows.append(blk)
        return np.vstack(rows)

    def _arm_step_jacobians(self, x_arm, u_arm, lam, ts):
        """Euler-step Jacobians of the frozen arm model."""
        x_arm = np.asarray(x_arm, float)
        q = x_arm[:10]
        model = self.frozen_arm.model
        dqdd_dq = -self.frozen_arm.d_inv @ (
            model.base_jacobian_wrench_gradient(q, lam)
            + model.gravity_hessian(q)
        )
        aa = np.eye(20)
        aa[:10, 10:] += ts * np.eye(10)
        aa[10:, :10] += ts * dqdd_dq
        ba = np.zeros((20, 4))
        ba[10:] = ts * (self.frozen_arm.d_inv @ model.input_matrix)
        ca = np.zeros((20, 6))
        ca[10:] = -ts * (self.frozen_arm.d_inv @ model.base_jacobian(q).T)
        return aa, ba, ca

    def violation_report(self, xs, us, xa, ua, lam):
        """Max constraint violations of a candidate solution."""
        n, ts = self.n, self.config.ts
        dyn = 0.0
        for k in range(n):
            dyn = max(dyn, np.max(np.abs(xs[k + 1] - srb_discrete_step(
                xs[k], us[k], lam[k], ts, self.srb_params, self.footholds[k]))))
            dyn = max(dyn, np.max(np.abs(xa[k + 1] - self.frozen_arm.discrete_step(
                xa[k], ua[k], lam[k], ts))))
        phi = 0.0
        for k in range(n):
            phi = max(phi, np.max(np.abs(holonomic_accel_residual(
                xs[k], xa[k], us[k], ua[k], lam[k], self.coupling_params,
                self.srb_params, self.frozen_arm, self.footholds[k]))))
        pyr = 0.0
        e_exact = 0.0
        cfg = self.config
        for k in range(n):
            for l in range(4):
                f = us[k, 3 * l:3 * l + 3]
                if self.flags_seq[k, l]:
                    pyr = max(
                        pyr,
                        abs(f[0]) - cfg.mu * f[2],
                        abs(f[1]) - cfg.mu * f[2],
                        cfg.f_min - f[2],
                        f[2] - cfg.f_max,
                    )
                else:
                    e_exact = max(e_exact, np.max(np.abs(f)))
        tor = max(0.0, float(np.max(np.abs(ua))) - float(
            np.min(self.frozen_arm.model.params.torque_limit)))
        return {
            "dynamics_defect": float(dyn),
            "phi_ddot": float(phi),
            "pyramid_violation": float(max(pyr, 0.0)),
            "selection_violation": float(e_exact),
            "torque_violation": float(tor),
        }


@dataclass
class NmpcSolution:
    xs: np.ndarray  # (N+1, 12)
    us: np.ndarray  # (N, 12)
    xa: np.ndarray  # (N+1, 20)
    ua: np.ndarray  # (N, 4)
    lam: np.ndarray  # (N, 6)
    iterations: int
    kkt_residual: float
    cost: float
    solve_time: float
    status: str
    violations: dict
    kkt_trace: list = field(default_factory=list)

    def commands(self):
        """(arm torques now, predicted SRB state, desired GRFs now)."""
        return self.ua[0].copy(), self.xs[1].copy(), self.us[0].copy()


def assemble_nlp(x0_srb, x0_arm, flags_seq, footholds, refs, frozen_arm,
                 srb_params, coupling_params, config) -> NmpcProblem:
    return NmpcProblem(x0_srb, x0_arm, flags_seq, footholds, refs,
                       frozen_arm, srb_params, coupling_params, config)



class SqpSolver:
    """Reduced-space Gauss-Newton SQP with an l1-merit line search.

    Each iteration linearizes the horizon once (fused kernel), checks the
    KKT residual with the previous QP's multipliers, and only then builds
    and solves the condensed QP subproblem.
    """

    def __init__(self, config: NmpcConfig, srb_params: SrbParams,
                 qp_settings: QpSettings | None = None):
        self.config = config
        self.srb_params = srb_params
        self.qp_settings = qp_settings or QpSettings(
            eps_abs=1e-6, eps_rel=1e-6, max_iter=150, check_every=25)
        self.qp_warm = None
        self.penalty = 1e3
        self._packs = None

    def _ensure_packs(self, problem):
        if self._packs is None:
            self._packs = arm_pack(problem.frozen_arm.model)

    def _kernel_args(self, problem):
        p = self.srb_params
        return (problem.config.ts, p.mass, p.inertia_body, p.gravity,
                p.mount_offset, problem.frozen_arm.d_inv) + self._packs

    def solve(self, problem: NmpcProblem, xs, us, xa, ua, lam):
        t_start = time.perf_counter()
        cfg = self.config
        n = problem.n
        self._ensure_packs(problem)
        # pin initial states to the measurement before iterating so that
        # partial line-search steps preserve the pin constraints exactly
        xs = np.array(xs, float)
        xa = np.array(xa, float)
        us = np.array(us, float)
        ua = np.array(ua, float)
        lam = np.array(lam, float)
        xs[0] = problem.x0_srb
        xa[0] = problem.x0_arm
        for k in range(n):
            for l in range(4):
                if not problem.flags_seq[k, l]:
                    us[k, 3 * l:3 * l + 3] = 0.0

        status = OPTIMAL
        kkt = np.inf
        kkt_trace = []
        it = 0
        qp_sol = None
        self.penalty = 10.0  # re-estimated per solve from the QP multipliers
        while it < cfg.max_iterations:
            it += 1
            lin = horizon_linearize(xs, us, xa, ua, lam, problem.footholds,
                                    *self._kernel_args(problem))
            kkt = self._kkt_residual(problem, lin, xs, us, xa, ua, lam)
            kkt_trace.append(kkt)
            if kkt <= cfg.kkt_tol:
                break
            qp_prob, meta = self._build_qp(problem, lin, xs, us, xa, ua, lam)
            try:
                qp_sol = solve_qp(qp_prob, warm=self._warm_if_compatible(qp_prob),
                                  settings=self.qp_settings)
            except np.linalg.LinAlgError:
                status = "QpFailure"
                break
            if qp_sol.status != OPTIMAL:
                status = "QpFailure"
                break
            self.qp_warm = qp_sol
            step = self._expand_step(problem, lin, meta, qp_sol.x)
            alpha = self._line_search(problem, xs, us, xa, ua, lam, step,
                                      qp_sol)
            xs = xs + alpha * step["xs"]
            us = us + alpha * step["us"]
            xa = xa + alpha * step["xa"]
            ua = ua + alpha * step["ua"]
            lam = lam + alpha * step["lam"]

        cost = trajectory_cost(xs, us, xa, ua, lam, problem.refs, cfg.weights)
        violations = self._fast_violations(problem, xs, us, xa, ua, lam)
        return NmpcSolution(
            xs=xs, us=us, xa=xa, ua=ua, lam=lam, iterations=it,
            kkt_residual=float(kkt), cost=cost,
            solve_time=time.perf_counter() - t_start, status=status,
            violations=violations, kkt_trace=kkt_trace,
        )

    # ----- internals ---------------------------------------------------------

    def _warm_if_compatible(self, qp_prob):
        if self.qp_warm is not None and self.qp_warm.x.shape[0] == qp_prob.n:
            return self.qp_warm
        return None

    def _fast_violations(self, problem, xs, us, xa, ua, lam):
        _, max_dyn, max_phi = merit_defects(
            xs, us, xa, ua, lam, problem.footholds,
            *self._kernel_args(problem))
        cfg = problem.config
        pyr = 0.0
        e_exact = 0.0
        for k in range(problem.n):
            f = us[k].reshape(4, 3)
            for l in range(4):
                if problem.flags_seq[k, l]:
                    pyr = max(pyr, abs(f[l, 0]) - cfg.mu * f[l, 2],
                              abs(f[l, 1]) - cfg.mu * f[l, 2],
                              cfg.f_min - f[l, 2], f[l, 2] - cfg.f_max)
                else:
                    e_exact = max(e_exact, float(np.max(np.abs(f[l]))))
        tor = max(0.0, float(np.max(np.abs(ua))) - float(
            np.min(problem.frozen_arm.model.params.torque_limit)))
        return {
            "dynamics_defect": float(max_dyn),
            "phi_ddot": float(max_phi),
            "pyramid_violation": float(max(pyr, 0.0)),
            "selection_violation": float(e_exact),
            "torque_violation": float(tor),
        }

    def _build_qp(self, problem, lin, xs, us, xa, ua, lam):
        """Condense onto the reduced inputs with lambda eliminated.

        The coupling constraint's 6x6 lambda-sensitivity is invertible, so
        each step's interaction wrench is solved out of the linearized
        system; the QP is inequality-only in [stance GRFs | arm torques]."""
        cfg = problem.config
        w = cfg.weights
        t_lim = problem.frozen_arm.model.params.torque_limit
        h, g, a_in, lb, ub, t_inv_all, lam_sens, lam_off = condense_qp(
            *lin, xs, us, xa, ua, lam,
            problem.refs.x_srb, problem.refs.x_arm,
            w.q_srb, w.p_srb, w.r_srb, w.q_arm, w.p_arm, w.r_arm, w.r_int,
            problem.flags_arr, problem.slots, problem.cols_pad,
            problem.n_cols, cfg.mu, cfg.f_min, cfg.f_max, t_lim)
        lb = np.where(lb <= -1e29, -np.inf, lb)
        ub = np.where(ub >= 1e29, np.inf, ub)
        qp_prob = QpProblem(h=0.5 * (h + h.T), g=g, a_in=a_in, lb=lb, ub=ub)
        return qp_prob, dict(t_inv_all=t_inv_all)

    def _expand_step(self, problem, lin, meta, d_w):
        d_xs, d_us, d_xa, d_ua, d_lam = expand_step(
            *lin[:13], meta["t_inv_all"], problem.slots, problem.cols_pad,
            problem.n_cols, d_w)
        return dict(xs=d_xs, us=d_us, xa=d_xa, ua=d_ua, lam=d_lam)

    def _merit(self, problem, xs, us, xa, ua, lam):
        l1, _, _ = merit_defects(xs, us, xa, ua, lam, problem.footholds,
                                 *self._kernel_args(problem))
        return (trajectory_cost(xs, us, xa, ua, lam, problem.refs,
                                problem.config.weights)
                + self.penalty * l1)

    def _line_search(self, problem, xs, us, xa, ua, lam, step, qp_sol):
        """Backtracking on the l1 merit.

        The cost is exactly quadratic, so the cost change of a candidate is
        exact; only the constraint model is linearized. The penalty is raised
        until the predicted merit reduction of the full step is positive
        (standard exact-penalty rule) and kept above twice the multiplier
        norm."""
        w = problem.config.weights
        duals = np.max(np.abs(qp_sol.duals)) if qp_sol.duals.size else 0.0
        l1_0, _, _ = merit_defects(xs, us, xa, ua, lam, problem.footholds,
                                   *self._kernel_args(problem))
        cost0 = trajectory_cost(xs, us, xa, ua, lam, problem.refs, w)

        def candidate(alpha):
            return (xs + alpha * step["xs"], us + alpha * step["us"],
                    xa + alpha * step["xa"], ua + alpha * step["ua"],
                    lam + alpha * step["lam"])

        cand_full = candidate(1.0)
        cost_full = trajectory_cost(*cand_full, problem.refs, w)
        dj_full = cost_full - cost0
        rho_needed = 2.0 * duals
        if l1_0 > 1e-12 and dj_full > 0.0:
            rho_needed = max(rho_needed, dj_full / (0.5 * l1_0))
        self.penalty = max(self.penalty, rho_needed, 10.0)
        merit0 = cost0 + self.penalty * l1_0

        alpha = 1.0
        for _ in range(8):
            cand = cand_full if alpha == 1.0 else candidate(alpha)
            cost_c = cost_full if alpha == 1.0 else trajectory_cost(
                *cand, problem.refs, w)
            l1_c, _, _ = merit_defects(*cand, problem.footholds,
                                       *self._kernel_args(problem))
            merit = cost_c + self.penalty * l1_c
            pred_red = -(cost_c - cost0) + self.penalty * alpha * l1_0
            if merit <= merit0 - 0.1 * max(pred_red, 0.0) + 1e-12 * abs(merit0):
                return alpha
            alpha *= 0.5
        return alpha

    def _kkt_residual(self, problem, lin, xs, us, xa, ua, lam):
        """Adjoint-recursion KKT residual; coupling multipliers recovered in
        closed form, inequality multipliers from the most recent QP (zero on
        the first pass, conservatively inflating the residual)."""
        cfg = problem.config
        w = cfg.weights
        qp_sol = self.qp_warm
        expected = int(np.sum(5 * (problem.n_cols // 3) + 4))
        if qp_sol is not None and qp_sol.duals.shape[0] == expected:
            in_duals = qp_sol.duals
        else:
            in_duals = np.zeros(expected)
        return float(kkt_residual_kernel(
            *lin, xs, us, xa, ua, lam,
            problem.refs.x_srb, problem.refs.x_arm,
            w.q_srb, w.p_srb, w.r_srb, w.q_arm, w.p_arm, w.r_arm, w.r_int,
            problem.flags_arr, problem.cols_pad, problem.n_cols,
            cfg.mu, cfg.f_min, cfg.f_max, in_duals))


class NmpcController:
    """60 Hz receding-horizon controller with warm-started SQP."""

    def __init__(self, robot: RobotConfig, arm_model: ArmModel,
                 ctrl: ControllerConfig):
        self.robot = robot
        self.arm_model = arm_model
        self.ctrl = ctrl
        self.coupling_params = CouplingParams.from_srb(robot.srb)
        self.solver = SqpSolver(ctrl.nmpc, robot.srb)
        self.prev: NmpcSolution | None = None
        self.prev_flags: np.ndarray | None = None
        self.stance_trim = np.zeros(2)
        self._hold: np.ndarray | None = None

    def schedule_for(self, command: ReferenceCommand):
        g = self.ctrl.gait
        standing = g.standing_mode and (
            np.hypot(command.vx, command.vy) < g.standing_deadband
            and abs(command.yaw_rate) < g.standing_deadband
        )
        return GaitSchedule(step_time=g.step_time,
                            stance_fraction=g.stance_fraction,
                            standing=standing)

    def plan_footholds(self, t, x_srb, feet_now, flags_now, flags_seq, refs,
                       schedule, stance_trim=None):
        """Foothold positions per horizon step: measured for ongoing stance,
        Raibert-projected (frozen at plan time) for future touchdowns."""
        n = self.ctrl.nmpc.horizon
        ts = self.ctrl.nmpc.ts
        t_st = stance_duration(schedule)
        out = np.zeros((n, 4, 3))
        trim = np.zeros(3)
        if stance_trim is not None:
            trim = np.array([stance_trim[0], stance_trim[1], 0.0])
        v_now = np.asarray(x_srb, float)[3:6]
        for l in range(4):
            cycle = schedule.step_time
            for k in range(n):
                tk = t + (k + 0.5) * ts
                if schedule.standing or not flags_seq[k, l]:
                    out[k, l] = feet_now[l]
                    continue
                # touchdown time of the stance interval containing tk
                ph = schedule.phase(tk, l) / schedule.stance_fraction
                t_td = tk - ph * (cycle * schedule.stance_fraction)
                if t_td <= t + 1e-9 and flags_now[l]:
                    out[k, l] = feet_now[l]
                else:
                    idx = min(int(np.floor((t_td - t) / ts)), n)
                    ref_x = refs.x_srb[max(idx, 0)]
                    rot = euler_to_rotation(ref_x[6:9])
                    hip = ref_x[:3] + rot @ (self.robot.legs.hip_offsets[l] + trim)
                    out[k, l] = raibert_foothold(
                        hip, ref_x[3:6], ref_x[3:6], t_st,
                        self.ctrl.wbc.raibert_gain)
        return out

    def _cold_start(self, problem: NmpcProblem, x_srb, x_arm):
        n = problem.n
        xs = np.tile(x_srb, (n + 1, 1))
        xa = np.tile(x_arm, (n + 1, 1))
        lam0 = solve_static_interaction(x_srb, x_arm, self.coupling_params,
                                        self.robot.srb, self.arm_model)
        lam = np.tile(lam0, (n, 1))
        ua = np.tile(static_arm_torques(x_arm, self.arm_model), (n, 1))
        us = np.zeros((n, 12))
        support = self.robot.srb.mass * 9.81 - lam0[2]
        for k in range(n):
            stance = np.flatnonzero(problem.flags_seq[k])
            share = support / max(len(stance), 1)
            for l in stance:
                us[k, 3 * l + 2] = share
        return xs, us, xa, ua, lam

    def _shift_warm(self, problem: NmpcProblem, x_srb, x_arm):
        prev = self.prev
        n = problem.n
        xs = np.vstack([prev.xs[1:], prev.xs[-1]])
        xa = np.vstack([prev.xa[1:], prev.xa[-1]])
        us = np.vstack([prev.us[1:], prev.us[-1]])
        ua = np.vstack([prev.ua[1:], prev.ua[-1]])
        lam = np.vstack([prev.lam[1:], prev.lam[-1]])
        support = self.robot.srb.mass * 9.81 - lam[0, 2]
        for k in range(n):
            flags = problem.flags_seq[k]
            stance = np.flatnonzero(flags)
            share = support / max(len(stance), 1)
            for l in range(4):
                sl = slice(3 * l, 3 * l + 3)
                if not flags[l]:
                    us[k, sl] = 0.0
                elif us[k, 3 * l + 2] < problem.config.f_min:
                    us[k, sl] = (0.0, 0.0, share)
        return xs, us, xa, ua, lam

    def solve_cycle(self, t, x_srb, x_arm, command: ReferenceCommand,
                    feet_now) -> NmpcSolution:
        schedule = self.schedule_for(command)
        cfg = self.ctrl.nmpc
        flags_now = contact_flags(schedule, t)
        flags_seq = predicted_contact_sequence(schedule, t, cfg.horizon, cfg.ts)
        holding = (np.hypot(command.vx, command.vy)
                   < self.ctrl.gait.standing_deadband
                   and abs(command.yaw_rate) < self.ctrl.gait.standing_deadband)
        if holding:
            if self._hold is None:
                self._hold = np.array([x_srb[0], x_srb[1], x_srb[8]])
        else:
            self._hold = None
        refs = build_reference(command, x_srb, x_arm, self.ctrl,
                               self.coupling_params, hold_anchor=self._hold)
        self.stance_trim = stance_offset(x_arm, self.coupling_params,
                                         self.robot.srb, self.arm_model)
        footholds = self.plan_footholds(t, x_srb, feet_now, flags_now,
                                        flags_seq, refs, schedule,
                                        stance_trim=self.stance_trim)
        frozen = self.arm_model.frozen(x_arm)
        problem = NmpcProblem(x_srb, x_arm, flags_seq, footholds, refs,
                              frozen, self.robot.srb, self.coupling_params,
                              cfg)
        if self.prev is not None and self.prev_flags is not None:
            xs, us, xa, ua, lam = self._shift_warm(problem, x_srb, x_arm)
        else:
            xs, us, xa, ua, lam = self._cold_start(problem, x_srb, x_arm)
        sol = self.solver.solve(problem, xs, us, xa, ua, lam)
        self.prev = sol
        self.prev_flags = flags_seq
        return sol
