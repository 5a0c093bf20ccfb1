"""Whole-body QP controller, swing trajectories, and foothold selection.

Runs at 500 Hz tracking the NMPC's first predicted SRB state and desired
GRFs. Decision variables are the stance forces and the output-dynamics
defect; leg torques are recovered by Jacobian transpose through the
massless-leg composite model (leg inertias are not modeled -- declared
reduction). Swing feet follow Bezier profiles toward Raibert footholds and
cost nothing in this model, so their output rows are satisfied outside the
QP and their defect entries are reported for diagnostics only.
"""

from dataclasses import dataclass

import numpy as np

from . import legs as leg_kin
from .config import LegParams, WbcConfig
from .errors import QpFailure
from .gait import GaitSchedule, stance_duration, stance_phase, swing_duration
from .mathcore import (
    euler_rate_map,
    euler_rate_map_partials,
    euler_to_rotation,
    skew,
    wrap_angle,
)
from .qp import MAX_ITER, OPTIMAL, QpProblem, QpSettings, solve_qp
from .srb import SrbParams, foot_lever_arms, srb_derivative


def raibert_foothold(hip_pos_world, v_actual, v_ref, stance_time, gain):
    """Planar foothold: hip projection + stance feedforward + velocity error.

    Height is the controller's believed ground plane (z = 0)."""
    out = np.zeros(3)
    v = np.asarray(v_actual, float)[:2]
    vr = np.asarray(v_ref, float)[:2]
    out[:2] = (
        np.asarray(hip_pos_world, float)[:2]
        + 0.5 * stance_time * v
        + gain * (v - vr)
    )
    return out


def _bezier(points, s):
    """De Casteljau evaluation: position and first/second phase-derivatives."""
    pts = [np.asarray(p, float) for p in points]
    n = len(pts) - 1
    d1 = [n * (pts[i + 1] - pts[i]) for i in range(n)]
    d2 = [(n - 1) * (d1[i + 1] - d1[i]) for i in range(n - 1)]

    def de_cast(ps):
        ps = [p.copy() for p in ps]
        while len(ps) > 1:
            ps = [(1 - s) * ps[i] + s * ps[i + 1] for i in range(len(ps) - 1)]
        return ps[0]

    return de_cast(pts), de_cast(d1), de_cast(d2)


def swing_trajectory(p_liftoff, p_touchdown, apex_height, phase, duration):
    """Swing foot (pos, vel, acc) at phase in [0, 1].

    Horizontal: cubic Bezier with doubled endpoints (zero end velocities).
    Vertical: quartic with the middle control point set so the mid-phase
    height clears max(z0, z1) by apex_height; endpoint vertical velocities
    are exactly zero."""
    p0 = np.asarray(p_liftoff, float)
    p1 = np.asarray(p_touchdown, float)
    s = float(np.clip(phase, 0.0, 1.0))
    xy_pos, xy_v, xy_a = _bezier([p0[:2], p0[:2], p1[:2], p1[:2]], s)
    z0, z1 = p0[2], p1[2]
    c = (16.0 * (max(z0, z1) + apex_height) - 5.0 * (z0 + z1)) / 6.0
    z_pos, z_v, z_a = _bezier(
        [np.array([z0]), np.array([z0]), np.array([c]), np.array([z1]), np.array([z1])], s
    )
    pos = np.concatenate([xy_pos, z_pos])
    vel = np.concatenate([xy_v, z_v]) / duration
    acc = np.concatenate([xy_a, z_a]) / duration**2
    return pos, vel, acc


@dataclass
class OutputVector:
    """Tracking errors y = y_actual - y_desired and their rates."""

    com: np.ndarray
    com_rate: np.ndarray
    euler: np.ndarray
    euler_rate: np.ndarray
    swing_feet: np.ndarray  # (n_swing, 3) position errors
    swing_rates: np.ndarray

    def stacked(self):
        return np.concatenate([self.com, self.euler, self.swing_feet.ravel()])

    def stacked_rate(self):
        return np.concatenate(
            [self.com_rate, self.euler_rate, self.swing_rates.ravel()]
        )


def output_vector(x_srb, x_srb_des, swing_actual=None, swing_target=None,
                  swing_rate_actual=None, swing_rate_target=None):
    """Build the virtual-constraint output from plant and NMPC-desired states."""
    x = np.asarray(x_srb, float)
    xd = np.asarray(x_srb_des, float)
    n_sw = 0 if swing_actual is None else len(swing_actual)
    sw = np.zeros((n_sw, 3))
    swr = np.zeros((n_sw, 3))
    for i in range(n_sw):
        sw[i] = np.asarray(swing_actual[i], float) - np.asarray(swing_target[i], float)
        if swing_rate_actual is not None:
            swr[i] = np.asarray(swing_rate_actual[i], float) - np.asarray(
                swing_rate_target[i], float
            )
    theta_rate = euler_rate_map(x[6:9]) @ x[9:12]
    theta_rate_des = euler_rate_map(xd[6:9]) @ xd[9:12]
    return OutputVector(
        com=x[:3] - xd[:3],
        com_rate=x[3:6] - xd[3:6],
        euler=wrap_angle(x[6:9] - xd[6:9]),
        euler_rate=theta_rate - theta_rate_des,
        swing_feet=sw,
        swing_rates=swr,
    )


@dataclass
class WbcSolution:
    torques: np.ndarray  # (12,) leg torques, FL FR RL RR x (roll, hip, knee)
    forces: np.ndarray  # (4, 3) stance GRFs, swing rows zero
    delta: np.ndarray  # output-dynamics defect (6 + 3 n_swing)
    status: str
    iterations: int


def solve_wbc(output: OutputVector, f_des, lam_des, flags, x_srb,
              foot_positions, srb_params: SrbParams, leg_params: LegParams,
              config: WbcConfig, mu: float = 0.6,
              qp_settings: QpSettings | None = None, warm=None):
    """Track the NMPC trajectory: min torque/force-tracking/defect norm.

    Raises QpFailure when the QP cannot be solved; the caller is expected to
    hold the previous torque command."""
    x = np.asarray(x_srb, float)
    flags = np.asarray(flags, bool)
    f_des = np.asarray(f_des, float).reshape(4, 3)
    feet = np.asarray(foot_positions, float).reshape(4, 3)
    stance = [l for l in range(4) if flags[l]]
    n_st = len(stance)
    if n_st == 0:
        raise QpFailure("no stance feet")

    theta, omega = x[6:9], x[9:12]
    rot = euler_to_rotation(theta)
    a_map = euler_rate_map(theta)
    w_mat = rot @ srb_params.inertia_body @ rot.T
    w_inv = np.linalg.inv(w_mat)
    r_int = rot @ srb_params.mount_offset
    f_int, tau_int = np.asarray(lam_des, float)[:3], np.asarray(lam_des, float)[3:]
    ftc = foot_lever_arms(x[:3], feet)

    # feedforward accelerations from the desired state/input pair
    a_parts = euler_rate_map_partials(theta)
    m2 = np.column_stack([a_parts[i] @ omega for i in range(3)])

    kp, kd = config.kp, config.kd
    e_p, ed_p = output.com, output.com_rate
    e_t, ed_t = output.euler, output.euler_rate

    nv = 3 * n_st + 6  # stance forces + defect
    h = np.zeros((nv, nv))
    g = np.zeros(nv)
    jacs = []
    hips = leg_params.hip_world(x[:3], rot)
    for i, l in enumerate(stance):
        q_leg = leg_kin.leg_ik(rot.T @ (feet[l] - hips[l]), l, leg_params)
        j_w = leg_kin.leg_jacobian_world(q_leg, l, leg_params, rot)
        jacs.append(j_w)
        sl = slice(3 * i, 3 * i + 3)
        h[sl, sl] = config.gamma_torque * (j_w @ j_w.T) + config.gamma_force * np.eye(3)
        g[sl] = -config.gamma_force * f_des[l]
    h[3 * n_st:, 3 * n_st:] = config.gamma_defect * np.eye(6)

    # output dynamics rows: pddot(f) + KD ed + KP e - pddot_des = delta, etc.
    a_eq = np.zeros((6, nv))
    b_eq = np.zeros(6)
    for i, l in enumerate(stance):
        a_eq[0:3, 3 * i : 3 * i + 3] = np.eye(3) / srb_params.mass
        a_eq[3:6, 3 * i : 3 * i + 3] = a_map @ (w_inv @ skew(ftc[l]))
    a_eq[0:3, 3 * n_st : 3 * n_st + 3] = -np.eye(3)
    a_eq[3:6, 3 * n_st + 3 :] = -np.eye(3)

    pddot_des, thddot_des = _desired_accels(x_srb, f_des, lam_des, feet, srb_params)
    b_eq[0:3] = (
        pddot_des - kd * ed_p - kp * e_p + srb_params.gravity - f_int / srb_params.mass
    )
    b_eq[3:6] = (
        thddot_des - kd * ed_t - kp * e_t - m2 @ (a_map @ omega)
        - a_map @ (w_inv @ (tau_int + np.cross(r_int, f_int)
                            - np.cross(omega, w_mat @ omega)))
    )

    # friction pyramid (5 rows per stance foot) + torque limits (3 rows)
    rows, lo, hi = [], [], []
    big = np.inf
    for i, l in enumerate(stance):
        base = 3 * i
        for tang in (0, 1):
            r1 = np.zeros(nv)
            r1[base + tang] = 1.0
            r1[base + 2] = -mu
            rows.append(r1)
            lo.append(-big)
            hi.append(0.0)
            r2 = np.zeros(nv)
            r2[base + tang] = 1.0
            r2[base + 2] = mu
            rows.append(r2)
            lo.append(0.0)
            hi.append(big)
        rz = np.zeros(nv)
        rz[base + 2] = 1.0
        rows.append(rz)
        lo.append(0.0)
        hi.append(big)
        for axis in range(3):
            rt = np.zeros(nv)
            rt[base : base + 3] = -jacs[i].T[axis]
            rows.append(rt)
            lo.append(-leg_params.torque_limit)
            hi.append(leg_params.torque_limit)

    problem = QpProblem(
        h=h, g=g, a_eq=a_eq, b_eq=b_eq,
        a_in=np.array(rows), lb=np.array(lo), ub=np.array(hi),
    )
    settings = qp_settings or QpSettings(eps_abs=1e-6, eps_rel=1e-6,
                                         max_iter=400, check_every=20)
    if warm is not None and warm.x.shape[0] != nv:
        warm = None
    sol = solve_qp(problem, warm=warm, settings=settings)
    if sol.status not in (OPTIMAL,):
        raise QpFailure(f"WBC QP status {sol.status}")

    forces = np.zeros((4, 3))
    torques = np.zeros(12)
    for i, l in enumerate(stance):
        forces[l] = sol.x[3 * i : 3 * i + 3]
        torques[3 * l : 3 * l + 3] = -jacs[i].T @ forces[l]
    delta_swing = kp * output.swing_feet + kd * output.swing_rates
    delta = np.concatenate([sol.x[3 * n_st :], delta_swing.ravel()])
    return WbcSolution(
        torques=torques, forces=forces, delta=delta,
        status=sol.status, iterations=sol.iterations,
    ), sol


def _desired_accels(x_srb, f_des, lam_des, feet, srb_params):
    """Feedforward (pddot, thetaddot) from the desired state/input pair."""
    xd = srb_derivative(x_srb, f_des, lam_des, feet, srb_params)
    x = np.asarray(x_srb, float)
    a_parts = euler_rate_map_partials(x[6:9])
    m2 = np.column_stack([a_parts[i] @ x[9:12] for i in range(3)])
    a_map = euler_rate_map(x[6:9])
    th_ddot = m2 @ (a_map @ x[9:12]) + a_map @ xd[9:12]
    return xd[3:6], th_ddot


@dataclass
class FootState:
    position: np.ndarray  # current foot position (world)
    velocity: np.ndarray
    in_stance: bool
    liftoff: np.ndarray  # position at the last liftoff
    target: np.ndarray  # active Raibert target
    early: bool = False  # touched terrain before the clock said so


class FootPlanner:
    """Foot state machine: stance holds, swing follows Bezier toward Raibert
    targets on the believed z = 0 plane.

    A terrain query (plant side) may be supplied so touchdowns land on the
    true ground height; foot POSITIONS are proprioceptive state, only the
    terrain map stays hidden from the controller."""

    def __init__(self, schedule: GaitSchedule, leg_params: LegParams,
                 config: WbcConfig, initial_feet):
        self.schedule = schedule
        self.legs = leg_params
        self.config = config
        self.feet = [
            FootState(
                position=np.array(initial_feet[l], float),
                velocity=np.zeros(3),
                in_stance=True,
                liftoff=np.array(initial_feet[l], float),
                target=np.array(initial_feet[l], float),
            )
            for l in range(4)
        ]

    def update(self, t, x_srb, v_ref_world, terrain_height=None,
               stance_trim=None):
        """Advance the per-foot state machine; returns commanded kinematics.

        For each foot: (in_stance, position, velocity, acceleration).
        stance_trim is an optional body-frame (x, y) shift of the placement
        pattern (support centering under the composite weight)."""
        x = np.asarray(x_srb, float)
        rot = euler_to_rotation(x[6:9])
        hips = self.legs.hip_world(x[:3], rot)
        if stance_trim is not None:
            hips = hips + rot @ np.array([stance_trim[0], stance_trim[1], 0.0])
        t_st = stance_duration(self.schedule)
        t_sw = swing_duration(self.schedule)
        out = []
        for l in range(4):
            st = self.feet[l]
            in_stance, phase = stance_phase(self.schedule, t, l)
            if in_stance:
                if not st.in_stance:  # touchdown
                    if not st.early:
                        pos = st.target.copy()
                        if terrain_height is not None:
                            pos[2] = terrain_height(pos[0], pos[1])
                        st.position = pos
                    st.early = False
                st.in_stance = True
                st.velocity = np.zeros(3)
                out.append((True, st.position.copy(), np.zeros(3), np.zeros(3)))
                continue
            if st.in_stance:  # liftoff
                st.in_stance = False
                st.early = False
                st.liftoff = st.position.copy()
            if st.early:  # already on a block: hold until the clock catches up
                out.append((False, st.position.copy(), np.zeros(3), np.zeros(3)))
                continue
            st.target = raibert_foothold(
                hips[l], x[3:6], v_ref_world, t_st, self.config.raibert_gain
            )
            pos, vel, acc = swing_trajectory(
                st.liftoff, st.target, self.config.swing_apex, phase, t_sw
            )
            if terrain_height is not None and phase > 0.5 and vel[2] < 0.0:
                z_t = terrain_height(pos[0], pos[1])
                if pos[2] <= z_t:
                    pos = np.array([pos[0], pos[1], z_t])
                    vel = np.zeros(3)
                    acc = np.zeros(3)
                    st.early = True
            st.position = pos
            st.velocity = vel
            out.append((False, pos, vel, acc))
        return out

    def positions(self):
        return np.array([f.position for f in self.feet])

    def pin(self, foot, position):
        """External touchdown correction."""
        self.feet[foot].position = np.array(position, float)
        self.feet[foot].velocity = np.zeros(3)
