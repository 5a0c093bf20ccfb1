"""Desk-scale coupled plant.

Integrates the full SRB + floating-base arm dynamics (exact arm inertia and
Coriolis terms) with the interaction wrench solved each stage from the
acceleration-level coupling system with Baumgarte stabilization. Ground
reaction forces are commanded by the WBC and applied at the foot points
(height-gated by the caller); swing feet are kinematic. RK4 at 1 ms with the
injected mechanical work integrated alongside the state for energy
bookkeeping.
"""

from dataclasses import dataclass, field

import numpy as np

from .accel import njit
from .arm import ArmModel, _crba, _fk_chain, _link_world, _rnea
from .errors import NumericalBlowup
from .fastpath import _cross
from .mathcore import _euler_rate_map, _euler_rate_map_inv, euler_to_rotation
from .srb import SrbParams

BAUMGARTE_OMEGA = 50.0
BAUMGARTE_ZETA = 1.0


@njit
def _plant_deriv(xs, xa, grf, u_arm, f_push, f_ee, ee_offset, feet,
                 mass, i_body, g0, d_mount,
                 jtype, axes, t_local, a_mass, com_local, inertia_local,
                 g_vec, perm):
    """Coupled derivative: (ds (12), da (20), lam (6), power)."""
    p = xs[:3]
    v = xs[3:6]
    theta = xs[6:9]
    omega = xs[9:12]
    rot = euler_to_rotation(theta)
    a_map = _euler_rate_map(theta)
    w_mat = rot @ i_body @ rot.T
    rd = rot @ d_mount

    # SRB wrench without the interaction terms
    f_net0 = f_push.copy()
    tau_net0 = np.zeros(3)
    for l in range(4):
        f_net0 = f_net0 + grf[3 * l:3 * l + 3]
        tau_net0 = tau_net0 + _cross(feet[l] - p, grf[3 * l:3 * l + 3])
    pddot0 = f_net0 / mass - g0
    w_inv = np.linalg.inv(w_mat)
    omdot0 = w_inv @ (tau_net0 - _cross(omega, w_mat @ omega))

    # arm dynamics pieces (chain order -> q order)
    q = xa[:10]
    qd = xa[10:]
    q_chain = np.empty(10)
    qd_chain = np.empty(10)
    for i in range(10):
        q_chain[i] = q[perm[i]]
        qd_chain[i] = qd[perm[i]]
    rot_c, orig_c, axis_w = _fk_chain(q_chain, jtype, axes, t_local)
    c_w, i_w = _link_world(rot_c, orig_c, a_mass, com_local, inertia_local)
    d_chain = _crba(jtype, axis_w, orig_c, a_mass, c_w, i_w)
    h_chain = _rnea(q_chain, qd_chain, np.zeros(10), jtype, axes, t_local,
                    a_mass, com_local, inertia_local, g_vec)
    d_q = np.empty((10, 10))
    h_q = np.empty(10)
    for i in range(10):
        h_q[perm[i]] = h_chain[i]
        for j in range(10):
            d_q[perm[i], perm[j]] = d_chain[i, j]

    # end-effector force -> generalized forces through the linear Jacobian
    tau_gen = np.zeros(10)
    if f_ee[0] != 0.0 or f_ee[1] != 0.0 or f_ee[2] != 0.0:
        ee_pos = orig_c[9] + rot_c[9] @ ee_offset
        for jc in range(10):
            if jtype[jc] == 1:
                col = _cross(axis_w[jc], ee_pos - orig_c[jc])
            else:
                col = axis_w[jc].copy()
            tau_gen[perm[jc]] = col @ f_ee

    b_eul = _euler_rate_map_inv(q[3:6])
    rhs0 = -h_q + tau_gen
    for j in range(4):
        rhs0[6 + j] += u_arm[j]
    qdd0 = np.linalg.solve(d_q, rhs0)

    # lambda sensitivity: M = d(phi_ddot)/d(lam)
    jt = np.zeros((10, 6))
    for i in range(3):
        jt[i, i] = 1.0
    jt[3:6, 3:6] = b_eul.T
    dinv_jt = np.linalg.solve(d_q, jt)
    s_rd = np.zeros((3, 3))
    s_rd[0, 1] = -rd[2]
    s_rd[0, 2] = rd[1]
    s_rd[1, 0] = rd[2]
    s_rd[1, 2] = -rd[0]
    s_rd[2, 0] = -rd[1]
    s_rd[2, 1] = rd[0]
    d_om_dl = np.hstack((w_inv @ s_rd, w_inv))
    m_lam = np.zeros((6, 6))
    m_lam[:3] = -s_rd @ d_om_dl
    m_lam[3:] = a_map @ d_om_dl
    for i in range(3):
        m_lam[i, i] += 1.0 / mass
    m_lam += dinv_jt[:6, :]

    # phi, phi_dot, phi_ddot at lam = 0 and the Baumgarte target
    p_b = q[:3]
    th_b = q[3:6]
    phi = np.empty(6)
    phi[:3] = p + rd - p_b
    phi[3:] = theta - th_b
    a_om = a_map @ omega
    phi_dot = np.empty(6)
    phi_dot[:3] = v + _cross(omega, rd) - qd[:3]
    phi_dot[3:] = a_om - qd[3:6]
    cp_, sp_ = np.cos(theta[1]), np.sin(theta[1])
    cy_, sy_ = np.cos(theta[2]), np.sin(theta[2])
    tp_ = sp_ / cp_
    m2 = np.zeros((3, 3))
    # dA/dpitch @ omega, dA/dyaw @ omega columns (dA/droll = 0)
    m2[0, 1] = (cy_ * sp_ / cp_**2) * omega[0] + (sy_ * sp_ / cp_**2) * omega[1]
    m2[2, 1] = (cy_ / cp_**2) * omega[0] + (sy_ / cp_**2) * omega[1]
    m2[0, 2] = (-sy_ / cp_) * omega[0] + (cy_ / cp_) * omega[1]
    m2[1, 2] = -cy_ * omega[0] - sy_ * omega[1]
    m2[2, 2] = (-sy_ * tp_) * omega[0] + (cy_ * tp_) * omega[1]
    phi0 = np.empty(6)
    phi0[:3] = pddot0 + _cross(omdot0, rd) + _cross(omega, _cross(omega, rd)) - qdd0[:3]
    phi0[3:] = a_map @ omdot0 + m2 @ a_om - qdd0[3:6]
    target = -2.0 * BAUMGARTE_ZETA * BAUMGARTE_OMEGA * phi_dot \
        - BAUMGARTE_OMEGA**2 * phi
    lam = np.linalg.solve(m_lam, target - phi0)

    # final accelerations
    f_int = lam[:3]
    pddot = pddot0 + f_int / mass
    omdot = omdot0 + d_om_dl @ lam
    rhs = rhs0 - jt @ lam
    qdd = np.linalg.solve(d_q, rhs)

    ds = np.empty(12)
    ds[:3] = v
    ds[3:6] = pddot
    ds[6:9] = a_om
    ds[9:12] = omdot
    da = np.empty(20)
    da[:10] = qd
    da[10:] = qdd

    # injected mechanical power (coupling power cancels between subsystems)
    power = 0.0
    for j in range(4):
        power += u_arm[j] * qd[6 + j]
    for l in range(4):
        f = grf[3 * l:3 * l + 3]
        power += f @ v + _cross(feet[l] - p, f) @ omega
    power += f_push @ v
    power += tau_gen @ qd
    return ds, da, lam, power


@njit
def _rk4_coupled(xs, xa, work, grf, u_arm, f_push, f_ee, ee_offset, feet, dt,
                 mass, i_body, g0, d_mount,
                 jtype, axes, t_local, a_mass, com_local, inertia_local,
                 g_vec, perm):
    k1s, k1a, lam, p1 = _plant_deriv(xs, xa, grf, u_arm, f_push, f_ee,
                                     ee_offset, feet,
                                     mass, i_body, g0, d_mount, jtype, axes,
                                     t_local, a_mass, com_local,
                                     inertia_local, g_vec, perm)
    k2s, k2a, _, p2 = _plant_deriv(xs + 0.5 * dt * k1s, xa + 0.5 * dt * k1a,
                                   grf, u_arm, f_push, f_ee, ee_offset, feet,
                                   mass, i_body, g0, d_mount, jtype, axes,
                                   t_local, a_mass, com_local, inertia_local,
                                   g_vec, perm)
    k3s, k3a, _, p3 = _plant_deriv(xs + 0.5 * dt * k2s, xa + 0.5 * dt * k2a,
                                   grf, u_arm, f_push, f_ee, ee_offset, feet,
                                   mass, i_body, g0, d_mount, jtype, axes,
                                   t_local, a_mass, com_local, inertia_local,
                                   g_vec, perm)
    k4s, k4a, _, p4 = _plant_deriv(xs + dt * k3s, xa + dt * k3a, grf, u_arm,
                                   f_push, f_ee, ee_offset, feet,
                                   mass, i_body, g0, d_mount, jtype, axes,
                                   t_local, a_mass, com_local, inertia_local,
                                   g_vec, perm)
    xs_new = xs + dt / 6.0 * (k1s + 2 * k2s + 2 * k3s + k4s)
    xa_new = xa + dt / 6.0 * (k1a + 2 * k2a + 2 * k3a + k4a)
    work_new = work + dt / 6.0 * (p1 + 2 * p2 + 2 * p3 + p4)
    return xs_new, xa_new, work_new, lam


class Plant:
    """Coupled SRB + arm plant with kinematic feet and event injection."""

    SANITY = dict(pos=50.0, vel=20.0, omega=60.0, tilt=1.2)

    def __init__(self, x_srb, x_arm, feet, srb_params: SrbParams,
                 arm_model: ArmModel, terrain=None):
        from .fastpath import arm_pack

        self.x_srb = np.array(x_srb, float)
        self.x_arm = np.array(x_arm, float)
        self.feet = np.array(feet, float)
        self.srb_params = srb_params
        self.arm = arm_model
        self.terrain = terrain
        self.payload_mass = 0.0
        self.work = 0.0
        self.t = 0.0
        self._pack = arm_pack(arm_model)
        # payload weight acts at the EE as a generalized force on the arm
        self._gravity = arm_model.params.gravity.copy()

    def interaction_wrench(self, grf, u_arm, f_push=None):
        """Current lambda for diagnostics (no state change)."""
        _, _, lam, _ = _plant_deriv(
            self.x_srb, self.x_arm, np.asarray(grf, float).ravel(),
            np.asarray(u_arm, float),
            np.zeros(3) if f_push is None else np.asarray(f_push, float),
            np.zeros(3), self.arm.params.ee_offset, self.feet,
            self.srb_params.mass, self.srb_params.inertia_body,
            self.srb_params.gravity, self.srb_params.mount_offset,
            *self._pack)
        return lam

    def ee_force(self, v_cmd_resist=0.0, cart=None):
        """External force at the end-effector: payload weight (+ cart)."""
        f = self.payload_mass * self._gravity
        if cart is not None:
            mag = cart[0] + cart[1] * abs(v_cmd_resist)
            f = f + np.array([-np.sign(v_cmd_resist) * mag, 0.0, 0.0])
        return f

    def step(self, grf, u_arm, f_push=None, f_ee=None, dt=1e-3):
        """One RK4 step; GRFs/torques/forces held constant over dt."""
        f_push = np.zeros(3) if f_push is None else np.asarray(f_push, float)
        f_ee = np.zeros(3) if f_ee is None else np.asarray(f_ee, float)
        grf_flat = np.asarray(grf, float).ravel()
        self.x_srb, self.x_arm, self.work, lam = _rk4_coupled(
            self.x_srb, self.x_arm, self.work, grf_flat,
            np.asarray(u_arm, float), f_push, f_ee,
            self.arm.params.ee_offset, self.feet, dt,
            self.srb_params.mass, self.srb_params.inertia_body,
            self.srb_params.gravity, self.srb_params.mount_offset,
            *self._pack)
        self.t += dt
        self._check_sanity()
        return lam

    def _check_sanity(self):
        xs = self.x_srb
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(self.x_arm))):
            raise NumericalBlowup("non-finite plant state")
        if (np.max(np.abs(xs[:3])) > self.SANITY["pos"]
                or np.max(np.abs(xs[3:6])) > self.SANITY["vel"]
                or np.max(np.abs(xs[9:12])) > self.SANITY["omega"]
                or np.max(np.abs(xs[6:8])) > self.SANITY["tilt"]):
            raise NumericalBlowup("plant state left sanity bounds")

    def mechanical_energy(self):
        """Total kinetic + potential energy of the composite model."""
        xs = self.x_srb
        rot = euler_to_rotation(xs[6:9])
        w = rot @ self.srb_params.inertia_body @ rot.T
        e = (0.5 * self.srb_params.mass * xs[3:6] @ xs[3:6]
             + 0.5 * xs[9:12] @ w @ xs[9:12]
             + self.srb_params.mass * self.srb_params.gravity @ xs[:3])
        e += self.arm.total_energy(self.x_arm[:10], self.x_arm[10:])
        return float(e)
