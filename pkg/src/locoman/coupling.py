"""Holonomic coupling between the SRB template and the arm base.

Residual chain:
    phi      = [p + R(theta) d - p_b,  theta - theta_b]
    phi_dot  = [pdot + S(omega) R d - pdot_b,  A(theta) omega - thetadot_b]
    phi_ddot = [pddot + S(omegadot) R d + S(omega)^2 R d - pddot_b,
                A omegadot + dA/dtheta(A omega) (A omega) - thetaddot_b]

The velocity form uses S(omega) R d, which equals the textbook
d(Rd)/dtheta * A(theta) omega for any (theta, omega) -- that identity is
exercised in the tests. Subsystem accelerations are substituted from the SRB
equations and the arm model handle, making phi_ddot affine in
(u_srb, u_arm, lam) at fixed states.
"""

from dataclasses import dataclass

import numpy as np

from .errors import SingularCoupling, SingularOrientation
from .mathcore import (
    euler_rate_map,
    euler_rate_map_inv,
    euler_rate_map_partials,
    euler_rate_map_second_partials,
    euler_to_rotation,
    rotation_partials,
    skew,
)
from .srb import SrbAccelTerms, SrbParams


@dataclass(frozen=True)
class CouplingParams:
    """Fixed CoM-to-mount offset d, SRB body frame."""

    offset: np.ndarray

    @classmethod
    def from_srb(cls, srb_params: SrbParams):
        return cls(offset=srb_params.mount_offset.copy())


def holonomic_residual(x_srb, x_arm, params: CouplingParams):
    x_srb = np.asarray(x_srb, float)
    x_arm = np.asarray(x_arm, float)
    p, theta = x_srb[:3], x_srb[6:9]
    p_b, theta_b = x_arm[:3], x_arm[3:6]
    rot = euler_to_rotation(theta)
    return np.concatenate([p + rot @ params.offset - p_b, theta - theta_b])


def holonomic_velocity_residual(x_srb, x_arm, params: CouplingParams):
    x_srb = np.asarray(x_srb, float)
    x_arm = np.asarray(x_arm, float)
    v, theta, omega = x_srb[3:6], x_srb[6:9], x_srb[9:12]
    vb, thetadot_b = x_arm[10:13], x_arm[13:16]
    rot = euler_to_rotation(theta)
    a_map = euler_rate_map(theta)
    pos = v + np.cross(omega, rot @ params.offset) - vb
    ang = a_map @ omega - thetadot_b
    return np.concatenate([pos, ang])


def consistent_arm_base(x_srb, params: CouplingParams):
    """Arm base coordinates/rates that zero phi and phi_dot for this SRB state."""
    x_srb = np.asarray(x_srb, float)
    p, v, theta, omega = x_srb[:3], x_srb[3:6], x_srb[6:9], x_srb[9:12]
    rot = euler_to_rotation(theta)
    p_b = p + rot @ params.offset
    vb = v + np.cross(omega, rot @ params.offset)
    thetadot_b = euler_rate_map(theta) @ omega
    return p_b, theta.copy(), vb, thetadot_b


def _srb_accel_block(x_srb, terms: SrbAccelTerms, params: CouplingParams):
    """SRB contribution to phi_ddot given precomputed acceleration terms."""
    omega = np.asarray(x_srb, float)[9:12]
    theta = np.asarray(x_srb, float)[6:9]
    rd = terms.rot @ params.offset
    a_parts = terms.a_parts
    a_omega = terms.a_map @ omega
    m2 = np.zeros((3, 3))
    for i in range(3):
        m2[:, i] = a_parts[i] @ omega
    pos = terms.pddot + np.cross(terms.omega_dot, rd) + np.cross(
        omega, np.cross(omega, rd)
    )
    ang = terms.a_map @ terms.omega_dot + m2 @ a_omega
    return pos, ang


def holonomic_accel_residual(x_srb, x_arm, u_srb, u_arm, lam,
                             params: CouplingParams, srb_params: SrbParams,
                             arm_model, foot_positions):
    """phi_ddot with accelerations substituted from both subsystem models.

    arm_model may be the full ArmModel or a FrozenArmModel handle.
    """
    x_arm = np.asarray(x_arm, float)
    terms = SrbAccelTerms(x_srb, u_srb, lam, srb_params, foot_positions)
    pos, ang = _srb_accel_block(x_srb, terms, params)
    qdd = arm_model.accelerations(x_arm[:10], x_arm[10:], u_arm, lam)
    return np.concatenate([pos - qdd[:3], ang - qdd[3:6]])


def accel_residual_jacobians(x_srb, x_arm, u_srb, u_arm, lam,
                             params: CouplingParams, srb_params: SrbParams,
                             frozen_arm, foot_positions, terms=None):
    """phi_ddot and its analytic Jacobians for the frozen arm model.

    Returns (value, d/dx_srb (6x12), d/dx_arm (6x20), d/du_srb (6x12),
    d/du_arm (6x4), d/dlam (6x6)).
    """
    x_srb = np.asarray(x_srb, float)
    x_arm = np.asarray(x_arm, float)
    omega, theta = x_srb[9:12], x_srb[6:9]
    q = x_arm[:10]

    if terms is None:
        terms = SrbAccelTerms(x_srb, u_srb, lam, srb_params, foot_positions)
    rd = terms.rot @ params.offset
    s_rd = skew(rd)
    a_map = terms.a_map
    a_parts = terms.a_parts
    a_second = euler_rate_map_second_partials(theta)
    a_omega = a_map @ omega
    m2 = np.column_stack([a_parts[i] @ omega for i in range(3)])

    pos, ang = _srb_accel_block(x_srb, terms, params)
    model = frozen_arm.model
    qdd = frozen_arm.accelerations(q, x_arm[10:], u_arm, lam)
    value = np.concatenate([pos - qdd[:3], ang - qdd[3:6]])

    # --- SRB state block ---------------------------------------------------
    j_xs = np.zeros((6, 12))
    j_xs[:3, :3] = -s_rd @ terms.d_om_dp
    j_xs[3:6, :3] = a_map @ terms.d_om_dp
    s_od = skew(terms.omega_dot)
    s_om = skew(omega)
    for i in range(3):
        pd = terms.rot_parts[i] @ params.offset
        j_xs[:3, 6 + i] = (
            -s_rd @ terms.d_om_dtheta[:, i]
            + (s_od + s_om @ s_om) @ pd
        )
        dm2 = np.column_stack([a_second[j, i] @ omega for j in range(3)])
        j_xs[3:6, 6 + i] = (
            a_parts[i] @ terms.omega_dot
            + a_map @ terms.d_om_dtheta[:, i]
            + dm2 @ a_omega
            + m2 @ (a_parts[i] @ omega)
        )
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1.0
        j_xs[:3, 9 + j] = (
            -s_rd @ terms.d_om_domega[:, j]
            + np.cross(e, np.cross(omega, rd))
            + np.cross(omega, np.cross(e, rd))
        )
        m2_e = np.column_stack([a_parts[i] @ e for i in range(3)])
        j_xs[3:6, 9 + j] = (
            a_map @ terms.d_om_domega[:, j]
            + m2_e @ a_omega
            + m2 @ (a_map @ e)
        )

    # --- SRB input / interaction blocks -------------------------------------
    j_us = np.zeros((6, 12))
    j_us[:3] = terms.d_pdd_du - s_rd @ terms.d_om_du
    j_us[3:6] = a_map @ terms.d_om_du
    j_lam = np.zeros((6, 6))
    j_lam[:3] = terms.d_pdd_dlam - s_rd @ terms.d_om_dlam
    j_lam[3:6] = a_map @ terms.d_om_dlam

    # --- arm blocks (frozen model: qdd = Dbar^-1 (B u - J^T lam - G(q))) ----
    d_inv6 = frozen_arm.d_inv[:6, :]
    j_xa = np.zeros((6, 20))
    j_xa[:, :10] = d_inv6 @ (
        model.base_jacobian_wrench_gradient(q, lam) + model.gravity_hessian(q)
    )
    j_ua = -(d_inv6 @ model.input_matrix)
    j_lam += d_inv6 @ model.base_jacobian(q).T

    return value, j_xs, j_xa, j_us, j_ua, j_lam


def interaction_matrix(x_srb, x_arm, params: CouplingParams,
                       srb_params: SrbParams, arm_model, d_matrix=None):
    """6x6 sensitivity M = d(phi_ddot)/d(lam) for the full arm model."""
    x_srb = np.asarray(x_srb, float)
    x_arm = np.asarray(x_arm, float)
    theta = x_srb[6:9]
    rot = euler_to_rotation(theta)
    rd = rot @ params.offset
    s_rd = skew(rd)
    a_map = euler_rate_map(theta)
    w = rot @ srb_params.inertia_body @ rot.T
    w_inv = np.linalg.inv(w)
    d_om = np.hstack([w_inv @ skew(rd), w_inv])  # mount == interaction point
    m = np.zeros((6, 6))
    m[:3, :3] = np.eye(3) / srb_params.mass
    m[:3] -= s_rd @ d_om
    m[3:] = a_map @ d_om
    if d_matrix is None:
        d_matrix = arm_model.mass_matrix(x_arm[:10])
    j_base = arm_model.base_jacobian(x_arm[:10])
    m += np.linalg.solve(d_matrix, j_base.T)[:6, :]
    return m


def solve_plant_interaction(x_srb, x_arm, u_srb, u_arm, params: CouplingParams,
                            srb_params: SrbParams, arm_model, foot_positions,
                            target=None, d_matrix=None, bias=None):
    """lam achieving phi_ddot = target (default 0) for the full arm model."""
    x_arm = np.asarray(x_arm, float)
    q, qd = x_arm[:10], x_arm[10:]
    if d_matrix is None:
        d_matrix = arm_model.mass_matrix(q)
    if bias is None:
        bias = arm_model.bias_forces(q, qd)
    terms = SrbAccelTerms(x_srb, u_srb, np.zeros(6), srb_params, foot_positions)
    pos, ang = _srb_accel_block(x_srb, terms, params)
    rhs_srb = np.concatenate([pos, ang])
    qdd0 = np.linalg.solve(d_matrix, arm_model.input_matrix @ np.asarray(u_arm, float) - bias)
    phi0 = rhs_srb - qdd0[:6]
    m = interaction_matrix(x_srb, x_arm, params, srb_params, arm_model,
                           d_matrix=d_matrix)
    t = np.zeros(6) if target is None else np.asarray(target, float)
    return np.linalg.solve(m, t - phi0)


def solve_static_interaction(x_srb, x_arm, params: CouplingParams,
                             srb_params: SrbParams, arm_model):
    """Static-stand oracle: lam pinning the arm base under gravity.

    The SRB is held stationary (supported by appropriate GRFs); with zero
    velocities and gravity-compensating shape torques, phi_ddot = 0 reduces
    to the base rows of the arm equations of motion.
    """
    x_arm = np.asarray(x_arm, float)
    q = x_arm[:10]
    g = arm_model.gravity_forces(q)
    try:
        b_euler = euler_rate_map_inv(q[3:6])
    except SingularOrientation as exc:
        raise SingularCoupling("Euler-rate system for lam is rank-deficient") from exc
    if abs(np.linalg.det(b_euler)) < 1e-9:
        raise SingularCoupling("Euler-rate system for lam is rank-deficient")
    f_int = -g[:3]
    tau_int = -np.linalg.solve(b_euler.T, g[3:6])
    return np.concatenate([f_int, tau_int])


def static_arm_torques(x_arm, arm_model):
    """Gravity-compensating shape torques for the static oracle."""
    return arm_model.gravity_forces(np.asarray(x_arm, float)[:10])[6:]


def stance_offset(x_arm, params: CouplingParams, srb_params: SrbParams,
                  arm_model):
    """Body-frame (x, y) shift that centers the support pattern under the
    composite weight.

    The static interaction wrench tips the trunk about the CoM; placing the
    feet at hip + offset cancels that moment with a symmetric force
    distribution. Recomputed as the arm pose changes."""
    x_arm = np.asarray(x_arm, float)
    lam = solve_static_interaction(np.zeros(12), x_arm, params, srb_params,
                                   arm_model)
    theta_b = x_arm[3:6]
    rd = euler_to_rotation(theta_b) @ params.offset
    tau = np.cross(rd, lam[:3]) + lam[3:]
    weight = (srb_params.mass + arm_model.params.total_mass) * 9.81
    return np.array([tau[1] / weight, -tau[0] / weight])
