"""Fused numba kernels for the NMPC hot loop.

One call linearizes the whole horizon (SRB dynamics, frozen-arm dynamics,
coupling constraint) and one call evaluates the merit rollout; both avoid
per-step Python overhead. Formulas mirror the reference implementations in
srb.py / coupling.py / arm.py, which stay the documented (and finite-
difference-verified) source of truth; equality of the two paths is asserted
in tests.
"""

import numpy as np

from .accel import njit
from .arm import _PERM, _fk_chain, _link_world, _rnea, _gravity_hessian
from .mathcore import (
    _euler_rate_map,
    _euler_rate_map_inv,
    euler_rate_inv_partials,
    euler_rate_map_partials,
    euler_rate_map_second_partials,
    euler_to_rotation,
    rotation_partials,
    skew,
)

_PERM_CONST = _PERM.copy()


def arm_pack(arm_model):
    """Chain arrays + permutation for the kernels, built once per model."""
    (jtype, axes, t_local, mass, com_local, inertia_local, g_vec) = \
        arm_model.params.packed()
    return (jtype, axes, t_local, mass, com_local, inertia_local, g_vec,
            _PERM_CONST.copy())


@njit
def _cross(a, b):
    return np.array([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


@njit
def _gravity_chain_scalar(jtype, axis_w, orig, mass, c_w, g_vec):
    """Gravity generalized forces, chain order, allocation-free loops."""
    g_chain = np.zeros(10)
    for i in range(10):
        if mass[i] <= 0.0:
            continue
        wx = -mass[i] * g_vec[0]
        wy = -mass[i] * g_vec[1]
        wz = -mass[i] * g_vec[2]
        for j in range(i + 1):
            ax, ay, az = axis_w[j, 0], axis_w[j, 1], axis_w[j, 2]
            if jtype[j] == 1:
                rx = c_w[i, 0] - orig[j, 0]
                ry = c_w[i, 1] - orig[j, 1]
                rz = c_w[i, 2] - orig[j, 2]
                g_chain[j] += (wx * (ay * rz - az * ry)
                               + wy * (az * rx - ax * rz)
                               + wz * (ax * ry - ay * rx))
            else:
                g_chain[j] += wx * ax + wy * ay + wz * az
    return g_chain


@njit
def _gravity_q(q, jtype, axes, t_local, mass, com_local, inertia_local, g_vec,
               perm):
    q_chain = np.empty(10)
    for i in range(10):
        q_chain[i] = q[perm[i]]
    rot, orig, axis_w = _fk_chain(q_chain, jtype, axes, t_local)
    c_w, _ = _link_world(rot, orig, mass, com_local, inertia_local)
    g_chain = _gravity_chain_scalar(jtype, axis_w, orig, mass, c_w, g_vec)
    out = np.empty(10)
    for i in range(10):
        out[perm[i]] = g_chain[i]
    return out


@njit
def _gravity_and_hessian_q(q, jtype, axes, t_local, mass, com_local,
                           inertia_local, g_vec, perm):
    """Gravity vector and its q-gradient from a single FK pass, q-order."""
    q_chain = np.empty(10)
    for i in range(10):
        q_chain[i] = q[perm[i]]
    rot, orig, axis_w = _fk_chain(q_chain, jtype, axes, t_local)
    c_w, _ = _link_world(rot, orig, mass, com_local, inertia_local)
    g_chain = _gravity_chain_scalar(jtype, axis_w, orig, mass, c_w, g_vec)
    hc = _gravity_hessian(jtype, axis_w, orig, mass, c_w, g_vec)
    g_out = np.empty(10)
    h_out = np.empty((10, 10))
    for i in range(10):
        g_out[perm[i]] = g_chain[i]
        for j in range(10):
            h_out[perm[i], perm[j]] = hc[i, j]
    return g_out, h_out


@njit
def _frozen_arm_lin(q, u, lam, d_inv, jtype, axes, t_local, mass, com_local,
                    inertia_local, g_vec, perm):
    """Frozen-model qdd and input/interaction maps, q-order.

    Returns (qdd, dqdd_dq, dinv_b (10x4), dinv_jt (10x6))."""
    g_q, ghess = _gravity_and_hessian_q(q, jtype, axes, t_local, mass,
                                        com_local, inertia_local, g_vec, perm)
    b_eul = _euler_rate_map_inv(q[3:6])
    rhs = -g_q
    for j in range(4):
        rhs[6 + j] += u[j]
    rhs[0] -= lam[0]
    rhs[1] -= lam[1]
    rhs[2] -= lam[2]
    bt_tau = b_eul.T @ lam[3:6]
    rhs[3] -= bt_tau[0]
    rhs[4] -= bt_tau[1]
    rhs[5] -= bt_tau[2]
    qdd = d_inv @ rhs

    wgrad = ghess  # reuse storage: add the interaction-wrench gradient
    b_parts = euler_rate_inv_partials(q[3:6])
    for j in range(3):
        col = b_parts[j].T @ lam[3:6]
        wgrad[3, 3 + j] += col[0]
        wgrad[4, 3 + j] += col[1]
        wgrad[5, 3 + j] += col[2]
    dqdd_dq = -d_inv @ np.ascontiguousarray(wgrad)

    dinv_b = np.ascontiguousarray(d_inv[:, 6:10])
    dinv_jt = np.zeros((10, 6))
    dinv_jt[:, 0:3] = d_inv[:, 0:3]
    dinv_jt[:, 3:6] = np.ascontiguousarray(d_inv[:, 3:6]) @ b_eul.T
    return qdd, dqdd_dq, dinv_b, dinv_jt


@njit
def _srb_lin(x, grf, lam, feet, mass, i_body, g0, d_mount):
    """Continuous SRB derivative and partials plus shared geometry.

    Returns (deriv, fx, fu, fl, rot, a_map, a_parts, w_inv, rd,
    pddot, omdot, d_om_dp, d_om_dth, d_om_dom, d_om_du, d_om_dl)."""
    p = x[:3]
    omega = x[9:12]
    theta = x[6:9]
    rot = euler_to_rotation(theta)
    rot_parts = rotation_partials(theta)
    a_map = _euler_rate_map(theta)
    a_parts = euler_rate_map_partials(theta)
    w = rot @ i_body @ rot.T
    w_inv = np.linalg.inv(w)
    r_int = rot @ d_mount
    f_int = lam[:3]

    f_net = f_int.copy()
    tau_net = lam[3:6] + _cross(r_int, f_int)
    ftc = np.empty((4, 3))
    for l in range(4):
        ftc[l] = feet[l] - p
        f_net = f_net + grf[3 * l:3 * l + 3]
        tau_net = tau_net + _cross(ftc[l], grf[3 * l:3 * l + 3])
    pddot = f_net / mass - g0
    omdot = w_inv @ (tau_net - _cross(omega, w @ omega))

    deriv = np.empty(12)
    deriv[:3] = x[3:6]
    deriv[3:6] = pddot
    deriv[6:9] = a_map @ omega
    deriv[9:12] = omdot

    d_om_dp = np.zeros((3, 3))
    for l in range(4):
        d_om_dp += skew(grf[3 * l:3 * l + 3])
    d_om_dp = w_inv @ d_om_dp
    d_om_dth = np.zeros((3, 3))
    for i in range(3):
        dw = rot_parts[i] @ i_body @ rot.T + rot @ i_body @ rot_parts[i].T
        dtau = _cross(rot_parts[i] @ d_mount, f_int)
        d_om_dth[:, i] = w_inv @ (dtau - _cross(omega, dw @ omega) - dw @ omdot)
    d_om_dom = w_inv @ (-skew(omega) @ w + skew(w @ omega))
    d_om_du = np.zeros((3, 12))
    for l in range(4):
        d_om_du[:, 3 * l:3 * l + 3] = w_inv @ skew(ftc[l])
    d_om_dl = np.zeros((3, 6))
    d_om_dl[:, :3] = w_inv @ skew(r_int)
    d_om_dl[:, 3:] = w_inv

    fx = np.zeros((12, 12))
    fu = np.zeros((12, 12))
    fl = np.zeros((12, 6))
    for i in range(3):
        fx[i, 3 + i] = 1.0
    for l in range(4):
        for i in range(3):
            fu[3 + i, 3 * l + i] = 1.0 / mass
    for i in range(3):
        fl[3 + i, i] = 1.0 / mass
    for i in range(3):
        fx[6:9, 6 + i] = a_parts[i] @ omega
    fx[6:9, 9:12] = a_map
    fx[9:12, :3] = d_om_dp
    fx[9:12, 6:9] = d_om_dth
    fx[9:12, 9:12] = d_om_dom
    fu[9:12, :] = d_om_du
    fl[9:12, :] = d_om_dl

    return (deriv, fx, fu, fl, rot, a_map, a_parts, w_inv, r_int,
            pddot, omdot, d_om_dp, d_om_dth, d_om_dom, d_om_du, d_om_dl)


@njit
def _phi_blocks(x_srb, theta_second, rot_parts, rot, a_map, a_parts,
                d_mount, pddot, omdot, d_om_dp, d_om_dth, d_om_dom,
                d_om_du, d_om_dl, mass, qdd, dqdd_dq, dinv_b, dinv_jt):
    """phi_ddot and Jacobian blocks from precomputed pieces."""
    omega = x_srb[9:12]
    rd = rot @ d_mount
    s_rd = skew(rd)
    a_omega = a_map @ omega
    m2 = np.empty((3, 3))
    for i in range(3):
        m2[:, i] = a_parts[i] @ omega

    phi = np.empty(6)
    phi[:3] = pddot + _cross(omdot, rd) + _cross(omega, _cross(omega, rd)) - qdd[:3]
    phi[3:] = a_map @ omdot + m2 @ a_omega - qdd[3:6]

    j_xs = np.zeros((6, 12))
    j_xs[:3, :3] = -s_rd @ d_om_dp
    j_xs[3:6, :3] = a_map @ d_om_dp
    s_od = skew(omdot)
    s_om = skew(omega)
    for i in range(3):
        pd = rot_parts[i] @ d_mount
        j_xs[:3, 6 + i] = -s_rd @ d_om_dth[:, i] + (s_od + s_om @ s_om) @ pd
        dm2 = np.empty((3, 3))
        for jj in range(3):
            dm2[:, jj] = theta_second[jj, i] @ omega
        j_xs[3:6, 6 + i] = (a_parts[i] @ omdot + a_map @ d_om_dth[:, i]
                            + dm2 @ a_omega + m2 @ (a_parts[i] @ omega))
    for j in range(3):
        e = np.zeros(3)
        e[j] = 1.0
        j_xs[:3, 9 + j] = (-s_rd @ d_om_dom[:, j]
                           + _cross(e, _cross(omega, rd))
                           + _cross(omega, _cross(e, rd)))
        m2e = np.empty((3, 3))
        for i in range(3):
            m2e[:, i] = a_parts[i] @ e
        j_xs[3:6, 9 + j] = (a_map @ d_om_dom[:, j] + m2e @ a_omega
                            + m2 @ (a_map @ e))

    j_us = np.empty((6, 12))
    j_us[:3] = -s_rd @ d_om_du
    j_us[3:6] = a_map @ d_om_du
    for l in range(4):
        for i in range(3):
            j_us[i, 3 * l + i] += 1.0 / mass

    j_lam = np.empty((6, 6))
    j_lam[:3] = -s_rd @ d_om_dl
    j_lam[3:6] = a_map @ d_om_dl
    for i in range(3):
        j_lam[i, i] += 1.0 / mass
    j_lam += dinv_jt[:6, :]

    j_xa = np.zeros((6, 20))
    j_xa[:, :10] = -dqdd_dq[:6, :]
    j_ua = -dinv_b[:6, :]
    return phi, j_xs, j_xa, j_us, j_ua, j_lam


@njit
def horizon_linearize(xs, us, xa, ua, lam, feet, ts,
                      mass, i_body, g0, d_mount, d_inv,
                      jtype, axes, t_local, a_mass, com_local, inertia_local,
                      g_vec, perm):
    """Linearize dynamics + coupling over the whole horizon in one call."""
    n = us.shape[0]
    a_s = np.empty((n, 12, 12))
    b_s = np.empty((n, 12, 12))
    c_s = np.empty((n, 12, 6))
    r_s = np.empty((n, 12))
    a_a = np.empty((n, 20, 20))
    b_a = np.empty((n, 20, 4))
    c_a = np.empty((n, 20, 6))
    r_a = np.empty((n, 20))
    phi = np.empty((n, 6))
    g_xs = np.empty((n, 6, 12))
    g_xa = np.empty((n, 6, 20))
    g_us = np.empty((n, 6, 12))
    g_ua = np.empty((n, 6, 4))
    g_lam = np.empty((n, 6, 6))
    eye12 = np.eye(12)

    for k in range(n):
        (deriv, fx, fu, fl, rot, a_map, a_parts, w_inv, r_int, pddot, omdot,
         d_om_dp, d_om_dth, d_om_dom, d_om_du, d_om_dl) = _srb_lin(
            xs[k], us[k], lam[k], feet[k], mass, i_body, g0, d_mount)
        a_s[k] = eye12 + ts * fx
        b_s[k] = ts * fu
        c_s[k] = ts * fl
        r_s[k] = xs[k] + ts * deriv - xs[k + 1]

        q = xa[k, :10]
        qd = xa[k, 10:]
        qdd, dqdd_dq, dinv_b, dinv_jt = _frozen_arm_lin(
            q, ua[k], lam[k], d_inv, jtype, axes, t_local, a_mass,
            com_local, inertia_local, g_vec, perm)
        aa = np.eye(20)
        for i in range(10):
            aa[i, 10 + i] += ts
        aa[10:, :10] += ts * dqdd_dq
        a_a[k] = aa
        ba = np.zeros((20, 4))
        ba[10:] = ts * dinv_b
        b_a[k] = ba
        ca = np.zeros((20, 6))
        ca[10:] = -ts * dinv_jt
        c_a[k] = ca
        r_a[k, :10] = xa[k, :10] + ts * qd - xa[k + 1, :10]
        r_a[k, 10:] = xa[k, 10:] + ts * qdd - xa[k + 1, 10:]

        theta_second = euler_rate_map_second_partials(xs[k, 6:9])
        rot_parts = rotation_partials(xs[k, 6:9])
        (phi_k, j_xs, j_xa, j_us, j_ua, j_lam) = _phi_blocks(
            xs[k], theta_second, rot_parts, rot, a_map, a_parts, d_mount,
            pddot, omdot, d_om_dp, d_om_dth, d_om_dom, d_om_du, d_om_dl,
            mass, qdd, dqdd_dq, dinv_b, dinv_jt)
        phi[k] = phi_k
        g_xs[k] = j_xs
        g_xa[k] = j_xa
        g_us[k] = j_us
        g_ua[k] = j_ua
        g_lam[k] = j_lam

    return (a_s, b_s, c_s, r_s, a_a, b_a, c_a, r_a, phi, g_xs, g_xa, g_us,
            g_ua, g_lam)


@njit
def condense_qp(a_s, b_s, c_s, r_s, a_a, b_a, c_a, r_a, phi,
                g_xs, g_xa, g_us, g_ua, g_lam,
                xs, us, xa, ua, lam, ref_xs, ref_xa,
                q_srb, p_srb, r_srb, q_arm, p_arm, r_arm, r_int,
                flags, slots, cols_pad, n_cols, mu, f_min, f_max, t_lim):
    """Condense the horizon onto [stance GRFs | arm torques] per step.

    lambda is eliminated through the coupling rows (6x6 solve per step);
    returns (h, g, a_in, lb, ub, t_inv_all, lam_sens_all, lam_off_all,
    s_z_hist, o_z_hist) with the QP inequality-only."""
    n = us.shape[0]
    nw = slots[n]
    h = np.zeros((nw, nw))
    g = np.zeros(nw)
    n_in = 0
    for k in range(n):
        n_in += 5 * (n_cols[k] // 3) + 4
    a_in = np.zeros((n_in, nw))
    lb = np.empty(n_in)
    ub = np.empty(n_in)

    n_rows = 6 * n
    for k in range(n):
        for i in range(12):
            n_rows += 1 if (q_srb[i] > 0 or p_srb[i] > 0) else 0
        for i in range(20):
            n_rows += 1 if (q_arm[i] > 0 or p_arm[i] > 0) else 0
    m_stack = np.zeros((n_rows, nw))
    e_stack = np.zeros(n_rows)

    t_inv_all = np.empty((n, 6, 6))
    lam_sens_all = np.empty((n, 6, nw))
    lam_off_all = np.empty((n, 6))
    s_z = np.zeros((32, nw))
    o_z = np.zeros(32)
    big = 1e30
    row = 0
    srow = 0
    for k in range(n):
        base = slots[k]
        nc = n_cols[k]
        ua_off = base + nc
        wk2 = ua_off + 4
        t_inv = np.linalg.inv(g_lam[k])
        t_inv_all[k] = t_inv
        g_z = np.zeros((6, 32))
        g_z[:, :12] = g_xs[k]
        g_z[:, 12:] = g_xa[k]
        lam_sens = -(t_inv @ g_z) @ s_z
        tgu = t_inv @ g_us[k]
        for ci in range(nc):
            col = cols_pad[k, ci]
            for r in range(6):
                lam_sens[r, base + ci] -= tgu[r, col]
        tga = t_inv @ g_ua[k]
        for ci in range(4):
            for r in range(6):
                lam_sens[r, ua_off + ci] -= tga[r, ci]
        lam_off = -(t_inv @ (phi[k] + g_z @ o_z))
        lam_sens_all[k] = lam_sens
        lam_off_all[k] = lam_off
        # interaction-wrench cost rows
        for r in range(6):
            sw = np.sqrt(r_int[r])
            for c in range(nw):
                m_stack[srow, c] = sw * lam_sens[r, c]
            e_stack[srow] = sw * (lam[k, r] + lam_off[r])
            srow += 1
        # input cost (diagonal)
        for ci in range(nc):
            col = cols_pad[k, ci]
            h[base + ci, base + ci] += r_srb[col]
            g[base + ci] += r_srb[col] * us[k, col]
        for ci in range(4):
            h[ua_off + ci, ua_off + ci] += r_arm[ci]
            g[ua_off + ci] += r_arm[ci] * ua[k, ci]
        # inequalities
        li = 0
        for l in range(4):
            if not flags[k, l]:
                continue
            fb = base + 3 * li
            fx_v = us[k, 3 * l]
            fy_v = us[k, 3 * l + 1]
            fz_v = us[k, 3 * l + 2]
            for tang in range(2):
                val = fx_v if tang == 0 else fy_v
                a_in[row, fb + tang] = 1.0
                a_in[row, fb + 2] = -mu
                lb[row] = -big
                ub[row] = -(val - mu * fz_v)
                row += 1
                a_in[row, fb + tang] = 1.0
                a_in[row, fb + 2] = mu
                lb[row] = -(val + mu * fz_v)
                ub[row] = big
                row += 1
            a_in[row, fb + 2] = 1.0
            lb[row] = f_min - fz_v
            ub[row] = f_max - fz_v
            row += 1
            li += 1
        for j in range(4):
            a_in[row, ua_off + j] = 1.0
            lb[row] = -t_lim[j] - ua[k, j]
            ub[row] = t_lim[j] - ua[k, j]
            row += 1
        # propagate stacked prediction matrices
        new_s_z = np.zeros((32, nw))
        cs_ls = c_s[k] @ lam_sens
        ca_ls = c_a[k] @ lam_sens
        new_s_z[:12] = a_s[k] @ np.ascontiguousarray(s_z[:12]) + cs_ls
        new_s_z[12:] = a_a[k] @ np.ascontiguousarray(s_z[12:]) + ca_ls
        for ci in range(nc):
            col = cols_pad[k, ci]
            for i in range(12):
                new_s_z[i, base + ci] += b_s[k, i, col]
        for ci in range(4):
            for i in range(20):
                new_s_z[12 + i, ua_off + ci] += b_a[k, i, ci]
        new_o_z = np.empty(32)
        new_o_z[:12] = a_s[k] @ o_z[:12] + r_s[k] + c_s[k] @ lam_off
        new_o_z[12:] = a_a[k] @ o_z[12:] + r_a[k] + c_a[k] @ lam_off
        s_z = new_s_z
        o_z = new_o_z
        # state cost rows at k+1 (one row per state with any nonzero weight)
        terminal = k + 1 == n
        for i in range(32):
            if i < 12:
                keep = q_srb[i] > 0 or p_srb[i] > 0
                qv = p_srb[i] if terminal else q_srb[i]
                err = xs[k + 1, i] - ref_xs[k + 1, i] + o_z[i]
            else:
                keep = q_arm[i - 12] > 0 or p_arm[i - 12] > 0
                qv = p_arm[i - 12] if terminal else q_arm[i - 12]
                err = xa[k + 1, i - 12] - ref_xa[k + 1, i - 12] + o_z[i]
            if not keep:
                continue
            sw = np.sqrt(qv)
            for c in range(nw):
                m_stack[srow, c] = sw * s_z[i, c]
            e_stack[srow] = sw * err
            srow += 1
    h += m_stack[:srow].T @ np.ascontiguousarray(m_stack[:srow])
    g += m_stack[:srow].T @ np.ascontiguousarray(e_stack[:srow])
    return h, g, a_in, lb, ub, t_inv_all, lam_sens_all, lam_off_all


@njit
def expand_step(a_s, b_s, c_s, r_s, a_a, b_a, c_a, r_a, phi,
                g_xs, g_xa, g_us, g_ua,
                t_inv_all, slots, cols_pad, n_cols, d_w):
    """Reconstruct the full-space step from the reduced QP solution."""
    n = a_s.shape[0]
    d_us = np.zeros((n, 12))
    d_ua = np.zeros((n, 4))
    d_lam = np.zeros((n, 6))
    d_xs = np.zeros((n + 1, 12))
    d_xa = np.zeros((n + 1, 20))
    for k in range(n):
        base = slots[k]
        nc = n_cols[k]
        for ci in range(nc):
            d_us[k, cols_pad[k, ci]] = d_w[base + ci]
        for ci in range(4):
            d_ua[k, ci] = d_w[base + nc + ci]
        rhs = (phi[k] + g_xs[k] @ d_xs[k] + g_xa[k] @ d_xa[k]
               + g_us[k] @ d_us[k] + g_ua[k] @ d_ua[k])
        d_lam[k] = -(t_inv_all[k] @ rhs)
        d_xs[k + 1] = (a_s[k] @ d_xs[k] + b_s[k] @ d_us[k]
                       + c_s[k] @ d_lam[k] + r_s[k])
        d_xa[k + 1] = (a_a[k] @ d_xa[k] + b_a[k] @ d_ua[k]
                       + c_a[k] @ d_lam[k] + r_a[k])
    return d_xs, d_us, d_xa, d_ua, d_lam


@njit
def kkt_residual_kernel(a_s, b_s, c_s, r_s, a_a, b_a, c_a, r_a, phi,
                        g_xs, g_xa, g_us, g_ua, g_lam,
                        xs, us, xa, ua, lam, ref_xs, ref_xa,
                        q_srb, p_srb, r_srb, q_arm, p_arm, r_arm, r_int,
                        flags, cols_pad, n_cols, mu, f_min, f_max, in_duals):
    """Adjoint-recursion KKT residual (scaled stationarity + primal)."""
    n = us.shape[0]
    nu_s = np.zeros((n + 1, 12))
    nu_a = np.zeros((n + 1, 20))
    mu_duals = np.zeros((n, 6))
    for i in range(12):
        nu_s[n, i] = -p_srb[i] * (xs[n, i] - ref_xs[n, i])
    for i in range(20):
        nu_a[n, i] = -p_arm[i] * (xa[n, i] - ref_xa[n, i])
    for k in range(n - 1, -1, -1):
        rhs = c_s[k].T @ nu_s[k + 1] + c_a[k].T @ nu_a[k + 1] - r_int * lam[k]
        mu_duals[k] = np.linalg.solve(np.ascontiguousarray(g_lam[k].T), rhs)
        if k == 0:
            break
        nu_s[k] = (a_s[k].T @ nu_s[k + 1] - g_xs[k].T @ mu_duals[k])
        nu_a[k] = (a_a[k].T @ nu_a[k + 1] - g_xa[k].T @ mu_duals[k])
        for i in range(12):
            nu_s[k, i] -= q_srb[i] * (xs[k, i] - ref_xs[k, i])
        for i in range(20):
            nu_a[k, i] -= q_arm[i] * (xa[k, i] - ref_xa[k, i])
    stat = 0.0
    scale = 1.0
    row_ptr = 0
    for k in range(n):
        res_u = r_srb * us[k] - b_s[k].T @ nu_s[k + 1] + g_us[k].T @ mu_duals[k]
        bs_nu = b_s[k].T @ nu_s[k + 1]
        for l in range(4):
            if not flags[k, l]:
                continue
            d0 = in_duals[row_ptr]
            d1 = in_duals[row_ptr + 1]
            d2 = in_duals[row_ptr + 2]
            d3 = in_duals[row_ptr + 3]
            d4 = in_duals[row_ptr + 4]
            res_u[3 * l] += d0 + d1
            res_u[3 * l + 1] += d2 + d3
            res_u[3 * l + 2] += -mu * d0 + mu * d1 - mu * d2 + mu * d3 + d4
            row_ptr += 5
        res_ua = r_arm * ua[k] - b_a[k].T @ nu_a[k + 1] + g_ua[k].T @ mu_duals[k]
        for j in range(4):
            res_ua[j] += in_duals[row_ptr + j]
        row_ptr += 4
        for ci in range(n_cols[k]):
            v = abs(res_u[cols_pad[k, ci]])
            if v > stat:
                stat = v
        for j in range(4):
            if abs(res_ua[j]) > stat:
                stat = abs(res_ua[j])
        for i in range(12):
            if abs(r_srb[i] * us[k, i]) > scale:
                scale = abs(r_srb[i] * us[k, i])
            if abs(bs_nu[i]) > scale:
                scale = abs(bs_nu[i])
        for i in range(6):
            if abs(r_int[i] * lam[k, i]) > scale:
                scale = abs(r_int[i] * lam[k, i])
    max_dyn = 0.0
    for k in range(n):
        for i in range(12):
            if abs(r_s[k, i]) > max_dyn:
                max_dyn = abs(r_s[k, i])
        for i in range(20):
            if abs(r_a[k, i]) > max_dyn:
                max_dyn = abs(r_a[k, i])
    max_phi = 0.0
    pyr = 0.0
    for k in range(n):
        for i in range(6):
            if abs(phi[k, i]) > max_phi:
                max_phi = abs(phi[k, i])
        for l in range(4):
            if flags[k, l]:
                fx_v = us[k, 3 * l]
                fy_v = us[k, 3 * l + 1]
                fz_v = us[k, 3 * l + 2]
                for v in (abs(fx_v) - mu * fz_v, abs(fy_v) - mu * fz_v,
                          f_min - fz_v, fz_v - f_max):
                    if v > pyr:
                        pyr = v
    out = stat / scale
    if max_dyn > out:
        out = max_dyn
    if max_phi > out:
        out = max_phi
    if pyr > out:
        out = pyr
    return out


@njit
def trajectory_cost_kernel(xs, us, xa, ua, lam, ref_xs, ref_xa,
                           q_srb, p_srb, r_srb, q_arm, p_arm, r_arm, r_int):
    n = us.shape[0]
    j = 0.0
    for k in range(n):
        for i in range(12):
            e = xs[k, i] - ref_xs[k, i]
            j += q_srb[i] * e * e + r_srb[i] * us[k, i] * us[k, i]
        for i in range(20):
            e = xa[k, i] - ref_xa[k, i]
            j += q_arm[i] * e * e
        for i in range(4):
            j += r_arm[i] * ua[k, i] * ua[k, i]
        for i in range(6):
            j += r_int[i] * lam[k, i] * lam[k, i]
    for i in range(12):
        e = xs[n, i] - ref_xs[n, i]
        j += p_srb[i] * e * e
    for i in range(20):
        e = xa[n, i] - ref_xa[n, i]
        j += p_arm[i] * e * e
    return j


@njit
def _srb_accels(x, grf, lam, feet, mass, i_body, g0, d_mount):
    """(pddot, omdot, rot, a_map, a_parts) without Jacobians."""
    p = x[:3]
    omega = x[9:12]
    theta = x[6:9]
    rot = euler_to_rotation(theta)
    a_map = _euler_rate_map(theta)
    a_parts = euler_rate_map_partials(theta)
    w = rot @ i_body @ rot.T
    r_int = rot @ d_mount
    f_int = lam[:3]
    f_net = f_int.copy()
    tau_net = lam[3:6] + _cross(r_int, f_int)
    for l in range(4):
        f_net = f_net + grf[3 * l:3 * l + 3]
        tau_net = tau_net + _cross(feet[l] - p, grf[3 * l:3 * l + 3])
    pddot = f_net / mass - g0
    omdot = np.linalg.solve(w, tau_net - _cross(omega, w @ omega))
    return pddot, omdot, rot, a_map, a_parts


@njit
def _frozen_arm_accel(q, u, lam, d_inv, jtype, axes, t_local, mass, com_local,
                      inertia_local, g_vec, perm):
    """Frozen-model qdd only (no gradients)."""
    g_q = _gravity_q(q, jtype, axes, t_local, mass, com_local, inertia_local,
                     g_vec, perm)
    b_eul = _euler_rate_map_inv(q[3:6])
    rhs = -g_q
    for j in range(4):
        rhs[6 + j] += u[j]
    rhs[0] -= lam[0]
    rhs[1] -= lam[1]
    rhs[2] -= lam[2]
    bt_tau = b_eul.T @ lam[3:6]
    rhs[3] -= bt_tau[0]
    rhs[4] -= bt_tau[1]
    rhs[5] -= bt_tau[2]
    return d_inv @ rhs


@njit
def merit_defects(xs, us, xa, ua, lam, feet, ts,
                  mass, i_body, g0, d_mount, d_inv,
                  jtype, axes, t_local, a_mass, com_local, inertia_local,
                  g_vec, perm):
    """(l1 sum, max dynamics defect, max phi_ddot) of a candidate point."""
    n = us.shape[0]
    total = 0.0
    max_dyn = 0.0
    max_phi = 0.0
    for k in range(n):
        pddot, omdot, rot, a_map, a_parts = _srb_accels(
            xs[k], us[k], lam[k], feet[k], mass, i_body, g0, d_mount)
        omega = xs[k, 9:12]
        d = xs[k, 0:3] + ts * xs[k, 3:6] - xs[k + 1, 0:3]
        dv = xs[k, 3:6] + ts * pddot - xs[k + 1, 3:6]
        dth = xs[k, 6:9] + ts * (a_map @ omega) - xs[k + 1, 6:9]
        dom = xs[k, 9:12] + ts * omdot - xs[k + 1, 9:12]
        for i in range(3):
            for v in (d[i], dv[i], dth[i], dom[i]):
                total += abs(v)
                if abs(v) > max_dyn:
                    max_dyn = abs(v)
        q = xa[k, :10]
        qdd = _frozen_arm_accel(q, ua[k], lam[k], d_inv, jtype, axes, t_local,
                                a_mass, com_local, inertia_local, g_vec, perm)
        for i in range(10):
            da = xa[k, i] + ts * xa[k, 10 + i] - xa[k + 1, i]
            total += abs(da)
            if abs(da) > max_dyn:
                max_dyn = abs(da)
            d2 = xa[k, 10 + i] + ts * qdd[i] - xa[k + 1, 10 + i]
            total += abs(d2)
            if abs(d2) > max_dyn:
                max_dyn = abs(d2)
        rd = rot @ d_mount
        m2 = np.empty((3, 3))
        for i in range(3):
            m2[:, i] = a_parts[i] @ omega
        phi_pos = pddot + _cross(omdot, rd) + _cross(omega, _cross(omega, rd)) - qdd[:3]
        phi_ang = a_map @ omdot + m2 @ (a_map @ omega) - qdd[3:6]
        for i in range(3):
            total += abs(phi_pos[i]) + abs(phi_ang[i])
            if abs(phi_pos[i]) > max_phi:
                max_phi = abs(phi_pos[i])
            if abs(phi_ang[i]) > max_phi:
                max_phi = abs(phi_ang[i])
    return total, max_dyn, max_phi
