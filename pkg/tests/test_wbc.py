"""WBC QP, Raibert footholds, swing trajectories, and leg kinematics."""

import numpy as np
import pytest

from locoman import legs as leg_kin
from locoman import srb as srb_mod
from locoman import wbc
from locoman.config import load_arm, load_controller, load_robot
from locoman.errors import QpFailure
from locoman.gait import GaitSchedule


@pytest.fixture(scope="module")
def setup():
    robot = load_robot()
    ctrl = load_controller()
    return robot, ctrl


def _feet():
    return np.array(
        [[0.1934, 0.142, 0.0], [0.1934, -0.142, 0.0],
         [-0.1934, 0.142, 0.0], [-0.1934, -0.142, 0.0]]
    )


def _static_fdes(robot, x_srb, lam, feet, flags):
    """Solve stance GRFs balancing gravity + interaction wrench."""
    cols = []
    stance = [l for l in range(4) if flags[l]]
    for l in stance:
        for a in range(3):
            g = np.zeros((4, 3))
            g[l, a] = 1.0
            f0, t0 = srb_mod.net_wrench(
                g, srb_mod.foot_lever_arms(x_srb[:3], feet), np.zeros(6),
                robot.srb, x_srb[6:9])
            cols.append(np.concatenate([f0, t0]))
    fl, tl = srb_mod.net_wrench(
        np.zeros((4, 3)), srb_mod.foot_lever_arms(x_srb[:3], feet), lam,
        robot.srb, x_srb[6:9])
    target = np.concatenate([robot.srb.mass * robot.srb.gravity, np.zeros(3)])
    target -= np.concatenate([fl, tl])
    sol, *_ = np.linalg.lstsq(np.array(cols).T, target, rcond=None)
    f_des = np.zeros((4, 3))
    for i, l in enumerate(stance):
        f_des[l] = sol[3 * i:3 * i + 3]
    return f_des


# --- Raibert ---------------------------------------------------------------------


def test_raibert_at_rest_under_hip():
    hip = np.array([0.2, 0.1, 0.31])
    out = wbc.raibert_foothold(hip, np.zeros(3), np.zeros(3), 0.1, 0.03)
    np.testing.assert_allclose(out, [0.2, 0.1, 0.0], atol=1e-15)


def test_raibert_feedforward_arithmetic():
    """v = v_ref = 0.5 m/s, T_stance = 0.1 s: 0.025 m ahead of the hip."""
    hip = np.array([0.0, 0.0, 0.3])
    out = wbc.raibert_foothold(hip, [0.5, 0, 0], [0.5, 0, 0], 0.1, 0.03)
    np.testing.assert_allclose(out, [0.025, 0.0, 0.0], atol=1e-15)


def test_raibert_overspeed_monotone():
    hip = np.zeros(3)
    base = wbc.raibert_foothold(hip, [0.5, 0, 0], [0.5, 0, 0], 0.1, 0.03)
    over = wbc.raibert_foothold(hip, [0.7, 0, 0], [0.5, 0, 0], 0.1, 0.03)
    assert over[0] > base[0]


# --- swing trajectory --------------------------------------------------------------


def test_swing_endpoints_exact():
    p0 = np.array([0.1, 0.0, 0.03])
    p1 = np.array([0.2, 0.05, 0.0])
    pos0, vel0, _ = wbc.swing_trajectory(p0, p1, 0.08, 0.0, 0.1)
    pos1, vel1, _ = wbc.swing_trajectory(p0, p1, 0.08, 1.0, 0.1)
    np.testing.assert_allclose(pos0, p0, atol=1e-14)
    np.testing.assert_allclose(pos1, p1, atol=1e-14)
    assert abs(vel0[2]) < 1e-12 and abs(vel1[2]) < 1e-12


def test_swing_apex_height():
    p0 = np.zeros(3)
    p1 = np.array([0.05, 0.0, 0.0])
    apex = 0.08
    zmax = max(
        wbc.swing_trajectory(p0, p1, apex, s, 0.1)[0][2]
        for s in np.linspace(0, 1, 201)
    )
    assert abs(zmax - apex) <= 0.05 * apex


def test_swing_velocity_consistent_with_position():
    p0 = np.array([0.0, 0.0, 0.02])
    p1 = np.array([0.06, -0.01, 0.0])
    duration = 0.1
    h = 1e-6
    for s in (0.2, 0.5, 0.8):
        pp, _, _ = wbc.swing_trajectory(p0, p1, 0.08, s + h, duration)
        pm, _, _ = wbc.swing_trajectory(p0, p1, 0.08, s - h, duration)
        _, vel, _ = wbc.swing_trajectory(p0, p1, 0.08, s, duration)
        np.testing.assert_allclose(vel, (pp - pm) / (2 * h) / duration, atol=1e-6)


# --- output vector ---------------------------------------------------------------


def test_output_zero_on_perfect_tracking():
    x = np.zeros(12)
    x[2] = 0.28
    out = wbc.output_vector(x, x)
    assert np.all(out.stacked() == 0.0)
    assert np.all(out.stacked_rate() == 0.0)


def test_output_single_offset():
    x = np.zeros(12)
    x[2] = 0.28
    xd = x.copy()
    x[0] += 0.013
    out = wbc.output_vector(x, xd)
    stacked = out.stacked()
    assert stacked[0] == pytest.approx(0.013)
    assert np.all(stacked[1:] == 0.0)


def test_output_rate_matches_fd(setup, rng):
    """Finite difference of y along a simulated SRB flow matches y_dot."""
    robot, ctrl = setup
    x = np.zeros(12)
    x[:3] = (0.02, -0.01, 0.29)
    x[3:6] = (0.2, 0.05, -0.02)
    x[6:9] = (0.05, -0.04, 0.2)
    x[9:12] = (0.1, -0.2, 0.15)
    xd_state = np.zeros(12)
    xd_state[2] = 0.28
    feet = _feet()
    grf = np.zeros((4, 3))
    grf[:, 2] = robot.srb.mass * 9.81 / 4
    f = lambda s: srb_mod.srb_derivative(s, grf, np.zeros(6), feet, robot.srb)
    h = 1e-6
    xp = x + h * f(x)
    xm = x - h * f(x)
    fd = (wbc.output_vector(xp, xd_state).stacked()
          - wbc.output_vector(xm, xd_state).stacked()) / (2 * h)
    np.testing.assert_allclose(wbc.output_vector(x, xd_state).stacked_rate(),
                               fd, atol=1e-6)


# --- leg kinematics ----------------------------------------------------------------


def test_leg_fk_ik_round_trip(setup, rng):
    robot, _ = setup
    legs = robot.legs
    for foot in range(4):
        for _ in range(50):
            q = np.array([rng.uniform(-0.5, 0.5), rng.uniform(-1.0, 1.0),
                          rng.uniform(-2.2, -0.3)])
            p = leg_kin.leg_fk(q, foot, legs)
            q2 = leg_kin.leg_ik(p, foot, legs)
            # near the fold boundary the abduction sqrt loses a few digits
            np.testing.assert_allclose(
                leg_kin.leg_fk(q2, foot, legs), p, atol=1e-6)


def test_leg_jacobian_fd(setup, rng):
    robot, _ = setup
    legs = robot.legs
    h = 1e-7
    for foot in range(4):
        q = np.array([0.1, 0.4, -1.2])
        jac = leg_kin.leg_jacobian_world(q, foot, legs, np.eye(3))
        for i in range(3):
            dq = np.zeros(3)
            dq[i] = h
            fd = (leg_kin.leg_fk(q + dq, foot, legs)
                  - leg_kin.leg_fk(q - dq, foot, legs)) / (2 * h)
            np.testing.assert_allclose(jac[:, i], fd, atol=1e-6)


# --- WBC QP -----------------------------------------------------------------------


def test_wbc_static_tracking(setup):
    """Static stance with a consistent f_des: delta ~ 0, f ~ f_des within
    1e-3 N, torques match the Jacobian-transpose oracle."""
    robot, ctrl = setup
    x = np.zeros(12)
    x[2] = 0.28
    feet = _feet()
    lam = np.array([0.0, 0.0, -43.16, 0.0, 2.78, 0.0])
    flags = np.array([True] * 4)
    f_des = _static_fdes(robot, x, lam, feet, flags)
    out = wbc.output_vector(x, x)
    sol, _ = wbc.solve_wbc(out, f_des, lam, flags, x, feet, robot.srb,
                           robot.legs, ctrl.wbc, mu=0.6)
    assert sol.status == "Optimal"
    np.testing.assert_allclose(sol.forces, f_des, atol=1e-3)
    assert np.max(np.abs(sol.delta)) <= 1e-3
    from locoman.mathcore import euler_to_rotation
    rot = euler_to_rotation(x[6:9])
    hips = robot.legs.hip_world(x[:3], rot)
    for l in range(4):
        q_leg = leg_kin.leg_ik(rot.T @ (feet[l] - hips[l]), l, robot.legs)
        expect = leg_kin.stance_torques(sol.forces[l], q_leg, l, robot.legs, rot)
        np.testing.assert_allclose(sol.torques[3 * l:3 * l + 3], expect,
                                   atol=1e-6)


def test_wbc_force_weight_dominance(setup):
    """With gamma_force large and feasible f_des, forces track f_des."""
    robot, ctrl = setup
    x = np.zeros(12)
    x[2] = 0.28
    feet = _feet()
    lam = np.zeros(6)
    flags = np.array([True, False, False, True])
    f_des = _static_fdes(robot, x, lam, feet, flags)
    out = wbc.output_vector(x, x)
    sol, _ = wbc.solve_wbc(out, f_des, lam, flags, x, feet, robot.srb,
                           robot.legs, ctrl.wbc, mu=0.6)
    err_hi = np.max(np.abs(sol.forces - f_des))

    from dataclasses import replace
    cfg_low = replace(ctrl.wbc, gamma_force=1e3)
    sol2, _ = wbc.solve_wbc(out, f_des, lam, flags, x, feet, robot.srb,
                            robot.legs, cfg_low, mu=0.6)
    err_lo = np.max(np.abs(sol2.forces - f_des))
    assert err_hi <= err_lo + 1e-9


def test_wbc_defect_absorbs_infeasible_demand(setup):
    """A tracking demand beyond torque limits is absorbed by delta while
    forces stay inside the pyramid and torques within limits."""
    robot, ctrl = setup
    x = np.zeros(12)
    x[2] = 0.28
    xd = x.copy()
    xd[0] = 5.0  # 5 m CoM error: K_P * y is far beyond actuation
    feet = _feet()
    flags = np.array([True] * 4)
    f_des = _static_fdes(robot, x, np.zeros(6), feet, flags)
    out = wbc.output_vector(x, xd)
    sol, _ = wbc.solve_wbc(out, f_des, np.zeros(6), flags, x, feet, robot.srb,
                           robot.legs, ctrl.wbc, mu=0.6)
    assert sol.status == "Optimal"
    assert np.max(np.abs(sol.delta)) > 1.0
    mu = 0.6
    for l in range(4):
        f = sol.forces[l]
        assert abs(f[0]) <= mu * f[2] + 1e-6
        assert abs(f[1]) <= mu * f[2] + 1e-6
        assert f[2] >= -1e-9
    assert np.max(np.abs(sol.torques)) <= robot.legs.torque_limit + 1e-6


def test_wbc_no_stance_raises(setup):
    robot, ctrl = setup
    x = np.zeros(12)
    x[2] = 0.28
    out = wbc.output_vector(x, x)
    with pytest.raises(QpFailure):
        wbc.solve_wbc(out, np.zeros((4, 3)), np.zeros(6), [False] * 4, x,
                      _feet(), robot.srb, robot.legs, ctrl.wbc, mu=0.6)


# --- foot planner ------------------------------------------------------------------


def test_foot_planner_stance_hold_and_swing(setup):
    robot, ctrl = setup
    schedule = GaitSchedule()
    planner = wbc.FootPlanner(schedule, robot.legs, ctrl.wbc, _feet())
    x = np.zeros(12)
    x[2] = 0.28
    x[3] = 0.3
    v_ref = np.array([0.3, 0.0, 0.0])
    out0 = planner.update(0.0, x, v_ref)
    assert out0[0][0] and out0[3][0]  # FL, RR stance at t=0
    assert not out0[1][0] and not out0[2][0]
    np.testing.assert_array_equal(out0[0][1], _feet()[0])
    # mid-swing: FR is airborne with positive height
    out = planner.update(0.05, x, v_ref)
    assert not out[1][0]
    assert out[1][1][2] > 0.01
    # after touchdown the foot is pinned and stationary
    out = planner.update(0.11, x, v_ref)
    assert out[1][0]
    np.testing.assert_array_equal(out[1][2], np.zeros(3))


def test_foot_planner_swing_continuity(setup):
    robot, ctrl = setup
    schedule = GaitSchedule()
    planner = wbc.FootPlanner(schedule, robot.legs, ctrl.wbc, _feet())
    x = np.zeros(12)
    x[2] = 0.28
    prev = None
    for t in np.arange(0.0, 0.1, 0.002):
        out = planner.update(float(t), x, np.zeros(3))
        pos = out[1][1]
        if prev is not None:
            assert np.linalg.norm(pos - prev) < 0.02
        prev = pos
