"""NMPC assembly, references, cost, SQP solve, and command extraction."""

import numpy as np
import pytest

from locoman.arm import ArmModel
from locoman.config import load_arm, load_controller, load_robot
from locoman.coupling import (
    CouplingParams,
    consistent_arm_base,
    solve_static_interaction,
    static_arm_torques,
)
from locoman.errors import DimensionMismatch
from locoman.gait import GaitSchedule, contact_flags, predicted_contact_sequence
from locoman.nmpc import (
    NmpcController,
    NmpcProblem,
    ReferenceCommand,
    assemble_nlp,
    build_reference,
    trajectory_cost,
)


@pytest.fixture(scope="module")
def stack():
    robot = load_robot()
    ctrl = load_controller()
    arm = ArmModel(load_arm())
    return robot, ctrl, arm


def _standing_state(robot):
    x_srb = np.zeros(12)
    x_srb[2] = 0.28
    cp = CouplingParams.from_srb(robot.srb)
    p_b, th_b, vb, thd_b = consistent_arm_base(x_srb, cp)
    q_s = np.array([0.0, 0.4, -0.8, 0.3])
    x_arm = np.concatenate([p_b, th_b, q_s, np.zeros(10)])
    return x_srb, x_arm, q_s


def _feet():
    return np.array(
        [[0.1934, 0.142, 0.0], [0.1934, -0.142, 0.0],
         [-0.1934, 0.142, 0.0], [-0.1934, -0.142, 0.0]]
    )


def _problem(stack, n=None, standing=True, t=0.0):
    robot, ctrl, arm = stack
    if n is not None:
        ctrl = load_controller({"nmpc": {"horizon": n},
                                "gait": {"standing_mode": standing}})
    else:
        ctrl = load_controller({"gait": {"standing_mode": standing}})
    nc = NmpcController(robot, arm, ctrl)
    x_srb, x_arm, q_s = _standing_state(robot)
    cmd = ReferenceCommand(arm_q=q_s)
    schedule = nc.schedule_for(cmd)
    cfg = ctrl.nmpc
    flags_now = contact_flags(schedule, t)
    flags_seq = predicted_contact_sequence(schedule, t, cfg.horizon, cfg.ts)
    refs = build_reference(cmd, x_srb, x_arm, ctrl, nc.coupling_params)
    footholds = nc.plan_footholds(t, x_srb, _feet(), flags_now, flags_seq,
                                  refs, schedule)
    frozen = arm.frozen(x_arm)
    prob = assemble_nlp(x_srb, x_arm, flags_seq, footholds, refs, frozen,
                        robot.srb, nc.coupling_params, cfg)
    return prob, nc, x_srb, x_arm, cmd


# --- reference builder --------------------------------------------------------


def test_reference_zero_commands_constant(stack):
    robot, ctrl, arm = stack
    x_srb, x_arm, _ = _standing_state(robot)
    refs = build_reference(ReferenceCommand(), x_srb, x_arm, ctrl,
                           CouplingParams.from_srb(robot.srb))
    for k in range(ctrl.nmpc.horizon + 1):
        np.testing.assert_allclose(refs.x_srb[k, :3], [0.0, 0.0, 0.28], atol=1e-12)
        np.testing.assert_allclose(refs.x_srb[k, 3:6], np.zeros(3), atol=1e-12)


def test_reference_forward_speed_integration(stack):
    robot, ctrl, arm = stack
    x_srb, x_arm, _ = _standing_state(robot)
    refs = build_reference(ReferenceCommand(vx=0.5), x_srb, x_arm, ctrl,
                           CouplingParams.from_srb(robot.srb))
    dx = np.diff(refs.x_srb[:, 0])
    np.testing.assert_allclose(dx, 0.5 * ctrl.nmpc.ts, atol=1e-12)


def test_reference_yaw_rate_rotation_oracle(stack):
    """Heading-frame velocity rotated into world: slope matches the
    closed-form integration of the commanded heading."""
    robot, ctrl, arm = stack
    x_srb, x_arm, _ = _standing_state(robot)
    wz, vx = 0.8, 0.5
    refs = build_reference(ReferenceCommand(vx=vx, yaw_rate=wz), x_srb, x_arm,
                           ctrl, CouplingParams.from_srb(robot.srb))
    ts = ctrl.nmpc.ts
    yaw = 0.0
    pos = np.array([0.0, 0.0])
    for k in range(ctrl.nmpc.horizon + 1):
        np.testing.assert_allclose(refs.x_srb[k, :2], pos, atol=1e-12)
        np.testing.assert_allclose(
            refs.x_srb[k, 3:5], [vx * np.cos(yaw), vx * np.sin(yaw)], atol=1e-12
        )
        pos = pos + ts * np.array([vx * np.cos(yaw), vx * np.sin(yaw)])
        yaw += ts * wz


def test_reference_command_clamping(stack):
    robot, ctrl, arm = stack
    x_srb, x_arm, _ = _standing_state(robot)
    refs = build_reference(ReferenceCommand(vx=10.0), x_srb, x_arm, ctrl,
                           CouplingParams.from_srb(robot.srb))
    assert abs(refs.x_srb[1, 3]) <= ctrl.reference.max_speed + 1e-12


# --- cost ---------------------------------------------------------------------


def test_cost_zero_on_reference(stack):
    prob, *_ = _problem(stack)
    n = prob.n
    xs = prob.refs.x_srb.copy()
    xa = prob.refs.x_arm.copy()
    us = np.zeros((n, 12))
    ua = np.zeros((n, 4))
    lam = np.zeros((n, 6))
    assert trajectory_cost(xs, us, xa, ua, lam, prob.refs,
                           prob.config.weights) == 0.0


def test_cost_single_interaction_force_unit(stack):
    """1 N interaction force at one step adds exactly 500 to the cost."""
    prob, *_ = _problem(stack)
    n = prob.n
    xs = prob.refs.x_srb.copy()
    xa = prob.refs.x_arm.copy()
    us = np.zeros((n, 12))
    ua = np.zeros((n, 4))
    lam = np.zeros((n, 6))
    base = trajectory_cost(xs, us, xa, ua, lam, prob.refs, prob.config.weights)
    lam[3, 0] = 1.0
    assert trajectory_cost(xs, us, xa, ua, lam, prob.refs,
                           prob.config.weights) - base == pytest.approx(500.0)


def test_cost_matches_term_summation_oracle(stack, rng):
    prob, *_ = _problem(stack)
    n = prob.n
    w = prob.config.weights
    xs = prob.refs.x_srb + 0.01 * rng.normal(size=(n + 1, 12))
    xa = prob.refs.x_arm + 0.01 * rng.normal(size=(n + 1, 20))
    us = rng.normal(size=(n, 12))
    ua = rng.normal(size=(n, 4))
    lam = rng.normal(size=(n, 6))
    expect = 0.0
    for k in range(n):
        e = xs[k] - prob.refs.x_srb[k]
        expect += float(np.sum(w.q_srb * e * e)) + float(np.sum(w.r_srb * us[k] ** 2))
        e = xa[k] - prob.refs.x_arm[k]
        expect += float(np.sum(w.q_arm * e * e)) + float(np.sum(w.r_arm * ua[k] ** 2))
        expect += float(np.sum(w.r_int * lam[k] ** 2))
    e = xs[n] - prob.refs.x_srb[n]
    expect += float(np.sum(w.p_srb * e * e))
    e = xa[n] - prob.refs.x_arm[n]
    expect += float(np.sum(w.p_arm * e * e))
    got = trajectory_cost(xs, us, xa, ua, lam, prob.refs, w)
    assert got == pytest.approx(expect, rel=1e-12)


# --- NLP assembly -----------------------------------------------------------------


def test_decision_vector_count_464(stack):
    prob, *_ = _problem(stack)
    assert prob.n == 8
    assert prob.n_vars == 464


@pytest.mark.parametrize("n", [1, 3, 5, 12])
def test_decision_vector_formula(stack, n):
    prob, *_ = _problem(stack, n=n)
    assert prob.n_vars == 54 * n + 32


def test_all_stance_has_no_selection_rows(stack):
    prob, *_ = _problem(stack, standing=True)
    assert all(e.shape[0] == 0 for e in prob.e_mats)


def test_trot_has_selection_rows(stack):
    prob, *_ = _problem(stack, standing=False)
    assert all(e.shape[0] == 6 for e in prob.e_mats)


def test_dimension_mismatch_raises(stack):
    prob, nc, x_srb, x_arm, cmd = _problem(stack)
    with pytest.raises(DimensionMismatch):
        NmpcProblem(x_srb, x_arm, prob.flags_seq[:4], prob.footholds,
                    prob.refs, prob.frozen_arm, nc.robot.srb,
                    nc.coupling_params, prob.config)
    with pytest.raises(DimensionMismatch):
        NmpcProblem(x_srb, x_arm, prob.flags_seq, prob.footholds[:3],
                    prob.refs, prob.frozen_arm, nc.robot.srb,
                    nc.coupling_params, prob.config)


def test_constraint_jacobian_matches_fd(stack, rng):
    """Full-space equality Jacobian vs central differences (<= 1e-5 rel)."""
    prob, nc, x_srb, x_arm, cmd = _problem(stack, standing=False)
    n = prob.n
    xs = np.tile(x_srb, (n + 1, 1)) + 0.01 * rng.normal(size=(n + 1, 12))
    xs[0] = x_srb
    xa = np.tile(x_arm, (n + 1, 1)) + 0.01 * rng.normal(size=(n + 1, 20))
    xa[0] = x_arm
    us = 20 * rng.normal(size=(n, 12))
    ua = rng.normal(size=(n, 4))
    lam = rng.normal(size=(n, 6))
    z = prob.pack(xs, us, xa, ua, lam)
    jac = prob.equality_jacobian(z)
    h = 1e-6
    scale = max(1.0, np.max(np.abs(jac)))
    idx = rng.choice(prob.n_vars, size=60, replace=False)
    for i in idx:
        dz = np.zeros(prob.n_vars)
        dz[i] = h
        fd = (prob.equality_constraints(z + dz)
              - prob.equality_constraints(z - dz)) / (2 * h)
        np.testing.assert_allclose(jac[:, i], fd, atol=1e-5 * scale,
                                   err_msg=f"column {i}")


# --- SQP solve -------------------------------------------------------------------


def test_solve_converges_and_satisfies_constraints(stack):
    prob, nc, x_srb, x_arm, cmd = _problem(stack)
    sol = nc.solve_cycle(0.0, x_srb, x_arm, cmd, _feet())
    assert sol.status == "Optimal"
    assert sol.iterations <= prob.config.max_iterations
    assert sol.violations["dynamics_defect"] <= 1e-4
    assert sol.violations["phi_ddot"] <= 1e-4
    assert sol.violations["pyramid_violation"] <= 1e-6
    assert sol.violations["selection_violation"] == 0.0


def test_initialized_at_optimum_one_iteration(stack):
    """Solver initialized at a feasible optimum: one iteration, zero step."""
    robot, _, arm = stack
    ctrl = load_controller({"gait": {"standing_mode": True}})
    nc = NmpcController(robot, arm, ctrl)
    x_srb, x_arm, q_s = _standing_state(robot)
    cmd = ReferenceCommand(arm_q=q_s)
    first = nc.solve_cycle(0.0, x_srb, x_arm, cmd, _feet())
    assert first.kkt_residual <= ctrl.nmpc.kkt_tol

    prob, nc2, *_ = _problem(stack)
    nc2.solver.qp_warm = nc.solver.qp_warm  # multipliers from the solve
    again = nc2.solver.solve(prob, first.xs, first.us, first.xa, first.ua,
                             first.lam)
    assert again.iterations == 1
    np.testing.assert_allclose(again.us, first.us, atol=1e-12)
    np.testing.assert_allclose(again.xs, first.xs, atol=1e-12)


def test_kkt_trace_monotone_on_accepted_steps(stack):
    prob, nc, x_srb, x_arm, cmd = _problem(stack)
    sol = nc.solve_cycle(0.0, x_srb, x_arm, cmd, _feet())
    trace = sol.kkt_trace
    for a, b in zip(trace, trace[1:]):
        assert b <= a * 1.0 + 1e-12


def test_solve_determinism(stack):
    robot, _, arm = stack
    ctrl = load_controller()
    x_srb, x_arm, q_s = _standing_state(robot)
    cmd = ReferenceCommand(vx=0.3, arm_q=q_s)
    outs = []
    for _ in range(2):
        nc = NmpcController(robot, ArmModel(load_arm()), ctrl)
        sol = nc.solve_cycle(0.0, x_srb, x_arm, cmd, _feet())
        sol2 = nc.solve_cycle(ctrl.nmpc.ts, x_srb, x_arm, cmd, _feet())
        outs.append((sol.us.copy(), sol.lam.copy(), sol2.us.copy()))
    np.testing.assert_array_equal(outs[0][0], outs[1][0])
    np.testing.assert_array_equal(outs[0][1], outs[1][1])
    np.testing.assert_array_equal(outs[0][2], outs[1][2])


def test_commands_passthrough_and_limits(stack):
    robot, _, arm = stack
    ctrl = load_controller()  # trot
    nc = NmpcController(robot, arm, ctrl)
    x_srb, x_arm, q_s = _standing_state(robot)
    cmd = ReferenceCommand(vx=0.3, arm_q=q_s)
    sol = nc.solve_cycle(0.0, x_srb, x_arm, cmd, _feet())
    u_arm, x_next, grf = sol.commands()
    np.testing.assert_array_equal(u_arm, sol.ua[0])
    np.testing.assert_array_equal(x_next, sol.xs[1])
    np.testing.assert_array_equal(grf, sol.us[0])
    # swing feet of the first step carry exactly zero force
    flags = sol and nc.prev_flags[0]
    for l in range(4):
        if not flags[l]:
            np.testing.assert_array_equal(grf[3 * l:3 * l + 3], np.zeros(3))
    assert np.all(np.abs(u_arm) <= arm.params.torque_limit + 1e-9)


def test_static_fixed_point_matches_oracle(stack):
    """Iterating solve -> coupled plant step settles onto a stand whose
    first-step GRFs sum to the total weight and whose interaction wrench
    matches the static oracle within 1%."""
    from locoman.coupling import solve_plant_interaction
    from locoman import srb as srb_mod

    robot, _, arm = stack
    ctrl = load_controller({"gait": {"standing_mode": True}})
    nc = NmpcController(robot, arm, ctrl)
    cp = nc.coupling_params
    x_srb, x_arm, q_s = _standing_state(robot)
    feet = _feet()
    cmd = ReferenceCommand(arm_q=q_s)
    ts = ctrl.nmpc.ts

    def coupled_step(x_srb, x_arm, grf, u_arm, dt, nsub=2):
        for _ in range(nsub):
            h = dt / nsub

            def deriv(xs, xa):
                lm = solve_plant_interaction(xs, xa, grf, u_arm, cp,
                                             robot.srb, arm, feet)
                return (srb_mod.srb_derivative(xs, grf, lm, feet, robot.srb),
                        arm.continuous_dynamics(xa, u_arm, lm))

            k1s, k1a = deriv(x_srb, x_arm)
            k2s, k2a = deriv(x_srb + 0.5 * h * k1s, x_arm + 0.5 * h * k1a)
            k3s, k3a = deriv(x_srb + 0.5 * h * k2s, x_arm + 0.5 * h * k2a)
            k4s, k4a = deriv(x_srb + h * k3s, x_arm + h * k3a)
            x_srb = x_srb + h / 6 * (k1s + 2 * k2s + 2 * k3s + k4s)
            x_arm = x_arm + h / 6 * (k1a + 2 * k2a + 2 * k3a + k4a)
        return x_srb, x_arm

    for i in range(90):
        sol = nc.solve_cycle(i * ts, x_srb, x_arm, cmd, feet)
        u_arm0, _, grf0 = sol.commands()
        x_srb, x_arm = coupled_step(x_srb, x_arm, grf0, u_arm0, ts)

    total_w = (robot.srb.mass + arm.params.total_mass) * 9.81
    assert abs(grf0[2::3].sum() - total_w) / total_w <= 0.01
    lam_static = solve_static_interaction(x_srb, x_arm, cp, robot.srb, arm)
    denom = np.max(np.abs(lam_static))
    assert np.max(np.abs(sol.lam[0] - lam_static)) / denom <= 0.01
