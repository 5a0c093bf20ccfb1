"""Fused solver kernels against the reference implementations.

The numpy-level functions in srb.py / coupling.py / arm.py are the
finite-difference-verified source of truth; the horizon kernels must
reproduce them exactly.
"""

import numpy as np
import pytest

from locoman import fastpath as fp
from locoman.arm import ArmModel
from locoman.config import load_arm, load_robot
from locoman.coupling import (
    CouplingParams,
    accel_residual_jacobians,
    consistent_arm_base,
    holonomic_accel_residual,
)
from locoman.srb import srb_discrete_step, srb_step_jacobians


@pytest.fixture(scope="module")
def stack():
    robot = load_robot()
    arm = ArmModel(load_arm())
    return robot, arm


def _random_traj(rng, robot, arm, n=4):
    cp = CouplingParams.from_srb(robot.srb)
    xs = np.zeros((n + 1, 12))
    xa = np.zeros((n + 1, 20))
    for k in range(n + 1):
        x = np.zeros(12)
        x[:3] = rng.uniform(-0.2, 0.2, 3) + (0, 0, 0.3)
        x[3:6] = 0.3 * rng.normal(size=3)
        x[6:9] = rng.uniform(-0.25, 0.25, 3)
        x[9:12] = 0.3 * rng.normal(size=3)
        xs[k] = x
        p_b, th_b, vb, thd_b = consistent_arm_base(x, cp)
        xa[k] = np.concatenate([
            p_b, th_b, rng.uniform(-1.0, 1.0, 4), vb, thd_b,
            0.2 * rng.normal(size=4),
        ])
    us = 20 * rng.normal(size=(n, 12))
    ua = rng.normal(size=(n, 4))
    lam = rng.normal(size=(n, 6)) * 5
    feet = np.zeros((n, 4, 3))
    base = np.array([[0.19, 0.14, 0], [0.19, -0.14, 0],
                     [-0.19, 0.14, 0], [-0.19, -0.14, 0]], float)
    for k in range(n):
        feet[k] = base + 0.02 * rng.normal(size=(4, 3))
    return xs, us, xa, ua, lam, feet


def test_horizon_linearize_matches_reference(stack, rng):
    robot, arm = stack
    n = 4
    ts = 1.0 / 60.0
    cp = CouplingParams.from_srb(robot.srb)
    xs, us, xa, ua, lam, feet = _random_traj(rng, robot, arm, n)
    frozen = arm.frozen(xa[0])
    pack = fp.arm_pack(arm)
    lin = fp.horizon_linearize(
        xs, us, xa, ua, lam, feet, ts,
        robot.srb.mass, robot.srb.inertia_body, robot.srb.gravity,
        robot.srb.mount_offset, frozen.d_inv, *pack)
    (a_s, b_s, c_s, r_s, a_a, b_a, c_a, r_a, phi,
     g_xs, g_xa, g_us, g_ua, g_lam) = lin

    for k in range(n):
        a_ref, b_ref, c_ref = srb_step_jacobians(
            xs[k], us[k], lam[k], ts, robot.srb, feet[k])
        np.testing.assert_allclose(a_s[k], a_ref, atol=1e-12)
        np.testing.assert_allclose(b_s[k], b_ref, atol=1e-12)
        np.testing.assert_allclose(c_s[k], c_ref, atol=1e-12)
        r_ref = srb_discrete_step(xs[k], us[k], lam[k], ts, robot.srb,
                                  feet[k]) - xs[k + 1]
        np.testing.assert_allclose(r_s[k], r_ref, atol=1e-12)

        step_ref = frozen.discrete_step(xa[k], ua[k], lam[k], ts)
        np.testing.assert_allclose(r_a[k], step_ref - xa[k + 1], atol=1e-10)

        val, j_xs, j_xa, j_us, j_ua, j_lam = accel_residual_jacobians(
            xs[k], xa[k], us[k], ua[k], lam[k], cp, robot.srb, frozen,
            feet[k])
        np.testing.assert_allclose(phi[k], val, atol=1e-10)
        np.testing.assert_allclose(g_xs[k], j_xs, atol=1e-10)
        np.testing.assert_allclose(g_xa[k], j_xa, atol=1e-10)
        np.testing.assert_allclose(g_us[k], j_us, atol=1e-12)
        np.testing.assert_allclose(g_ua[k], j_ua, atol=1e-12)
        np.testing.assert_allclose(g_lam[k], j_lam, atol=1e-10)


def test_arm_step_jacobians_match_reference(stack, rng):
    """Frozen-arm Euler-step Jacobians in the kernel vs finite differences."""
    robot, arm = stack
    ts = 1.0 / 60.0
    cp = CouplingParams.from_srb(robot.srb)
    xs, us, xa, ua, lam, feet = _random_traj(rng, robot, arm, 2)
    frozen = arm.frozen(xa[0])
    pack = fp.arm_pack(arm)
    lin = fp.horizon_linearize(
        xs[:3], us[:2], xa[:3], ua[:2], lam[:2], feet[:2], ts,
        robot.srb.mass, robot.srb.inertia_body, robot.srb.gravity,
        robot.srb.mount_offset, frozen.d_inv, *pack)
    a_a, b_a, c_a = lin[4], lin[5], lin[6]
    h = 1e-6
    k = 0
    step = lambda x, u, lm: frozen.discrete_step(x, u, lm, ts)
    for i in range(20):
        dx = np.zeros(20)
        dx[i] = h
        fd = (step(xa[k] + dx, ua[k], lam[k])
              - step(xa[k] - dx, ua[k], lam[k])) / (2 * h)
        np.testing.assert_allclose(a_a[k][:, i], fd, atol=2e-5)
    for i in range(4):
        du = np.zeros(4)
        du[i] = h
        fd = (step(xa[k], ua[k] + du, lam[k])
              - step(xa[k], ua[k] - du, lam[k])) / (2 * h)
        np.testing.assert_allclose(b_a[k][:, i], fd, atol=1e-8)
    for i in range(6):
        dl = np.zeros(6)
        dl[i] = h
        fd = (step(xa[k], ua[k], lam[k] + dl)
              - step(xa[k], ua[k], lam[k] - dl)) / (2 * h)
        np.testing.assert_allclose(c_a[k][:, i], fd, atol=1e-8)


def test_merit_defects_match_reference(stack, rng):
    robot, arm = stack
    n = 4
    ts = 1.0 / 60.0
    cp = CouplingParams.from_srb(robot.srb)
    xs, us, xa, ua, lam, feet = _random_traj(rng, robot, arm, n)
    frozen = arm.frozen(xa[0])
    pack = fp.arm_pack(arm)
    l1, max_dyn, max_phi = fp.merit_defects(
        xs, us, xa, ua, lam, feet, ts,
        robot.srb.mass, robot.srb.inertia_body, robot.srb.gravity,
        robot.srb.mount_offset, frozen.d_inv, *pack)
    total = 0.0
    dyn = 0.0
    phi_max = 0.0
    for k in range(n):
        d1 = srb_discrete_step(xs[k], us[k], lam[k], ts, robot.srb,
                               feet[k]) - xs[k + 1]
        d2 = frozen.discrete_step(xa[k], ua[k], lam[k], ts) - xa[k + 1]
        val = holonomic_accel_residual(xs[k], xa[k], us[k], ua[k], lam[k],
                                       cp, robot.srb, frozen, feet[k])
        total += np.sum(np.abs(d1)) + np.sum(np.abs(d2)) + np.sum(np.abs(val))
        dyn = max(dyn, np.max(np.abs(d1)), np.max(np.abs(d2)))
        phi_max = max(phi_max, np.max(np.abs(val)))
    assert l1 == pytest.approx(total, rel=1e-10)
    assert max_dyn == pytest.approx(dyn, rel=1e-10)
    assert max_phi == pytest.approx(phi_max, rel=1e-10)


def test_plant_derivative_consistent_with_components(stack, rng):
    """Plant kernel accelerations equal the component-wise evaluation with
    the lambda returned by the kernel."""
    from locoman import srb as srb_mod
    from locoman.plant import _plant_deriv

    robot, arm = stack
    cp = CouplingParams.from_srb(robot.srb)
    xs, us, xa, ua, lam, feet = _random_traj(rng, robot, arm, 1)
    pack = fp.arm_pack(arm)
    ds, da, lam_out, power = _plant_deriv(
        xs[0], xa[0], us[0], ua[0], np.zeros(3), np.zeros(3),
        arm.params.ee_offset, feet[0],
        robot.srb.mass, robot.srb.inertia_body, robot.srb.gravity,
        robot.srb.mount_offset, *pack)
    ds_ref = srb_mod.srb_derivative(xs[0], us[0], lam_out, feet[0], robot.srb)
    da_ref = arm.continuous_dynamics(xa[0], ua[0], lam_out)
    np.testing.assert_allclose(ds, ds_ref, atol=1e-10)
    np.testing.assert_allclose(da, da_ref, atol=1e-9)
