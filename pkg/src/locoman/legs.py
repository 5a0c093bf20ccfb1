"""3-DoF leg kinematics (hip roll, hip pitch, knee) for torque mapping.

Legs are massless in the reduced whole-body model; stance-leg torques are
recovered through the foot Jacobian transpose. Geometry is Go2-like and
lives in params/robot.yaml (estimated).
"""

import numpy as np

from .accel import njit
from .config import LegParams


@njit
def _leg_fk(q, abd, l2, l3):
    """Foot position relative to the hip origin, body axes."""
    s1, c1 = np.sin(q[0]), np.cos(q[0])
    xp = -l2 * np.sin(q[1]) - l3 * np.sin(q[1] + q[2])
    zp = -l2 * np.cos(q[1]) - l3 * np.cos(q[1] + q[2])
    return np.array([xp, abd * c1 - zp * s1, abd * s1 + zp * c1])


@njit
def _leg_jacobian(q, abd, l2, l3):
    """d foot / d q in body axes, 3x3."""
    s1, c1 = np.sin(q[0]), np.cos(q[0])
    s2, c2 = np.sin(q[1]), np.cos(q[1])
    s23, c23 = np.sin(q[1] + q[2]), np.cos(q[1] + q[2])
    xp = -l2 * s2 - l3 * s23
    zp = -l2 * c2 - l3 * c23
    jac = np.empty((3, 3))
    # hip roll rotates (abd, zp) in the y-z plane
    jac[0, 0] = 0.0
    jac[1, 0] = -abd * s1 - zp * c1
    jac[2, 0] = abd * c1 - zp * s1
    dx2 = -l2 * c2 - l3 * c23
    dz2 = l2 * s2 + l3 * s23
    jac[0, 1] = dx2
    jac[1, 1] = -dz2 * s1
    jac[2, 1] = dz2 * c1
    dx3 = -l3 * c23
    dz3 = l3 * s23
    jac[0, 2] = dx3
    jac[1, 2] = -dz3 * s1
    jac[2, 2] = dz3 * c1
    return jac


def leg_fk(q, foot, legs: LegParams):
    return _leg_fk(np.asarray(q, float), legs.side_sign(foot) * legs.abduction_offset,
                   legs.thigh_length, legs.calf_length)


def leg_ik(foot_rel_hip, foot, legs: LegParams):
    """Joint angles for a foot position relative to the hip (body axes).

    Out-of-reach targets are pulled onto the workspace boundary; knee bends
    backward (negative knee angle)."""
    x, y, z = (float(v) for v in np.asarray(foot_rel_hip, float))
    a = legs.side_sign(foot) * legs.abduction_offset
    l2, l3 = legs.thigh_length, legs.calf_length
    l_yz_sq = y * y + z * z
    min_yz = abs(a) + 1e-6
    if l_yz_sq < min_yz**2:
        l_yz_sq = min_yz**2
    zp = -np.sqrt(l_yz_sq - a * a)
    q1 = np.arctan2(z, y) - np.arctan2(zp, a)
    q1 = np.arctan2(np.sin(q1), np.cos(q1))
    u, v = -x, -zp
    r_sq = u * u + v * v
    r_max = (l2 + l3) ** 2 - 1e-9
    r_min = (l2 - l3) ** 2 + 1e-9
    r_sq = min(max(r_sq, r_min), r_max)
    cos_knee = (r_sq - l2 * l2 - l3 * l3) / (2.0 * l2 * l3)
    q3 = -np.arccos(np.clip(cos_knee, -1.0, 1.0))
    q2 = np.arctan2(u, v) - np.arctan2(l3 * np.sin(q3), l2 + l3 * np.cos(q3))
    return np.array([q1, q2, q3])


def leg_jacobian_world(q, foot, legs: LegParams, rot):
    """Foot Jacobian in world axes (body-fixed base)."""
    jb = _leg_jacobian(np.asarray(q, float),
                       legs.side_sign(foot) * legs.abduction_offset,
                       legs.thigh_length, legs.calf_length)
    return rot @ jb


def stance_torques(f_world, q, foot, legs: LegParams, rot):
    """tau = -J^T f for a stance leg carrying ground force f (world)."""
    return -leg_jacobian_world(q, foot, legs, rot).T @ np.asarray(f_world, float)
