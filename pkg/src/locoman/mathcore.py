"""Shared rigid-body math: rotations, Euler-rate mapping, skew operator.

Convention (used everywhere in this package): ZYX Euler angles
theta = (roll, pitch, yaw), composed as R = Rz(yaw) @ Ry(pitch) @ Rx(roll),
with angular velocity omega expressed in the WORLD frame. The Euler-rate map
A(theta) satisfies  theta_dot = A(theta) @ omega  and is singular at
pitch = +/-pi/2; callers stay outside a 1e-3 rad guard band.
"""

import numpy as np

from .accel import njit
from .errors import SingularOrientation

PITCH_GUARD = 1e-3  # rad distance from +/-pi/2 where A(theta) is trusted

_SX = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
_SY = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
_SZ = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


@njit
def skew(a):
    """3x3 matrix M with M @ b == cross(a, b)."""
    m = np.zeros((3, 3))
    m[0, 1] = -a[2]
    m[0, 2] = a[1]
    m[1, 0] = a[2]
    m[1, 2] = -a[0]
    m[2, 0] = -a[1]
    m[2, 1] = a[0]
    return m


@njit
def euler_to_rotation(theta):
    """World-from-body rotation for ZYX Euler angles (roll, pitch, yaw)."""
    cr, sr = np.cos(theta[0]), np.sin(theta[0])
    cp, sp = np.cos(theta[1]), np.sin(theta[1])
    cy, sy = np.cos(theta[2]), np.sin(theta[2])
    r = np.empty((3, 3))
    r[0, 0] = cy * cp
    r[0, 1] = cy * sp * sr - sy * cr
    r[0, 2] = cy * sp * cr + sy * sr
    r[1, 0] = sy * cp
    r[1, 1] = sy * sp * sr + cy * cr
    r[1, 2] = sy * sp * cr - cy * sr
    r[2, 0] = -sp
    r[2, 1] = cp * sr
    r[2, 2] = cp * cr
    return r


@njit
def rotation_to_euler(r):
    """Inverse of euler_to_rotation away from the pitch singularity."""
    pitch = np.arctan2(-r[2, 0], np.sqrt(r[0, 0] ** 2 + r[1, 0] ** 2))
    roll = np.arctan2(r[2, 1], r[2, 2])
    yaw = np.arctan2(r[1, 0], r[0, 0])
    out = np.empty(3)
    out[0] = roll
    out[1] = pitch
    out[2] = yaw
    return out


@njit
def _euler_rate_map(theta):
    cp, sp = np.cos(theta[1]), np.sin(theta[1])
    cy, sy = np.cos(theta[2]), np.sin(theta[2])
    tp = sp / cp
    a = np.empty((3, 3))
    a[0, 0] = cy / cp
    a[0, 1] = sy / cp
    a[0, 2] = 0.0
    a[1, 0] = -sy
    a[1, 1] = cy
    a[1, 2] = 0.0
    a[2, 0] = cy * tp
    a[2, 1] = sy * tp
    a[2, 2] = 1.0
    return a


@njit
def _euler_rate_map_inv(theta):
    # omega = B(theta) @ theta_dot; columns are the world-frame joint axes
    # of the virtual yaw-pitch-roll chain.
    cp, sp = np.cos(theta[1]), np.sin(theta[1])
    cy, sy = np.cos(theta[2]), np.sin(theta[2])
    b = np.empty((3, 3))
    b[0, 0] = cy * cp
    b[0, 1] = -sy
    b[0, 2] = 0.0
    b[1, 0] = sy * cp
    b[1, 1] = cy
    b[1, 2] = 0.0
    b[2, 0] = -sp
    b[2, 1] = 0.0
    b[2, 2] = 1.0
    return b


def _check_pitch(theta):
    if abs(abs(float(theta[1])) - np.pi / 2.0) < PITCH_GUARD:
        raise SingularOrientation(
            f"pitch {float(theta[1]):.6f} rad within {PITCH_GUARD} of +/-pi/2"
        )


def euler_rate_map(theta):
    """A(theta) with theta_dot = A @ omega_world. Raises near gimbal lock."""
    _check_pitch(theta)
    return _euler_rate_map(np.asarray(theta, dtype=float))


def euler_rate_map_inv(theta):
    """B(theta) = A(theta)^-1 with omega_world = B @ theta_dot."""
    _check_pitch(theta)
    return _euler_rate_map_inv(np.asarray(theta, dtype=float))


@njit
def world_inertia(i_body, theta):
    """Rotate a body-frame inertia tensor into the world frame."""
    r = euler_to_rotation(theta)
    return r @ i_body @ r.T


@njit
def rotation_partials(theta):
    """dR/dtheta_i stacked as a (3, 3, 3) array (index 0: roll/pitch/yaw)."""
    cr, sr = np.cos(theta[0]), np.sin(theta[0])
    cp, sp = np.cos(theta[1]), np.sin(theta[1])
    cy, sy = np.cos(theta[2]), np.sin(theta[2])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cr, -sr], [0.0, sr, cr]])
    ry = np.array([[cp, 0.0, sp], [0.0, 1.0, 0.0], [-sp, 0.0, cp]])
    rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    sx = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    sy_g = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    sz = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    out = np.empty((3, 3, 3))
    out[0] = rz @ ry @ rx @ sx
    out[1] = rz @ ry @ sy_g @ rx
    out[2] = sz @ rz @ ry @ rx
    return out


@njit
def euler_rate_map_partials(theta):
    """dA/dtheta_i stacked as (3, 3, 3); dA/droll is zero."""
    cp, sp = np.cos(theta[1]), np.sin(theta[1])
    cy, sy = np.cos(theta[2]), np.sin(theta[2])
    tp = sp / cp
    out = np.zeros((3, 3, 3))
    # d/dpitch
    out[1, 0, 0] = cy * sp / cp**2
    out[1, 0, 1] = sy * sp / cp**2
    out[1, 2, 0] = cy / cp**2
    out[1, 2, 1] = sy / cp**2
    # d/dyaw
    out[2, 0, 0] = -sy / cp
    out[2, 0, 1] = cy / cp
    out[2, 1, 0] = -cy
    out[2, 1, 1] = -sy
    out[2, 2, 0] = -sy * tp
    out[2, 2, 1] = cy * tp
    return out


@njit
def euler_rate_map_second_partials(theta):
    """d2A/dtheta_i dtheta_j as (3, 3, 3, 3); nonzero only for pitch/yaw."""
    cp, sp = np.cos(theta[1]), np.sin(theta[1])
    cy, sy = np.cos(theta[2]), np.sin(theta[2])
    tp = sp / cp
    out = np.zeros((3, 3, 3, 3))
    # pitch,pitch
    out[1, 1, 0, 0] = cy * (1.0 + sp**2) / cp**3
    out[1, 1, 0, 1] = sy * (1.0 + sp**2) / cp**3
    out[1, 1, 2, 0] = 2.0 * cy * sp / cp**3
    out[1, 1, 2, 1] = 2.0 * sy * sp / cp**3
    # pitch,yaw (symmetric)
    out[1, 2, 0, 0] = -sy * sp / cp**2
    out[1, 2, 0, 1] = cy * sp / cp**2
    out[1, 2, 2, 0] = -sy / cp**2
    out[1, 2, 2, 1] = cy / cp**2
    out[2, 1] = out[1, 2]
    # yaw,yaw
    out[2, 2, 0, 0] = -cy / cp
    out[2, 2, 0, 1] = -sy / cp
    out[2, 2, 1, 0] = sy
    out[2, 2, 1, 1] = -cy
    out[2, 2, 2, 0] = -cy * tp
    out[2, 2, 2, 1] = -sy * tp
    return out


@njit
def euler_rate_inv_partials(theta):
    """dB/dtheta_i stacked as (3, 3, 3) for B = euler_rate_map_inv."""
    cp, sp = np.cos(theta[1]), np.sin(theta[1])
    cy, sy = np.cos(theta[2]), np.sin(theta[2])
    out = np.zeros((3, 3, 3))
    # d/dpitch
    out[1, 0, 0] = -cy * sp
    out[1, 1, 0] = -sy * sp
    out[1, 2, 0] = -cp
    # d/dyaw
    out[2, 0, 0] = -sy * cp
    out[2, 0, 1] = -cy
    out[2, 1, 0] = cy * cp
    out[2, 1, 1] = -sy
    return out


def wrap_angle(a):
    """Normalize angle(s) to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    wrapped = -((-a + np.pi) % (2.0 * np.pi) - np.pi)
    return wrapped if wrapped.ndim else float(wrapped)


def euler_rate_condition_number(theta):
    """Condition number of A(theta); reported as a diagnostic."""
    return float(np.linalg.cond(euler_rate_map(theta)))
