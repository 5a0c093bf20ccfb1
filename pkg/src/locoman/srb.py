"""Single-rigid-body locomotion template.

State layout (12-vector): [p(3), pdot(3), theta(3), omega(3)] with theta the
ZYX Euler angles and omega the world-frame angular velocity. Inputs are the
four stacked ground reaction forces (12-vector, world frame); swing-foot
entries are zero by the NMPC's availability constraint.

Foot lever arms follow the net-wrench formula with r[l] the vector from
stance foot l to the CoM; the interaction torque uses the CoM-to-mount
vector. Both the controller and the plant use this one implementation, so
the closed loop is model-consistent.
"""

from dataclasses import dataclass, field

import numpy as np

from .accel import njit
from .mathcore import (
    euler_rate_map,
    euler_rate_map_partials,
    euler_to_rotation,
    rotation_partials,
    skew,
    world_inertia,
)

NX = 12
NU = 12
GRAVITY = np.array([0.0, 0.0, 9.81])  # g0 in pddot = f/m - g0


@dataclass(frozen=True)
class SrbParams:
    mass: float = 15.0
    inertia_body: np.ndarray = field(
        default_factory=lambda: np.diag([0.047, 0.245, 0.254])
    )
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    mount_offset: np.ndarray = field(
        default_factory=lambda: np.array([0.15, 0.0, 0.05])
    )  # CoM -> arm mount, body frame (also the coupling offset d)

    def __post_init__(self):
        assert self.mass > 0.0
        assert np.allclose(self.inertia_body, self.inertia_body.T)
        assert np.min(np.linalg.eigvalsh(self.inertia_body)) > 0.0


def foot_lever_arms(p, foot_positions):
    """Moment arms r[l] = foot - CoM (the torque of GRF l is r[l] x f[l]).

    Physical convention; see the module docstring for the sign decision."""
    return np.asarray(foot_positions, float) - np.asarray(p, float)[None, :]


@njit
def _net_wrench(grf, foot_to_com, lam, r_int_world):
    f_net = np.zeros(3)
    tau_net = np.zeros(3)
    for l in range(4):
        f = grf[l]
        f_net += f
        tau_net += np.cross(foot_to_com[l], f)
    f_int = lam[:3]
    f_net += f_int
    tau_net += lam[3:] + np.cross(r_int_world, f_int)
    return f_net, tau_net


def net_wrench(grf, foot_to_com, lam, params: SrbParams, theta):
    """Net force/torque on the CoM from GRFs plus the interaction wrench."""
    r_int_world = euler_to_rotation(np.asarray(theta, float)) @ params.mount_offset
    return _net_wrench(
        np.asarray(grf, float).reshape(4, 3),
        np.asarray(foot_to_com, float).reshape(4, 3),
        np.asarray(lam, float),
        r_int_world,
    )


@njit
def _srb_derivative(x, grf, lam, foot_positions, mass, inertia_body, g0,
                    mount_offset):
    p = x[:3]
    v = x[3:6]
    theta = x[6:9]
    omega = x[9:12]
    rot = euler_to_rotation(theta)
    r_int_world = rot @ mount_offset
    ftc = np.empty((4, 3))
    for l in range(4):
        ftc[l] = foot_positions[l] - p
    f_net, tau_net = _net_wrench(grf, ftc, lam, r_int_world)
    w_world = rot @ inertia_body @ rot.T
    a_map = np.empty((3, 3))
    cp, sp = np.cos(theta[1]), np.sin(theta[1])
    cy, sy = np.cos(theta[2]), np.sin(theta[2])
    a_map[0, 0] = cy / cp
    a_map[0, 1] = sy / cp
    a_map[0, 2] = 0.0
    a_map[1, 0] = -sy
    a_map[1, 1] = cy
    a_map[1, 2] = 0.0
    a_map[2, 0] = cy * sp / cp
    a_map[2, 1] = sy * sp / cp
    a_map[2, 2] = 1.0
    out = np.empty(12)
    out[:3] = v
    out[3:6] = f_net / mass - g0
    out[6:9] = a_map @ omega
    out[9:12] = np.linalg.solve(w_world, tau_net - np.cross(omega, w_world @ omega))
    return out


def srb_continuous_dynamics(x, f_net, tau_net, params: SrbParams):
    """State derivative given a precomputed net wrench."""
    x = np.asarray(x, float)
    theta, omega = x[6:9], x[9:12]
    w = world_inertia(params.inertia_body, theta)
    out = np.empty(NX)
    out[:3] = x[3:6]
    out[3:6] = np.asarray(f_net, float) / params.mass - params.gravity
    out[6:9] = euler_rate_map(theta) @ omega
    out[9:12] = np.linalg.solve(
        w, np.asarray(tau_net, float) - np.cross(omega, w @ omega)
    )
    return out


def srb_derivative(x, grf, lam, foot_positions, params: SrbParams):
    """Continuous dynamics straight from inputs (kernel path)."""
    return _srb_derivative(
        np.asarray(x, float),
        np.asarray(grf, float).reshape(4, 3),
        np.asarray(lam, float),
        np.asarray(foot_positions, float).reshape(4, 3),
        params.mass,
        params.inertia_body,
        params.gravity,
        params.mount_offset,
    )


def srb_discrete_step(x, u, lam, dt, params: SrbParams, foot_positions):
    """Forward-Euler prediction step used inside the NMPC."""
    x = np.asarray(x, float)
    return x + dt * srb_derivative(x, u, lam, foot_positions, params)


class SrbAccelTerms:
    """Accelerations and their analytic partials at one evaluation point.

    Partials are of the continuous dynamics; column layouts match the state
    vector [p, v, theta, omega], the stacked 12 GRFs, and lam = (f, tau).
    Shared by the NMPC dynamics linearization and the coupling constraint.
    """

    __slots__ = (
        "pddot", "omega_dot", "rot", "rot_parts", "a_map", "a_parts",
        "w_inv", "r_int_world",
        "d_om_dp", "d_om_dtheta", "d_om_domega", "d_om_du", "d_om_dlam",
        "d_pdd_du", "d_pdd_dlam",
    )

    def __init__(self, x, u, lam, params: SrbParams, foot_positions):
        x = np.asarray(x, float)
        grf = np.asarray(u, float).reshape(4, 3)
        lam = np.asarray(lam, float)
        feet = np.asarray(foot_positions, float).reshape(4, 3)
        p, omega, theta = x[:3], x[9:12], x[6:9]

        self.rot = euler_to_rotation(theta)
        self.rot_parts = rotation_partials(theta)
        self.a_map = euler_rate_map(theta)
        self.a_parts = euler_rate_map_partials(theta)
        w = self.rot @ params.inertia_body @ self.rot.T
        self.w_inv = np.linalg.inv(w)
        self.r_int_world = self.rot @ params.mount_offset
        f_int = lam[:3]

        ftc = foot_lever_arms(p, feet)
        f_net, tau_net = _net_wrench(grf, ftc, lam, self.r_int_world)
        self.pddot = f_net / params.mass - params.gravity
        self.omega_dot = self.w_inv @ (tau_net - np.cross(omega, w @ omega))

        self.d_pdd_du = np.zeros((3, NU))
        for l in range(4):
            self.d_pdd_du[:, 3 * l : 3 * l + 3] = np.eye(3) / params.mass
        self.d_pdd_dlam = np.zeros((3, 6))
        self.d_pdd_dlam[:, :3] = np.eye(3) / params.mass

        sum_sf = np.zeros((3, 3))
        for l in range(4):
            sum_sf += skew(grf[l])
        self.d_om_dp = self.w_inv @ sum_sf
        self.d_om_dtheta = np.zeros((3, 3))
        for i in range(3):
            dw = (
                self.rot_parts[i] @ params.inertia_body @ self.rot.T
                + self.rot @ params.inertia_body @ self.rot_parts[i].T
            )
            dtau = np.cross(self.rot_parts[i] @ params.mount_offset, f_int)
            self.d_om_dtheta[:, i] = self.w_inv @ (
                dtau - np.cross(omega, dw @ omega) - dw @ self.omega_dot
            )
        self.d_om_domega = self.w_inv @ (-skew(omega) @ w + skew(w @ omega))
        self.d_om_du = np.zeros((3, NU))
        for l in range(4):
            self.d_om_du[:, 3 * l : 3 * l + 3] = self.w_inv @ skew(ftc[l])
        self.d_om_dlam = np.zeros((3, 6))
        self.d_om_dlam[:, :3] = self.w_inv @ skew(self.r_int_world)
        self.d_om_dlam[:, 3:] = self.w_inv


def srb_step_jacobians(x, u, lam, dt, params: SrbParams, foot_positions,
                       terms: SrbAccelTerms | None = None):
    """Analytic Jacobians of srb_discrete_step w.r.t. (x, u, lam)."""
    x = np.asarray(x, float)
    omega = x[9:12]
    if terms is None:
        terms = SrbAccelTerms(x, u, lam, params, foot_positions)

    fx = np.zeros((NX, NX))
    fu = np.zeros((NX, NU))
    fl = np.zeros((NX, 6))

    fx[:3, 3:6] = np.eye(3)
    fu[3:6] = terms.d_pdd_du
    fl[3:6] = terms.d_pdd_dlam
    for i in range(3):
        fx[6:9, 6 + i] = terms.a_parts[i] @ omega
    fx[6:9, 9:12] = terms.a_map
    fx[9:12, :3] = terms.d_om_dp
    fx[9:12, 6:9] = terms.d_om_dtheta
    fx[9:12, 9:12] = terms.d_om_domega
    fu[9:12] = terms.d_om_du
    fl[9:12] = terms.d_om_dlam

    eye = np.eye(NX)
    return eye + dt * fx, dt * fu, dt * fl
