"""Floating-base 4-DoF manipulator dynamics.

The arm is modeled as a 10-joint serial chain: three world-aligned prismatic
joints and a yaw-pitch-roll revolute triplet form the floating base (so the
base orientation coordinates are exactly the ZYX Euler angles used by the
locomotion template), followed by the four actuated arm joints. Mass matrix
via the composite-rigid-body algorithm, bias forces via recursive
Newton-Euler, both in world coordinates.

Generalized coordinates: q = (p_b, theta_b, q_shape) with theta_b =
(roll, pitch, yaw); generalized velocities are plain coordinate rates.
Link inertial parameters are estimates (only the 4.4 kg total is published
for the real arm) and live in params/arm.yaml.
"""

from dataclasses import dataclass, field

import numpy as np

from .accel import njit
from .errors import IllConditionedMass
from .mathcore import euler_rate_map_inv, euler_rate_inv_partials

NQ = 10  # 6 base + 4 shape
NS = 4  # actuated shape joints

# chain order: [px, py, pz, yaw, pitch, roll, j1..j4]; q order swaps roll/yaw
_PERM = np.array([0, 1, 2, 5, 4, 3, 6, 7, 8, 9])
_PERM_INV = np.argsort(_PERM)

GRAVITY_ACCEL = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class ArmParams:
    """Kinematic/inertial description of the arm plus its actuation limits.

    Five bodies carry mass: the base housing rigidly attached to the mount
    plus the four moving links. A massless base housing would make the
    floating-base mass matrix structurally singular (base rotation about the
    first joint axis could be cancelled by the joint), so the housing owns a
    share of the 4.4 kg total.
    """

    base_mass: float  # kg, arm base housing (rigid with the mount)
    base_com: np.ndarray  # (3,) housing CoM in the mount frame
    base_inertia: np.ndarray  # (3, 3) about the housing CoM
    link_masses: np.ndarray  # (4,) kg
    link_com: np.ndarray  # (4, 3) CoM in the link frame
    link_inertia: np.ndarray  # (4, 3, 3) about the link CoM, link frame
    joint_offsets: np.ndarray  # (4, 3) parent-frame translation to the joint
    joint_axes: np.ndarray  # (4, 3) unit axes in the joint frame
    ee_offset: np.ndarray  # (3,) gripper attachment point in the last frame
    joint_lower: np.ndarray  # (4,) rad
    joint_upper: np.ndarray  # (4,) rad
    torque_limit: np.ndarray  # (4,) N*m
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY_ACCEL.copy())

    @property
    def total_mass(self):
        return float(self.base_mass + np.sum(self.link_masses))

    @classmethod
    def default(cls):
        """Estimated mass distribution of the 4.4 kg arm (rod-like links)."""
        masses = np.array([1.2, 1.1, 0.8, 0.4])
        lengths = np.array([0.10, 0.22, 0.18, 0.10])
        radius = 0.03
        com = np.zeros((4, 3))
        com[:, 0] = 0.01  # slightly off-axis, like real housings
        com[:, 2] = lengths / 2.0
        inertia = np.zeros((4, 3, 3))
        for i in range(4):
            ixx = masses[i] * lengths[i] ** 2 / 12.0 + masses[i] * radius**2 / 4.0
            izz = masses[i] * radius**2 / 2.0
            inertia[i] = np.diag([ixx, ixx, izz])
        offsets = np.array(
            [[0.04, 0.0, 0.05], [0.0, 0.0, 0.10], [0.0, 0.0, 0.22], [0.0, 0.0, 0.18]]
        )
        axes = np.array(
            [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0]]
        )
        return cls(
            base_mass=0.9,
            base_com=np.array([0.02, 0.0, 0.03]),
            base_inertia=np.diag([1.2e-3, 1.2e-3, 9.0e-4]),
            link_masses=masses,
            link_com=com,
            link_inertia=inertia,
            joint_offsets=offsets,
            joint_axes=axes,
            ee_offset=np.array([0.0, 0.0, 0.10]),
            joint_lower=np.array([-2.8, -2.2, -2.6, -2.6]),
            joint_upper=np.array([2.8, 2.2, 2.6, 2.6]),
            torque_limit=np.array([30.0, 30.0, 30.0, 30.0]),
        )

    def packed(self):
        """Chain arrays (virtual base joints + arm joints) for the kernels."""
        jtype = np.array([0, 0, 0, 1, 1, 1, 1, 1, 1, 1], dtype=np.int64)
        axes = np.zeros((NQ, 3))
        axes[0] = (1.0, 0.0, 0.0)
        axes[1] = (0.0, 1.0, 0.0)
        axes[2] = (0.0, 0.0, 1.0)
        axes[3] = (0.0, 0.0, 1.0)  # yaw
        axes[4] = (0.0, 1.0, 0.0)  # pitch
        axes[5] = (1.0, 0.0, 0.0)  # roll
        axes[6:] = self.joint_axes
        t_local = np.zeros((NQ, 3))
        t_local[6:] = self.joint_offsets
        mass = np.zeros(NQ)
        mass[5] = self.base_mass  # housing rides on the last base joint
        mass[6:] = self.link_masses
        com = np.zeros((NQ, 3))
        com[5] = self.base_com
        com[6:] = self.link_com
        inertia = np.zeros((NQ, 3, 3))
        inertia[5] = self.base_inertia
        inertia[6:] = self.link_inertia
        return jtype, axes, t_local, mass, com, inertia, self.gravity.copy()


# ---------------------------------------------------------------------------
# kernels (chain order)
# ---------------------------------------------------------------------------


@njit
def _axis_rotation(axis, angle):
    # Rodrigues for a unit axis
    c, s = np.cos(angle), np.sin(angle)
    x, y, z = axis[0], axis[1], axis[2]
    r = np.empty((3, 3))
    r[0, 0] = c + x * x * (1 - c)
    r[0, 1] = x * y * (1 - c) - z * s
    r[0, 2] = x * z * (1 - c) + y * s
    r[1, 0] = y * x * (1 - c) + z * s
    r[1, 1] = c + y * y * (1 - c)
    r[1, 2] = y * z * (1 - c) - x * s
    r[2, 0] = z * x * (1 - c) - y * s
    r[2, 1] = z * y * (1 - c) + x * s
    r[2, 2] = c + z * z * (1 - c)
    return r


@njit
def _fk_chain(q_chain, jtype, axis_local, t_local):
    """World frames of all chain joints: rotations, origins, world axes."""
    rots = np.empty((NQ, 3, 3))
    orig = np.empty((NQ, 3))
    axis_w = np.empty((NQ, 3))
    r_parent = np.eye(3)
    o_parent = np.zeros(3)
    for i in range(NQ):
        a_w = r_parent @ axis_local[i]
        o_i = o_parent + r_parent @ t_local[i]
        if jtype[i] == 0:
            o_i = o_i + a_w * q_chain[i]
            r_i = r_parent.copy()
        else:
            r_i = r_parent @ _axis_rotation(axis_local[i], q_chain[i])
        rots[i] = r_i
        orig[i] = o_i
        axis_w[i] = a_w
        r_parent = r_i
        o_parent = o_i
    return rots, orig, axis_w


@njit
def _link_world(rot, orig, mass, com_local, inertia_local):
    c_w = np.empty((NQ, 3))
    i_w = np.empty((NQ, 3, 3))
    for i in range(NQ):
        c_w[i] = orig[i] + rot[i] @ com_local[i]
        i_w[i] = rot[i] @ inertia_local[i] @ rot[i].T
    return c_w, i_w


@njit
def _crba(jtype, axis_w, orig, mass, c_w, i_w):
    """Composite-rigid-body mass matrix in chain coordinates."""
    d = np.zeros((NQ, NQ))
    comp_m = np.zeros(NQ)
    comp_c = np.zeros((NQ, 3))
    comp_i = np.zeros((NQ, 3, 3))
    eye3 = np.eye(3)
    # accumulate composite bodies tip -> base
    for i in range(NQ - 1, -1, -1):
        m_i = mass[i]
        if i == NQ - 1:
            comp_m[i] = m_i
            comp_c[i] = c_w[i]
            comp_i[i] = i_w[i]
        else:
            m_tot = m_i + comp_m[i + 1]
            if m_tot > 0.0:
                c_tot = (m_i * c_w[i] + comp_m[i + 1] * comp_c[i + 1]) / m_tot
            else:
                c_tot = orig[i].copy()
            i_tot = np.zeros((3, 3))
            if m_i > 0.0:
                dvec = c_w[i] - c_tot
                i_tot += i_w[i] + m_i * ((dvec @ dvec) * eye3 - np.outer(dvec, dvec))
            if comp_m[i + 1] > 0.0:
                dvec = comp_c[i + 1] - c_tot
                i_tot += comp_i[i + 1] + comp_m[i + 1] * (
                    (dvec @ dvec) * eye3 - np.outer(dvec, dvec)
                )
            comp_m[i] = m_tot
            comp_c[i] = c_tot
            comp_i[i] = i_tot
    # project unit accelerations
    for i in range(NQ):
        if comp_m[i] <= 0.0:
            continue
        if jtype[i] == 1:
            alpha = axis_w[i]
            a_com = np.cross(alpha, comp_c[i] - orig[i])
            force = comp_m[i] * a_com
            torque = comp_i[i] @ alpha
        else:
            force = comp_m[i] * axis_w[i]
            torque = np.zeros(3)
        for j in range(i + 1):
            if jtype[j] == 1:
                d[j, i] = axis_w[j] @ (
                    torque + np.cross(comp_c[i] - orig[j], force)
                )
            else:
                d[j, i] = axis_w[j] @ force
            d[i, j] = d[j, i]
    return d


@njit
def _rnea(q_chain, qd_chain, qdd_chain, jtype, axis_local, t_local, mass,
          com_local, inertia_local, gravity):
    """Inverse dynamics tau = D qdd + C qd + G in chain coordinates."""
    rot, orig, axis_w = _fk_chain(q_chain, jtype, axis_local, t_local)
    c_w, i_w = _link_world(rot, orig, mass, com_local, inertia_local)

    omega = np.zeros((NQ, 3))
    alpha = np.zeros((NQ, 3))
    a_orig = np.zeros((NQ, 3))
    a_com = np.zeros((NQ, 3))

    w_prev = np.zeros(3)
    al_prev = np.zeros(3)
    ao_prev = -gravity  # gravity trick: accelerate the world frame upward
    o_prev = np.zeros(3)
    for i in range(NQ):
        delta = orig[i] - o_prev
        base = ao_prev + np.cross(al_prev, delta) + np.cross(
            w_prev, np.cross(w_prev, delta)
        )
        if jtype[i] == 1:
            omega[i] = w_prev + axis_w[i] * qd_chain[i]
            alpha[i] = (
                al_prev
                + axis_w[i] * qdd_chain[i]
                + np.cross(w_prev, axis_w[i]) * qd_chain[i]
            )
            a_orig[i] = base
        else:
            omega[i] = w_prev
            alpha[i] = al_prev
            a_orig[i] = (
                base
                + axis_w[i] * qdd_chain[i]
                + 2.0 * np.cross(w_prev, axis_w[i] * qd_chain[i])
            )
        r_c = c_w[i] - orig[i]
        a_com[i] = a_orig[i] + np.cross(alpha[i], r_c) + np.cross(
            omega[i], np.cross(omega[i], r_c)
        )
        w_prev = omega[i]
        al_prev = alpha[i]
        ao_prev = a_orig[i]
        o_prev = orig[i]

    tau = np.zeros(NQ)
    f_child = np.zeros(3)
    n_child = np.zeros(3)
    o_child = np.zeros(3)
    for i in range(NQ - 1, -1, -1):
        f_link = mass[i] * a_com[i]
        n_link = i_w[i] @ alpha[i] + np.cross(omega[i], i_w[i] @ omega[i])
        f_i = f_link + f_child
        n_i = (
            n_link
            + np.cross(c_w[i] - orig[i], f_link)
            + n_child
            + np.cross(o_child - orig[i], f_child)
        )
        if jtype[i] == 1:
            tau[i] = axis_w[i] @ n_i
        else:
            tau[i] = axis_w[i] @ f_i
        f_child = f_i
        n_child = n_i
        o_child = orig[i]
    return tau


@njit
def _com_jacobians(jtype, axis_w, orig, c_w):
    """d c_w[i] / d q_chain[j] for every link i, ancestor j."""
    jac = np.zeros((NQ, 3, NQ))
    for i in range(NQ):
        for j in range(i + 1):
            if jtype[j] == 1:
                jac[i, :, j] = np.cross(axis_w[j], c_w[i] - orig[j])
            else:
                jac[i, :, j] = axis_w[j]
    return jac


@njit
def _gravity_hessian(jtype, axis_w, orig, mass, c_w, gravity):
    """d G / d q in chain coordinates (second derivative of potential).

    Inner loops use scalar cross products to stay allocation-free."""
    hess = np.zeros((NQ, NQ))
    for i in range(NQ):
        if mass[i] <= 0.0:
            continue
        wx = -mass[i] * gravity[0]
        wy = -mass[i] * gravity[1]
        wz = -mass[i] * gravity[2]
        for j in range(i + 1):
            if jtype[j] == 0:
                continue  # translation rows of the Hessian vanish
            ajx, ajy, ajz = axis_w[j, 0], axis_w[j, 1], axis_w[j, 2]
            rx = c_w[i, 0] - orig[j, 0]
            ry = c_w[i, 1] - orig[j, 1]
            rz = c_w[i, 2] - orig[j, 2]
            for k in range(i + 1):
                if jtype[k] == 0:
                    continue
                akx, aky, akz = axis_w[k, 0], axis_w[k, 1], axis_w[k, 2]
                # d/dq_k [ a_j x (c_i - o_j) ]
                if k < j:
                    dajx = aky * ajz - akz * ajy
                    dajy = akz * ajx - akx * ajz
                    dajz = akx * ajy - aky * ajx
                    ox = orig[j, 0] - orig[k, 0]
                    oy = orig[j, 1] - orig[k, 1]
                    oz = orig[j, 2] - orig[k, 2]
                    dojx = aky * oz - akz * oy
                    dojy = akz * ox - akx * oz
                    dojz = akx * oy - aky * ox
                else:
                    dajx = dajy = dajz = 0.0
                    dojx = dojy = dojz = 0.0
                cx = c_w[i, 0] - orig[k, 0]
                cy = c_w[i, 1] - orig[k, 1]
                cz = c_w[i, 2] - orig[k, 2]
                dcix = aky * cz - akz * cy
                dciy = akz * cx - akx * cz
                dciz = akx * cy - aky * cx
                ux = dcix - dojx
                uy = dciy - dojy
                uz = dciz - dojz
                tx = (dajy * rz - dajz * ry) + (ajy * uz - ajz * uy)
                ty = (dajz * rx - dajx * rz) + (ajz * ux - ajx * uz)
                tz = (dajx * ry - dajy * rx) + (ajx * uy - ajy * ux)
                hess[j, k] += wx * tx + wy * ty + wz * tz
    return hess


# ---------------------------------------------------------------------------
# public model
# ---------------------------------------------------------------------------


def _to_chain(v):
    return v[_PERM]


def _from_chain(v):
    out = np.empty_like(v)
    out[_PERM] = v
    return out


_B_SEL = np.zeros((NQ, NS))
_B_SEL[6:, :] = np.eye(NS)


class ArmModel:
    """Full-order floating-base arm model over an ArmParams set."""

    def __init__(self, params: ArmParams | None = None):
        self.params = params if params is not None else ArmParams.default()
        (self._jtype, self._axes, self._t, self._mass, self._com,
         self._inertia, self._gravity) = self.params.packed()
        self.input_matrix = _B_SEL.copy()

    # -- kinematics ---------------------------------------------------------

    def _frames(self, q):
        return _fk_chain(_to_chain(np.asarray(q, float)), self._jtype,
                         self._axes, self._t)

    def frames(self, q):
        """World rotation/origin/axis for every chain joint (chain order)."""
        return self._frames(q)

    def forward_kinematics_ee(self, q):
        """End-effector (gripper attachment) pose: (position, rotation)."""
        rot, orig, _ = self._frames(q)
        pos = orig[-1] + rot[-1] @ self.params.ee_offset
        return pos, rot[-1]

    def link_coms(self, q):
        rot, orig, _ = self._frames(q)
        c_w, _ = _link_world(rot, orig, self._mass, self._com, self._inertia)
        return c_w[6:]

    def ee_jacobian(self, q):
        """Linear Jacobian of the end-effector point, q order."""
        rot, orig, axis_w = self._frames(q)
        pos = orig[-1] + rot[-1] @ self.params.ee_offset
        jac = np.zeros((3, NQ))
        for j in range(NQ):
            if self._jtype[j] == 1:
                jac[:, j] = np.cross(axis_w[j], pos - orig[j])
            else:
                jac[:, j] = axis_w[j]
        return jac[:, _PERM_INV]

    # -- dynamics -------------------------------------------------------------

    def mass_matrix(self, q):
        rot, orig, axis_w = self._frames(q)
        c_w, i_w = _link_world(rot, orig, self._mass, self._com, self._inertia)
        d_chain = _crba(self._jtype, axis_w, orig, self._mass, c_w, i_w)
        return d_chain[np.ix_(_PERM_INV, _PERM_INV)]

    def bias_forces(self, q, qd):
        """H(q, qd): Coriolis + centrifugal + gravity."""
        tau = _rnea(_to_chain(np.asarray(q, float)), _to_chain(np.asarray(qd, float)),
                    np.zeros(NQ), self._jtype, self._axes, self._t, self._mass,
                    self._com, self._inertia, self._gravity)
        return _from_chain(tau)

    def inverse_dynamics(self, q, qd, qdd):
        tau = _rnea(_to_chain(np.asarray(q, float)), _to_chain(np.asarray(qd, float)),
                    _to_chain(np.asarray(qdd, float)), self._jtype, self._axes,
                    self._t, self._mass, self._com, self._inertia, self._gravity)
        return _from_chain(tau)

    def gravity_forces(self, q):
        return self.bias_forces(q, np.zeros(NQ))

    def gravity_hessian(self, q):
        """dG/dq, analytic (world-frame double cross products)."""
        rot, orig, axis_w = self._frames(q)
        c_w, _ = _link_world(rot, orig, self._mass, self._com, self._inertia)
        h = _gravity_hessian(self._jtype, axis_w, orig, self._mass, c_w,
                             self._gravity)
        return h[np.ix_(_PERM_INV, _PERM_INV)]

    def base_jacobian(self, q):
        """Maps generalized velocities to the interaction-point twist.

        Twist = (linear velocity of the mount, world angular velocity); the
        rotational block is the Euler-rate-to-omega map of theta_b.
        """
        jac = np.zeros((6, NQ))
        jac[:3, :3] = np.eye(3)
        jac[3:, 3:6] = euler_rate_map_inv(np.asarray(q, float)[3:6])
        return jac

    def base_jacobian_wrench_gradient(self, q, lam):
        """d(J^T lam)/dq as a (10, 10) matrix; nonzero only in the Euler block."""
        out = np.zeros((NQ, NQ))
        parts = euler_rate_inv_partials(np.asarray(q, float)[3:6])
        tau = np.asarray(lam, float)[3:]
        for j in range(3):
            out[3:6, 3 + j] = parts[j].T @ tau
        return out

    def body_coms(self, q):
        """CoM positions of every massive body (housing + 4 links)."""
        rot, orig, _ = self._frames(q)
        c_w, _ = _link_world(rot, orig, self._mass, self._com, self._inertia)
        return c_w[5:]

    def potential_energy(self, q):
        rot, orig, _ = self._frames(q)
        c_w, _ = _link_world(rot, orig, self._mass, self._com, self._inertia)
        return float(-np.sum(self._mass * (c_w @ self._gravity)))

    def total_energy(self, q, qd):
        return 0.5 * float(qd @ self.mass_matrix(q) @ qd) + self.potential_energy(q)

    def accelerations(self, q, qd, u, lam, mass_matrix=None, bias=None):
        """qdd = D^-1 (B u - J^T lam - H); raises on ill-conditioned D."""
        d = self.mass_matrix(q) if mass_matrix is None else mass_matrix
        h = self.bias_forces(q, qd) if bias is None else bias
        if np.linalg.cond(d) > 1e12:
            raise IllConditionedMass("arm mass matrix condition number > 1e12")
        rhs = self.input_matrix @ np.asarray(u, float) - self.base_jacobian(q).T @ np.asarray(lam, float) - h
        return np.linalg.solve(d, rhs)

    def continuous_dynamics(self, x, u, lam):
        """State derivative for x = (q, qd) in R^20."""
        x = np.asarray(x, float)
        q, qd = x[:NQ], x[NQ:]
        return np.concatenate([qd, self.accelerations(q, qd, u, lam)])

    def discrete_step(self, x, u, lam, dt):
        """Forward-Euler step used by the NMPC prediction model."""
        return np.asarray(x, float) + dt * self.continuous_dynamics(x, u, lam)

    def frozen(self, x_now):
        """Prediction model with D frozen at x_now and Coriolis dropped."""
        q = np.asarray(x_now, float)[:NQ]
        return FrozenArmModel(self, self.mass_matrix(q))


class FrozenArmModel:
    """NMPC-simplified arm model: constant inertia, no Coriolis.

    Gravity and the interaction Jacobian stay configuration-dependent.
    Immutable once built; refreshed every NMPC cycle.
    """

    def __init__(self, model: ArmModel, d_frozen: np.ndarray):
        self.model = model
        self.d_frozen = d_frozen.copy()
        self.d_inv = np.linalg.inv(self.d_frozen)

    def accelerations(self, q, qd, u, lam):
        rhs = (
            self.model.input_matrix @ np.asarray(u, float)
            - self.model.base_jacobian(q).T @ np.asarray(lam, float)
            - self.model.gravity_forces(q)
        )
        return self.d_inv @ rhs

    def continuous_dynamics(self, x, u, lam):
        x = np.asarray(x, float)
        return np.concatenate([x[NQ:], self.accelerations(x[:NQ], x[NQ:], u, lam)])

    def discrete_step(self, x, u, lam, dt):
        return np.asarray(x, float) + dt * self.continuous_dynamics(x, u, lam)
