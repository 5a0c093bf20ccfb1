"""Parameter-file loading: robot, arm, and controller configs.

YAML files ship with the package as defaults; any subset of fields can be
overridden by a user-supplied file of the same shape (deep-merged on top).
"""

import importlib.resources
from dataclasses import dataclass, field

import numpy as np
import yaml

from .arm import ArmParams
from .srb import SrbParams


def _load_packaged(name):
    ref = importlib.resources.files("locoman") / "params" / name
    with ref.open() as fh:
        return yaml.safe_load(fh)


def _deep_merge(base, override):
    out = dict(base)
    for key, val in (override or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def _as_inertia(val):
    arr = np.asarray(val, float)
    return np.diag(arr) if arr.ndim == 1 else arr


@dataclass(frozen=True)
class LegParams:
    hip_offsets: np.ndarray  # (4, 3) body frame, FL FR RL RR
    abduction_offset: float
    thigh_length: float
    calf_length: float
    torque_limit: float

    def hip_world(self, p, rot):
        """World positions of all four hip origins."""
        return p[None, :] + (rot @ self.hip_offsets.T).T

    def side_sign(self, foot):
        return 1.0 if foot in (0, 2) else -1.0  # left legs positive y


@dataclass(frozen=True)
class RobotConfig:
    srb: SrbParams
    legs: LegParams
    standing_height: float


@dataclass(frozen=True)
class NmpcWeights:
    q_srb: np.ndarray  # (12,) diagonal
    p_srb: np.ndarray
    r_srb: np.ndarray  # (12,)
    q_arm: np.ndarray  # (20,)
    p_arm: np.ndarray
    r_arm: np.ndarray  # (4,)
    r_int: np.ndarray  # (6,)


@dataclass(frozen=True)
class NmpcConfig:
    horizon: int
    ts: float
    max_iterations: int
    kkt_tol: float
    mu: float
    f_min: float
    f_max: float
    weights: NmpcWeights


@dataclass(frozen=True)
class GaitConfig:
    step_time: float
    stance_fraction: float
    standing_deadband: float
    standing_mode: bool


@dataclass(frozen=True)
class WbcConfig:
    rate: float
    gamma_torque: float
    gamma_force: float
    gamma_defect: float
    kp: float
    kd: float
    raibert_gain: float
    swing_apex: float


@dataclass(frozen=True)
class ReferenceConfig:
    height: float
    max_speed: float
    max_yaw_rate: float
    max_pitch: float
    arm_joint_speed: float


@dataclass(frozen=True)
class ControllerConfig:
    nmpc: NmpcConfig
    gait: GaitConfig
    wbc: WbcConfig
    reference: ReferenceConfig


def load_robot(overrides=None) -> RobotConfig:
    raw = _deep_merge(_load_packaged("robot.yaml"), overrides)
    s = raw["srb"]
    srb = SrbParams(
        mass=float(s["mass"]),
        inertia_body=_as_inertia(s["inertia_body"]),
        gravity=np.asarray(s["gravity"], float),
        mount_offset=np.asarray(s["mount_offset"], float),
    )
    l = raw["legs"]
    legs = LegParams(
        hip_offsets=np.asarray(l["hip_offsets"], float),
        abduction_offset=float(l["abduction_offset"]),
        thigh_length=float(l["thigh_length"]),
        calf_length=float(l["calf_length"]),
        torque_limit=float(l["torque_limit"]),
    )
    return RobotConfig(srb=srb, legs=legs,
                       standing_height=float(s["standing_height"]))


def load_arm(overrides=None) -> ArmParams:
    raw = _deep_merge(_load_packaged("arm.yaml"), overrides)
    links = raw["links"]
    masses = np.asarray(links["masses"], float)
    lengths = np.asarray(links["lengths"], float)
    radius = float(links.get("rod_radius", 0.03))
    inertia = np.zeros((4, 3, 3))
    for i in range(4):
        ixx = masses[i] * lengths[i] ** 2 / 12.0 + masses[i] * radius**2 / 4.0
        izz = masses[i] * radius**2 / 2.0
        inertia[i] = np.diag([ixx, ixx, izz])
    base = raw["base"]
    return ArmParams(
        base_mass=float(base["mass"]),
        base_com=np.asarray(base["com"], float),
        base_inertia=_as_inertia(base["inertia"]),
        link_masses=masses,
        link_com=np.asarray(links["com_offsets"], float),
        link_inertia=inertia,
        joint_offsets=np.asarray(links["joint_offsets"], float),
        joint_axes=np.asarray(links["joint_axes"], float),
        ee_offset=np.asarray(raw["ee_offset"], float),
        joint_lower=np.asarray(raw["joint_lower"], float),
        joint_upper=np.asarray(raw["joint_upper"], float),
        torque_limit=np.asarray(raw["torque_limit"], float),
    )


def load_controller(overrides=None) -> ControllerConfig:
    raw = _deep_merge(_load_packaged("controller.yaml"), overrides)
    n = raw["nmpc"]
    w = n["weights"]
    q_srb = np.concatenate([
        np.asarray(w["q_p"], float),
        np.asarray(w["q_pdot"], float),
        np.asarray(w["q_theta"], float),
        np.asarray(w["q_omega"], float),
    ])
    q_arm = np.zeros(20)
    q_arm[6:10] = np.asarray(w["q_arm_qs"], float)
    q_arm[16:20] = np.asarray(w["q_arm_qsdot"], float)
    weights = NmpcWeights(
        q_srb=q_srb,
        p_srb=float(w["p_scale_srb"]) * q_srb,
        r_srb=np.full(12, float(w["r_srb"])),
        q_arm=q_arm,
        p_arm=float(w["p_scale_arm"]) * q_arm,
        r_arm=np.full(4, float(w["r_arm"])),
        r_int=np.concatenate([
            np.full(3, float(w["r_int_force"])),
            np.full(3, float(w["r_int_torque"])),
        ]),
    )
    nmpc = NmpcConfig(
        horizon=int(n["horizon"]), ts=float(n["ts"]),
        max_iterations=int(n["max_iterations"]), kkt_tol=float(n["kkt_tol"]),
        mu=float(n["mu"]), f_min=float(n["f_min"]), f_max=float(n["f_max"]),
        weights=weights,
    )
    g = raw["gait"]
    gait_cfg = GaitConfig(
        step_time=float(g["step_time"]),
        stance_fraction=float(g["stance_fraction"]),
        standing_deadband=float(g["standing_deadband"]),
        standing_mode=bool(g["standing_mode"]),
    )
    wb = raw["wbc"]
    wbc_cfg = WbcConfig(
        rate=float(wb["rate"]), gamma_torque=float(wb["gamma_torque"]),
        gamma_force=float(wb["gamma_force"]), gamma_defect=float(wb["gamma_defect"]),
        kp=float(wb["kp"]), kd=float(wb["kd"]),
        raibert_gain=float(wb["raibert_gain"]), swing_apex=float(wb["swing_apex"]),
    )
    r = raw["reference"]
    ref_cfg = ReferenceConfig(
        height=float(r["height"]), max_speed=float(r["max_speed"]),
        max_yaw_rate=float(r["max_yaw_rate"]), max_pitch=float(r["max_pitch"]),
        arm_joint_speed=float(r["arm_joint_speed"]),
    )
    return ControllerConfig(nmpc=nmpc, gait=gait_cfg, wbc=wbc_cfg,
                            reference=ref_cfg)


def load_yaml_file(path):
    with open(path) as fh:
        return yaml.safe_load(fh) or {}
