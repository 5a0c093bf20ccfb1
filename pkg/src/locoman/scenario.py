"""Scenario configuration, the simulation session, and the lockstep runner.

Rates: plant 1 kHz, WBC 500 Hz, NMPC 60 Hz -- the NMPC replans on a
17/17/16 ms cadence so three cycles span exactly 50 ms. The lockstep runner
is single-threaded and deterministic: identical (scenario, config, seed)
reproduce bit-identical results (solve wall times are measurement metadata
and excluded from the determinism digest). Live teleop mode drives the same
session from worker threads, with the NMPC consuming state snapshots and
publishing solutions asynchronously.
"""

import hashlib
import threading
from dataclasses import dataclass, field

import numpy as np
import yaml

from .arm import ArmModel
from .config import load_arm, load_controller, load_robot
from .coupling import CouplingParams, consistent_arm_base
from .errors import NumericalBlowup, QpFailure
from .gait import contact_flags
from .nmpc import NmpcController, ReferenceCommand
from .plant import Plant
from .terrain import preset as terrain_preset
from .wbc import FootPlanner, output_vector, solve_wbc

NMPC_PATTERN = (17, 17, 16)  # ms between replans; 3 cycles = 50 ms = 60 Hz


@dataclass
class Scenario:
    name: str = "scenario"
    terrain: str = "flat"
    seed: int = 0
    mu: float = 0.6
    duration: float = 5.0
    commands: list = field(default_factory=lambda: [{"t": 0.0}])
    payloads: list = field(default_factory=list)  # {t, mass}
    pushes: list = field(default_factory=list)  # {t, duration, force}
    cart: dict | None = None  # {c0, c1}
    min_distance: float | None = None
    stop_at_distance: bool = False  # end early once min_distance is reached
    controller: dict = field(default_factory=dict)
    roll_pitch_limit: float = 0.5
    min_height: float = 0.12

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw):
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in raw.items() if k in known})

    def command_at(self, t):
        active = {}
        for seg in self.commands:
            if t >= float(seg.get("t", 0.0)):
                active = seg
        return active


@dataclass
class RunResult:
    name: str
    success: bool
    distance: float
    duration: float
    termination: str
    tracking_rms: float
    nmpc_cycles: int
    nmpc_iterations: list
    nmpc_kkt: list
    solve_times: list  # wall seconds, measurement metadata
    violation_counters: dict
    qp_failures: int
    final_state: np.ndarray
    digest: str = ""

    def determinism_digest(self):
        """Hash of the physically meaningful outputs (no wall times)."""
        h = hashlib.sha256()
        h.update(self.final_state.tobytes())
        h.update(np.float64(self.distance).tobytes())
        h.update(np.asarray(self.nmpc_iterations, dtype=np.int64).tobytes())
        h.update(np.asarray(self.nmpc_kkt, dtype=np.float64).tobytes())
        h.update(self.termination.encode())
        return h.hexdigest()


def _initial_states(robot, arm, q_s=None):
    x_srb = np.zeros(12)
    x_srb[2] = robot.standing_height
    cp = CouplingParams.from_srb(robot.srb)
    p_b, th_b, vb, thd_b = consistent_arm_base(x_srb, cp)
    q_s = np.array([0.0, 0.4, -0.8, 0.3]) if q_s is None else np.asarray(q_s)
    x_arm = np.concatenate([p_b, th_b, q_s, np.zeros(10)])
    return x_srb, x_arm


def _default_feet(robot):
    feet = robot.legs.hip_offsets.copy()
    for l in range(4):
        feet[l, 1] += robot.legs.side_sign(l) * robot.legs.abduction_offset
        feet[l, 2] = 0.0
    return feet


def _command_from(segment, q_hold):
    return ReferenceCommand(
        vx=float(segment.get("vx", 0.0)),
        vy=float(segment.get("vy", 0.0)),
        yaw_rate=float(segment.get("yaw_rate", 0.0)),
        pitch=float(segment.get("pitch", 0.0)),
        arm_q=np.asarray(segment["arm_q"], float) if "arm_q" in segment
        else q_hold,
        arm_qd=np.asarray(segment.get("arm_qd", np.zeros(4)), float),
    )


class SimSession:
    """One closed-loop simulation: plant + WBC + NMPC + events.

    step_ms advances exactly one plant millisecond. In lockstep mode the
    NMPC solves inline on its cadence; in live mode a worker publishes
    solutions through publish_solution and the loop consumes the latest.
    """

    def __init__(self, scenario: Scenario, controller_overrides=None):
        overrides = dict(scenario.controller)
        if controller_overrides:
            for key, val in controller_overrides.items():
                if isinstance(val, dict):
                    overrides.setdefault(key, {}).update(val)
                else:
                    overrides[key] = val
        overrides.setdefault("nmpc", {})
        overrides["nmpc"].setdefault("mu", scenario.mu)
        self.scenario = scenario
        self.robot = load_robot()
        self.ctrl = load_controller(overrides)
        self.arm = ArmModel(load_arm())
        self.terrain = terrain_preset(scenario.terrain, seed=scenario.seed,
                                      mu=scenario.mu)
        x_srb, x_arm = _initial_states(self.robot, self.arm)
        self.q_hold = x_arm[6:10].copy()
        feet = _default_feet(self.robot)
        self.nc = NmpcController(self.robot, self.arm, self.ctrl)
        self.plant = Plant(x_srb, x_arm, feet.copy(), self.robot.srb,
                           self.arm, self.terrain)
        self.command = _command_from(scenario.command_at(0.0), self.q_hold)
        schedule = self.nc.schedule_for(self.command)
        self.planner = FootPlanner(schedule, self.robot.legs, self.ctrl.wbc,
                                   feet)
        self.ms = 0
        self.next_nmpc = 0
        self.nmpc_idx = 0
        self.latest = None
        self.flags = contact_flags(schedule, 0.0)
        self.wbc_forces = np.zeros((4, 3))
        self.wbc_torques = np.zeros(12)
        self.u_arm_cmd = np.zeros(4)
        self.iters, self.kkts, self.stimes = [], [], []
        self.counters = dict(dynamics=0, coupling=0, pyramid=0, selection=0,
                             torque=0, over_iteration=0)
        self.qp_failures = 0
        self.track_sq = 0.0
        self.track_n = 0
        self.x_start = float(x_srb[0])
        self.termination = "running"
        self._wbc_warm = None
        self.extra_pushes = []  # (t_start, duration, force) injected live
        self._lock = threading.Lock()

    # ---- live-mode interface ----------------------------------------------

    def set_command(self, command: ReferenceCommand):
        with self._lock:
            self.command = command

    def inject_push(self, force, duration):
        with self._lock:
            self.extra_pushes.append((self.t, float(duration),
                                      np.asarray(force, float)))

    def add_payload(self, mass):
        with self._lock:
            self.plant.payload_mass += float(mass)

    def publish_solution(self, sol):
        with self._lock:
            self._record_solution(sol)

    def measured_state(self):
        with self._lock:
            return (self.t, self.plant.x_srb.copy(), self.plant.x_arm.copy(),
                    self.plant.feet.copy(), self.command)

    # ---- core ---------------------------------------------------------------

    @property
    def t(self):
        return self.ms * 1e-3

    def _record_solution(self, sol):
        self.latest = sol
        self.u_arm_cmd = sol.ua[0].copy()
        self.iters.append(sol.iterations)
        self.kkts.append(sol.kkt_residual)
        self.stimes.append(sol.solve_time)
        v = sol.violations
        self.counters["dynamics"] += v["dynamics_defect"] > 1e-4
        self.counters["coupling"] += v["phi_ddot"] > 1e-4
        self.counters["pyramid"] += v["pyramid_violation"] > 1e-6
        self.counters["selection"] += v["selection_violation"] > 0.0
        self.counters["torque"] += v["torque_violation"] > 1e-9
        self.counters["over_iteration"] += (
            sol.iterations > self.ctrl.nmpc.max_iterations)
        self.qp_failures += sol.status != "Optimal"

    def step_ms(self, solve_inline=True, scripted=True):
        """Advance one plant millisecond; returns False when terminated."""
        if self.termination != "running":
            return False
        t = self.t
        if scripted:
            self.command = _command_from(self.scenario.command_at(t),
                                         self.q_hold)
        cmd = self.command
        schedule = self.nc.schedule_for(cmd)
        self.planner.schedule = schedule

        if solve_inline and self.ms == self.next_nmpc:
            sol = self.nc.solve_cycle(t, self.plant.x_srb, self.plant.x_arm,
                                      cmd, self.plant.feet)
            self._record_solution(sol)
            self.next_nmpc += NMPC_PATTERN[self.nmpc_idx % 3]
            self.nmpc_idx += 1

        if self.ms % 2 == 0 and self.latest is not None:
            yaw = self.plant.x_srb[8]
            v_ref = np.array([
                np.cos(yaw) * cmd.vx - np.sin(yaw) * cmd.vy,
                np.sin(yaw) * cmd.vx + np.cos(yaw) * cmd.vy, 0.0])
            foot_cmds = self.planner.update(
                t, self.plant.x_srb, v_ref,
                terrain_height=self.terrain.height,
                stance_trim=self.nc.stance_trim)
            self.flags = contact_flags(schedule, t)
            for l in range(4):
                self.plant.feet[l] = foot_cmds[l][1]
            out = output_vector(self.plant.x_srb, self.latest.xs[1])
            try:
                wbc_sol, qp_sol = solve_wbc(
                    out, self.latest.us[0], self.latest.lam[0], self.flags,
                    self.plant.x_srb, self.plant.feet, self.robot.srb,
                    self.robot.legs, self.ctrl.wbc, mu=self.scenario.mu,
                    warm=self._wbc_warm)
                self.wbc_forces = wbc_sol.forces
                self.wbc_torques = wbc_sol.torques
                self._wbc_warm = qp_sol
            except QpFailure:
                self.qp_failures += 1  # hold the previous command
            self.track_sq += float(
                np.sum((self.plant.x_srb[3:5] - v_ref[:2]) ** 2))
            self.track_n += 1

        if scripted:
            for ev in self.scenario.payloads:
                if abs(t - float(ev["t"])) < 5e-4:
                    self.plant.payload_mass += float(ev["mass"])
        f_push = np.zeros(3)
        if scripted:
            for ev in self.scenario.pushes:
                t0p = float(ev["t"])
                if t0p <= t < t0p + float(ev["duration"]):
                    f_push += np.asarray(ev["force"], float)
        for t0p, dur, force in self.extra_pushes:
            if t0p <= t < t0p + dur:
                f_push = f_push + force
        cart = None
        if self.scenario.cart is not None:
            cart = (float(self.scenario.cart.get("c0", 0.0)),
                    float(self.scenario.cart.get("c1", 0.0)))
        f_ee = self.plant.ee_force(
            v_cmd_resist=cmd.vx if cart else 0.0, cart=cart)

        gated = np.zeros((4, 3))
        for l in range(4):
            fp = self.plant.feet[l]
            if self.flags[l] and fp[2] <= self.terrain.height(fp[0], fp[1]) + 2e-3:
                gated[l] = self.wbc_forces[l]
        try:
            self.plant.step(gated, self.u_arm_cmd, f_push=f_push, f_ee=f_ee)
        except NumericalBlowup:
            self.termination = "numerical_blowup"
            return False
        xs = self.plant.x_srb
        if (abs(xs[6]) > self.scenario.roll_pitch_limit
                or abs(xs[7]) > self.scenario.roll_pitch_limit
                or xs[2] < self.scenario.min_height):
            self.termination = "instability"
            return False
        self.ms += 1
        if (self.scenario.stop_at_distance
                and self.scenario.min_distance is not None
                and xs[0] - self.x_start >= self.scenario.min_distance):
            self.termination = "completed"
            return False
        return True

    def result(self) -> RunResult:
        if self.termination == "running":
            self.termination = "completed"
        distance = float(self.plant.x_srb[0] - self.x_start)
        need = self.scenario.min_distance
        success = self.termination == "completed" and (
            need is None or distance >= need - 1e-9)
        res = RunResult(
            name=self.scenario.name,
            success=bool(success),
            distance=distance,
            duration=self.plant.t,
            termination=self.termination,
            tracking_rms=float(np.sqrt(self.track_sq / max(self.track_n, 1))),
            nmpc_cycles=len(self.iters),
            nmpc_iterations=self.iters,
            nmpc_kkt=self.kkts,
            solve_times=self.stimes,
            violation_counters=self.counters,
            qp_failures=int(self.qp_failures),
            final_state=np.concatenate([self.plant.x_srb, self.plant.x_arm]),
        )
        res.digest = res.determinism_digest()
        return res

    def snapshot(self, version=1):
        """Telemetry snapshot for the teleop wire (plain JSON types)."""
        with self._lock:
            sol = self.latest
            cmd = self.command
            yaw = float(self.plant.x_srb[8])
            v_ref = [
                float(np.cos(yaw) * cmd.vx - np.sin(yaw) * cmd.vy),
                float(np.sin(yaw) * cmd.vx + np.cos(yaw) * cmd.vy),
            ]
            return {
                "v": version,
                "type": "snapshot",
                "t": self.t,
                "srb": [float(x) for x in self.plant.x_srb],
                "arm": [float(x) for x in self.plant.x_arm],
                "contacts": [bool(f) for f in self.flags],
                "feet": [[float(v) for v in f] for f in self.plant.feet],
                "ref_velocity": v_ref,
                "opt_velocity": [float(sol.xs[1, 3]), float(sol.xs[1, 4])]
                if sol is not None else [0.0, 0.0],
                "arm_q": [float(v) for v in self.plant.x_arm[6:10]],
                "arm_q_ref": [float(v) for v in (cmd.arm_q if cmd.arm_q
                                                 is not None else [0] * 4)],
                "solve": {
                    "iterations": int(sol.iterations) if sol else 0,
                    "kkt": float(sol.kkt_residual) if sol else 0.0,
                    "time_ms": 1e3 * float(sol.solve_time) if sol else 0.0,
                },
                "payload_mass": float(self.plant.payload_mass),
                "push_active": bool(any(
                    t0 <= self.t < t0 + d for t0, d, _ in self.extra_pushes)),
                "terrain": self.terrain.summary(),
            }


def run_scenario(scenario: Scenario, controller_overrides=None) -> RunResult:
    """Closed-loop lockstep run of one scenario (deterministic)."""
    session = SimSession(scenario, controller_overrides)
    duration_ms = int(round(scenario.duration * 1000))
    while session.ms < duration_ms:
        if not session.step_ms(solve_inline=True, scripted=True):
            break
    return session.result()
