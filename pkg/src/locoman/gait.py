"""Trot gait scheduling and the GRF-availability selection matrix.

Feet are ordered (FL, FR, RL, RR). Diagonal pairs share phase: {FL, RR} at
offset 0, {FR, RL} at offset 0.5. With the default 200 ms cycle and stance
fraction 0.5 the pairs alternate every 100 ms. Horizon contact flags are
sampled at interval midpoints so a touchdown landing exactly on a node never
flips a whole interval.
"""

from dataclasses import dataclass, field

import numpy as np

FOOT_NAMES = ("FL", "FR", "RL", "RR")
_TROT_OFFSETS = np.array([0.0, 0.5, 0.5, 0.0])


@dataclass(frozen=True)
class GaitSchedule:
    step_time: float = 0.2  # full gait cycle, s
    stance_fraction: float = 0.5
    phase_offsets: np.ndarray = field(default_factory=lambda: _TROT_OFFSETS.copy())
    standing: bool = False  # all-stance mode (speed deadband, config-selected)

    def phase(self, t, foot):
        return (t / self.step_time + self.phase_offsets[foot]) % 1.0


def contact_flags(schedule: GaitSchedule, t: float):
    """Stance booleans for each foot at time t (deterministic, periodic)."""
    if schedule.standing:
        return np.ones(4, dtype=bool)
    out = np.empty(4, dtype=bool)
    for foot in range(4):
        out[foot] = schedule.phase(t, foot) < schedule.stance_fraction
    return out


def stance_phase(schedule: GaitSchedule, t: float, foot: int):
    """(in_stance, phase within the current stance or swing segment in [0,1))."""
    if schedule.standing:
        return True, 0.0
    ph = schedule.phase(t, foot)
    if ph < schedule.stance_fraction:
        return True, ph / schedule.stance_fraction
    return False, (ph - schedule.stance_fraction) / (1.0 - schedule.stance_fraction)


def stance_duration(schedule: GaitSchedule):
    return schedule.step_time * schedule.stance_fraction


def swing_duration(schedule: GaitSchedule):
    return schedule.step_time * (1.0 - schedule.stance_fraction)


def selection_matrix(flags):
    """E with one row per unavailable (swing) GRF component: E u = 0."""
    flags = np.asarray(flags, dtype=bool)
    rows = []
    for foot in range(4):
        if not flags[foot]:
            for axis in range(3):
                row = np.zeros(12)
                row[3 * foot + axis] = 1.0
                rows.append(row)
    if not rows:
        return np.zeros((0, 12))
    return np.array(rows)


def predicted_contact_sequence(schedule: GaitSchedule, t: float, n: int, ts: float):
    """Contact flags over the horizon, sampled at interval midpoints."""
    return np.array(
        [contact_flags(schedule, t + (k + 0.5) * ts) for k in range(n)]
    )
