"""Decomposition-based NMPC for quadrupedal loco-manipulation.

A single-rigid-body locomotion template is rigidly coupled to a full-order
4-DoF arm through holonomic constraints; a unified SQP-based NMPC optimizes
both subsystems plus the interaction wrench at 60 Hz, a whole-body QP tracks
the locomotion trajectories at 500 Hz, and a desk-scale plant closes the loop
at 1 kHz.
"""

__version__ = "0.1.0"
