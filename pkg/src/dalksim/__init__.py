"""Closed-loop simulator for OCT-guided autonomous needle insertion (DALK).

Subsystems: layered cornea phantom with needle interaction, common-path
A-scan reconstruction, segmentation + Kalman layer tracking, differential
screw robot kinematics, autonomous depth controller, binary wire protocol,
and a seeded trial harness.
"""

__version__ = "0.1.0"
