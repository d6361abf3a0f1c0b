"""Differential-screw needle drive: kinematics, calibration, travel accounting,
and positioning-accuracy analytics in the ISO 230-2 style.

Two symmetric steppers drive the needle housing. With the left motor held,
the right motor acts as a lead screw (pure translation); both motors at the
same speed spin the housing without translation (pure rotation); a speed
difference screws the needle down or up. Commanded travel maps to measured
travel through the bench calibration y = 0.96 x, so command compensation
divides by the calibration scale before quantizing to whole steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_CAL_SCALE = 0.96
DEFAULT_MEAN_ABS_DEVIATION_UM = 3.88
# per-command Gaussian sigma whose folded mean |e| equals the bench's 3.88 um
DEFAULT_NOISE_SIGMA_UM = DEFAULT_MEAN_ABS_DEVIATION_UM * float(np.sqrt(np.pi / 2.0))


class TravelLimitError(RuntimeError):
    pass


@dataclass(frozen=True)
class RobotKinematics:
    screw_pitch: float = 500.0  # um per revolution
    steps_per_rev: int = 3200
    cal_scale: float = DEFAULT_CAL_SCALE
    max_travel: float = 1500.0
    max_thrust_n: float = 5.0

    def __post_init__(self):
        if self.screw_pitch <= 0 or self.steps_per_rev <= 0:
            raise ValueError("pitch and steps_per_rev must be positive")
        if not 0 < self.cal_scale <= 1.2:
            raise ValueError("cal_scale out of range")

    @property
    def um_per_step(self) -> float:
        """Nominal (uncalibrated) translation per differential step."""
        return self.screw_pitch / self.steps_per_rev

    @property
    def step_quantum_um(self) -> float:
        """Smallest achievable calibrated translation."""
        return self.cal_scale * self.um_per_step


@dataclass(frozen=True)
class MotorCommand:
    right_steps: int = 0
    left_steps: int = 0
    rotate_flag: bool = False


def command_to_motion(kin: RobotKinematics, cmd: MotorCommand,
                      position_um: float = 0.0) -> tuple[float, float]:
    """(dz um, dtheta revolutions) produced by one command.

    right == left spins the housing in place; left == 0 is a pure lead-screw
    translation; positive differential drives the needle down.
    """
    dz = kin.cal_scale * (cmd.right_steps - cmd.left_steps) * kin.um_per_step
    dtheta = cmd.left_steps / kin.steps_per_rev
    if position_um + dz > kin.max_travel + 1e-9:
        raise TravelLimitError(f"command would exceed {kin.max_travel} um travel")
    return dz, dtheta


def compensate(kin: RobotKinematics, target_dz: float,
               position_um: float = 0.0) -> MotorCommand:
    """Differential step command whose calibrated motion lands within one
    step quantum of target_dz."""
    if position_um + target_dz > kin.max_travel + 1e-9:
        raise TravelLimitError("target beyond remaining travel")
    steps = int(round(target_dz / kin.cal_scale / kin.um_per_step))
    if steps >= 0:
        return MotorCommand(right_steps=steps, left_steps=0)
    return MotorCommand(right_steps=0, left_steps=-steps)


def rotation_command(kin: RobotKinematics, revolutions: float = 0.25) -> MotorCommand:
    steps = int(round(revolutions * kin.steps_per_rev))
    return MotorCommand(right_steps=steps, left_steps=steps, rotate_flag=True)


@dataclass
class RobotAxis:
    """Sequentially-commanded axis with position bookkeeping.

    min_position allows the retraction clearance above the attach zero; the
    hard gate is the downward travel limit.
    """

    kin: RobotKinematics = field(default_factory=RobotKinematics)
    position_um: float = 0.0
    cumulative_travel_um: float = 0.0
    min_position_um: float = -300.0

    def apply(self, cmd: MotorCommand, noise_um: float = 0.0) -> tuple[float, float]:
        dz, dtheta = command_to_motion(self.kin, cmd, position_um=self.position_um)
        if self.position_um + dz < self.min_position_um - 1e-9:
            raise TravelLimitError("command would exceed retraction headroom")
        dz_actual = dz + noise_um
        self.position_um += dz_actual
        self.cumulative_travel_um += abs(dz_actual)
        return dz_actual, dtheta


# -- ISO 230-2 style analytics ---------------------------------------------------


@dataclass
class IsoReport:
    targets_um: np.ndarray
    per_position_mean_dev: np.ndarray
    per_position_std: np.ndarray
    mean_abs_deviation: float
    repeatability: float  # 4 x max per-position sigma
    accuracy: float  # |grand mean deviation| + 2 x max sigma
    deviations: np.ndarray  # (runs, directions, positions)

    def table(self) -> str:
        lines = ["position_um\tmean_dev_um\tstd_um"]
        for t, m, s in zip(self.targets_um, self.per_position_mean_dev, self.per_position_std):
            lines.append(f"{t:.3f}\t{m:.4f}\t{s:.4f}")
        lines.append(f"# mean|deviation| = {self.mean_abs_deviation:.4f} um")
        lines.append(f"# repeatability   = {self.repeatability:.4f} um")
        lines.append(f"# accuracy        = {self.accuracy:.4f} um")
        return "\n".join(lines)


def iso_targets(p: float, seed: int = 0, n_positions: int = 10,
                max_travel: float = 1500.0) -> np.ndarray:
    """Target ladder p_i = (i-1) p + r with r uniform within +-30% of p.

    Draws that fall outside [0, max_travel] are redrawn; a ladder whose
    nominal span cannot fit the travel at all is rejected.
    """
    if p <= 0:
        raise ValueError("nominal interval must be positive")
    if (n_positions - 1) * p - 0.3 * p > max_travel:
        raise ValueError("target ladder exceeds the travel length")
    rng = np.random.default_rng(seed)
    targets = np.empty(n_positions)
    for i in range(1, n_positions + 1):
        for _ in range(1000):
            r = rng.uniform(-0.3 * p, 0.3 * p)
            pos = (i - 1) * p + r
            if 0.0 <= pos <= max_travel:
                targets[i - 1] = pos
                break
        else:
            raise ValueError("could not draw a target inside the travel range")
    return targets


def iso_metrics(targets_um: np.ndarray, measured_um: np.ndarray) -> IsoReport:
    """Deviation/repeatability/accuracy from bidirectional approach sets.

    measured_um has shape (n_runs, 2, n_positions): runs x approach
    direction x target. Per position, both directions pool into one
    deviation sample; repeatability is four times the largest per-position
    sample standard deviation.
    """
    targets_um = np.asarray(targets_um, dtype=np.float64)
    measured = np.asarray(measured_um, dtype=np.float64)
    if measured.ndim != 3 or measured.shape[1] != 2 or measured.shape[2] != targets_um.size:
        raise ValueError("measurements must have shape (runs, 2, positions)")
    if measured.shape[0] < 5:
        raise ValueError("at least 5 bidirectional runs are required")
    dev = measured - targets_um[None, None, :]
    per_pos = dev.reshape(-1, targets_um.size)
    mean_dev = per_pos.mean(axis=0)
    std_dev = per_pos.std(axis=0, ddof=1)
    max_sigma = float(std_dev.max())
    return IsoReport(
        targets_um=targets_um,
        per_position_mean_dev=mean_dev,
        per_position_std=std_dev,
        mean_abs_deviation=float(np.abs(per_pos).mean()),
        repeatability=4.0 * max_sigma,
        accuracy=float(abs(per_pos.mean()) + 2.0 * max_sigma),
        deviations=dev,
    )
