"""Depth-feedback needle controller: mode machine, gating, step planning.

Autonomous operation runs one planning cycle per incoming layer estimate.
Advancing requires the tracked gap above the membrane to stay wider than
the target and the insertion odometer to stay inside the travel limit.
Within the slow zone (last 100 um before target) every advance uses half
the preset step; each planning round issues two ADVANCE primitives and one
ROTATE, one primitive per cycle. Reaching the target (or the travel limit)
stops the drive and notifies the operator, who selects the retraction
routine; retraction reverses the insertion travel plus a fixed clearance.

Teleoperation executes discrete operator commands (step up/down within the
1-150 um bound, rotation on/off, ranges) and never advances on its own.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import dsp

CYCLE_PERIOD_S = 1.0 / 6.64  # end-to-end refresh of the tracking pipeline

IDLE = "IDLE"
ATTACHED = "ATTACHED"
CONTACT = "CONTACT"
RUNNING = "RUNNING"
TARGET_REACHED = "TARGET_REACHED"
RETRACTING = "RETRACTING"
ERROR = "ERROR"

PHASES = (IDLE, ATTACHED, CONTACT, RUNNING, TARGET_REACHED, RETRACTING, ERROR)

_LEGAL = {
    IDLE: {ATTACHED},
    ATTACHED: {CONTACT, ERROR, IDLE},
    CONTACT: {RUNNING, ERROR, IDLE, TARGET_REACHED},
    RUNNING: {TARGET_REACHED, ERROR},
    TARGET_REACHED: {RETRACTING},
    ERROR: {RETRACTING},
    RETRACTING: {IDLE},
}

STEP_MIN_UM = 1.0
STEP_MAX_UM = 150.0
MAX_INVALID_FRAMES = 3

ADVANCE = "ADVANCE"
ROTATE = "ROTATE"
ROTATE_ON = "ROTATE_ON"
RETRACT = "RETRACT"


@dataclass(frozen=True)
class ControllerConfig:
    target_gap: float = 100.0
    step_size: float = 10.0
    slow_zone: float = 100.0
    mode: str = "autonomous"  # or "teleop"
    max_travel: float = 1500.0
    contact_tolerance_um: float = 10.0
    retract_clearance_um: float = 200.0
    fiber_offset_um: float = 500.0
    n_s: float = dsp.DEFAULT_N_S

    def __post_init__(self):
        if not STEP_MIN_UM <= self.step_size <= STEP_MAX_UM:
            raise ValueError(f"step size must be within [{STEP_MIN_UM}, {STEP_MAX_UM}] um")
        if self.target_gap < 0:
            raise ValueError("target gap must be non-negative")
        if self.mode not in ("autonomous", "teleop"):
            raise ValueError("mode must be autonomous or teleop")

    @property
    def needle_offset_optical_um(self) -> float:
        return dsp.needle_offset_optical(self.fiber_offset_um, self.n_s)


@dataclass(frozen=True)
class Command:
    kind: str  # ADVANCE | ROTATE | ROTATE_ON | RETRACT
    delta_um: float = 0.0


@dataclass
class CyclePlan:
    """Two advances and one rotation per planning round, one per cycle."""

    primitives: tuple = (ADVANCE, ADVANCE, ROTATE)

    def primitive_at(self, cycle_index: int) -> str:
        return self.primitives[cycle_index % len(self.primitives)]


@dataclass
class ControllerState:
    phase: str = IDLE
    cumulative_travel: float = 0.0
    cycle_index: int = 0
    tick_count: int = 0
    last_estimate: object = None
    last_seq: int = -1
    last_clock: float = float("-inf")
    invalid_streak: int = 0
    rotation_on: bool = False
    in_slow_zone: bool = False
    contact_tick: Optional[int] = None
    target_tick: Optional[int] = None
    limit_hit: bool = False
    plan: CyclePlan = field(default_factory=CyclePlan)

    def transition(self, new_phase: str):
        if new_phase == self.phase:
            return
        if new_phase not in _LEGAL.get(self.phase, set()):
            raise ValueError(f"illegal phase transition {self.phase} -> {new_phase}")
        self.phase = new_phase


def _event(state, kind, **data):
    ev = {"tick": state.tick_count, "kind": kind}
    ev.update(data)
    return ev


def detect_contact(estimate, needle_offset_optical_um: float,
                   axis: dsp.DepthAxis, tolerance_um: float = 10.0) -> bool:
    """Contact surrogate: the epithelium line has reached the optical mark
    where the needle tip would sit when fully immersed."""
    if estimate is None or not estimate.valid_epi:
        return False
    epi_optical = axis.row_to_optical_um(estimate.epi_px)
    return epi_optical <= needle_offset_optical_um + tolerance_um


def plan_cycle(state: ControllerState, estimate, config: ControllerConfig):
    """One autonomous planning cycle; returns (command | None, events)."""
    if state.phase != RUNNING:
        raise ValueError("plan_cycle requires the RUNNING phase")
    events = []
    if estimate is None or not estimate.valid_dm:
        state.invalid_streak += 1
        if state.invalid_streak > MAX_INVALID_FRAMES:
            state.transition(ERROR)
            events.append(_event(state, "error", reason="layer traces invalid"))
        else:
            events.append(_event(state, "hold", reason="invalid estimate"))
        return None, events
    state.invalid_streak = 0

    gap_to_target = estimate.gap_above_dm_um - config.target_gap
    if gap_to_target <= 0:
        state.transition(TARGET_REACHED)
        state.target_tick = state.tick_count
        events.append(_event(state, "target_reached", gap_um=estimate.gap_above_dm_um,
                             notify="operator"))
        return None, events

    in_slow = gap_to_target < config.slow_zone
    if in_slow and not state.in_slow_zone:
        events.append(_event(state, "slow_zone_entered", gap_to_target_um=gap_to_target))
    state.in_slow_zone = in_slow
    delta = config.step_size / 2.0 if in_slow else config.step_size

    if state.cumulative_travel + delta > config.max_travel:
        state.transition(TARGET_REACHED)
        state.target_tick = state.tick_count
        state.limit_hit = True
        events.append(_event(state, "travel_limit", travel_um=state.cumulative_travel,
                             notify="operator"))
        return None, events

    primitive = state.plan.primitive_at(state.cycle_index)
    state.cycle_index += 1
    if primitive == ROTATE:
        events.append(_event(state, "rotate"))
        return Command(ROTATE), events
    state.cumulative_travel += delta
    events.append(_event(state, "advance", delta_um=delta,
                         gap_to_target_um=gap_to_target, half_step=in_slow,
                         step_size_um=config.step_size,
                         travel_um=state.cumulative_travel))
    return Command(ADVANCE, delta_um=delta), events


def retract(state: ControllerState, config: ControllerConfig):
    """Retraction routine: reverse the insertion travel plus the clearance."""
    if state.phase not in (TARGET_REACHED, ERROR):
        raise ValueError("retract requires TARGET_REACHED or ERROR")
    total = state.cumulative_travel + config.retract_clearance_um
    state.transition(RETRACTING)
    return [Command(RETRACT, delta_um=total)]


def finish_retraction(state: ControllerState):
    state.transition(IDLE)


def attach(state: ControllerState):
    state.transition(ATTACHED)


def tick(state: ControllerState, estimate, config: ControllerConfig, clock_s: float,
         axis: dsp.DepthAxis, operator_commands=None):
    """Advance the machine by one estimate; returns (commands, events)."""
    if clock_s < state.last_clock:
        raise ValueError("clock must be monotone")
    state.last_clock = clock_s
    commands, events = [], []

    if estimate is not None:
        if estimate.frame_seq < state.last_seq:
            events.append(_event(state, "protocol_error",
                                 reason="estimate seq regression",
                                 seq=estimate.frame_seq, last_seq=state.last_seq))
            state.tick_count += 1
            return commands, events
        state.last_seq = estimate.frame_seq
        state.last_estimate = estimate
        if estimate.quality_warning:
            events.append(_event(state, "quality_warning"))

    if state.phase in (ATTACHED, CONTACT) and detect_contact(
            estimate, config.needle_offset_optical_um, axis, config.contact_tolerance_um):
        if state.phase == ATTACHED:
            state.transition(CONTACT)
            state.contact_tick = state.tick_count
            events.append(_event(state, "contact", epi_px=estimate.epi_px,
                                 correction="activate"))

    if config.mode == "teleop":
        commands_t, events_t = _teleop(state, config, operator_commands or [])
        commands.extend(commands_t)
        events.extend(events_t)
    else:
        commands_a, events_a = _autonomous(state, estimate, config)
        commands.extend(commands_a)
        events.extend(events_a)

    state.tick_count += 1
    return commands, events


def _autonomous(state, estimate, config):
    commands, events = [], []
    if not state.rotation_on and state.phase in (ATTACHED, CONTACT, RUNNING):
        # razor needle cuts only while spinning; enable before any advance
        state.rotation_on = True
        commands.append(Command(ROTATE_ON))
        events.append(_event(state, "rotation_enabled"))
    if state.phase == ATTACHED:
        cmd, ev = _approach(state, estimate, config)
        commands.extend(cmd)
        events.extend(ev)
    elif state.phase == CONTACT:
        state.transition(RUNNING)
        events.append(_event(state, "autonomous_running"))
    elif state.phase == RUNNING:
        cmd, ev = plan_cycle(state, estimate, config)
        if cmd is not None:
            commands.append(cmd)
        events.extend(ev)
    return commands, events


def _approach(state, estimate, config):
    """Pre-contact advance; uses the same gap gating so the half-step rule
    holds for every logged advance."""
    events = []
    if estimate is None or not estimate.valid_epi:
        state.invalid_streak += 1
        if state.invalid_streak > MAX_INVALID_FRAMES:
            state.transition(ERROR)
            events.append(_event(state, "error", reason="no epithelium trace"))
        return [], events
    state.invalid_streak = 0
    gap_to_target = float("inf")
    if estimate.valid_dm:
        gap_to_target = estimate.gap_above_dm_um - config.target_gap
        if gap_to_target <= 0:
            state.transition(CONTACT)  # degenerate: already at depth before contact
            state.transition(TARGET_REACHED)
            state.target_tick = state.tick_count
            events.append(_event(state, "target_reached",
                                 gap_um=estimate.gap_above_dm_um, notify="operator"))
            return [], events
    delta = config.step_size / 2.0 if gap_to_target < config.slow_zone else config.step_size
    if state.cumulative_travel + delta > config.max_travel:
        state.transition(ERROR)
        events.append(_event(state, "error", reason="travel limit before contact"))
        return [], events
    state.cumulative_travel += delta
    events.append(_event(state, "advance", delta_um=delta,
                         gap_to_target_um=gap_to_target, half_step=gap_to_target < config.slow_zone,
                         step_size_um=config.step_size, travel_um=state.cumulative_travel))
    return [Command(ADVANCE, delta_um=delta)], events


def _teleop(state, config, operator_commands):
    commands, events = [], []
    for op in operator_commands:
        kind = op[0]
        if kind in ("step_down", "step_up"):
            delta = float(op[1])
            if not STEP_MIN_UM <= delta <= STEP_MAX_UM:
                events.append(_event(state, "rejected", op=kind, operand=delta,
                                     reason="step outside 1-150 um"))
                continue
            signed = delta if kind == "step_down" else -delta
            if signed > 0 and state.cumulative_travel + signed > config.max_travel:
                events.append(_event(state, "rejected", op=kind, reason="travel limit"))
                continue
            state.cumulative_travel += max(signed, 0.0)
            commands.append(Command(ADVANCE, delta_um=signed))
            events.append(_event(state, "advance", delta_um=signed, teleop=True,
                                 travel_um=state.cumulative_travel))
        elif kind == "rotate_on":
            state.rotation_on = True
            commands.append(Command(ROTATE_ON))
        elif kind == "rotate_off":
            state.rotation_on = False
        elif kind == "retract":
            if state.phase in (TARGET_REACHED, ERROR):
                commands.extend(retract(state, config))
            else:
                events.append(_event(state, "rejected", op=kind, reason="phase"))
        elif kind == "stop":
            if state.phase in (ATTACHED, CONTACT, RUNNING):
                if state.phase == ATTACHED:
                    state.transition(CONTACT)
                state.transition(TARGET_REACHED)
                state.target_tick = state.tick_count
                events.append(_event(state, "operator_stop"))
        else:
            events.append(_event(state, "rejected", op=kind, reason="unknown"))
    return commands, events
