import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dalksim import controller as ctl
from dalksim import dsp
from dalksim.tracking import LayerEstimate


def estimate(gap=300.0, epi_px=150.0, valid=True, seq=0, epi_valid=None):
    return LayerEstimate(
        epi_px=epi_px, dm_px=epi_px + 100.0,
        epi_um=epi_px * dsp.DZ_AIR_UM, dm_um=500.0 + gap,
        needle_tip_um=500.0, gap_above_dm_um=gap,
        valid_epi=valid if epi_valid is None else epi_valid,
        valid_dm=valid, frame_seq=seq,
    )


def running_state():
    s = ctl.ControllerState()
    ctl.attach(s)
    s.transition(ctl.CONTACT)
    s.transition(ctl.RUNNING)
    return s


AXIS = dsp.DepthAxis()
CFG = ctl.ControllerConfig(target_gap=100.0, step_size=40.0)


def test_detect_contact_examples():
    offset_optical = CFG.needle_offset_optical_um
    assert offset_optical == pytest.approx(660.5)
    est = estimate(epi_px=660.0 / dsp.DZ_AIR_UM)
    assert ctl.detect_contact(est, offset_optical, AXIS)
    est_far = estimate(epi_px=900.0 / dsp.DZ_AIR_UM)
    assert not ctl.detect_contact(est_far, offset_optical, AXIS)
    est_invalid = estimate(epi_valid=False)
    assert not ctl.detect_contact(est_invalid, offset_optical, AXIS)


def test_plan_cycle_full_step_outside_slow_zone():
    s = running_state()
    cmd, events = ctl.plan_cycle(s, estimate(gap=250.0), CFG)  # gap_to_target = 150
    assert cmd == ctl.Command(ctl.ADVANCE, delta_um=40.0)


def test_plan_cycle_half_step_inside_slow_zone():
    s = running_state()
    cmd, events = ctl.plan_cycle(s, estimate(gap=180.0), CFG)  # gap_to_target = 80
    assert cmd == ctl.Command(ctl.ADVANCE, delta_um=20.0)
    assert any(e["kind"] == "slow_zone_entered" for e in events)


def test_plan_cycle_stops_and_notifies_at_target():
    s = running_state()
    cmd, events = ctl.plan_cycle(s, estimate(gap=100.0), CFG)
    assert cmd is None
    assert s.phase == ctl.TARGET_REACHED
    assert any(e["kind"] == "target_reached" and e.get("notify") == "operator"
               for e in events)


def test_plan_cycle_two_advances_then_rotate():
    s = running_state()
    kinds = []
    for _ in range(6):
        cmd, _ = ctl.plan_cycle(s, estimate(gap=400.0), CFG)
        kinds.append(cmd.kind)
    assert kinds == [ctl.ADVANCE, ctl.ADVANCE, ctl.ROTATE] * 2


def test_travel_limit_stops_with_event():
    s = running_state()
    s.cumulative_travel = CFG.max_travel - 10.0
    cmd, events = ctl.plan_cycle(s, estimate(gap=400.0), CFG)
    assert cmd is None
    assert s.phase == ctl.TARGET_REACHED and s.limit_hit
    assert any(e["kind"] == "travel_limit" for e in events)


def test_invalid_estimates_hold_then_error():
    s = running_state()
    bad = estimate(valid=False)
    for _ in range(ctl.MAX_INVALID_FRAMES):
        cmd, events = ctl.plan_cycle(s, bad, CFG)
        assert cmd is None and s.phase == ctl.RUNNING
    cmd, events = ctl.plan_cycle(s, bad, CFG)
    assert s.phase == ctl.ERROR


def test_retract_reverses_travel_plus_clearance():
    s = running_state()
    s.cumulative_travel = 850.0
    s.transition(ctl.TARGET_REACHED)
    cmds = ctl.retract(s, CFG)
    assert cmds == [ctl.Command(ctl.RETRACT, delta_um=1050.0)]
    assert s.phase == ctl.RETRACTING
    ctl.finish_retraction(s)
    assert s.phase == ctl.IDLE


def test_retract_with_zero_travel_is_just_clearance():
    s = running_state()
    s.transition(ctl.TARGET_REACHED)
    assert ctl.retract(s, CFG)[0].delta_um == pytest.approx(200.0)


def test_retract_requires_terminal_phase():
    with pytest.raises(ValueError):
        ctl.retract(running_state(), CFG)


def test_illegal_transition_rejected():
    s = ctl.ControllerState()
    with pytest.raises(ValueError):
        s.transition(ctl.RUNNING)


def test_teleop_step_passthrough():
    cfg = ctl.ControllerConfig(mode="teleop", step_size=40.0)
    s = ctl.ControllerState()
    ctl.attach(s)
    cmds, events = ctl.tick(s, estimate(gap=400.0, epi_px=300.0), cfg, 0.0, AXIS,
                            operator_commands=[("step_down", 50.0)])
    assert ctl.Command(ctl.ADVANCE, delta_um=50.0) in cmds


def test_teleop_rejects_out_of_range_step():
    cfg = ctl.ControllerConfig(mode="teleop")
    s = ctl.ControllerState()
    ctl.attach(s)
    cmds, events = ctl.tick(s, estimate(), cfg, 0.0, AXIS,
                            operator_commands=[("step_down", 151.0)])
    assert cmds == []
    assert any(e["kind"] == "rejected" for e in events)


def test_seq_regression_raises_protocol_event():
    cfg = ctl.ControllerConfig(mode="autonomous")
    s = ctl.ControllerState()
    ctl.attach(s)
    ctl.tick(s, estimate(seq=10, epi_px=300.0), cfg, 0.0, AXIS)
    cmds, events = ctl.tick(s, estimate(seq=4, epi_px=300.0), cfg, 0.1, AXIS)
    assert any(e["kind"] == "protocol_error" for e in events)


def test_clock_must_be_monotone():
    cfg = ctl.ControllerConfig()
    s = ctl.ControllerState()
    ctl.attach(s)
    ctl.tick(s, estimate(epi_px=300.0), cfg, 5.0, AXIS)
    with pytest.raises(ValueError):
        ctl.tick(s, estimate(epi_px=300.0), cfg, 4.0, AXIS)


@given(gaps=st.lists(st.floats(min_value=-50.0, max_value=900.0), min_size=3, max_size=60))
@settings(max_examples=60)
def test_commanded_travel_monotone_until_target(gaps):
    cfg = ctl.ControllerConfig(target_gap=100.0, step_size=20.0)
    s = ctl.ControllerState()
    ctl.attach(s)
    t, prev_travel = 0.0, 0.0
    for i, gap in enumerate(gaps):
        est = estimate(gap=gap, epi_px=100.0, seq=i)
        ctl.tick(s, est, cfg, t, AXIS)
        assert s.cumulative_travel >= prev_travel
        assert s.cumulative_travel <= cfg.max_travel
        prev_travel = s.cumulative_travel
        t += 0.15
        if s.phase in (ctl.TARGET_REACHED, ctl.ERROR):
            break


@given(gaps=st.lists(st.floats(min_value=90.0, max_value=2000.0), min_size=1, max_size=200))
@settings(max_examples=40)
def test_travel_gate_under_adversarial_estimates(gaps):
    cfg = ctl.ControllerConfig(target_gap=10.0, step_size=150.0)
    s = ctl.ControllerState()
    ctl.attach(s)
    t = 0.0
    for i, gap in enumerate(gaps):
        ctl.tick(s, estimate(gap=gap, epi_px=100.0, seq=i), cfg, t, AXIS)
        t += 0.15
        if s.phase in (ctl.TARGET_REACHED, ctl.ERROR):
            break
    assert s.cumulative_travel <= cfg.max_travel