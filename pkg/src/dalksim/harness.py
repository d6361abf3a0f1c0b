"""Seeded end-to-end trials: phantom -> sensing -> tracking -> control -> robot.

A trial wires the deformable phantom, the reconstruction chain, the layer
tracker, the depth controller and the screw-drive model into one loop driven
by the simulation clock (one cycle per tracked M-scan). Trials are
deterministic given (config, seed): every stochastic component draws from
its own child stream of the trial seed, and event logs contain simulated
time only, so identical runs produce identical bytes.

Tracker modes:

* oracle-mask: layer observations come from the phantom's ground-truth
  geometry (the membrane line itself); optional Gaussian tracking noise is
  injected before the sliding-window/Kalman stage. No spectra are
  synthesized, which makes Monte-Carlo cohorts cheap.
* neural: full sensing path, M-scan synthesis -> segmentation network ->
  contour extraction. The segmentation boundary is the posterior mask edge,
  which sits one membrane offset below the true membrane line.
"""

from __future__ import annotations

import dataclasses
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import controller as ctl
from . import dsp
from .config import build
from .phantom import (
    EVENT_PERFORATION,
    InteractionConfig,
    NeedleState,
    PneumoOutcome,
    Reflectivity,
    TissuePhantom,
    advance_needle,
    ground_truth,
    pneumodissect,
    render_mscan,
    retract_needle,
)
from .robot import (
    IsoReport,
    RobotAxis,
    RobotKinematics,
    compensate,
    iso_metrics,
    iso_targets,
    rotation_command,
)
from .segnet import SegNet, TrainSample, preprocess
from .tracking import RawEdges, TrackerBank, extract_edges


@dataclass
class TrialConfig:
    seed: int
    phantom: dict = field(default_factory=dict)
    interaction: dict = field(default_factory=dict)
    controller: dict = field(default_factory=dict)
    robot: dict = field(default_factory=dict)
    tracker_mode: str = "oracle-mask"  # or "neural"
    tissue_mode: str = "in_vivo"
    tracking_noise_um: float = 0.0
    actuation_noise_um: float = 0.0
    weights_path: str | None = None
    teleop_script: list | None = None
    operator: dict = field(default_factory=dict)
    cohort: int = 1
    max_cycles: int = 600
    drop_frame_prob: float = 0.0
    emit_frames: bool = False
    phantom_jitter: dict = field(default_factory=dict)  # {thickness_sd, z_epi_sd}

    def __post_init__(self):
        if self.seed is None:
            raise ValueError("trial seed is mandatory")
        if self.tracker_mode not in ("oracle-mask", "neural"):
            raise ValueError("tracker_mode must be oracle-mask or neural")
        if self.cohort < 1:
            raise ValueError("cohort size must be >= 1")

    @classmethod
    def from_dict(cls, raw: dict) -> "TrialConfig":
        return build(cls, raw)


@dataclass
class TrialResult:
    seed: int
    final_gap_um: float
    perforated: bool
    completion_ticks: int | None
    completion_s: float | None
    pneumo: PneumoOutcome
    travel_um: float
    ticks: int
    phase: str
    event_log: list
    event_log_path: str | None = None


@dataclass
class CohortStats:
    n: int
    gap_mean: float | None
    gap_std: float | None
    pneumo_mean: float | None
    pneumo_std: float | None
    time_mean: float | None
    time_std: float | None
    perforation_pct: float
    type1_pct: float | None


def _mean_std(values):
    vals = [v for v in values if v is not None and np.isfinite(v)]
    if not vals:
        return None, None
    mean = float(np.mean(vals))
    std = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
    return mean, std


def cohort_stats(results: list[TrialResult]) -> CohortStats:
    """Aggregate a cohort; perforated trials are excluded from depth stats."""
    clean = [r for r in results if not r.perforated]
    gap_mean, gap_std = _mean_std([r.final_gap_um for r in clean])
    pneumo_mean, pneumo_std = _mean_std(
        [r.pneumo.demarcation_depth_um for r in clean if not r.pneumo.perforated])
    time_mean, time_std = _mean_std([r.completion_s for r in results])
    bubbles = [r.pneumo.type1_bubble for r in clean if not r.pneumo.perforated]
    return CohortStats(
        n=len(results),
        gap_mean=gap_mean, gap_std=gap_std,
        pneumo_mean=pneumo_mean, pneumo_std=pneumo_std,
        time_mean=time_mean, time_std=time_std,
        perforation_pct=100.0 * sum(r.perforated for r in results) / len(results),
        type1_pct=100.0 * float(np.mean(bubbles)) if bubbles else None,
    )


def _fmt(mean, std, unit=""):
    if mean is None:
        return "-"
    if std is None:
        return f"{mean:.1f}{unit}"
    return f"{mean:.1f} +- {std:.1f}{unit}"


def cohort_table(rows: list[tuple[str, CohortStats]]) -> str:
    """Delimited summary shaped like the study's outcome table."""
    out = ["group\tn\tperforation_n\tperforation_pct\tneedle_gap_um\t"
           "pneumo_depth_um\ttype1_bb_pct\tcompletion_s"]
    for name, s in rows:
        perf_n = round(s.perforation_pct * s.n / 100.0)
        type1 = "-" if s.type1_pct is None else f"{s.type1_pct:.1f}%"
        out.append("\t".join([
            name, str(s.n), str(perf_n), f"{s.perforation_pct:.1f}%",
            _fmt(s.gap_mean, s.gap_std), _fmt(s.pneumo_mean, s.pneumo_std),
            type1, _fmt(s.time_mean, s.time_std),
        ]))
    return "\n".join(out)


# -- synthetic operator for the teleoperation arm --------------------------------


class SyntheticOperator:
    """Scripted human stand-in: reads the displayed gap with noise, hesitates,
    and steps down in fixed increments until the display reaches target."""

    def __init__(self, rng, step_um=30.0, reading_noise_um=20.0, latency_cycles=2.0):
        self.rng = rng
        self.step_um = step_um
        self.reading_noise_um = reading_noise_um
        self.latency_cycles = latency_cycles
        self._wait = 0
        self._started = False

    def commands(self, estimate, state, cfg):
        if state.phase not in (ctl.ATTACHED, ctl.CONTACT):
            return []
        cmds = []
        if not self._started:
            self._started = True
            cmds.append(("rotate_on",))
        if estimate is None or not estimate.valid_dm:
            return cmds
        if self._wait > 0:
            self._wait -= 1
            return cmds
        perceived = estimate.gap_above_dm_um + self.rng.normal(0.0, self.reading_noise_um)
        if perceived <= cfg.target_gap:
            cmds.append(("stop",))
            return cmds
        self._wait = int(self.rng.poisson(self.latency_cycles))
        cmds.append(("step_down", self.step_um))
        return cmds


# -- trial loop -------------------------------------------------------------------


def _streams(seed):
    children = np.random.SeedSequence(seed).spawn(7)
    return {name: np.random.default_rng(s) for name, s in zip(
        ("sense", "tracking", "actuation", "pneumo", "operator", "frames", "geometry"),
        children)}


def _sense(cfg, phantom, needle, axis, net, rng_sense, rng_frames):
    """One frame's raw edge observations (and optionally the rendered M-scan)."""
    if cfg.drop_frame_prob > 0 and rng_sense.random() < cfg.drop_frame_prob:
        return RawEdges(float("nan"), float("nan"), False, False), None
    if cfg.tracker_mode == "neural":
        interaction = build(InteractionConfig, cfg.interaction)
        scan = render_mscan(phantom, needle, rng_frames, interaction=interaction)
        prob = net.forward(preprocess(scan))
        return extract_edges(prob, mode=cfg.tissue_mode, axis=axis), scan
    gt = ground_truth(phantom, needle, axis)
    scan = None
    if cfg.emit_frames:
        interaction = build(InteractionConfig, cfg.interaction)
        scan = render_mscan(phantom, needle, rng_frames, interaction=interaction)
    raw = RawEdges(
        epi_px=float(gt.epi_row[0]), dm_px=float(gt.dm_row[0]),
        valid_epi=bool(gt.epi_row[0] >= 0), valid_dm=bool(gt.dm_row[0] >= 0),
    )
    return raw, scan


def run_trial(cfg: TrialConfig, log_path: str | None = None,
              frame_hook=None) -> TrialResult:
    """Run one seeded closed-loop trial to completion."""
    rngs = _streams(cfg.seed)
    interaction = build(InteractionConfig, cfg.interaction)
    phantom_kwargs = dict(cfg.phantom)
    if "reflectivity" in phantom_kwargs:
        phantom_kwargs["reflectivity"] = Reflectivity(**phantom_kwargs["reflectivity"])
    if cfg.phantom_jitter:
        geo = rngs["geometry"]
        t_sd = float(cfg.phantom_jitter.get("thickness_sd", 0.0))
        z_sd = float(cfg.phantom_jitter.get("z_epi_sd", 0.0))
        if t_sd > 0:
            base = phantom_kwargs.get("thickness", 369.4)
            phantom_kwargs["thickness"] = float(max(geo.normal(base, t_sd), 100.0))
        if z_sd > 0:
            base = phantom_kwargs.get("z_epi", 700.0)
            phantom_kwargs["z_epi"] = float(max(geo.normal(base, z_sd), 550.0))
    phantom = build(TissuePhantom, phantom_kwargs)
    ctrl_cfg = build(ctl.ControllerConfig, cfg.controller)
    kin = build(RobotKinematics, cfg.robot, max_travel=ctrl_cfg.max_travel)
    needle = NeedleState.attached(phantom, fiber_offset=ctrl_cfg.fiber_offset_um)
    axis = dsp.DepthAxis(n_s=ctrl_cfg.n_s)
    bank = TrackerBank(axis, fiber_offset=ctrl_cfg.fiber_offset_um, mode=cfg.tissue_mode,
                       noise_sigma_um=cfg.tracking_noise_um, rng=rngs["tracking"])
    robot_axis = RobotAxis(kin=kin)
    net = SegNet.load(cfg.weights_path) if cfg.tracker_mode == "neural" else None

    state = ctl.ControllerState()
    ctl.attach(state)
    operator = None
    script = None
    script_end = -1
    if ctrl_cfg.mode == "teleop":
        if cfg.teleop_script is not None:
            script = {}
            for item in cfg.teleop_script:
                cycle, op, *rest = tuple(item)
                script.setdefault(int(cycle), []).append((op, *rest))
            script_end = max(script) if script else -1
        else:
            operator = SyntheticOperator(rngs["operator"], **cfg.operator)

    log: list[dict] = []
    perforated = False
    t = 0.0
    seq = 0

    def emit(kind, **data):
        ev = {"t": round(t, 6), "seq": seq, "kind": kind}
        ev.update(data)
        log.append(ev)

    emit("attach", phantom_thickness_um=phantom.thickness, target_gap_um=ctrl_cfg.target_gap,
         step_size_um=ctrl_cfg.step_size, mode=ctrl_cfg.mode, tracker=cfg.tracker_mode)

    for _ in range(cfg.max_cycles):
        raw, scan = _sense(cfg, phantom, needle, axis, net, rngs["sense"], rngs["frames"])
        est = bank.update(raw, needle_pos_um=needle.tip_depth, frame_seq=seq)
        if frame_hook is not None:
            frame_hook(scan, est, state)
        op_cmds = None
        if ctrl_cfg.mode == "teleop":
            if script is not None:
                op_cmds = script.get(seq, [])
            else:
                op_cmds = operator.commands(est, state, ctrl_cfg)
        commands, events = ctl.tick(state, est, ctrl_cfg, t, axis, op_cmds)
        for ev in events:
            ev = dict(ev)
            ev.update({"t": round(t, 6), "seq": seq})
            log.append(ev)
            if ev["kind"] == "contact":
                axis.correction_active = True
        for cmd in commands:
            if cmd.kind == ctl.ROTATE_ON:
                needle = dataclasses.replace(needle, rotating=True)
            elif cmd.kind == ctl.ROTATE:
                robot_axis.apply(rotation_command(kin))
            elif cmd.kind == ctl.ADVANCE:
                motor = compensate(kin, cmd.delta_um, position_um=robot_axis.position_um)
                noise = (rngs["actuation"].normal(0.0, cfg.actuation_noise_um)
                         if cfg.actuation_noise_um > 0 else 0.0)
                dz, _ = robot_axis.apply(motor, noise_um=noise)
                if dz >= 0:
                    phantom, needle, p_events = advance_needle(phantom, needle, dz, interaction)
                else:
                    phantom, needle = retract_needle(phantom, needle, -dz)
                    p_events = []
                for pe in p_events:
                    emit(pe.kind.lower(), tip_depth_um=round(pe.tip_depth, 4))
                    if pe.kind == EVENT_PERFORATION:
                        perforated = True
            elif cmd.kind == ctl.RETRACT:
                motor = compensate(kin, -cmd.delta_um, position_um=robot_axis.position_um)
                dz, _ = robot_axis.apply(motor)
                phantom, needle = retract_needle(phantom, needle, -dz)
                emit("retracted", delta_um=round(-dz, 4))
                ctl.finish_retraction(state)
        if state.phase in (ctl.TARGET_REACHED, ctl.ERROR, ctl.IDLE):
            break
        if script is not None and seq > script_end:
            break  # scripted teleop exhausted; nothing further can move the needle
        t += ctl.CYCLE_PERIOD_S
        seq += 1

    final_gap = phantom.dm_depth - needle.tip_depth
    emit("insertion_complete", final_gap_um=round(final_gap, 4), phase=state.phase,
         travel_um=round(state.cumulative_travel, 4))

    if state.phase in (ctl.TARGET_REACHED, ctl.ERROR):
        for cmd in ctl.retract(state, ctrl_cfg):
            motor = compensate(kin, -cmd.delta_um, position_um=robot_axis.position_um)
            dz, _ = robot_axis.apply(motor)
            phantom, needle = retract_needle(phantom, needle, -dz)
            emit("retracted", delta_um=round(-dz, 4))
        ctl.finish_retraction(state)

    pneumo = pneumodissect(phantom, final_gap, rng_seed=rngs["pneumo"],
                           interaction=interaction)
    if pneumo.perforated:
        perforated = True
    emit("pneumodissection", perforated=pneumo.perforated,
         demarcation_um=None if pneumo.demarcation_depth_um is None
         else round(pneumo.demarcation_depth_um, 4),
         type1=pneumo.type1_bubble)

    completion_ticks = completion_s = None
    if state.contact_tick is not None and state.target_tick is not None:
        completion_ticks = state.target_tick - state.contact_tick
        completion_s = completion_ticks * ctl.CYCLE_PERIOD_S

    result = TrialResult(
        seed=cfg.seed, final_gap_um=final_gap, perforated=perforated,
        completion_ticks=completion_ticks, completion_s=completion_s,
        pneumo=pneumo, travel_um=state.cumulative_travel, ticks=state.tick_count,
        phase=state.phase, event_log=log,
    )
    if log_path:
        write_event_log(log_path, log)
        result.event_log_path = log_path
    return result


def write_event_log(path: str, log: list[dict]) -> None:
    buf = io.StringIO()
    for ev in log:
        buf.write(json.dumps(ev, sort_keys=True, separators=(",", ":")))
        buf.write("\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())


def trial_seeds(master_seed: int, n: int) -> list[int]:
    """Deterministic per-trial seeds derived from the master seed."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master_seed).spawn(n)]


def run_cohort(cfg: TrialConfig, out_dir: str | None = None, label: str = "cohort"):
    """Run cfg.cohort trials with derived seeds; returns (stats, results)."""
    results = []
    for i, seed in enumerate(trial_seeds(cfg.seed, cfg.cohort)):
        trial_cfg = TrialConfig(**{**cfg.__dict__, "seed": seed, "cohort": 1})
        log_path = None
        if out_dir:
            log_path = os.path.join(out_dir, f"{label}_trial{i:03d}.jsonl")
        results.append(run_trial(trial_cfg, log_path=log_path))
    return cohort_stats(results), results


def run_iso_bench(kin: RobotKinematics, noise_sigma_um: float, seed: int,
                  nominal_interval_um: float = 150.0, n_runs: int = 5) -> IsoReport:
    """Bidirectional open-loop positioning bench over the target ladder.

    Targets are quantized to the achievable step grid so a zero-noise bench
    isolates actuation noise: deviations are exactly zero without it.
    """
    raw_targets = iso_targets(nominal_interval_um, seed=seed, max_travel=kin.max_travel)
    quantum = kin.step_quantum_um
    # a stepper axis lives on the integer step grid; snap targets onto it so
    # the open-loop bench isolates actuation noise, not command quantization
    target_steps = np.round(raw_targets / quantum).astype(int)
    targets = target_steps * quantum
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    measured = np.empty((n_runs, 2, targets.size))
    for run in range(n_runs):
        for direction in (0, 1):
            order = np.argsort(targets) if direction == 0 else np.argsort(targets)[::-1]
            position_steps = 0 if direction == 0 else int(round(kin.max_travel / quantum))
            for idx in order:
                position = position_steps * quantum
                cmd = compensate(kin, targets[idx] - position, position_um=position)
                position_steps += cmd.right_steps - cmd.left_steps
                noise = rng.normal(0.0, noise_sigma_um) if noise_sigma_um > 0 else 0.0
                measured[run, direction, idx] = position_steps * quantum + noise
    return iso_metrics(targets, measured)


# -- synthetic dataset for the segmentation network -------------------------------


def sample_phantom(rng, in_vivo=True, iris_prob=0.25) -> TissuePhantom:
    """Randomized phantom geometry for dataset generation."""
    if in_vivo:
        thickness = float(np.clip(rng.normal(369.4, 24.2), 280.0, 460.0))
    else:
        thickness = float(np.clip(rng.normal(854.7, 149.2), 450.0, 1080.0))
    iris = float(rng.uniform(0.3, 0.6)) if rng.random() < iris_prob else None
    refl = Reflectivity(
        epithelium=float(rng.uniform(0.8, 1.0)),
        stroma=float(rng.uniform(0.04, 0.07)),
        dm=float(rng.uniform(0.25, 0.4)),
        endothelium=float(rng.uniform(0.45, 0.65)),
        iris=iris,
    )
    return TissuePhantom(
        z_epi=float(rng.uniform(630.0, 820.0)),
        thickness=thickness,
        reflectivity=refl,
        iris_gap=float(rng.uniform(250.0, 600.0)),
        seed=int(rng.integers(2**31)),
    )


def _scene_needle(phantom, rng) -> NeedleState:
    """Random needle pose: somewhere on approach or already in the stroma."""
    if rng.random() < 0.5:
        return NeedleState(tip_depth=float(rng.uniform(-250.0, 0.0)), rotating=True)
    depth = float(rng.uniform(10.0, max(phantom.dm_depth - 60.0, 20.0)))
    return NeedleState(tip_depth=depth, rotating=True)


def generate_dataset(n_phantoms: int, frames_per_phantom: int, seed: int,
                     in_vivo: bool = True):
    """(samples, phantoms): frames with masks plus the phantom_id -> geometry map."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 77]))
    interaction = InteractionConfig()
    samples, phantoms = [], {}
    for p_idx in range(n_phantoms):
        phantom = sample_phantom(rng, in_vivo=in_vivo)
        pid = f"phantom{p_idx:03d}"
        phantoms[pid] = phantom
        for _ in range(frames_per_phantom):
            needle = _scene_needle(phantom, rng)
            scene = phantom
            if needle.tip_depth > 0:
                scene = TissuePhantom(**{**phantom.__dict__, "punctured": True,
                                         "deform": 0.0})
            scan = render_mscan(scene, needle, rng, interaction=interaction)
            mask = ground_truth(scene, needle).mask
            samples.append(TrainSample(pixels=scan.pixels, mask=mask, phantom_id=pid))
    return samples, phantoms


def generate_training_set(n_phantoms: int, frames_per_phantom: int, seed: int,
                          in_vivo: bool = True) -> list[TrainSample]:
    return generate_dataset(n_phantoms, frames_per_phantom, seed, in_vivo=in_vivo)[0]


def tracking_accuracy_experiment(data_seed: int = 21, train_seed: int = 5,
                                 n_phantoms: int = 10, frames_per_phantom: int = 20,
                                 epochs: int = 3, eval_frames: int = 10):
    """Desk-scale tracking study: phantom-grouped 5-fold training, membrane
    tracking error evaluated on each fold's held-out phantoms.

    Returns (overall_mean_error_um, per_fold_mean_errors, train_result).
    """
    from .segnet import TrainConfig, grouped_folds, train

    samples, phantoms = generate_dataset(n_phantoms, frames_per_phantom, seed=data_seed)
    cfg = TrainConfig(seed=train_seed, epochs=epochs)
    result = train(samples, cfg)
    folds = grouped_folds([s.phantom_id for s in samples], cfg.folds, seed=cfg.seed)
    per_fold, all_errors = [], []
    for k, (net, (_, test_ids)) in enumerate(zip(result.nets, folds)):
        errors = []
        for j, pid in enumerate(sorted(test_ids)):
            errors += eval_tracker_error(net, phantoms[pid], seed=300 + 10 * k + j,
                                         n_frames=eval_frames, tissue_mode="ex_vivo")
        per_fold.append(float(np.mean(errors)) if errors else float("nan"))
        all_errors += errors
    overall = float(np.mean(all_errors)) if all_errors else float("nan")
    return overall, per_fold, result


def eval_tracker_error(net, phantom, seed: int, n_frames: int = 12,
                       tissue_mode: str = "in_vivo") -> list[float]:
    """Per-frame membrane tracking error (geometric um) on one static scene.

    Both the prediction and the reference go through the same contour
    extraction and unit conversion; the reference contours come from the
    ground-truth mask.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4242]))
    needle = NeedleState(tip_depth=float(rng.uniform(-150.0, -30.0)), rotating=True)
    axis = dsp.DepthAxis(correction_active=True)
    gt = ground_truth(phantom, needle, axis)
    truth_raw = extract_edges(gt.mask, mode=tissue_mode, axis=axis)
    if not truth_raw.valid_dm:
        return []
    ref_bank = TrackerBank(axis, mode=tissue_mode)
    truth_um = ref_bank.raw_to_um(truth_raw)[1]
    bank = TrackerBank(axis, mode=tissue_mode)
    interaction = InteractionConfig()
    errors = []
    for k in range(n_frames):
        scan = render_mscan(phantom, needle, rng, interaction=interaction, first_seq=k)
        prob = net.forward(preprocess(scan))
        raw = extract_edges(prob, mode=tissue_mode, axis=axis)
        est = bank.update(raw, needle_pos_um=needle.tip_depth, frame_seq=k)
        if est.valid_dm:
            errors.append(abs(est.dm_um - truth_um))
    return errors
