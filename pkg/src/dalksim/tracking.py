"""Corneal layer tracking: mask contours -> smoothed depth estimates.

Pipeline per frame: threshold the segmentation map, convolve each column
with a vertical derivative kernel, chain candidate edge pixels into
polylines, pick the epithelium as the flattest top-edge line (minimum
cross-column standard deviation) and the membrane line as the deepest
bottom edge within the anatomical window below the epithelium ([0, 400] um
in vivo, [0, 1100] um ex vivo). Raw picks are refined by a 100-point
sliding window (0.7 x mean of the latest 50 + 0.3 x mean of the older
points once more than 50 have arrived) and a scalar Kalman filter with
F = H = 1, Q = 1e-5, R = 1.

The filter runs in micrometers in the needle-motion-compensated frame
(raw sensor depth + commanded needle position): there the layers are
stationary under commanded motion, so the deliberately sluggish Q/R pair
smooths sensor noise without fighting the approach ramp. Regime changes
(surface puncture, refraction-correction activation) appear as innovation
outliers; three consecutive gated innovations reinitialize the filter from
the current observation.

All depths in a LayerEstimate are geometric micrometers below the fiber
tip, so the needle tip sits at the constant fiber offset and the gap above
the membrane is translation invariant by construction.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .segnet import preprocess

KALMAN_F = 1.0
KALMAN_H = 1.0
KALMAN_Q = 1e-5
KALMAN_R = 1.0

WINDOW_CAPACITY = 100
WINDOW_HALF = 50
RECENT_WEIGHT = 0.7
OLDER_WEIGHT = 0.3

DM_WINDOW_UM = {"in_vivo": 400.0, "ex_vivo": 1100.0}

GRAD_THRESHOLD = 0.5
MAX_EDGE_JUMP_PX = 12
MIN_LINE_COVERAGE = 0.5
INNOVATION_GATE_UM = 25.0
GATE_STREAK = 3
TIP_CROSSCHECK_UM = 20.0


@dataclass
class KalmanState:
    x_hat: float
    p: float = 1.0
    f: float = KALMAN_F
    h: float = KALMAN_H
    q: float = KALMAN_Q
    r: float = KALMAN_R

    def __post_init__(self):
        if self.p <= 0:
            raise ValueError("error covariance must be positive")


def kalman_update(state: KalmanState, obs: float) -> KalmanState:
    """One scalar predict/update step: x' = x + K (z - x) with K from p + q."""
    p_pred = state.f * state.p * state.f + state.q
    k = p_pred * state.h / (state.h * p_pred * state.h + state.r)
    x_new = state.x_hat + k * (obs - state.h * state.x_hat)
    p_new = (1.0 - k * state.h) * p_pred
    return KalmanState(x_hat=x_new, p=p_new, f=state.f, h=state.h, q=state.q, r=state.r)


@dataclass
class ObservationWindow:
    """Ring buffer over the last 100 raw observations."""

    capacity: int = WINDOW_CAPACITY
    values: deque = field(default_factory=lambda: deque(maxlen=WINDOW_CAPACITY))
    count: int = 0

    def reset(self):
        self.values.clear()
        self.count = 0


def windowed_observation(window: ObservationWindow, z: float) -> float:
    """Push z and return the refined observation.

    First 50 points pass through untouched; beyond that the refined value is
    0.7 x mean(latest 50) + 0.3 x mean(everything older in the buffer).
    """
    if not np.isfinite(z):
        raise ValueError("observation must be finite")
    window.values.append(z)
    window.count += 1
    if window.count <= WINDOW_HALF:
        return z
    vals = np.asarray(window.values)
    recent = vals[-WINDOW_HALF:]
    older = vals[:-WINDOW_HALF]
    return RECENT_WEIGHT * recent.mean() + OLDER_WEIGHT * older.mean()


@dataclass
class RawEdges:
    """Per-frame contour picks in pixel rows (sub-pixel via column averaging)."""

    epi_px: float
    dm_px: float
    valid_epi: bool
    valid_dm: bool


@dataclass
class LayerEstimate:
    epi_px: float
    dm_px: float
    epi_um: float
    dm_um: float
    needle_tip_um: float
    gap_above_dm_um: float
    valid_epi: bool
    valid_dm: bool
    frame_seq: int = 0
    quality_warning: bool = False


def _edge_polylines(points_by_col, n_cols, max_jump):
    """Chain per-column candidate rows into polylines by row proximity."""
    lines = []  # each: {"rows": [..], "last_col":, "last_row":}
    for col in range(n_cols):
        rows = points_by_col[col]
        open_lines = [ln for ln in lines if col - ln["last_col"] <= 2]
        taken = set()
        for row in rows:
            best, best_d = None, max_jump + 1
            for i, ln in enumerate(open_lines):
                if i in taken:
                    continue
                d = abs(ln["last_row"] - row)
                if d < best_d:
                    best, best_d = i, d
            if best is None:
                lines.append({"rows": [row], "last_col": col, "last_row": row})
            else:
                ln = open_lines[best]
                ln["rows"].append(row)
                ln["last_col"], ln["last_row"] = col, row
                taken.add(best)
    min_pts = int(np.ceil(MIN_LINE_COVERAGE * n_cols))
    return [np.asarray(ln["rows"], dtype=np.float64) for ln in lines if len(ln["rows"]) >= min_pts]


def extract_edges(
    mask: np.ndarray,
    mode: str = "in_vivo",
    axis: dsp.DepthAxis | None = None,
    grad_threshold: float = GRAD_THRESHOLD,
) -> RawEdges:
    """Epithelium and membrane rows from a (thresholded) segmentation map."""
    if mode not in DM_WINDOW_UM:
        raise ValueError(f"mode must be one of {sorted(DM_WINDOW_UM)}")
    axis = axis or dsp.DepthAxis()
    m = (np.asarray(mask) >= 0.5).astype(np.float64)
    n_rows, n_cols = m.shape
    grad = np.zeros_like(m)
    grad[1:-1] = m[2:] - m[:-2]

    top_pts = {c: [] for c in range(n_cols)}
    bot_pts = {c: [] for c in range(n_cols)}
    rr, cc = np.nonzero((grad >= grad_threshold) & (m > 0))
    for r, c in zip(rr, cc):
        top_pts[c].append(int(r))
    rr, cc = np.nonzero((grad <= -grad_threshold) & (m > 0))
    for r, c in zip(rr, cc):
        bot_pts[c].append(int(r))

    top_lines = _edge_polylines(top_pts, n_cols, MAX_EDGE_JUMP_PX)
    bot_lines = _edge_polylines(bot_pts, n_cols, MAX_EDGE_JUMP_PX)

    if not top_lines:
        return RawEdges(epi_px=float("nan"), dm_px=float("nan"),
                        valid_epi=False, valid_dm=False)
    epi_line = min(top_lines, key=lambda ln: ln.std())
    epi_row = float(epi_line.mean())

    window_px = DM_WINDOW_UM[mode] * axis.n_s / axis.dz_air  # geometric window on the optical axis
    candidates = [ln.mean() for ln in bot_lines
                  if epi_row < ln.mean() <= epi_row + window_px]
    if not candidates:
        return RawEdges(epi_px=epi_row, dm_px=float("nan"), valid_epi=True, valid_dm=False)
    return RawEdges(epi_px=epi_row, dm_px=float(max(candidates)), valid_epi=True, valid_dm=True)


class LayerTracker:
    """Sliding window + Kalman filter for one layer, with reacquisition."""

    def __init__(self, gate_um: float = INNOVATION_GATE_UM):
        self.window = ObservationWindow()
        self.state: KalmanState | None = None
        self.gate_um = gate_um
        self._gated_streak = 0

    def reset(self):
        self.window.reset()
        self.state = None
        self._gated_streak = 0

    def update(self, obs_um: float | None) -> float | None:
        """Feed one motion-compensated observation (None = hold); returns x_hat."""
        if obs_um is None:
            return self.state.x_hat if self.state else None
        if self.state is None:
            self.state = KalmanState(x_hat=obs_um, p=1.0)
            windowed_observation(self.window, obs_um)
            return self.state.x_hat
        refined = windowed_observation(self.window, obs_um)
        innovation = refined - self.state.x_hat
        if abs(innovation) > self.gate_um:
            self._gated_streak += 1
            if self._gated_streak >= GATE_STREAK:
                self.window.reset()
                windowed_observation(self.window, obs_um)
                self.state = KalmanState(x_hat=obs_um, p=1.0)
                self._gated_streak = 0
            return self.state.x_hat
        self._gated_streak = 0
        self.state = kalman_update(self.state, refined)
        return self.state.x_hat


class TrackerBank:
    """Per-layer trackers plus the unit conversions shared by every frame."""

    def __init__(self, axis: dsp.DepthAxis, fiber_offset: float = 500.0,
                 mode: str = "in_vivo", noise_sigma_um: float = 0.0,
                 rng: np.random.Generator | None = None,
                 gate_um: float = INNOVATION_GATE_UM):
        self.axis = axis
        self.fiber_offset = fiber_offset
        self.mode = mode
        self.noise_sigma_um = noise_sigma_um
        self.rng = rng or np.random.default_rng(0)
        self.epi = LayerTracker(gate_um)
        self.dm = LayerTracker(gate_um)
        self.epi_reference_um: float | None = None

    def raw_to_um(self, raw: RawEdges) -> tuple[float | None, float | None]:
        """Sensor-frame geometric micrometers for the raw pixel picks."""
        epi_um = dm_um = None
        if raw.valid_epi:
            epi_um = self.axis.row_to_optical_um(raw.epi_px)  # air above the surface
        if raw.valid_dm and raw.valid_epi:
            dm_opt = self.axis.row_to_optical_um(raw.dm_px)
            epi_opt = self.axis.row_to_optical_um(raw.epi_px)
            if self.axis.correction_active:
                dm_um = epi_opt + (dm_opt - epi_opt) / self.axis.n_s
            else:
                dm_um = dm_opt
        return epi_um, dm_um

    def update(self, raw: RawEdges, needle_pos_um: float, frame_seq: int = 0) -> LayerEstimate:
        """Filter one frame's raw edges; needle_pos_um is the commanded axial position."""
        epi_um, dm_um = self.raw_to_um(raw)
        if self.noise_sigma_um > 0:
            if epi_um is not None:
                epi_um += self.rng.normal(0.0, self.noise_sigma_um)
            if dm_um is not None:
                dm_um += self.rng.normal(0.0, self.noise_sigma_um)

        warning = False
        if epi_um is not None:
            attach_epi = epi_um + needle_pos_um
            if self.epi_reference_um is None:
                self.epi_reference_um = attach_epi
            elif abs(attach_epi - self.epi_reference_um) > TIP_CROSSCHECK_UM:
                warning = True

        epi_hat = self.epi.update(None if epi_um is None else epi_um + needle_pos_um)
        dm_hat = self.dm.update(None if dm_um is None else dm_um + needle_pos_um)

        epi_out = float("nan") if epi_hat is None else epi_hat - needle_pos_um
        dm_out = float("nan") if dm_hat is None else dm_hat - needle_pos_um
        gap = float("nan")
        if dm_hat is not None:
            gap = dm_out - self.fiber_offset
        return LayerEstimate(
            epi_px=raw.epi_px, dm_px=raw.dm_px,
            epi_um=epi_out, dm_um=dm_out,
            needle_tip_um=self.fiber_offset,
            gap_above_dm_um=gap,
            valid_epi=raw.valid_epi, valid_dm=raw.valid_dm,
            frame_seq=frame_seq, quality_warning=warning,
        )


def track(mscan, net, axis, needle, bank: TrackerBank, mode: str | None = None) -> LayerEstimate:
    """Full per-frame pipeline: preprocess -> forward -> contours -> filtering."""
    prob = net.forward(preprocess(mscan))
    raw = extract_edges(prob, mode=mode or bank.mode, axis=axis)
    return bank.update(raw, needle_pos_um=needle.tip_depth, frame_seq=getattr(mscan, "first_seq", 0))
