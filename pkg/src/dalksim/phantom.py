"""Deformable layered cornea phantom and its needle interaction model.

Coordinate conventions (all in micrometers):

* Attach frame: depth measured downward from where the fiber tip sat when
  the device was vacuum-attached. The fiber tip and needle tip move down
  together as travel accumulates; the needle tip rides fiber_offset below
  the fiber.
* tip_depth: needle tip relative to the *undeformed* epithelium surface
  (negative while still above the tissue).

Before puncture the needle indents the surface and the whole layer stack
rides down with it (pure axial indentation, which is all a one-dimensional
A-scan sensor can resolve). Once the indentation exceeds the puncture
threshold (razor rotation cuts at a much lower threshold than a static
blunt push), the tissue relaxes back and further travel advances the tip
1:1 through the stroma. Crossing the membrane line is emitted as a
PERFORATION event, never an exception: perforation is a surgical outcome.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import dsp

EVENT_PUNCTURE = "PUNCTURE"
EVENT_PERFORATION = "PERFORATION"

DEPTH_SPAN_UM = 2 * dsp.MAX_DEPTH_UM  # one FFT output bin per dz_air of optical depth


@dataclass(frozen=True)
class Reflectivity:
    """Per-interface reflection amplitudes in [0, 1].

    stroma scales the speckle scatterers rather than a single interface;
    iris=None removes the retro-corneal reflector entirely.
    """

    epithelium: float = 0.9
    stroma: float = 0.05
    dm: float = 0.30
    endothelium: float = 0.55
    iris: float | None = None

    def __post_init__(self):
        for name in ("epithelium", "stroma", "dm", "endothelium"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"reflectivity.{name} must be within [0, 1]")
        if self.iris is not None and not 0.0 <= self.iris <= 1.0:
            raise ValueError("reflectivity.iris must be within [0, 1]")


@dataclass
class TissuePhantom:
    """Geometric layer stack under the probe, plus its current deformation state."""

    z_epi: float = 700.0
    thickness: float = 369.4
    dm_offset: float = 15.0
    n_s: float = dsp.DEFAULT_N_S
    reflectivity: Reflectivity = field(default_factory=Reflectivity)
    deform: float = 0.0
    punctured: bool = False
    iris_gap: float = 400.0
    speckle_count: int = 300
    seed: int = 0
    speckle_frac: np.ndarray | None = None
    speckle_amp: np.ndarray | None = None

    def __post_init__(self):
        if self.thickness <= 0:
            raise ValueError("thickness must be positive")
        if not 0 < self.dm_offset < self.thickness:
            raise ValueError("dm_offset must lie strictly inside the cornea")
        if self.n_s < 1:
            raise ValueError("refractive index must be >= 1")
        if self.deform < 0:
            raise ValueError("deform must be non-negative")
        if self.speckle_frac is None:
            rng = np.random.default_rng(self.seed)
            self.speckle_frac = rng.uniform(0.02, 0.98, self.speckle_count)
            self.speckle_amp = rng.rayleigh(1.0, self.speckle_count)

    @property
    def dm_depth(self) -> float:
        """Membrane line below the undeformed surface."""
        return self.thickness - self.dm_offset

    def surfaces(self) -> dict[str, float]:
        """Interface positions below the *undeformed* surface at the current deformation.

        The stack rides down rigidly with the indentation, so ordering is
        preserved no matter how deep the needle pushes.
        """
        epi = self.deform
        out = {"epi": epi, "dm": epi + self.dm_depth, "endo": epi + self.thickness}
        if self.reflectivity.iris is not None:
            out["iris"] = out["endo"] + self.iris_gap
        return out


@dataclass
class NeedleState:
    """Razor needle with the sensing fiber epoxied fiber_offset above its tip."""

    tip_depth: float
    fiber_offset: float = 500.0
    rotating: bool = False
    cumulative_travel: float = 0.0

    def __post_init__(self):
        if self.fiber_offset <= 0:
            raise ValueError("fiber_offset must be positive")

    @property
    def fiber_pos(self) -> float:
        """Fiber-tip position below the undeformed surface (tip rides fiber_offset deeper)."""
        return self.tip_depth - self.fiber_offset

    @classmethod
    def attached(cls, phantom: TissuePhantom, fiber_offset: float = 500.0) -> "NeedleState":
        """Needle at the vacuum-attach zero position (fiber at attach origin)."""
        return cls(tip_depth=fiber_offset - phantom.z_epi, fiber_offset=fiber_offset)


@dataclass(frozen=True)
class InteractionConfig:
    """Needle-tissue interaction constants and sensing-noise levels."""

    puncture_threshold_rotating: float = 150.0
    puncture_threshold_static: float = 400.0
    perforation_gap: float = 44.6
    pneumo_offset_mean: float = 46.7
    pneumo_offset_sd: float = 8.0
    noise_floor: float = 0.01
    snr_decay: float = 0.001
    perforation_prob: float = 0.5
    type1_rate: float = 0.75

    def __post_init__(self):
        if min(self.puncture_threshold_rotating, self.puncture_threshold_static,
               self.perforation_gap) <= 0:
            raise ValueError("interaction thresholds must be positive")
        if self.puncture_threshold_static < self.puncture_threshold_rotating:
            raise ValueError("static puncture threshold must be >= rotating threshold")


@dataclass(frozen=True)
class Event:
    kind: str
    tip_depth: float


@dataclass
class GroundTruthLayers:
    """Per-column pixel rows of each interface plus the binary cornea mask."""

    epi_row: np.ndarray
    dm_row: np.ndarray
    endo_row: np.ndarray
    mask: np.ndarray


@dataclass(frozen=True)
class PneumoOutcome:
    perforated: bool
    demarcation_depth_um: float | None
    type1_bubble: bool


def advance_needle(
    phantom: TissuePhantom,
    needle: NeedleState,
    delta: float,
    interaction: InteractionConfig = InteractionConfig(),
) -> tuple[TissuePhantom, NeedleState, list[Event]]:
    """Drive the needle delta micrometers deeper and update the tissue state."""
    if delta < 0:
        raise ValueError("advance delta must be non-negative")
    events: list[Event] = []
    old_tip = needle.tip_depth
    new_tip = old_tip + delta
    punctured = phantom.punctured
    deform = phantom.deform
    if not punctured:
        threshold = (interaction.puncture_threshold_rotating if needle.rotating
                     else interaction.puncture_threshold_static)
        deform = max(0.0, new_tip)
        if deform > threshold:
            punctured = True
            deform = 0.0
            events.append(Event(EVENT_PUNCTURE, new_tip))
    if punctured and old_tip < phantom.dm_depth <= new_tip:
        events.append(Event(EVENT_PERFORATION, new_tip))
    new_phantom = dataclasses.replace(phantom, deform=deform, punctured=punctured)
    new_needle = dataclasses.replace(
        needle, tip_depth=new_tip, cumulative_travel=needle.cumulative_travel + delta
    )
    return new_phantom, new_needle, events


def retract_needle(
    phantom: TissuePhantom, needle: NeedleState, delta: float
) -> tuple[TissuePhantom, NeedleState]:
    """Raise the needle; tissue keeps its state (a punctured track stays open)."""
    if delta < 0:
        raise ValueError("retract delta must be non-negative")
    new_tip = needle.tip_depth - delta
    deform = phantom.deform if phantom.punctured else max(0.0, min(phantom.deform, new_tip))
    new_phantom = dataclasses.replace(phantom, deform=deform)
    new_needle = dataclasses.replace(
        needle, tip_depth=new_tip, cumulative_travel=needle.cumulative_travel + delta
    )
    return new_phantom, new_needle


def _scatterers(phantom: TissuePhantom, needle: NeedleState,
                interaction: InteractionConfig) -> tuple[np.ndarray, np.ndarray]:
    """Optical depths and amplitudes of everything the fiber can see below it."""
    surf = phantom.surfaces()
    fiber = needle.fiber_pos
    epi_pos = surf["epi"]
    refl = phantom.reflectivity
    positions = [surf["epi"], surf["dm"], surf["endo"]]
    amps = [refl.epithelium, refl.dm, refl.endothelium]
    if refl.iris is not None:
        positions.append(surf["iris"])
        amps.append(refl.iris)
    positions = np.concatenate([
        np.asarray(positions),
        epi_pos + phantom.speckle_frac * phantom.thickness,
    ])
    amps = np.concatenate([np.asarray(amps), refl.stroma * phantom.speckle_amp])

    geo = positions - fiber
    visible = geo > 1e-9
    geo, amps, positions = geo[visible], amps[visible], positions[visible]
    air = np.clip(epi_pos - fiber, 0.0, None)
    air_path = np.minimum(geo, air)
    tissue_path = geo - air_path
    optical = air_path + phantom.n_s * tissue_path
    amps = amps * np.exp(-interaction.snr_decay * tissue_path)
    return optical, amps


def _tone_matrix(optical: np.ndarray, n_samples: int) -> np.ndarray:
    n = np.arange(n_samples)
    return np.exp(2j * np.pi * np.outer(optical / DEPTH_SPAN_UM, n))


def _synth_from_tones(
    tones: np.ndarray,
    amps: np.ndarray,
    rng: np.random.Generator,
    n_frames: int,
    noise: float,
) -> np.ndarray:
    n_samples = tones.shape[1] if tones.size else dsp.N_SAMPLES
    if tones.size:
        fringe_phase = rng.uniform(0.0, 2 * np.pi, (n_frames, amps.size))
        coeff = amps[None, :] * np.exp(1j * fringe_phase)
        clean = (coeff @ tones).real
    else:
        clean = np.zeros((n_frames, n_samples))
    if noise > 0:
        clean = clean + rng.normal(0.0, 1.0, (n_frames, n_samples)) * noise
    return clean


def synth_spectrum(
    phantom: TissuePhantom,
    needle: NeedleState,
    n_samples: int = dsp.N_SAMPLES,
    rng_seed: int | np.random.Generator = 0,
    interaction: InteractionConfig = InteractionConfig(),
    n_frames: int = 1,
    noise_scale: float = 1.0,
) -> np.ndarray:
    """Synthesize raw spectral interferograms for the current scene.

    An interface at optical depth z contributes a_i*cos(2*pi*n*z/7400 + phi)
    so that the reconstruction chain (Hann window, zero-pad x2, FFT) lands
    its peak at output bin z/dz_air. The fringe phase phi is redrawn per
    sweep and per reflector: sweep-to-sweep path jitter far below the pixel
    scale decorrelates fringe phases, which is what makes the 256-sweep
    magnitude average behave incoherently. Returns (n_frames, 1024).
    """
    if n_samples != dsp.N_SAMPLES:
        raise ValueError(f"protocol fixes the frame size at {dsp.N_SAMPLES} samples")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    optical, amps = _scatterers(phantom, needle, interaction)
    tones = _tone_matrix(optical, n_samples)
    return _synth_from_tones(tones, amps, rng, n_frames, interaction.noise_floor * noise_scale)


def render_mscan(
    phantom: TissuePhantom,
    needle: NeedleState,
    rng: np.random.Generator,
    interaction: InteractionConfig = InteractionConfig(),
    frames_per_column: int = 1,
    first_seq: int = 0,
) -> dsp.MScan:
    """Synthesize and reconstruct a full 48-column M-scan of the current scene.

    frames_per_column=256 runs the full averaging chain; 1 is the fast path
    used by the trial harness, with the white-noise level scaled by
    1/sqrt(256) to stand in for the variance reduction of averaging.
    """
    optical, amps = _scatterers(phantom, needle, interaction)
    tones = _tone_matrix(optical, dsp.N_SAMPLES)
    scale = 1.0 if frames_per_column == dsp.FRAMES_PER_ALINE else 1.0 / np.sqrt(dsp.FRAMES_PER_ALINE)
    noise = interaction.noise_floor * scale
    background = np.zeros(dsp.N_SAMPLES)
    columns = []
    for _ in range(dsp.N_COLUMNS):
        frames = _synth_from_tones(tones, amps, rng, frames_per_column, noise)
        columns.append(dsp.reconstruct_frames(frames, background).mean(axis=0))
    pixels = np.stack(columns, axis=1)
    return dsp.MScan(pixels=pixels, first_seq=first_seq)


def ground_truth(
    phantom: TissuePhantom,
    needle: NeedleState,
    axis: dsp.DepthAxis | None = None,
    n_columns: int = dsp.N_COLUMNS,
) -> GroundTruthLayers:
    """Pixel rows of each interface and the cornea mask for the current scene.

    Rows use the same optical-path model as the synthesizer; an interface
    behind the fiber tip is reported as row -1 (not imageable).
    """
    axis = axis or dsp.DepthAxis()
    surf = phantom.surfaces()
    fiber = needle.fiber_pos
    air = max(surf["epi"] - fiber, 0.0)

    def row_of(pos: float) -> int:
        geo = pos - fiber
        if geo <= 0:
            return -1
        air_path = min(geo, air)
        optical = air_path + phantom.n_s * (geo - air_path)
        row = int(round(axis.optical_to_row(optical)))
        return row if 0 <= row < dsp.N_SAMPLES else -1

    epi, dm, endo = row_of(surf["epi"]), row_of(surf["dm"]), row_of(surf["endo"])
    mask = np.zeros((dsp.N_SAMPLES, n_columns), dtype=np.uint8)
    if epi >= 0 and endo >= 0:
        mask[epi:endo + 1, :] = 1
    return GroundTruthLayers(
        epi_row=np.full(n_columns, epi),
        dm_row=np.full(n_columns, dm),
        endo_row=np.full(n_columns, endo),
        mask=mask,
    )


def pneumodissect(
    phantom: TissuePhantom,
    needle_gap_above_dm: float,
    rng_seed: int | np.random.Generator = 0,
    interaction: InteractionConfig = InteractionConfig(),
) -> PneumoOutcome:
    """Outcome of the air injection given the final needle gap above the membrane.

    A negative gap means the trial already perforated. Within the critical
    gap the downward injection pressure perforates with a configurable
    probability; otherwise the demarcation plane forms one offset draw
    deeper than the needle (clamped at the membrane).
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    if needle_gap_above_dm < 0:
        return PneumoOutcome(perforated=True, demarcation_depth_um=None, type1_bubble=False)
    if needle_gap_above_dm < interaction.perforation_gap:
        if rng.random() < interaction.perforation_prob:
            return PneumoOutcome(perforated=True, demarcation_depth_um=None, type1_bubble=False)
    offset = rng.normal(interaction.pneumo_offset_mean, interaction.pneumo_offset_sd)
    depth = max(needle_gap_above_dm - offset, 0.0)
    type1 = bool(rng.random() < interaction.type1_rate)
    return PneumoOutcome(perforated=False, demarcation_depth_um=depth, type1_bubble=type1)
