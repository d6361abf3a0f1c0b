"""Common-path A-scan reconstruction chain and depth-axis unit conversions.

The swept-source engine delivers 1024-sample spectral interferograms at a
100 kHz sweep rate. 256 sweeps are background-subtracted, windowed,
zero-padded x2, FFT'd and magnitude-averaged into one A-line (2.56 ms of
integration). 48 consecutive A-lines form one M-scan.

Depth axis: 1024 bins spanning 3.7 mm of optical depth in air, so
dz_air = 3700/1024 um/bin. Optical lengths below the epithelium are
converted to geometric lengths by dividing by the tissue refractive index
(l_g = l_o / n_s); the inverse (multiply) places a known geometric offset,
such as the fiber-to-needle-tip distance, on the optical axis.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

N_SAMPLES = 1024
N_COLUMNS = 48
FRAMES_PER_ALINE = 256
ZERO_PAD_FACTOR = 2
SWEEP_PERIOD_MS = 0.01  # 100 kHz sweep rate
LINE_PERIOD_MS = FRAMES_PER_ALINE * SWEEP_PERIOD_MS  # 2.56 ms
MAX_DEPTH_UM = 3700.0  # air-equivalent sensing range
DZ_AIR_UM = MAX_DEPTH_UM / N_SAMPLES
DEFAULT_N_S = 1.321  # 3.7 mm air range / 2.8 mm in-tissue range

FIXTURE_MAGIC = b"MSCN"
FIXTURE_VERSION = 1


@dataclass
class SpectralFrame:
    """One raw spectral interferogram (1024 real samples)."""

    samples: np.ndarray
    seq: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.shape != (N_SAMPLES,):
            raise ValueError(f"spectral frame must have {N_SAMPLES} samples")


@dataclass
class ALine:
    """Depth-resolved magnitude profile (1024 non-negative bins)."""

    intensity: np.ndarray
    timestamp_ms: float = 0.0

    def __post_init__(self):
        self.intensity = np.asarray(self.intensity, dtype=np.float64)
        if self.intensity.shape != (N_SAMPLES,):
            raise ValueError(f"A-line must have {N_SAMPLES} bins")
        if np.any(self.intensity < 0):
            raise ValueError("A-line intensities must be non-negative")


@dataclass
class MScan:
    """1024 x 48 depth-by-time image; column k is the k-th A-line."""

    pixels: np.ndarray
    first_seq: int = 0
    duration_ms: float = N_COLUMNS * LINE_PERIOD_MS

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.shape != (N_SAMPLES, N_COLUMNS):
            raise ValueError(f"M-scan must be {N_SAMPLES}x{N_COLUMNS}")


@dataclass
class DepthAxis:
    """Pixel-to-micron mapping plus the refraction-correction switch.

    correction_active flips on at epithelium contact; only then are
    in-tissue optical spans divided by n_s.
    """

    dz_air: float = DZ_AIR_UM
    n_s: float = DEFAULT_N_S
    correction_active: bool = False

    def __post_init__(self):
        if self.dz_air <= 0:
            raise ValueError("dz_air must be positive")
        if self.n_s < 1:
            raise ValueError("refractive index must be >= 1")

    def row_to_optical_um(self, row: float) -> float:
        return row * self.dz_air

    def optical_to_row(self, z_optical_um: float) -> float:
        return z_optical_um / self.dz_air


def refract_correct(l_o: float, n_s: float) -> float:
    """Geometric length from measured optical length: l_g = l_o / n_s."""
    if n_s < 1:
        raise ValueError("refractive index must be >= 1")
    if l_o < 0:
        raise ValueError("optical length must be non-negative")
    return l_o / n_s


def needle_offset_optical(offset_geo: float, n_s: float) -> float:
    """Optical span of a known geometric offset inside tissue (inverse of refract_correct)."""
    if offset_geo <= 0:
        raise ValueError("offset must be positive")
    if n_s < 1:
        raise ValueError("refractive index must be >= 1")
    return offset_geo * n_s


def _fft_length() -> int:
    return N_SAMPLES * ZERO_PAD_FACTOR


def reconstruct_frames(samples: np.ndarray, background: np.ndarray) -> np.ndarray:
    """Vectorized kernel: (n, 1024) spectra -> (n, 1024) magnitude A-lines."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[1] != N_SAMPLES:
        raise ValueError(f"spectra must have {N_SAMPLES} samples")
    window = np.hanning(N_SAMPLES)
    sub = (samples - background[None, :]) * window[None, :]
    spectrum = np.fft.rfft(sub, n=_fft_length(), axis=1)
    return np.abs(spectrum[:, :N_SAMPLES])


def reconstruct_aline(frames: list[SpectralFrame], background: SpectralFrame) -> ALine:
    """Average 256 reconstructed sweeps into one A-line.

    Chain per sweep: background subtraction, Hann window, zero-pad to 2048,
    FFT, magnitude of the first 1024 bins; the 256 magnitudes are averaged.
    """
    if len(frames) != FRAMES_PER_ALINE:
        raise ValueError(f"reconstruction requires exactly {FRAMES_PER_ALINE} frames")
    stack = np.stack([f.samples for f in frames])
    mags = reconstruct_frames(stack, background.samples)
    return ALine(intensity=mags.mean(axis=0), timestamp_ms=frames[0].seq * SWEEP_PERIOD_MS)


def assemble_mscan(alines: list[ALine], first_seq: int = 0) -> MScan:
    if len(alines) != N_COLUMNS:
        raise ValueError(f"M-scan requires exactly {N_COLUMNS} A-lines")
    pixels = np.stack([a.intensity for a in alines], axis=1)
    return MScan(pixels=pixels, first_seq=first_seq, duration_ms=N_COLUMNS * LINE_PERIOD_MS)


def hist_equalize(image: np.ndarray | MScan) -> np.ndarray:
    """Cumulative-histogram equalization to 256 levels over the whole frame.

    Constant frames are returned unchanged (their histogram is degenerate,
    and the display should not invent contrast).
    """
    pixels = image.pixels if isinstance(image, MScan) else np.asarray(image, dtype=np.float64)
    lo, hi = float(pixels.min()), float(pixels.max())
    if hi == lo:
        return pixels.copy()
    levels = np.minimum((pixels - lo) / (hi - lo) * 256.0, 255.0).astype(np.int64)
    counts = np.bincount(levels.ravel(), minlength=256)
    cdf = np.cumsum(counts) / levels.size
    lut = np.floor(cdf * 255.0)
    return lut[levels]


def write_mscan_fixture(path: str, mscan: MScan, axis: DepthAxis) -> None:
    """Raw little-endian f32 dump, row-major, behind a 16-byte header."""
    header = struct.pack(
        "<4sHHff", FIXTURE_MAGIC, FIXTURE_VERSION, 0, float(axis.dz_air), float(axis.n_s)
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(mscan.pixels.astype("<f4").tobytes(order="C"))


def read_mscan_fixture(path: str) -> tuple[MScan, DepthAxis]:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16:
            raise ValueError("fixture truncated before header end")
        magic, version, _, dz_air, n_s = struct.unpack("<4sHHff", header)
        if magic != FIXTURE_MAGIC:
            raise ValueError("bad fixture magic")
        if version != FIXTURE_VERSION:
            raise ValueError(f"unsupported fixture version {version}")
        body = fh.read(N_SAMPLES * N_COLUMNS * 4)
    pixels = np.frombuffer(body, dtype="<f4").reshape(N_SAMPLES, N_COLUMNS)
    return MScan(pixels=pixels.astype(np.float64)), DepthAxis(dz_air=dz_air, n_s=n_s)
