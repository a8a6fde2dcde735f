"""Synthetic brain-like phantom and forward simulation of the acquisition.

An ellipse-composite head phantom with four tissue classes stands in for a
segmentation-based digital brain: CSF ventricles, a gray-matter cortex band,
white-matter interior and a small lesion. Tissue T1 / M0 values are drawn
from standard ultra-high-field literature ranges and are recorded here so
evaluations can stay value-independent. A loader hook accepts external
integer label maps in the same format for users with their own segmentation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import (
    EncodingOperator,
    KSpaceData,
    RadialTrajectory,
    radial_density_compensation,
)
from .fileio import read_pgm
from .model import ParameterMaps, TimeGrid, signal

# label -> (T1 seconds, M0); label 0 is background
TISSUES = {
    1: ("csf", 4.0, 1.0),
    2: ("gray_matter", 1.6, 0.85),
    3: ("white_matter", 1.05, 0.7),
    4: ("lesion", 1.9, 0.9),
}

BACKGROUND_R1 = 1.0  # arbitrary; background is masked in all metrics


@dataclass
class TissuePhantom:
    segmentation: np.ndarray
    maps: ParameterMaps
    ground_truth: bool = True

    @property
    def support(self) -> np.ndarray:
        return self.segmentation > 0


def flip_profile(nx: int, ny: int, peak_deg: float = 8.0) -> np.ndarray:
    """Centered Gaussian transmit profile, FWHM = 0.8 * min(nx, ny), clipped
    below at a quarter of the peak."""
    if peak_deg <= 0:
        raise ValueError("peak_deg must be > 0")
    # midpoint convention matches the encoding module: pixel N//2 is central
    yy, xx = np.meshgrid(np.arange(ny) - ny // 2, np.arange(nx) - nx // 2)
    fwhm = 0.8 * min(nx, ny)
    sigma = fwhm / (2.0 * np.sqrt(2.0 * np.log(2.0)))
    prof = peak_deg * np.exp(-(xx**2 + yy**2) / (2.0 * sigma**2))
    return np.maximum(prof, 0.25 * peak_deg)


def _ellipse(xx, yy, cx, cy, ax, ay, angle_deg=0.0):
    t = np.deg2rad(angle_deg)
    xr = (xx - cx) * np.cos(t) + (yy - cy) * np.sin(t)
    yr = -(xx - cx) * np.sin(t) + (yy - cy) * np.cos(t)
    return (xr / ax) ** 2 + (yr / ay) ** 2 <= 1.0


def _smooth_once(m: np.ndarray) -> np.ndarray:
    """One pass of a 3x3 binomial-style kernel; softens label edges by about
    one pixel."""
    out = 4.0 * m
    out += np.roll(m, 1, axis=0) + np.roll(m, -1, axis=0)
    out += np.roll(m, 1, axis=1) + np.roll(m, -1, axis=1)
    return out / 8.0


def brain_phantom(nx: int, ny: int, seed: int = 0, flip_peak_deg: float = 8.0) -> TissuePhantom:
    """Deterministic-for-seed ellipse-composite head phantom.

    The seed jitters the ellipse geometry slightly so different seeds give
    different (but equally plausible) anatomies.
    """
    if min(nx, ny) < 32:
        raise ValueError("phantom needs nx, ny >= 32")
    rng = np.random.default_rng(seed)
    jit = lambda scale: 1.0 + scale * rng.uniform(-1.0, 1.0)

    yy, xx = np.meshgrid(np.arange(ny) - (ny - 1) / 2, np.arange(nx) - (nx - 1) / 2)
    labels = np.zeros((nx, ny), dtype=np.int32)

    head_ax = 0.42 * nx * jit(0.04)
    head_ay = 0.36 * ny * jit(0.04)
    head = _ellipse(xx, yy, 0, 0, head_ax, head_ay)
    labels[head] = 2  # cortex by default

    inner = _ellipse(xx, yy, 0, 0, 0.80 * head_ax, 0.78 * head_ay)
    labels[inner] = 3  # white matter

    # two CSF ventricles flanking the midline
    for side in (-1.0, 1.0):
        vent = _ellipse(
            xx, yy,
            side * 0.10 * nx * jit(0.15), -0.02 * ny * jit(0.5),
            0.05 * nx * jit(0.15), 0.16 * ny * jit(0.1),
            angle_deg=side * 12.0 * jit(0.3),
        )
        labels[vent & inner] = 1

    # one small lesion placed in the white matter
    for _ in range(20):
        lcx = 0.22 * nx * rng.uniform(-1.0, 1.0)
        lcy = 0.20 * ny * rng.uniform(-1.0, 1.0)
        lesion = _ellipse(xx, yy, lcx, lcy, 0.045 * nx * jit(0.2), 0.04 * ny * jit(0.2))
        if np.all(labels[lesion] == 3) and lesion.sum() > 0:
            labels[lesion] = 4
            break

    r1 = np.full((nx, ny), BACKGROUND_R1)
    m0 = np.zeros((nx, ny))
    for label, (_, t1, m0_val) in TISSUES.items():
        r1[labels == label] = 1.0 / t1
        m0[labels == label] = m0_val
    r1 = _smooth_once(r1)
    m0 = _smooth_once(m0)

    maps = ParameterMaps(r1, m0, flip_profile(nx, ny, flip_peak_deg))
    return TissuePhantom(segmentation=labels, maps=maps)


def phantom_from_labels(
    labels: np.ndarray, flip_peak_deg: float = 8.0
) -> TissuePhantom:
    """Build a phantom from an external integer label map (same label table)."""
    labels = np.asarray(labels, dtype=np.int32)
    unknown = set(np.unique(labels)) - set(TISSUES) - {0}
    if unknown:
        raise ValueError(f"unknown tissue labels: {sorted(unknown)}")
    r1 = np.full(labels.shape, BACKGROUND_R1)
    m0 = np.zeros(labels.shape)
    for label, (_, t1, m0_val) in TISSUES.items():
        r1[labels == label] = 1.0 / t1
        m0[labels == label] = m0_val
    r1 = _smooth_once(r1)
    m0 = _smooth_once(m0)
    maps = ParameterMaps(r1, m0, flip_profile(*labels.shape, flip_peak_deg))
    return TissuePhantom(segmentation=labels, maps=maps)


def load_label_map(path) -> np.ndarray:
    """Read an 8-bit graymap whose pixel values are tissue labels."""
    return read_pgm(path).astype(np.int32)


def simulate_acquisition(
    ph: TissuePhantom,
    traj: RadialTrajectory,
    coils: np.ndarray,
    grid: TimeGrid,
    noise_sigma: float,
    seed: int = 0,
) -> KSpaceData:
    """Forward-simulate the radial acquisition of the phantom.

    Complex Gaussian noise is added with per-component standard deviation
    noise_sigma times the peak clean-sample magnitude, making the noise level
    invariant to the overall data scale.
    """
    op = EncodingOperator(traj, coils)
    clean = op.forward(signal(ph.maps, grid))
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        level = noise_sigma * np.max(np.abs(clean))
        noise = level * (
            rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)
        )
        clean = clean + noise
    return KSpaceData(clean, traj, radial_density_compensation(traj))
