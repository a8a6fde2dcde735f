"""Inversion-recovery signal model for continuous-readout T1 mapping.

The model maps three parameter maps (longitudinal relaxivity R1, equilibrium
magnetization M0 and flip angle a) to a series of images, one per acquisition
time point after the inversion pulse:

    q_t = M0* - (M0 + M0*) * exp(-t * R1*)

with the apparent relaxivity R1* = R1 - ln(cos a)/TR and the steady-state
magnetization M0* = M0 * R1 / R1* (Look-Locker readout). Flip angles are
stored in degrees and converted to radians where cos is applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ModelDomainError(ValueError):
    """Raised when model inputs violate the signal-model domain."""


DEG2RAD = np.pi / 180.0


@dataclass
class ParameterMaps:
    """The three quantitative maps: r1 (1/s), m0 (a.u.) and flip (degrees).

    Also used as a plain container for per-parameter quantities of the same
    shape (gradients, bounds residuals); call :meth:`validate` to enforce the
    physical invariants of an actual parameter estimate.
    """

    r1: np.ndarray
    m0: np.ndarray
    flip: np.ndarray

    def __post_init__(self):
        self.r1 = np.asarray(self.r1, dtype=float)
        self.m0 = np.asarray(self.m0, dtype=float)
        self.flip = np.asarray(self.flip, dtype=float)
        if not (self.r1.shape == self.m0.shape == self.flip.shape):
            raise ModelDomainError(
                f"map shapes differ: {self.r1.shape}, {self.m0.shape}, {self.flip.shape}"
            )

    @property
    def shape(self):
        return self.r1.shape

    def validate(self) -> "ParameterMaps":
        for name, arr in (("r1", self.r1), ("m0", self.m0), ("flip", self.flip)):
            if not np.all(np.isfinite(arr)):
                raise ModelDomainError(f"non-finite values in {name}")
        if np.any(self.r1 < 0):
            raise ModelDomainError("r1 must be >= 0")
        if np.any(self.m0 < 0):
            raise ModelDomainError("m0 must be >= 0")
        if np.any(self.flip <= 0) or np.any(self.flip >= 90):
            raise ModelDomainError("flip must lie in (0, 90) degrees")
        return self

    def copy(self) -> "ParameterMaps":
        return ParameterMaps(self.r1.copy(), self.m0.copy(), self.flip.copy())

    def stack(self) -> np.ndarray:
        """Stack to a (3, ...) array in (r1, m0, flip) order."""
        return np.stack([self.r1, self.m0, self.flip])

    @classmethod
    def from_stack(cls, arr: np.ndarray) -> "ParameterMaps":
        return cls(arr[0], arr[1], arr[2])


@dataclass(frozen=True)
class TimeGrid:
    """Acquisition time points after inversion (s) and repetition time TR (s)."""

    times: np.ndarray
    tr: float

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        if self.tr <= 0:
            raise ModelDomainError("tr must be > 0")
        if self.times.ndim != 1 or self.times.size < 1:
            raise ModelDomainError("times must be a non-empty 1-D sequence")
        if np.any(self.times <= 0) or np.any(np.diff(self.times) <= 0):
            raise ModelDomainError("times must be positive and strictly increasing")

    @property
    def n_times(self) -> int:
        return self.times.size

    @classmethod
    def bin_centers(cls, n_bins: int, lines_per_bin: int, tr: float) -> "TimeGrid":
        """Bin-center timing: t_i = (i - 0.5) * L * TR for bin i = 1..n_bins.

        The acquisition runs continuously after a single inversion pulse and
        consecutive groups of L radial lines are pooled into one time bin.
        """
        i = np.arange(1, n_bins + 1, dtype=float)
        return cls(times=(i - 0.5) * lines_per_bin * tr, tr=tr)


def r1_star(p: ParameterMaps, tr: float) -> np.ndarray:
    """Apparent relaxivity R1* = R1 - ln(cos a)/TR under continuous readout."""
    if tr <= 0:
        raise ModelDomainError("tr must be > 0")
    flip_rad = p.flip * DEG2RAD
    out = p.r1 - np.log(np.cos(flip_rad)) / tr
    if not np.all(np.isfinite(out)):
        raise ModelDomainError("non-finite R1*; check flip angle range and inputs")
    return out


def m0_star(p: ParameterMaps, r1s: np.ndarray) -> np.ndarray:
    """Steady-state magnetization M0* = M0 * R1 / R1*."""
    if np.any(r1s == 0):
        raise ModelDomainError("r1_star contains zeros")
    return p.m0 * p.r1 / r1s


def signal(p: ParameterMaps, grid: TimeGrid) -> np.ndarray:
    """Evaluate the recovery curve at all time points.

    Returns a complex array of shape (T,) + p.shape with zero imaginary part;
    the measurement chain is complex-valued even though this model is real.
    """
    r1s = r1_star(p, grid.tr)
    m0s = m0_star(p, r1s)
    t = grid.times.reshape((-1,) + (1,) * p.r1.ndim)
    frames = m0s - (p.m0 + m0s) * np.exp(-t * r1s)
    return frames.astype(np.complex128)


def _signal_and_partials(p: ParameterMaps, grid: TimeGrid):
    """Recovery curve and its partial derivatives w.r.t. (r1, m0, flip[deg]).

    Returns (q, dq_dr1, dq_dm0, dq_dflip), each of shape (T,) + p.shape.
    """
    flip_rad = p.flip * DEG2RAD
    r1s = p.r1 - np.log(np.cos(flip_rad)) / grid.tr
    m0s = p.m0 * p.r1 / r1s

    # dR1*/dflip_rad = tan(a)/TR; dR1*/dr1 = 1
    dr1s_dflip = np.tan(flip_rad) / grid.tr
    dm0s_dr1 = p.m0 * (r1s - p.r1) / r1s**2
    dm0s_dm0 = p.r1 / r1s
    dm0s_dflip = -p.m0 * p.r1 / r1s**2 * dr1s_dflip

    t = grid.times.reshape((-1,) + (1,) * p.r1.ndim)
    decay = np.exp(-t * r1s)
    q = m0s - (p.m0 + m0s) * decay

    # q = M0* - (M0 + M0*) e^{-t R1*}; chain rule through M0* and R1*
    common = (p.m0 + m0s) * t * decay
    dq_dr1 = dm0s_dr1 * (1.0 - decay) + common
    dq_dm0 = dm0s_dm0 * (1.0 - decay) - decay
    dq_dflip = (dm0s_dflip * (1.0 - decay) + common * dr1s_dflip) * DEG2RAD
    return q, dq_dr1, dq_dm0, dq_dflip


def fit_objective_grad(
    p: ParameterMaps,
    x: np.ndarray,
    u: ParameterMaps | None,
    beta: float,
    eta: float,
    grid: TimeGrid,
    scales: tuple[float, float, float] = (1.0, 1.0, 1.0),
) -> tuple[float, ParameterMaps]:
    """Value and analytic gradient of the parameter-fit objective.

        F(P) = beta/2 * ||x - q(P)||^2 + eta/2 * ||u - P/s||^2

    `p` is in physical units; the coupling term and the returned gradient are
    expressed in normalized parameters P/s (per-map scales `s`), which is the
    space the bounded quasi-Newton solver works in. `u` holds normalized maps
    and may be None when eta == 0. Only the real part of `x` couples to the
    (real-valued) model.
    """
    if beta < 0 or eta < 0:
        raise ModelDomainError("beta and eta must be >= 0")
    if x.shape != (grid.n_times,) + p.shape:
        raise ModelDomainError(f"image series shape {x.shape} inconsistent with model")

    s_r1, s_m0, s_flip = scales
    q, dq_dr1, dq_dm0, dq_dflip = _signal_and_partials(p, grid)

    resid = np.real(x) - q
    value = 0.5 * beta * (np.sum(resid**2) + np.sum(np.imag(x) ** 2))

    # d/dP~ of the data term: -beta * sum_t resid * dq/dP * s
    g_r1 = -beta * s_r1 * np.sum(resid * dq_dr1, axis=0)
    g_m0 = -beta * s_m0 * np.sum(resid * dq_dm0, axis=0)
    g_flip = -beta * s_flip * np.sum(resid * dq_dflip, axis=0)

    if eta > 0:
        if u is None:
            raise ModelDomainError("u is required when eta > 0")
        d_r1 = p.r1 / s_r1 - u.r1
        d_m0 = p.m0 / s_m0 - u.m0
        d_flip = p.flip / s_flip - u.flip
        value += 0.5 * eta * (np.sum(d_r1**2) + np.sum(d_m0**2) + np.sum(d_flip**2))
        g_r1 += eta * d_r1
        g_m0 += eta * d_m0
        g_flip += eta * d_flip

    return float(value), ParameterMaps(g_r1, g_m0, g_flip)
