"""Multi-coil non-uniform Fourier measurement operator for radial sampling.

The forward operator evaluates, for every time bin and coil, the type-2
non-uniform DFT of the coil-weighted image at the bin's radial k-space
coordinates, with the e^{-2 pi i (kx x + ky y)} convention and pixel
coordinates centered at the image midpoint. The adjoint uses the conjugate
kernel without 1/N scaling.

The regularized normal operator A^H W A + beta I is available both as the
exact forward-then-adjoint composition and through a Toeplitz embedding
(per-bin convolution kernels applied on a 2x zero-padded FFT grid); the two
paths agree to floating-point accuracy, and the Toeplitz path is orders of
magnitude faster inside CG loops.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

GOLDEN_ANGLE_DEG = 180.0 * (np.sqrt(5.0) - 1.0) / 2.0


class EncodingError(ValueError):
    """Raised on inconsistent shapes in the measurement operator."""


@dataclass(frozen=True)
class RadialTrajectory:
    """Radial k-space coordinates in cycles/pixel, grouped by time bin.

    kx, ky have shape (n_bins, lines_per_bin * samples_per_line); angles has
    shape (n_bins, lines_per_bin), in degrees.
    """

    kx: np.ndarray
    ky: np.ndarray
    angles: np.ndarray
    lines_per_bin: int
    samples_per_line: int

    def __post_init__(self):
        if self.kx.shape != self.ky.shape or self.kx.ndim != 2:
            raise EncodingError("kx/ky must be 2-D arrays of equal shape")
        if self.kx.shape[1] != self.lines_per_bin * self.samples_per_line:
            raise EncodingError("per-bin sample count inconsistent with geometry")
        if np.max(np.abs(self.kx)) > 0.5 or np.max(np.abs(self.ky)) > 0.5:
            raise EncodingError("k-space coordinates must lie in [-0.5, 0.5]")

    @property
    def n_bins(self) -> int:
        return self.kx.shape[0]

    @property
    def samples_per_bin(self) -> int:
        return self.kx.shape[1]


@dataclass
class KSpaceData:
    """Complex samples of shape (n_coils, n_bins, samples_per_bin) plus
    trajectory and density-compensation weights."""

    samples: np.ndarray
    traj: RadialTrajectory
    dcw: np.ndarray

    def __post_init__(self):
        nc, nt, m = self.samples.shape
        if nt != self.traj.n_bins or m != self.traj.samples_per_bin:
            raise EncodingError("sample array inconsistent with trajectory")
        if self.dcw.shape != (nt, m):
            raise EncodingError("density weights inconsistent with trajectory")
        if np.any(self.dcw < 0):
            raise EncodingError("density weights must be >= 0")

    @property
    def n_coils(self) -> int:
        return self.samples.shape[0]


def golden_angle_trajectory(
    t_bins: int, lines_per_bin: int, samples_per_line: int
) -> RadialTrajectory:
    """Continuous golden-angle radial trajectory split into time bins.

    Global line m (counted across bins) has azimuthal angle m * GA mod 180
    with GA = 180 * (sqrt(5) - 1) / 2; samples lie uniformly on [-0.5, 0.5)
    along each spoke.
    """
    if min(t_bins, lines_per_bin, samples_per_line) < 1:
        raise EncodingError("all counts must be >= 1")
    m = np.arange(t_bins * lines_per_bin)
    angles = (m * GOLDEN_ANGLE_DEG) % 180.0
    theta = np.deg2rad(angles)
    radii = -0.5 + np.arange(samples_per_line) / samples_per_line
    kx = radii[None, :] * np.cos(theta)[:, None]  # (lines, Ns)
    ky = radii[None, :] * np.sin(theta)[:, None]
    return RadialTrajectory(
        kx=kx.reshape(t_bins, lines_per_bin * samples_per_line),
        ky=ky.reshape(t_bins, lines_per_bin * samples_per_line),
        angles=angles.reshape(t_bins, lines_per_bin),
        lines_per_bin=lines_per_bin,
        samples_per_line=samples_per_line,
    )


def radial_density_compensation(traj: RadialTrajectory) -> np.ndarray:
    """Ramp density compensation w(k) proportional to |k|, max-normalized.

    The center sample receives half the weight of the first ring so the
    k-space origin is not zeroed out.
    """
    ns = traj.samples_per_line
    radii = np.abs(-0.5 + np.arange(ns) / ns)
    nonzero = radii[radii > 0]
    center_w = nonzero.min() / 2.0
    w_line = np.where(radii == 0, center_w, radii)
    w_line = w_line / w_line.max()
    return np.tile(w_line, (traj.n_bins, traj.lines_per_bin))


def simulate_coil_maps(nx: int, ny: int, nc: int, seed: int = 0) -> np.ndarray:
    """Smooth complex coil-sensitivity maps with unit root-sum-of-squares.

    Gaussian magnitude profiles centered on a circle around the FOV with a
    gentle per-coil linear phase.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(ny) - ny / 2, np.arange(nx) - nx / 2)
    radius = 0.55 * max(nx, ny)
    sigma = 0.6 * max(nx, ny)
    maps = np.empty((nc, nx, ny), dtype=np.complex128)
    for i in range(nc):
        phi = 2 * np.pi * i / nc
        cx, cy = radius * np.cos(phi), radius * np.sin(phi)
        mag = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma**2))
        ramp = rng.uniform(-0.5, 0.5, size=2) * 2 * np.pi / max(nx, ny)
        phase = ramp[0] * xx + ramp[1] * yy + rng.uniform(0, 2 * np.pi)
        maps[i] = mag * np.exp(1j * phase)
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return maps / rss


class EncodingOperator:
    """Precomputed NUDFT kernels for one trajectory and coil set.

    Holds the separable per-bin exponential factors so repeated forward /
    adjoint applications inside iterative solvers avoid recomputing them.
    """

    def __init__(self, traj: RadialTrajectory, coils: np.ndarray):
        if coils.ndim != 3:
            raise EncodingError("coils must have shape (n_coils, nx, ny)")
        self.traj = traj
        self.coils = np.asarray(coils, dtype=np.complex128)
        self.nx, self.ny = coils.shape[1:]
        px = np.arange(self.nx) - self.nx // 2
        py = np.arange(self.ny) - self.ny // 2
        self._ex = [
            np.exp(-2j * np.pi * np.outer(traj.kx[t], px)) for t in range(traj.n_bins)
        ]
        self._ey = [
            np.exp(-2j * np.pi * np.outer(traj.ky[t], py)) for t in range(traj.n_bins)
        ]

    @property
    def n_coils(self) -> int:
        return self.coils.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        """(T, nx, ny) image series -> (n_coils, T, samples_per_bin)."""
        if x.shape != (self.traj.n_bins, self.nx, self.ny):
            raise EncodingError(f"image series shape {x.shape} does not match operator")
        out = np.empty(
            (self.n_coils, self.traj.n_bins, self.traj.samples_per_bin),
            dtype=np.complex128,
        )
        for t in range(self.traj.n_bins):
            weighted = self.coils * x[t][None]  # (nc, nx, ny)
            tmp = weighted @ self._ey[t].T  # (nc, nx, M)
            out[:, t, :] = np.einsum("mi,cim->cm", self._ex[t], tmp, optimize=True)
        return out

    def adjoint(self, y: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        """(n_coils, T, M) samples -> (T, nx, ny); optional per-sample weights."""
        if y.shape != (self.n_coils, self.traj.n_bins, self.traj.samples_per_bin):
            raise EncodingError(f"sample array shape {y.shape} does not match operator")
        x = np.empty((self.traj.n_bins, self.nx, self.ny), dtype=np.complex128)
        for t in range(self.traj.n_bins):
            v = y[:, t, :] if weights is None else y[:, t, :] * weights[t][None]
            tmp = v[:, :, None] * np.conj(self._ey[t])[None]  # (nc, M, ny)
            per_coil = np.matmul(np.conj(self._ex[t]).T[None], tmp)  # (nc, nx, ny)
            # fixed summation order over coils keeps results bit-stable
            x[t] = np.sum(np.conj(self.coils) * per_coil, axis=0)
        return x

    def toeplitz_kernels(self, dcw: np.ndarray) -> np.ndarray:
        """FFTs of the per-bin convolution kernels embedding A^H W A.

        Kernel h_t(r) = sum_m w_m exp(+2 pi i k_m . r) on the (2nx, 2ny)
        offset grid; returned pre-FFT'd for direct use in :meth:`normal`.
        """
        rx = np.arange(-self.nx, self.nx)
        ry = np.arange(-self.ny, self.ny)
        kernels = np.empty((self.traj.n_bins, 2 * self.nx, 2 * self.ny), dtype=np.complex128)
        for t in range(self.traj.n_bins):
            exr = np.exp(2j * np.pi * np.outer(self.traj.kx[t], rx))  # (M, 2nx)
            eyr = np.exp(2j * np.pi * np.outer(self.traj.ky[t], ry))  # (M, 2ny)
            h = exr.T @ (dcw[t][:, None] * eyr)  # (2nx, 2ny)
            kernels[t] = np.fft.fft2(np.fft.ifftshift(h))
        return kernels


class NormalOperator:
    """H = A^H W A + beta I acting on image series.

    method 'toeplitz' applies per-bin convolution kernels on a zero-padded
    FFT grid; 'direct' composes forward and weighted adjoint. Both are exact
    for the direct-sum NUDFT and agree to ~1e-12 relative error.
    """

    def __init__(
        self,
        op: EncodingOperator,
        dcw: np.ndarray,
        beta: float = 0.0,
        method: str = "toeplitz",
    ):
        if method not in ("toeplitz", "direct"):
            raise EncodingError(f"unknown normal-operator method '{method}'")
        if beta < 0:
            raise EncodingError("beta must be >= 0")
        self.op = op
        self.dcw = dcw
        self.beta = beta
        self.method = method
        self._kernels = op.toeplitz_kernels(dcw) if method == "toeplitz" else None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self.method == "direct":
            out = self.op.adjoint(self.op.forward(x), weights=self.dcw)
        else:
            nx, ny = self.op.nx, self.op.ny
            out = np.empty_like(x, dtype=np.complex128)
            for t in range(self.op.traj.n_bins):
                padded = np.zeros((self.op.n_coils, 2 * nx, 2 * ny), dtype=np.complex128)
                padded[:, :nx, :ny] = self.op.coils * x[t][None]
                conv = np.fft.ifft2(np.fft.fft2(padded) * self._kernels[t][None])
                out[t] = np.sum(np.conj(self.op.coils) * conv[:, :nx, :ny], axis=0)
        if self.beta > 0:
            out = out + self.beta * x
        return out


def forward(x: np.ndarray, coils: np.ndarray, traj: RadialTrajectory) -> KSpaceData:
    """Functional forward wrapper; density weights are attached for convenience."""
    op = EncodingOperator(traj, coils)
    return KSpaceData(op.forward(x), traj, radial_density_compensation(traj))


def adjoint(y: KSpaceData, coils: np.ndarray, weighted: bool = False) -> np.ndarray:
    """Functional adjoint wrapper; `weighted` applies the density weights
    (the A-sharp operator A^H W used for initialization)."""
    op = EncodingOperator(y.traj, coils)
    return op.adjoint(y.samples, weights=y.dcw if weighted else None)


def normal_apply(
    x: np.ndarray,
    coils: np.ndarray,
    traj: RadialTrajectory,
    beta: float = 0.0,
    dcw: np.ndarray | None = None,
    method: str = "toeplitz",
) -> np.ndarray:
    """Apply A^H W A x + beta x (see :class:`NormalOperator`)."""
    if dcw is None:
        dcw = radial_density_compensation(traj)
    return NormalOperator(EncodingOperator(traj, coils), dcw, beta, method)(x)


def export_trajectory_csv(traj: RadialTrajectory, dcw: np.ndarray, path) -> None:
    """Write one row per sample: bin, line, sample, kx, ky, weight."""
    ns = traj.samples_per_line
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin", "line", "sample", "kx", "ky", "weight"])
        for t in range(traj.n_bins):
            for line in range(traj.lines_per_bin):
                for s in range(ns):
                    idx = line * ns + s
                    writer.writerow(
                        [t, line, s,
                         repr(float(traj.kx[t, idx])), repr(float(traj.ky[t, idx])),
                         repr(float(dcw[t, idx]))]
                    )


def import_trajectory_csv(path) -> tuple[RadialTrajectory, np.ndarray]:
    """Inverse of :func:`export_trajectory_csv`; angles are recomputed from
    the outermost sample of each line."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:3] != ["bin", "line", "sample"]:
            raise EncodingError("unrecognized trajectory CSV header")
        for row in reader:
            rows.append((int(row[0]), int(row[1]), int(row[2]),
                         float(row[3]), float(row[4]), float(row[5])))
    n_bins = max(r[0] for r in rows) + 1
    lines = max(r[1] for r in rows) + 1
    ns = max(r[2] for r in rows) + 1
    kx = np.zeros((n_bins, lines * ns))
    ky = np.zeros((n_bins, lines * ns))
    dcw = np.zeros((n_bins, lines * ns))
    for t, line, s, x, y, w in rows:
        idx = line * ns + s
        kx[t, idx], ky[t, idx], dcw[t, idx] = x, y, w
    angles = np.zeros((n_bins, lines))
    for t in range(n_bins):
        for line in range(lines):
            seg_x = kx[t, line * ns : (line + 1) * ns]
            seg_y = ky[t, line * ns : (line + 1) * ns]
            j = np.argmax(seg_x**2 + seg_y**2)
            ang = np.rad2deg(np.arctan2(seg_y[j], seg_x[j])) % 360.0
            # spokes pass through the origin; fold to [0, 180)
            angles[t, line] = ang % 180.0 if seg_x[j] ** 2 + seg_y[j] ** 2 > 0 else 0.0
    traj = RadialTrajectory(kx, ky, angles, lines, ns)
    return traj, dcw
