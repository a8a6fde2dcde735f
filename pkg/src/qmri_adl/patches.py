"""Patch extraction and assembly with stride one and circular boundaries.

With stride 1 and circular wrapping every pixel is covered by exactly d
patches (d = patch area), so the patch operators P_j satisfy the exact
identity sum_j P_j^T P_j = d * I. Assembly therefore returns d times the
image when fed the unmodified extracted patches, and callers divide by d
where a partition of unity is needed.

Patches are backed by views into flat index tables; extraction and assembly
are exact adjoints of each other.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class PatchError(ValueError):
    """Raised on inconsistent patch geometry or dimensions."""


@dataclass(frozen=True)
class PatchGeometry:
    """Square patch geometry; stride is fixed at 1 with circular boundaries."""

    patch_side: int = 4

    def __post_init__(self):
        if self.patch_side < 2:
            raise PatchError("patch_side must be >= 2")

    @property
    def d(self) -> int:
        return self.patch_side**2


@dataclass
class PatchMatrix:
    """Column-per-patch matrix of shape (d, L) plus removed per-patch means."""

    columns: np.ndarray
    means: np.ndarray = field(default=None)  # type: ignore[assignment]
    mean_removed: bool = False

    def __post_init__(self):
        if self.means is None:
            self.means = np.zeros(self.columns.shape[1])

    @property
    def d(self) -> int:
        return self.columns.shape[0]

    @property
    def n_patches(self) -> int:
        return self.columns.shape[1]


def _flat_index_table(shape: tuple[int, int], patch_side: int) -> np.ndarray:
    """(d, L) table of flat pixel indices; column j lists the pixels of patch j."""
    nx, ny = shape
    p = patch_side
    rows = (np.arange(nx)[:, None] + np.arange(p)[None, :]) % nx  # (nx, p)
    cols = (np.arange(ny)[:, None] + np.arange(p)[None, :]) % ny  # (ny, p)
    # patch (i, j) covers pixels (rows[i, a], cols[j, b]); flatten patch-major
    flat = rows[:, None, :, None] * ny + cols[None, :, None, :]  # (nx, ny, p, p)
    return flat.reshape(nx * ny, p * p).T.copy()


_TABLE_CACHE: dict[tuple[int, int, int], np.ndarray] = {}


def _table(shape: tuple[int, int], patch_side: int) -> np.ndarray:
    key = (shape[0], shape[1], patch_side)
    if key not in _TABLE_CACHE:
        _TABLE_CACHE[key] = _flat_index_table(shape, patch_side)
    return _TABLE_CACHE[key]


def extract(image: np.ndarray, geom: PatchGeometry, remove_means: bool = True) -> PatchMatrix:
    """Extract all L = Nx*Ny patches of an image, one column per location.

    Column j holds the patch whose top-left corner is pixel j (row-major),
    wrapping circularly at the image edges. Per-patch means are removed by
    default and stored for re-addition at assembly.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise PatchError("extract expects a 2-D map")
    if not np.all(np.isfinite(image)):
        raise PatchError("non-finite image")
    cols = image.ravel()[_table(image.shape, geom.patch_side)]
    if remove_means:
        means = cols.mean(axis=0)
        return PatchMatrix(cols - means, means, mean_removed=True)
    return PatchMatrix(cols.copy(), np.zeros(cols.shape[1]), mean_removed=False)


def assemble_patches(
    pm: PatchMatrix, geom: PatchGeometry, image_shape: tuple[int, int]
) -> np.ndarray:
    """Adjoint of :func:`extract`: sum_j P_j^T (z_j + mean_j * 1) with wrap-add.

    Returns an un-normalized accumulation; with pm = extract(x) this equals
    d * x exactly.
    """
    nx, ny = image_shape
    table = _table(image_shape, geom.patch_side)
    if table.shape != pm.columns.shape:
        raise PatchError(
            f"patch matrix {pm.columns.shape} does not match image shape {image_shape}"
        )
    contrib = pm.columns + pm.means
    out = np.zeros(nx * ny)
    np.add.at(out, table.ravel(), contrib.ravel())
    return out.reshape(nx, ny)


def assemble(
    codes: "object",
    dictionary: np.ndarray,
    geom: PatchGeometry,
    image_shape: tuple[int, int],
) -> np.ndarray:
    """Assemble sum_j P_j^T (Psi gamma_j + mean_j * 1) from sparse codes.

    `codes` is an adl.SparseCodeSet (duck-typed: needs to_dense(K) and means).
    The caller divides by d where the partition-of-unity normalization is
    required.
    """
    dense = codes.to_dense(dictionary.shape[1])
    if dense.shape[0] != dictionary.shape[1]:
        raise PatchError("code dimension does not match dictionary atom count")
    approx = dictionary @ dense
    return assemble_patches(
        PatchMatrix(approx, codes.means, mean_removed=True), geom, image_shape
    )
