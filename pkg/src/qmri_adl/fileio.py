"""Bit-exact file formats shared by the CLI and the phantom loader.

Arrays travel as raw float32 little-endian with a sidecar text header
(shape, dtype, name, units); images as binary 8-bit portable graymaps;
run metadata as flat "key = value" manifests in UTF-8. All writers are
deterministic so repeated runs produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class FileFormatError(ValueError):
    """Raised on malformed headers or graymaps."""


def save_map(path, arr: np.ndarray, name: str = "", units: str = "") -> None:
    """Write `arr` as raw float32 LE to `path` plus a .hdr sidecar."""
    path = Path(path)
    data = np.ascontiguousarray(arr, dtype="<f4")
    path.write_bytes(data.tobytes())
    header = (
        f"shape = {' '.join(str(s) for s in arr.shape)}\n"
        f"dtype = float32-le\n"
        f"name = {name}\n"
        f"units = {units}\n"
    )
    path.with_suffix(".hdr").write_text(header, encoding="utf-8")


def load_map(path) -> tuple[np.ndarray, dict[str, str]]:
    """Read a raw float32 array and its sidecar header."""
    path = Path(path)
    meta = read_manifest(path.with_suffix(".hdr"))
    if meta.get("dtype") != "float32-le":
        raise FileFormatError(f"unsupported dtype in {path.with_suffix('.hdr')}")
    shape = tuple(int(s) for s in meta["shape"].split())
    arr = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(shape)
    return arr.astype(np.float64), meta


def save_complex(path, arr: np.ndarray, name: str = "") -> None:
    """Complex arrays are stored with a trailing (re, im) axis."""
    save_map(path, np.stack([arr.real, arr.imag], axis=-1), name=name, units="complex")


def load_complex(path) -> np.ndarray:
    stacked, _ = load_map(path)
    return stacked[..., 0] + 1j * stacked[..., 1]


def write_manifest(path, entries: dict) -> None:
    lines = [f"{k} = {v}\n" for k, v in entries.items()]
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_manifest(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FileFormatError(f"malformed manifest line: {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_pgm(path, image: np.ndarray, maxval: int = 255) -> None:
    """Binary (P5) 8-bit portable graymap."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise FileFormatError("write_pgm expects uint8 input; window first")
    if img.ndim != 2:
        raise FileFormatError("write_pgm expects a 2-D image")
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise FileFormatError("only binary (P5) graymaps are supported")
    fields: list[bytes] = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":  # comment line
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    width, height, maxval = (int(f) for f in fields)
    if maxval > 255:
        raise FileFormatError("only 8-bit graymaps are supported")
    pos += 1  # single whitespace after maxval
    pixels = np.frombuffer(data[pos : pos + width * height], dtype=np.uint8)
    if pixels.size != width * height:
        raise FileFormatError("truncated graymap")
    return pixels.reshape(height, width).copy()


def window_to_uint8(arr: np.ndarray, lo: float | None = None, hi: float | None = None):
    """Window a float map into uint8; returns (image, (lo, hi)) for manifests."""
    arr = np.asarray(arr, dtype=float)
    lo = float(np.min(arr)) if lo is None else lo
    hi = float(np.max(arr)) if hi is None else hi
    if hi <= lo:
        return np.zeros(arr.shape, dtype=np.uint8), (lo, hi)
    scaled = np.clip((arr - lo) / (hi - lo), 0.0, 1.0)
    return np.round(scaled * 255).astype(np.uint8), (lo, hi)
