"""Grayscale image planes, binary PGM (P5) I/O, coordinate grids and
synthetic brain phantoms.

Images are H x W float arrays in [0, 1], row major. PGM is the only file
format: 8-bit (maxval <= 255, one byte per sample) or 16-bit (two bytes,
big endian) per the netpbm convention. Masks use the nonzero rule: any
nonzero sample loads as 1.0.
"""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError, FormatError
from .tensor import Tensor

_MAX_DIM = 1 << 16


@dataclass(frozen=True)
class ImagePlane:
    """Grayscale image, pixels in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise DataError(f"image must be 2-D and nonempty, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise DataError("image contains non-finite pixels")
        if p.min() < 0.0 or p.max() > 1.0:
            raise DataError(f"pixels outside [0,1]: min {p.min()}, max {p.max()}")

    @property
    def h(self) -> int:
        return self.pixels.shape[0]

    @property
    def w(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class MaskPlane:
    """Segmentation mask; groundtruth masks are binary {0, 1}."""

    values: np.ndarray

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DataError(f"mask must be 2-D and nonempty, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("mask contains non-finite values")
        if v.min() < 0.0 or v.max() > 1.0:
            raise DataError("mask values outside [0,1]")

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]

    def is_binary(self) -> bool:
        return bool(np.all((self.values == 0.0) | (self.values == 1.0)))


@dataclass(frozen=True)
class CoordinateGrid:
    """Row-major pixel-center coordinates, each component in (-1, 1).

    coords[i*W + j] = (2*(i+0.5)/H - 1, 2*(j+0.5)/W - 1).
    """

    coords: Tensor
    h: int
    w: int


def make_coordinate_grid(h: int, w: int, dtype=np.float32) -> CoordinateGrid:
    if h < 1 or w < 1:
        raise ContractError(f"grid extents must be positive, got {h}x{w}")
    rows = (2.0 * (np.arange(h, dtype=np.float64) + 0.5) / h - 1.0).astype(dtype)
    cols = (2.0 * (np.arange(w, dtype=np.float64) + 0.5) / w - 1.0).astype(dtype)
    coords = np.empty((h * w, 2), dtype=dtype)
    coords[:, 0] = np.repeat(rows, w)
    coords[:, 1] = np.tile(cols, h)
    return CoordinateGrid(Tensor(coords, dtype=dtype), h, w)


# ---------------------------------------------------------------------------
# PGM


def _parse_pgm(blob: bytes) -> tuple[int, int, int, np.ndarray]:
    n = len(blob)
    if n < 2 or blob[0:1] != b"P":
        raise FormatError("pgm: bad magic, expected P5")
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4:
        while i < n and blob[i] in b" \t\r\n\x0b\x0c":
            i += 1
        if i < n and blob[i] == 0x23:  # '#' comment runs to end of line
            while i < n and blob[i] not in b"\r\n":
                i += 1
            continue
        if i >= n:
            raise FormatError("pgm: truncated header")
        start = i
        while i < n and blob[i] not in b" \t\r\n\x0b\x0c#":
            i += 1
        tokens.append(blob[start:i])
    if tokens[0] != b"P5":
        raise FormatError(f"pgm: bad magic {tokens[0]!r}, expected P5")
    if i >= n or blob[i] not in b" \t\r\n\x0b\x0c":
        raise FormatError("pgm: missing whitespace after header")
    i += 1
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise FormatError("pgm: non-numeric header field") from None
    if w < 1 or h < 1 or w > _MAX_DIM or h > _MAX_DIM:
        raise FormatError(f"pgm: dimensions {w}x{h} out of range")
    if not 1 <= maxval <= 65535:
        raise FormatError(f"pgm: maxval {maxval} out of range")
    per_sample = 1 if maxval < 256 else 2
    need = w * h * per_sample
    raster = blob[i : i + need]
    if len(raster) < need:
        raise FormatError(f"pgm: truncated raster, need {need} bytes, have {len(raster)}")
    if per_sample == 1:
        samples = np.frombuffer(raster, dtype=np.uint8)
    else:
        samples = np.frombuffer(raster, dtype=">u2")
    return h, w, maxval, samples.reshape(h, w)


def load_image(path) -> ImagePlane:
    with open(path, "rb") as f:
        h, w, maxval, samples = _parse_pgm(f.read())
    return ImagePlane((samples.astype(np.float64) / maxval).astype(np.float32))


def load_mask(path) -> MaskPlane:
    with open(path, "rb") as f:
        _, _, _, samples = _parse_pgm(f.read())
    return MaskPlane((samples != 0).astype(np.float32))


def _encode_pgm(values: np.ndarray, bits: int) -> bytes:
    h, w = values.shape
    if bits == 8:
        maxval = 255
        data = np.rint(values * maxval).clip(0, maxval).astype(np.uint8).tobytes()
    elif bits == 16:
        maxval = 65535
        data = np.rint(values * maxval).clip(0, maxval).astype(">u2").tobytes()
    else:
        raise ContractError(f"pgm: bits must be 8 or 16, got {bits}")
    return f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + data


def save_image(plane: ImagePlane, path, bits: int = 8) -> None:
    write_bytes_atomic(path, _encode_pgm(plane.pixels, bits))


def save_mask(mask: MaskPlane, path) -> None:
    write_bytes_atomic(path, _encode_pgm((mask.values != 0).astype(np.float64), 8))


def write_bytes_atomic(path, data: bytes) -> None:
    """Write via a temp file in the target directory plus rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# synthetic phantoms

_BACKGROUND = 0.03
_SHELL_VALUE = 0.85
_INTERIOR_BASE = 0.52
_TUMOR_VALUE = 0.92
_SHELL_START = 0.86  # elliptical radius^2 where the bright shell begins


def synth_phantom(seed: int, h: int, w: int) -> tuple[ImagePlane, MaskPlane]:
    """Deterministic brain-like phantom and its tumor mask.

    Dark background, bright elliptical shell, smoothly textured interior
    (a mixture of low-frequency sinusoids) and 1-3 bright circular blobs
    whose union is the mask. Blobs stay inside the interior; total mask
    area lands in [0.5%, 10%] of the pixels by construction.
    """
    if h < 32 or w < 32:
        raise ContractError(f"phantom extent must be >= 32, got {h}x{w}")
    rng = np.random.default_rng(seed)

    ys = 2.0 * (np.arange(h) + 0.5) / h - 1.0
    xs = 2.0 * (np.arange(w) + 0.5) / w - 1.0
    yy, xx = np.meshgrid(ys, xs, indexing="ij")

    # skull ellipse, slightly jittered and rotated
    cy, cx = rng.uniform(-0.05, 0.05, size=2)
    ry, rx = rng.uniform(0.62, 0.74, size=2)
    angle = rng.uniform(0.0, math.pi)
    ca, sa = math.cos(angle), math.sin(angle)
    yr = (yy - cy) * ca - (xx - cx) * sa
    xr = (yy - cy) * sa + (xx - cx) * ca
    ell = (yr / ry) ** 2 + (xr / rx) ** 2

    texture = np.zeros((h, w))
    for _ in range(3):
        fy, fx = rng.uniform(0.3, 1.3, size=2)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        amp = rng.uniform(0.03, 0.06)
        texture += amp * np.sin(2.0 * math.pi * (fy * yy + fx * xx) + phase)

    img = np.full((h, w), _BACKGROUND)
    shell = (ell <= 1.0) & (ell > _SHELL_START)
    interior = ell <= _SHELL_START
    img[shell] = _SHELL_VALUE
    img[interior] = _INTERIOR_BASE + texture[interior]

    # tumors: 1-3 bright circular blobs fully inside the interior; radius
    # in [7%, 11%] of sqrt(pixels) gives per-blob area fractions of
    # 1.5%-3.8%, and placement stops before the union can exceed 9.5%
    col_idx, row_idx = np.meshgrid(np.arange(w), np.arange(h))
    n_tumors = int(rng.integers(1, 4))
    mask = np.zeros((h, w), dtype=bool)
    scale = math.sqrt(h * w)
    placed = 0
    attempts = 0
    while placed < n_tumors:
        attempts += 1
        r_pix = min(rng.uniform(0.07, 0.11) * scale, 0.25 * min(h, w))
        if attempts <= 500:
            ci = rng.uniform(0.15 * h, 0.85 * h)
            cj = rng.uniform(0.15 * w, 0.85 * w)
        else:
            # the ellipse centre always has room for one more blob
            ci, cj = (cy + 1.0) * h / 2.0 - 0.5, (cx + 1.0) * w / 2.0 - 0.5
        dist = np.hypot(row_idx - ci, col_idx - cj)
        blob = dist <= r_pix
        # reject blobs poking out of the brain interior
        if attempts <= 500 and (not blob.any() or np.any(~interior & blob)):
            continue
        if placed > 0 and (mask | blob).sum() / (h * w) > 0.095:
            break
        feather = np.clip((r_pix + 2.5 - dist) / 2.5, 0.0, 1.0)
        img = img * (1.0 - feather) + _TUMOR_VALUE * feather
        mask |= blob
        placed += 1

    img = np.clip(img, 0.0, 1.0)
    area = mask.sum() / (h * w)
    if not 0.005 <= area <= 0.10:
        raise DataError(f"phantom mask area {area:.4f} outside [0.005, 0.10]")
    return ImagePlane(img.astype(np.float32)), MaskPlane(mask.astype(np.float32))
