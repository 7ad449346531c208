"""Bit budgeting, fp16 quantization and the .sinco container format.

Container layout (little endian, 22-byte header):

    offset  size  field
    0       4     magic "SNCO"
    4       1     format version (1)
    5       1     arch tag: 0=SIREN, 1=PE-MLP, 2=segmenter checkpoint
    6       1     depth (segmenter: levels)
    7       2     width u16 (segmenter: base channels)
    9       1     L_f u8 (0 unless PE-MLP)
    10      4     omega0 f32 (0 unless SIREN)
    14      2     H u16 (0 for segmenter checkpoints)
    16      2     W u16
    18      4     weight count u32
    22      ...   weight_count IEEE-754 binary16 values, little endian,
                  canonical parameter order (layer major, weights before
                  bias, row major)

bpp counts the parameter payload only; the header is excluded.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, ContractError, FormatError, QuantizationError
from .imageio import ImagePlane, make_coordinate_grid
from .nets import (
    ARCH_PEMLP,
    ARCH_SIREN,
    InrModel,
    SegNet,
    inr_forward,
    make_inr,
    make_segnet,
    pemlp_param_count,
    siren_param_count,
)
from .tensor import Tensor

MAGIC = b"SNCO"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sBBBHBfHHI")
HEADER_SIZE = _HEADER.size  # 22

_ARCH_TAGS = {ARCH_SIREN: 0, ARCH_PEMLP: 1}
_TAG_ARCHS = {0: ARCH_SIREN, 1: ARCH_PEMLP}
SEGNET_TAG = 2

FP16_MAX = 65504.0
FP16_BITS = 16
FP32_BITS = 32


@dataclass(frozen=True)
class CodecBudget:
    """Parameter budget implied by a target bpp."""

    target_bpp: float
    bits_per_param: int
    pixel_count: int

    def __post_init__(self):
        if self.target_bpp <= 0 or self.bits_per_param <= 0 or self.pixel_count <= 0:
            raise ContractError(
                f"budget fields must be positive: bpp={self.target_bpp}, "
                f"bits={self.bits_per_param}, pixels={self.pixel_count}"
            )

    @property
    def max_params(self) -> int:
        return math.floor(self.target_bpp * self.pixel_count / self.bits_per_param)


def compute_bpp(param_count: int, bits_per_param: int, h: int, w: int) -> float:
    if h <= 0 or w <= 0:
        raise ContractError("compute_bpp: zero pixel count")
    if param_count <= 0 or bits_per_param <= 0:
        raise ContractError("compute_bpp: arguments must be positive")
    return bits_per_param * param_count / (h * w)


def _param_count(arch: str, depth: int, width: int, l_f: int) -> int:
    if arch == ARCH_SIREN:
        return siren_param_count(depth, width)
    if arch == ARCH_PEMLP:
        return pemlp_param_count(depth, width, l_f)
    raise ContractError(f"unknown architecture {arch!r}")


def size_model_for_budget(arch: str, l_f: int, budget: CodecBudget) -> tuple[int, int, int]:
    """Largest (depth, width) whose parameter count fits the budget.

    Search depth 2..6, width 4..512, maximizing the parameter count;
    ties prefer smaller depth, then larger width.
    """
    best: tuple[int, int, int] | None = None  # (count, depth, width)
    cap = budget.max_params
    for depth in range(2, 7):
        for width in range(4, 513):
            n = _param_count(arch, depth, width, l_f)
            if n > cap:
                break  # count grows with width at fixed depth
            if (
                best is None
                or n > best[0]
                or (n == best[0] and (depth < best[1] or (depth == best[1] and width > best[2])))
            ):
                best = (n, depth, width)
    if best is None:
        raise BudgetError(
            f"no {arch} model with depth in [2,6], width in [4,512] fits {cap} parameters"
        )
    return best[1], best[2], best[0]


def quantize_fp16(params: list[Tensor]) -> np.ndarray:
    """Flatten parameters in canonical order and round to binary16
    (round-to-nearest-even). Rejects non-finite or out-of-range values."""
    chunks = []
    for idx, p in enumerate(params):
        a = np.asarray(p.data, dtype=np.float32)
        if not np.all(np.isfinite(a)):
            raise QuantizationError(f"parameter {idx} contains a non-finite value")
        if a.size and float(np.max(np.abs(a))) > FP16_MAX:
            raise QuantizationError(
                f"parameter {idx} magnitude {float(np.max(np.abs(a)))} exceeds float16 range"
            )
        chunks.append(a.astype(np.float16).reshape(-1))
    return np.concatenate(chunks) if chunks else np.empty(0, dtype=np.float16)


@dataclass(frozen=True)
class CompressedContainer:
    """Parsed .sinco payload; immutable once constructed."""

    arch_tag: int
    depth: int
    width: int
    l_f: int
    omega0: float
    h: int
    w: int
    payload: bytes  # little-endian binary16 values

    @property
    def weight_count(self) -> int:
        return len(self.payload) // 2

    @property
    def arch(self) -> str:
        if self.arch_tag == SEGNET_TAG:
            return "segnet"
        return _TAG_ARCHS[self.arch_tag]

    def bpp(self, bits_per_param: int = FP16_BITS) -> float:
        return compute_bpp(self.weight_count, bits_per_param, self.h, self.w)

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            self.arch_tag,
            self.depth,
            self.width,
            self.l_f,
            self.omega0,
            self.h,
            self.w,
            self.weight_count,
        )
        return header + self.payload

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CompressedContainer":
        if len(blob) < HEADER_SIZE:
            raise FormatError(f"container truncated: {len(blob)} bytes < {HEADER_SIZE}-byte header")
        magic, version, tag, depth, width, l_f, omega0, h, w, count = _HEADER.unpack_from(blob)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {version}")
        if tag not in (0, 1, SEGNET_TAG):
            raise FormatError(f"unknown architecture tag {tag}")
        if depth < 1 or width < 1 or (tag == 1 and l_f < 1):
            raise FormatError(f"implausible architecture fields depth={depth} width={width} l_f={l_f}")
        payload = blob[HEADER_SIZE:]
        if len(payload) != 2 * count:
            raise FormatError(
                f"payload truncated or oversized: {len(payload)} bytes for {count} weights"
            )
        cont = cls(tag, depth, width, l_f, omega0, h, w, payload)
        expected = cont.expected_weight_count()
        if count != expected:
            raise FormatError(f"weight count {count} inconsistent with architecture ({expected})")
        return cont

    def expected_weight_count(self) -> int:
        if self.arch_tag == SEGNET_TAG:
            return make_segnet(self.depth, self.width).param_count
        return _param_count(self.arch, self.depth, self.width, self.l_f)

    def weights(self) -> np.ndarray:
        return np.frombuffer(self.payload, dtype="<f2").astype(np.float32)


def _fill_params(params: list[Tensor], flat: np.ndarray) -> None:
    offset = 0
    for p in params:
        n = p.data.size
        p.data[...] = flat[offset : offset + n].reshape(p.data.shape)
        p.requires_grad = False
        offset += n


def serialize_container(m: InrModel, h: int, w: int) -> bytes:
    """Quantize an INR to fp16 and emit the bit-exact container."""
    if m.arch not in _ARCH_TAGS:
        raise ContractError(f"cannot serialize architecture {m.arch!r}")
    for name, value, top in [
        ("depth", m.depth, 255),
        ("width", m.width, 65535),
        ("l_f", m.l_f, 255),
        ("height", h, 65535),
        ("width(px)", w, 65535),
    ]:
        if not 0 <= value <= top:
            raise ContractError(f"header field {name}={value} out of range [0,{top}]")
    payload = quantize_fp16(m.params).astype("<f2").tobytes()
    cont = CompressedContainer(
        _ARCH_TAGS[m.arch], m.depth, m.width, m.l_f, float(m.omega0), h, w, payload
    )
    return cont.to_bytes()


def deserialize_container(blob: bytes) -> tuple[InrModel, int, int]:
    """Rebuild the (fp16-dequantized) INR and its grid extents."""
    cont = CompressedContainer.from_bytes(blob)
    if cont.arch_tag == SEGNET_TAG:
        raise FormatError("container holds a segmenter checkpoint, not an INR")
    m = make_inr(cont.arch, cont.depth, cont.width, l_f=cont.l_f, omega0=cont.omega0)
    _fill_params(m.params, cont.weights())
    return m, cont.h, cont.w


def serialize_segnet(g: SegNet) -> bytes:
    """Segmenter checkpoint under the same container discipline."""
    if not 0 <= g.levels <= 255 or not 0 <= g.base_channels <= 65535:
        raise ContractError("segnet header field out of range")
    payload = quantize_fp16(g.params).astype("<f2").tobytes()
    cont = CompressedContainer(SEGNET_TAG, g.levels, g.base_channels, 0, 0.0, 0, 0, payload)
    return cont.to_bytes()


def deserialize_segnet(blob: bytes) -> SegNet:
    cont = CompressedContainer.from_bytes(blob)
    if cont.arch_tag != SEGNET_TAG:
        raise FormatError("container holds an INR, not a segmenter checkpoint")
    g = make_segnet(cont.depth, cont.width)
    _fill_params(g.params, cont.weights())
    return g


def decompress(cont: CompressedContainer | bytes) -> ImagePlane:
    """Evaluate the contained INR on the canonical grid for its extents."""
    blob = cont.to_bytes() if isinstance(cont, CompressedContainer) else cont
    m, h, w = deserialize_container(blob)
    y = inr_forward(m, make_coordinate_grid(h, w))
    return ImagePlane(np.clip(y.data.reshape(h, w), 0.0, 1.0))
