"""Network architectures: SIREN, positional-encoding ReLU MLP, and a
small U-Net segmenter, plus deterministic initialization.

Parameter lists follow a fixed canonical order (layer major, weights
before bias, row major within a matrix); the codec serializes exactly
this order. Weight matrices are stored [fan_in, fan_out] so a layer is
x @ W + b; conv kernels are [C_out, C_in, kh, kw].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .imageio import CoordinateGrid
from .tensor import Tensor

ARCH_SIREN = "siren"
ARCH_PEMLP = "pemlp"

DEFAULT_OMEGA0 = 30.0


@dataclass
class InrModel:
    """Coordinate MLP descriptor plus its parameter tensors."""

    arch: str
    depth: int  # number of nonlinear layers
    width: int
    l_f: int = 0  # frequency count, pemlp only
    omega0: float = 0.0  # first-layer frequency scale, siren only
    params: list[Tensor] = field(default_factory=list)

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params)


@dataclass
class SegNet:
    """U-Net-lite segmenter descriptor plus its parameter tensors."""

    levels: int
    base_channels: int
    params: list[Tensor] = field(default_factory=list)
    frozen: bool = False

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params)

    def freeze(self) -> "SegNet":
        for p in self.params:
            p.requires_grad = False
        self.frozen = True
        return self


def siren_param_count(depth: int, width: int) -> int:
    return (2 * width + width) + (depth - 1) * (width * width + width) + (width + 1)


def pemlp_param_count(depth: int, width: int, l_f: int) -> int:
    f = 4 * l_f
    return (f * width + width) + (depth - 1) * (width * width + width) + depth * (f * width) + (width + 1)


def _inr_layer_shapes(m: InrModel) -> list[tuple[int, ...]]:
    """Shapes in canonical parameter order."""
    shapes: list[tuple[int, ...]] = []
    if m.arch == ARCH_SIREN:
        fan_in = 2
        for _ in range(m.depth):
            shapes += [(fan_in, m.width), (m.width,)]
            fan_in = m.width
        shapes += [(m.width, 1), (1,)]
    elif m.arch == ARCH_PEMLP:
        f = 4 * m.l_f
        fan_in = f
        for _ in range(m.depth):
            # W, residual projection P of the encoded input, bias
            shapes += [(fan_in, m.width), (f, m.width), (m.width,)]
            fan_in = m.width
        shapes += [(m.width, 1), (1,)]
    else:
        raise ContractError(f"unknown INR architecture {m.arch!r}")
    return shapes


def make_inr(arch: str, depth: int, width: int, l_f: int = 0, omega0: float = DEFAULT_OMEGA0) -> InrModel:
    """Allocate a zero-initialized model; call init_params to randomize."""
    if depth < 1 or width < 1:
        raise ContractError(f"bad INR dimensions depth={depth} width={width}")
    if arch == ARCH_PEMLP and l_f < 1:
        raise ContractError("pemlp needs l_f >= 1")
    m = InrModel(
        arch=arch,
        depth=depth,
        width=width,
        l_f=l_f if arch == ARCH_PEMLP else 0,
        omega0=omega0 if arch == ARCH_SIREN else 0.0,
    )
    m.params = [Tensor(np.zeros(s, dtype=np.float32), requires_grad=True) for s in _inr_layer_shapes(m)]
    return m


def _segnet_conv_shapes(levels: int, base: int) -> list[tuple[int, int, int, int]]:
    shapes = []
    cin = 1
    for i in range(levels):
        c = base << i
        shapes.append((c, cin, 3, 3))
        shapes.append((c, c, 3, 3))
        shapes.append((2 * c, c, 2, 2))  # stride-2 downsample
        cin = 2 * c
    for i in reversed(range(levels)):
        c = base << i
        shapes.append((c, 3 * c, 3, 3))  # upsampled 2c concatenated with skip c
        shapes.append((c, c, 3, 3))
    shapes.append((1, base, 1, 1))
    return shapes


def make_segnet(levels: int = 2, base_channels: int = 16) -> SegNet:
    if levels < 1 or base_channels < 1:
        raise ContractError(f"bad segnet dimensions levels={levels} base={base_channels}")
    g = SegNet(levels=levels, base_channels=base_channels)
    for cout, cin, kh, kw in _segnet_conv_shapes(levels, base_channels):
        g.params.append(Tensor(np.zeros((cout, cin, kh, kw), dtype=np.float32), requires_grad=True))
        g.params.append(Tensor(np.zeros((cout,), dtype=np.float32), requires_grad=True))
    return g


def init_params(model: InrModel | SegNet, seed: int) -> list[Tensor]:
    """Randomize weights in canonical order; biases stay zero.

    SIREN: first layer U(-1/fan_in, 1/fan_in), later layers
    U(+-sqrt(6/fan_in)/omega0). PE-MLP and SegNet: He-uniform
    U(+-sqrt(6/fan_in)). Deterministic in seed.
    """
    rng = np.random.default_rng(seed)
    if isinstance(model, SegNet):
        for p in model.params:
            if p.data.ndim == 4:
                fan_in = p.data.shape[1] * p.data.shape[2] * p.data.shape[3]
                bound = np.sqrt(6.0 / fan_in)
                p.data[...] = rng.uniform(-bound, bound, size=p.data.shape).astype(np.float32)
            else:
                p.data[...] = 0.0
        return model.params

    siren = model.arch == ARCH_SIREN
    first = True
    for p in model.params:
        if p.data.ndim != 2:
            p.data[...] = 0.0
            continue
        fan_in = p.data.shape[0]
        if siren:
            bound = 1.0 / fan_in if first else np.sqrt(6.0 / fan_in) / model.omega0
            first = False
        else:
            bound = np.sqrt(6.0 / fan_in)
        p.data[...] = rng.uniform(-bound, bound, size=p.data.shape).astype(np.float32)
    return model.params


# ---------------------------------------------------------------------------
# forward passes


def positional_encode(c: CoordinateGrid, l_f: int) -> Tensor:
    """Frequency expansion of the grid; output width is exactly 4*l_f.

    For frequency j in 0..l_f-1 and each coordinate component u, emits
    sin(2^j pi u), cos(2^j pi u), in that nesting order.
    """
    if l_f < 1:
        raise ContractError(f"positional_encode: l_f must be >= 1, got {l_f}")
    u = c.coords.data
    n = u.shape[0]
    out = np.empty((n, 4 * l_f), dtype=u.dtype)
    col = 0
    for j in range(l_f):
        freq = (2.0**j) * np.pi
        for comp in range(2):
            out[:, col] = np.sin(freq * u[:, comp])
            out[:, col + 1] = np.cos(freq * u[:, comp])
            col += 2
    return Tensor(out, dtype=u.dtype)


def siren_forward(m: InrModel, c: CoordinateGrid) -> Tensor:
    """Sine-activated MLP; sigmoid head keeps pixel predictions in (0,1)."""
    if m.arch != ARCH_SIREN:
        raise ContractError(f"siren_forward: model arch is {m.arch!r}")
    h = c.coords
    i = 0
    for layer in range(m.depth):
        w, b = m.params[i], m.params[i + 1]
        i += 2
        z = T.add_bias(T.matmul(h, w), b)
        if layer == 0:
            z = T.scale(z, m.omega0)
        h = T.sin(z)
    w, b = m.params[i], m.params[i + 1]
    return T.sigmoid(T.add_bias(T.matmul(h, w), b))


def pemlp_forward(m: InrModel, c: CoordinateGrid) -> Tensor:
    """ReLU MLP over encoded coordinates with a learned projection of the
    encoding added before every hidden activation."""
    if m.arch != ARCH_PEMLP:
        raise ContractError(f"pemlp_forward: model arch is {m.arch!r}")
    enc = positional_encode(c, m.l_f)
    h = enc
    i = 0
    for _ in range(m.depth):
        w, p, b = m.params[i], m.params[i + 1], m.params[i + 2]
        i += 3
        h = T.relu(T.add_bias(T.add(T.matmul(h, w), T.matmul(enc, p)), b))
    w, b = m.params[i], m.params[i + 1]
    return T.sigmoid(T.add_bias(T.matmul(h, w), b))


def inr_forward(m: InrModel, c: CoordinateGrid) -> Tensor:
    if m.arch == ARCH_SIREN:
        return siren_forward(m, c)
    if m.arch == ARCH_PEMLP:
        return pemlp_forward(m, c)
    raise ContractError(f"unknown INR architecture {m.arch!r}")


def unet_forward(g: SegNet, x: Tensor) -> Tensor:
    """Segment a 1xHxW image into a soft 1xHxW mask in (0,1)."""
    if x.data.ndim != 3 or x.shape[0] != 1:
        raise ShapeError(f"unet_forward: expected [1,H,W], got {x.shape}")
    h_ext, w_ext = x.shape[1], x.shape[2]
    multiple = 1 << g.levels
    if h_ext % multiple or w_ext % multiple:
        raise ShapeError(
            f"unet_forward: spatial extents {h_ext}x{w_ext} must be multiples of {multiple}"
        )
    it = iter(g.params)

    def conv(z, stride=1, padding=1, activate=True):
        k, b = next(it), next(it)
        out = T.add_channel_bias(T.conv2d(z, k, stride=stride, padding=padding), b)
        return T.relu(out) if activate else out

    h = x
    skips = []
    for _ in range(g.levels):
        h = conv(h)
        h = conv(h)
        skips.append(h)
        h = conv(h, stride=2, padding=0)
    for level in reversed(range(g.levels)):
        h = T.upsample2x_nearest(h)
        h = T.concat_channels(h, skips[level])
        h = conv(h)
        h = conv(h)
    return T.sigmoid(conv(h, padding=0, activate=False))
