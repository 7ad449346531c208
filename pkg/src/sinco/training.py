"""Losses, the Adam optimizer and the two training loops: segmenter
pretraining under BCE, and the compression fit that combines pixel
consistency with the soft-Dice structural regularizer evaluated through
a frozen segmenter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeError
from .imageio import ImagePlane, MaskPlane, make_coordinate_grid
from .nets import InrModel, SegNet, inr_forward, unet_forward
from .tensor import Tensor, backward_sweep, zero_grads

DICE_EPS = 1e-6
BCE_CLAMP = 1e-7


@dataclass
class TrainConfig:
    lam: float = 1.0
    lr: float = 1e-3
    epochs: int = 2000
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    log_every: int = 100
    batch_size: int = 8

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.log_every < 1 or self.batch_size < 1:
            raise ConfigError("log_every and batch_size must be >= 1")


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0


def adam_step(params, grads, st: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam update, in place; a None gradient counts as zero."""
    st.t += 1
    bc1 = 1.0 - beta1**st.t
    bc2 = 1.0 - beta2**st.t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g
        st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * (g * g)
        m_hat = st.m[i] / bc1
        v_hat = st.v[i] / bc2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


@dataclass
class SegDataset:
    """Shape-matched (image, binary mask) pairs."""

    pairs: list[tuple[ImagePlane, MaskPlane]]

    def __post_init__(self):
        for i, (img, mask) in enumerate(self.pairs):
            if img.pixels.shape != mask.values.shape:
                raise ShapeError(f"pair {i}: image {img.pixels.shape} vs mask {mask.values.shape}")
            if not mask.is_binary():
                raise ConfigError(f"pair {i}: groundtruth mask is not binary")

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass
class LossTrace:
    """Appended every log_every epochs: (epoch, total, compress, regularize)."""

    rows: list[tuple[int, float, float, float]] = field(default_factory=list)

    def add(self, epoch: int, total: float, compress: float, regularize: float):
        if self.rows and epoch <= self.rows[-1][0]:
            raise ContractError("loss trace epochs must be strictly increasing")
        self.rows.append((epoch, total, compress, regularize))

    def to_csv(self) -> str:
        lines = ["epoch,total,compress,regularize"]
        for epoch, total, compress, regularize in self.rows:
            lines.append(f"{epoch},{total!r},{compress!r},{regularize!r}")
        return "\n".join(lines) + "\n"

    @property
    def final(self) -> tuple[int, float, float, float]:
        return self.rows[-1]


# ---------------------------------------------------------------------------
# losses


def compress_loss(xhat: Tensor, x: Tensor) -> Tensor:
    """Mean squared error over pixels."""
    if xhat.shape != x.shape:
        raise ShapeError(f"compress_loss: shape mismatch {xhat.shape} vs {x.shape}")
    return T.reduce_mean(T.square(T.sub(xhat, x)))


def soft_dice_loss(shat: Tensor, s: Tensor, eps: float = DICE_EPS) -> Tensor:
    """1 - (2*sum(shat*s)+eps)/(sum(shat)+sum(s)+eps), differentiable in shat."""
    if shat.shape != s.shape:
        raise ShapeError(f"soft_dice_loss: shape mismatch {shat.shape} vs {s.shape}")
    dtype = shat.data.dtype
    eps_t = Tensor(np.asarray(eps, dtype=dtype))
    num = T.add(T.scale(T.reduce_sum(T.mul(shat, s)), 2.0), eps_t)
    den = T.add(T.add(T.reduce_sum(shat), T.reduce_sum(s)), eps_t)
    return T.sub(Tensor(np.asarray(1.0, dtype=dtype)), T.div(num, den))


def bce_loss(p: Tensor, s: Tensor, clamp: float = BCE_CLAMP) -> Tensor:
    """Mean binary cross entropy; probabilities clamped to [clamp, 1-clamp]."""
    if p.shape != s.shape:
        raise ShapeError(f"bce_loss: shape mismatch {p.shape} vs {s.shape}")
    pc = T.clip(p, clamp, 1.0 - clamp)
    ones = Tensor(np.ones_like(s.data))
    term = T.add(T.mul(s, T.log(pc)), T.mul(T.sub(ones, s), T.log(T.sub(ones, pc))))
    return T.scale(T.reduce_mean(term), -1.0)


def sinco_loss(
    xhat: Tensor,
    x: Tensor,
    g: SegNet | None,
    s: Tensor | None,
    lam: float,
) -> tuple[Tensor, Tensor, Tensor]:
    """(total, compress term, regularize term) for image tensors [1,H,W].

    With lam == 0 the total IS the compress term (bit-exact reduction) and
    the segmenter is never evaluated. With lam > 0 the segmenter must be
    frozen; gradients reach the INR through both terms and never reach
    the segmenter parameters.
    """
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    c = compress_loss(xhat, x)
    if lam == 0:
        return c, c, Tensor(np.zeros((), dtype=xhat.data.dtype))
    if g is None or s is None:
        raise ConfigError("lambda > 0 requires a segmenter and a groundtruth mask")
    if not g.frozen:
        raise ContractError("sinco_loss: segmenter must be frozen")
    r = soft_dice_loss(unet_forward(g, xhat), s)
    return T.add(c, T.scale(r, lam)), c, r


# ---------------------------------------------------------------------------
# training loops


def train_compress(
    x: ImagePlane,
    s: MaskPlane | None,
    g: SegNet | None,
    m: InrModel,
    cfg: TrainConfig,
) -> tuple[InrModel, LossTrace]:
    """Fit the INR to one image; one epoch is one full-grid Adam step."""
    if cfg.lam > 0 and (s is None or g is None):
        raise ConfigError("lambda > 0 requires both a mask and a segmenter")
    if s is not None:
        if s.values.shape != x.pixels.shape:
            raise ShapeError(f"mask {s.values.shape} does not match image {x.pixels.shape}")
        if not s.is_binary():
            raise ConfigError("groundtruth mask must be binary")
    grid = make_coordinate_grid(x.h, x.w)
    x_t = Tensor(x.pixels.reshape(1, x.h, x.w))
    s_t = Tensor(s.values.reshape(1, x.h, x.w)) if s is not None else None
    st = AdamState(m.params)
    trace = LossTrace()
    for epoch in range(1, cfg.epochs + 1):
        zero_grads(m.params)
        y = inr_forward(m, grid)
        xhat = T.reshape(y, (1, x.h, x.w))
        total, c, r = sinco_loss(xhat, x_t, g, s_t, cfg.lam)
        backward_sweep(total)
        adam_step(
            m.params,
            [p.grad for p in m.params],
            st,
            cfg.lr,
            cfg.adam_beta1,
            cfg.adam_beta2,
            cfg.adam_eps,
        )
        if epoch % cfg.log_every == 0 or epoch == cfg.epochs:
            trace.add(epoch, total.item(), c.item(), r.item())
    return m, trace


def train_segmenter(ds: SegDataset, g: SegNet, cfg: TrainConfig) -> SegNet:
    """Minimize mean BCE over shuffled minibatches."""
    m_count = len(ds)
    if m_count == 0:
        raise ConfigError("train_segmenter: empty dataset")
    if cfg.batch_size > m_count:
        raise ConfigError(f"batch size {cfg.batch_size} exceeds dataset size {m_count}")
    rng = np.random.default_rng(cfg.seed)
    st = AdamState(g.params)
    tensors = [
        (Tensor(img.pixels.reshape(1, img.h, img.w)), Tensor(mask.values.reshape(1, img.h, img.w)))
        for img, mask in ds.pairs
    ]
    for _ in range(cfg.epochs):
        order = rng.permutation(m_count)
        for start in range(0, m_count, cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            zero_grads(g.params)
            acc = None
            for idx in batch:
                x_t, s_t = tensors[idx]
                loss = bce_loss(unet_forward(g, x_t), s_t)
                acc = loss if acc is None else T.add(acc, loss)
            backward_sweep(T.scale(acc, 1.0 / len(batch)))
            adam_step(
                g.params,
                [p.grad for p in g.params],
                st,
                cfg.lr,
                cfg.adam_beta1,
                cfg.adam_beta2,
                cfg.adam_eps,
            )
    return g


def segmenter_dataset_bce(ds: SegDataset, g: SegNet) -> float:
    """Mean BCE of the segmenter over a dataset, no gradients."""
    total = 0.0
    for img, mask in ds.pairs:
        x_t = Tensor(img.pixels.reshape(1, img.h, img.w))
        s_t = Tensor(mask.values.reshape(1, img.h, img.w))
        total += bce_loss(unet_forward(g, x_t), s_t).item()
    return total / len(ds)
